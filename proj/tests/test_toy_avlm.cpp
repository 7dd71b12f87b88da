#include <doctest.h>

#include <cmath>

#include "acpo/errors.hpp"
#include "acpo/toy_avlm.hpp"
#include "support.hpp"

using namespace acpo;
using namespace acpo::testing;

namespace {

// Plain loops over the raw parameter arrays, sharing no code with the model.
std::vector<double> mat_vec(const Tensor& m, const std::vector<double>& v) {
    std::vector<double> out(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out[r] += m(r, c) * v[c];
        }
    }
    return out;
}

std::vector<double> row_of(const Tensor& m, std::size_t r) {
    std::vector<double> out(m.cols());
    for (std::size_t c = 0; c < m.cols(); ++c) {
        out[c] = m(r, c);
    }
    return out;
}

std::vector<double> oracle_h(const ModelParams& p, const Context& ctx) {
    const std::size_t d = p.config.d_model;
    std::vector<double> pool(d, 0.0);
    std::size_t count = 0;
    auto accumulate = [&](const std::vector<double>& v) {
        for (std::size_t i = 0; i < d; ++i) {
            pool[i] += v[i];
        }
        ++count;
    };
    for (const auto& f : ctx.video_tokens) {
        accumulate(mat_vec(p[Block::P_v], f));
    }
    auto a = mat_vec(p[Block::W_a], ctx.audio_vector);
    for (std::size_t i = 0; i < d; ++i) {
        a[i] += p[Block::b_a][i];
    }
    accumulate(a);
    for (const TokenId t : ctx.prompt_tokens) {
        accumulate(row_of(p[Block::E], t));
    }
    for (double& x : pool) {
        x /= static_cast<double>(count);
    }
    auto h = mat_vec(p[Block::W_c], pool);
    for (std::size_t i = 0; i < d; ++i) {
        h[i] = std::tanh(h[i] + p[Block::b_c][i]);
    }
    return h;
}

double oracle_logprob(const ModelParams& p, const Context& ctx, const TokenSeq& y) {
    const auto h = oracle_h(p, ctx);
    double total = 0.0;
    TokenId prev = tok::BOS;
    for (const TokenId t : y) {
        std::vector<double> joint = h;
        const auto e = row_of(p[Block::E], prev);
        joint.insert(joint.end(), e.begin(), e.end());
        auto z = mat_vec(p[Block::W_h], joint);
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = std::tanh(z[i] + p[Block::b_h][i]);
        }
        const auto logits = mat_vec(p[Block::U], z);
        double mx = logits[0];
        for (const double l : logits) {
            mx = std::max(mx, l);
        }
        double s = 0.0;
        for (const double l : logits) {
            s += std::exp(l - mx);
        }
        total += logits[t] - mx - std::log(s);
        prev = t;
    }
    return total;
}

}  // namespace

TEST_CASE("block shapes follow the config") {
    const ModelConfig cfg = small_model_config(1);
    const ModelParams p = ModelParams::init(cfg);
    for (const Block b : kAllBlocks) {
        const auto [r, c] = block_shape(cfg, b);
        CHECK(p[b].rows() == r);
        CHECK(p[b].cols() == c);
        CHECK(block_from_name(block_name(b)) == b);
        for (const double v : p[b].values()) {
            CHECK(std::abs(v) <= 0.1);
        }
    }
    CHECK_FALSE(block_from_name("nope").has_value());
    CHECK(p.trainable_blocks().empty());
    CHECK(ModelParams::init(cfg).bitwise_equal(p));
}

TEST_CASE("P_v can never be made trainable") {
    ModelParams p = ModelParams::init(small_model_config(1));
    const std::array<Block, 2> bad = {Block::P_v, Block::W_a};
    CHECK_THROWS((void)p.set_trainable(bad));
    p.set_trainable(kProjectorBlocks);
    CHECK(p.trainable_blocks() == std::vector<Block>{Block::W_a, Block::b_a});
}

TEST_CASE("zero params give a zero conditioning vector") {
    const ModelConfig cfg = small_model_config(2);
    const ModelParams p = ModelParams::zeros(cfg);
    SplitMix64 rng(4);
    const Context ctx = random_context(rng, cfg, 3, {tok::PROMPT_AV});
    const Tensor h = encode_context(bind(p, nullptr), ctx);
    for (const double v : h.values()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("one frame and a bare audio token pool to their midpoint") {
    const ModelConfig cfg = small_model_config(2);
    ModelParams p = random_params(cfg, 5);
    // W_c = identity, b_c = 0, W_a = 0: h = tanh((P_v f + b_a) / 2).
    Tensor eye(cfg.d_model, cfg.d_model);
    for (std::size_t i = 0; i < cfg.d_model; ++i) {
        eye.mutable_values()[i * cfg.d_model + i] = 1.0;
    }
    p[Block::W_c] = eye;
    p[Block::b_c] = Tensor(cfg.d_model, 1);
    p[Block::W_a] = Tensor(cfg.d_model, cfg.d_audio);
    SplitMix64 rng(6);
    const Context ctx = random_context(rng, cfg, 1, {});
    const Tensor h = encode_context(bind(p, nullptr), ctx);
    const auto pv = mat_vec(p[Block::P_v], ctx.video_tokens[0]);
    for (std::size_t i = 0; i < cfg.d_model; ++i) {
        CHECK(h[i] == doctest::Approx(std::tanh((pv[i] + p[Block::b_a][i]) / 2.0)).epsilon(1e-14));
    }
}

TEST_CASE("audio pool weight shrinks as frames are added") {
    CHECK(audio_pool_weight(8, 1) == 1.0 / 10.0);
    CHECK(audio_pool_weight(1, 1) == 1.0 / 3.0);
    CHECK(audio_pool_weight(16, 2) < audio_pool_weight(8, 2));

    // Identical frames: doubling them leaves the visual part of the pool the
    // same per token but dilutes the audio token.
    const ModelConfig cfg = small_model_config(3);
    ModelParams p = random_params(cfg, 8);
    p[Block::E] = Tensor(cfg.vocab_size, cfg.d_model);
    p[Block::P_v] = Tensor(cfg.d_model, cfg.d_video);
    Tensor eye(cfg.d_model, cfg.d_model);
    for (std::size_t i = 0; i < cfg.d_model; ++i) {
        eye.mutable_values()[i * cfg.d_model + i] = 1.0;
    }
    p[Block::W_c] = eye;
    p[Block::b_c] = Tensor(cfg.d_model, 1);
    SplitMix64 rng(9);
    Context ctx = random_context(rng, cfg, 4, {tok::PROMPT_AV});
    const auto audio = mat_vec(p[Block::W_a], ctx.audio_vector);
    for (const std::size_t n : {1, 2, 4, 8}) {
        ctx.video_tokens.assign(n, ctx.video_tokens[0]);
        const Tensor h = encode_context(bind(p, nullptr), ctx);
        const double w = audio_pool_weight(n, 1);
        for (std::size_t i = 0; i < cfg.d_model; ++i) {
            CHECK(h[i] == doctest::Approx(std::tanh(w * (audio[i] + p[Block::b_a][i]))).epsilon(1e-12));
        }
    }
}

TEST_CASE("context validation") {
    const ModelConfig cfg = small_model_config(3);
    const ModelParams p = ModelParams::init(cfg);
    SplitMix64 rng(1);
    Context ctx = random_context(rng, cfg, 0, {tok::PROMPT_AV});
    CHECK_THROWS_AS((void)encode_context(bind(p, nullptr), ctx), InputError);
    ctx = random_context(rng, cfg, kMaxFrames + 1, {tok::PROMPT_AV});
    CHECK_THROWS_AS((void)encode_context(bind(p, nullptr), ctx), InputError);
    ctx = random_context(rng, cfg, 2, {tok::PROMPT_AV});
    CHECK_THROWS_AS((void)sequence_logprob(p, ctx, TokenSeq{static_cast<TokenId>(cfg.vocab_size), tok::EOS}),
                    IndexError);
    CHECK_THROWS((void)sequence_logprob(p, ctx, TokenSeq{5, 6}));
    CHECK_THROWS((void)sequence_logprob(p, ctx, TokenSeq{}));
    CHECK_THROWS_AS((void)yes_no_score(p, ctx), InputError);
}

TEST_CASE("a zero head is uniform") {
    const ModelConfig cfg = small_model_config(4);
    ModelParams p = random_params(cfg, 10);
    p[Block::U] = Tensor(cfg.vocab_size, cfg.d_model);
    SplitMix64 rng(2);
    const Context ctx = random_context(rng, cfg, 3, {tok::Q_HEAR, 12});
    for (const std::size_t len : {1, 3, 7}) {
        const TokenSeq y = random_caption(rng, cfg.vocab_size, len);
        CHECK(sequence_logprob(p, ctx, y) ==
              doctest::Approx(-static_cast<double>(len) * std::log(static_cast<double>(cfg.vocab_size)))
                  .epsilon(1e-12));
    }
    const YesNoScore s = yes_no_score(p, ctx);
    CHECK(s.logp_yes == s.logp_no);
    CHECK_FALSE(s.predicts_yes());

    const TokenSeq decoded = greedy_decode(p, ctx, cfg.max_len);
    // BOS is masked, so the lowest-id member of the tie is EOS.
    CHECK(decoded == TokenSeq{tok::EOS});
}

TEST_CASE("sequence_logprob matches an independent forward pass") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ModelConfig cfg = small_model_config(seed);
        const ModelParams p = random_params(cfg, seed + 50);
        SplitMix64 rng(seed);
        const Context ctx = random_context(rng, cfg, 1 + rng.below(8), {tok::PROMPT_AV});
        const TokenSeq y = random_caption(rng, cfg.vocab_size, 3);
        const double got = sequence_logprob(p, ctx, y);
        CHECK(got == doctest::Approx(oracle_logprob(p, ctx, y)).epsilon(1e-12));
        CHECK(got <= 0.0);
        const Tensor tracked = sequence_logprob(bind(p, nullptr), ctx, y);
        CHECK(tracked.item() == got);
    }
}

TEST_CASE("logprob is additive over prefix splits") {
    const ModelConfig cfg = small_model_config(5);
    const ModelParams p = random_params(cfg, 55);
    SplitMix64 rng(5);
    const Context ctx = random_context(rng, cfg, 4, {tok::PROMPT_AUD});
    const TokenSeq y = random_caption(rng, cfg.vocab_size, 6);
    const BoundParams bound = bind(p, nullptr);
    const Tensor h = encode_context(bound, ctx);
    const double whole = sequence_logprob_from(bound, h, y, 0, y.size()).item();
    for (std::size_t k = 0; k <= y.size(); ++k) {
        const double parts =
            sequence_logprob_from(bound, h, y, 0, k).item() + sequence_logprob_from(bound, h, y, k, y.size()).item();
        CHECK(parts == doctest::Approx(whole).epsilon(1e-13));
    }
}

TEST_CASE("projector gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ModelConfig cfg = small_model_config(seed);
        ModelParams p = random_params(cfg, seed + 300);
        p.set_trainable(kProjectorBlocks);
        SplitMix64 rng(seed + 7);
        const Context ctx = random_context(rng, cfg, 1 + rng.below(4), {tok::PROMPT_AV});
        const TokenSeq y = random_caption(rng, cfg.vocab_size, 4);

        Tape tape;
        const BoundParams bound = bind(p, &tape);
        const Gradients g = backward(sequence_logprob(bound, ctx, y));
        for (const Block b : kProjectorBlocks) {
            const auto id = bound.leaf_ids[static_cast<std::size_t>(b)];
            REQUIRE(id.has_value());
            const auto numeric = finite_difference(
                [&](const Tensor& x) {
                    ModelParams q = p;
                    q[b] = x;
                    return sequence_logprob(q, ctx, y);
                },
                p[b]);
            const Tensor& analytic = g.at(*id);
            for (std::size_t i = 0; i < numeric.size(); ++i) {
                CHECK(gradient_error(analytic[i], numeric[i]) < 1e-4);
            }
        }
        // Only the projector blocks become leaves.
        for (const Block b : kAllBlocks) {
            const bool leaf = bound.leaf_ids[static_cast<std::size_t>(b)].has_value();
            CHECK(leaf == (b == Block::W_a || b == Block::b_a));
        }
        CHECK(g.size() == 2);
    }
}

TEST_CASE("greedy decoding is deterministic and never emits BOS") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ModelConfig cfg = small_model_config(seed);
        ModelParams p = random_params(cfg, seed + 17, 1.5);
        SplitMix64 rng(seed);
        const Context ctx = random_context(rng, cfg, 2, {tok::PROMPT_VIS});
        const TokenSeq a = greedy_decode(p, ctx, cfg.max_len);
        CHECK(a == greedy_decode(p, ctx, cfg.max_len));
        CHECK(a.size() <= cfg.max_len);
        for (const TokenId t : a) {
            CHECK(t != tok::BOS);
        }
        if (!a.empty() && a.back() != tok::EOS) {
            CHECK(a.size() == cfg.max_len);
        }
        CHECK(greedy_decode(p, ctx, 3).size() <= 3);
    }
}

TEST_CASE("yes/no decisions ignore a constant shift of the head rows") {
    const ModelConfig cfg = small_model_config(6);
    ModelParams p = random_params(cfg, 66);
    SplitMix64 rng(6);
    const Context ctx = random_context(rng, cfg, 3, {tok::Q_SEE, 14});
    const bool before = yes_no_score(p, ctx).predicts_yes();
    // Adding the same vector to every row of U shifts every logit equally.
    const auto shift = random_vector(rng, cfg.d_model);
    auto u = p[Block::U].mutable_values();
    for (std::size_t r = 0; r < cfg.vocab_size; ++r) {
        for (std::size_t c = 0; c < cfg.d_model; ++c) {
            u[r * cfg.d_model + c] += shift[c];
        }
    }
    CHECK(yes_no_score(p, ctx).predicts_yes() == before);
}

TEST_CASE("snapshot_reference is a frozen deep copy") {
    const ModelConfig cfg = small_model_config(7);
    ModelParams p = random_params(cfg, 77);
    p.set_trainable(kProjectorBlocks);
    const ModelParams ref = snapshot_reference(p);
    CHECK(ref.bitwise_equal(p));
    CHECK(ref.trainable_blocks().empty());
    SplitMix64 rng(7);
    for (int i = 0; i < 10; ++i) {
        const Context ctx = random_context(rng, cfg, 1 + rng.below(6), {tok::PROMPT_AV});
        const TokenSeq y = random_caption(rng, cfg.vocab_size, 1 + rng.below(5));
        CHECK(sequence_logprob(ref, ctx, y) == sequence_logprob(p, ctx, y));
    }
    p[Block::W_a].mutable_values()[0] += 1.0;
    CHECK_FALSE(ref.bitwise_equal(p));
    CHECK(ref[Block::W_a][0] != p[Block::W_a][0]);
}

TEST_CASE("config validation") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.d_model = 0;
    CHECK_THROWS(cfg.validate());
    cfg = ModelConfig{};
    cfg.vocab_size = 8;
    CHECK_THROWS(cfg.validate());
}
