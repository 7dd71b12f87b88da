#include "acpo/toy_avlm.hpp"

#include <algorithm>
#include <fmt/format.h>

#include "acpo/errors.hpp"
#include "acpo/rng.hpp"

namespace acpo {

namespace {

constexpr std::array<std::string_view, kBlockCount> kBlockNames = {"P_v", "W_a", "b_a", "E", "W_c",
                                                                   "b_c", "W_h", "b_h", "U"};

bool is_prompt_head(TokenId t) noexcept {
    return t == tok::PROMPT_AUD || t == tok::PROMPT_VIS || t == tok::PROMPT_AV || t == tok::Q_HEAR ||
           t == tok::Q_SEE;
}

void check_token(const ModelConfig& cfg, TokenId t) {
    if (t >= cfg.vocab_size) {
        throw IndexError(fmt::format("token id {} out of range for vocab size {}", t, cfg.vocab_size));
    }
}

// Shapes, frame count and token range; prompt heads are checked by callers
// that need them.
void check_context_shapes(const ModelConfig& cfg, const Context& ctx) {
    if (ctx.video_tokens.empty()) {
        throw InputError("context has no video frames");
    }
    if (ctx.video_tokens.size() > kMaxFrames) {
        throw InputError(fmt::format("context has {} frames, at most {} allowed", ctx.video_tokens.size(), kMaxFrames));
    }
    for (const auto& f : ctx.video_tokens) {
        if (f.size() != cfg.d_video) {
            throw ShapeError(fmt::format("video frame has dim {}, expected {}", f.size(), cfg.d_video));
        }
    }
    if (ctx.audio_vector.size() != cfg.d_audio) {
        throw ShapeError(fmt::format("audio vector has dim {}, expected {}", ctx.audio_vector.size(), cfg.d_audio));
    }
    for (const TokenId t : ctx.prompt_tokens) {
        check_token(cfg, t);
    }
}

Tensor decoder_logits(const BoundParams& p, const Tensor& h, TokenId prev) {
    const Tensor x = concat_columns(h, take_row(p[Block::E], prev));
    const Tensor s = tanh(add(matmul(p[Block::W_h], x), p[Block::b_h]));
    return matmul(p[Block::U], s);
}

}  // namespace

void ModelConfig::validate() const {
    if (d_audio < 1 || d_video < 1 || d_model < 1 || max_len < 1) {
        throw ConfigError("model dimensions must all be >= 1");
    }
    if (vocab_size < tok::kReservedCount) {
        throw ConfigError(fmt::format("vocab_size {} is smaller than the {} reserved ids", vocab_size,
                                      tok::kReservedCount));
    }
}

std::string_view block_name(Block b) noexcept { return kBlockNames[static_cast<std::size_t>(b)]; }

std::optional<Block> block_from_name(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kBlockCount; ++i) {
        if (kBlockNames[i] == name) {
            return kAllBlocks[i];
        }
    }
    return std::nullopt;
}

std::pair<std::size_t, std::size_t> block_shape(const ModelConfig& cfg, Block b) noexcept {
    switch (b) {
        case Block::P_v: return {cfg.d_model, cfg.d_video};
        case Block::W_a: return {cfg.d_model, cfg.d_audio};
        case Block::b_a: return {cfg.d_model, 1};
        case Block::E: return {cfg.vocab_size, cfg.d_model};
        case Block::W_c: return {cfg.d_model, cfg.d_model};
        case Block::b_c: return {cfg.d_model, 1};
        case Block::W_h: return {cfg.d_model, 2 * cfg.d_model};
        case Block::b_h: return {cfg.d_model, 1};
        case Block::U: return {cfg.vocab_size, cfg.d_model};
    }
    return {0, 0};
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    SplitMix64 rng(cfg.seed);
    for (const Block b : kAllBlocks) {
        const auto [r, c] = block_shape(cfg, b);
        std::vector<double> data(r * c);
        for (double& v : data) {
            v = rng.uniform(-0.1, 0.1);
        }
        p[b] = Tensor(r, c, std::move(data));
    }
    return p;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    for (const Block b : kAllBlocks) {
        const auto [r, c] = block_shape(cfg, b);
        p[b] = Tensor(r, c);
    }
    return p;
}

void ModelParams::set_trainable(std::span<const Block> bs) {
    trainable.fill(false);
    for (const Block b : bs) {
        if (b == Block::P_v) {
            throw ConfigError("the visual projector P_v is always frozen");
        }
        trainable[static_cast<std::size_t>(b)] = true;
    }
}

std::vector<Block> ModelParams::trainable_blocks() const {
    std::vector<Block> out;
    for (const Block b : kAllBlocks) {
        if (is_trainable(b)) {
            out.push_back(b);
        }
    }
    return out;
}

void ModelParams::validate() const {
    config.validate();
    for (const Block b : kAllBlocks) {
        const auto [r, c] = block_shape(config, b);
        const Tensor& t = (*this)[b];
        if (t.rows() != r || t.cols() != c) {
            throw ShapeError(fmt::format("block {} has shape {}, expected [{}x{}]", block_name(b), t.shape_str(), r, c));
        }
    }
    if (is_trainable(Block::P_v)) {
        throw ConfigError("the visual projector P_v is always frozen");
    }
}

bool ModelParams::bitwise_equal(const ModelParams& other) const {
    if (!(config == other.config)) {
        return false;
    }
    for (const Block b : kAllBlocks) {
        if (!(*this)[b].same_values(other[b])) {
            return false;
        }
    }
    return true;
}

void Context::validate(const ModelConfig& cfg) const {
    check_context_shapes(cfg, *this);
    if (prompt_tokens.empty() || !is_prompt_head(prompt_tokens.front())) {
        throw InputError("context prompt must begin with a prompt head token");
    }
}

BoundParams bind(const ModelParams& params, Tape* tape) {
    BoundParams out;
    out.config = &params.config;
    for (const Block b : kAllBlocks) {
        const auto i = static_cast<std::size_t>(b);
        if (tape != nullptr && params.trainable[i]) {
            out.blocks[i] = tape->leaf(params.blocks[i]);
            out.leaf_ids[i] = out.blocks[i].node_id();
        } else {
            out.blocks[i] = params.blocks[i].detached();
        }
    }
    return out;
}

Tensor encode_context(const BoundParams& p, const Context& ctx) {
    check_context_shapes(*p.config, ctx);
    std::vector<Tensor> sequence;
    sequence.reserve(ctx.video_tokens.size() + 1 + ctx.prompt_tokens.size());
    for (const auto& frame : ctx.video_tokens) {
        sequence.push_back(matmul(p[Block::P_v], Tensor::column(frame)));
    }
    sequence.push_back(add(matmul(p[Block::W_a], Tensor::column(ctx.audio_vector)), p[Block::b_a]));
    for (const TokenId t : ctx.prompt_tokens) {
        sequence.push_back(take_row(p[Block::E], t));
    }
    const Tensor pooled = mean(sequence);
    return tanh(add(matmul(p[Block::W_c], pooled), p[Block::b_c]));
}

Tensor sequence_logprob_from(const BoundParams& p, const Tensor& h, const TokenSeq& y, std::size_t begin,
                             std::size_t end) {
    if (begin > end || end > y.size()) {
        throw IndexError(fmt::format("step range [{}, {}) invalid for sequence of length {}", begin, end, y.size()));
    }
    for (const TokenId t : y) {
        check_token(*p.config, t);
    }
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t t = begin; t < end; ++t) {
        const TokenId prev = t == 0 ? tok::BOS : y[t - 1];
        const Tensor step = log_softmax_pick(decoder_logits(p, h, prev), y[t]);
        total = t == begin ? step : add(total, step);
    }
    return total;
}

Tensor sequence_logprob(const BoundParams& p, const Context& ctx, const TokenSeq& y) {
    ctx.validate(*p.config);
    if (y.empty() || y.back() != tok::EOS) {
        throw InputError("target sequence must be nonempty and end with EOS");
    }
    const Tensor h = encode_context(p, ctx);
    return sequence_logprob_from(p, h, y, 0, y.size());
}

double sequence_logprob(const ModelParams& params, const Context& ctx, const TokenSeq& y) {
    return sequence_logprob(bind(params, nullptr), ctx, y).item();
}

TokenSeq greedy_decode(const ModelParams& params, const Context& ctx, std::size_t max_len) {
    if (max_len > params.config.max_len) {
        throw InputError(fmt::format("max_len {} exceeds model max_len {}", max_len, params.config.max_len));
    }
    ctx.validate(params.config);
    const BoundParams p = bind(params, nullptr);
    const Tensor h = encode_context(p, ctx);
    TokenSeq out;
    TokenId prev = tok::BOS;
    while (out.size() < max_len) {
        const Tensor logits = decoder_logits(p, h, prev);
        const auto v = logits.values();
        TokenId best = tok::EOS;
        for (TokenId t = tok::EOS + 1; t < v.size(); ++t) {
            if (v[t] > v[best]) {
                best = t;
            }
        }
        out.push_back(best);
        if (best == tok::EOS) {
            break;
        }
        prev = best;
    }
    return out;
}

YesNoScore yes_no_score(const ModelParams& params, const Context& ctx) {
    ctx.validate(params.config);
    const TokenId head = ctx.prompt_tokens.front();
    if (head != tok::Q_HEAR && head != tok::Q_SEE) {
        throw InputError("yes/no scoring needs a Q_HEAR or Q_SEE prompt");
    }
    const BoundParams p = bind(params, nullptr);
    const Tensor logits = decoder_logits(p, encode_context(p, ctx), tok::BOS);
    const double lse = log_sum_exp(logits.values());
    return {logits[tok::YES] - lse, logits[tok::NO] - lse};
}

ModelParams snapshot_reference(const ModelParams& params) {
    ModelParams copy = params;
    for (Tensor& t : copy.blocks) {
        // Force private storage so later writes to the source cannot alias.
        Tensor fresh(t.rows(), t.cols(), {t.values().begin(), t.values().end()});
        t = std::move(fresh);
    }
    copy.trainable.fill(false);
    return copy;
}

}  // namespace acpo
