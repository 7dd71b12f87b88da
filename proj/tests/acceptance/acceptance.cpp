// Acceptance run: one PASS/FAIL line per criterion on the pinned seed of the
// default configuration. Usage: acceptance [config-file]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <unistd.h>

#include "acpo/commands.hpp"
#include "acpo/config.hpp"
#include "acpo/errors.hpp"
#include "acpo/io.hpp"
#include "acpo/pipeline.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace acpo;
using namespace acpo::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;
std::string pipeline_digest;

void verdict(int id, bool pass, std::string_view title, const std::string& detail) {
    failures += pass ? 0 : 1;
    fmt::print("C{:<2} {} {}: {}\n", id, pass ? "PASS" : "FAIL", title, detail);
    std::fflush(stdout);
}

// A small world at the default model dimensions.
World probe_world(std::uint64_t seed) {
    const ModelConfig mc;
    EventVocab vocab = EventVocab::make_default(derive_seed(seed, "vocab"), mc.d_audio);
    std::vector<Clip> clips = generate_corpus(vocab, 60, 0.9, derive_seed(seed, "corpus"));
    return World(std::move(vocab), std::move(clips), FeatureConfig{});
}

PairPools probe_pools(const World& world) {
    const CaptionTable captions = build_caption_table(world.clips(), world.vocab());
    const TierMap tiers = tier_swaps(world.clips(), world.vocab(), TierConfig{}, 1);
    const PairBuildConfig pb{4, 2, 0};
    PairPools pools;
    pool_of(pools, PairKind::attribution) = build_attribution_pairs(world.clips(), captions, tiers, Tier::low, pb);
    pool_of(pools, PairKind::sensitivity) = build_sensitivity_pairs(world.clips(), captions, tiers, Tier::high, pb);
    pool_of(pools, PairKind::noise) = build_noise_pairs(world.clips(), captions, world.features(), pb);
    pool_of(pools, PairKind::text) = build_text_pairs(world.clips(), captions, pb);
    return pools;
}

void gradient_fidelity() {
    const auto t0 = Clock::now();
    const World world = probe_world(101);
    const PairPools pools = probe_pools(world);
    const ModelConfig mc;
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 20; ++i) {
        ModelParams policy = random_params(mc, 1000 + i, 0.3);
        const ModelParams reference = snapshot_reference(random_params(mc, 2000 + i, 0.3));
        policy.set_trainable(kProjectorBlocks);
        const auto& pool = pool_of(pools, kAllPairKinds[i % 4]);
        const PreferencePair& pair = pool[(7 * i) % pool.size()];

        Tape tape;
        const BoundParams bound = bind(policy, &tape);
        const BlockGrads g = collect_grads(bound, tape.backward(dpo_loss(bound, reference, pair, world, 0.1).loss));
        const auto numeric = finite_difference(
            [&](const Tensor& w) {
                ModelParams q = policy;
                q[Block::W_a] = w;
                return dpo_loss(bind(q, nullptr), reference, pair, world, 0.1).loss.item();
            },
            policy[Block::W_a], 1e-5);
        for (std::size_t k = 0; k < numeric.size(); ++k) {
            worst = std::max(worst, gradient_error(g.at(Block::W_a)[k], numeric[k]));
        }
    }
    const double t = seconds_since(t0);
    verdict(1, worst < 1e-4 && t < 30.0, "gradient fidelity",
            fmt::format("20 instances, max relative error {:.3e} (< 1e-4), {:.1f} s (< 30 s)", worst, t));
}

void analytic_losses() {
    const World world = probe_world(102);
    const PairPools pools = probe_pools(world);
    const ModelConfig mc;
    const ModelParams policy = random_params(mc, 5, 0.3);
    const ModelParams reference = snapshot_reference(policy);
    double dpo_err = 0.0;
    for (const PairKind k : kAllPairKinds) {
        const auto& pool = pool_of(pools, k);
        for (std::size_t i = 0; i < 10; ++i) {
            const DpoTerms t = dpo_loss(bind(policy, nullptr), reference, pool[i % pool.size()], world, 0.1);
            dpo_err = std::max(dpo_err, std::abs(t.loss.item() - std::numbers::ln2));
        }
    }
    ModelParams flat = policy;
    flat[Block::U] = Tensor(mc.vocab_size, mc.d_model);
    double sft_err = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        const PreferencePair& p = pool_of(pools, PairKind::text)[i];
        const Tensor loss = sft_loss(bind(flat, nullptr), world.resolve(p.preferred_ctx), p.preferred_y);
        sft_err = std::max(sft_err, std::abs(loss.item() - std::log(static_cast<double>(mc.vocab_size))));
    }
    verdict(2, dpo_err <= 1e-9 && sft_err <= 1e-9, "analytic loss values",
            fmt::format("|dpo - ln 2| max {:.2e} over 4 kinds, |sft - ln V| max {:.2e} (both <= 1e-9)", dpo_err,
                        sft_err));
}

TokenSeq random_tokens(SplitMix64& rng, std::size_t max_len, TokenId alphabet) {
    TokenSeq s(rng.below(max_len + 1));
    for (TokenId& t : s) {
        t = static_cast<TokenId>(rng.below(alphabet));
    }
    return s;
}

void metric_oracles() {
    SplitMix64 rng(404);

    const World world = probe_world(103);
    const TierMap tiers = tier_swaps(world.clips(), world.vocab(), TierConfig{}, 3);
    std::size_t qa_mismatch = 0;
    double qa_err = 0.0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        const ModelParams model = random_params(ModelConfig{}, 3000 + i, 0.4);
        const auto items = build_audio_halluc_qa(world, world.clips(), tiers, 10 + rng.below(20), 1 + rng.below(8), i);
        const QaResult r = score_qa(model, world, items);
        const ConfusionCounts brute = brute_qa_counts(model, world, items);
        qa_mismatch += r.counts == brute ? 0 : 1;
        const double acc = static_cast<double>(brute.tp + brute.tn) / static_cast<double>(brute.total());
        const double prec = brute.tp + brute.fp == 0
                                ? 0.0
                                : static_cast<double>(brute.tp) / static_cast<double>(brute.tp + brute.fp);
        qa_err = std::max({qa_err, std::abs(r.metrics.accuracy - acc), std::abs(r.metrics.precision - prec)});
    }

    double cider_err = 0.0;
    for (int i = 0; i < 100; ++i) {
        std::vector<TokenSeq> corpus;
        for (std::size_t d = 0, n = 2 + rng.below(8); d < n; ++d) {
            corpus.push_back(random_tokens(rng, 9, 6));
        }
        std::vector<TokenSeq> cands;
        std::vector<TokenSeq> refs;
        for (std::size_t k = 0, n = 1 + rng.below(5); k < n; ++k) {
            refs.push_back(corpus[rng.below(corpus.size())]);
            cands.push_back(rng.bernoulli(0.2) ? refs.back() : random_tokens(rng, 9, 6));
        }
        cider_err = std::max(cider_err, std::abs(cider(cands, refs, corpus) - brute_cider(cands, refs, corpus)));
    }

    double meteor_err = 0.0;
    for (int i = 0; i < 100; ++i) {
        const TokenSeq c = random_tokens(rng, 7, 4);
        const TokenSeq r = random_tokens(rng, 7, 4);
        meteor_err = std::max(meteor_err, std::abs(meteor_lite(c, r) - brute_meteor(c, r)));
    }
    const bool pass = qa_mismatch == 0 && qa_err <= 1e-9 && cider_err <= 1e-9 && meteor_err <= 1e-9;
    verdict(4, pass, "metric oracles",
            fmt::format("100 instances each: score_qa count mismatches {} (metric err {:.1e}), cider err {:.1e}, "
                        "meteor_lite err {:.1e} (<= 1e-9)",
                        qa_mismatch, qa_err, cider_err, meteor_err));
}

double sweep_at(const EvalReport& r, std::size_t frames) {
    for (const SweepPoint& p : r.dominance) {
        if (p.n_frames == frames) {
            return p.accuracy;
        }
    }
    throw ConfigError(fmt::format("the frame sweep has no {}-frame point", frames));
}

double pref_rate(const EvalReport& r, PairKind k) { return r.pref->rate[static_cast<std::size_t>(k)]; }

void pipeline_criteria(const RunConfig& cfg) {
    const auto t0 = Clock::now();
    const Corpus corpus = generate_world(cfg);
    const World world = make_world(corpus, cfg);
    const Curation cur = curate(corpus, world, cfg);
    const TrainResult pre = run_pretrain(corpus, world, cfg);
    const TrainResult post = run_preference(pre.params, cur.pools, world, cfg, Phase::acpo, cfg.mix);
    const ModelParams reference = snapshot_reference(pre.params);
    const EvalReport r0 = run_eval(pre.params, &reference, corpus, world, cur.eval_tiers, cur.heldout, cfg);
    const EvalReport r1 = run_eval(post.params, &reference, corpus, world, cur.eval_tiers, cur.heldout, cfg);
    const double t = seconds_since(t0);

    std::vector<std::string> changed;
    for (const Block b : kAllBlocks) {
        const bool projector = b == Block::W_a || b == Block::b_a;
        if (!projector && !post.params[b].same_values(pre.params[b])) {
            changed.emplace_back(block_name(b));
        }
    }
    verdict(3, changed.empty(), "freeze contract",
            changed.empty() ? std::string("all blocks except W_a, b_a bitwise identical after ACPO")
                            : fmt::format("changed frozen blocks: {}", fmt::join(changed, ", ")));

    const double pre1 = sweep_at(r0, 1);
    const double pre8 = sweep_at(r0, 8);
    const double post8 = sweep_at(r1, 8);
    const bool dominance = pre8 <= pre1 - 0.02;
    const bool recovery = post8 >= pre8 + 0.05;
    verdict(5, dominance && recovery && t < 300.0, "visual-dominance analogue",
            fmt::format("pretrained acc@1 {:.3f}, acc@8 {:.3f} (drop {:.3f} >= 0.02); ACPO acc@8 {:.3f} (gain {:.3f} "
                        ">= 0.05); {:.1f} s (< 300 s)",
                        pre1, pre8, pre1 - pre8, post8, post8 - pre8, t));

    const QaMetrics& m0 = r0.qa.metrics;
    const QaMetrics& m1 = r1.qa.metrics;
    const double dp = m1.precision - m0.precision;
    const double dr = m1.recall - m0.recall;
    verdict(6, dp >= 0.05 && dr >= -0.10, "hallucination reduction",
            fmt::format("precision {:.3f} -> {:.3f} (gain {:.3f} >= 0.05), recall {:.3f} -> {:.3f} (change {:.3f} >= "
                        "-0.10)",
                        m0.precision, m1.precision, dp, m0.recall, m1.recall, dr));

    const auto cider_of = [](const EvalReport& r, CaptionSplit s) {
        return r.captioning[static_cast<std::size_t>(s)].cider;
    };
    const double sw0 = cider_of(r0, CaptionSplit::audio_swap);
    const double sw1 = cider_of(r1, CaptionSplit::audio_swap);
    const double vo0 = cider_of(r0, CaptionSplit::video_original);
    const double vo1 = cider_of(r1, CaptionSplit::video_original);
    const bool swap_gain = sw1 >= 1.5 * sw0;
    const bool video_kept = vo1 >= 0.8 * vo0;
    verdict(7, swap_gain && video_kept, "audio-swap captioning",
            fmt::format("audio(swap) CIDEr {:.3f} -> {:.3f} (x{:.2f}, need >= x1.50), video(original) CIDEr {:.3f} -> "
                        "{:.3f} (x{:.2f}, need >= x0.80)",
                        sw0, sw1, sw1 / sw0, vo0, vo1, vo1 / vo0));

    const double a0 = pref_rate(r0, PairKind::attribution);
    const double a1 = pref_rate(r1, PairKind::attribution);
    const double s0 = pref_rate(r0, PairKind::sensitivity);
    const double s1 = pref_rate(r1, PairKind::sensitivity);
    verdict(8, a1 > 0.8 && s1 > 0.8 && a1 > a0 && s1 > s0, "preference satisfaction",
            fmt::format("held-out attribution {:.3f} -> {:.3f}, sensitivity {:.3f} -> {:.3f} (each > 0.80 and above "
                        "pretrained)",
                        a0, a1, s0, s1));

    double best_ablated = -1.0;
    std::string detail;
    for (const std::string variant : {"no_attribution", "no_sensitivity"}) {
        const TrainResult ab =
            run_preference(pre.params, cur.pools, world, cfg, Phase::acpo, mix_for_variant(cfg.mix, variant));
        const EvalReport r = run_eval(ab.params, &reference, corpus, world, cur.eval_tiers, cur.heldout, cfg);
        best_ablated = std::max(best_ablated, r.qa.metrics.f1);
        detail += fmt::format(", {} F1 {:.3f}", variant, r.qa.metrics.f1);
    }
    verdict(9, m1.f1 >= best_ablated - 0.01, "ablation ordering",
            fmt::format("full F1 {:.3f}{} (full >= best - 0.01)", m1.f1, detail));

    BatchSampler sampler(cur.pools, cfg.mix, cfg.train.batch_size, stage_seed(cfg.seed, "mix-check"));
    std::size_t audio = 0;
    for (int i = 0; i < 10000; ++i) {
        const PairKind k = sampler.next_slot().kind;
        audio += k == PairKind::attribution || k == PairKind::sensitivity ? 1 : 0;
    }
    const double frac = static_cast<double>(audio) / 10000.0;
    verdict(11, frac >= 0.585 && frac <= 0.615, "batch-mix statistics",
            fmt::format("audio-contrastive fraction {:.4f} over 10000 slots (in [0.585, 0.615])", frac));

    pipeline_digest = checkpoint_digest(post.params);
}

// gen -> curate -> pretrain -> train -> eval through the command layer.
double run_commands(const CommandOptions& base, const fs::path& dir) {
    const auto t0 = Clock::now();
    CommandOptions opts = base;
    opts.out_dir = dir.string();
    cmd_gen(opts);
    cmd_curate(opts);
    CommandOptions pre = opts;
    pre.phase = "pretrain";
    cmd_train(pre);
    cmd_train(opts);
    cmd_eval(opts);
    return seconds_since(t0);
}

void determinism_and_runtime(const CommandOptions& base) {
    const fs::path root = fs::temp_directory_path() / fmt::format("acpo_acceptance_{}", ::getpid());
    fs::remove_all(root);
    const double first = run_commands(base, root / "a");
    run_commands(base, root / "b");

    std::size_t files = 0;
    std::vector<std::string> differing;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        const std::string name = entry.path().filename().string();
        ++files;
        const fs::path twin = root / "b" / name;
        if (!fs::exists(twin) || read_file(entry.path().string()) != read_file(twin.string())) {
            differing.push_back(name);
        }
    }
    std::istringstream ckpt(read_file((root / "a" / "acpo.ckpt").string()));
    const std::string digest = checkpoint_digest(read_checkpoint(ckpt));
    const bool same_as_library = digest == pipeline_digest;
    fs::remove_all(root);

    verdict(10, differing.empty() && files > 0 && same_as_library, "determinism",
            differing.empty()
                ? fmt::format("{} artifacts byte-identical across two runs; acpo.ckpt digest {} {} the in-process run",
                              files, digest.substr(0, 16), same_as_library ? "matches" : "differs from")
                : fmt::format("differing artifacts: {}", fmt::join(differing, ", ")));
    verdict(12, first < 600.0, "end-to-end runtime",
            fmt::format("gen, curate, pretrain, train, eval in {:.1f} s (< 600 s)", first));
}

}  // namespace

int main(int argc, char** argv) {
    try {
        CommandOptions opts;
        if (argc > 1) {
            opts.config_path = argv[1];
        }
        const RunConfig cfg = resolve_config(opts);
        fmt::print("acceptance run: seed {}, {} clips, {} preference steps\n", cfg.seed, cfg.world.n_clips,
                   cfg.train.total_steps);
        gradient_fidelity();
        analytic_losses();
        metric_oracles();
        pipeline_criteria(cfg);
        determinism_and_runtime(opts);
    } catch (const std::exception& e) {
        fmt::print(stderr, "acceptance run aborted: {}\n", e.what());
        return 2;
    }
    fmt::print("{} of 12 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
