#include "acpo/pipeline.hpp"

#include <cmath>
#include <fmt/format.h>

#include "acpo/errors.hpp"
#include "acpo/rng.hpp"

namespace acpo {

Corpus generate_world(const RunConfig& cfg) {
    Corpus c;
    c.header.vocab_seed = stage_seed(cfg.seed, "vocab");
    c.header.d_embed = cfg.world.d_embed;
    c.header.n_clips = cfg.world.n_clips;
    c.vocab = EventVocab::make_default(c.header.vocab_seed, c.header.d_embed);
    if (c.vocab.min_vocab_size() > cfg.model.vocab_size) {
        throw ConfigError(fmt::format("model.vocab_size must be at least {}", c.vocab.min_vocab_size()));
    }
    c.clips = generate_corpus(c.vocab, cfg.world.n_clips, cfg.world.p_co, stage_seed(cfg.seed, "corpus"));
    c.captions = build_caption_table(c.clips, c.vocab);
    return c;
}

Corpus corpus_from_parts(const CorpusHeader& header, std::vector<Clip> clips, CaptionTable captions) {
    Corpus c;
    c.header = header;
    c.vocab = EventVocab::make_default(header.vocab_seed, header.d_embed);
    c.clips = std::move(clips);
    c.captions = std::move(captions);
    for (const Clip& clip : c.clips) {
        if (!c.captions.contains(clip.id)) {
            throw DataError(fmt::format("no captions for clip {}", clip.id));
        }
    }
    return c;
}

World make_world(const Corpus& corpus, const RunConfig& cfg) {
    if (corpus.header.d_embed != cfg.model.d_audio) {
        throw ConfigError(fmt::format("corpus embeddings are {}-dimensional but model.d_audio is {}",
                                      corpus.header.d_embed, cfg.model.d_audio));
    }
    return World(corpus.vocab, corpus.clips, FeatureConfig{cfg.world.noise_sigma, cfg.world.corrupt_sigma});
}

Split split_corpus(std::span<const Clip> clips, double holdout_fraction) {
    const auto n_held = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(clips.size())));
    if (n_held < 4 || n_held + 4 > clips.size()) {
        throw DataError(fmt::format("a holdout of {} clips out of {} leaves a shard too small to tier", n_held,
                                    clips.size()));
    }
    const std::size_t n_train = clips.size() - n_held;
    return {clips.first(n_train), clips.subspan(n_train)};
}

Curation curate(const Corpus& corpus, const World& world, const RunConfig& cfg, Tier attribution_tier,
                Tier sensitivity_tier) {
    const Split split = split_corpus(corpus.clips, cfg.world.holdout_fraction);
    Curation out;
    out.train_tiers = tier_swaps(split.train, corpus.vocab, cfg.tiers, stage_seed(cfg.seed, "tiers-train"));
    out.eval_tiers = tier_swaps(split.held, corpus.vocab, cfg.tiers, stage_seed(cfg.seed, "tiers-eval"));

    PairBuildConfig pb;
    pb.n_frames = cfg.world.n_frames;
    pb.seed = stage_seed(cfg.seed, "pairs");
    pool_of(out.pools, PairKind::attribution) =
        build_attribution_pairs(split.train, corpus.captions, out.train_tiers, attribution_tier, pb);
    pool_of(out.pools, PairKind::sensitivity) =
        build_sensitivity_pairs(split.train, corpus.captions, out.train_tiers, sensitivity_tier, pb);
    pool_of(out.pools, PairKind::noise) = build_noise_pairs(split.train, corpus.captions, world.features(), pb);
    pool_of(out.pools, PairKind::text) = build_text_pairs(split.train, corpus.captions, pb);

    PairBuildConfig pe = pb;
    pe.seed = stage_seed(cfg.seed, "pairs-eval");
    out.heldout = build_attribution_pairs(split.held, corpus.captions, out.eval_tiers, attribution_tier, pe);
    auto sens = build_sensitivity_pairs(split.held, corpus.captions, out.eval_tiers, sensitivity_tier, pe);
    out.heldout.insert(out.heldout.end(), sens.begin(), sens.end());
    return out;
}

TierMap eval_tiers(const Corpus& corpus, const RunConfig& cfg) {
    const Split split = split_corpus(corpus.clips, cfg.world.holdout_fraction);
    return tier_swaps(split.held, corpus.vocab, cfg.tiers, stage_seed(cfg.seed, "tiers-eval"));
}

TrainResult run_pretrain(const Corpus& corpus, const World& world, const RunConfig& cfg) {
    const Split split = split_corpus(corpus.clips, cfg.world.holdout_fraction);
    return pretrain_biased(world, split.train, corpus.captions, cfg.model, cfg.pretrain);
}

TrainResult run_preference(const ModelParams& pretrained, const PairPools& pools, const World& world,
                           const RunConfig& cfg, Phase phase, const MixConfig& mix) {
    TrainConfig tc = cfg.train;
    tc.phase = phase;
    return train_acpo(pretrained, pools, world, tc, mix);
}

EvalReport run_eval(const ModelParams& model, const ModelParams* reference, const Corpus& corpus,
                    const World& world, const TierMap& tiers, std::span<const PreferencePair> heldout,
                    const RunConfig& cfg) {
    const Split split = split_corpus(corpus.clips, cfg.world.holdout_fraction);
    return evaluate(model, world, split.held, corpus.captions, tiers, cfg.eval, reference, heldout, cfg.train.beta);
}

}  // namespace acpo
