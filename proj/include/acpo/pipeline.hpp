#pragma once

// The stages shared by the command-line tool and the end-to-end tests:
// corpus generation, curation, pretraining, preference training and
// evaluation, each a pure function of the run configuration.

#include <span>
#include <vector>

#include "acpo/config.hpp"
#include "acpo/eval_harness.hpp"
#include "acpo/io.hpp"
#include "acpo/pair_forge.hpp"
#include "acpo/synth_world.hpp"
#include "acpo/trainer.hpp"

namespace acpo {

struct Corpus {
    CorpusHeader header;
    EventVocab vocab;
    std::vector<Clip> clips;
    CaptionTable captions;
};

Corpus generate_world(const RunConfig& cfg);
// Rebuilds the vocab named by a stored corpus header.
Corpus corpus_from_parts(const CorpusHeader& header, std::vector<Clip> clips, CaptionTable captions);

World make_world(const Corpus& corpus, const RunConfig& cfg);

// The leading clips train; the trailing holdout_fraction evaluates.
struct Split {
    std::span<const Clip> train;
    std::span<const Clip> held;
};
Split split_corpus(std::span<const Clip> clips, double holdout_fraction);

struct Curation {
    TierMap train_tiers;
    TierMap eval_tiers;
    PairPools pools;
    // Attribution and sensitivity pairs over the held-out shard.
    std::vector<PreferencePair> heldout;
};

Curation curate(const Corpus& corpus, const World& world, const RunConfig& cfg, Tier attribution_tier,
                Tier sensitivity_tier);
inline Curation curate(const Corpus& corpus, const World& world, const RunConfig& cfg) {
    return curate(corpus, world, cfg, cfg.pairs.attribution_tier, cfg.pairs.sensitivity_tier);
}

// Eval tiers only; cheaper than a full curation.
TierMap eval_tiers(const Corpus& corpus, const RunConfig& cfg);

TrainResult run_pretrain(const Corpus& corpus, const World& world, const RunConfig& cfg);
TrainResult run_preference(const ModelParams& pretrained, const PairPools& pools, const World& world,
                           const RunConfig& cfg, Phase phase, const MixConfig& mix);

EvalReport run_eval(const ModelParams& model, const ModelParams* reference, const Corpus& corpus,
                    const World& world, const TierMap& tiers, std::span<const PreferencePair> heldout,
                    const RunConfig& cfg);

}  // namespace acpo
