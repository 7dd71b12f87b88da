#pragma once

// Run configuration: a flat `section.key = value` file. Unknown keys and
// malformed values are rejected. Every stage seed is derived from the master
// seed and the stage name.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "acpo/eval_harness.hpp"
#include "acpo/pair_forge.hpp"
#include "acpo/toy_avlm.hpp"
#include "acpo/trainer.hpp"

namespace acpo {

struct WorldConfig {
    std::size_t n_clips = 1000;
    double p_co = 0.9;
    double noise_sigma = 0.05;
    double corrupt_sigma = 1.0;
    std::size_t n_frames = 8;
    std::size_t d_embed = 16;
    // Trailing fraction of the corpus held out for evaluation.
    double holdout_fraction = 0.2;

    void validate() const;
};

struct PairsConfig {
    Tier attribution_tier = Tier::low;
    Tier sensitivity_tier = Tier::high;
};

// One cell of the ablation grid: which audio-contrastive pairs are kept and
// which swap tiers they use.
struct AblationCell {
    std::string variant;  // full, no_attribution, no_sensitivity
    Tier attribution_tier = Tier::low;
    Tier sensitivity_tier = Tier::high;

    std::string name() const;
};

struct RunConfig {
    std::uint64_t seed = 20240601;
    WorldConfig world;
    ModelConfig model;
    PretrainConfig pretrain;
    TrainConfig train;
    MixConfig mix;
    TierConfig tiers;
    PairsConfig pairs;
    EvalConfig eval;
    std::vector<std::string> ablate_variants = {"full", "no_attribution", "no_sensitivity"};
    // Each entry is "attribution_tier/sensitivity_tier".
    std::vector<std::string> ablate_tiers = {"low/high"};

    RunConfig() { derive_seeds(); }

    // Fills the seed fields of every section from the master seed.
    void derive_seeds();
    void validate() const;
    std::vector<AblationCell> ablation_grid() const;
};

std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) noexcept;

// Parses `text` on top of the defaults. Throws ConfigError naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

// Canonical text form; parse_config(render_config(c)) reproduces c.
std::string render_config(const RunConfig& cfg);

// Base mix for an ablation variant.
MixConfig mix_for_variant(const MixConfig& base, std::string_view variant);

}  // namespace acpo
