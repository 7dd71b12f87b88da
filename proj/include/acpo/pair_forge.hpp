#pragma once

// Preference-pair curation: similarity-tiered audio swaps, the four pair
// kinds, and the mixed batch sampler.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acpo/rng.hpp"
#include "acpo/synth_world.hpp"
#include "acpo/toy_avlm.hpp"

namespace acpo {

enum class NoiseTag { clean, audio_noised, video_noised };

std::string_view to_string(NoiseTag t) noexcept;
std::optional<NoiseTag> noise_tag_from_string(std::string_view s) noexcept;

// Symbolic model input: which clip supplies the video, which supplies the
// audio, and how it is prompted. audio_clip_id == video_clip_id means the
// input is aligned; otherwise it is audio-swapped.
struct ContextSpec {
    std::string video_clip_id;
    std::string audio_clip_id;
    std::size_t n_frames = 8;
    TokenId prompt_head = tok::PROMPT_AV;
    NoiseTag noise_tag = NoiseTag::clean;

    bool aligned() const noexcept { return video_clip_id == audio_clip_id; }
    bool operator==(const ContextSpec&) const = default;
};

struct FeatureConfig {
    double noise_sigma = 0.05;    // per-clip feature noise
    double corrupt_sigma = 1.0;   // extra noise on the corrupted modality of noise pairs
};

using CaptionTable = std::map<std::string, CaptionBundle, std::less<>>;

// Clip lookup plus feature resolution for ContextSpecs.
class World {
public:
    World(EventVocab vocab, std::vector<Clip> clips, FeatureConfig features);

    const EventVocab& vocab() const noexcept { return vocab_; }
    const std::vector<Clip>& clips() const noexcept { return clips_; }
    const FeatureConfig& features() const noexcept { return features_; }

    bool contains(std::string_view id) const noexcept { return index_.find(id) != index_.end(); }
    // Throws DataError for unknown ids.
    const Clip& clip(std::string_view id) const;

    // Builds the concrete model input. `prompt_suffix` is appended after the
    // prompt head (e.g. the queried sound of a yes/no question).
    Context resolve(const ContextSpec& spec, std::span<const TokenId> prompt_suffix = {}) const;

private:
    EventVocab vocab_;
    std::vector<Clip> clips_;
    FeatureConfig features_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

CaptionTable build_caption_table(std::span<const Clip> clips, const EventVocab& vocab);

// ------------------------------------------------------------------ tiers

enum class Tier { low, high, none };

std::string_view to_string(Tier t) noexcept;
std::optional<Tier> tier_from_string(std::string_view s) noexcept;

struct TierConfig {
    double low_quantile = 0.25;
    double high_quantile = 0.75;
    // Candidates ranked per clip; 0 means every other clip in the shard.
    std::size_t candidate_pool = 0;

    void validate() const;
};

struct TierPartners {
    std::vector<std::string> low;
    std::vector<std::string> high;
};

struct TierMap {
    double low_cutoff = 0.0;
    double high_cutoff = 0.0;
    std::size_t sample_size = 0;
    // Only clips with at least one partner in a tier appear in that tier.
    std::map<std::string, TierPartners, std::less<>> partners;
    std::size_t skipped_low = 0;
    std::size_t skipped_high = 0;

    const std::vector<std::string>* find(std::string_view clip_id, Tier tier) const;
};

// Sorted-sample quantile with linear interpolation between order statistics.
double empirical_quantile(std::vector<double> sample, double q);

// Clip B is a swap candidate for A when B != A and B's sound set differs from
// A's. Cutoffs come from the pooled similarity sample over all candidate
// pairs; a tier keeps partners at or beyond its cutoff (inclusive).
TierMap tier_swaps(std::span<const Clip> shard, const EventVocab& vocab, const TierConfig& tiers, std::uint64_t seed);

// ------------------------------------------------------------------ pairs

enum class PairKind { attribution, sensitivity, noise, text };
inline constexpr std::array<PairKind, 4> kAllPairKinds = {PairKind::attribution, PairKind::sensitivity,
                                                          PairKind::noise, PairKind::text};

std::string_view to_string(PairKind k) noexcept;
std::optional<PairKind> pair_kind_from_string(std::string_view s) noexcept;

struct PreferencePair {
    PairKind kind = PairKind::text;
    Tier tier = Tier::none;
    ContextSpec preferred_ctx;
    TokenSeq preferred_y;
    ContextSpec dispreferred_ctx;
    TokenSeq dispreferred_y;

    bool operator==(const PreferencePair&) const = default;
};

// Checks the structural contract of the pair's kind; throws DataError.
void check_pair_shape(const PreferencePair& pair);

struct PairBuildConfig {
    std::size_t n_frames = 8;
    std::uint64_t seed = 0;
    // Resampling round; each epoch draws fresh swap partners.
    std::size_t epoch = 0;
};

// Output-contrastive: under (v_A, a_B, PROMPT_AUD) prefer y_B^aud over
// y_A^vis. Tier::none is the no-swap variant (a_A, preferring y_A^aud).
std::vector<PreferencePair> build_attribution_pairs(std::span<const Clip> shard, const CaptionTable& captions,
                                                    const TierMap& tiers, Tier tier_choice,
                                                    const PairBuildConfig& cfg);

// Input-contrastive: prefer y_A^av under (v_A, a_A) over the same caption
// under (v_A, a_B), both with PROMPT_AV.
std::vector<PreferencePair> build_sensitivity_pairs(std::span<const Clip> shard, const CaptionTable& captions,
                                                    const TierMap& tiers, Tier tier_choice,
                                                    const PairBuildConfig& cfg);

// Clean aligned input preferred over the same input with one modality
// corrupted; the corrupted modality alternates clip by clip.
std::vector<PreferencePair> build_noise_pairs(std::span<const Clip> shard, const CaptionTable& captions,
                                              const FeatureConfig& features, const PairBuildConfig& cfg);

// Aligned input, joint caption preferred over the vision-only caption.
std::vector<PreferencePair> build_text_pairs(std::span<const Clip> shard, const CaptionTable& captions,
                                             const PairBuildConfig& cfg);

// ------------------------------------------------------------------ batches

using PairPools = std::array<std::vector<PreferencePair>, 4>;

inline std::vector<PreferencePair>& pool_of(PairPools& pools, PairKind k) {
    return pools[static_cast<std::size_t>(k)];
}
inline const std::vector<PreferencePair>& pool_of(const PairPools& pools, PairKind k) {
    return pools[static_cast<std::size_t>(k)];
}

// Slot composition: with probability audio_contrastive the slot is an
// attribution (attribution_share) or sensitivity pair; otherwise a noise
// (noise_share) or text pair.
struct MixConfig {
    double audio_contrastive = 0.6;
    double attribution_share = 0.5;
    double noise_share = 0.5;

    std::array<double, 4> kind_weights() const noexcept;
    void validate() const;
};

struct PairRef {
    PairKind kind;
    std::size_t index;
    bool operator==(const PairRef&) const = default;
};

// Deterministic batch stream. Within a kind, pairs are drawn without
// replacement in a shuffled order until the pool is exhausted, then with
// replacement.
class BatchSampler {
public:
    BatchSampler(const PairPools& pools, const MixConfig& mix, std::size_t batch_size, std::uint64_t seed);

    std::vector<PairRef> next_batch();
    PairRef next_slot();

private:
    std::array<std::size_t, 4> pool_sizes_{};
    std::array<double, 4> weights_{};
    std::size_t batch_size_;
    SplitMix64 rng_;
    std::array<std::vector<std::size_t>, 4> order_;
    std::array<std::size_t, 4> cursor_{};
};

}  // namespace acpo
