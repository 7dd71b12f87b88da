#include "acpo/pair_forge.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "acpo/errors.hpp"

namespace acpo {

namespace {

const CaptionBundle& captions_for(const CaptionTable& captions, const std::string& id) {
    const auto it = captions.find(id);
    if (it == captions.end()) {
        throw DataError(fmt::format("no captions for clip {}", id));
    }
    return it->second;
}

void shuffle(std::vector<std::size_t>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(v[i - 1], v[j]);
    }
}

// Independent stream per (builder, epoch, clip index).
SplitMix64 pair_rng(const PairBuildConfig& cfg, std::string_view builder, std::size_t clip_index) {
    return SplitMix64(derive_seed(derive_seed(derive_seed(cfg.seed, builder), cfg.epoch), clip_index));
}

ContextSpec make_spec(const Clip& video, const Clip& audio, std::size_t n_frames, TokenId head,
                      NoiseTag tag = NoiseTag::clean) {
    return ContextSpec{video.id, audio.id, n_frames, head, tag};
}

}  // namespace

std::string_view to_string(NoiseTag t) noexcept {
    switch (t) {
        case NoiseTag::clean: return "clean";
        case NoiseTag::audio_noised: return "audio_noised";
        case NoiseTag::video_noised: return "video_noised";
    }
    return "?";
}

std::optional<NoiseTag> noise_tag_from_string(std::string_view s) noexcept {
    for (const NoiseTag t : {NoiseTag::clean, NoiseTag::audio_noised, NoiseTag::video_noised}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Tier t) noexcept {
    switch (t) {
        case Tier::low: return "low";
        case Tier::high: return "high";
        case Tier::none: return "none";
    }
    return "?";
}

std::optional<Tier> tier_from_string(std::string_view s) noexcept {
    for (const Tier t : {Tier::low, Tier::high, Tier::none}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    return std::nullopt;
}

std::string_view to_string(PairKind k) noexcept {
    switch (k) {
        case PairKind::attribution: return "attribution";
        case PairKind::sensitivity: return "sensitivity";
        case PairKind::noise: return "noise";
        case PairKind::text: return "text";
    }
    return "?";
}

std::optional<PairKind> pair_kind_from_string(std::string_view s) noexcept {
    for (const PairKind k : kAllPairKinds) {
        if (to_string(k) == s) {
            return k;
        }
    }
    return std::nullopt;
}

// ------------------------------------------------------------------ World

World::World(EventVocab vocab, std::vector<Clip> clips, FeatureConfig features)
    : vocab_(std::move(vocab)), clips_(std::move(clips)), features_(features) {
    vocab_.validate();
    for (std::size_t i = 0; i < clips_.size(); ++i) {
        if (!index_.emplace(clips_[i].id, i).second) {
            throw DataError(fmt::format("duplicate clip id {}", clips_[i].id));
        }
    }
}

const Clip& World::clip(std::string_view id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
        throw DataError(fmt::format("unknown clip id {}", id));
    }
    return clips_[it->second];
}

Context World::resolve(const ContextSpec& spec, std::span<const TokenId> prompt_suffix) const {
    const Clip& video = clip(spec.video_clip_id);
    const Clip& audio = clip(spec.audio_clip_id);
    Context ctx;
    ctx.video_tokens = video_features(video, vocab_, spec.n_frames, features_.noise_sigma);
    ctx.audio_vector = audio_features(audio, vocab_, features_.noise_sigma);
    if (spec.noise_tag != NoiseTag::clean) {
        SplitMix64 rng(derive_seed(derive_seed(video.clip_seed, audio.clip_seed), to_string(spec.noise_tag)));
        if (spec.noise_tag == NoiseTag::audio_noised) {
            for (double& x : ctx.audio_vector) {
                x += features_.corrupt_sigma * rng.normal();
            }
        } else {
            for (auto& frame : ctx.video_tokens) {
                for (double& x : frame) {
                    x += features_.corrupt_sigma * rng.normal();
                }
            }
        }
    }
    ctx.prompt_tokens.push_back(spec.prompt_head);
    ctx.prompt_tokens.insert(ctx.prompt_tokens.end(), prompt_suffix.begin(), prompt_suffix.end());
    return ctx;
}

CaptionTable build_caption_table(std::span<const Clip> clips, const EventVocab& vocab) {
    CaptionTable table;
    for (const Clip& c : clips) {
        table.emplace(c.id, render_captions(c, vocab));
    }
    return table;
}

// ------------------------------------------------------------------ tiers

void TierConfig::validate() const {
    if (!(low_quantile > 0.0 && low_quantile <= high_quantile && high_quantile < 1.0)) {
        throw ConfigError(fmt::format("tier quantiles must satisfy 0 < low <= high < 1, got {} and {}", low_quantile,
                                      high_quantile));
    }
}

const std::vector<std::string>* TierMap::find(std::string_view clip_id, Tier tier) const {
    const auto it = partners.find(clip_id);
    if (it == partners.end()) {
        return nullptr;
    }
    const auto& list = tier == Tier::low ? it->second.low : it->second.high;
    return list.empty() ? nullptr : &list;
}

double empirical_quantile(std::vector<double> sample, double q) {
    if (sample.empty()) {
        throw DataError("quantile of an empty sample");
    }
    std::sort(sample.begin(), sample.end());
    const double pos = q * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sample.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sample[lo] + frac * (sample[hi] - sample[lo]);
}

TierMap tier_swaps(std::span<const Clip> shard, const EventVocab& vocab, const TierConfig& tiers, std::uint64_t seed) {
    tiers.validate();
    if (shard.size() < 4) {
        throw DataError(fmt::format("tiering needs at least 4 clips, got {}", shard.size()));
    }
    struct Candidate {
        std::size_t partner;
        double similarity;
    };
    std::vector<std::vector<Candidate>> candidates(shard.size());
    std::vector<double> sample;
    for (std::size_t a = 0; a < shard.size(); ++a) {
        std::vector<std::size_t> pool;
        for (std::size_t b = 0; b < shard.size(); ++b) {
            if (b != a) {
                pool.push_back(b);
            }
        }
        if (tiers.candidate_pool > 0 && tiers.candidate_pool < pool.size()) {
            SplitMix64 rng(derive_seed(seed, a));
            shuffle(pool, rng);
            pool.resize(tiers.candidate_pool);
            std::sort(pool.begin(), pool.end());
        }
        for (const std::size_t b : pool) {
            if (shard[b].audio_events == shard[a].audio_events) {
                continue;
            }
            const double s = av_similarity(shard[a], shard[b], vocab);
            candidates[a].push_back({b, s});
            sample.push_back(s);
        }
    }

    TierMap out;
    out.sample_size = sample.size();
    const auto [lo_it, hi_it] = std::minmax_element(sample.begin(), sample.end());
    if (sample.empty() || *lo_it == *hi_it) {
        // No spread: tiers are meaningless.
        out.skipped_low = shard.size();
        out.skipped_high = shard.size();
        if (!sample.empty()) {
            out.low_cutoff = out.high_cutoff = *lo_it;
        }
        return out;
    }
    out.low_cutoff = empirical_quantile(sample, tiers.low_quantile);
    out.high_cutoff = empirical_quantile(sample, tiers.high_quantile);
    for (std::size_t a = 0; a < shard.size(); ++a) {
        TierPartners p;
        for (const Candidate& c : candidates[a]) {
            if (c.similarity <= out.low_cutoff) {
                p.low.push_back(shard[c.partner].id);
            }
            if (c.similarity >= out.high_cutoff) {
                p.high.push_back(shard[c.partner].id);
            }
        }
        out.skipped_low += p.low.empty() ? 1 : 0;
        out.skipped_high += p.high.empty() ? 1 : 0;
        if (!p.low.empty() || !p.high.empty()) {
            out.partners.emplace(shard[a].id, std::move(p));
        }
    }
    return out;
}

// ------------------------------------------------------------------ pairs

void check_pair_shape(const PreferencePair& pair) {
    switch (pair.kind) {
        case PairKind::attribution:
            if (!(pair.preferred_ctx == pair.dispreferred_ctx) || pair.preferred_y == pair.dispreferred_y) {
                throw DataError("attribution pair must share its context and differ in response");
            }
            break;
        case PairKind::sensitivity:
            if (pair.preferred_y != pair.dispreferred_y || pair.preferred_ctx == pair.dispreferred_ctx) {
                throw DataError("sensitivity pair must share its response and differ in context");
            }
            break;
        case PairKind::noise:
            if (pair.preferred_y != pair.dispreferred_y || pair.preferred_ctx.noise_tag != NoiseTag::clean) {
                throw DataError("noise pair must share its response and have a clean preferred side");
            }
            break;
        case PairKind::text:
            if (!(pair.preferred_ctx == pair.dispreferred_ctx) || !pair.preferred_ctx.aligned()) {
                throw DataError("text pair must use one aligned context on both sides");
            }
            break;
    }
}

std::vector<PreferencePair> build_attribution_pairs(std::span<const Clip> shard, const CaptionTable& captions,
                                                    const TierMap& tiers, Tier tier_choice,
                                                    const PairBuildConfig& cfg) {
    std::vector<PreferencePair> out;
    std::map<std::string_view, const Clip*> by_id;
    for (const Clip& c : shard) {
        by_id.emplace(c.id, &c);
    }
    for (std::size_t i = 0; i < shard.size(); ++i) {
        const Clip& a = shard[i];
        const Clip* b = &a;
        if (tier_choice != Tier::none) {
            const auto* partners = tiers.find(a.id, tier_choice);
            if (partners == nullptr) {
                continue;
            }
            SplitMix64 rng = pair_rng(cfg, "attribution", i);
            const auto it = by_id.find((*partners)[rng.below(partners->size())]);
            if (it == by_id.end()) {
                throw DataError(fmt::format("swap partner of {} is not in the shard", a.id));
            }
            b = it->second;
        }
        PreferencePair p;
        p.kind = PairKind::attribution;
        p.tier = tier_choice;
        p.preferred_ctx = make_spec(a, *b, cfg.n_frames, tok::PROMPT_AUD);
        p.dispreferred_ctx = p.preferred_ctx;
        p.preferred_y = captions_for(captions, b->id).y_aud;
        p.dispreferred_y = captions_for(captions, a.id).y_vis;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PreferencePair> build_sensitivity_pairs(std::span<const Clip> shard, const CaptionTable& captions,
                                                    const TierMap& tiers, Tier tier_choice,
                                                    const PairBuildConfig& cfg) {
    if (tier_choice == Tier::none) {
        throw ConfigError("sensitivity pairs need a swap tier (low or high)");
    }
    std::vector<PreferencePair> out;
    std::map<std::string_view, const Clip*> by_id;
    for (const Clip& c : shard) {
        by_id.emplace(c.id, &c);
    }
    for (std::size_t i = 0; i < shard.size(); ++i) {
        const Clip& a = shard[i];
        const auto* partners = tiers.find(a.id, tier_choice);
        if (partners == nullptr) {
            continue;
        }
        SplitMix64 rng = pair_rng(cfg, "sensitivity", i);
        const auto it = by_id.find((*partners)[rng.below(partners->size())]);
        if (it == by_id.end()) {
            throw DataError(fmt::format("swap partner of {} is not in the shard", a.id));
        }
        PreferencePair p;
        p.kind = PairKind::sensitivity;
        p.tier = tier_choice;
        p.preferred_ctx = make_spec(a, a, cfg.n_frames, tok::PROMPT_AV);
        p.dispreferred_ctx = make_spec(a, *it->second, cfg.n_frames, tok::PROMPT_AV);
        p.preferred_y = captions_for(captions, a.id).y_av;
        p.dispreferred_y = p.preferred_y;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PreferencePair> build_noise_pairs(std::span<const Clip> shard, const CaptionTable& captions,
                                              const FeatureConfig& features, const PairBuildConfig& cfg) {
    if (!(features.corrupt_sigma > features.noise_sigma)) {
        throw ConfigError(fmt::format("corruption sigma {} must exceed the feature noise sigma {}",
                                      features.corrupt_sigma, features.noise_sigma));
    }
    std::vector<PreferencePair> out;
    const std::size_t offset = cfg.seed & 1u;
    for (std::size_t i = 0; i < shard.size(); ++i) {
        const Clip& a = shard[i];
        const NoiseTag tag = (i + offset) % 2 == 0 ? NoiseTag::audio_noised : NoiseTag::video_noised;
        PreferencePair p;
        p.kind = PairKind::noise;
        p.tier = Tier::none;
        p.preferred_ctx = make_spec(a, a, cfg.n_frames, tok::PROMPT_AV);
        p.dispreferred_ctx = make_spec(a, a, cfg.n_frames, tok::PROMPT_AV, tag);
        p.preferred_y = captions_for(captions, a.id).y_av;
        p.dispreferred_y = p.preferred_y;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PreferencePair> build_text_pairs(std::span<const Clip> shard, const CaptionTable& captions,
                                             const PairBuildConfig& cfg) {
    std::vector<PreferencePair> out;
    out.reserve(shard.size());
    for (const Clip& a : shard) {
        PreferencePair p;
        p.kind = PairKind::text;
        p.tier = Tier::none;
        p.preferred_ctx = make_spec(a, a, cfg.n_frames, tok::PROMPT_AV);
        p.dispreferred_ctx = p.preferred_ctx;
        const CaptionBundle& caps = captions_for(captions, a.id);
        p.preferred_y = caps.y_av;
        p.dispreferred_y = caps.y_vis;
        out.push_back(std::move(p));
    }
    return out;
}

// ------------------------------------------------------------------ batches

std::array<double, 4> MixConfig::kind_weights() const noexcept {
    return {audio_contrastive * attribution_share, audio_contrastive * (1.0 - attribution_share),
            (1.0 - audio_contrastive) * noise_share, (1.0 - audio_contrastive) * (1.0 - noise_share)};
}

void MixConfig::validate() const {
    for (const double v : {audio_contrastive, attribution_share, noise_share}) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ConfigError(fmt::format("mix fractions must lie in [0, 1], got {}", v));
        }
    }
}

BatchSampler::BatchSampler(const PairPools& pools, const MixConfig& mix, std::size_t batch_size, std::uint64_t seed)
    : weights_(mix.kind_weights()), batch_size_(batch_size), rng_(seed) {
    mix.validate();
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    bool any_pool = false;
    for (std::size_t k = 0; k < 4; ++k) {
        pool_sizes_[k] = pools[k].size();
        any_pool = any_pool || pool_sizes_[k] > 0;
    }
    if (!any_pool) {
        throw DataError("all preference-pair pools are empty");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
        if (weights_[k] > 0.0 && pool_sizes_[k] == 0) {
            throw DataError(fmt::format("mix requests {} pairs but that pool is empty", to_string(kAllPairKinds[k])));
        }
        total += weights_[k];
    }
    if (total <= 0.0) {
        throw DataError("mix assigns zero weight to every pair kind");
    }
    for (std::size_t k = 0; k < 4; ++k) {
        order_[k].resize(pool_sizes_[k]);
        for (std::size_t i = 0; i < pool_sizes_[k]; ++i) {
            order_[k][i] = i;
        }
        shuffle(order_[k], rng_);
    }
}

PairRef BatchSampler::next_slot() {
    double total = 0.0;
    for (const double w : weights_) {
        total += w;
    }
    const double u = rng_.uniform() * total;
    std::size_t k = 0;
    double acc = 0.0;
    for (; k < 3; ++k) {
        acc += weights_[k];
        if (u < acc && weights_[k] > 0.0) {
            break;
        }
    }
    while (weights_[k] == 0.0) {
        // Rounding pushed u past the last positive weight.
        --k;
    }
    std::size_t index;
    if (cursor_[k] < order_[k].size()) {
        index = order_[k][cursor_[k]++];
    } else {
        index = rng_.below(pool_sizes_[k]);
    }
    return {kAllPairKinds[k], index};
}

std::vector<PairRef> BatchSampler::next_batch() {
    std::vector<PairRef> out;
    out.reserve(batch_size_);
    for (std::size_t i = 0; i < batch_size_; ++i) {
        out.push_back(next_slot());
    }
    return out;
}

}  // namespace acpo
