#pragma once

// Evaluation: yes/no hallucination QA, caption metrics on original and
// audio-swapped inputs, the frame-count sweep and preference satisfaction.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acpo/pair_forge.hpp"
#include "acpo/toy_avlm.hpp"

namespace acpo {

// ------------------------------------------------------------------ QA

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;

    std::size_t total() const noexcept { return tp + fp + fn + tn; }
    bool operator==(const ConfusionCounts&) const = default;
};

// Every ratio with a zero denominator is 0.
struct QaMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    double pa = 0.0;  // accuracy on yes-items
    double hr = 0.0;  // accuracy on no-items

    static QaMetrics from_counts(const ConfusionCounts& c) noexcept;
};

enum class QaModality { audio, video };

struct QaItem {
    std::string id;
    ContextSpec ctx;
    QaModality modality = QaModality::audio;
    // Event index for audio items, object index for video items.
    std::size_t question_index = 0;
    bool truth = false;

    bool operator==(const QaItem&) const = default;
};

// The prompt of an item: [Q_HEAR, sound] or [Q_SEE, object].
TokenSeq qa_prompt_suffix(const QaItem& item, const EventVocab& vocab);

// Alternating no/yes items over swapped contexts (v_A, a_B), B drawn from A's
// low and high tier partners. A "no" asks about the expected sound of an
// object visible in A that is absent from B's audio; a "yes" asks about a
// sound of B.
std::vector<QaItem> build_audio_halluc_qa(const World& world, std::span<const Clip> shard, const TierMap& tiers,
                                          std::size_t n_items, std::size_t n_frames, std::uint64_t seed);

// Mirrored variant: under (v_A, a_B) ask about objects. A "no" asks about an
// object not visible in A whose usual sound is present in B; a "yes" asks
// about an object visible in A.
std::vector<QaItem> build_video_halluc_qa(const World& world, std::span<const Clip> shard, const TierMap& tiers,
                                          std::size_t n_items, std::size_t n_frames, std::uint64_t seed);

struct QaPrediction {
    std::string id;
    bool truth = false;
    bool predicted_yes = false;
    double logp_yes = 0.0;
    double logp_no = 0.0;
};

struct QaResult {
    ConfusionCounts counts;
    QaMetrics metrics;
    std::vector<QaPrediction> predictions;  // in item order
};

ConfusionCounts count_predictions(std::span<const QaPrediction> predictions) noexcept;

// Items may be scored on several threads; results are stored by item index
// so the output does not depend on `threads`.
QaResult score_qa(const ModelParams& model, const World& world, std::span<const QaItem> items,
                  std::size_t threads = 1);

// ------------------------------------------------------------------ captions

// CIDEr-D over n = 1..4 scaled by 10 and averaged over candidates.
// references[i] is the single reference of candidates[i]; corpus_refs give
// document frequencies for the IDF weights.
double cider(std::span<const TokenSeq> candidates, std::span<const TokenSeq> references,
             std::span<const TokenSeq> corpus_refs);

// Exact-match unigram METEOR without stems or synonyms. Candidate tokens are
// aligned left to right, each to the leftmost unused equal reference token.
double meteor_lite(const TokenSeq& candidate, const TokenSeq& reference);

// Decoded captions are scored with a leading BOS, so every caption of the
// template grammar has at least four tokens.
TokenSeq framed_caption(const TokenSeq& caption);

enum class CaptionSplit { audio_original, audio_swap, video_original, video_swap };
inline constexpr std::array<CaptionSplit, 4> kAllCaptionSplits = {
    CaptionSplit::audio_original, CaptionSplit::audio_swap, CaptionSplit::video_original, CaptionSplit::video_swap};

std::string_view to_string(CaptionSplit s) noexcept;

struct CaptionScores {
    double meteor = 0.0;
    double cider = 0.0;
};

struct CaptionCase {
    CaptionSplit split = CaptionSplit::audio_original;
    ContextSpec ctx;
    // Clip whose caption is the reference.
    std::string reference_clip_id;
    TokenSeq reference;
};

// Highest-similarity partner of each clip among shard clips with a different
// sound set (ties to the lowest id). Clips without one are skipped.
std::vector<CaptionCase> build_caption_cases(const World& world, std::span<const Clip> shard,
                                             const CaptionTable& captions, std::size_t n_clips,
                                             std::size_t n_frames);

// Any function from a context to a caption can be scored; greedy decoding of a
// model is the usual one.
using Captioner = std::function<TokenSeq(const Context&)>;

std::array<CaptionScores, 4> captioning_eval(const Captioner& captioner, const World& world,
                                             std::span<const CaptionCase> cases);
std::array<CaptionScores, 4> captioning_eval(const ModelParams& model, const World& world,
                                             std::span<const CaptionCase> cases);

// ------------------------------------------------------------------ sweeps

struct SweepPoint {
    std::size_t n_frames = 0;
    double accuracy = 0.0;
};

// The same items with only n_frames changed.
std::vector<SweepPoint> dominance_sweep(const ModelParams& model, const World& world, std::span<const QaItem> items,
                                        std::span<const std::size_t> frames_list, std::size_t threads = 1);

struct PrefSatisfaction {
    std::array<double, 4> rate{};  // NaN for kinds with no pairs
    std::array<std::size_t, 4> count{};
};

// Fraction of pairs per kind whose margin z is strictly positive.
PrefSatisfaction pref_satisfaction(const ModelParams& policy, const ModelParams& reference, const World& world,
                                   std::span<const PreferencePair> pairs, double beta);

// ------------------------------------------------------------------ report

struct EvalConfig {
    std::size_t n_qa = 200;
    std::size_t n_caption_clips = 100;
    std::size_t n_frames = 8;
    std::vector<std::size_t> frames_list = {1, 2, 4, 8};
    std::size_t threads = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EvalReport {
    QaResult qa;
    QaResult video_qa;
    std::array<CaptionScores, 4> captioning{};
    std::vector<SweepPoint> dominance;
    std::optional<PrefSatisfaction> pref;
};

// Runs the whole suite on a held-out shard. Preference satisfaction is
// reported when a reference and held-out pairs are given.
EvalReport evaluate(const ModelParams& model, const World& world, std::span<const Clip> shard,
                    const CaptionTable& captions, const TierMap& tiers, const EvalConfig& cfg,
                    const ModelParams* reference = nullptr, std::span<const PreferencePair> held_out_pairs = {},
                    double beta = 0.1);

}  // namespace acpo
