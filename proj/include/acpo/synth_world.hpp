#pragma once

// Synthetic audio-visual world: visual objects, audio events, a planted
// object -> expected-sound co-occurrence map, per-clip features and templated
// modality-specific captions.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "acpo/toy_avlm.hpp"

namespace acpo {

// Caption template markers follow the reserved ids.
namespace tok {
inline constexpr TokenId VIS_MARK = kReservedCount;
inline constexpr TokenId AUD_MARK = kReservedCount + 1;
inline constexpr TokenId kFirstEventToken = kReservedCount + 2;
}  // namespace tok

using Embedding = std::vector<double>;

struct EventVocab {
    std::vector<std::string> visual_objects;
    std::vector<std::string> audio_events;
    // co_map[object] = index of the object's expected audio event.
    std::vector<std::size_t> co_map;
    std::size_t d_embed = 16;
    std::vector<Embedding> object_embeddings;
    std::vector<Embedding> event_embeddings;

    // Twelve objects paired one-to-one with twelve sounds (police_car -> siren,
    // dog -> bark, ...), unit embeddings drawn from `seed`.
    static EventVocab make_default(std::uint64_t seed, std::size_t d_embed = 16);

    // Unit-norm Gaussian directions, redrawn until every pairwise cosine is
    // below `max_cosine`.
    static std::vector<Embedding> sample_embeddings(std::size_t count, std::size_t dim, std::uint64_t seed,
                                                    double max_cosine = 0.95);

    std::size_t object_count() const noexcept { return visual_objects.size(); }
    std::size_t event_count() const noexcept { return audio_events.size(); }

    TokenId object_token(std::size_t object) const noexcept {
        return tok::kFirstEventToken + static_cast<TokenId>(object);
    }
    TokenId event_token(std::size_t event) const noexcept {
        return tok::kFirstEventToken + static_cast<TokenId>(object_count() + event);
    }
    bool is_object_token(TokenId t) const noexcept;
    bool is_event_token(TokenId t) const noexcept;
    std::size_t object_of_token(TokenId t) const;
    std::size_t event_of_token(TokenId t) const;
    // Smallest vocabulary that holds every world token.
    std::size_t min_vocab_size() const noexcept;
    std::string token_name(TokenId t) const;

    void validate() const;
};

// Event lists hold indices into the vocab, sorted ascending.
struct Clip {
    std::string id;
    std::vector<std::size_t> visual_events;
    std::vector<std::size_t> audio_events;
    std::uint64_t clip_seed = 0;

    bool operator==(const Clip&) const = default;
};

struct CaptionBundle {
    TokenSeq y_av;
    TokenSeq y_vis;
    TokenSeq y_aud;

    bool operator==(const CaptionBundle&) const = default;
};

std::string clip_id(std::size_t index);

// Each clip shows 1-3 distinct objects chosen uniformly. Each object emits its
// expected sound with probability p_co, otherwise a uniformly chosen other
// sound. Clip i draws from a stream derived from (seed, i).
std::vector<Clip> generate_corpus(const EventVocab& vocab, std::size_t n_clips, double p_co, std::uint64_t seed);

CaptionBundle render_captions(const Clip& clip, const EventVocab& vocab);

// Sorted, deduplicated expected sounds of the clip's visible objects.
std::vector<std::size_t> expected_events(const Clip& clip, const EventVocab& vocab);

// Mean of the clip's sound embeddings plus N(0, sigma^2) noise per entry.
std::vector<double> audio_features(const Clip& clip, const EventVocab& vocab, double noise_sigma);

// n_frames copies of the mean object embedding, each with its own noise. The
// noise of frame i depends only on (clip_seed, i).
std::vector<std::vector<double>> video_features(const Clip& clip, const EventVocab& vocab, std::size_t n_frames,
                                                double noise_sigma);

// Cosine between the mean expected-sound embedding of video_clip's objects and
// the mean sound embedding of audio_clip. Noise free.
double av_similarity(const Clip& video_clip, const Clip& audio_clip, const EventVocab& vocab);

double cosine(std::span<const double> a, std::span<const double> b) noexcept;

}  // namespace acpo
