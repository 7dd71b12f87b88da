#include "acpo/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "acpo/errors.hpp"
#include "acpo/rng.hpp"

namespace acpo {

namespace {

Embedding mean_embedding(std::span<const std::size_t> ids, const std::vector<Embedding>& table, std::size_t dim) {
    Embedding out(dim, 0.0);
    for (const std::size_t id : ids) {
        for (std::size_t j = 0; j < dim; ++j) {
            out[j] += table[id][j];
        }
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (double& v : out) {
        v *= inv;
    }
    return out;
}

void add_noise(std::vector<double>& v, SplitMix64& rng, double sigma) {
    if (sigma == 0.0) {
        return;
    }
    for (double& x : v) {
        x += sigma * rng.normal();
    }
}

}  // namespace

EventVocab EventVocab::make_default(std::uint64_t seed, std::size_t d_embed) {
    EventVocab v;
    v.visual_objects = {"police_car", "dog", "cat", "person", "frog", "cow",
                        "bird",       "car", "train", "bee",  "baby", "guitar"};
    v.audio_events = {"siren", "bark", "meow", "speech", "croak", "moo",
                      "chirp", "engine", "horn", "buzz", "cry", "strum"};
    v.co_map.resize(v.visual_objects.size());
    for (std::size_t i = 0; i < v.co_map.size(); ++i) {
        v.co_map[i] = i;
    }
    v.d_embed = d_embed;
    auto all = sample_embeddings(v.visual_objects.size() + v.audio_events.size(), d_embed, seed);
    v.object_embeddings.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(v.visual_objects.size()));
    v.event_embeddings.assign(all.begin() + static_cast<std::ptrdiff_t>(v.visual_objects.size()), all.end());
    return v;
}

std::vector<Embedding> EventVocab::sample_embeddings(std::size_t count, std::size_t dim, std::uint64_t seed,
                                                     double max_cosine) {
    SplitMix64 rng(seed);
    std::vector<Embedding> out;
    out.reserve(count);
    std::size_t attempts = 0;
    while (out.size() < count) {
        if (++attempts > 100000) {
            throw ConfigError("could not sample well-separated embeddings; increase d_embed");
        }
        Embedding e(dim);
        double norm = 0.0;
        for (double& x : e) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            continue;
        }
        for (double& x : e) {
            x /= norm;
        }
        const bool separated = std::all_of(out.begin(), out.end(), [&](const Embedding& o) {
            return cosine(o, e) < max_cosine;
        });
        if (separated) {
            out.push_back(std::move(e));
        }
    }
    return out;
}

bool EventVocab::is_object_token(TokenId t) const noexcept {
    return t >= tok::kFirstEventToken && t < tok::kFirstEventToken + object_count();
}

bool EventVocab::is_event_token(TokenId t) const noexcept {
    const TokenId first = tok::kFirstEventToken + static_cast<TokenId>(object_count());
    return t >= first && t < first + event_count();
}

std::size_t EventVocab::object_of_token(TokenId t) const {
    if (!is_object_token(t)) {
        throw IndexError(fmt::format("token {} is not an object token", t));
    }
    return t - tok::kFirstEventToken;
}

std::size_t EventVocab::event_of_token(TokenId t) const {
    if (!is_event_token(t)) {
        throw IndexError(fmt::format("token {} is not an audio event token", t));
    }
    return t - tok::kFirstEventToken - object_count();
}

std::size_t EventVocab::min_vocab_size() const noexcept {
    return tok::kFirstEventToken + object_count() + event_count();
}

std::string EventVocab::token_name(TokenId t) const {
    static constexpr std::array<std::string_view, tok::kReservedCount> reserved = {
        "<bos>", "<eos>", "<yes>", "<no>", "<q_hear>", "<q_see>", "<prompt_aud>", "<prompt_vis>", "<prompt_av>"};
    if (t < tok::kReservedCount) {
        return std::string(reserved[t]);
    }
    if (t == tok::VIS_MARK) {
        return "<vis>";
    }
    if (t == tok::AUD_MARK) {
        return "<aud>";
    }
    if (is_object_token(t)) {
        return "obj:" + visual_objects[object_of_token(t)];
    }
    if (is_event_token(t)) {
        return "snd:" + audio_events[event_of_token(t)];
    }
    return fmt::format("<unused{}>", t);
}

void EventVocab::validate() const {
    if (visual_objects.empty() || audio_events.empty()) {
        throw ConfigError("event vocabulary must have at least one object and one audio event");
    }
    if (co_map.size() != visual_objects.size()) {
        throw ConfigError("co_map must map every visual object");
    }
    for (const std::size_t e : co_map) {
        if (e >= audio_events.size()) {
            throw ConfigError("co_map refers to an unknown audio event");
        }
    }
    if (object_embeddings.size() != visual_objects.size() || event_embeddings.size() != audio_events.size()) {
        throw ConfigError("every object and audio event needs an embedding");
    }
    for (const auto* table : {&object_embeddings, &event_embeddings}) {
        for (const Embedding& e : *table) {
            if (e.size() != d_embed) {
                throw ConfigError("embedding dimension mismatch");
            }
        }
    }
}

std::string clip_id(std::size_t index) { return fmt::format("clip{:05d}", index); }

std::vector<Clip> generate_corpus(const EventVocab& vocab, std::size_t n_clips, double p_co, std::uint64_t seed) {
    vocab.validate();
    if (n_clips < 1) {
        throw ConfigError("n_clips must be >= 1");
    }
    if (!(p_co >= 0.0 && p_co <= 1.0)) {
        throw ConfigError(fmt::format("p_co must be in [0, 1], got {}", p_co));
    }
    const std::size_t n_obj = vocab.object_count();
    const std::size_t n_ev = vocab.event_count();
    std::vector<Clip> clips;
    clips.reserve(n_clips);
    for (std::size_t i = 0; i < n_clips; ++i) {
        SplitMix64 rng(derive_seed(seed, i));
        Clip clip;
        clip.id = clip_id(i);
        const std::size_t want = std::min<std::size_t>(1 + rng.below(3), n_obj);
        std::vector<std::size_t> pool(n_obj);
        for (std::size_t k = 0; k < n_obj; ++k) {
            pool[k] = k;
        }
        for (std::size_t k = 0; k < want; ++k) {
            const std::size_t j = k + rng.below(n_obj - k);
            std::swap(pool[k], pool[j]);
            clip.visual_events.push_back(pool[k]);
        }
        for (const std::size_t obj : clip.visual_events) {
            const std::size_t expected = vocab.co_map[obj];
            std::size_t sound = expected;
            if (!rng.bernoulli(p_co) && n_ev > 1) {
                sound = rng.below(n_ev - 1);
                if (sound >= expected) {
                    ++sound;
                }
            }
            clip.audio_events.push_back(sound);
        }
        std::sort(clip.visual_events.begin(), clip.visual_events.end());
        std::sort(clip.audio_events.begin(), clip.audio_events.end());
        clip.audio_events.erase(std::unique(clip.audio_events.begin(), clip.audio_events.end()),
                                clip.audio_events.end());
        clip.clip_seed = rng.next();
        clips.push_back(std::move(clip));
    }
    return clips;
}

CaptionBundle render_captions(const Clip& clip, const EventVocab& vocab) {
    CaptionBundle out;
    out.y_vis.push_back(tok::VIS_MARK);
    for (const std::size_t o : clip.visual_events) {
        out.y_vis.push_back(vocab.object_token(o));
    }
    out.y_aud.push_back(tok::AUD_MARK);
    for (const std::size_t e : clip.audio_events) {
        out.y_aud.push_back(vocab.event_token(e));
    }
    out.y_av = out.y_vis;
    out.y_av.insert(out.y_av.end(), out.y_aud.begin(), out.y_aud.end());
    out.y_vis.push_back(tok::EOS);
    out.y_aud.push_back(tok::EOS);
    out.y_av.push_back(tok::EOS);
    return out;
}

std::vector<std::size_t> expected_events(const Clip& clip, const EventVocab& vocab) {
    std::vector<std::size_t> out;
    for (const std::size_t o : clip.visual_events) {
        out.push_back(vocab.co_map[o]);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<double> audio_features(const Clip& clip, const EventVocab& vocab, double noise_sigma) {
    if (clip.audio_events.empty()) {
        throw InputError(fmt::format("clip {} has no audio events", clip.id));
    }
    auto g = mean_embedding(clip.audio_events, vocab.event_embeddings, vocab.d_embed);
    SplitMix64 rng(derive_seed(clip.clip_seed, "audio"));
    add_noise(g, rng, noise_sigma);
    return g;
}

std::vector<std::vector<double>> video_features(const Clip& clip, const EventVocab& vocab, std::size_t n_frames,
                                                double noise_sigma) {
    if (n_frames < 1) {
        throw InputError("n_frames must be >= 1");
    }
    if (clip.visual_events.empty()) {
        throw InputError(fmt::format("clip {} has no visual objects", clip.id));
    }
    const auto clean = mean_embedding(clip.visual_events, vocab.object_embeddings, vocab.d_embed);
    const std::uint64_t video_seed = derive_seed(clip.clip_seed, "video");
    std::vector<std::vector<double>> frames;
    frames.reserve(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) {
        auto f = clean;
        SplitMix64 rng(derive_seed(video_seed, i));
        add_noise(f, rng, noise_sigma);
        frames.push_back(std::move(f));
    }
    return frames;
}

double av_similarity(const Clip& video_clip, const Clip& audio_clip, const EventVocab& vocab) {
    const auto expected = expected_events(video_clip, vocab);
    const auto a = mean_embedding(expected, vocab.event_embeddings, vocab.d_embed);
    const auto b = mean_embedding(audio_clip.audio_events, vocab.event_embeddings, vocab.d_embed);
    return std::clamp(cosine(a, b), -1.0, 1.0);
}

double cosine(std::span<const double> a, std::span<const double> b) noexcept {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    // sqrt(x * x) == x exactly, so identical vectors give exactly 1.
    return dot / std::sqrt(na * nb);
}

}  // namespace acpo
