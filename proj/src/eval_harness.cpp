#include "acpo/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fmt/format.h>
#include <limits>
#include <map>
#include <set>
#include <thread>

#include "acpo/errors.hpp"
#include "acpo/rng.hpp"
#include "acpo/trainer.hpp"

namespace acpo {

namespace {

double ratio(std::size_t num, std::size_t den) noexcept {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

bool contains(std::span<const std::size_t> sorted, std::size_t x) {
    return std::binary_search(sorted.begin(), sorted.end(), x);
}

// Picks the asked index for a (video clip, audio clip, label) triple, or
// nothing when the combination cannot produce an item with that label.
using QuestionPicker =
    std::function<std::optional<std::size_t>(const Clip& a, const Clip& b, bool truth, SplitMix64& rng)>;

std::vector<QaItem> build_qa(const World& world, std::span<const Clip> shard, const TierMap& tiers,
                             std::size_t n_items, std::size_t n_frames, std::uint64_t seed, QaModality modality,
                             const QuestionPicker& pick) {
    struct Source {
        const Clip* clip;
        std::vector<std::string> partners;
    };
    std::vector<Source> sources;
    for (const Clip& c : shard) {
        std::vector<std::string> partners;
        for (const Tier t : {Tier::low, Tier::high}) {
            if (const auto* list = tiers.find(c.id, t)) {
                partners.insert(partners.end(), list->begin(), list->end());
            }
        }
        std::sort(partners.begin(), partners.end());
        partners.erase(std::unique(partners.begin(), partners.end()), partners.end());
        if (!partners.empty()) {
            sources.push_back({&c, std::move(partners)});
        }
    }
    if (n_items > 0 && sources.empty()) {
        throw DataError(fmt::format("no clip among {} has a tiered swap partner; cannot build QA items", shard.size()));
    }
    SplitMix64 rng(seed);
    for (std::size_t i = sources.size(); i > 1; --i) {
        std::swap(sources[i - 1], sources[rng.below(i)]);
    }

    std::vector<QaItem> items;
    items.reserve(n_items);
    std::size_t cursor = 0;
    std::size_t misses = 0;
    while (items.size() < n_items) {
        const bool truth = items.size() % 2 == 1;
        const Source& src = sources[cursor++ % sources.size()];
        const std::size_t offset = rng.below(src.partners.size());
        bool built = false;
        for (std::size_t k = 0; k < src.partners.size() && !built; ++k) {
            const Clip& b = world.clip(src.partners[(offset + k) % src.partners.size()]);
            const auto asked = pick(*src.clip, b, truth, rng);
            if (!asked) {
                continue;
            }
            QaItem item;
            item.id = fmt::format("qa{:05d}", items.size());
            item.ctx = ContextSpec{src.clip->id, b.id, n_frames, modality == QaModality::audio ? tok::Q_HEAR : tok::Q_SEE,
                                   NoiseTag::clean};
            item.modality = modality;
            item.question_index = *asked;
            item.truth = truth;
            items.push_back(std::move(item));
            built = true;
        }
        if (built) {
            misses = 0;
        } else if (++misses >= sources.size()) {
            throw DataError(fmt::format("built only {} of {} QA items from {} eligible clips: no clip yields a '{}' item",
                                        items.size(), n_items, sources.size(), truth ? "yes" : "no"));
        }
    }
    return items;
}

std::size_t pick_uniform(const std::vector<std::size_t>& xs, SplitMix64& rng) { return xs[rng.below(xs.size())]; }

}  // namespace

QaMetrics QaMetrics::from_counts(const ConfusionCounts& c) noexcept {
    QaMetrics m;
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    m.accuracy = ratio(c.tp + c.tn, c.total());
    m.pa = m.recall;
    m.hr = ratio(c.tn, c.tn + c.fp);
    return m;
}

TokenSeq qa_prompt_suffix(const QaItem& item, const EventVocab& vocab) {
    return {item.modality == QaModality::audio ? vocab.event_token(item.question_index)
                                               : vocab.object_token(item.question_index)};
}

std::vector<QaItem> build_audio_halluc_qa(const World& world, std::span<const Clip> shard, const TierMap& tiers,
                                          std::size_t n_items, std::size_t n_frames, std::uint64_t seed) {
    const EventVocab& vocab = world.vocab();
    return build_qa(world, shard, tiers, n_items, n_frames, seed, QaModality::audio,
                    [&vocab](const Clip& a, const Clip& b, bool truth, SplitMix64& rng) -> std::optional<std::size_t> {
                        if (truth) {
                            return pick_uniform(b.audio_events, rng);
                        }
                        std::vector<std::size_t> tempting;
                        for (const std::size_t e : expected_events(a, vocab)) {
                            if (!contains(b.audio_events, e)) {
                                tempting.push_back(e);
                            }
                        }
                        if (tempting.empty()) {
                            return std::nullopt;
                        }
                        return pick_uniform(tempting, rng);
                    });
}

std::vector<QaItem> build_video_halluc_qa(const World& world, std::span<const Clip> shard, const TierMap& tiers,
                                          std::size_t n_items, std::size_t n_frames, std::uint64_t seed) {
    const EventVocab& vocab = world.vocab();
    return build_qa(world, shard, tiers, n_items, n_frames, seed, QaModality::video,
                    [&vocab](const Clip& a, const Clip& b, bool truth, SplitMix64& rng) -> std::optional<std::size_t> {
                        if (truth) {
                            return pick_uniform(a.visual_events, rng);
                        }
                        std::vector<std::size_t> tempting;
                        for (std::size_t o = 0; o < vocab.object_count(); ++o) {
                            if (!contains(a.visual_events, o) && contains(b.audio_events, vocab.co_map[o])) {
                                tempting.push_back(o);
                            }
                        }
                        if (tempting.empty()) {
                            return std::nullopt;
                        }
                        return pick_uniform(tempting, rng);
                    });
}

ConfusionCounts count_predictions(std::span<const QaPrediction> predictions) noexcept {
    ConfusionCounts c;
    for (const QaPrediction& p : predictions) {
        if (p.truth) {
            ++(p.predicted_yes ? c.tp : c.fn);
        } else {
            ++(p.predicted_yes ? c.fp : c.tn);
        }
    }
    return c;
}

QaResult score_qa(const ModelParams& model, const World& world, std::span<const QaItem> items, std::size_t threads) {
    QaResult result;
    result.predictions.resize(items.size());
    auto score_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const QaItem& item = items[i];
            const Context ctx = world.resolve(item.ctx, qa_prompt_suffix(item, world.vocab()));
            const YesNoScore s = yes_no_score(model, ctx);
            result.predictions[i] = {item.id, item.truth, s.predicts_yes(), s.logp_yes, s.logp_no};
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(items.size(), 1));
    if (n_threads == 1) {
        score_range(0, items.size());
    } else {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(n_threads);
        const std::size_t chunk = (items.size() + n_threads - 1) / n_threads;
        for (std::size_t t = 0; t < n_threads; ++t) {
            const std::size_t begin = std::min(items.size(), t * chunk);
            const std::size_t end = std::min(items.size(), begin + chunk);
            workers.emplace_back([&, t, begin, end] {
                try {
                    score_range(begin, end);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& w : workers) {
            w.join();
        }
        for (const auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }
    result.counts = count_predictions(result.predictions);
    result.metrics = QaMetrics::from_counts(result.counts);
    return result;
}

// ------------------------------------------------------------------ captions

namespace {

constexpr std::size_t kMaxNgram = 4;
constexpr double kCiderSigma = 6.0;

using Ngram = std::vector<TokenId>;
using NgramCounts = std::map<Ngram, double>;

std::array<NgramCounts, kMaxNgram> count_ngrams(const TokenSeq& s) {
    std::array<NgramCounts, kMaxNgram> out;
    for (std::size_t n = 1; n <= kMaxNgram; ++n) {
        for (std::size_t i = 0; i + n <= s.size(); ++i) {
            out[n - 1][Ngram(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n))] +=
                1.0;
        }
    }
    return out;
}

struct TfIdf {
    std::array<NgramCounts, kMaxNgram> weight;
    std::array<double, kMaxNgram> norm{};
};

TfIdf tf_idf(const TokenSeq& s, const std::map<Ngram, std::size_t>& df, double log_n) {
    TfIdf out;
    out.weight = count_ngrams(s);
    for (std::size_t n = 0; n < kMaxNgram; ++n) {
        double sq = 0.0;
        for (auto& [gram, w] : out.weight[n]) {
            const auto it = df.find(gram);
            const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
            w *= log_n - std::log(std::max(1.0, d));
            sq += w * w;
        }
        out.norm[n] = std::sqrt(sq);
    }
    return out;
}

}  // namespace

double cider(std::span<const TokenSeq> candidates, std::span<const TokenSeq> references,
             std::span<const TokenSeq> corpus_refs) {
    if (candidates.size() != references.size()) {
        throw InputError(fmt::format("cider: {} candidates but {} references", candidates.size(), references.size()));
    }
    if (candidates.empty()) {
        return 0.0;
    }
    if (corpus_refs.empty()) {
        throw InputError("cider: IDF corpus is empty");
    }
    std::map<Ngram, std::size_t> df;
    for (const TokenSeq& r : corpus_refs) {
        for (const auto& grams : count_ngrams(r)) {
            for (const auto& [gram, count] : grams) {
                ++df[gram];
            }
        }
    }
    const double log_n = std::log(static_cast<double>(corpus_refs.size()));
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].empty()) {
            continue;
        }
        const TfIdf c = tf_idf(candidates[i], df, log_n);
        const TfIdf r = tf_idf(references[i], df, log_n);
        const double delta = static_cast<double>(candidates[i].size()) - static_cast<double>(references[i].size());
        const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
        double item = 0.0;
        for (std::size_t n = 0; n < kMaxNgram; ++n) {
            if (c.norm[n] == 0.0 || r.norm[n] == 0.0) {
                continue;
            }
            double dot = 0.0;
            for (const auto& [gram, wc] : c.weight[n]) {
                const auto it = r.weight[n].find(gram);
                if (it != r.weight[n].end()) {
                    dot += std::min(wc, it->second) * it->second;
                }
            }
            item += penalty * dot / (c.norm[n] * r.norm[n]);
        }
        total += 10.0 * item / static_cast<double>(kMaxNgram);
    }
    return total / static_cast<double>(candidates.size());
}

double meteor_lite(const TokenSeq& candidate, const TokenSeq& reference) {
    std::vector<bool> used(reference.size(), false);
    std::vector<std::ptrdiff_t> align(candidate.size(), -1);
    std::size_t matches = 0;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        for (std::size_t j = 0; j < reference.size(); ++j) {
            if (!used[j] && reference[j] == candidate[i]) {
                used[j] = true;
                align[i] = static_cast<std::ptrdiff_t>(j);
                ++matches;
                break;
            }
        }
    }
    if (matches == 0) {
        return 0.0;
    }
    std::size_t chunks = 0;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        if (align[i] < 0) {
            continue;
        }
        const bool continues = i > 0 && align[i - 1] >= 0 && align[i] == align[i - 1] + 1;
        if (!continues) {
            ++chunks;
        }
    }
    const double m = static_cast<double>(matches);
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(reference.size());
    const double f = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / m;
    return f * (1.0 - 0.5 * frag * frag * frag);
}

TokenSeq framed_caption(const TokenSeq& caption) {
    TokenSeq out;
    out.reserve(caption.size() + 1);
    out.push_back(tok::BOS);
    out.insert(out.end(), caption.begin(), caption.end());
    return out;
}

std::string_view to_string(CaptionSplit s) noexcept {
    switch (s) {
        case CaptionSplit::audio_original: return "audio_original";
        case CaptionSplit::audio_swap: return "audio_swap";
        case CaptionSplit::video_original: return "video_original";
        case CaptionSplit::video_swap: return "video_swap";
    }
    return "?";
}

std::vector<CaptionCase> build_caption_cases(const World& world, std::span<const Clip> shard,
                                             const CaptionTable& captions, std::size_t n_clips,
                                             std::size_t n_frames) {
    std::vector<const Clip*> ordered;
    for (const Clip& c : shard) {
        ordered.push_back(&c);
    }
    std::sort(ordered.begin(), ordered.end(), [](const Clip* x, const Clip* y) { return x->id < y->id; });

    std::vector<CaptionCase> cases;
    std::size_t done = 0;
    for (const Clip* a : ordered) {
        if (done == n_clips) {
            break;
        }
        const Clip* best = nullptr;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (const Clip* b : ordered) {
            if (b == a || b->audio_events == a->audio_events) {
                continue;
            }
            const double sim = av_similarity(*a, *b, world.vocab());
            if (sim > best_sim) {
                best_sim = sim;
                best = b;
            }
        }
        if (best == nullptr) {
            continue;
        }
        const CaptionBundle& own = captions.at(a->id);
        const CaptionBundle& other = captions.at(best->id);
        cases.push_back({CaptionSplit::audio_original, {a->id, a->id, n_frames, tok::PROMPT_AUD, NoiseTag::clean},
                         a->id, own.y_aud});
        cases.push_back({CaptionSplit::audio_swap, {a->id, best->id, n_frames, tok::PROMPT_AUD, NoiseTag::clean},
                         best->id, other.y_aud});
        cases.push_back({CaptionSplit::video_original, {a->id, a->id, n_frames, tok::PROMPT_VIS, NoiseTag::clean},
                         a->id, own.y_vis});
        cases.push_back({CaptionSplit::video_swap, {a->id, best->id, n_frames, tok::PROMPT_VIS, NoiseTag::clean},
                         a->id, own.y_vis});
        ++done;
    }
    return cases;
}

std::array<CaptionScores, 4> captioning_eval(const Captioner& captioner, const World& world,
                                             std::span<const CaptionCase> cases) {
    std::array<CaptionScores, 4> out{};
    for (const CaptionSplit split : kAllCaptionSplits) {
        std::vector<TokenSeq> candidates;
        std::vector<TokenSeq> references;
        for (const CaptionCase& c : cases) {
            if (c.split != split) {
                continue;
            }
            candidates.push_back(framed_caption(captioner(world.resolve(c.ctx))));
            references.push_back(framed_caption(c.reference));
        }
        CaptionScores& s = out[static_cast<std::size_t>(split)];
        if (candidates.empty()) {
            continue;
        }
        double meteor_sum = 0.0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            meteor_sum += meteor_lite(candidates[i], references[i]);
        }
        s.meteor = meteor_sum / static_cast<double>(candidates.size());
        s.cider = cider(candidates, references, references);
    }
    return out;
}

std::array<CaptionScores, 4> captioning_eval(const ModelParams& model, const World& world,
                                             std::span<const CaptionCase> cases) {
    return captioning_eval([&model](const Context& ctx) { return greedy_decode(model, ctx, model.config.max_len); },
                           world, cases);
}

// ------------------------------------------------------------------ sweeps

std::vector<SweepPoint> dominance_sweep(const ModelParams& model, const World& world, std::span<const QaItem> items,
                                        std::span<const std::size_t> frames_list, std::size_t threads) {
    std::vector<SweepPoint> out;
    for (const std::size_t n : frames_list) {
        std::vector<QaItem> at_n(items.begin(), items.end());
        for (QaItem& item : at_n) {
            item.ctx.n_frames = n;
        }
        out.push_back({n, score_qa(model, world, at_n, threads).metrics.accuracy});
    }
    return out;
}

PrefSatisfaction pref_satisfaction(const ModelParams& policy, const ModelParams& reference, const World& world,
                                   std::span<const PreferencePair> pairs, double beta) {
    PrefSatisfaction out;
    std::array<std::size_t, 4> positive{};
    for (const PreferencePair& pair : pairs) {
        const auto k = static_cast<std::size_t>(pair.kind);
        ++out.count[k];
        if (dpo_margin(policy, reference, pair, world, beta) > 0.0) {
            ++positive[k];
        }
    }
    for (std::size_t k = 0; k < 4; ++k) {
        out.rate[k] = out.count[k] == 0 ? std::numeric_limits<double>::quiet_NaN() : ratio(positive[k], out.count[k]);
    }
    return out;
}

// ------------------------------------------------------------------ report

void EvalConfig::validate() const {
    if (n_frames < 1 || n_frames > kMaxFrames) {
        throw ConfigError(fmt::format("eval n_frames must lie in [1, {}]", kMaxFrames));
    }
    for (const std::size_t n : frames_list) {
        if (n < 1 || n > kMaxFrames) {
            throw ConfigError(fmt::format("sweep frame count {} out of range [1, {}]", n, kMaxFrames));
        }
    }
    if (threads < 1) {
        throw ConfigError("eval threads must be >= 1");
    }
}

EvalReport evaluate(const ModelParams& model, const World& world, std::span<const Clip> shard,
                    const CaptionTable& captions, const TierMap& tiers, const EvalConfig& cfg,
                    const ModelParams* reference, std::span<const PreferencePair> held_out_pairs, double beta) {
    cfg.validate();
    EvalReport report;
    const auto audio_items =
        build_audio_halluc_qa(world, shard, tiers, cfg.n_qa, cfg.n_frames, derive_seed(cfg.seed, "audio-qa"));
    const auto video_items =
        build_video_halluc_qa(world, shard, tiers, cfg.n_qa, cfg.n_frames, derive_seed(cfg.seed, "video-qa"));
    report.qa = score_qa(model, world, audio_items, cfg.threads);
    report.video_qa = score_qa(model, world, video_items, cfg.threads);
    const auto cases = build_caption_cases(world, shard, captions, cfg.n_caption_clips, cfg.n_frames);
    report.captioning = captioning_eval(model, world, cases);
    report.dominance = dominance_sweep(model, world, audio_items, cfg.frames_list, cfg.threads);
    if (reference != nullptr && !held_out_pairs.empty()) {
        report.pref = pref_satisfaction(model, *reference, world, held_out_pairs, beta);
    }
    return report;
}

}  // namespace acpo
