#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>

#include "acpo/errors.hpp"
#include "acpo/eval_harness.hpp"
#include "acpo/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace acpo;
using namespace acpo::testing;

namespace {

TokenSeq random_tokens(SplitMix64& rng, std::size_t max_len, TokenId alphabet) {
    TokenSeq s(rng.below(max_len + 1));
    for (TokenId& t : s) {
        t = static_cast<TokenId>(rng.below(alphabet));
    }
    return s;
}

struct HeldWorld {
    World world = small_world(160, 0.9, 77);
    CaptionTable captions = build_caption_table(world.clips(), world.vocab());
    TierMap tiers = tier_swaps(world.clips(), world.vocab(), TierConfig{}, 5);
};

const HeldWorld& held() {
    static const HeldWorld h;
    return h;
}

}  // namespace

TEST_CASE("qa metric arithmetic") {
    const QaMetrics m = QaMetrics::from_counts({5, 1, 2, 4});
    CHECK(m.precision == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(5.0 / 7.0).epsilon(1e-12));
    CHECK(m.f1 == doctest::Approx(0.7692307692).epsilon(1e-9));
    CHECK(m.accuracy == 0.75);
    CHECK(m.pa == m.recall);
    CHECK(m.hr == doctest::Approx(0.8).epsilon(1e-12));

    const QaMetrics none = QaMetrics::from_counts({0, 0, 10, 10});
    CHECK(none.accuracy == 0.5);
    CHECK(none.hr == 1.0);
    CHECK(none.pa == 0.0);
    CHECK(none.f1 == 0.0);
    CHECK(none.precision == 0.0);

    const QaMetrics empty = QaMetrics::from_counts({});
    CHECK(empty.accuracy == 0.0);
    CHECK(empty.f1 == 0.0);
}

TEST_CASE("confusion counts equal a recount of the predictions") {
    SplitMix64 rng(3);
    for (int round = 0; round < 100; ++round) {
        std::vector<QaPrediction> preds(rng.below(40));
        for (auto& p : preds) {
            p.truth = rng.bernoulli(0.5);
            p.predicted_yes = rng.bernoulli(0.4);
        }
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (const auto& p : preds) {
            if (p.truth) {
                (p.predicted_yes ? tp : fn) += 1;
            } else {
                (p.predicted_yes ? fp : tn) += 1;
            }
        }
        CHECK(count_predictions(preds) == ConfusionCounts{tp, fp, fn, tn});
    }
}

TEST_CASE("score_qa matches direct scoring of every item") {
    const HeldWorld& h = held();
    const auto items = build_audio_halluc_qa(h.world, h.world.clips(), h.tiers, 100, 4, 9);
    ModelConfig mc = small_model_config(1);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ModelParams model = random_params(mc, seed, 0.6);
        const QaResult r = score_qa(model, h.world, items);
        REQUIRE(r.predictions.size() == items.size());
        ConfusionCounts c;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const TokenSeq suffix = qa_prompt_suffix(items[i], h.world.vocab());
            const YesNoScore s = yes_no_score(model, h.world.resolve(items[i].ctx, suffix));
            const bool yes = s.logp_yes > s.logp_no;
            CHECK(r.predictions[i].id == items[i].id);
            CHECK(r.predictions[i].predicted_yes == yes);
            CHECK(r.predictions[i].logp_yes == s.logp_yes);
            if (items[i].truth) {
                (yes ? c.tp : c.fn) += 1;
            } else {
                (yes ? c.fp : c.tn) += 1;
            }
        }
        CHECK(r.counts == c);
        const double acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(items.size());
        CHECK(std::abs(r.metrics.accuracy - acc) <= 1e-12);

        const QaResult threaded = score_qa(model, h.world, items, 3);
        CHECK(threaded.counts == r.counts);
        for (std::size_t i = 0; i < items.size(); ++i) {
            CHECK(threaded.predictions[i].logp_yes == r.predictions[i].logp_yes);
        }
    }
}

TEST_CASE("cider matches an independent implementation") {
    SplitMix64 rng(11);
    for (int round = 0; round < 100; ++round) {
        std::vector<TokenSeq> corpus;
        const std::size_t docs = 2 + rng.below(8);
        for (std::size_t d = 0; d < docs; ++d) {
            corpus.push_back(random_tokens(rng, 9, 6));
        }
        std::vector<TokenSeq> cands;
        std::vector<TokenSeq> refs;
        const std::size_t items = 1 + rng.below(5);
        for (std::size_t i = 0; i < items; ++i) {
            refs.push_back(corpus[rng.below(corpus.size())]);
            cands.push_back(rng.bernoulli(0.2) ? refs.back() : random_tokens(rng, 9, 6));
        }
        const double fast = cider(cands, refs, corpus);
        CHECK(std::abs(fast - brute_cider(cands, refs, corpus)) <= 1e-9);
        CHECK(fast >= 0.0);
        CHECK(fast <= 10.0 + 1e-12);
        CHECK(cider(cands, refs, corpus) == fast);
    }
}

TEST_CASE("cider anchors") {
    const std::vector<TokenSeq> corpus = {{1, 2, 3, 4, 5}, {6, 7, 8, 9}, {2, 9, 9, 4, 1}};
    const std::vector<TokenSeq> same = {corpus[0]};
    CHECK(cider(same, same, corpus) == doctest::Approx(10.0).epsilon(1e-12));
    const std::vector<TokenSeq> disjoint = {{20, 21, 22, 23}};
    CHECK(cider(disjoint, same, corpus) == 0.0);
    const std::vector<TokenSeq> empty = {{}};
    CHECK(cider(empty, same, corpus) == 0.0);
    CHECK_THROWS_AS((void)cider(same, disjoint, std::vector<TokenSeq>{}), InputError);
    const std::vector<TokenSeq> two = {corpus[0], corpus[1]};
    CHECK_THROWS_AS((void)cider(same, two, corpus), InputError);
}

TEST_CASE("meteor_lite matches brute-force alignment") {
    SplitMix64 rng(12);
    for (int round = 0; round < 100; ++round) {
        const TokenSeq c = random_tokens(rng, 7, 4);
        const TokenSeq r = random_tokens(rng, 7, 4);
        const double fast = meteor_lite(c, r);
        CHECK(std::abs(fast - brute_meteor(c, r)) <= 1e-9);
        CHECK(fast >= 0.0);
        CHECK(fast <= 1.0);
    }
}

TEST_CASE("meteor_lite anchors") {
    const TokenSeq five = {3, 4, 5, 6, 7};
    CHECK(meteor_lite(five, five) == doctest::Approx(1.0 - 0.5 / 125.0).epsilon(1e-12));
    CHECK(meteor_lite(five, five) == doctest::Approx(0.996).epsilon(1e-12));
    CHECK(meteor_lite(five, {8, 9}) == 0.0);
    CHECK(meteor_lite({}, five) == 0.0);
    // One token matched twice over: the leftmost reference position wins,
    // keeping both matches in one chunk.
    CHECK(meteor_lite({1, 2}, {1, 2, 1, 2}) == doctest::Approx(10.0 * 1.0 * 0.5 / (0.5 + 9.0) * (1.0 - 0.5 / 8.0)));
}

TEST_CASE("audio hallucination QA items") {
    const HeldWorld& h = held();
    const EventVocab& v = h.world.vocab();
    const auto items = build_audio_halluc_qa(h.world, h.world.clips(), h.tiers, 101, 8, 4);
    REQUIRE(items.size() == 101);
    std::size_t yes = 0;
    std::set<std::string> ids;
    for (const QaItem& item : items) {
        CHECK(ids.insert(item.id).second);
        CHECK(item.modality == QaModality::audio);
        CHECK(item.ctx.prompt_head == tok::Q_HEAR);
        CHECK(item.ctx.n_frames == 8);
        CHECK_FALSE(item.ctx.aligned());
        const Clip& a = h.world.clip(item.ctx.video_clip_id);
        const Clip& b = h.world.clip(item.ctx.audio_clip_id);
        const bool heard = std::binary_search(b.audio_events.begin(), b.audio_events.end(), item.question_index);
        CHECK(item.truth == heard);
        if (!item.truth) {
            bool tempting = false;
            for (const std::size_t o : a.visual_events) {
                tempting |= v.co_map[o] == item.question_index;
            }
            CHECK(tempting);
        }
        yes += item.truth ? 1 : 0;
    }
    CHECK(std::abs(static_cast<double>(yes) - 50.5) <= 1.0);
    CHECK(build_audio_halluc_qa(h.world, h.world.clips(), h.tiers, 101, 8, 4) == items);

    const TierMap empty;
    CHECK_THROWS_AS((void)build_audio_halluc_qa(h.world, h.world.clips(), empty, 10, 8, 4), DataError);
}

TEST_CASE("video hallucination QA items") {
    const HeldWorld& h = held();
    const EventVocab& v = h.world.vocab();
    const auto items = build_video_halluc_qa(h.world, h.world.clips(), h.tiers, 80, 8, 4);
    REQUIRE(items.size() == 80);
    std::size_t yes = 0;
    for (const QaItem& item : items) {
        CHECK(item.modality == QaModality::video);
        CHECK(item.ctx.prompt_head == tok::Q_SEE);
        const Clip& a = h.world.clip(item.ctx.video_clip_id);
        const Clip& b = h.world.clip(item.ctx.audio_clip_id);
        const bool seen = std::binary_search(a.visual_events.begin(), a.visual_events.end(), item.question_index);
        CHECK(item.truth == seen);
        if (!item.truth) {
            CHECK(std::binary_search(b.audio_events.begin(), b.audio_events.end(), v.co_map[item.question_index]));
        }
        yes += item.truth ? 1 : 0;
    }
    CHECK(yes == 40);
}

TEST_CASE("caption cases") {
    const HeldWorld& h = held();
    const EventVocab& v = h.world.vocab();
    const auto cases = build_caption_cases(h.world, h.world.clips(), h.captions, 30, 8);
    REQUIRE(cases.size() == 120);
    for (const CaptionCase& c : cases) {
        const bool audio = c.split == CaptionSplit::audio_original || c.split == CaptionSplit::audio_swap;
        const bool swap = c.split == CaptionSplit::audio_swap || c.split == CaptionSplit::video_swap;
        CHECK(c.ctx.aligned() != swap);
        CHECK(c.ctx.prompt_head == (audio ? tok::PROMPT_AUD : tok::PROMPT_VIS));
        CHECK(c.reference_clip_id == (audio ? c.ctx.audio_clip_id : c.ctx.video_clip_id));
        const CaptionBundle& own = h.captions.at(c.reference_clip_id);
        CHECK(c.reference == (audio ? own.y_aud : own.y_vis));
        if (!audio) {
            for (const TokenId t : c.reference) {
                CHECK_FALSE(v.is_event_token(t));
            }
        }
        if (swap) {
            CHECK(h.world.clip(c.ctx.audio_clip_id).audio_events != h.world.clip(c.ctx.video_clip_id).audio_events);
        }
    }
    // The swap partner is the most similar eligible clip.
    const Clip& a = h.world.clip(cases[1].ctx.video_clip_id);
    const double chosen = av_similarity(a, h.world.clip(cases[1].ctx.audio_clip_id), v);
    for (const Clip& other : h.world.clips()) {
        if (other.id != a.id && other.audio_events != a.audio_events) {
            CHECK(av_similarity(a, other, v) <= chosen);
        }
    }
}

TEST_CASE("a captioner that emits the reference scores 10 on every split") {
    const HeldWorld& h = held();
    const auto cases = build_caption_cases(h.world, h.world.clips(), h.captions, 40, 4);
    // Lookup from resolved features back to the clip they came from.
    std::map<std::vector<double>, TokenSeq> by_audio;
    std::map<std::vector<double>, TokenSeq> by_video;
    for (const Clip& c : h.world.clips()) {
        const Context ctx = h.world.resolve({c.id, c.id, 4, tok::PROMPT_AV, NoiseTag::clean});
        by_audio[ctx.audio_vector] = h.captions.at(c.id).y_aud;
        by_video[ctx.video_tokens[0]] = h.captions.at(c.id).y_vis;
    }
    const Captioner oracle = [&](const Context& ctx) {
        return ctx.prompt_tokens.front() == tok::PROMPT_AUD ? by_audio.at(ctx.audio_vector)
                                                              : by_video.at(ctx.video_tokens[0]);
    };
    const auto scores = captioning_eval(oracle, h.world, cases);
    for (const CaptionSplit s : kAllCaptionSplits) {
        CHECK(scores[static_cast<std::size_t>(s)].cider == doctest::Approx(10.0).epsilon(1e-12));
        CHECK(scores[static_cast<std::size_t>(s)].meteor > 0.99);
    }
    const Captioner silent = [](const Context&) { return TokenSeq{tok::EOS}; };
    for (const auto& s : captioning_eval(silent, h.world, cases)) {
        CHECK(s.cider >= 0.0);
        CHECK(s.cider < 10.0);
    }
}

TEST_CASE("dominance sweep") {
    const HeldWorld& h = held();
    const auto items = build_audio_halluc_qa(h.world, h.world.clips(), h.tiers, 60, 8, 4);
    const std::vector<std::size_t> frames = {1, 2, 4, 8};
    ModelParams blind = random_params(small_model_config(2), 4, 0.6);
    blind[Block::P_v] = Tensor(blind[Block::P_v].rows(), blind[Block::P_v].cols());

    // P_v = 0 removes what the frames show; the frame count still dilutes the
    // mean pool, so the content check swaps the video clip instead.
    std::vector<QaItem> moved = items;
    for (std::size_t i = 0; i < moved.size(); ++i) {
        moved[i].ctx.video_clip_id = h.world.clips()[i].id;
    }
    const QaResult base = score_qa(blind, h.world, items);
    const QaResult shifted = score_qa(blind, h.world, moved);
    for (std::size_t i = 0; i < items.size(); ++i) {
        CHECK(base.predictions[i].logp_yes == doctest::Approx(shifted.predictions[i].logp_yes).epsilon(1e-12));
    }

    // A model whose encoder ignores the pool altogether gives a flat curve.
    ModelParams deaf = blind;
    deaf[Block::W_c] = Tensor(deaf[Block::W_c].rows(), deaf[Block::W_c].cols());
    const auto flat = dominance_sweep(deaf, h.world, items, frames);
    for (const SweepPoint& p : flat) {
        CHECK(p.accuracy == flat[0].accuracy);
    }

    const auto sweep = dominance_sweep(blind, h.world, items, frames);
    REQUIRE(sweep.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(sweep[i].n_frames == frames[i]);
        CHECK(sweep[i].accuracy >= 0.0);
        CHECK(sweep[i].accuracy <= 1.0);
    }
    CHECK(dominance_sweep(blind, h.world, items, frames, 2)[3].accuracy == sweep[3].accuracy);
    CHECK(sweep[3].accuracy == base.metrics.accuracy);
    std::vector<QaItem> single = items;
    for (QaItem& item : single) {
        item.ctx.n_frames = 1;
    }
    CHECK(sweep[0].accuracy == score_qa(blind, h.world, single).metrics.accuracy);
}

TEST_CASE("preference satisfaction") {
    const HeldWorld& h = held();
    const PairBuildConfig pb{4, 3, 0};
    const auto& clips = h.world.clips();
    std::vector<PreferencePair> pairs = build_attribution_pairs(clips, h.captions, h.tiers, Tier::low, pb);
    const auto sens = build_sensitivity_pairs(clips, h.captions, h.tiers, Tier::high, pb);
    pairs.insert(pairs.end(), sens.begin(), sens.end());
    const ModelParams policy = random_params(small_model_config(3), 8);
    const ModelParams ref = snapshot_reference(policy);
    const PrefSatisfaction same = pref_satisfaction(policy, ref, h.world, pairs, 0.1);
    CHECK(same.rate[0] == 0.0);
    CHECK(same.rate[1] == 0.0);
    CHECK(std::isnan(same.rate[2]));
    CHECK(std::isnan(same.rate[3]));
    CHECK(same.count[0] + same.count[1] == pairs.size());

    const ModelParams other = random_params(small_model_config(3), 9);
    const PrefSatisfaction diff = pref_satisfaction(other, ref, h.world, pairs, 0.1);
    std::size_t positive = 0;
    for (const auto& p : pairs) {
        positive += p.kind == PairKind::attribution && dpo_margin(other, ref, p, h.world, 0.1) > 0.0 ? 1 : 0;
    }
    CHECK(diff.rate[0] == doctest::Approx(static_cast<double>(positive) / static_cast<double>(diff.count[0])));
    CHECK(diff.rate[0] >= 0.0);
    CHECK(diff.rate[0] <= 1.0);
}
