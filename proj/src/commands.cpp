#include "acpo/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <map>
#include <sstream>

#include "acpo/errors.hpp"
#include "acpo/io.hpp"
#include "acpo/pipeline.hpp"

namespace acpo {

namespace {

namespace fs = std::filesystem;

std::string in_dir(const CommandOptions& opts, std::string_view name) {
    return (fs::path(opts.out_dir) / name).string();
}

Corpus load_corpus(const CommandOptions& opts) {
    std::istringstream corpus_in(read_file(in_dir(opts, "corpus.jsonl")));
    CorpusHeader header;
    std::vector<Clip> clips = read_corpus(corpus_in, header);
    std::istringstream captions_in(read_file(in_dir(opts, "captions.jsonl")));
    return corpus_from_parts(header, std::move(clips), read_captions(captions_in));
}

ModelParams load_checkpoint(const std::string& path) {
    std::istringstream in(read_file(path));
    try {
        return read_checkpoint(in);
    } catch (const DataError& e) {
        throw DataError(fmt::format("{}: {}", path, e.what()));
    }
}

ModelParams load_model_for(const CommandOptions& opts, const RunConfig& cfg, const std::string& path) {
    ModelParams params = load_checkpoint(path);
    if (!(params.config.d_audio == cfg.model.d_audio && params.config.d_video == cfg.model.d_video &&
          params.config.d_model == cfg.model.d_model && params.config.vocab_size == cfg.model.vocab_size)) {
        throw ConfigError(fmt::format("{} was trained with a different model config than {}", path,
                                      opts.config_path.empty() ? "the defaults" : opts.config_path));
    }
    return params;
}

std::vector<PreferencePair> load_pairs(const std::string& path) {
    std::istringstream in(read_file(path));
    return read_pairs(in);
}

PairPools pools_from(const std::vector<PreferencePair>& pairs) {
    PairPools pools;
    for (const PreferencePair& p : pairs) {
        pool_of(pools, p.kind).push_back(p);
    }
    return pools;
}

template <typename Writer, typename... Args>
std::string render(Writer writer, const Args&... args) {
    std::ostringstream out;
    writer(out, args...);
    return out.str();
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

std::string checkpoint_path(const CommandOptions& opts) {
    return opts.checkpoint.empty() ? in_dir(opts, "acpo.ckpt") : opts.checkpoint;
}

std::string num(double v) { return std::isnan(v) ? std::string("nan") : fmt::format("{:.6f}", v); }

std::string tier_report(const TierMap& train, const TierMap& eval) {
    std::string out = fmt::format("# format=acpo.tiers version={}\n", kFormatVersion);
    out += "shard,tier,cutoff,sample_size,clips,partners,skipped\n";
    for (const auto& [shard, map] : {std::pair<std::string_view, const TierMap*>{"train", &train}, {"eval", &eval}}) {
        for (const Tier tier : {Tier::low, Tier::high}) {
            std::size_t clips = 0;
            std::size_t partners = 0;
            for (const auto& [id, p] : map->partners) {
                const auto& list = tier == Tier::low ? p.low : p.high;
                clips += list.empty() ? 0 : 1;
                partners += list.size();
            }
            out += fmt::format("{},{},{:.9f},{},{},{},{}\n", shard, to_string(tier),
                               tier == Tier::low ? map->low_cutoff : map->high_cutoff, map->sample_size, clips,
                               partners, tier == Tier::low ? map->skipped_low : map->skipped_high);
        }
    }
    return out;
}

}  // namespace

RunConfig resolve_config(const CommandOptions& opts) {
    RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_config(opts.config_path);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.derive_seeds();
    }
    cfg.validate();
    return cfg;
}

void cmd_gen(const CommandOptions& opts) {
    const RunConfig cfg = resolve_config(opts);
    const Corpus corpus = generate_world(cfg);
    write_file(in_dir(opts, "corpus.jsonl"), render(write_corpus, corpus.header, std::span<const Clip>(corpus.clips)),
               opts.force);
    write_file(in_dir(opts, "captions.jsonl"), render(write_captions, corpus.captions), opts.force);
    write_file(in_dir(opts, "vocab.tsv"), render(write_vocab_table, corpus.vocab, cfg.model.vocab_size), opts.force);
    write_file(in_dir(opts, "config.txt"), render_config(cfg), opts.force);
}

void cmd_curate(const CommandOptions& opts) {
    const RunConfig cfg = resolve_config(opts);
    const Corpus corpus = load_corpus(opts);
    const World world = make_world(corpus, cfg);
    const Curation cur = curate(corpus, world, cfg);
    for (const PairKind k : {PairKind::attribution, PairKind::sensitivity}) {
        if (pool_of(cur.pools, k).empty()) {
            throw DataError(fmt::format("no {} pairs: the swap tiers are degenerate for this corpus", to_string(k)));
        }
    }
    if (cur.heldout.empty()) {
        throw DataError("no held-out pairs: the swap tiers are degenerate for the held-out shard");
    }
    std::vector<PreferencePair> all;
    for (const PairKind k : kAllPairKinds) {
        const auto& pool = pool_of(cur.pools, k);
        all.insert(all.end(), pool.begin(), pool.end());
    }
    write_file(in_dir(opts, "pairs.jsonl"), render(write_pairs, std::span<const PreferencePair>(all)), opts.force);
    write_file(in_dir(opts, "heldout_pairs.jsonl"), render(write_pairs, std::span<const PreferencePair>(cur.heldout)),
               opts.force);
    write_file(in_dir(opts, "tiers.csv"), tier_report(cur.train_tiers, cur.eval_tiers), opts.force);
}

void cmd_train(const CommandOptions& opts) {
    RunConfig cfg = resolve_config(opts);
    const auto phase = phase_from_string(opts.phase);
    if (!phase) {
        throw ConfigError(fmt::format("unknown phase '{}' (pretrain, acpo, sft, dpo, omnidpo)", opts.phase));
    }
    TrainConfig& optim = *phase == Phase::pretrain ? cfg.pretrain.optim : cfg.train;
    if (opts.steps) {
        if (*opts.steps < 0) {
            throw ConfigError("--steps must be >= 0");
        }
        optim.total_steps = *opts.steps;
        if (optim.warmup_steps >= optim.total_steps) {
            optim.warmup_steps = optim.total_steps / 10;
        }
    }
    const Corpus corpus = load_corpus(opts);
    const World world = make_world(corpus, cfg);
    TrainResult result;
    if (*phase == Phase::pretrain) {
        if (!opts.checkpoint.empty()) {
            throw ConfigError("the pretrain phase starts from a fresh model and takes no --checkpoint");
        }
        result = run_pretrain(corpus, world, cfg);
    } else {
        const std::string start = opts.checkpoint.empty() ? in_dir(opts, "pretrain.ckpt") : opts.checkpoint;
        const ModelParams pretrained = load_model_for(opts, cfg, start);
        const PairPools pools = pools_from(load_pairs(in_dir(opts, "pairs.jsonl")));
        result = run_preference(pretrained, pools, world, cfg, *phase, cfg.mix);
    }
    const std::string name(to_string(*phase));
    write_file(in_dir(opts, name + ".ckpt"), render(write_checkpoint, result.params), opts.force);
    write_file(in_dir(opts, name + "_log.csv"), render(write_train_log, std::span<const LogRow>(result.log)),
               opts.force);
}

std::string render_summary(const EvalReport& r) {
    std::string out = "# format=acpo.summary version=1\n";
    auto qa_lines = [&out](std::string_view prefix, const QaMetrics& m) {
        out += fmt::format("{}.precision={:.6f}\n{}.recall={:.6f}\n{}.f1={:.6f}\n", prefix, m.precision, prefix,
                           m.recall, prefix, m.f1);
        out += fmt::format("{}.accuracy={:.6f}\n{}.pa={:.6f}\n{}.hr={:.6f}\n", prefix, m.accuracy, prefix, m.pa,
                           prefix, m.hr);
    };
    qa_lines("qa", r.qa.metrics);
    qa_lines("video_qa", r.video_qa.metrics);
    for (const CaptionSplit s : kAllCaptionSplits) {
        const CaptionScores& c = r.captioning[static_cast<std::size_t>(s)];
        out += fmt::format("caption.{}.meteor={:.6f}\ncaption.{}.cider={:.6f}\n", to_string(s), c.meteor,
                           to_string(s), c.cider);
    }
    for (const SweepPoint& p : r.dominance) {
        out += fmt::format("dominance.frames_{}={:.6f}\n", p.n_frames, p.accuracy);
    }
    if (r.pref) {
        for (const PairKind k : kAllPairKinds) {
            const auto i = static_cast<std::size_t>(k);
            if (r.pref->count[i] > 0) {
                out += fmt::format("pref.{}={}\n", to_string(k), num(r.pref->rate[i]));
            }
        }
    }
    return out;
}

std::string render_report_csv(const EvalReport& r) {
    std::string out = fmt::format("# format=acpo.report version={}\n", kFormatVersion);
    out += "section,name,value,count\n";
    auto qa_rows = [&out](std::string_view section, const QaResult& q) {
        const QaMetrics& m = q.metrics;
        const std::size_t n = q.counts.total();
        for (const auto& [name, v] : {std::pair<std::string_view, double>{"precision", m.precision},
                                      {"recall", m.recall},
                                      {"f1", m.f1},
                                      {"accuracy", m.accuracy},
                                      {"pa", m.pa},
                                      {"hr", m.hr}}) {
            out += fmt::format("{},{},{},{}\n", section, name, num(v), n);
        }
        out += fmt::format("{},tp,{},{}\n{},fp,{},{}\n", section, q.counts.tp, n, section, q.counts.fp, n);
        out += fmt::format("{},fn,{},{}\n{},tn,{},{}\n", section, q.counts.fn, n, section, q.counts.tn, n);
    };
    qa_rows("qa", r.qa);
    qa_rows("video_qa", r.video_qa);
    for (const CaptionSplit s : kAllCaptionSplits) {
        const CaptionScores& c = r.captioning[static_cast<std::size_t>(s)];
        out += fmt::format("caption_{},meteor,{},\ncaption_{},cider,{},\n", to_string(s), num(c.meteor), to_string(s),
                           num(c.cider));
    }
    for (const SweepPoint& p : r.dominance) {
        out += fmt::format("dominance,{},{},\n", p.n_frames, num(p.accuracy));
    }
    if (r.pref) {
        for (const PairKind k : kAllPairKinds) {
            const auto i = static_cast<std::size_t>(k);
            out += fmt::format("pref_satisfaction,{},{},{}\n", to_string(k), num(r.pref->rate[i]), r.pref->count[i]);
        }
    }
    return out;
}

std::string render_predictions(const EvalReport& r) {
    std::string out = fmt::format("# format=acpo.predictions version={}\n", kFormatVersion);
    out += "set,id,truth,predicted_yes,logp_yes,logp_no\n";
    for (const auto& [set, q] : {std::pair<std::string_view, const QaResult*>{"audio", &r.qa}, {"video", &r.video_qa}}) {
        for (const QaPrediction& p : q->predictions) {
            out += fmt::format("{},{},{},{},{:.17g},{:.17g}\n", set, p.id, p.truth ? 1 : 0,
                               p.predicted_yes ? 1 : 0, p.logp_yes, p.logp_no);
        }
    }
    return out;
}

void cmd_eval(const CommandOptions& opts) {
    const RunConfig cfg = resolve_config(opts);
    const Corpus corpus = load_corpus(opts);
    const World world = make_world(corpus, cfg);
    const std::string path = checkpoint_path(opts);
    const ModelParams model = load_model_for(opts, cfg, path);

    std::optional<ModelParams> reference;
    const std::string ref_path = opts.reference.empty() ? in_dir(opts, "pretrain.ckpt") : opts.reference;
    if (!opts.reference.empty() || fs::exists(ref_path)) {
        reference = load_model_for(opts, cfg, ref_path);
    }
    std::vector<PreferencePair> heldout;
    if (reference) {
        heldout = load_pairs(in_dir(opts, "heldout_pairs.jsonl"));
    }
    const EvalReport report = run_eval(model, reference ? &*reference : nullptr, corpus, world,
                                       eval_tiers(corpus, cfg), heldout, cfg);
    const std::string stem = "eval_" + stem_of(path);
    write_file(in_dir(opts, stem + ".csv"), render_report_csv(report), opts.force);
    write_file(in_dir(opts, stem + "_summary.txt"), render_summary(report), opts.force);
    write_file(in_dir(opts, stem + "_predictions.csv"), render_predictions(report), opts.force);
}

void cmd_ablate(const CommandOptions& opts) {
    const RunConfig cfg = resolve_config(opts);
    const Corpus corpus = load_corpus(opts);
    const World world = make_world(corpus, cfg);
    const std::string start = opts.checkpoint.empty() ? in_dir(opts, "pretrain.ckpt") : opts.checkpoint;
    const ModelParams pretrained = load_model_for(opts, cfg, start);
    const ModelParams reference = snapshot_reference(pretrained);

    std::string out = fmt::format("# format=acpo.ablation version={}\n", kFormatVersion);
    out += "cell,variant,attribution_tier,sensitivity_tier,precision,recall,f1,accuracy,pa,hr,"
           "pref_attribution,pref_sensitivity,digest\n";
    std::map<std::pair<Tier, Tier>, Curation> curations;
    for (const AblationCell& cell : cfg.ablation_grid()) {
        const auto key = std::pair{cell.attribution_tier, cell.sensitivity_tier};
        auto it = curations.find(key);
        if (it == curations.end()) {
            it = curations.emplace(key, curate(corpus, world, cfg, key.first, key.second)).first;
        }
        const Curation& cur = it->second;
        const TrainResult trained =
            run_preference(pretrained, cur.pools, world, cfg, Phase::acpo, mix_for_variant(cfg.mix, cell.variant));
        const EvalReport r = run_eval(trained.params, &reference, corpus, world, cur.eval_tiers, cur.heldout, cfg);
        const QaMetrics& m = r.qa.metrics;
        out += fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{}\n", cell.name(),
                           cell.variant, to_string(cell.attribution_tier), to_string(cell.sensitivity_tier),
                           m.precision, m.recall, m.f1, m.accuracy, m.pa, m.hr,
                           num(r.pref->rate[static_cast<std::size_t>(PairKind::attribution)]),
                           num(r.pref->rate[static_cast<std::size_t>(PairKind::sensitivity)]),
                           checkpoint_digest(trained.params));
    }
    write_file(in_dir(opts, "ablation.csv"), out, opts.force);
}

void cmd_sweep(const CommandOptions& opts) {
    const RunConfig cfg = resolve_config(opts);
    const Corpus corpus = load_corpus(opts);
    const World world = make_world(corpus, cfg);
    const std::string path = checkpoint_path(opts);
    const ModelParams model = load_model_for(opts, cfg, path);
    const Split split = split_corpus(corpus.clips, cfg.world.holdout_fraction);
    const std::vector<QaItem> items = build_audio_halluc_qa(world, split.held, eval_tiers(corpus, cfg), cfg.eval.n_qa,
                                                            cfg.eval.n_frames, stage_seed(cfg.eval.seed, "audio-qa"));
    std::string out = fmt::format("# format=acpo.dominance version={}\n", kFormatVersion);
    out += "n_frames,accuracy\n";
    for (const SweepPoint& p : dominance_sweep(model, world, items, cfg.eval.frames_list, cfg.eval.threads)) {
        out += fmt::format("{},{:.6f}\n", p.n_frames, p.accuracy);
    }
    write_file(in_dir(opts, "dominance_" + stem_of(path) + ".csv"), out, opts.force);
}

}  // namespace acpo
