#pragma once

// Subcommands of the acpo tool. Each reads its inputs from and writes its
// outputs to the run directory; stages communicate only through files.
//
//   gen     corpus.jsonl captions.jsonl vocab.tsv config.txt
//   curate  pairs.jsonl heldout_pairs.jsonl tiers.csv
//   train   <phase>.ckpt <phase>_log.csv
//   eval    eval_<name>.csv eval_<name>_summary.txt eval_<name>_predictions.csv
//   ablate  ablation.csv
//   sweep   dominance_<name>.csv

#include <cstdint>
#include <optional>
#include <string>

#include "acpo/config.hpp"
#include "acpo/eval_harness.hpp"

namespace acpo {

struct CommandOptions {
    std::string config_path;  // empty: built-in defaults
    std::optional<std::uint64_t> seed;
    std::string out_dir = "run";
    bool force = false;
    std::string phase = "acpo";
    std::optional<long> steps;
    // Model to evaluate or to start preference training from. Defaults to a
    // checkpoint in the run directory.
    std::string checkpoint;
    // Reference for preference satisfaction; defaults to pretrain.ckpt.
    std::string reference;
};

RunConfig resolve_config(const CommandOptions& opts);

void cmd_gen(const CommandOptions& opts);
void cmd_curate(const CommandOptions& opts);
void cmd_train(const CommandOptions& opts);
void cmd_eval(const CommandOptions& opts);
void cmd_ablate(const CommandOptions& opts);
void cmd_sweep(const CommandOptions& opts);

// A format line, then flat metric=value lines with six decimals.
std::string render_summary(const EvalReport& report);
std::string render_report_csv(const EvalReport& report);
std::string render_predictions(const EvalReport& report);

}  // namespace acpo
