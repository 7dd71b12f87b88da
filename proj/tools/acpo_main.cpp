#include <CLI11.hpp>
#include <fmt/format.h>

#include <functional>

#include "acpo/commands.hpp"
#include "acpo/errors.hpp"

namespace {

int fail(acpo::ExitCode code, std::string_view what) {
    fmt::print(stderr, "acpo: {}\n", what);
    return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-contrastive preference optimization on a synthetic audio-visual world"};
    app.require_subcommand(1);

    acpo::CommandOptions opts;
    std::uint64_t seed = 0;
    long steps = 0;
    std::function<void(const acpo::CommandOptions&)> action;

    auto add = [&](const char* name, const char* help, void (*fn)(const acpo::CommandOptions&)) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opts.config_path, "Config file (section.key = value)")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Master seed, overrides the config");
        sub->add_option("--out", opts.out_dir, "Run directory")->capture_default_str();
        sub->add_flag("--force", opts.force, "Overwrite existing outputs");
        sub->callback([&, fn] { action = fn; });
        return sub;
    };
    add("gen", "Generate the corpus, captions and vocab table", acpo::cmd_gen);
    add("curate", "Tier audio swaps and build preference pairs", acpo::cmd_curate);
    CLI::App* train = add("train", "Pretrain the backbone or run a preference phase", acpo::cmd_train);
    train->add_option("--phase", opts.phase, "pretrain, acpo, sft, dpo or omnidpo")->capture_default_str();
    train->add_option("--steps", steps, "Override the phase's total steps");
    train->add_option("--checkpoint", opts.checkpoint, "Starting checkpoint for preference phases");
    CLI::App* eval = add("eval", "Evaluate a checkpoint on the held-out shard", acpo::cmd_eval);
    eval->add_option("--checkpoint", opts.checkpoint, "Checkpoint to evaluate (default <out>/acpo.ckpt)");
    eval->add_option("--reference", opts.reference, "Reference for preference satisfaction");
    CLI::App* ablate = add("ablate", "Train and evaluate the ablation grid", acpo::cmd_ablate);
    ablate->add_option("--checkpoint", opts.checkpoint, "Pretrained checkpoint (default <out>/pretrain.ckpt)");
    CLI::App* sweep = add("sweep", "Audio QA accuracy against frame count", acpo::cmd_sweep);
    sweep->add_option("--checkpoint", opts.checkpoint, "Checkpoint to sweep (default <out>/acpo.ckpt)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(acpo::ExitCode::usage);
    }
    for (CLI::App* sub : app.get_subcommands()) {
        if (sub->count("--seed") > 0) {
            opts.seed = seed;
        }
        if (sub->get_name() == "train" && sub->count("--steps") > 0) {
            opts.steps = steps;
        }
    }

    try {
        action(opts);
    } catch (const acpo::ConfigError& e) {
        return fail(acpo::ExitCode::usage, e.what());
    } catch (const acpo::NumericalAbort& e) {
        return fail(acpo::ExitCode::numerical, fmt::format("{} (step {})", e.what(), e.step));
    } catch (const acpo::DataError& e) {
        return fail(acpo::ExitCode::data, e.what());
    } catch (const acpo::InputError& e) {
        return fail(acpo::ExitCode::data, e.what());
    } catch (const std::exception& e) {
        return fail(acpo::ExitCode::data, e.what());
    }
    return 0;
}
