#include "acpo/config.hpp"

#include <charconv>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "acpo/errors.hpp"
#include "acpo/rng.hpp"

namespace acpo {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    while (!s.empty()) {
        const auto comma = s.find(',');
        out.push_back(trim(s.substr(0, comma)));
        if (comma == std::string_view::npos) {
            break;
        }
        s.remove_prefix(comma + 1);
    }
    return out;
}

template <typename T>
T parse_number(std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ConfigError(fmt::format("'{}' is not a valid number", v));
    }
    return out;
}

bool parse_bool(std::string_view v) {
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ConfigError(fmt::format("'{}' is not a boolean (true/false)", v));
}

Tier parse_tier(std::string_view v) {
    const auto t = tier_from_string(v);
    if (!t) {
        throw ConfigError(fmt::format("'{}' is not a tier (low/high/none)", v));
    }
    return *t;
}

std::vector<std::size_t> parse_size_list(std::string_view v) {
    std::vector<std::size_t> out;
    for (const auto item : split_list(v)) {
        out.push_back(parse_number<std::size_t>(item));
    }
    return out;
}

std::vector<std::string> parse_string_list(std::string_view v) {
    std::vector<std::string> out;
    for (const auto item : split_list(v)) {
        if (item.empty()) {
            throw ConfigError("empty list entry");
        }
        out.emplace_back(item);
    }
    return out;
}

std::string join(const std::vector<std::size_t>& xs) { return fmt::format("{}", fmt::join(xs, ",")); }
std::string join(const std::vector<std::string>& xs) { return fmt::format("{}", fmt::join(xs, ",")); }

struct Field {
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

// Builds a field for a member reached through `access`.
template <typename T, typename Access>
Field make_field(Access access) {
    Field f;
    f.set = [access](RunConfig& c, std::string_view v) {
        T& slot = access(c);
        if constexpr (std::is_same_v<T, bool>) {
            slot = parse_bool(v);
        } else if constexpr (std::is_same_v<T, Tier>) {
            slot = parse_tier(v);
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            slot = parse_size_list(v);
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            slot = parse_string_list(v);
        } else {
            slot = parse_number<T>(v);
        }
    };
    f.get = [access](const RunConfig& c) {
        const T& slot = access(const_cast<RunConfig&>(c));
        if constexpr (std::is_same_v<T, bool>) {
            return std::string(slot ? "true" : "false");
        } else if constexpr (std::is_same_v<T, Tier>) {
            return std::string(to_string(slot));
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>> ||
                             std::is_same_v<T, std::vector<std::string>>) {
            return join(slot);
        } else {
            return fmt::format("{}", slot);
        }
    };
    return f;
}

#define ACPO_FIELD(key, type, expr) \
    { key, make_field<type>([](RunConfig& c) -> type& { return expr; }) }

// Ordered so that render_config lists keys section by section.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        ACPO_FIELD("seed", std::uint64_t, c.seed),
        ACPO_FIELD("world.n_clips", std::size_t, c.world.n_clips),
        ACPO_FIELD("world.p_co", double, c.world.p_co),
        ACPO_FIELD("world.noise_sigma", double, c.world.noise_sigma),
        ACPO_FIELD("world.corrupt_sigma", double, c.world.corrupt_sigma),
        ACPO_FIELD("world.n_frames", std::size_t, c.world.n_frames),
        ACPO_FIELD("world.d_embed", std::size_t, c.world.d_embed),
        ACPO_FIELD("world.holdout_fraction", double, c.world.holdout_fraction),
        ACPO_FIELD("model.d_audio", std::size_t, c.model.d_audio),
        ACPO_FIELD("model.d_video", std::size_t, c.model.d_video),
        ACPO_FIELD("model.d_model", std::size_t, c.model.d_model),
        ACPO_FIELD("model.vocab_size", std::size_t, c.model.vocab_size),
        ACPO_FIELD("model.max_len", std::size_t, c.model.max_len),
        ACPO_FIELD("pretrain.lr", double, c.pretrain.optim.lr),
        ACPO_FIELD("pretrain.warmup_steps", long, c.pretrain.optim.warmup_steps),
        ACPO_FIELD("pretrain.total_steps", long, c.pretrain.optim.total_steps),
        ACPO_FIELD("pretrain.batch_size", std::size_t, c.pretrain.optim.batch_size),
        ACPO_FIELD("pretrain.weight_decay", double, c.pretrain.optim.weight_decay),
        ACPO_FIELD("pretrain.grad_clip", double, c.pretrain.optim.grad_clip),
        ACPO_FIELD("pretrain.p_audio_drop", double, c.pretrain.p_audio_drop),
        ACPO_FIELD("pretrain.qa_fraction", double, c.pretrain.qa_fraction),
        ACPO_FIELD("pretrain.frame_choices", std::vector<std::size_t>, c.pretrain.frame_choices),
        ACPO_FIELD("pretrain.unimodal_captions", bool, c.pretrain.unimodal_captions),
        ACPO_FIELD("pretrain.zero_init_head", bool, c.pretrain.zero_init_head),
        ACPO_FIELD("train.beta", double, c.train.beta),
        ACPO_FIELD("train.lr", double, c.train.lr),
        ACPO_FIELD("train.warmup_steps", long, c.train.warmup_steps),
        ACPO_FIELD("train.total_steps", long, c.train.total_steps),
        ACPO_FIELD("train.batch_size", std::size_t, c.train.batch_size),
        ACPO_FIELD("train.weight_decay", double, c.train.weight_decay),
        ACPO_FIELD("train.adam_beta1", double, c.train.adam_beta1),
        ACPO_FIELD("train.adam_beta2", double, c.train.adam_beta2),
        ACPO_FIELD("train.adam_eps", double, c.train.adam_eps),
        ACPO_FIELD("train.grad_clip", double, c.train.grad_clip),
        ACPO_FIELD("mix.audio_contrastive", double, c.mix.audio_contrastive),
        ACPO_FIELD("mix.attribution_share", double, c.mix.attribution_share),
        ACPO_FIELD("mix.noise_share", double, c.mix.noise_share),
        ACPO_FIELD("tiers.low_quantile", double, c.tiers.low_quantile),
        ACPO_FIELD("tiers.high_quantile", double, c.tiers.high_quantile),
        ACPO_FIELD("tiers.candidate_pool", std::size_t, c.tiers.candidate_pool),
        ACPO_FIELD("pairs.attribution_tier", Tier, c.pairs.attribution_tier),
        ACPO_FIELD("pairs.sensitivity_tier", Tier, c.pairs.sensitivity_tier),
        ACPO_FIELD("eval.n_qa", std::size_t, c.eval.n_qa),
        ACPO_FIELD("eval.n_caption_clips", std::size_t, c.eval.n_caption_clips),
        ACPO_FIELD("eval.n_frames", std::size_t, c.eval.n_frames),
        ACPO_FIELD("eval.frames_list", std::vector<std::size_t>, c.eval.frames_list),
        ACPO_FIELD("eval.threads", std::size_t, c.eval.threads),
        ACPO_FIELD("ablate.variants", std::vector<std::string>, c.ablate_variants),
        ACPO_FIELD("ablate.tiers", std::vector<std::string>, c.ablate_tiers),
    };
    return table;
}

#undef ACPO_FIELD

const Field* find_field(std::string_view key) {
    for (const auto& [name, field] : fields()) {
        if (name == key) {
            return &field;
        }
    }
    return nullptr;
}

}  // namespace

void WorldConfig::validate() const {
    if (n_clips < 8) {
        throw ConfigError("world.n_clips must be >= 8");
    }
    if (!(p_co >= 0.0 && p_co <= 1.0)) {
        throw ConfigError("world.p_co must lie in [0, 1]");
    }
    if (!(noise_sigma >= 0.0) || !(corrupt_sigma >= 0.0)) {
        throw ConfigError("world noise levels must be >= 0");
    }
    if (n_frames < 1 || n_frames > kMaxFrames) {
        throw ConfigError(fmt::format("world.n_frames must lie in [1, {}]", kMaxFrames));
    }
    if (d_embed < 1) {
        throw ConfigError("world.d_embed must be >= 1");
    }
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw ConfigError("world.holdout_fraction must lie in (0, 1)");
    }
}

std::string AblationCell::name() const {
    return fmt::format("{}@{}/{}", variant, to_string(attribution_tier), to_string(sensitivity_tier));
}

std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) noexcept { return derive_seed(master, stage); }

void RunConfig::derive_seeds() {
    model.seed = stage_seed(seed, "model");
    pretrain.optim.seed = stage_seed(seed, "pretrain");
    train.seed = stage_seed(seed, "train");
    eval.seed = stage_seed(seed, "eval");
}

void RunConfig::validate() const {
    world.validate();
    model.validate();
    pretrain.validate();
    train.validate();
    mix.validate();
    tiers.validate();
    eval.validate();
    if (world.d_embed != model.d_audio || world.d_embed != model.d_video) {
        throw ConfigError(fmt::format("world.d_embed ({}) must equal model.d_audio and model.d_video ({}, {})",
                                      world.d_embed, model.d_audio, model.d_video));
    }
    if (pairs.sensitivity_tier == Tier::none) {
        throw ConfigError("pairs.sensitivity_tier must be low or high");
    }
    (void)ablation_grid();
}

std::vector<AblationCell> RunConfig::ablation_grid() const {
    std::vector<AblationCell> cells;
    for (const std::string& tiers_spec : ablate_tiers) {
        const auto slash = tiers_spec.find('/');
        if (slash == std::string::npos) {
            throw ConfigError(fmt::format("ablate.tiers entry '{}' must look like low/high", tiers_spec));
        }
        const Tier attr = parse_tier(std::string_view(tiers_spec).substr(0, slash));
        const Tier sens = parse_tier(std::string_view(tiers_spec).substr(slash + 1));
        if (sens == Tier::none) {
            throw ConfigError("sensitivity pairs need a swap tier (low or high)");
        }
        for (const std::string& v : ablate_variants) {
            (void)mix_for_variant(mix, v);
            cells.push_back({v, attr, sens});
        }
    }
    return cells;
}

constexpr std::string_view kConfigHeader = "# format=acpo.config version=1";

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::map<std::string, std::size_t, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (line.starts_with("# format=") && trim(line) != kConfigHeader) {
            throw ConfigError(fmt::format("config line {}: unsupported format line '{}'", line_no, trim(line)));
        }
        const auto hash = line.find('#');
        if (hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(fmt::format("config line {}: expected key = value", line_no));
        }
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        if (key == "train.preset") {
            if (value != "large_model") {
                throw ConfigError(fmt::format("config line {}: unknown train.preset '{}'", line_no, value));
            }
            cfg.train.lr = TrainConfig::large_model_preset().lr;
            continue;
        }
        const Field* field = find_field(key);
        if (field == nullptr) {
            throw ConfigError(fmt::format("config line {}: unknown key '{}'", line_no, key));
        }
        if (const auto it = seen.find(key); it != seen.end()) {
            throw ConfigError(fmt::format("config line {}: '{}' already set on line {}", line_no, key, it->second));
        }
        seen.emplace(std::string(key), line_no);
        try {
            field->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("config line {} ({}): {}", line_no, key, e.what()));
        }
    }
    cfg.derive_seeds();
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError(fmt::format("cannot read config file {}", path));
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string render_config(const RunConfig& cfg) {
    std::string out = fmt::format("{}\n", kConfigHeader);
    for (const auto& [name, field] : fields()) {
        out += fmt::format("{} = {}\n", name, field.get(cfg));
    }
    return out;
}

MixConfig mix_for_variant(const MixConfig& base, std::string_view variant) {
    MixConfig mix = base;
    if (variant == "full") {
        return mix;
    }
    if (variant == "no_attribution") {
        mix.attribution_share = 0.0;
        return mix;
    }
    if (variant == "no_sensitivity") {
        mix.attribution_share = 1.0;
        return mix;
    }
    throw ConfigError(fmt::format("unknown ablation variant '{}' (full, no_attribution, no_sensitivity)", variant));
}

}  // namespace acpo
