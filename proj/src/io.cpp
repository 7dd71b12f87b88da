#include "acpo/io.hpp"

#include <bit>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <istream>
#include <openssl/evp.h>
#include <ostream>
#include <sstream>

#include "acpo/errors.hpp"
#include "json.hpp"

namespace acpo {

namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "ACPO1\n";
constexpr std::size_t kDigestBytes = 32;

void write_header(std::ostream& out, std::string_view format, json extra = json::object()) {
    extra["format"] = format;
    extra["version"] = kFormatVersion;
    out << extra.dump() << '\n';
}

json parse_line(const std::string& line, std::size_t line_no) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw DataError(fmt::format("line {}: malformed record: {}", line_no, e.what()));
    }
}

json read_header(std::istream& in, std::string_view format) {
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError(fmt::format("empty {} file", format));
    }
    const json h = parse_line(line, 1);
    if (!h.is_object() || h.value("format", "") != format) {
        throw DataError(fmt::format("not a {} file", format));
    }
    if (h.value("version", -1) != kFormatVersion) {
        throw DataError(fmt::format("unsupported {} version {}", format, h.value("version", -1)));
    }
    return h;
}

// Calls `fn(record, line_no)` for every non-empty record line.
template <typename Fn>
void for_each_record(std::istream& in, Fn fn) {
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const json rec = parse_line(line, line_no);
        try {
            fn(rec, line_no);
        } catch (const json::exception& e) {
            throw DataError(fmt::format("line {}: {}", line_no, e.what()));
        }
    }
}

json spec_to_json(const ContextSpec& s) {
    return {{"video", s.video_clip_id},
            {"audio", s.audio_clip_id},
            {"n_frames", s.n_frames},
            {"prompt", s.prompt_head},
            {"noise", to_string(s.noise_tag)}};
}

ContextSpec spec_from_json(const json& j) {
    ContextSpec s;
    s.video_clip_id = j.at("video").get<std::string>();
    s.audio_clip_id = j.at("audio").get<std::string>();
    s.n_frames = j.at("n_frames").get<std::size_t>();
    s.prompt_head = j.at("prompt").get<TokenId>();
    const auto tag = noise_tag_from_string(j.at("noise").get<std::string>());
    if (!tag) {
        throw DataError("unknown noise tag");
    }
    s.noise_tag = *tag;
    return s;
}

// Little-endian primitive writers and readers.
template <typename T>
void put(std::string& buf, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf.push_back(static_cast<char>(u & 0xFF));
        u = static_cast<U>(u >> 8);
    }
}

void put_double(std::string& buf, double v) { put(buf, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        using U = std::make_unsigned_t<T>;
        U u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u = static_cast<U>(u | (static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i)));
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    double get_double() { return std::bit_cast<double>(get<std::uint64_t>()); }

    std::string_view bytes(std::size_t n) {
        need(n);
        const auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw DataError("checkpoint is truncated");
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string sha256_raw(std::string_view bytes) {
    std::string digest(kDigestBytes, '\0');
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), reinterpret_cast<unsigned char*>(digest.data()), &len, EVP_sha256(),
                   nullptr) != 1 ||
        len != kDigestBytes) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    return digest;
}

std::string serialize_checkpoint(const ModelParams& params) {
    std::string buf(kMagic);
    put<std::uint32_t>(buf, kFormatVersion);
    const ModelConfig& c = params.config;
    for (const std::uint64_t v : {std::uint64_t{c.d_audio}, std::uint64_t{c.d_video}, std::uint64_t{c.d_model},
                                  std::uint64_t{c.vocab_size}, std::uint64_t{c.max_len}, c.seed}) {
        put(buf, v);
    }
    put<std::uint32_t>(buf, kBlockCount);
    for (const Block b : kAllBlocks) {
        const std::string_view name = block_name(b);
        const Tensor& t = params[b];
        put<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
        buf.append(name);
        put<std::uint64_t>(buf, t.rows());
        put<std::uint64_t>(buf, t.cols());
        put<std::uint8_t>(buf, params.is_trainable(b) ? 1 : 0);
        for (const double v : t.values()) {
            put_double(buf, v);
        }
    }
    buf += sha256_raw(buf);
    return buf;
}

std::string to_hex(std::string_view bytes) {
    std::string out;
    for (const char c : bytes) {
        out += fmt::format("{:02x}", static_cast<unsigned char>(c));
    }
    return out;
}

}  // namespace

void write_corpus(std::ostream& out, const CorpusHeader& header, std::span<const Clip> clips) {
    write_header(out, "acpo.corpus",
                 {{"vocab_seed", header.vocab_seed}, {"d_embed", header.d_embed}, {"n_clips", clips.size()}});
    for (const Clip& c : clips) {
        out << json{{"id", c.id},
                    {"visual_events", c.visual_events},
                    {"audio_events", c.audio_events},
                    {"clip_seed", c.clip_seed}}
                   .dump()
            << '\n';
    }
}

std::vector<Clip> read_corpus(std::istream& in, CorpusHeader& header) {
    const json h = read_header(in, "acpo.corpus");
    header.vocab_seed = h.at("vocab_seed").get<std::uint64_t>();
    header.d_embed = h.at("d_embed").get<std::size_t>();
    header.n_clips = h.at("n_clips").get<std::size_t>();
    std::vector<Clip> clips;
    for_each_record(in, [&](const json& r, std::size_t) {
        Clip c;
        c.id = r.at("id").get<std::string>();
        c.visual_events = r.at("visual_events").get<std::vector<std::size_t>>();
        c.audio_events = r.at("audio_events").get<std::vector<std::size_t>>();
        c.clip_seed = r.at("clip_seed").get<std::uint64_t>();
        clips.push_back(std::move(c));
    });
    if (clips.size() != header.n_clips) {
        throw DataError(fmt::format("corpus header promises {} clips but {} were read", header.n_clips, clips.size()));
    }
    return clips;
}

void write_captions(std::ostream& out, const CaptionTable& captions) {
    write_header(out, "acpo.captions");
    for (const auto& [id, c] : captions) {
        out << json{{"id", id}, {"y_av", c.y_av}, {"y_vis", c.y_vis}, {"y_aud", c.y_aud}}.dump() << '\n';
    }
}

CaptionTable read_captions(std::istream& in) {
    read_header(in, "acpo.captions");
    CaptionTable table;
    for_each_record(in, [&](const json& r, std::size_t line_no) {
        CaptionBundle b;
        b.y_av = r.at("y_av").get<TokenSeq>();
        b.y_vis = r.at("y_vis").get<TokenSeq>();
        b.y_aud = r.at("y_aud").get<TokenSeq>();
        if (!table.emplace(r.at("id").get<std::string>(), std::move(b)).second) {
            throw DataError(fmt::format("line {}: duplicate caption id", line_no));
        }
    });
    return table;
}

void write_vocab_table(std::ostream& out, const EventVocab& vocab, std::size_t vocab_size) {
    out << "# format=acpo.vocab version=" << kFormatVersion << '\n';
    out << "id\tname\n";
    for (TokenId t = 0; t < vocab_size; ++t) {
        out << t << '\t' << vocab.token_name(t) << '\n';
    }
}

void write_pairs(std::ostream& out, std::span<const PreferencePair> pairs) {
    write_header(out, "acpo.pairs", {{"n_pairs", pairs.size()}});
    for (const PreferencePair& p : pairs) {
        out << json{{"kind", to_string(p.kind)},
                    {"tier", to_string(p.tier)},
                    {"preferred", {{"ctx", spec_to_json(p.preferred_ctx)}, {"y", p.preferred_y}}},
                    {"dispreferred", {{"ctx", spec_to_json(p.dispreferred_ctx)}, {"y", p.dispreferred_y}}}}
                   .dump()
            << '\n';
    }
}

std::vector<PreferencePair> read_pairs(std::istream& in) {
    const json h = read_header(in, "acpo.pairs");
    std::vector<PreferencePair> pairs;
    for_each_record(in, [&](const json& r, std::size_t line_no) {
        PreferencePair p;
        const auto kind = pair_kind_from_string(r.at("kind").get<std::string>());
        const auto tier = tier_from_string(r.at("tier").get<std::string>());
        if (!kind || !tier) {
            throw DataError(fmt::format("line {}: unknown pair kind or tier", line_no));
        }
        p.kind = *kind;
        p.tier = *tier;
        p.preferred_ctx = spec_from_json(r.at("preferred").at("ctx"));
        p.preferred_y = r.at("preferred").at("y").get<TokenSeq>();
        p.dispreferred_ctx = spec_from_json(r.at("dispreferred").at("ctx"));
        p.dispreferred_y = r.at("dispreferred").at("y").get<TokenSeq>();
        check_pair_shape(p);
        pairs.push_back(std::move(p));
    });
    if (pairs.size() != h.at("n_pairs").get<std::size_t>()) {
        throw DataError("pair file is truncated");
    }
    return pairs;
}

void write_checkpoint(std::ostream& out, const ModelParams& params) {
    params.validate();
    const std::string bytes = serialize_checkpoint(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelParams read_checkpoint(std::istream& in) {
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string data = buf.str();
    if (data.size() < kMagic.size() + kDigestBytes || std::string_view(data).substr(0, kMagic.size()) != kMagic) {
        throw DataError("not an ACPO1 checkpoint");
    }
    const std::string_view body = std::string_view(data).substr(0, data.size() - kDigestBytes);
    if (sha256_raw(body) != std::string_view(data).substr(body.size())) {
        throw DataError("checkpoint digest mismatch: file is corrupt or was modified");
    }
    Reader r(body.substr(kMagic.size()));
    if (const auto v = r.get<std::uint32_t>(); v != static_cast<std::uint32_t>(kFormatVersion)) {
        throw DataError(fmt::format("unsupported checkpoint version {}", v));
    }
    ModelConfig cfg;
    cfg.d_audio = r.get<std::uint64_t>();
    cfg.d_video = r.get<std::uint64_t>();
    cfg.d_model = r.get<std::uint64_t>();
    cfg.vocab_size = r.get<std::uint64_t>();
    cfg.max_len = r.get<std::uint64_t>();
    cfg.seed = r.get<std::uint64_t>();
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw DataError(fmt::format("checkpoint config is invalid: {}", e.what()));
    }
    ModelParams params = ModelParams::zeros(cfg);
    if (r.get<std::uint32_t>() != kBlockCount) {
        throw DataError("checkpoint has the wrong number of blocks");
    }
    for (const Block expected : kAllBlocks) {
        const auto name_len = r.get<std::uint16_t>();
        const std::string_view name = r.bytes(name_len);
        if (name != block_name(expected)) {
            throw DataError(fmt::format("checkpoint block '{}' found where '{}' was expected", name,
                                        block_name(expected)));
        }
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        const auto [want_rows, want_cols] = block_shape(cfg, expected);
        if (rows != want_rows || cols != want_cols) {
            throw DataError(fmt::format("checkpoint block {} is {}x{}, expected {}x{}", name, rows, cols, want_rows,
                                        want_cols));
        }
        params.trainable[static_cast<std::size_t>(expected)] = r.get<std::uint8_t>() != 0;
        std::vector<double> values(rows * cols);
        for (double& v : values) {
            v = r.get_double();
        }
        params[expected] = Tensor(rows, cols, std::move(values));
    }
    if (r.remaining() != 0) {
        throw DataError("checkpoint has trailing bytes");
    }
    return params;
}

std::string checkpoint_digest(const ModelParams& params) {
    const std::string bytes = serialize_checkpoint(params);
    return to_hex(std::string_view(bytes).substr(bytes.size() - kDigestBytes));
}

void write_train_log(std::ostream& out, std::span<const LogRow> log) {
    out << "# format=acpo.trainlog version=" << kFormatVersion << '\n';
    out << "step,lr,loss,mean_margin\n";
    for (const LogRow& row : log) {
        out << fmt::format("{},{:.9e},{:.9e},{:.9e}\n", row.step, row.lr, row.loss, row.mean_margin);
    }
}

std::string sha256_hex(std::string_view bytes) { return to_hex(sha256_raw(bytes)); }

void write_file(const std::string& path, std::string_view content, bool force) {
    if (!force && std::filesystem::exists(path)) {
        throw ConfigError(fmt::format("{} already exists (use --force to overwrite)", path));
    }
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::filesystem::create_directories(parent);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw DataError(fmt::format("failed to write {}", path));
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot read {}", path));
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace acpo
