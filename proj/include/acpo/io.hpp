#pragma once

// Artifact formats. Text artifacts are line-delimited JSON records after a
// JSON header line naming the format and version. Checkpoints are binary:
// an "ACPO1" magic line, the model config, named blocks of little-endian
// doubles with shape headers, and a trailing SHA-256 digest of everything
// before it.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "acpo/eval_harness.hpp"
#include "acpo/pair_forge.hpp"
#include "acpo/synth_world.hpp"
#include "acpo/toy_avlm.hpp"
#include "acpo/trainer.hpp"

namespace acpo {

inline constexpr int kFormatVersion = 1;

struct CorpusHeader {
    std::uint64_t vocab_seed = 0;
    std::size_t d_embed = 16;
    std::size_t n_clips = 0;
};

void write_corpus(std::ostream& out, const CorpusHeader& header, std::span<const Clip> clips);
// Returns the clips and fills `header`. Throws DataError on malformed input.
std::vector<Clip> read_corpus(std::istream& in, CorpusHeader& header);

void write_captions(std::ostream& out, const CaptionTable& captions);
CaptionTable read_captions(std::istream& in);

// Tab-separated token id -> display name table.
void write_vocab_table(std::ostream& out, const EventVocab& vocab, std::size_t vocab_size);

void write_pairs(std::ostream& out, std::span<const PreferencePair> pairs);
std::vector<PreferencePair> read_pairs(std::istream& in);

void write_checkpoint(std::ostream& out, const ModelParams& params);
// Verifies the digest and every block shape; throws DataError on mismatch.
ModelParams read_checkpoint(std::istream& in);
// Hex SHA-256 of a serialized checkpoint.
std::string checkpoint_digest(const ModelParams& params);

void write_train_log(std::ostream& out, std::span<const LogRow> log);

std::string sha256_hex(std::string_view bytes);

// File helpers. write_file refuses to replace an existing file unless
// `force`; the refusal is a ConfigError.
void write_file(const std::string& path, std::string_view content, bool force);
std::string read_file(const std::string& path);

}  // namespace acpo
