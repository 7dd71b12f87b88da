#pragma once

// Toy audio-visual language model.
//
// The context sequence is [P_v f_1, ..., P_v f_n, W_a g + b_a, E[x_1], ...,
// E[x_k]] for n video frames f_i, one audio feature vector g and k prompt
// tokens. It is mean-pooled and squashed into a conditioning vector
// h = tanh(W_c pool + b_c). The decoder is a bigram model conditioned on h:
// logits_t = U tanh(W_h [h; E[y_{t-1}]] + b_h), y_0 = BOS.
//
// Because of the mean pool the single audio token carries weight
// 1 / (n + 1 + k): adding frames dilutes the audio evidence.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <string_view>
#include <vector>

#include "acpo/grad_core.hpp"

namespace acpo {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

// Reserved token ids.
namespace tok {
inline constexpr TokenId BOS = 0;
inline constexpr TokenId EOS = 1;
inline constexpr TokenId YES = 2;
inline constexpr TokenId NO = 3;
inline constexpr TokenId Q_HEAR = 4;
inline constexpr TokenId Q_SEE = 5;
inline constexpr TokenId PROMPT_AUD = 6;
inline constexpr TokenId PROMPT_VIS = 7;
inline constexpr TokenId PROMPT_AV = 8;
inline constexpr TokenId kReservedCount = 9;
}  // namespace tok

struct ModelConfig {
    std::size_t d_audio = 16;
    std::size_t d_video = 16;
    std::size_t d_model = 32;
    std::size_t vocab_size = 64;
    std::size_t max_len = 24;
    std::uint64_t seed = 0x5EEDu;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

enum class Block : std::size_t { P_v, W_a, b_a, E, W_c, b_c, W_h, b_h, U };

inline constexpr std::size_t kBlockCount = 9;
inline constexpr std::array<Block, kBlockCount> kAllBlocks = {Block::P_v, Block::W_a, Block::b_a, Block::E, Block::W_c,
                                                              Block::b_c, Block::W_h, Block::b_h, Block::U};
// The audio projector: the only blocks updated by preference training.
inline constexpr std::array<Block, 2> kProjectorBlocks = {Block::W_a, Block::b_a};

std::string_view block_name(Block b) noexcept;
std::optional<Block> block_from_name(std::string_view name) noexcept;
// Expected (rows, cols) of a block under a config.
std::pair<std::size_t, std::size_t> block_shape(const ModelConfig& cfg, Block b) noexcept;

struct ModelParams {
    ModelConfig config;
    std::array<Tensor, kBlockCount> blocks;
    std::array<bool, kBlockCount> trainable{};

    // Entries i.i.d. uniform in [-0.1, 0.1] from a SplitMix64 stream seeded by
    // config.seed; all flags false.
    static ModelParams init(const ModelConfig& cfg);
    static ModelParams zeros(const ModelConfig& cfg);

    Tensor& operator[](Block b) { return blocks[static_cast<std::size_t>(b)]; }
    const Tensor& operator[](Block b) const { return blocks[static_cast<std::size_t>(b)]; }
    bool is_trainable(Block b) const { return trainable[static_cast<std::size_t>(b)]; }

    // Marks exactly `bs` trainable. P_v can never be made trainable.
    void set_trainable(std::span<const Block> bs);
    std::vector<Block> trainable_blocks() const;

    void validate() const;
    // Same config and identical block values; trainable flags are ignored.
    bool bitwise_equal(const ModelParams& other) const;
};

struct Context {
    std::vector<std::vector<double>> video_tokens;  // one d_video vector per frame
    std::vector<double> audio_vector;               // d_audio
    TokenSeq prompt_tokens;

    void validate(const ModelConfig& cfg) const;
};

inline constexpr std::size_t kMaxFrames = 32;

// Parameters as seen by one forward pass; trainable blocks become tracked
// leaves when bound to a tape.
struct BoundParams {
    const ModelConfig* config = nullptr;
    std::array<Tensor, kBlockCount> blocks;
    std::array<std::optional<std::size_t>, kBlockCount> leaf_ids{};

    const Tensor& operator[](Block b) const { return blocks[static_cast<std::size_t>(b)]; }
};

// tape == nullptr yields an untracked view.
BoundParams bind(const ModelParams& params, Tape* tape);

Tensor encode_context(const BoundParams& params, const Context& ctx);

// Log-probabilities of y[begin..end) given conditioning h, summed left to right.
// Step t conditions on y[t-1] (BOS for t == 0).
Tensor sequence_logprob_from(const BoundParams& params, const Tensor& h, const TokenSeq& y, std::size_t begin,
                             std::size_t end);

// Full autoregressive log p(y | ctx). y must be nonempty and end with EOS.
Tensor sequence_logprob(const BoundParams& params, const Context& ctx, const TokenSeq& y);
double sequence_logprob(const ModelParams& params, const Context& ctx, const TokenSeq& y);

// Argmax decoding with BOS masked and ties broken toward the lowest id. The
// returned sequence includes the EOS when one is emitted.
TokenSeq greedy_decode(const ModelParams& params, const Context& ctx, std::size_t max_len);

struct YesNoScore {
    double logp_yes = 0.0;
    double logp_no = 0.0;
    // Ties count as NO.
    bool predicts_yes() const noexcept { return logp_yes > logp_no; }
};

// First-step log-probabilities of YES and NO. The prompt must start with
// Q_HEAR or Q_SEE.
YesNoScore yes_no_score(const ModelParams& params, const Context& ctx);

// Deep copy with every block frozen.
ModelParams snapshot_reference(const ModelParams& params);

// Mean-pool weight of the single audio token.
constexpr double audio_pool_weight(std::size_t n_frames, std::size_t prompt_len) noexcept {
    return 1.0 / static_cast<double>(n_frames + 1 + prompt_len);
}

}  // namespace acpo
