#pragma once

// SFT bias-pretraining of the toy backbone and DPO-style preference training
// of the audio projector against a frozen reference.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "acpo/pair_forge.hpp"
#include "acpo/toy_avlm.hpp"

namespace acpo {

enum class Phase { pretrain, acpo, sft_baseline, dpo_baseline, omnidpo_baseline };

// CLI spellings: pretrain, acpo, sft, dpo, omnidpo.
std::string_view to_string(Phase p) noexcept;
std::optional<Phase> phase_from_string(std::string_view s) noexcept;

struct TrainConfig {
    double beta = 0.1;
    double lr = 1e-2;
    long warmup_steps = 50;
    long total_steps = 625;
    std::size_t batch_size = 8;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // Global-norm gradient clipping; 0 disables it.
    double grad_clip = 0.0;
    std::uint64_t seed = 0;
    Phase phase = Phase::acpo;

    void validate() const;
    // The large-model learning rate; far too slow at toy scale.
    static TrainConfig large_model_preset();
};

using BlockGrads = std::map<Block, Tensor>;

struct OptimizerState {
    std::map<Block, Tensor> first_moment;
    std::map<Block, Tensor> second_moment;
    long step = 0;

    static OptimizerState for_params(const ModelParams& params);
};

// Gradients of the bound trainable blocks; blocks the loss does not reach get
// zeros.
BlockGrads collect_grads(const BoundParams& bound, const Gradients& grads);

// -log sigmoid(beta * ((pi_pos - ref_pos) - (pi_neg - ref_neg))).
Tensor dpo_loss_from_logprobs(const Tensor& policy_pos, const Tensor& policy_neg, double ref_pos, double ref_neg,
                              double beta);

struct DpoTerms {
    Tensor loss;
    double margin = 0.0;  // the sigmoid argument z
};

// Each side is scored under its own resolved context. Only the policy terms
// are differentiable.
DpoTerms dpo_loss(const BoundParams& policy, const ModelParams& reference, const PreferencePair& pair,
                  const World& world, double beta);

double dpo_margin(const ModelParams& policy, const ModelParams& reference, const PreferencePair& pair,
                  const World& world, double beta);

// Mean per-token negative log-likelihood.
Tensor sft_loss(const BoundParams& policy, const Context& ctx, const TokenSeq& y);

// Decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
void adamw_step(ModelParams& params, const BlockGrads& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg);

double cosine_warmup_lr(long step, const TrainConfig& cfg);

struct LogRow {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double mean_margin = 0.0;  // NaN for phases without a preference margin
};

struct TrainResult {
    ModelParams params;
    std::vector<LogRow> log;
};

struct PretrainConfig {
    TrainConfig optim;
    // Probability that an item's audio feature is zeroed while its target is
    // kept, teaching the backbone to guess sounds from the video.
    double p_audio_drop = 0.3;
    // Fraction of items that are yes/no questions rather than captions.
    double qa_fraction = 0.5;
    std::vector<std::size_t> frame_choices = {1, 2, 4, 8};
    // Also train audio-only and vision-only captions under their own prompts.
    bool unimodal_captions = true;
    bool zero_init_head = false;

    PretrainConfig();
    void validate() const;
};

// Trains every block except P_v on captions (joint, audio-only, vision-only
// prompts) and yes/no questions over aligned clips.
TrainResult pretrain_biased(const World& world, std::span<const Clip> train_clips, const CaptionTable& captions,
                            const ModelConfig& model_cfg, const PretrainConfig& cfg);

// Pair mix used by a preference phase, derived from the configured base mix.
MixConfig mix_for_phase(Phase phase, const MixConfig& base);

// Projector-only training from `checkpoint` against its frozen snapshot.
TrainResult train_acpo(const ModelParams& checkpoint, const PairPools& pools, const World& world,
                       const TrainConfig& cfg, const MixConfig& base_mix);

}  // namespace acpo
