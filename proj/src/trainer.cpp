#include "acpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numbers>

#include "acpo/errors.hpp"
#include "acpo/rng.hpp"

namespace acpo {

namespace {

constexpr std::array<Block, 8> kBackboneBlocks = {Block::W_a, Block::b_a, Block::E,   Block::W_c,
                                                  Block::b_c, Block::W_h, Block::b_h, Block::U};

void clip_grads(BlockGrads& grads, double max_norm) {
    if (max_norm <= 0.0) {
        return;
    }
    double sq = 0.0;
    for (const auto& [block, g] : grads) {
        for (const double v : g.values()) {
            sq += v * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) {
        return;
    }
    const double k = max_norm / norm;
    for (auto& [block, g] : grads) {
        for (double& v : g.mutable_values()) {
            v *= k;
        }
    }
}

void check_finite(double loss, long step) {
    if (!std::isfinite(loss)) {
        throw NumericalAbort(fmt::format("training diverged: non-finite loss at step {}", step), step);
    }
}

// One pretraining example: a model input and its target sequence.
struct SftItem {
    Context ctx;
    TokenSeq target;
};

SftItem sample_pretrain_item(const World& world, std::span<const Clip> clips, const CaptionTable& captions,
                             const PretrainConfig& cfg, SplitMix64& rng) {
    const EventVocab& vocab = world.vocab();
    const Clip& clip = clips[rng.below(clips.size())];
    const std::size_t n_frames = cfg.frame_choices[rng.below(cfg.frame_choices.size())];
    const bool drop_audio = rng.bernoulli(cfg.p_audio_drop);
    const bool is_question = rng.bernoulli(cfg.qa_fraction);

    ContextSpec spec{clip.id, clip.id, n_frames, tok::PROMPT_AV, NoiseTag::clean};
    SftItem item;
    TokenSeq suffix;
    if (is_question) {
        const bool about_sound = rng.bernoulli(0.5);
        const bool positive = rng.bernoulli(0.5);
        const auto& present = about_sound ? clip.audio_events : clip.visual_events;
        const std::size_t universe = about_sound ? vocab.event_count() : vocab.object_count();
        std::size_t asked;
        if (positive || present.size() == universe) {
            asked = present[rng.below(present.size())];
        } else {
            std::vector<std::size_t> absent;
            for (std::size_t i = 0; i < universe; ++i) {
                if (std::find(present.begin(), present.end(), i) == present.end()) {
                    absent.push_back(i);
                }
            }
            asked = absent[rng.below(absent.size())];
        }
        const bool truth = std::find(present.begin(), present.end(), asked) != present.end();
        spec.prompt_head = about_sound ? tok::Q_HEAR : tok::Q_SEE;
        suffix.push_back(about_sound ? vocab.event_token(asked) : vocab.object_token(asked));
        item.target = {truth ? tok::YES : tok::NO, tok::EOS};
    } else {
        const CaptionBundle& caps = captions.at(clip.id);
        switch (cfg.unimodal_captions ? rng.below(3) : 0) {
            case 0:
                spec.prompt_head = tok::PROMPT_AV;
                item.target = caps.y_av;
                break;
            case 1:
                spec.prompt_head = tok::PROMPT_AUD;
                item.target = caps.y_aud;
                break;
            default:
                spec.prompt_head = tok::PROMPT_VIS;
                item.target = caps.y_vis;
                break;
        }
    }
    item.ctx = world.resolve(spec, suffix);
    if (drop_audio) {
        std::fill(item.ctx.audio_vector.begin(), item.ctx.audio_vector.end(), 0.0);
    }
    return item;
}

}  // namespace

std::string_view to_string(Phase p) noexcept {
    switch (p) {
        case Phase::pretrain: return "pretrain";
        case Phase::acpo: return "acpo";
        case Phase::sft_baseline: return "sft";
        case Phase::dpo_baseline: return "dpo";
        case Phase::omnidpo_baseline: return "omnidpo";
    }
    return "?";
}

std::optional<Phase> phase_from_string(std::string_view s) noexcept {
    for (const Phase p :
         {Phase::pretrain, Phase::acpo, Phase::sft_baseline, Phase::dpo_baseline, Phase::omnidpo_baseline}) {
        if (to_string(p) == s) {
            return p;
        }
    }
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (!(beta > 0.0)) {
        throw ConfigError("beta must be > 0");
    }
    if (!(lr >= 0.0)) {
        throw ConfigError("lr must be >= 0");
    }
    if (total_steps < 0 || warmup_steps < 0) {
        throw ConfigError("step counts must be >= 0");
    }
    if (total_steps > 0 && warmup_steps >= total_steps) {
        throw ConfigError(fmt::format("warmup_steps ({}) must be < total_steps ({})", warmup_steps, total_steps));
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
}

TrainConfig TrainConfig::large_model_preset() {
    TrainConfig cfg;
    cfg.lr = 2e-5;
    return cfg;
}

OptimizerState OptimizerState::for_params(const ModelParams& params) {
    OptimizerState s;
    for (const Block b : params.trainable_blocks()) {
        const Tensor& p = params[b];
        s.first_moment.emplace(b, Tensor(p.rows(), p.cols()));
        s.second_moment.emplace(b, Tensor(p.rows(), p.cols()));
    }
    return s;
}

BlockGrads collect_grads(const BoundParams& bound, const Gradients& grads) {
    BlockGrads out;
    for (const Block b : kAllBlocks) {
        const auto& id = bound.leaf_ids[static_cast<std::size_t>(b)];
        if (!id) {
            continue;
        }
        const auto it = grads.find(*id);
        if (it != grads.end()) {
            out.emplace(b, it->second);
        } else {
            out.emplace(b, Tensor(bound[b].rows(), bound[b].cols()));
        }
    }
    return out;
}

Tensor dpo_loss_from_logprobs(const Tensor& policy_pos, const Tensor& policy_neg, double ref_pos, double ref_neg,
                              double beta) {
    const Tensor pos_ratio = sub(policy_pos, Tensor::scalar(ref_pos));
    const Tensor neg_ratio = sub(policy_neg, Tensor::scalar(ref_neg));
    const Tensor z = scale(sub(pos_ratio, neg_ratio), beta);
    return scale(log_sigmoid(z), -1.0);
}

DpoTerms dpo_loss(const BoundParams& policy, const ModelParams& reference, const PreferencePair& pair,
                  const World& world, double beta) {
    if (!reference.trainable_blocks().empty()) {
        throw std::logic_error("dpo_loss: reference model must be fully frozen");
    }
    const Context pos_ctx = world.resolve(pair.preferred_ctx);
    const Context neg_ctx = world.resolve(pair.dispreferred_ctx);
    const Tensor pi_pos = sequence_logprob(policy, pos_ctx, pair.preferred_y);
    const Tensor pi_neg = sequence_logprob(policy, neg_ctx, pair.dispreferred_y);
    const double ref_pos = sequence_logprob(reference, pos_ctx, pair.preferred_y);
    const double ref_neg = sequence_logprob(reference, neg_ctx, pair.dispreferred_y);
    DpoTerms out;
    out.margin = beta * ((pi_pos.item() - ref_pos) - (pi_neg.item() - ref_neg));
    out.loss = dpo_loss_from_logprobs(pi_pos, pi_neg, ref_pos, ref_neg, beta);
    return out;
}

double dpo_margin(const ModelParams& policy, const ModelParams& reference, const PreferencePair& pair,
                  const World& world, double beta) {
    const Context pos_ctx = world.resolve(pair.preferred_ctx);
    const Context neg_ctx = world.resolve(pair.dispreferred_ctx);
    const double pi_pos = sequence_logprob(policy, pos_ctx, pair.preferred_y);
    const double pi_neg = sequence_logprob(policy, neg_ctx, pair.dispreferred_y);
    const double ref_pos = sequence_logprob(reference, pos_ctx, pair.preferred_y);
    const double ref_neg = sequence_logprob(reference, neg_ctx, pair.dispreferred_y);
    return beta * ((pi_pos - ref_pos) - (pi_neg - ref_neg));
}

Tensor sft_loss(const BoundParams& policy, const Context& ctx, const TokenSeq& y) {
    const Tensor lp = sequence_logprob(policy, ctx, y);
    return scale(lp, -1.0 / static_cast<double>(y.size()));
}

void adamw_step(ModelParams& params, const BlockGrads& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg) {
    for (const auto& [block, g] : grads) {
        if (!params.is_trainable(block)) {
            throw std::logic_error(fmt::format("adamw_step: gradient supplied for frozen block {}", block_name(block)));
        }
        const Tensor& p = params[block];
        if (g.rows() != p.rows() || g.cols() != p.cols()) {
            throw std::logic_error(fmt::format("adamw_step: gradient shape {} does not match block {} {}",
                                               g.shape_str(), block_name(block), p.shape_str()));
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
    for (const auto& [block, g] : grads) {
        auto m_it = state.first_moment.find(block);
        if (m_it == state.first_moment.end()) {
            m_it = state.first_moment.emplace(block, Tensor(g.rows(), g.cols())).first;
            state.second_moment.emplace(block, Tensor(g.rows(), g.cols()));
        }
        auto m = m_it->second.mutable_values();
        auto v = state.second_moment.at(block).mutable_values();
        auto w = params[block].mutable_values();
        const auto gv = g.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * gv[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * gv[i] * gv[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            w[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * w[i]);
        }
    }
}

double cosine_warmup_lr(long step, const TrainConfig& cfg) {
    if (step < cfg.warmup_steps) {
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    const long span = cfg.total_steps - cfg.warmup_steps;
    if (span <= 0) {
        return 0.0;
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

PretrainConfig::PretrainConfig() {
    optim.phase = Phase::pretrain;
    optim.lr = 1e-2;
    optim.warmup_steps = 100;
    optim.total_steps = 5000;
    optim.batch_size = 16;
    optim.weight_decay = 0.0;
}

void PretrainConfig::validate() const {
    optim.validate();
    if (optim.phase != Phase::pretrain) {
        throw ConfigError("pretraining requires phase = pretrain");
    }
    if (!(p_audio_drop >= 0.0 && p_audio_drop <= 1.0) || !(qa_fraction >= 0.0 && qa_fraction <= 1.0)) {
        throw ConfigError("pretraining probabilities must lie in [0, 1]");
    }
    if (frame_choices.empty()) {
        throw ConfigError("pretraining needs at least one frame count");
    }
    for (const std::size_t n : frame_choices) {
        if (n < 1 || n > kMaxFrames) {
            throw ConfigError(fmt::format("frame count {} out of range [1, {}]", n, kMaxFrames));
        }
    }
}

TrainResult pretrain_biased(const World& world, std::span<const Clip> train_clips, const CaptionTable& captions,
                            const ModelConfig& model_cfg, const PretrainConfig& cfg) {
    cfg.validate();
    if (train_clips.empty()) {
        throw DataError("pretraining needs at least one clip");
    }
    if (model_cfg.vocab_size < world.vocab().min_vocab_size()) {
        throw ConfigError(fmt::format("vocab_size {} cannot hold the {} world tokens", model_cfg.vocab_size,
                                      world.vocab().min_vocab_size()));
    }
    TrainResult result{ModelParams::init(model_cfg), {}};
    ModelParams& params = result.params;
    if (cfg.zero_init_head) {
        params[Block::U] = Tensor(model_cfg.vocab_size, model_cfg.d_model);
    }
    params.set_trainable(kBackboneBlocks);
    OptimizerState state = OptimizerState::for_params(params);
    SplitMix64 rng(derive_seed(cfg.optim.seed, "pretrain-data"));

    for (long step = 0; step < cfg.optim.total_steps; ++step) {
        Tape tape;
        const BoundParams bound = bind(params, &tape);
        std::vector<Tensor> losses;
        losses.reserve(cfg.optim.batch_size);
        for (std::size_t i = 0; i < cfg.optim.batch_size; ++i) {
            const SftItem item = sample_pretrain_item(world, train_clips, captions, cfg, rng);
            losses.push_back(sft_loss(bound, item.ctx, item.target));
        }
        const Tensor loss = mean(losses);
        check_finite(loss.item(), step);
        BlockGrads grads = collect_grads(bound, tape.backward(loss));
        clip_grads(grads, cfg.optim.grad_clip);
        const double lr = cosine_warmup_lr(step, cfg.optim);
        adamw_step(params, grads, state, lr, cfg.optim);
        result.log.push_back({step, lr, loss.item(), std::numeric_limits<double>::quiet_NaN()});
    }
    params.trainable.fill(false);
    return result;
}

MixConfig mix_for_phase(Phase phase, const MixConfig& base) {
    MixConfig mix = base;
    switch (phase) {
        case Phase::acpo: break;
        case Phase::sft_baseline:
        case Phase::dpo_baseline:
            mix.audio_contrastive = 0.0;
            mix.noise_share = 0.0;
            break;
        case Phase::omnidpo_baseline: mix.audio_contrastive = 0.0; break;
        case Phase::pretrain: throw ConfigError("pretrain is not a preference phase");
    }
    return mix;
}

TrainResult train_acpo(const ModelParams& checkpoint, const PairPools& pools, const World& world,
                       const TrainConfig& cfg, const MixConfig& base_mix) {
    cfg.validate();
    if (cfg.phase == Phase::pretrain) {
        throw ConfigError("train_acpo cannot run the pretrain phase");
    }
    const MixConfig mix = mix_for_phase(cfg.phase, base_mix);
    TrainResult result{checkpoint, {}};
    if (cfg.total_steps == 0) {
        return result;
    }
    std::optional<BatchSampler> sampler;
    try {
        sampler.emplace(pools, mix, cfg.batch_size, derive_seed(cfg.seed, "batches"));
    } catch (const DataError& e) {
        throw ConfigError(fmt::format("phase {} cannot run on these pair pools: {}", to_string(cfg.phase), e.what()));
    }
    const ModelParams reference = snapshot_reference(checkpoint);
    ModelParams& params = result.params;
    params.set_trainable(kProjectorBlocks);
    OptimizerState state = OptimizerState::for_params(params);

    for (long step = 0; step < cfg.total_steps; ++step) {
        const std::vector<PairRef> batch = sampler->next_batch();
        Tape tape;
        const BoundParams bound = bind(params, &tape);
        std::vector<Tensor> losses;
        losses.reserve(batch.size());
        double margin_sum = 0.0;
        for (const PairRef& ref : batch) {
            const PreferencePair& pair = pool_of(pools, ref.kind)[ref.index];
            if (cfg.phase == Phase::sft_baseline) {
                losses.push_back(sft_loss(bound, world.resolve(pair.preferred_ctx), pair.preferred_y));
            } else {
                DpoTerms terms = dpo_loss(bound, reference, pair, world, cfg.beta);
                margin_sum += terms.margin;
                losses.push_back(std::move(terms.loss));
            }
        }
        const Tensor loss = mean(losses);
        check_finite(loss.item(), step);
        BlockGrads grads = collect_grads(bound, tape.backward(loss));
        clip_grads(grads, cfg.grad_clip);
        const double lr = cosine_warmup_lr(step, cfg);
        adamw_step(params, grads, state, lr, cfg);
        const double margin = cfg.phase == Phase::sft_baseline ? std::numeric_limits<double>::quiet_NaN()
                                                               : margin_sum / static_cast<double>(batch.size());
        result.log.push_back({step, lr, loss.item(), margin});
    }
    params.trainable.fill(false);
    return result;
}

}  // namespace acpo
