#pragma once

// Generators and numerical oracles shared by the unit tests.

#include <cmath>
#include <functional>
#include <vector>

#include "acpo/grad_core.hpp"
#include "acpo/pair_forge.hpp"
#include "acpo/rng.hpp"
#include "acpo/synth_world.hpp"
#include "acpo/toy_avlm.hpp"

namespace acpo::testing {

inline Tensor random_tensor(SplitMix64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::vector<double> v(rows * cols);
    for (double& x : v) {
        x = rng.uniform(-scale, scale);
    }
    return Tensor(rows, cols, std::move(v));
}

inline std::vector<double> random_vector(SplitMix64& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(-scale, scale);
    }
    return v;
}

// Central differences of a scalar function with respect to every entry of x.
inline std::vector<double> finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                             double h = 1e-5) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor plus = x.detached();
        Tensor minus = x.detached();
        plus.mutable_values()[i] += h;
        minus.mutable_values()[i] -= h;
        out[i] = (f(plus) - f(minus)) / (2.0 * h);
    }
    return out;
}

// |a - n| / max(|a|, |n|), or the absolute error when both are tiny.
inline double gradient_error(double analytic, double numeric, double tiny = 1e-6) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < tiny) {
        return std::abs(analytic - numeric) < 1e-8 ? 0.0 : 1.0;
    }
    return std::abs(analytic - numeric) / scale;
}

inline ModelConfig small_model_config(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.d_audio = 8;
    cfg.d_video = 8;
    cfg.d_model = 6;
    cfg.vocab_size = 40;
    cfg.max_len = 10;
    cfg.seed = seed;
    return cfg;
}

// Params with larger entries than the default init so that gradients are
// not dominated by the bias terms.
inline ModelParams random_params(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
    ModelParams p = ModelParams::zeros(cfg);
    SplitMix64 rng(seed);
    for (const Block b : kAllBlocks) {
        const auto [r, c] = block_shape(cfg, b);
        p[b] = random_tensor(rng, r, c, scale);
    }
    return p;
}

inline Context random_context(SplitMix64& rng, const ModelConfig& cfg, std::size_t n_frames, TokenSeq prompt) {
    Context ctx;
    for (std::size_t i = 0; i < n_frames; ++i) {
        ctx.video_tokens.push_back(random_vector(rng, cfg.d_video));
    }
    ctx.audio_vector = random_vector(rng, cfg.d_audio);
    ctx.prompt_tokens = std::move(prompt);
    return ctx;
}

inline TokenSeq random_caption(SplitMix64& rng, std::size_t vocab_size, std::size_t length) {
    TokenSeq y;
    for (std::size_t i = 0; i + 1 < length; ++i) {
        y.push_back(static_cast<TokenId>(2 + rng.below(vocab_size - 2)));
    }
    y.push_back(tok::EOS);
    return y;
}

// A small world with d_embed matching small_model_config.
inline World small_world(std::size_t n_clips, double p_co, std::uint64_t seed, double noise_sigma = 0.05) {
    EventVocab vocab = EventVocab::make_default(derive_seed(seed, "vocab"), 8);
    std::vector<Clip> clips = generate_corpus(vocab, n_clips, p_co, derive_seed(seed, "corpus"));
    return World(std::move(vocab), std::move(clips), FeatureConfig{noise_sigma, 1.0});
}

}  // namespace acpo::testing
