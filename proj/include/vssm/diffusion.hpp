#pragma once

// Toy noise schedule and chunk-wise autoregressive few-step sampling. The
// engine acts as an x0-predictor; weights are untrained, so the output is
// structured noise. What matters here is the cache contract: caches and memory
// advance once per committed chunk, never per denoising pass.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "vssm/hybrid_model.hpp"
#include "vssm/matrix.hpp"

namespace vssm {

struct NoiseSchedule {
    std::vector<double> beta;
    std::vector<double> alpha_bar;  // alpha_bar[t] = prod_{s<=t} (1 - beta[s])

    std::size_t steps() const { return beta.size(); }
};

/// Linearly spaced noise rates from beta_min to beta_max.
inline NoiseSchedule make_schedule(std::size_t steps, double beta_min, double beta_max) {
    require(steps >= 1, "make_schedule: steps must be >= 1");
    require(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0,
            "make_schedule: require 0 < beta_min <= beta_max < 1");
    NoiseSchedule s;
    s.beta.resize(steps);
    s.alpha_bar.resize(steps);
    double prod = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
        s.beta[t] = beta_min + (beta_max - beta_min) * frac;
        prod *= 1.0 - s.beta[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

/// x_t = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps
inline std::vector<float> forward_noise(std::span<const float> x0, double alpha_bar, std::span<const float> eps) {
    require(x0.size() == eps.size(), "forward_noise: x0/eps length mismatch");
    require(alpha_bar >= 0.0 && alpha_bar <= 1.0, "forward_noise: alpha_bar must lie in [0, 1]");
    const double a = std::sqrt(alpha_bar);
    const double b = std::sqrt(1.0 - alpha_bar);
    std::vector<float> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
    return out;
}

/// Schedule-indexed form; `t` is 0-based.
inline std::vector<float> forward_noise(std::span<const float> x0, std::size_t t, std::span<const float> eps,
                                        const NoiseSchedule& schedule) {
    require(t < schedule.steps(), "forward_noise: t outside schedule");
    return forward_noise(x0, schedule.alpha_bar[t], eps);
}

/// Noise levels visited by the sampler, noisiest first, uniform in alpha_bar:
/// (k + 1) / steps with the final level capped at 0.9999. Four steps give
/// {0.25, 0.5, 0.75, 0.9999}.
inline std::vector<double> sampling_levels(std::size_t steps) {
    require(steps >= 1, "sampling_levels: steps must be >= 1");
    std::vector<double> levels(steps);
    for (std::size_t k = 0; k < steps; ++k) levels[k] = static_cast<double>(k + 1) / static_cast<double>(steps);
    levels.back() = 0.9999;
    return levels;
}

struct SampleStats {
    std::size_t denoise_passes = 0;
    std::size_t commits = 0;
    std::size_t peak_cached_tokens = 0;
    std::vector<std::size_t> cached_tokens_per_chunk;
};

/// Generates `n_chunks` chunks of io_dim-wide samples. For each chunk:
///   x0_hat = 0
///   for each level a_k: x = sqrt(a_k) x0_hat + sqrt(1 - a_k) eps_k
///                       x0_hat = out_proj(engine.preview(in_proj(x)))
///   commit in_proj(x0_hat) to the engine
/// Returns the committed chunks stacked as (n_chunks * C) x io_dim.
inline Matrix chunked_ar_sample(std::shared_ptr<const WeightsBundle> weights, std::size_t n_chunks,
                                std::size_t steps, std::uint64_t seed, SampleStats* stats = nullptr,
                                EngineOptions options = {}) {
    const ModelConfig& cfg = weights->config;
    require(cfg.io_dim > 0, "chunked_ar_sample: model needs io_dim > 0");
    const auto levels = sampling_levels(steps);
    const std::size_t c = cfg.chunk_size;
    const std::size_t io = cfg.io_dim;

    StreamingEngine engine(weights, options);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);

    std::vector<Matrix> committed;
    committed.reserve(n_chunks);
    for (std::size_t chunk = 0; chunk < n_chunks; ++chunk) {
        Matrix estimate(c, io);
        for (double level : levels) {
            Matrix noisy(c, io);
            std::vector<float> eps(c * io);
            for (float& e : eps) e = normal(rng);
            noisy.data = forward_noise(estimate.data, level, eps);
            estimate = project_out(*weights, engine.preview(project_in(*weights, noisy)));
            if (stats != nullptr) ++stats->denoise_passes;
        }
        engine.step(project_in(*weights, estimate));
        if (stats != nullptr) {
            ++stats->commits;
            stats->cached_tokens_per_chunk.push_back(engine.last_stats().cached_tokens);
            stats->peak_cached_tokens = engine.peak_cached_tokens();
        }
        committed.push_back(std::move(estimate));
    }
    return vstack(committed);
}

}  // namespace vssm
