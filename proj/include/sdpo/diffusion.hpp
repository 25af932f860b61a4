// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "sdpo/data.hpp"
#include "sdpo/network.hpp"
#include "sdpo/rng.hpp"
#include "sdpo/schedule.hpp"

namespace sdpo {

/// ||eps_theta(x_t, c, t) - eps||^2 with x_t from add_noise.
inline double diffusion_loss(const DenoiserParams& params, std::span<const double> x0, std::span<const double> c,
                             int t, std::span<const double> eps, const NoiseSchedule& sched) {
    const auto xt = add_noise(x0, t, eps, sched);
    const auto pred = forward(params, xt, c, t);
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) loss += (pred[i] - eps[i]) * (pred[i] - eps[i]);
    return loss;
}

/// Parameter gradient of diffusion_loss: J^T 2 (eps_hat - eps).
inline std::vector<double> diffusion_loss_grad(const DenoiserParams& params, std::span<const double> x0,
                                               std::span<const double> c, int t, std::span<const double> eps,
                                               const NoiseSchedule& sched) {
    const auto xt = add_noise(x0, t, eps, sched);
    const auto trace = forward_trace<double>(params.spec, params.theta, xt, c, t);
    const auto pred = trace.output();
    std::vector<double> cot(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) cot[i] = 2.0 * (pred[i] - eps[i]);
    std::vector<double> grad(params.spec.param_count(), 0.0);
    backprop<double>(params.spec, params.theta, trace, cot, grad);
    return grad;
}

/// FNV-1a over the spec integers and the bit patterns of theta.
inline std::uint64_t params_checksum(const DenoiserParams& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int k = 0; k < 8; ++k) {
            h ^= (v >> (8 * k)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    mix(p.spec.input_dim);
    mix(p.spec.output_dim);
    mix(p.spec.time_embed_dim);
    mix(static_cast<std::uint64_t>(p.spec.activation));
    for (auto w : p.spec.hidden_widths) mix(w);
    for (double v : p.theta) mix(std::bit_cast<std::uint64_t>(v));
    return h;
}

/// Frozen snapshot of the denoiser taken at the start of preference
/// finetuning. Copies share one immutable parameter block.
class ReferenceModel {
public:
    explicit ReferenceModel(DenoiserParams params)
        : params_(std::make_shared<const DenoiserParams>(std::move(params))) {
        params_->validate();
    }

    const DenoiserParams& params() const { return *params_; }
    std::uint64_t checksum() const { return params_checksum(*params_); }

private:
    std::shared_ptr<const DenoiserParams> params_;
};

struct PretrainConfig {
    std::size_t steps = 2000;
    double lr = 0.05;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    DenoiserParams params;
    ReferenceModel reference;
    std::vector<double> loss_history; // batch-mean loss per step
};

/// Plain SGD on the noise-prediction loss over the dataset winners
/// (x0 = x0_w, condition c). The network is initialised from stream 0 of
/// `cfg.seed`; batches, timesteps and noise come from stream 1.
inline PretrainResult pretrain_reference(const Dataset& data, const NetworkSpec& spec, const NoiseSchedule& sched,
                                         const PretrainConfig& cfg) {
    detail::require_config(!data.pairs.empty(), "pretraining needs a nonempty dataset");
    detail::require_config(cfg.batch_size >= 1, "pretraining batch_size must be >= 1");
    detail::require_shape(data.dim == spec.data_dim() && data.cond_dim == spec.cond_dim(),
                          "dataset dimensions do not match network spec");
    DenoiserParams params = init_network(spec, Rng::derive(cfg.seed, 0).next());
    Rng rng = Rng::derive(cfg.seed, 1);
    std::vector<double> history;
    history.reserve(cfg.steps);
    std::vector<double> grad(spec.param_count());
    std::vector<double> eps(spec.data_dim()), cot(spec.data_dim());
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto& pair = data.pairs[rng.below(data.pairs.size())];
            const int t = static_cast<int>(rng.below(sched.steps()));
            rng.fill_gaussian(eps);
            const auto xt = add_noise(pair.x0_w, t, eps, sched);
            const auto trace = forward_trace<double>(spec, params.theta, xt, pair.c, t);
            const auto pred = trace.output();
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const double r = pred[i] - eps[i];
                loss += r * r;
                cot[i] = 2.0 * r * inv_batch;
            }
            backprop<double>(spec, params.theta, trace, cot, grad);
        }
        loss *= inv_batch;
        if (!std::isfinite(loss)) throw TrainingError("non-finite pretraining loss", step);
        history.push_back(loss);
        for (std::size_t k = 0; k < grad.size(); ++k) params.theta[k] -= cfg.lr * grad[k];
    }
    ReferenceModel ref(params);
    return {std::move(params), std::move(ref), std::move(history)};
}

/// One DDPM reverse step from timestep t given the predicted noise. `z` is the
/// fresh Gaussian draw (ignored at t = 0). Posterior variance
/// beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) is used for t > 0.
inline void ancestral_step(std::span<double> x, std::span<const double> eps_hat, int t, const NoiseSchedule& sched,
                           std::span<const double> z) {
    const double beta = sched.beta[t];
    const double coef = beta / std::sqrt(1.0 - sched.alpha_bar[t]);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = inv_sqrt_alpha * (x[i] - coef * eps_hat[i]);
    if (t == 0) return;
    const double var = beta * (1.0 - sched.alpha_bar[t - 1]) / (1.0 - sched.alpha_bar[t]);
    const double sigma = std::sqrt(var);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += sigma * z[i];
}

/// One ancestral chain per condition, x_T ~ N(0, I). All draws come from
/// `Rng(seed)` sequentially: chain k consumes dim values for x_T, then dim
/// values per reverse step with t > 0.
inline std::vector<std::vector<double>> ancestral_sample_each(const DenoiserParams& params,
                                                              const std::vector<std::vector<double>>& conditions,
                                                              const NoiseSchedule& sched, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t dim = params.spec.data_dim();
    std::vector<std::vector<double>> out;
    out.reserve(conditions.size());
    std::vector<double> z(dim);
    for (const auto& c : conditions) {
        std::vector<double> x(dim);
        rng.fill_gaussian(x);
        for (int t = static_cast<int>(sched.steps()) - 1; t >= 0; --t) {
            const auto eps_hat = forward(params, x, c, t);
            if (t > 0) rng.fill_gaussian(z);
            ancestral_step(x, eps_hat, t, sched, z);
            for (double v : x)
                if (!std::isfinite(v)) throw NumericError("non-finite value in ancestral chain at t=" + std::to_string(t));
        }
        out.push_back(std::move(x));
    }
    return out;
}

/// `n` ancestral samples sharing the condition `c`.
inline std::vector<std::vector<double>> ancestral_sample(const DenoiserParams& params, std::span<const double> c,
                                                         const NoiseSchedule& sched, std::uint64_t seed,
                                                         std::size_t n) {
    std::vector<std::vector<double>> conds(n, std::vector<double>(c.begin(), c.end()));
    return ancestral_sample_each(params, conds, sched, seed);
}

} // namespace sdpo
