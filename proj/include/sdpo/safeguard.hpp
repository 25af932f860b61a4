// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdpo/error.hpp"
#include "sdpo/preference.hpp"

namespace sdpo {

enum class SafeguardMode { output_space, param_space, fixed };

inline const char* to_string(SafeguardMode m) {
    switch (m) {
    case SafeguardMode::output_space: return "output_space";
    case SafeguardMode::param_space: return "param_space";
    case SafeguardMode::fixed: return "fixed";
    }
    return "?";
}

inline SafeguardMode safeguard_mode_from_string(const std::string& s) {
    if (s == "output_space") return SafeguardMode::output_space;
    if (s == "param_space") return SafeguardMode::param_space;
    if (s == "fixed") return SafeguardMode::fixed;
    throw ConfigError("unknown safeguard mode '" + s + "'");
}

struct SafeguardConfig {
    SafeguardMode mode = SafeguardMode::output_space;
    double mu = 0.0;
    double fixed_lambda = 1.0;
    double denom_floor = 1e-12;
    /// Output-space mode only: one lambda per pair instead of one per batch.
    bool per_sample = false;

    void validate() const {
        detail::require_config(mu >= 0.0 && mu <= 1.0, "safeguard mu must lie in [0, 1]");
        detail::require_config(fixed_lambda >= 0.0 && fixed_lambda <= 1.0, "fixed_lambda must lie in [0, 1]");
        detail::require_config(denom_floor > 0.0, "denom_floor must be > 0");
    }
};

struct SafeguardDecision {
    double lambda = 1.0;
    /// (1 - mu) ||g_w||^2 / dot before clipping; unset on the safe branch and in fixed mode.
    std::optional<double> raw_lambda;
    double dot = 0.0;
    double norm_w_sq = 0.0;
    bool clipped = false;
};

namespace detail {

inline SafeguardDecision ratio_decision(std::span<const double> a, std::span<const double> b, double mu,
                                        double floor) {
    require_shape(a.size() == b.size(), "gradient vectors differ in length");
    SafeguardDecision d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d.dot += a[i] * b[i];
        d.norm_w_sq += a[i] * a[i];
    }
    if (!std::isfinite(d.dot) || !std::isfinite(d.norm_w_sq)) throw NumericError("non-finite gradient in safeguard");
    if (d.dot <= floor) return d; // lambda = 1, intrinsically safe
    const double raw = (1.0 - mu) * d.norm_w_sq / d.dot;
    d.raw_lambda = raw;
    d.lambda = std::clamp(raw, 0.0, 1.0);
    d.clipped = raw > 1.0;
    return d;
}

} // namespace detail

/// lambda_safe = clip((1 - mu) ||g_w||^2 / (g_w . g_l), 0, 1), or 1 when
/// g_w . g_l <= denom_floor.
inline SafeguardDecision lambda_output(std::span<const double> g_w, std::span<const double> g_l,
                                       const SafeguardConfig& cfg) {
    return detail::ratio_decision(g_w, g_l, cfg.mu, cfg.denom_floor);
}

/// Same rule over parameter-space gradients: bounds lambda by
/// (1 - mu) ||grad L^w||^2 / (grad L^w . grad L^l).
inline SafeguardDecision lambda_param(std::span<const double> grad_w, std::span<const double> grad_l,
                                      const SafeguardConfig& cfg) {
    return detail::ratio_decision(grad_w, grad_l, cfg.mu, cfg.denom_floor);
}

/// Constant lambda; the optional gradients only fill the logging fields.
inline SafeguardDecision lambda_fixed(const SafeguardConfig& cfg, std::span<const double> g_w = {},
                                      std::span<const double> g_l = {}) {
    SafeguardDecision d;
    if (!g_w.empty()) {
        d = detail::ratio_decision(g_w, g_l, 0.0, cfg.denom_floor);
        d.raw_lambda.reset();
        d.clipped = false;
    }
    d.lambda = cfg.fixed_lambda;
    return d;
}

/// lambda for the configured mode. Parameter-space mode runs the two
/// branch backward passes.
inline SafeguardDecision decide_lambda(const DenoiserParams& model, const BranchState& state,
                                       const SafeguardConfig& cfg) {
    switch (cfg.mode) {
    case SafeguardMode::output_space: return lambda_output(state.g_w, state.g_l, cfg);
    case SafeguardMode::param_space: {
        const auto [gw, gl] = branch_param_grads(model, state);
        return lambda_param(gw, gl, cfg);
    }
    case SafeguardMode::fixed: return lambda_fixed(cfg, state.g_w, state.g_l);
    }
    return {};
}

/// Output-space decision for each pair of the batch separately.
inline std::vector<SafeguardDecision> lambda_output_per_sample(const BranchState& state,
                                                               const SafeguardConfig& cfg) {
    std::vector<SafeguardDecision> out;
    out.reserve(state.batch);
    for (std::size_t b = 0; b < state.batch; ++b)
        out.push_back(lambda_output(state.row(state.g_w, b), state.row(state.g_l, b), cfg));
    return out;
}

/// Jacobian factor rho = lambda_param(mu=0) / lambda_output(mu=0), computed
/// from unclipped ratios. Empty when either inner product is at or below
/// `denom_floor`: the step is safe by geometry and rho is undefined.
inline std::optional<double> estimate_rho(const DenoiserParams& model, const BranchState& state,
                                          double denom_floor = 1e-12) {
    SafeguardConfig cfg;
    cfg.denom_floor = denom_floor;
    const auto out = lambda_output(state.g_w, state.g_l, cfg);
    if (!out.raw_lambda) return std::nullopt;
    const auto [gw, gl] = branch_param_grads(model, state);
    const auto par = lambda_param(gw, gl, cfg);
    if (!par.raw_lambda) return std::nullopt;
    return *par.raw_lambda / *out.raw_lambda;
}

inline std::optional<double> estimate_rho(const DenoiserParams& model, const ReferenceModel& reference,
                                          const PreferencePair& pair, int t, std::span<const double> eps,
                                          const NoiseSchedule& sched, double denom_floor = 1e-12) {
    return estimate_rho(model, branch_losses(model, reference, pair, t, eps, sched), denom_floor);
}

} // namespace sdpo
