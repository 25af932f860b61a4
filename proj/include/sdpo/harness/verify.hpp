// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sdpo/analysis.hpp"
#include "sdpo/harness/train.hpp"

namespace sdpo::harness {

struct CheckResult {
    std::string name;
    double value = 0.0;
    std::string criterion;
    bool pass = false;
};

struct VerifyOptions {
    std::size_t instances = 20;
    std::size_t batch = 4;
    /// Scale of the Gaussian perturbation applied to the reference weights
    /// so that model and reference differ.
    double perturb = 0.05;
    std::uint64_t seed = 0;
};

namespace detail {

inline double max_rel(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max(scale, std::abs(b[i]));
    }
    return diff / std::max(scale, 1e-300);
}

struct Instance {
    DenoiserParams model;
    BranchState state;
};

inline Instance sample_instance(const TrainContext& ctx, std::size_t batch, double perturb, Rng& rng) {
    Instance in{ctx.reference.params(), {}};
    for (double& v : in.model.theta) v += perturb * rng.gaussian();
    std::vector<std::size_t> idx(batch);
    std::vector<int> ts(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        idx[b] = static_cast<std::size_t>(rng.below(ctx.data.pairs.size()));
        ts[b] = static_cast<int>(rng.below(ctx.sched.steps()));
    }
    std::vector<double> eps(batch * ctx.data.dim);
    rng.fill_gaussian(eps);
    in.state = branch_losses(in.model, ctx.reference, ctx.data, idx, ts, eps, ctx.sched);
    return in;
}

} // namespace detail

/// Analysis suites on the configured model family: gradients against
/// central differences, first-order safety under step halving, rho, and the
/// second-order decomposition. Model states are the reference weights plus
/// a small perturbation.
inline std::vector<CheckResult> run_verification(const TrainContext& ctx, const VerifyOptions& opt = {}) {
    Rng rng = Rng::derive(opt.seed, 7);
    std::vector<CheckResult> out;

    double grad_err = 0.0;
    for (std::size_t k = 0; k < opt.instances; ++k) {
        const auto in = detail::sample_instance(ctx, opt.batch, opt.perturb, rng);
        const double lambda = rng.uniform();
        const double beta = 1.0 + 4.0 * rng.uniform();
        const double l0 = in.state.loss_l;
        // Value path of dpo_loss(L^w, sg(L^l) + lambda (L^l - sg(L^l))), the
        // detached part held at its value at the base point.
        auto weighted = [&](std::span<const double> th) {
            const DenoiserParams q{in.model.spec, {th.begin(), th.end()}};
            return dpo_loss(branch_loss(q, in.state, Branch::winner),
                            l0 + lambda * (branch_loss(q, in.state, Branch::loser) - l0), beta);
        };
        const auto lw = tracked_branch_loss(in.model, in.state, Branch::winner);
        const auto ll = scale_loser(tracked_branch_loss(in.model, in.state, Branch::loser), lambda);
        const auto analytic = dpo_loss(lw, ll, beta).grad;
        const auto fd = fd_gradient(weighted, in.model.theta, 1e-6);
        grad_err = std::max(grad_err, detail::max_rel(analytic, fd));
    }
    out.push_back({"dpo_gradient_fd_rel_error", grad_err, "<= 1e-6", grad_err <= 1e-6});

    // First-order safety at the exact parameter-space bound: the measured
    // change shrinks as eta^2.
    std::vector<double> slopes;
    for (std::size_t k = 0; k < opt.instances; ++k) {
        const auto in = detail::sample_instance(ctx, opt.batch, opt.perturb, rng);
        const auto [gw, gl] = branch_param_grads(in.model, in.state);
        SafeguardConfig cfg;
        const auto d = lambda_param(gw, gl, cfg);
        if (!d.raw_lambda) continue;
        auto measured = [&](double eta) {
            return std::abs(
                measured_delta_winner(in.model, in.state, *d.raw_lambda, eta, 1.0, UpdateRule::linearized).measured_delta);
        };
        const double l1 = measured(1e-3), l2 = measured(5e-4);
        if (l1 > 0.0 && l2 > 0.0) slopes.push_back(std::log2(l1 / l2));
    }
    std::sort(slopes.begin(), slopes.end());
    const double median_slope = slopes.empty() ? 0.0 : slopes[slopes.size() / 2];
    out.push_back({"first_order_median_loglog_slope", median_slope, "2 +/- 0.3", std::abs(median_slope - 2.0) <= 0.3});

    std::vector<double> rhos;
    for (std::size_t k = 0; k < opt.instances; ++k) {
        const auto in = detail::sample_instance(ctx, opt.batch, opt.perturb, rng);
        if (const auto r = estimate_rho(in.model, in.state)) rhos.push_back(*r);
    }
    std::sort(rhos.begin(), rhos.end());
    out.push_back({"rho_median", rhos.empty() ? 0.0 : rhos[rhos.size() / 2], "reported", true});

    double decomp_err = 0.0;
    std::size_t bound_ok = 0, n_second = 0;
    for (std::size_t k = 0; k < std::min<std::size_t>(opt.instances, 10); ++k) {
        const auto in = detail::sample_instance(ctx, opt.batch, opt.perturb, rng);
        const auto r = second_order_check(in.model, in.state, 0.8, 0.05, 0.5, {300, k, 1e-8});
        decomp_err = std::max(decomp_err, std::abs(r.decomposition.sum() - r.quad_term) /
                                              std::max(std::abs(r.quad_term), 1e-300));
        ++n_second;
        if (std::abs(r.quad_term) <= 1.05 * r.spectral_bound) ++bound_ok;
    }
    out.push_back({"second_order_decomposition_rel_error", decomp_err, "<= 1e-6", decomp_err <= 1e-6});
    const double frac = n_second ? static_cast<double>(bound_ok) / static_cast<double>(n_second) : 0.0;
    out.push_back({"spectral_bound_fraction", frac, ">= 0.99", frac >= 0.99});
    return out;
}

} // namespace sdpo::harness
