// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sdpo/dual.hpp"
#include "sdpo/preference.hpp"
#include "sdpo/rng.hpp"
#include "sdpo/safeguard.hpp"

namespace sdpo {

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

} // namespace detail

/// First-order change of L^w under the step -eta (grad L^w - lambda grad L^l):
///   -eta (||grad L^w||^2 - lambda grad L^w . grad L^l)
inline double predicted_delta_winner(std::span<const double> grad_w, std::span<const double> grad_l, double lambda,
                                     double eta) {
    detail::require_shape(grad_w.size() == grad_l.size(), "gradient vectors differ in length");
    return -eta * (detail::dot(grad_w, grad_w) - lambda * detail::dot(grad_w, grad_l));
}

/// How the update direction is formed when probing a step.
///   dpo         the full preference step: logistic weight beta sigma(-z) times
///               (grad L^w - lambda grad L^l), built from dpo_backward cotangents
///   linearized  the bare weighted difference grad L^w - lambda grad L^l
enum class UpdateRule { dpo, linearized };

struct FirstOrderReport {
    double predicted_delta = 0.0;
    double measured_delta = 0.0;
    double eta = 0.0;
    /// Factor multiplying eta in the realised step (beta sigma(-z) for dpo, 1 otherwise).
    double step_scale = 1.0;
    double lambda = 0.0;
    double residual = 0.0;
};

/// Applies one update to a copy of `model` and compares the measured change
/// of the batch winner loss with its first-order prediction. `model` is not
/// modified.
inline FirstOrderReport measured_delta_winner(const DenoiserParams& model, const BranchState& state, double lambda,
                                              double eta, double beta = 1.0, UpdateRule rule = UpdateRule::dpo) {
    const auto [gw, gl] = branch_param_grads(model, state);
    FirstOrderReport r;
    r.eta = eta;
    r.lambda = lambda;

    std::vector<double> direction;
    if (rule == UpdateRule::dpo) {
        const auto cot = dpo_backward(state, lambda, beta);
        direction = cotangent_param_grad(model, state, cot);
        r.step_scale = cot.logistic_weight;
    } else {
        direction.resize(gw.size());
        for (std::size_t k = 0; k < gw.size(); ++k) direction[k] = gw[k] - lambda * gl[k];
    }
    r.predicted_delta = predicted_delta_winner(gw, gl, lambda, eta * r.step_scale);

    DenoiserParams stepped = model;
    for (std::size_t k = 0; k < direction.size(); ++k) stepped.theta[k] -= eta * direction[k];
    const double before = branch_loss(model, state, Branch::winner);
    const double after = branch_loss(stepped, state, Branch::winner);
    if (!std::isfinite(after)) throw NumericError("non-finite winner loss after probe step");
    r.measured_delta = after - before;
    r.residual = r.measured_delta - r.predicted_delta;
    return r;
}

/// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h per coordinate.
template <class F>
std::vector<double> fd_gradient(F&& f, std::span<const double> theta, double h) {
    std::vector<double> x(theta.begin(), theta.end());
    std::vector<double> grad(theta.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(std::span<const double>(x));
        x[i] = orig - h;
        const double fm = f(std::span<const double>(x));
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// Finite-difference Hessian-vector product (grad f(theta + h v) - grad f(theta - h v)) / 2h.
template <class G>
std::vector<double> hvp(G&& grad_fn, std::span<const double> theta, std::span<const double> v, double h) {
    detail::require_shape(theta.size() == v.size(), "direction length differs from theta");
    std::vector<double> plus(theta.begin(), theta.end()), minus(theta.begin(), theta.end());
    for (std::size_t i = 0; i < v.size(); ++i) {
        plus[i] += h * v[i];
        minus[i] -= h * v[i];
    }
    const std::vector<double> gp = grad_fn(std::span<const double>(plus));
    const std::vector<double> gm = grad_fn(std::span<const double>(minus));
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
    return out;
}

/// Exact Hessian-vector product of one batch-mean branch loss, by running the
/// reverse pass on forward-mode numbers seeded with `v`.
inline std::vector<double> branch_hvp(const DenoiserParams& model, const BranchState& state, Branch which,
                                      std::span<const double> v) {
    const std::size_t n = model.spec.param_count();
    detail::require_shape(v.size() == n, "direction length differs from theta");
    std::vector<Dual> theta(n);
    for (std::size_t k = 0; k < n; ++k) theta[k] = Dual(model.theta[k], v[k]);
    std::vector<Dual> grad(n);
    const auto& xt = which == Branch::winner ? state.xt_w : state.xt_l;
    const double inv = 1.0 / static_cast<double>(state.batch);
    std::vector<Dual> cot(state.dim);
    for (std::size_t b = 0; b < state.batch; ++b) {
        const auto trace = forward_trace<Dual>(model.spec, theta, state.row(xt, b), state.condition(b), state.t[b]);
        const auto pred = trace.output();
        const auto eps = state.row(state.eps, b);
        for (std::size_t i = 0; i < state.dim; ++i) cot[i] = (pred[i] - Dual(eps[i])) * Dual(inv);
        backprop<Dual>(model.spec, theta, trace, cot, grad);
    }
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = grad[k].tangent;
    return out;
}

struct SpectralEstimate {
    double value = 0.0;
    bool converged = false;
    std::size_t iterations = 0;
};

/// Power iteration for the largest-magnitude eigenvalue of a symmetric
/// operator, reported as ||H v|| for the final unit iterate. Converged when
/// successive estimates agree to `rel_tol`.
template <class H>
SpectralEstimate spectral_estimate(H&& hvp_fn, std::size_t dim, std::size_t iters, std::uint64_t seed,
                                   double rel_tol = 1e-10) {
    detail::require_config(iters >= 1, "spectral_estimate needs at least one iteration");
    Rng rng(seed);
    std::vector<double> v(dim);
    rng.fill_gaussian(v);
    double nv = detail::norm(v);
    for (double& x : v) x /= nv;
    SpectralEstimate est;
    double prev = -1.0;
    for (std::size_t it = 0; it < iters; ++it) {
        std::vector<double> w = hvp_fn(std::span<const double>(v));
        const double nw = detail::norm(w);
        est.value = nw;
        est.iterations = it + 1;
        if (nw == 0.0) {
            est.converged = true;
            break;
        }
        if (prev >= 0.0 && std::abs(nw - prev) <= rel_tol * nw) {
            est.converged = true;
            break;
        }
        prev = nw;
        for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / nw;
    }
    return est;
}

struct CurvatureDecomposition {
    double baseline = 0.0;        // 1/2 dtheta0^T H dtheta0
    double cross = 0.0;           // eta lam' grad_l^T H dtheta0
    double loser_quadratic = 0.0; // 1/2 eta^2 lam'^2 grad_l^T H grad_l

    double sum() const { return baseline + cross + loser_quadratic; }
};

struct CurvatureReport {
    double quad_term = 0.0;      // 1/2 dtheta^T H^w dtheta
    double spectral_bound = 0.0; // 1/2 Lambda ||dtheta||^2
    double lambda_max_est = 0.0;
    bool spectral_converged = false;
    CurvatureDecomposition decomposition;
    /// 1/2 Lambda (||dtheta0|| + eta (1 - mu) |lambda| ||grad_l||)^2 and its mu = 0 counterpart.
    double contracted_bound = 0.0;
    double uncontracted_bound = 0.0;
    double loser_part_norm = 0.0; // eta (1 - mu) lambda ||grad_l||
    double step_norm = 0.0;       // ||dtheta||
};

struct SpectralOptions {
    std::size_t iters = 500;
    std::uint64_t seed = 0;
    double rel_tol = 1e-10;
};

/// Second-order view of the step dtheta = dtheta0 + eta (1 - mu) lambda grad L^l,
/// dtheta0 = -eta grad L^w, against the winner-loss Hessian at the current
/// parameters. Lambda is estimated at the current theta only.
inline CurvatureReport second_order_check(const DenoiserParams& model, const BranchState& state, double lambda,
                                          double eta, double mu, const SpectralOptions& opts = {}) {
    detail::require_config(mu >= 0.0 && mu <= 1.0, "mu must lie in [0, 1]");
    const auto [gw, gl] = branch_param_grads(model, state);
    const std::size_t n = gw.size();
    const double lam = (1.0 - mu) * lambda;
    std::vector<double> base(n), loser(n), step(n);
    for (std::size_t k = 0; k < n; ++k) {
        base[k] = -eta * gw[k];
        loser[k] = eta * lam * gl[k];
        step[k] = base[k] + loser[k];
    }
    const auto h_step = branch_hvp(model, state, Branch::winner, step);
    const auto h_base = branch_hvp(model, state, Branch::winner, base);
    const auto h_gl = branch_hvp(model, state, Branch::winner, gl);

    CurvatureReport r;
    r.quad_term = 0.5 * detail::dot(step, h_step);
    r.decomposition.baseline = 0.5 * detail::dot(base, h_base);
    r.decomposition.cross = eta * lam * detail::dot(gl, h_base);
    r.decomposition.loser_quadratic = 0.5 * eta * eta * lam * lam * detail::dot(gl, h_gl);

    const auto est = spectral_estimate(
        [&](std::span<const double> v) { return branch_hvp(model, state, Branch::winner, v); }, n, opts.iters,
        opts.seed, opts.rel_tol);
    r.lambda_max_est = est.value;
    r.spectral_converged = est.converged;
    r.step_norm = detail::norm(step);
    r.spectral_bound = 0.5 * est.value * r.step_norm * r.step_norm;
    const double base_norm = detail::norm(base);
    const double gl_norm = detail::norm(gl);
    r.loser_part_norm = eta * lam * gl_norm;
    const double c = base_norm + eta * (1.0 - mu) * std::abs(lambda) * gl_norm;
    const double u = base_norm + eta * std::abs(lambda) * gl_norm;
    r.contracted_bound = 0.5 * est.value * c * c;
    r.uncontracted_bound = 0.5 * est.value * u * u;
    return r;
}

} // namespace sdpo
