// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "sdpo/data.hpp"
#include "sdpo/diffusion.hpp"
#include "sdpo/network.hpp"
#include "sdpo/schedule.hpp"

namespace sdpo {

/// Winner and loser branches of a batch of preference pairs evaluated at
/// shared (t, eps) per pair.
///
/// Per-sample vectors are stored sample-major (batch x dim). Branch losses
/// are batch means of
///   L = 1/2 ||eps_theta - eps||^2 - 1/2 ||eps_ref - eps||^2
/// and g = eps_theta - eps is the output-space gradient of the per-sample
/// loss, concatenated over the batch.
struct BranchState {
    std::size_t batch = 0;
    std::size_t dim = 0;
    std::size_t cond_dim = 0;
    std::vector<int> t;
    std::vector<double> cond;
    std::vector<double> xt_w, xt_l;
    std::vector<double> eps;
    std::vector<double> pred_w, pred_l;
    std::vector<double> ref_w, ref_l;
    std::vector<double> g_w, g_l;
    double loss_w = 0.0;
    double loss_l = 0.0;

    double margin() const { return loss_w - loss_l; }

    std::span<const double> row(const std::vector<double>& v, std::size_t b) const {
        return std::span<const double>(v).subspan(b * dim, dim);
    }
    std::span<const double> condition(std::size_t b) const {
        return std::span<const double>(cond).subspan(b * cond_dim, cond_dim);
    }
};

enum class Branch { winner, loser };

namespace detail {

inline double half_sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return 0.5 * s;
}

inline BranchState make_state(std::size_t batch, std::size_t dim, std::size_t cond_dim) {
    BranchState s;
    s.batch = batch;
    s.dim = dim;
    s.cond_dim = cond_dim;
    s.t.resize(batch);
    s.cond.resize(batch * cond_dim);
    for (auto* v : {&s.xt_w, &s.xt_l, &s.eps, &s.pred_w, &s.pred_l, &s.ref_w, &s.ref_l, &s.g_w, &s.g_l})
        v->resize(batch * dim);
    return s;
}

inline void fill_sample(BranchState& s, std::size_t b, const DenoiserParams& model, const ReferenceModel& reference,
                        const PreferencePair& pair, int t, std::span<const double> eps, const NoiseSchedule& sched) {
    require_shape(eps.size() == s.dim, "eps dimension does not match pair");
    require_shape(pair.x0_w.size() == s.dim && pair.x0_l.size() == s.dim, "pair dimension mismatch");
    require_shape(pair.c.size() == s.cond_dim, "pair condition dimension mismatch");
    const std::size_t off = b * s.dim;
    s.t[b] = t;
    std::copy(pair.c.begin(), pair.c.end(), s.cond.begin() + static_cast<std::ptrdiff_t>(b * s.cond_dim));
    std::copy(eps.begin(), eps.end(), s.eps.begin() + static_cast<std::ptrdiff_t>(off));
    const auto xw = add_noise(pair.x0_w, t, eps, sched);
    const auto xl = add_noise(pair.x0_l, t, eps, sched);
    const auto pw = forward(model, xw, pair.c, t);
    const auto pl = forward(model, xl, pair.c, t);
    const auto rw = forward(reference.params(), xw, pair.c, t);
    const auto rl = forward(reference.params(), xl, pair.c, t);
    for (std::size_t i = 0; i < s.dim; ++i) {
        s.xt_w[off + i] = xw[i];
        s.xt_l[off + i] = xl[i];
        s.pred_w[off + i] = pw[i];
        s.pred_l[off + i] = pl[i];
        s.ref_w[off + i] = rw[i];
        s.ref_l[off + i] = rl[i];
        s.g_w[off + i] = pw[i] - eps[i];
        s.g_l[off + i] = pl[i] - eps[i];
    }
}

inline void finish_losses(BranchState& s) {
    double lw = 0.0, ll = 0.0;
    for (std::size_t b = 0; b < s.batch; ++b) {
        lw += half_sq_dist(s.row(s.pred_w, b), s.row(s.eps, b)) - half_sq_dist(s.row(s.ref_w, b), s.row(s.eps, b));
        ll += half_sq_dist(s.row(s.pred_l, b), s.row(s.eps, b)) - half_sq_dist(s.row(s.ref_l, b), s.row(s.eps, b));
    }
    s.loss_w = lw / static_cast<double>(s.batch);
    s.loss_l = ll / static_cast<double>(s.batch);
}

} // namespace detail

/// Branch state for a single pair at shared (t, eps).
inline BranchState branch_losses(const DenoiserParams& model, const ReferenceModel& reference,
                                 const PreferencePair& pair, int t, std::span<const double> eps,
                                 const NoiseSchedule& sched) {
    auto s = detail::make_state(1, pair.x0_w.size(), pair.c.size());
    detail::fill_sample(s, 0, model, reference, pair, t, eps, sched);
    detail::finish_losses(s);
    return s;
}

/// Branch state for `indices` into `data`; `ts[b]` and the b-th dim-long
/// slice of `eps` are shared by both branches of pair b.
inline BranchState branch_losses(const DenoiserParams& model, const ReferenceModel& reference, const Dataset& data,
                                 std::span<const std::size_t> indices, std::span<const int> ts,
                                 std::span<const double> eps, const NoiseSchedule& sched) {
    detail::require_shape(!indices.empty(), "empty batch");
    detail::require_shape(ts.size() == indices.size(), "one timestep per pair required");
    detail::require_shape(eps.size() == indices.size() * data.dim, "eps must hold one noise vector per pair");
    auto s = detail::make_state(indices.size(), data.dim, data.cond_dim);
    for (std::size_t b = 0; b < indices.size(); ++b)
        detail::fill_sample(s, b, model, reference, data.pairs.at(indices[b]), ts[b],
                            eps.subspan(b * data.dim, data.dim), sched);
    detail::finish_losses(s);
    return s;
}

/// Batch-mean branch loss of `model` on the inputs stored in `state`, with the
/// stored reference predictions.
inline double branch_loss(const DenoiserParams& model, const BranchState& state, Branch which) {
    const auto& xt = which == Branch::winner ? state.xt_w : state.xt_l;
    const auto& ref = which == Branch::winner ? state.ref_w : state.ref_l;
    double total = 0.0;
    for (std::size_t b = 0; b < state.batch; ++b) {
        const auto pred = forward(model, state.row(xt, b), state.condition(b), state.t[b]);
        total += detail::half_sq_dist(pred, state.row(state.eps, b)) -
                 detail::half_sq_dist(state.row(ref, b), state.row(state.eps, b));
    }
    return total / static_cast<double>(state.batch);
}

/// (g_w, g_l) = (eps_theta^w - eps, eps_theta^l - eps).
inline std::pair<std::vector<double>, std::vector<double>> output_grads(const BranchState& state) {
    std::pair<std::vector<double>, std::vector<double>> g{state.pred_w, state.pred_l};
    for (std::size_t i = 0; i < state.eps.size(); ++i) {
        g.first[i] -= state.eps[i];
        g.second[i] -= state.eps[i];
    }
    return g;
}

/// Sum over the batch of J_b^T cot_b for one branch's inputs.
inline std::vector<double> branch_vjp(const DenoiserParams& model, const BranchState& state, Branch which,
                                      std::span<const double> cotangent) {
    detail::require_shape(cotangent.size() == state.batch * state.dim, "cotangent must cover the whole batch");
    const auto& xt = which == Branch::winner ? state.xt_w : state.xt_l;
    std::vector<double> grad(model.spec.param_count(), 0.0);
    for (std::size_t b = 0; b < state.batch; ++b)
        accumulate_param_grad(model, state.row(xt, b), state.condition(b), state.t[b],
                              cotangent.subspan(b * state.dim, state.dim), grad);
    return grad;
}

/// Parameter-space gradients (grad L^w, grad L^l) of the batch-mean losses.
inline std::pair<std::vector<double>, std::vector<double>> branch_param_grads(const DenoiserParams& model,
                                                                              const BranchState& state) {
    const double inv = 1.0 / static_cast<double>(state.batch);
    std::vector<double> cw(state.g_w), cl(state.g_l);
    for (double& v : cw) v *= inv;
    for (double& v : cl) v *= inv;
    return {branch_vjp(model, state, Branch::winner, cw), branch_vjp(model, state, Branch::loser, cl)};
}

/// A scalar together with its gradient with respect to theta.
struct TrackedScalar {
    double value = 0.0;
    std::vector<double> grad;

    /// Same value, no gradient path.
    TrackedScalar detach() const { return {value, std::vector<double>(grad.size(), 0.0)}; }
};

inline TrackedScalar operator+(const TrackedScalar& a, const TrackedScalar& b) {
    detail::require_shape(a.grad.size() == b.grad.size(), "tracked scalars over different parameter sets");
    TrackedScalar r{a.value + b.value, a.grad};
    for (std::size_t k = 0; k < r.grad.size(); ++k) r.grad[k] += b.grad[k];
    return r;
}

inline TrackedScalar operator-(const TrackedScalar& a, const TrackedScalar& b) {
    detail::require_shape(a.grad.size() == b.grad.size(), "tracked scalars over different parameter sets");
    TrackedScalar r{a.value - b.value, a.grad};
    for (std::size_t k = 0; k < r.grad.size(); ++k) r.grad[k] -= b.grad[k];
    return r;
}

inline TrackedScalar operator*(double s, const TrackedScalar& a) {
    TrackedScalar r{s * a.value, a.grad};
    for (double& g : r.grad) g *= s;
    return r;
}

/// Batch-mean branch loss with its exact parameter gradient.
inline TrackedScalar tracked_branch_loss(const DenoiserParams& model, const BranchState& state, Branch which) {
    auto grads = branch_param_grads(model, state);
    if (which == Branch::winner) return {state.loss_w, std::move(grads.first)};
    return {state.loss_l, std::move(grads.second)};
}

/// L_detach + lambda (L - L_detach): value of `loss_l`, gradient lambda * grad.
inline TrackedScalar scale_loser(const TrackedScalar& loss_l, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("loser scale must lie in [0, 1]");
    const TrackedScalar detached = loss_l.detach();
    return detached + lambda * (loss_l - detached);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// -log sigma(-beta (L^w - L^l_scaled)), evaluated as softplus(beta (L^w - L^l_scaled)).
inline double dpo_loss(double loss_w, double loss_l_scaled, double beta) {
    if (!(beta > 0.0)) throw ContractError("DPO temperature beta must be > 0");
    return softplus(beta * (loss_w - loss_l_scaled));
}

inline TrackedScalar dpo_loss(const TrackedScalar& loss_w, const TrackedScalar& loss_l_scaled, double beta) {
    const TrackedScalar diff = loss_w - loss_l_scaled;
    return {dpo_loss(loss_w.value, loss_l_scaled.value, beta), (beta * logistic(beta * diff.value) * diff).grad};
}

/// Output-space cotangents of dpo_loss(L^w, scale_loser(L^l, lambda), beta)
/// for every sample of the batch:
///   cot_w = w g_w / B,   cot_l = -lambda w g_l / B,   w = beta sigma(-z),
/// with z = -beta (L^w - L^l).
struct DpoCotangents {
    std::vector<double> w;
    std::vector<double> l;
    double logistic_weight = 0.0;
};

inline DpoCotangents dpo_backward(const BranchState& state, std::span<const double> lambdas, double beta) {
    if (!(beta > 0.0)) throw ContractError("DPO temperature beta must be > 0");
    detail::require_shape(lambdas.size() == state.batch, "one lambda per sample required");
    for (double lam : lambdas)
        if (!(lam >= 0.0 && lam <= 1.0)) throw ContractError("loser scale must lie in [0, 1]");
    const double z = -beta * (state.loss_w - state.loss_l);
    DpoCotangents c;
    c.logistic_weight = beta * logistic(-z);
    const double scale = c.logistic_weight / static_cast<double>(state.batch);
    c.w.resize(state.g_w.size());
    c.l.resize(state.g_l.size());
    for (std::size_t b = 0; b < state.batch; ++b)
        for (std::size_t i = 0; i < state.dim; ++i) {
            const std::size_t k = b * state.dim + i;
            c.w[k] = scale * state.g_w[k];
            c.l[k] = -lambdas[b] * scale * state.g_l[k];
        }
    return c;
}

inline DpoCotangents dpo_backward(const BranchState& state, double lambda, double beta) {
    const std::vector<double> lambdas(state.batch, lambda);
    return dpo_backward(state, lambdas, beta);
}

/// Parameter gradient obtained by pulling both branch cotangents back
/// through the network.
inline std::vector<double> cotangent_param_grad(const DenoiserParams& model, const BranchState& state,
                                                const DpoCotangents& cot) {
    auto grad = branch_vjp(model, state, Branch::winner, cot.w);
    const auto gl = branch_vjp(model, state, Branch::loser, cot.l);
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += gl[k];
    return grad;
}

} // namespace sdpo
