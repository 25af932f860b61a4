// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sdpo/analysis.hpp"
#include "sdpo/data.hpp"
#include "sdpo/diffusion.hpp"
#include "sdpo/harness/config.hpp"
#include "sdpo/harness/trajectory.hpp"
#include "sdpo/param_io.hpp"
#include "sdpo/preference.hpp"
#include "sdpo/safeguard.hpp"

namespace sdpo::harness {

// Stream layout under RunConfig::seed: 2 = training batches, 3 = probe batch.
inline constexpr std::uint64_t kBatchStream = 2;
inline constexpr std::uint64_t kProbeStream = 3;

/// Dataset, schedule and frozen reference shared by every run of one config.
struct TrainContext {
    Dataset data;
    NoiseSchedule sched;
    NetworkSpec spec;
    ReferenceModel reference;
    std::vector<double> pretrain_losses;
};

inline TrainContext prepare_context(const RunConfig& cfg) {
    cfg.validate();
    Dataset data = cfg.dataset_path.empty() ? generate_pairs(cfg.data) : load_dataset(cfg.dataset_path);
    NoiseSchedule sched = cfg.schedule.build();
    const NetworkSpec spec = cfg.network_spec(data.dim, data.cond_dim);
    if (!cfg.reference.path.empty()) {
        auto params = load_params(cfg.reference.path);
        if (!(params.spec == spec)) throw ShapeError("reference parameters do not match the configured network");
        return {std::move(data), std::move(sched), spec, ReferenceModel(std::move(params)), {}};
    }
    auto pre = pretrain_reference(data, spec, sched, cfg.reference.pretrain);
    return {std::move(data), std::move(sched), spec, std::move(pre.reference), std::move(pre.loss_history)};
}

/// A fixed batch of (pair, t, eps) used to score the model on identical
/// inputs at different points of a run.
struct ProbeBatch {
    std::vector<std::size_t> indices;
    std::vector<int> ts;
    std::vector<double> eps;
};

inline ProbeBatch make_probe(const RunConfig& cfg, const TrainContext& ctx) {
    Rng rng = Rng::derive(cfg.seed, kProbeStream);
    ProbeBatch p;
    for (std::size_t k = 0; k < cfg.probe_size; ++k) {
        p.indices.push_back(static_cast<std::size_t>(rng.below(ctx.data.pairs.size())));
        p.ts.push_back(static_cast<int>(rng.below(ctx.sched.steps())));
    }
    p.eps.resize(cfg.probe_size * ctx.data.dim);
    rng.fill_gaussian(p.eps);
    return p;
}

struct ProbeScore {
    std::size_t step = 0;
    double loss_w = 0.0;
    double loss_l = 0.0;
    double margin = 0.0;
};

inline ProbeScore score_probe(const DenoiserParams& model, const TrainContext& ctx, const ProbeBatch& probe,
                              std::size_t step) {
    const auto s = branch_losses(model, ctx.reference, ctx.data, probe.indices, probe.ts, probe.eps, ctx.sched);
    return {step, s.loss_w, s.loss_l, s.margin()};
}

/// Per-step callback seeing the pre-update model, the batch and the
/// decision that will drive the update.
using StepObserver =
    std::function<void(std::size_t step, const DenoiserParams&, const BranchState&, const SafeguardDecision&)>;

struct TrainResult {
    DenoiserParams params;
    std::vector<TrajectoryRecord> trajectory;
    std::vector<ProbeScore> probe;
    std::size_t steps_completed = 0;
    /// Set when the run stopped on a non-finite value; `params` then holds the
    /// last finite parameters.
    std::optional<std::size_t> aborted_step;
    std::string abort_reason;

    const ProbeScore& probe_start() const { return probe.front(); }
    const ProbeScore& probe_end() const { return probe.back(); }
};

namespace detail {

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline SafeguardDecision per_sample_decision(const BranchState& s, const SafeguardConfig& cfg,
                                             std::vector<double>& lambdas) {
    const auto each = lambda_output_per_sample(s, cfg);
    SafeguardDecision d = lambda_output(s.g_w, s.g_l, cfg);
    double sum = 0.0;
    bool any_clipped = false;
    for (std::size_t b = 0; b < each.size(); ++b) {
        lambdas[b] = each[b].lambda;
        sum += each[b].lambda;
        any_clipped = any_clipped || each[b].clipped;
    }
    d.lambda = sum / static_cast<double>(each.size());
    d.raw_lambda.reset();
    d.clipped = any_clipped;
    return d;
}

} // namespace detail

/// One preference-finetuning run starting from the reference weights:
/// sample (pairs, t, eps) -> branch losses -> lambda -> scale_loser ->
/// dpo_loss -> theta <- theta - eta grad. Deterministic given cfg.seed.
inline TrainResult run_training(const RunConfig& cfg, const TrainContext& ctx, const StepObserver& observer = {}) {
    cfg.validate();
    sdpo::detail::require_shape(ctx.spec.data_dim() == ctx.data.dim && ctx.spec.cond_dim() == ctx.data.cond_dim,
                          "context network does not match its dataset");
    TrainResult res{ctx.reference.params(), {}, {}, 0, std::nullopt, {}};
    DenoiserParams& model = res.params;
    const ProbeBatch probe = make_probe(cfg, ctx);
    res.probe.push_back(score_probe(model, ctx, probe, 0));

    Rng rng = Rng::derive(cfg.seed, kBatchStream);
    const std::size_t B = cfg.batch_size, d = ctx.data.dim;
    std::vector<std::size_t> idx(B);
    std::vector<int> ts(B);
    std::vector<double> eps(B * d), lambdas(B, 1.0);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t b = 0; b < B; ++b) {
            idx[b] = static_cast<std::size_t>(rng.below(ctx.data.pairs.size()));
            ts[b] = static_cast<int>(rng.below(ctx.sched.steps()));
        }
        rng.fill_gaussian(eps);

        const auto state = branch_losses(model, ctx.reference, ctx.data, idx, ts, eps, ctx.sched);
        if (!std::isfinite(state.loss_w) || !std::isfinite(state.loss_l)) {
            res.aborted_step = step;
            res.abort_reason = "non-finite branch loss";
            break;
        }

        SafeguardDecision dec;
        if (cfg.safeguard.per_sample) {
            dec = detail::per_sample_decision(state, cfg.safeguard, lambdas);
        } else {
            dec = decide_lambda(model, state, cfg.safeguard);
        }
        if (observer) observer(step, model, state, dec);

        TrajectoryRecord rec;
        rec.step = step;
        rec.t = ts[0];
        rec.loss_w = state.loss_w;
        rec.loss_l = state.loss_l;
        rec.margin = state.loss_w - state.loss_l;
        rec.lambda = dec.lambda;
        rec.dot = dec.dot;
        rec.norm_w_sq = dec.norm_w_sq;
        rec.clipped = dec.clipped;
        rec.raw_lambda = dec.raw_lambda;
        if (cfg.verify_every > 0 && step % cfg.verify_every == 0) {
            const auto fo = measured_delta_winner(model, state, dec.lambda, cfg.eta, cfg.beta_dpo);
            rec.pred_dw = fo.predicted_delta;
            rec.meas_dw = fo.measured_delta;
        }

        std::vector<double> grad;
        if (cfg.safeguard.per_sample) {
            grad = cotangent_param_grad(model, state, dpo_backward(state, lambdas, cfg.beta_dpo));
        } else {
            const auto lw = tracked_branch_loss(model, state, Branch::winner);
            const auto ll = scale_loser(tracked_branch_loss(model, state, Branch::loser), dec.lambda);
            grad = dpo_loss(lw, ll, cfg.beta_dpo).grad;
        }
        if (!detail::all_finite(grad)) {
            res.aborted_step = step;
            res.abort_reason = "non-finite gradient";
            break;
        }
        DenoiserParams next = model;
        for (std::size_t k = 0; k < grad.size(); ++k) next.theta[k] -= cfg.eta * grad[k];
        if (!detail::all_finite(next.theta)) {
            res.aborted_step = step;
            res.abort_reason = "non-finite parameters after update";
            break;
        }
        model = std::move(next);
        res.steps_completed = step + 1;

        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) res.trajectory.push_back(rec);
        if (cfg.probe_every > 0 && (step + 1) % cfg.probe_every == 0 && step + 1 != cfg.steps)
            res.probe.push_back(score_probe(model, ctx, probe, step + 1));
    }
    if (!res.aborted_step) {
        const auto end = score_probe(model, ctx, probe, res.steps_completed);
        if (!std::isfinite(end.loss_w) || !std::isfinite(end.loss_l)) {
            res.aborted_step = res.steps_completed;
            res.abort_reason = "non-finite probe loss";
        }
        res.probe.push_back(end);
    } else {
        res.probe.push_back(score_probe(model, ctx, probe, res.steps_completed));
    }
    return res;
}

/// Aggregates over a trajectory: mean lambda overall, over rows with
/// dot > floor, and mean pre-clip lambda where defined.
struct LambdaStats {
    double mean_lambda = 0.0;
    std::optional<double> mean_lambda_active;
    std::optional<double> mean_raw_lambda;
    double clipped_fraction = 0.0;
    double safe_branch_fraction = 0.0;
};

inline LambdaStats lambda_stats(const std::vector<TrajectoryRecord>& rows, double denom_floor = 1e-12) {
    LambdaStats s;
    if (rows.empty()) return s;
    double sum = 0.0, active = 0.0, raw = 0.0;
    std::size_t n_active = 0, n_raw = 0, n_clip = 0, n_safe = 0;
    for (const auto& r : rows) {
        sum += r.lambda;
        if (r.dot > denom_floor) {
            active += r.lambda;
            ++n_active;
        } else {
            ++n_safe;
        }
        if (r.raw_lambda) {
            raw += *r.raw_lambda;
            ++n_raw;
        }
        if (r.clipped) ++n_clip;
    }
    const double n = static_cast<double>(rows.size());
    s.mean_lambda = sum / n;
    if (n_active) s.mean_lambda_active = active / static_cast<double>(n_active);
    if (n_raw) s.mean_raw_lambda = raw / static_cast<double>(n_raw);
    s.clipped_fraction = static_cast<double>(n_clip) / n;
    s.safe_branch_fraction = static_cast<double>(n_safe) / n;
    return s;
}

} // namespace sdpo::harness
