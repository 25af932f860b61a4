// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sdpo/diffusion.hpp"
#include "sdpo/harness/train.hpp"

namespace sdpo::harness {

// ---- mu sweep -------------------------------------------------------------

struct SweepRow {
    double mu = 0.0;
    bool ok = false;
    std::string error;
    double final_loss_w = std::numeric_limits<double>::quiet_NaN(); // probe, end of run
    double final_margin = std::numeric_limits<double>::quiet_NaN();
    double start_loss_w = std::numeric_limits<double>::quiet_NaN();
    LambdaStats lambda;
};

/// One run per grid point on a shared context and seed. A failing point is
/// recorded and the sweep moves on.
inline std::vector<SweepRow> sweep_mu(const RunConfig& cfg, const TrainContext& ctx, const std::vector<double>& grid) {
    sdpo::detail::require_config(!grid.empty(), "mu grid must be nonempty");
    for (double mu : grid) sdpo::detail::require_config(mu >= 0.0 && mu <= 1.0, "mu grid values must lie in [0, 1]");
    std::vector<SweepRow> rows;
    for (double mu : grid) {
        SweepRow row;
        row.mu = mu;
        RunConfig run = cfg;
        run.safeguard.mu = mu;
        try {
            const auto res = run_training(run, ctx);
            row.start_loss_w = res.probe_start().loss_w;
            row.final_loss_w = res.probe_end().loss_w;
            row.final_margin = res.probe_end().margin;
            row.lambda = lambda_stats(res.trajectory, run.safeguard.denom_floor);
            row.ok = !res.aborted_step;
            if (res.aborted_step)
                row.error = res.abort_reason + " at step " + std::to_string(*res.aborted_step);
        } catch (const Error& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- lambda-mode comparison ------------------------------------------------

inline double pearson(std::span<const double> a, std::span<const double> b) {
    sdpo::detail::require_shape(a.size() == b.size() && a.size() >= 2, "pearson needs two equal series of length >= 2");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

struct LambdaComparison {
    std::vector<double> lambda_output;
    std::vector<double> lambda_param;
    double correlation = 0.0;
    double mean_abs_gap = 0.0;
    TrainResult run;
};

/// Output-space lambda (mu_out) drives the updates; at every step the
/// parameter-space lambda (mu_param) is measured on the same model state and
/// batch without influencing training.
inline LambdaComparison compare_lambda_modes(const RunConfig& cfg, const TrainContext& ctx, double mu_out,
                                             double mu_param) {
    RunConfig run = cfg;
    run.safeguard.mode = SafeguardMode::output_space;
    run.safeguard.per_sample = false;
    run.safeguard.mu = mu_out;
    SafeguardConfig shadow = run.safeguard;
    shadow.mode = SafeguardMode::param_space;
    shadow.mu = mu_param;
    shadow.validate();

    LambdaComparison cmp;
    cmp.run = run_training(run, ctx,
                           [&](std::size_t, const DenoiserParams& model, const BranchState& s,
                               const SafeguardDecision& d) {
                               cmp.lambda_output.push_back(d.lambda);
                               cmp.lambda_param.push_back(decide_lambda(model, s, shadow).lambda);
                           });
    double gap = 0.0;
    for (std::size_t i = 0; i < cmp.lambda_output.size(); ++i)
        gap += std::abs(cmp.lambda_output[i] - cmp.lambda_param[i]);
    cmp.mean_abs_gap = cmp.lambda_output.empty() ? 0.0 : gap / static_cast<double>(cmp.lambda_output.size());
    cmp.correlation =
        cmp.lambda_output.size() >= 2 ? pearson(cmp.lambda_output, cmp.lambda_param) : std::numeric_limits<double>::quiet_NaN();
    return cmp;
}

struct GridCell {
    double mu_out = 0.0;
    double mu_param = 0.0;
    double correlation = 0.0;
    double mean_abs_gap = 0.0;
};

struct TunedComparison {
    std::vector<GridCell> cells;
    /// Cell with the highest correlation (NaN cells never win).
    GridCell best;
    LambdaComparison best_run;
};

/// compare_lambda_modes over grid x grid of (mu_out, mu_param).
inline TunedComparison tune_lambda_modes(const RunConfig& cfg, const TrainContext& ctx,
                                         const std::vector<double>& grid) {
    sdpo::detail::require_config(!grid.empty(), "mu grid must be nonempty");
    TunedComparison out;
    bool have = false;
    for (double mo : grid) {
        for (double mp : grid) {
            auto cmp = compare_lambda_modes(cfg, ctx, mo, mp);
            const GridCell cell{mo, mp, cmp.correlation, cmp.mean_abs_gap};
            out.cells.push_back(cell);
            if (std::isfinite(cell.correlation) && (!have || cell.correlation > out.best.correlation)) {
                have = true;
                out.best = cell;
                out.best_run = std::move(cmp);
            }
        }
    }
    if (!have) {
        out.best = out.cells.front();
        out.best.correlation = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

// ---- sample quality ------------------------------------------------------------

namespace detail {

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Energy distance over index sets into a precomputed distance matrix.
inline double energy_from_matrix(const std::vector<double>& dist, std::size_t stride,
                                 const std::vector<std::size_t>& xi, const std::vector<std::size_t>& yi) {
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (auto i : xi)
        for (auto j : yi) xy += dist[i * stride + j];
    for (auto i : xi)
        for (auto j : xi) xx += dist[i * stride + j];
    for (auto i : yi)
        for (auto j : yi) yy += dist[i * stride + j];
    const double n = static_cast<double>(xi.size()), m = static_cast<double>(yi.size());
    return 2.0 * xy / (n * m) - xx / (n * n) - yy / (m * m);
}

} // namespace detail

/// Energy distance between empirical distributions (V-statistic):
///   2 E|X - Y| - E|X - X'| - E|Y - Y'|, nonnegative.
inline double energy_distance(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
    sdpo::detail::require_shape(!x.empty() && !y.empty(), "energy distance needs nonempty samples");
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (const auto& a : x)
        for (const auto& b : y) xy += detail::euclid(a, b);
    for (const auto& a : x)
        for (const auto& b : x) xx += detail::euclid(a, b);
    for (const auto& a : y)
        for (const auto& b : y) yy += detail::euclid(a, b);
    const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
    return 2.0 * xy / (n * m) - xx / (n * n) - yy / (m * m);
}

/// Bootstrap noise band for an energy distance: the 95th percentile of the
/// distance between two resamples (with replacement, sizes |x| and |y|)
/// drawn from the pooled sample, i.e. the distance seen when both sides
/// come from one distribution.
inline double energy_noise_band(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
                                std::size_t reps, std::uint64_t seed) {
    sdpo::detail::require_config(reps >= 1, "bootstrap needs at least one replicate");
    std::vector<std::vector<double>> pool(x);
    pool.insert(pool.end(), y.begin(), y.end());
    const std::size_t N = pool.size();
    std::vector<double> dist(N * N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i; j < N; ++j) dist[i * N + j] = dist[j * N + i] = detail::euclid(pool[i], pool[j]);
    Rng rng(seed);
    std::vector<double> stats;
    std::vector<std::size_t> xi(x.size()), yi(y.size());
    for (std::size_t r = 0; r < reps; ++r) {
        for (auto& i : xi) i = static_cast<std::size_t>(rng.below(N));
        for (auto& i : yi) i = static_cast<std::size_t>(rng.below(N));
        stats.push_back(detail::energy_from_matrix(dist, N, xi, yi));
    }
    std::sort(stats.begin(), stats.end());
    const auto k = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(reps))) - 1;
    return stats[std::min(k, stats.size() - 1)];
}

struct QualityReport {
    double distance = 0.0;
    double band = 0.0;
    std::size_t n = 0;
};

/// Energy distance between `n` ancestral samples of `params` and `n` fresh
/// winner-distribution draws. Chains use the conditions of the drawn
/// winners. Deterministic given `seed`.
inline QualityReport eval_quality(const DenoiserParams& params, const NoiseSchedule& sched, const DatasetSpec& spec,
                                  std::size_t n, std::uint64_t seed, std::size_t bootstrap = 100) {
    sdpo::detail::require_config(n >= 2, "eval_quality needs n >= 2");
    std::vector<std::vector<double>> conds;
    const auto target = sample_winners(spec, n, Rng::derive(seed, 0).next(), &conds);
    const auto samples = ancestral_sample_each(params, conds, sched, Rng::derive(seed, 1).next());
    QualityReport r;
    r.n = n;
    r.distance = energy_distance(samples, target);
    r.band = energy_noise_band(samples, target, bootstrap, Rng::derive(seed, 2).next());
    return r;
}

/// Variant for datasets loaded from disk: the target is `n` winners drawn
/// with replacement from the pairs.
inline QualityReport eval_quality(const DenoiserParams& params, const NoiseSchedule& sched, const Dataset& data,
                                  std::size_t n, std::uint64_t seed, std::size_t bootstrap = 100) {
    sdpo::detail::require_config(n >= 2, "eval_quality needs n >= 2");
    data.validate();
    Rng pick = Rng::derive(seed, 0);
    std::vector<std::vector<double>> target, conds;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& p = data.pairs[static_cast<std::size_t>(pick.below(data.pairs.size()))];
        target.push_back(p.x0_w);
        conds.push_back(p.c);
    }
    const auto samples = ancestral_sample_each(params, conds, sched, Rng::derive(seed, 1).next());
    QualityReport r;
    r.n = n;
    r.distance = energy_distance(samples, target);
    r.band = energy_noise_band(samples, target, bootstrap, Rng::derive(seed, 2).next());
    return r;
}

} // namespace sdpo::harness
