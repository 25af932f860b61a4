// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sdpo/error.hpp"

namespace sdpo {

/// Forward-process variance schedule. Timesteps are zero-based: index t holds
/// beta_{t+1}, and alpha_bar[t] is the product of alpha[0..t].
struct NoiseSchedule {
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    std::size_t steps() const { return beta.size(); }

    void check_timestep(int t) const {
        detail::require_shape(t >= 0 && static_cast<std::size_t>(t) < steps(),
                              "timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
    }
};

inline NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    detail::require_config(!betas.empty(), "schedule needs at least one step");
    NoiseSchedule s;
    s.beta = std::move(betas);
    s.alpha.resize(s.beta.size());
    s.alpha_bar.resize(s.beta.size());
    double prod = 1.0;
    for (std::size_t t = 0; t < s.beta.size(); ++t) {
        const double b = s.beta[t];
        detail::require_config(b > 0.0 && b < 1.0, "beta values must lie in (0, 1)");
        s.alpha[t] = 1.0 - b;
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

/// Betas linearly spaced from `beta_start` to `beta_end`, endpoints included.
inline NoiseSchedule linear_schedule(std::size_t steps, double beta_start, double beta_end) {
    detail::require_config(steps >= 1, "schedule length must be >= 1");
    detail::require_config(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
                           "linear schedule requires 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
        betas[t] = beta_start + (beta_end - beta_start) * frac;
    }
    return schedule_from_betas(std::move(betas));
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
inline std::vector<double> add_noise(std::span<const double> x0, int t, std::span<const double> eps,
                                     const NoiseSchedule& sched) {
    detail::require_shape(x0.size() == eps.size(), "x0 and eps dimensions differ");
    sched.check_timestep(t);
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double s = std::sqrt(1.0 - sched.alpha_bar[t]);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

/// Comma-delimited dump with header `t,beta,alpha,alpha_bar`.
inline void write_schedule_text(std::ostream& os, const NoiseSchedule& sched) {
    os << "t,beta,alpha,alpha_bar\n" << std::setprecision(17);
    for (std::size_t t = 0; t < sched.steps(); ++t)
        os << t << ',' << sched.beta[t] << ',' << sched.alpha[t] << ',' << sched.alpha_bar[t] << '\n';
}

} // namespace sdpo
