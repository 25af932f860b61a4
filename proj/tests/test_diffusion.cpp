// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "sdpo/analysis.hpp"
#include "sdpo/diffusion.hpp"

using namespace sdpo;

TEST(LinearSchedule, SingleStep) {
    const auto s = linear_schedule(1, 0.1, 0.1);
    ASSERT_EQ(s.steps(), 1u);
    EXPECT_DOUBLE_EQ(s.alpha_bar[0], 0.9);
}

TEST(LinearSchedule, TwoSteps) {
    const auto s = linear_schedule(2, 0.1, 0.2);
    EXPECT_DOUBLE_EQ(s.beta[1], 0.2);
    EXPECT_DOUBLE_EQ(s.alpha_bar[0], 0.9);
    EXPECT_NEAR(s.alpha_bar[1], 0.72, 1e-15);
}

TEST(LinearSchedule, HundredStepsMatchesIndependentProduct) {
    const auto s = linear_schedule(100, 1e-4, 0.02);
    double prod = 1.0;
    for (int t = 0; t < 100; ++t) {
        const double beta = 1e-4 + (0.02 - 1e-4) * t / 99.0;
        prod *= 1.0 - beta;
        EXPECT_NEAR(s.beta[t], beta, 1e-17);
    }
    EXPECT_NEAR(s.alpha_bar[99], prod, 1e-14);
}

TEST(LinearSchedule, InvariantsHoldForRandomConfigs) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t T = 1 + rng.below(300);
        const double lo = rng.uniform(1e-5, 0.3);
        const double hi = rng.uniform(lo, 0.999);
        const auto s = linear_schedule(T, lo, hi);
        for (std::size_t t = 0; t < T; ++t) {
            EXPECT_EQ(s.alpha[t], 1.0 - s.beta[t]);
            EXPECT_GT(s.alpha_bar[t], 0.0);
            EXPECT_LT(s.alpha_bar[t], 1.0);
            if (t > 0) {
                EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
            }
        }
    }
}

TEST(LinearSchedule, RejectsInvalidRanges) {
    EXPECT_THROW(linear_schedule(0, 0.1, 0.2), ConfigError);
    EXPECT_THROW(linear_schedule(10, 0.0, 0.2), ConfigError);
    EXPECT_THROW(linear_schedule(10, 0.3, 0.2), ConfigError);
    EXPECT_THROW(linear_schedule(10, 0.1, 1.0), ConfigError);
}

TEST(LinearSchedule, TextDump) {
    std::ostringstream os;
    write_schedule_text(os, linear_schedule(2, 0.1, 0.2));
    EXPECT_EQ(os.str(), "t,beta,alpha,alpha_bar\n0,0.10000000000000001,0.90000000000000002,0.90000000000000002\n"
                        "1,0.20000000000000001,0.80000000000000004,0.72000000000000008\n");
}

TEST(AddNoise, NoiseFreeCase) {
    const auto s = linear_schedule(10, 0.01, 0.2);
    const std::vector<double> x0 = {1.5, -2.0}, eps = {0.0, 0.0};
    const auto xt = add_noise(x0, 4, eps, s);
    EXPECT_DOUBLE_EQ(xt[0], std::sqrt(s.alpha_bar[4]) * 1.5);
    EXPECT_DOUBLE_EQ(xt[1], std::sqrt(s.alpha_bar[4]) * -2.0);
}

TEST(AddNoise, EngineeredQuarterAlphaBar) {
    const auto s = schedule_from_betas({0.5, 0.5});
    ASSERT_DOUBLE_EQ(s.alpha_bar[1], 0.25);
    const std::vector<double> x0 = {1.0, 0.0}, eps = {0.0, 2.0};
    const auto xt = add_noise(x0, 1, eps, s);
    EXPECT_DOUBLE_EQ(xt[0], 0.5);
    EXPECT_DOUBLE_EQ(xt[1], 2.0 * std::sqrt(0.75));
}

TEST(AddNoise, RejectsBadInputs) {
    const auto s = linear_schedule(5, 0.01, 0.1);
    const std::vector<double> a(2), b(3);
    EXPECT_THROW(add_noise(a, 0, b, s), ShapeError);
    EXPECT_THROW(add_noise(a, 5, a, s), ShapeError);
}

TEST(AddNoise, MonteCarloMatchesMarginal) {
    const auto s = linear_schedule(100, 1e-3, 0.2);
    const int t = 30;
    const std::vector<double> x0 = {1.0, -0.5};
    Rng rng(2024);
    const int n = 100000;
    double mean[2] = {0, 0}, sq[2] = {0, 0};
    std::vector<double> eps(2);
    for (int k = 0; k < n; ++k) {
        rng.fill_gaussian(eps);
        const auto xt = add_noise(x0, t, eps, s);
        for (int i = 0; i < 2; ++i) {
            mean[i] += xt[i];
            sq[i] += xt[i] * xt[i];
        }
    }
    for (int i = 0; i < 2; ++i) {
        const double m = mean[i] / n;
        const double var = sq[i] / n - m * m;
        EXPECT_NEAR(m, std::sqrt(s.alpha_bar[t]) * x0[i], 0.01);
        EXPECT_NEAR(var / (1.0 - s.alpha_bar[t]), 1.0, 0.05);
    }
}

TEST(DiffusionLoss, ZeroNetwork) {
    const auto s = linear_schedule(10, 0.01, 0.2);
    const auto p = init_network(NetworkSpec::for_data(2, 0, {8}, 4), 0, InitScheme::zero);
    const std::vector<double> x0 = {0.7, 0.1}, zero = {0, 0}, eps = {3, 4};
    EXPECT_EQ(diffusion_loss(p, x0, {}, 3, zero, s), 0.0);
    EXPECT_EQ(diffusion_loss(p, x0, {}, 3, eps, s), 25.0);
}

TEST(DiffusionLoss, GradientMatchesFiniteDifferences) {
    const auto s = linear_schedule(50, 1e-3, 0.2);
    const auto spec = NetworkSpec::for_data(2, 2, {8, 8}, 4);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto p = oracle::random_params(spec, seed);
        Rng rng(seed + 40);
        const auto x0 = oracle::gaussian_vector(rng, 2);
        const auto c = oracle::gaussian_vector(rng, 2);
        const auto eps = oracle::gaussian_vector(rng, 2);
        const int t = static_cast<int>(rng.below(50));
        auto f = [&](std::span<const double> th) {
            return diffusion_loss(DenoiserParams{spec, {th.begin(), th.end()}}, x0, c, t, eps, s);
        };
        EXPECT_LT(oracle::max_rel_error(diffusion_loss_grad(p, x0, c, t, eps, s), fd_gradient(f, p.theta, 1e-5)),
                  1e-6);
    }
}

namespace {

Dataset mixture(std::size_t n, std::uint64_t seed, WinnerDist dist = WinnerDist::gauss_mixture) {
    DatasetSpec ds;
    ds.n_pairs = n;
    ds.seed = seed;
    ds.winner_dist = dist;
    return generate_pairs(ds);
}

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
    return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end),
                           0.0) /
           static_cast<double>(end - begin);
}

} // namespace

TEST(Pretrain, ZeroStepsReturnsInitialisation) {
    const auto data = mixture(64, 1);
    const auto spec = NetworkSpec::for_data(2, 0, {16}, 8);
    PretrainConfig cfg;
    cfg.steps = 0;
    cfg.seed = 3;
    const auto res = pretrain_reference(data, spec, linear_schedule(100, 1e-3, 0.2), cfg);
    EXPECT_EQ(res.params.theta, init_network(spec, Rng::derive(3, 0).next()).theta);
    EXPECT_EQ(res.reference.params(), res.params);
}

TEST(Pretrain, DeterministicGivenSeed) {
    const auto data = mixture(64, 1);
    const auto spec = NetworkSpec::for_data(2, 0, {16}, 8);
    PretrainConfig cfg;
    cfg.steps = 50;
    cfg.batch_size = 16;
    const auto sched = linear_schedule(100, 1e-3, 0.2);
    const auto a = pretrain_reference(data, spec, sched, cfg);
    const auto b = pretrain_reference(data, spec, sched, cfg);
    EXPECT_EQ(a.params.theta, b.params.theta);
    EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Pretrain, DivergenceReportsStep) {
    const auto data = mixture(16, 1);
    const auto spec = NetworkSpec::for_data(2, 0, {16}, 8);
    PretrainConfig cfg;
    cfg.steps = 500;
    cfg.lr = 1e6;
    try {
        pretrain_reference(data, spec, linear_schedule(100, 1e-3, 0.2), cfg);
        FAIL() << "expected divergence";
    } catch (const TrainingError& e) {
        EXPECT_LT(e.step(), 500u);
    }
}

TEST(Pretrain, MixtureLossDropsByThirty) {
    // Calibrated on this configuration: initial window ~1.9, final ~0.5.
    const auto data = mixture(1000, 7);
    const auto spec = NetworkSpec::for_data(2, 0, {32, 32}, 8);
    PretrainConfig cfg;
    cfg.steps = 2000;
    cfg.seed = 11;
    const auto res = pretrain_reference(data, spec, linear_schedule(100, 1e-3, 0.2), cfg);
    const double first = window_mean(res.loss_history, 0, 200);
    const double last = window_mean(res.loss_history, 1800, 2000);
    EXPECT_LE(last, 0.7 * first) << "first " << first << " last " << last;
    const auto sum = res.reference.checksum();
    EXPECT_EQ(sum, params_checksum(res.params));
}

TEST(Ancestral, SingleStepIsPosteriorMean) {
    const auto s = linear_schedule(1, 0.3, 0.3);
    const auto p = oracle::random_params(NetworkSpec::for_data(2, 1, {6}, 2), 4);
    const std::vector<double> c = {0.5};
    const auto out = ancestral_sample(p, c, s, 99, 3);
    Rng rng(99);
    for (int k = 0; k < 3; ++k) {
        std::vector<double> x(2);
        rng.fill_gaussian(x);
        const auto eps_hat = oracle::mlp_eval(p.spec, p.theta, x, c, 0);
        for (int i = 0; i < 2; ++i) {
            const double expected = (x[i] - std::sqrt(0.3) * eps_hat[i]) / std::sqrt(0.7);
            EXPECT_NEAR(out[k][i], expected, 1e-14);
        }
    }
}

TEST(Ancestral, DeterministicGivenSeed) {
    const auto s = linear_schedule(20, 1e-3, 0.2);
    const auto p = oracle::random_params(NetworkSpec::for_data(2, 0, {6}, 2), 4);
    EXPECT_EQ(ancestral_sample(p, {}, s, 5, 10), ancestral_sample(p, {}, s, 5, 10));
    EXPECT_NE(ancestral_sample(p, {}, s, 5, 10), ancestral_sample(p, {}, s, 6, 10));
}

TEST(Ancestral, RingRadiusRecovered) {
    // Calibrated fixture: pretrained ring model, 1k samples.
    const auto data = mixture(2000, 3, WinnerDist::ring);
    const auto spec = NetworkSpec::for_data(2, 0, {32, 32}, 8);
    const auto sched = linear_schedule(100, 1e-3, 0.2);
    PretrainConfig cfg;
    cfg.steps = 3000;
    cfg.seed = 2;
    const auto res = pretrain_reference(data, spec, sched, cfg);
    const auto samples = ancestral_sample(res.params, {}, sched, 8, 1000);
    double r_model = 0.0, r_data = 0.0;
    for (const auto& x : samples) r_model += std::hypot(x[0], x[1]);
    for (const auto& p : data.pairs) r_data += std::hypot(p.x0_w[0], p.x0_w[1]);
    r_model /= 1000.0;
    r_data /= static_cast<double>(data.size());
    EXPECT_NEAR(r_model / r_data, 1.0, 0.2) << "model " << r_model << " data " << r_data;
}
