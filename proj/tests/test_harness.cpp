// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "sdpo/harness/experiments.hpp"
#include "sdpo/harness/run_io.hpp"
#include "sdpo/harness/verify.hpp"

using namespace sdpo;
using namespace sdpo::harness;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.data.n_pairs = 64;
    c.data.seed = 3;
    c.data.loser_mode = LoserMode::correlated;
    c.network.hidden = {6, 5};
    c.network.time_embed_dim = 4;
    c.schedule = {20, 1e-3, 0.2};
    c.reference.pretrain = {40, 0.05, 16, 5};
    c.beta_dpo = 3.0;
    c.eta = 0.05;
    c.steps = 30;
    c.batch_size = 8;
    c.seed = 17;
    c.probe_size = 32;
    return c;
}

std::filesystem::path fresh_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("sdpo_harness_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(Train, SingleStepMatchesHandRolledUpdate) {
    auto cfg = tiny_config();
    cfg.steps = 1;
    cfg.safeguard.mode = SafeguardMode::fixed;
    cfg.safeguard.fixed_lambda = 1.0;
    const auto ctx = prepare_context(cfg);
    const auto res = run_training(cfg, ctx);
    ASSERT_EQ(res.steps_completed, 1u);

    // Re-draw the batch from the documented stream and apply the update with
    // forward-mode Jacobians and the independent evaluator.
    const auto& theta0 = ctx.reference.params();
    Rng rng = Rng::derive(cfg.seed, kBatchStream);
    const std::size_t B = cfg.batch_size, d = 2, P = theta0.theta.size();
    std::vector<std::size_t> idx(B);
    std::vector<int> ts(B);
    for (std::size_t b = 0; b < B; ++b) {
        idx[b] = static_cast<std::size_t>(rng.below(ctx.data.pairs.size()));
        ts[b] = static_cast<int>(rng.below(ctx.sched.steps()));
    }
    std::vector<double> eps(B * d);
    rng.fill_gaussian(eps);

    double lw = 0.0, ll = 0.0;
    std::vector<double> gw_theta(P, 0.0), gl_theta(P, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& pair = ctx.data.pairs[idx[b]];
        const double ab = ctx.sched.alpha_bar[ts[b]];
        for (int branch = 0; branch < 2; ++branch) {
            const auto& x0 = branch == 0 ? pair.x0_w : pair.x0_l;
            std::vector<double> xt(d);
            for (std::size_t i = 0; i < d; ++i) xt[i] = std::sqrt(ab) * x0[i] + std::sqrt(1 - ab) * eps[b * d + i];
            const auto pred = oracle::mlp_eval(ctx.spec, theta0.theta, xt, pair.c, ts[b]);
            const auto ref = oracle::mlp_eval(ctx.spec, ctx.reference.params().theta, xt, pair.c, ts[b]);
            std::vector<double> r(d);
            double loss = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                r[i] = pred[i] - eps[b * d + i];
                const double rr = ref[i] - eps[b * d + i];
                loss += 0.5 * r[i] * r[i] - 0.5 * rr * rr;
            }
            const auto J = oracle::jacobian(theta0, xt, pair.c, ts[b]);
            const auto g = oracle::jt_times(J, d, P, r);
            auto& acc = branch == 0 ? gw_theta : gl_theta;
            for (std::size_t k = 0; k < P; ++k) acc[k] += g[k] / static_cast<double>(B);
            (branch == 0 ? lw : ll) += loss / static_cast<double>(B);
        }
    }
    const double w = cfg.beta_dpo / (1.0 + std::exp(cfg.beta_dpo * (lw - ll)));
    std::vector<double> expected_delta(P), actual_delta(P);
    for (std::size_t k = 0; k < P; ++k) {
        expected_delta[k] = -cfg.eta * w * (gw_theta[k] - gl_theta[k]);
        actual_delta[k] = res.params.theta[k] - theta0.theta[k];
    }
    EXPECT_LT(oracle::max_rel_error(actual_delta, expected_delta), 1e-12);
    ASSERT_EQ(res.trajectory.size(), 1u);
    EXPECT_NEAR(res.trajectory[0].loss_w, lw, 1e-14);
    EXPECT_NEAR(res.trajectory[0].loss_l, ll, 1e-14);
}

TEST(Train, PerSampleLambdaOfOneMatchesBatchRule) {
    auto cfg = tiny_config();
    cfg.steps = 5;
    cfg.safeguard.mu = 0.0;
    const auto ctx = prepare_context(cfg);
    // With winner == loser every per-pair and batch lambda is exactly 1 - mu.
    TrainContext same = ctx;
    for (auto& p : same.data.pairs) p.x0_l = p.x0_w;
    auto a = cfg, b = cfg;
    b.safeguard.per_sample = true;
    const auto ra = run_training(a, same), rb = run_training(b, same);
    for (const auto& r : rb.trajectory) EXPECT_EQ(r.lambda, 1.0);
    EXPECT_LT(oracle::max_rel_error(ra.params.theta, rb.params.theta), 1e-12);
}

TEST(Train, WinnerOnlyStepsNeverIncreaseBatchWinnerLoss) {
    auto cfg = preset("default");
    cfg.safeguard.mode = SafeguardMode::fixed;
    cfg.safeguard.fixed_lambda = 0.0;
    cfg.eta = 1e-3;
    cfg.steps = 300;
    cfg.verify_every = 1;
    const auto ctx = prepare_context(cfg);
    const auto res = run_training(cfg, ctx);
    ASSERT_EQ(res.trajectory.size(), cfg.steps);
    for (const auto& r : res.trajectory) {
        ASSERT_TRUE(r.meas_dw.has_value());
        EXPECT_LE(*r.meas_dw, 0.0) << "step " << r.step;
    }
    EXPECT_LE(res.probe_end().loss_w, res.probe_start().loss_w);
}

TEST(Train, DeterministicGivenConfig) {
    auto cfg = tiny_config();
    cfg.verify_every = 3;
    const auto ctx1 = prepare_context(cfg), ctx2 = prepare_context(cfg);
    const auto a = run_training(cfg, ctx1), b = run_training(cfg, ctx2);
    EXPECT_EQ(a.trajectory, b.trajectory);
    EXPECT_EQ(a.params, b.params);
    auto other = cfg;
    other.seed = 18;
    EXPECT_NE(run_training(other, ctx1).trajectory, a.trajectory);
}

TEST(Train, TrajectoryInvariants) {
    auto cfg = tiny_config();
    cfg.steps = 100;
    cfg.safeguard.mu = 0.3;
    const auto ctx = prepare_context(cfg);
    const auto res = run_training(cfg, ctx);
    for (const auto& r : res.trajectory) {
        EXPECT_EQ(r.margin, r.loss_w - r.loss_l);
        EXPECT_GE(r.lambda, 0.0);
        EXPECT_LE(r.lambda, 1.0);
        if (r.dot <= 0.0) {
            EXPECT_EQ(r.lambda, 1.0);
        }
        EXPECT_FALSE(r.pred_dw.has_value());
    }
}

TEST(Train, LogEveryKeepsLastStep) {
    auto cfg = tiny_config();
    cfg.steps = 10;
    cfg.log_every = 4;
    const auto res = run_training(cfg, prepare_context(cfg));
    std::vector<std::size_t> steps;
    for (const auto& r : res.trajectory) steps.push_back(r.step);
    EXPECT_EQ(steps, (std::vector<std::size_t>{0, 4, 8, 9}));
}

TEST(Train, DivergenceAbortsWithCheckpoint) {
    auto cfg = tiny_config();
    cfg.safeguard.mode = SafeguardMode::fixed;
    cfg.safeguard.fixed_lambda = 0.0;
    cfg.eta = 1e8;
    cfg.steps = 50;
    const auto dir = fresh_dir("abort");
    try {
        train(cfg, dir);
        FAIL() << "expected an abort";
    } catch (const TrainingError& e) {
        EXPECT_LT(e.step(), 50u);
    }
    const auto ckpt = load_params(dir / kCheckpointFile);
    for (double v : ckpt.theta) EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(read_summary(dir)["status"], "aborted");
    EXPECT_FALSE(std::filesystem::exists(dir / kParamsFile));
    std::filesystem::remove_all(dir);
}

TEST(RunConfig, RejectsInvalidValues) {
    auto c = tiny_config();
    c.steps = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.eta = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.beta_dpo = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.reference.pretrain.steps = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.safeguard.mode = SafeguardMode::param_space;
    c.safeguard.per_sample = true;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, JsonRoundTripAndOverrides) {
    for (const char* name : {"default", "aggressive", "mild"}) {
        const auto c = preset(name);
        EXPECT_EQ(config_from_json(json::parse(c.to_json_string())), c) << name;
    }
    json j = json::parse(R"({"preset": "aggressive", "safeguard": {"mu": 0.3}})");
    apply_override(j, "steps=12");
    apply_override(j, "safeguard.mode=param_space");
    apply_override(j, "network.hidden=[4,4]");
    const auto c = config_from_json(j);
    EXPECT_EQ(c.beta_dpo, preset("aggressive").beta_dpo);
    EXPECT_EQ(c.safeguard.mu, 0.3);
    EXPECT_EQ(c.steps, 12u);
    EXPECT_EQ(c.safeguard.mode, SafeguardMode::param_space);
    EXPECT_EQ(c.network.hidden, (std::vector<std::size_t>{4, 4}));
    EXPECT_THROW(config_from_json(json::parse(R"({"stepz": 3})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"safeguard": {"mode": "bogus"}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"eta": "fast"})")), ConfigError);
    EXPECT_THROW(preset("unknown"), ConfigError);
    EXPECT_THROW(apply_override(j, "novalue"), ConfigError);
}

TEST(RunConfig, CommittedPresetFilesMatchBuiltins) {
    for (const char* name : {"default", "aggressive", "mild"}) {
        const auto path = std::filesystem::path(SDPO_SOURCE_DIR) / "configs" / (std::string(name) + ".json");
        EXPECT_EQ(load_config(path), preset(name)) << path;
    }
}

TEST(Export, FixedSchemaAndEmptyOptionalFields) {
    auto cfg = tiny_config();
    cfg.verify_every = 4;
    const auto dir = fresh_dir("export");
    train(cfg, dir);
    const auto files = export_run(dir, ExportFormat::csv);
    std::istringstream in(slurp(files[0]));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,t,loss_w,loss_l,margin,lambda,dot,norm_w_sq,clipped,pred_dw,meas_dw");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10) << line;
        const bool verify_row = rows % 4 == 0;
        const bool empty_tail = line.size() >= 2 && line.substr(line.size() - 2) == ",,";
        EXPECT_EQ(empty_tail, !verify_row) << line;
        ++rows;
    }
    EXPECT_EQ(rows, cfg.steps);

    const std::string first = slurp(files[0]), summary = slurp(files[1]);
    export_run(dir, ExportFormat::csv);
    EXPECT_EQ(slurp(files[0]), first);
    EXPECT_EQ(slurp(files[1]), summary);
    EXPECT_NE(summary.find("status=completed\n"), std::string::npos);

    const auto tsv = export_run(dir, ExportFormat::tsv);
    std::istringstream tin(slurp(tsv[0]));
    while (std::getline(tin, line)) EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 10);

    // Values survive the log round trip bit for bit.
    const auto rows_back = read_trajectory(dir);
    const auto ctx = prepare_context(cfg);
    EXPECT_EQ(rows_back, run_training(cfg, ctx).trajectory);
    std::filesystem::remove_all(dir);
}

TEST(Export, MissingArtifactsAreExportErrors) {
    const auto dir = fresh_dir("missing");
    EXPECT_THROW(export_run(dir, ExportFormat::csv), ExportError);
    std::filesystem::create_directories(dir);
    EXPECT_THROW(export_run(dir, ExportFormat::csv), ExportError);
    std::filesystem::remove_all(dir);
}

TEST(SweepMu, FullContractionAndMonotoneRawLambda) {
    auto cfg = tiny_config();
    cfg.steps = 40;
    const auto ctx = prepare_context(cfg);
    const auto rows = sweep_mu(cfg, ctx, {0.0, 0.5, 0.9, 1.0});
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) EXPECT_TRUE(r.ok) << r.error;
    ASSERT_TRUE(rows[3].lambda.mean_lambda_active.has_value());
    EXPECT_EQ(*rows[3].lambda.mean_lambda_active, 0.0);
    for (std::size_t i = 1; i < rows.size(); ++i)
        EXPECT_LT(*rows[i].lambda.mean_raw_lambda, *rows[i - 1].lambda.mean_raw_lambda);
    EXPECT_THROW(sweep_mu(cfg, ctx, {}), ConfigError);
    EXPECT_THROW(sweep_mu(cfg, ctx, {1.5}), ConfigError);
}

TEST(SweepMu, FailingPointIsRecordedAndSweepContinues) {
    auto cfg = tiny_config();
    cfg.steps = 50;
    cfg.eta = 1e8;
    cfg.safeguard.mode = SafeguardMode::fixed;
    cfg.safeguard.fixed_lambda = 0.0;
    const auto ctx = prepare_context(cfg);
    const auto rows = sweep_mu(cfg, ctx, {0.0, 1.0});
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& r : rows) {
        EXPECT_FALSE(r.ok);
        EXPECT_NE(r.error.find("at step"), std::string::npos) << r.error;
    }
}

TEST(CompareLambdaModes, IdenticalBranchesAgreeExactly) {
    auto cfg = tiny_config();
    cfg.network.hidden = {};
    cfg.steps = 20;
    auto ctx = prepare_context(cfg);
    for (auto& p : ctx.data.pairs) p.x0_l = p.x0_w;
    const auto cmp = compare_lambda_modes(cfg, ctx, 0.4, 0.4);
    EXPECT_EQ(cmp.lambda_output, cmp.lambda_param);
    EXPECT_EQ(cmp.mean_abs_gap, 0.0);
}

TEST(CompareLambdaModes, SafeBranchGivesOne) {
    auto cfg = tiny_config();
    cfg.steps = 200;
    cfg.batch_size = 1;
    const auto ctx = prepare_context(cfg);
    const auto cmp = compare_lambda_modes(cfg, ctx, 0.0, 0.0);
    ASSERT_EQ(cmp.lambda_output.size(), cmp.run.trajectory.size());
    std::size_t safe = 0;
    for (std::size_t i = 0; i < cmp.lambda_output.size(); ++i) {
        if (cmp.run.trajectory[i].dot > 0.0) continue;
        EXPECT_EQ(cmp.lambda_output[i], 1.0);
        ++safe;
    }
    EXPECT_GT(safe, 0u);
}

TEST(TuneLambdaModes, BestCellIsTheMaximumOfTheGrid) {
    auto cfg = tiny_config();
    cfg.steps = 20;
    const auto ctx = prepare_context(cfg);
    const auto tuned = tune_lambda_modes(cfg, ctx, {0.2, 0.6});
    ASSERT_EQ(tuned.cells.size(), 4u);
    for (const auto& c : tuned.cells)
        if (std::isfinite(c.correlation)) {
            EXPECT_LE(c.correlation, tuned.best.correlation);
        }
    const auto again = compare_lambda_modes(cfg, ctx, tuned.best.mu_out, tuned.best.mu_param);
    EXPECT_EQ(again.lambda_output, tuned.best_run.lambda_output);
    EXPECT_EQ(again.correlation, tuned.best.correlation);
    EXPECT_THROW(tune_lambda_modes(cfg, ctx, {}), ConfigError);
}

TEST(Verification, PassesOnTheTinyConfig) {
    const auto ctx = prepare_context(tiny_config());
    VerifyOptions opt;
    opt.instances = 6;
    const auto checks = run_verification(ctx, opt);
    ASSERT_EQ(checks.size(), 5u);
    for (const auto& c : checks) EXPECT_TRUE(c.pass) << c.name << " = " << c.value;
}

TEST(Pearson, KnownValues) {
    const std::vector<double> a = {1, 2, 3, 4}, b = {2, 4, 6, 8}, c = {4, 3, 2, 1}, k = {5, 5, 5, 5};
    EXPECT_NEAR(pearson(a, b), 1.0, 1e-15);
    EXPECT_NEAR(pearson(a, c), -1.0, 1e-15);
    EXPECT_TRUE(std::isnan(pearson(a, k)));
    EXPECT_THROW(pearson(std::vector<double>{1.0}, std::vector<double>{1.0}), ShapeError);
}

TEST(EnergyDistance, KnownValuesAndSelfDistance) {
    EXPECT_DOUBLE_EQ(energy_distance({{0.0}}, {{1.0}}), 2.0);
    // X = {0, 2}, Y = {1}: 2 * 1 - (0 + 2 + 2 + 0) / 4 - 0 = 1
    EXPECT_DOUBLE_EQ(energy_distance({{0.0}, {2.0}}, {{1.0}}), 1.0);
    const std::vector<std::vector<double>> x = {{0.0, 1.0}, {2.0, -1.0}, {0.5, 0.5}};
    EXPECT_NEAR(energy_distance(x, x), 0.0, 1e-15);
}

TEST(EnergyDistance, SelfAndShiftedSamples) {
    DatasetSpec spec;
    spec.mode_std = 0.25;
    const auto a = sample_winners(spec, 400, 1), b = sample_winners(spec, 400, 2);
    const double self = energy_distance(a, b);
    const double band = energy_noise_band(a, b, 200, 3);
    EXPECT_LE(self, band);
    auto shifted = b;
    for (auto& v : shifted) v[0] += 5.0 * spec.mode_std;
    const double far = energy_distance(a, shifted);
    EXPECT_GE(far, 10.0 * band);
}

TEST(EvalQuality, DeterministicAndConditional) {
    auto cfg = tiny_config();
    cfg.data.conditional = true;
    const auto ctx = prepare_context(cfg);
    const auto q1 = eval_quality(ctx.reference.params(), ctx.sched, cfg.data, 50, 4, 20);
    const auto q2 = eval_quality(ctx.reference.params(), ctx.sched, cfg.data, 50, 4, 20);
    EXPECT_EQ(q1.distance, q2.distance);
    EXPECT_EQ(q1.band, q2.band);
    EXPECT_GT(q1.band, 0.0);
    const auto q3 = eval_quality(ctx.reference.params(), ctx.sched, ctx.data, 50, 4, 20);
    EXPECT_TRUE(std::isfinite(q3.distance));
}
