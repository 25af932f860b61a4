// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// sdpo: command-line front end for the lab.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad usage or configuration,
// 3 training aborted on a non-finite value, 4 a verification check failed.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdpo/harness/config.hpp"
#include "sdpo/harness/experiments.hpp"
#include "sdpo/harness/run_io.hpp"
#include "sdpo/harness/train.hpp"
#include "sdpo/harness/verify.hpp"

namespace fs = std::filesystem;
using namespace sdpo;
using namespace sdpo::harness;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitAborted = 3;
constexpr int kExitVerify = 4;

struct ConfigArgs {
    std::string config_path;
    std::string preset_name = "default";
    std::vector<std::string> overrides;
    // Shorthands for common overrides; unset values leave the config alone.
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps;
    std::optional<double> eta;
    std::optional<double> beta_dpo;
    std::optional<double> mu;
    std::optional<std::string> mode;
    std::optional<std::size_t> batch;
    std::optional<std::string> dataset;
    std::optional<std::string> reference;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config_path, "JSON config file");
        app->add_option("-p,--preset", preset_name, "built-in preset when no --config is given")
            ->check(CLI::IsMember({"default", "aggressive", "mild"}));
        app->add_option("-s,--set", overrides, "override, e.g. --set safeguard.mu=0.3 (repeatable)");
        app->add_option("--seed", seed, "run seed");
        app->add_option("--steps", steps, "training steps");
        app->add_option("--eta", eta, "learning rate");
        app->add_option("--beta-dpo", beta_dpo, "DPO temperature");
        app->add_option("--mu", mu, "safety slack in [0, 1]");
        app->add_option("--mode", mode, "safeguard mode")
            ->check(CLI::IsMember({"output_space", "param_space", "fixed"}));
        app->add_option("--batch", batch, "pairs per step");
        app->add_option("--dataset", dataset, "dataset file instead of generating one");
        app->add_option("--reference", reference, "reference parameter file instead of pretraining");
    }

    RunConfig resolve() const {
        nlohmann::json j;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw ConfigError("cannot open config file " + config_path);
            std::stringstream ss;
            ss << in.rdbuf();
            j = parse_json_text(ss.str(), config_path);
        } else {
            j = to_json(preset(preset_name));
        }
        std::vector<std::string> all = overrides;
        auto num = [](double v) { return format_double(v); };
        if (seed) all.push_back("seed=" + std::to_string(*seed));
        if (steps) all.push_back("steps=" + std::to_string(*steps));
        if (eta) all.push_back("eta=" + num(*eta));
        if (beta_dpo) all.push_back("beta_dpo=" + num(*beta_dpo));
        if (mu) all.push_back("safeguard.mu=" + num(*mu));
        if (mode) all.push_back("safeguard.mode=\"" + *mode + "\"");
        if (batch) all.push_back("batch_size=" + std::to_string(*batch));
        if (dataset) all.push_back("dataset.path=" + nlohmann::json(*dataset).dump());
        if (reference) all.push_back("reference.path=" + nlohmann::json(*reference).dump());
        for (const auto& o : all) apply_override(j, o);
        auto cfg = config_from_json(j);
        cfg.validate();
        return cfg;
    }
};

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("bad grid value '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty grid");
    return out;
}

void log(const std::string& msg) { std::cerr << "[sdpo] " << msg << '\n'; }

// ---- subcommands ------------------------------------------------------------

int cmd_generate_data(const ConfigArgs& ca, const std::string& out, bool text) {
    const auto cfg = ca.resolve();
    const auto ds = generate_pairs(cfg.data);
    if (text) {
        std::ostringstream os;
        write_dataset_text(os, ds);
        write_file(out, os.str());
    } else {
        if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
        save_dataset(out, ds);
    }
    log("wrote " + std::to_string(ds.pairs.size()) + " pairs to " + out);
    return 0;
}

int cmd_schedule(const ConfigArgs& ca, const std::string& out) {
    const auto sched = ca.resolve().schedule.build();
    std::ostringstream os;
    write_schedule_text(os, sched);
    if (out.empty() || out == "-") {
        std::cout << os.str();
    } else {
        write_file(out, os.str());
    }
    return 0;
}

int cmd_pretrain(const ConfigArgs& ca, const std::string& out) {
    auto cfg = ca.resolve();
    cfg.reference.path.clear();
    const auto ctx = prepare_context(cfg);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    save_params(out, ctx.reference.params());
    const auto& h = ctx.pretrain_losses;
    std::ostringstream msg;
    msg << "pretrained " << ctx.spec.param_count() << " parameters for " << h.size() << " steps";
    if (!h.empty()) msg << ", first loss " << format_double(h.front()) << ", last loss " << format_double(h.back());
    log(msg.str());
    log("wrote " + out);
    return 0;
}

int cmd_train(const ConfigArgs& ca, const std::string& out) {
    const auto cfg = ca.resolve();
    const auto ctx = prepare_context(cfg);
    const auto res = run_training(cfg, ctx);
    write_run(out, cfg, ctx, res);
    const auto& a = res.probe_start();
    const auto& b = res.probe_end();
    std::cout << "probe loss_w " << format_double(a.loss_w) << " -> " << format_double(b.loss_w) << "\n"
              << "probe margin " << format_double(a.margin) << " -> " << format_double(b.margin) << "\n"
              << "run written to " << out << "\n";
    if (res.aborted_step) {
        std::cerr << "error: " << res.abort_reason << " at step " << *res.aborted_step << "; last-good parameters in "
                  << (fs::path(out) / kCheckpointFile).string() << '\n';
        return kExitAborted;
    }
    return 0;
}

int cmd_sweep(const ConfigArgs& ca, const std::string& grid_text, const std::string& out) {
    const auto cfg = ca.resolve();
    const auto grid = parse_grid(grid_text);
    const auto ctx = prepare_context(cfg);
    const auto rows = sweep_mu(cfg, ctx, grid);
    std::ostringstream os;
    os << "mu,ok,start_loss_w,final_loss_w,final_margin,mean_lambda,mean_lambda_active,mean_raw_lambda,"
          "clipped_fraction,error\n";
    for (const auto& r : rows) {
        os << format_double(r.mu) << ',' << (r.ok ? 1 : 0) << ',' << format_double(r.start_loss_w) << ','
           << format_double(r.final_loss_w) << ',' << format_double(r.final_margin) << ','
           << format_double(r.lambda.mean_lambda) << ',' << opt_str(r.lambda.mean_lambda_active) << ','
           << opt_str(r.lambda.mean_raw_lambda) << ',' << format_double(r.lambda.clipped_fraction) << ','
           << nlohmann::json(r.error).dump() << '\n';
    }
    fs::create_directories(out);
    write_file(fs::path(out) / kConfigFile, cfg.to_json_string() + "\n");
    write_file(fs::path(out) / "sweep.csv", os.str());
    std::cout << os.str();
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.ok ? 0 : 1;
    if (failed) log(std::to_string(failed) + " grid point(s) failed; see sweep.csv");
    return 0;
}

int cmd_compare(const ConfigArgs& ca, double mu_out, double mu_param, const std::string& grid_text,
                const std::string& out) {
    const auto cfg = ca.resolve();
    const auto ctx = prepare_context(cfg);
    fs::create_directories(out);
    write_file(fs::path(out) / kConfigFile, cfg.to_json_string() + "\n");

    LambdaComparison cmp;
    if (!grid_text.empty()) {
        auto tuned = tune_lambda_modes(cfg, ctx, parse_grid(grid_text));
        std::ostringstream grid;
        grid << "mu_out,mu_param,correlation,mean_abs_gap\n";
        for (const auto& c : tuned.cells)
            grid << format_double(c.mu_out) << ',' << format_double(c.mu_param) << ','
                 << format_double(c.correlation) << ',' << format_double(c.mean_abs_gap) << '\n';
        write_file(fs::path(out) / "grid.csv", grid.str());
        mu_out = tuned.best.mu_out;
        mu_param = tuned.best.mu_param;
        cmp = std::move(tuned.best_run);
        if (cmp.lambda_output.empty()) cmp = compare_lambda_modes(cfg, ctx, mu_out, mu_param);
    } else {
        cmp = compare_lambda_modes(cfg, ctx, mu_out, mu_param);
    }

    std::ostringstream os;
    os << "step,lambda_output,lambda_param\n";
    for (std::size_t i = 0; i < cmp.lambda_output.size(); ++i)
        os << i << ',' << format_double(cmp.lambda_output[i]) << ',' << format_double(cmp.lambda_param[i]) << '\n';
    write_file(fs::path(out) / "lambda_trajectories.csv", os.str());
    nlohmann::json s{{"mu_out", mu_out},
                     {"mu_param", mu_param},
                     {"correlation", std::isfinite(cmp.correlation) ? nlohmann::json(cmp.correlation) : nlohmann::json()},
                     {"mean_abs_gap", cmp.mean_abs_gap},
                     {"steps", cmp.lambda_output.size()}};
    write_file(fs::path(out) / "comparison.json", s.dump(2) + "\n");
    std::cout << "mu_out=" << format_double(mu_out) << " mu_param=" << format_double(mu_param)
              << " correlation=" << format_double(cmp.correlation) << " mean_abs_gap=" << format_double(cmp.mean_abs_gap)
              << '\n';
    return 0;
}

int cmd_verify(const ConfigArgs& ca, const VerifyOptions& opt) {
    const auto cfg = ca.resolve();
    const auto ctx = prepare_context(cfg);
    bool ok = true;
    for (const auto& r : run_verification(ctx, opt)) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " = " << format_double(r.value) << " (" << r.criterion
                  << ")\n";
        ok = ok && r.pass;
    }
    return ok ? 0 : kExitVerify;
}

int cmd_eval_quality(const ConfigArgs& ca, const std::string& params_path, std::optional<std::size_t> n,
                     std::optional<std::uint64_t> seed) {
    const auto cfg = ca.resolve();
    fs::path p = params_path;
    if (fs::is_directory(p)) p = fs::exists(p / kParamsFile) ? p / kParamsFile : p / kCheckpointFile;
    const auto params = load_params(p);
    const auto sched = cfg.schedule.build();
    const std::size_t samples = n.value_or(cfg.quality.samples);
    const std::uint64_t s = seed.value_or(cfg.seed);
    const auto report = cfg.dataset_path.empty()
                            ? eval_quality(params, sched, cfg.data, samples, s, cfg.quality.bootstrap)
                            : eval_quality(params, sched, load_dataset(cfg.dataset_path), samples, s,
                                           cfg.quality.bootstrap);
    std::cout << "energy_distance=" << format_double(report.distance) << "\n"
              << "noise_band=" << format_double(report.band) << "\n"
              << "samples=" << report.n << "\n";
    return 0;
}

int cmd_export(const std::string& run_dir, const std::string& format, const std::string& out) {
    for (const auto& p : export_run(run_dir, export_format_from_string(format), out)) log("wrote " + p.string());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sdpo: safeguarded diffusion preference optimization lab"};
    app.require_subcommand(1);

    ConfigArgs ca;
    std::string out, grid = "0,0.25,0.5,0.75,1", cmp_grid, params_path, run_dir, format = "csv";
    bool text = false;
    double mu_out = 0.5, mu_param = 0.5;
    std::optional<std::size_t> n_samples;
    std::optional<std::uint64_t> eval_seed;
    VerifyOptions vopt;

    auto* gen = app.add_subcommand("generate-data", "generate a preference-pair dataset");
    ca.attach(gen);
    gen->add_option("-o,--out", out, "output file")->required();
    gen->add_flag("--text", text, "write CSV text instead of the binary format");

    auto* sch = app.add_subcommand("schedule", "dump the noise schedule as CSV");
    ca.attach(sch);
    sch->add_option("-o,--out", out, "output file (default stdout)");

    auto* pre = app.add_subcommand("pretrain", "pretrain the reference denoiser on winners");
    ca.attach(pre);
    pre->add_option("-o,--out", out, "parameter file")->required();

    auto* tr = app.add_subcommand("train", "preference finetuning run");
    ca.attach(tr);
    tr->add_option("-o,--out", out, "run directory")->required();

    auto* sw = app.add_subcommand("sweep-mu", "one run per safety slack value");
    ca.attach(sw);
    sw->add_option("-g,--grid", grid, "comma-separated mu values");
    sw->add_option("-o,--out", out, "output directory")->required();

    auto* cmp = app.add_subcommand("compare-lambda", "output-space vs shadow parameter-space lambda");
    ca.attach(cmp);
    cmp->add_option("--mu-out", mu_out, "mu for the output-space rule");
    cmp->add_option("--mu-param", mu_param, "mu for the parameter-space shadow");
    cmp->add_option("-g,--grid", cmp_grid, "tune both mu values over this grid");
    cmp->add_option("-o,--out", out, "output directory")->required();

    auto* ver = app.add_subcommand("verify", "gradient, first-order and second-order checks");
    ca.attach(ver);
    ver->add_option("--instances", vopt.instances, "random model states per check");
    ver->add_option("--verify-batch", vopt.batch, "pairs per sampled batch");
    ver->add_option("--verify-seed", vopt.seed, "sampling seed");

    auto* ev = app.add_subcommand("eval-quality", "energy distance of samples to the winner distribution");
    ca.attach(ev);
    ev->add_option("--params", params_path, "parameter file or run directory")->required();
    ev->add_option("-n,--samples", n_samples, "samples per side");
    ev->add_option("--eval-seed", eval_seed, "sampling seed (default: config seed)");

    auto* ex = app.add_subcommand("export", "write trajectory CSV/TSV and summary text from a run");
    ex->add_option("run_dir", run_dir, "run directory")->required();
    ex->add_option("-f,--format", format, "csv or tsv")->check(CLI::IsMember({"csv", "tsv"}));
    ex->add_option("-o,--out", out, "output directory (default: the run directory)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_generate_data(ca, out, text);
        if (*sch) return cmd_schedule(ca, out);
        if (*pre) return cmd_pretrain(ca, out);
        if (*tr) return cmd_train(ca, out);
        if (*sw) return cmd_sweep(ca, grid, out);
        if (*cmp) return cmd_compare(ca, mu_out, mu_param, cmp_grid, out);
        if (*ver) return cmd_verify(ca, vopt);
        if (*ev) return cmd_eval_quality(ca, params_path, n_samples, eval_seed);
        if (*ex) return cmd_export(run_dir, format, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << '\n';
        return kExitAborted;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
