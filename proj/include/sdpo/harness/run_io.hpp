// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdpo/harness/config.hpp"
#include "sdpo/harness/train.hpp"
#include "sdpo/harness/trajectory.hpp"
#include "sdpo/param_io.hpp"

namespace sdpo::harness {

// Run directory layout.
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kTrajectoryFile = "trajectory.jsonl";
inline constexpr const char* kVerifyFile = "verify.jsonl";
inline constexpr const char* kProbeFile = "probe.csv";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kParamsFile = "params.bin";
inline constexpr const char* kReferenceFile = "reference.bin";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ExportError("missing run artifact " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

inline nlohmann::json summarize(const RunConfig& cfg, const TrainContext& ctx, const TrainResult& res) {
    const auto stats = lambda_stats(res.trajectory, cfg.safeguard.denom_floor);
    nlohmann::json s;
    s["status"] = res.aborted_step ? "aborted" : "completed";
    s["steps_requested"] = cfg.steps;
    s["steps_completed"] = res.steps_completed;
    if (res.aborted_step) {
        s["aborted_step"] = *res.aborted_step;
        s["abort_reason"] = res.abort_reason;
    }
    s["seed"] = cfg.seed;
    s["safeguard_mode"] = to_string(cfg.safeguard.mode);
    s["mu"] = cfg.safeguard.mu;
    s["beta_dpo"] = cfg.beta_dpo;
    s["eta"] = cfg.eta;
    s["probe_loss_w_start"] = res.probe_start().loss_w;
    s["probe_loss_l_start"] = res.probe_start().loss_l;
    s["probe_margin_start"] = res.probe_start().margin;
    s["probe_loss_w_end"] = res.probe_end().loss_w;
    s["probe_loss_l_end"] = res.probe_end().loss_l;
    s["probe_margin_end"] = res.probe_end().margin;
    s["mean_lambda"] = stats.mean_lambda;
    if (stats.mean_lambda_active) s["mean_lambda_active"] = *stats.mean_lambda_active;
    if (stats.mean_raw_lambda) s["mean_raw_lambda"] = *stats.mean_raw_lambda;
    s["clipped_fraction"] = stats.clipped_fraction;
    s["safe_branch_fraction"] = stats.safe_branch_fraction;
    s["reference_checksum"] = ctx.reference.checksum();
    s["params_checksum"] = params_checksum(res.params);
    s["param_count"] = ctx.spec.param_count();
    return s;
}

/// Writes every artifact of a finished or aborted run into `dir`.
inline void write_run(const std::filesystem::path& dir, const RunConfig& cfg, const TrainContext& ctx,
                      const TrainResult& res) {
    std::filesystem::create_directories(dir);
    detail::write_text(dir / kConfigFile, cfg.to_json_string() + "\n");

    std::ostringstream traj, verify;
    for (const auto& r : res.trajectory) {
        traj << to_json(r).dump() << '\n';
        if (r.pred_dw && r.meas_dw)
            verify << nlohmann::json{{"step", r.step},
                                     {"lambda", r.lambda},
                                     {"pred_dw", *r.pred_dw},
                                     {"meas_dw", *r.meas_dw},
                                     {"residual", *r.meas_dw - *r.pred_dw}}
                          .dump()
                   << '\n';
    }
    detail::write_text(dir / kTrajectoryFile, traj.str());
    detail::write_text(dir / kVerifyFile, verify.str());

    std::ostringstream probe;
    probe << "step,loss_w,loss_l,margin\n";
    for (const auto& p : res.probe)
        probe << p.step << ',' << format_double(p.loss_w) << ',' << format_double(p.loss_l) << ','
              << format_double(p.margin) << '\n';
    detail::write_text(dir / kProbeFile, probe.str());

    save_params(dir / kReferenceFile, ctx.reference.params());
    save_params(dir / (res.aborted_step ? kCheckpointFile : kParamsFile), res.params);
    detail::write_text(dir / kSummaryFile, summarize(cfg, ctx, res).dump(2) + "\n");
}

/// prepare_context + run_training + write_run. Throws TrainingError (after
/// writing the last-good checkpoint) when the run aborts.
inline TrainResult train(const RunConfig& cfg, const std::filesystem::path& dir) {
    const auto ctx = prepare_context(cfg);
    auto res = run_training(cfg, ctx);
    write_run(dir, cfg, ctx, res);
    if (res.aborted_step)
        throw TrainingError(res.abort_reason + "; last-good parameters in " + (dir / kCheckpointFile).string(),
                            *res.aborted_step);
    return res;
}

inline std::vector<TrajectoryRecord> read_trajectory(const std::filesystem::path& dir) {
    std::istringstream in(detail::read_text(dir / kTrajectoryFile));
    std::vector<TrajectoryRecord> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            rows.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw SchemaError(std::string("malformed trajectory line: ") + e.what());
        }
    }
    return rows;
}

inline nlohmann::json read_summary(const std::filesystem::path& dir) {
    try {
        return nlohmann::json::parse(detail::read_text(dir / kSummaryFile));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("malformed summary: ") + e.what());
    }
}

/// key=value lines in key order; numbers use 17 significant digits.
inline void write_summary_text(std::ostream& os, const nlohmann::json& summary) {
    for (const auto& [k, v] : summary.items()) {
        os << k << '=';
        if (v.is_string()) {
            os << v.get<std::string>();
        } else if (v.is_number_float()) {
            os << format_double(v.get<double>());
        } else {
            os << v.dump();
        }
        os << '\n';
    }
}

enum class ExportFormat { csv, tsv };

inline ExportFormat export_format_from_string(const std::string& s) {
    if (s == "csv") return ExportFormat::csv;
    if (s == "tsv") return ExportFormat::tsv;
    throw ConfigError("unknown export format '" + s + "' (expected csv or tsv)");
}

/// Writes trajectory.{csv,tsv} and summary.txt into `out_dir` (default: the
/// run directory). Returns the written paths.
inline std::vector<std::filesystem::path> export_run(const std::filesystem::path& run_dir, ExportFormat format,
                                                     std::filesystem::path out_dir = {}) {
    if (!std::filesystem::is_directory(run_dir)) throw ExportError("run directory not found: " + run_dir.string());
    if (out_dir.empty()) out_dir = run_dir;
    const auto rows = read_trajectory(run_dir);
    const auto summary = read_summary(run_dir);
    std::filesystem::create_directories(out_dir);

    const auto traj_path = out_dir / (format == ExportFormat::csv ? "trajectory.csv" : "trajectory.tsv");
    std::ostringstream traj;
    write_trajectory_text(traj, rows, format == ExportFormat::csv ? ',' : '\t');
    detail::write_text(traj_path, traj.str());

    const auto sum_path = out_dir / "summary.txt";
    std::ostringstream sum;
    write_summary_text(sum, summary);
    detail::write_text(sum_path, sum.str());
    return {traj_path, sum_path};
}

} // namespace sdpo::harness
