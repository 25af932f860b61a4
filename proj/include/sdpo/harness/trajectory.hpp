// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdpo/error.hpp"

namespace sdpo::harness {

/// One logged training step. Values are minibatch quantities taken before
/// the update; `pred_dw`/`meas_dw` are set only on verification steps.
struct TrajectoryRecord {
    std::size_t step = 0;
    int t = 0; // first sampled timestep of the batch
    double loss_w = 0.0;
    double loss_l = 0.0;
    double margin = 0.0;
    double lambda = 1.0;
    double dot = 0.0;
    double norm_w_sq = 0.0;
    bool clipped = false;
    std::optional<double> raw_lambda;
    std::optional<double> pred_dw;
    std::optional<double> meas_dw;

    bool operator==(const TrajectoryRecord&) const = default;
};

inline constexpr std::array<const char*, 11> kTrajectoryColumns = {
    "step", "t", "loss_w", "loss_l", "margin", "lambda", "dot", "norm_w_sq", "clipped", "pred_dw", "meas_dw"};

inline nlohmann::json to_json(const TrajectoryRecord& r) {
    nlohmann::json j = {{"step", r.step},     {"t", r.t},         {"loss_w", r.loss_w},
                        {"loss_l", r.loss_l}, {"margin", r.margin}, {"lambda", r.lambda},
                        {"dot", r.dot},       {"norm_w_sq", r.norm_w_sq}, {"clipped", r.clipped}};
    j["raw_lambda"] = r.raw_lambda ? nlohmann::json(*r.raw_lambda) : nlohmann::json(nullptr);
    j["pred_dw"] = r.pred_dw ? nlohmann::json(*r.pred_dw) : nlohmann::json(nullptr);
    j["meas_dw"] = r.meas_dw ? nlohmann::json(*r.meas_dw) : nlohmann::json(nullptr);
    return j;
}

inline TrajectoryRecord record_from_json(const nlohmann::json& j) {
    auto opt = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<double>();
    };
    try {
        TrajectoryRecord r;
        r.step = j.at("step").get<std::size_t>();
        r.t = j.at("t").get<int>();
        r.loss_w = j.at("loss_w").get<double>();
        r.loss_l = j.at("loss_l").get<double>();
        r.margin = j.at("margin").get<double>();
        r.lambda = j.at("lambda").get<double>();
        r.dot = j.at("dot").get<double>();
        r.norm_w_sq = j.at("norm_w_sq").get<double>();
        r.clipped = j.at("clipped").get<bool>();
        r.raw_lambda = opt("raw_lambda");
        r.pred_dw = opt("pred_dw");
        r.meas_dw = opt("meas_dw");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed trajectory record: ") + e.what());
    }
}

/// 17 significant digits: reads back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Delimited text with the fixed 11-column header. Optional fields that are
/// absent are written as empty fields.
inline void write_trajectory_text(std::ostream& os, const std::vector<TrajectoryRecord>& rows, char sep = ',') {
    for (std::size_t i = 0; i < kTrajectoryColumns.size(); ++i) os << (i ? std::string(1, sep) : "") << kTrajectoryColumns[i];
    os << '\n';
    for (const auto& r : rows) {
        os << r.step << sep << r.t << sep << format_double(r.loss_w) << sep << format_double(r.loss_l) << sep
           << format_double(r.margin) << sep << format_double(r.lambda) << sep << format_double(r.dot) << sep
           << format_double(r.norm_w_sq) << sep << (r.clipped ? 1 : 0) << sep
           << (r.pred_dw ? format_double(*r.pred_dw) : "") << sep << (r.meas_dw ? format_double(*r.meas_dw) : "")
           << '\n';
    }
}

} // namespace sdpo::harness
