// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdpo/data.hpp"
#include "sdpo/diffusion.hpp"
#include "sdpo/network.hpp"
#include "sdpo/safeguard.hpp"
#include "sdpo/schedule.hpp"

namespace sdpo::harness {

using json = nlohmann::json;

struct ScheduleParams {
    std::size_t steps = 100;
    double beta_start = 1e-3;
    double beta_end = 0.2;

    NoiseSchedule build() const { return linear_schedule(steps, beta_start, beta_end); }
    bool operator==(const ScheduleParams&) const = default;
};

struct NetworkParams {
    std::vector<std::size_t> hidden = {32, 32};
    std::size_t time_embed_dim = 8;
    Activation activation = Activation::tanh;

    bool operator==(const NetworkParams&) const = default;
};

/// Where the frozen reference comes from: a parameter file, or winner-only
/// pretraining when `path` is empty.
struct ReferenceSource {
    std::string path;
    PretrainConfig pretrain{3000, 0.05, 64, 0};

    bool operator==(const ReferenceSource& o) const {
        return path == o.path && pretrain.steps == o.pretrain.steps && pretrain.lr == o.pretrain.lr &&
               pretrain.batch_size == o.pretrain.batch_size && pretrain.seed == o.pretrain.seed;
    }
};

struct QualityParams {
    std::size_t samples = 500;
    std::size_t bootstrap = 100;

    bool operator==(const QualityParams&) const = default;
};

struct RunConfig {
    /// Binary dataset file; when empty the dataset is generated from `data`.
    std::string dataset_path;
    DatasetSpec data;
    NetworkParams network;
    ScheduleParams schedule;
    ReferenceSource reference;
    double beta_dpo = 1.0;
    double eta = 0.01;
    std::size_t steps = 2000;
    std::size_t batch_size = 64;
    SafeguardConfig safeguard;
    std::uint64_t seed = 0;
    std::size_t log_every = 1;
    std::size_t verify_every = 0;
    /// Fixed evaluation batch scored before the first and after the last step.
    std::size_t probe_size = 512;
    /// Probe scoring interval in steps (0 = start and end only).
    std::size_t probe_every = 0;
    QualityParams quality;

    void validate() const {
        sdpo::detail::require_config(steps >= 1, "steps must be >= 1");
        sdpo::detail::require_config(eta > 0.0, "eta must be > 0");
        sdpo::detail::require_config(beta_dpo > 0.0, "beta_dpo must be > 0");
        sdpo::detail::require_config(batch_size >= 1, "batch_size must be >= 1");
        sdpo::detail::require_config(log_every >= 1, "log_every must be >= 1");
        sdpo::detail::require_config(probe_size >= 1, "probe_size must be >= 1");
        sdpo::detail::require_config(!reference.path.empty() || reference.pretrain.steps >= 1,
                               "a reference path or pretraining steps are required");
        if (dataset_path.empty()) data.validate();
        safeguard.validate();
        sdpo::detail::require_config(!(safeguard.per_sample && safeguard.mode != SafeguardMode::output_space),
                               "per_sample lambda is only defined for output_space mode");
        schedule.build();
        network_spec(data.dim, data.cond_dim()).validate();
    }

    NetworkSpec network_spec(std::size_t data_dim, std::size_t cond_dim) const {
        return NetworkSpec::for_data(data_dim, cond_dim, network.hidden, network.time_embed_dim, network.activation);
    }

    bool operator==(const RunConfig& o) const {
        return to_json_string() == o.to_json_string();
    }

    std::string to_json_string() const;
};

inline json to_json(const DatasetSpec& d) {
    return {{"dim", d.dim},
            {"n_pairs", d.n_pairs},
            {"winner_dist", to_string(d.winner_dist)},
            {"loser_mode", to_string(d.loser_mode)},
            {"corruption_scale", d.corruption_scale},
            {"seed", d.seed},
            {"n_modes", d.n_modes},
            {"conditional", d.conditional},
            {"mode_radius", d.mode_radius},
            {"mode_std", d.mode_std}};
}

inline json to_json(const RunConfig& c) {
    return {{"dataset", {{"path", c.dataset_path}, {"generate", to_json(c.data)}}},
            {"network",
             {{"hidden", c.network.hidden},
              {"time_embed_dim", c.network.time_embed_dim},
              {"activation", to_string(c.network.activation)}}},
            {"schedule",
             {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
            {"reference",
             {{"path", c.reference.path},
              {"pretrain_steps", c.reference.pretrain.steps},
              {"pretrain_lr", c.reference.pretrain.lr},
              {"pretrain_batch_size", c.reference.pretrain.batch_size},
              {"pretrain_seed", c.reference.pretrain.seed}}},
            {"beta_dpo", c.beta_dpo},
            {"eta", c.eta},
            {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"safeguard",
             {{"mode", to_string(c.safeguard.mode)},
              {"mu", c.safeguard.mu},
              {"fixed_lambda", c.safeguard.fixed_lambda},
              {"denom_floor", c.safeguard.denom_floor},
              {"per_sample", c.safeguard.per_sample}}},
            {"seed", c.seed},
            {"log_every", c.log_every},
            {"verify_every", c.verify_every},
            {"probe_size", c.probe_size},
            {"probe_every", c.probe_every},
            {"quality", {{"samples", c.quality.samples}, {"bootstrap", c.quality.bootstrap}}}};
}

inline std::string RunConfig::to_json_string() const { return to_json(*this).dump(2); }

namespace detail {

// Reads `obj[key]` into `out` when present; unknown keys are rejected by the caller.
template <class T>
void read_field(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : obj.items()) {
        bool found = false;
        for (const char* name : known) found = found || k == name;
        if (!found) throw ConfigError("unknown config key '" + where + "." + k + "'");
    }
}

inline const json& section(const json& obj, const char* key) {
    static const json empty = json::object();
    return obj.contains(key) ? obj.at(key) : empty;
}

} // namespace detail

inline RunConfig preset(const std::string& name);

/// Fields missing from `j` keep the values already in `base`, or those of
/// the named preset when `j` has a "preset" key.
inline RunConfig config_from_json(const json& j, RunConfig base = {}) {
    using detail::read_field;
    detail::reject_unknown(j,
                           {"preset", "dataset", "network", "schedule", "reference", "beta_dpo", "eta", "steps", "batch_size",
                            "safeguard", "seed", "log_every", "verify_every", "probe_size", "probe_every", "quality"},
                           "config");
    RunConfig c = j.contains("preset") && j.at("preset").is_string() ? preset(j.at("preset").get<std::string>())
                                                                      : std::move(base);

    const auto& ds = detail::section(j, "dataset");
    detail::reject_unknown(ds, {"path", "generate"}, "dataset");
    read_field(ds, "path", c.dataset_path, "dataset");
    const auto& gen = detail::section(ds, "generate");
    detail::reject_unknown(gen,
                           {"dim", "n_pairs", "winner_dist", "loser_mode", "corruption_scale", "seed", "n_modes",
                            "conditional", "mode_radius", "mode_std"},
                           "dataset.generate");
    read_field(gen, "dim", c.data.dim, "dataset.generate");
    read_field(gen, "n_pairs", c.data.n_pairs, "dataset.generate");
    read_field(gen, "corruption_scale", c.data.corruption_scale, "dataset.generate");
    read_field(gen, "seed", c.data.seed, "dataset.generate");
    read_field(gen, "n_modes", c.data.n_modes, "dataset.generate");
    read_field(gen, "conditional", c.data.conditional, "dataset.generate");
    read_field(gen, "mode_radius", c.data.mode_radius, "dataset.generate");
    read_field(gen, "mode_std", c.data.mode_std, "dataset.generate");
    std::string s;
    if (gen.contains("winner_dist")) {
        read_field(gen, "winner_dist", s, "dataset.generate");
        c.data.winner_dist = winner_dist_from_string(s);
    }
    if (gen.contains("loser_mode")) {
        read_field(gen, "loser_mode", s, "dataset.generate");
        c.data.loser_mode = loser_mode_from_string(s);
    }

    const auto& net = detail::section(j, "network");
    detail::reject_unknown(net, {"hidden", "time_embed_dim", "activation"}, "network");
    read_field(net, "hidden", c.network.hidden, "network");
    read_field(net, "time_embed_dim", c.network.time_embed_dim, "network");
    if (net.contains("activation")) {
        read_field(net, "activation", s, "network");
        c.network.activation = activation_from_string(s);
    }

    const auto& sch = detail::section(j, "schedule");
    detail::reject_unknown(sch, {"steps", "beta_start", "beta_end"}, "schedule");
    read_field(sch, "steps", c.schedule.steps, "schedule");
    read_field(sch, "beta_start", c.schedule.beta_start, "schedule");
    read_field(sch, "beta_end", c.schedule.beta_end, "schedule");

    const auto& ref = detail::section(j, "reference");
    detail::reject_unknown(ref, {"path", "pretrain_steps", "pretrain_lr", "pretrain_batch_size", "pretrain_seed"},
                           "reference");
    read_field(ref, "path", c.reference.path, "reference");
    read_field(ref, "pretrain_steps", c.reference.pretrain.steps, "reference");
    read_field(ref, "pretrain_lr", c.reference.pretrain.lr, "reference");
    read_field(ref, "pretrain_batch_size", c.reference.pretrain.batch_size, "reference");
    read_field(ref, "pretrain_seed", c.reference.pretrain.seed, "reference");

    read_field(j, "beta_dpo", c.beta_dpo, "config");
    read_field(j, "eta", c.eta, "config");
    read_field(j, "steps", c.steps, "config");
    read_field(j, "batch_size", c.batch_size, "config");
    read_field(j, "seed", c.seed, "config");
    read_field(j, "log_every", c.log_every, "config");
    read_field(j, "verify_every", c.verify_every, "config");
    read_field(j, "probe_size", c.probe_size, "config");
    read_field(j, "probe_every", c.probe_every, "config");

    const auto& sg = detail::section(j, "safeguard");
    detail::reject_unknown(sg, {"mode", "mu", "fixed_lambda", "denom_floor", "per_sample"}, "safeguard");
    if (sg.contains("mode")) {
        read_field(sg, "mode", s, "safeguard");
        c.safeguard.mode = safeguard_mode_from_string(s);
    }
    read_field(sg, "mu", c.safeguard.mu, "safeguard");
    read_field(sg, "fixed_lambda", c.safeguard.fixed_lambda, "safeguard");
    read_field(sg, "denom_floor", c.safeguard.denom_floor, "safeguard");
    read_field(sg, "per_sample", c.safeguard.per_sample, "safeguard");

    const auto& q = detail::section(j, "quality");
    detail::reject_unknown(q, {"samples", "bootstrap"}, "quality");
    read_field(q, "samples", c.quality.samples, "quality");
    read_field(q, "bootstrap", c.quality.bootstrap, "quality");
    return c;
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

/// Sets a dotted path ("safeguard.mu") to a value given as JSON text; bare
/// words that are not valid JSON are taken as strings.
inline void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("empty key in override path: " + path);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (!node->is_object() && !node->is_null()) throw ConfigError("override path crosses a non-object: " + path);
        start = dot + 1;
    }
}

/// Named built-in configurations. The JSON files under configs/ mirror these.
///   default     mixture winners, additive-noise losers, batch of 2 pairs
///   aggressive  correlated losers, beta_dpo = 50, mu = 0.9
///   mild        correlated losers, beta_dpo = 5, mu = 0.2
/// Their values are frozen: regression fixtures depend on them.
inline RunConfig preset(const std::string& name) {
    RunConfig c;
    c.data.n_pairs = 2000;
    c.data.seed = 7;
    c.reference.pretrain = {3000, 0.05, 64, 11};
    c.seed = 1;
    if (name == "default") {
        c.data.loser_mode = LoserMode::additive_noise;
        c.data.corruption_scale = 0.5;
        c.beta_dpo = 5.0;
        c.eta = 0.01;
        c.steps = 1000;
        c.batch_size = 2;
        c.safeguard.mu = 0.5;
        return c;
    }
    if (name == "aggressive" || name == "mild") {
        c.data.loser_mode = LoserMode::correlated;
        c.data.corruption_scale = 1.0;
        c.eta = 2e-4;
        c.steps = 2000;
        c.batch_size = 64;
        c.beta_dpo = name == "aggressive" ? 50.0 : 5.0;
        c.safeguard.mu = name == "aggressive" ? 0.9 : 0.2;
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (expected default, aggressive or mild)");
}

inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    json j = parse_json_text(ss.str(), path.string());
    for (const auto& o : overrides) apply_override(j, o);
    auto cfg = config_from_json(j);
    cfg.validate();
    return cfg;
}

} // namespace sdpo::harness
