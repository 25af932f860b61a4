// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sdpo/binary_io.hpp"
#include "sdpo/error.hpp"
#include "sdpo/rng.hpp"

namespace sdpo {

/// One preference triple (c, x0_w, x0_l).
struct PreferencePair {
    std::vector<double> c;
    std::vector<double> x0_w;
    std::vector<double> x0_l;

    bool operator==(const PreferencePair&) const = default;
};

struct Dataset {
    std::size_t dim = 0;
    std::size_t cond_dim = 0;
    std::vector<PreferencePair> pairs;

    std::size_t size() const { return pairs.size(); }

    void validate() const {
        if (pairs.empty()) throw SchemaError("dataset must contain at least one pair");
        for (const auto& p : pairs) {
            detail::require_shape(p.c.size() == cond_dim, "pair condition dimension differs from dataset");
            detail::require_shape(p.x0_w.size() == dim && p.x0_l.size() == dim,
                                  "pair sample dimension differs from dataset");
            for (const auto* v : {&p.c, &p.x0_w, &p.x0_l})
                for (double x : *v)
                    if (!std::isfinite(x)) throw NumericError("non-finite entry in dataset");
        }
    }

    bool operator==(const Dataset&) const = default;
};

enum class WinnerDist { gauss_mixture, ring };
enum class LoserMode { additive_noise, shifted_mode, correlated };

inline const char* to_string(WinnerDist d) { return d == WinnerDist::ring ? "ring" : "gauss_mixture"; }

inline const char* to_string(LoserMode m) {
    switch (m) {
    case LoserMode::additive_noise: return "additive_noise";
    case LoserMode::shifted_mode: return "shifted_mode";
    case LoserMode::correlated: return "correlated";
    }
    return "?";
}

inline WinnerDist winner_dist_from_string(const std::string& s) {
    if (s == "gauss_mixture") return WinnerDist::gauss_mixture;
    if (s == "ring") return WinnerDist::ring;
    throw ConfigError("unknown winner distribution '" + s + "'");
}

inline LoserMode loser_mode_from_string(const std::string& s) {
    if (s == "additive_noise") return LoserMode::additive_noise;
    if (s == "shifted_mode") return LoserMode::shifted_mode;
    if (s == "correlated") return LoserMode::correlated;
    throw ConfigError("unknown loser mode '" + s + "'");
}

/// Synthetic preference data.
///
/// Winners come from `n_modes` components arranged on a circle of radius
/// `mode_radius` in the first two coordinates (gauss_mixture: isotropic
/// Gaussians of std `mode_std` around the centers; ring: uniform angle,
/// radius jittered by `mode_std`, with mode = angular sector). Losers:
///
///   additive_noise  x_l = x_w + s z
///   shifted_mode    x_l = fresh draw from the winner's mode + s (1,...,1)/sqrt(dim)
///   correlated      x_l = m + (1 + s)(x_w - m) + 0.1 s z,  m = winner's mode center
///
/// with s = corruption_scale and z ~ N(0, I). When `conditional` is set the
/// condition is the one-hot mode index, otherwise it is empty.
struct DatasetSpec {
    std::size_t dim = 2;
    std::size_t n_pairs = 1000;
    WinnerDist winner_dist = WinnerDist::gauss_mixture;
    LoserMode loser_mode = LoserMode::additive_noise;
    double corruption_scale = 0.5;
    std::uint64_t seed = 0;
    std::size_t n_modes = 4;
    bool conditional = false;
    double mode_radius = 2.0;
    double mode_std = 0.25;

    std::size_t cond_dim() const { return conditional ? n_modes : 0; }

    void validate() const {
        detail::require_config(dim >= 2, "dataset dim must be >= 2");
        detail::require_config(n_pairs >= 1, "dataset n_pairs must be >= 1");
        detail::require_config(corruption_scale > 0.0, "corruption_scale must be > 0");
        detail::require_config(n_modes >= 1, "n_modes must be >= 1");
        detail::require_config(mode_std > 0.0, "mode_std must be > 0");
    }
};

namespace detail {

inline std::vector<double> mode_center(const DatasetSpec& spec, std::size_t k) {
    std::vector<double> m(spec.dim, 0.0);
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.n_modes);
    m[0] = spec.mode_radius * std::cos(phi);
    m[1] = spec.mode_radius * std::sin(phi);
    return m;
}

// Draws one winner-distribution sample; `forced_mode` pins the component.
inline std::vector<double> draw_winner(const DatasetSpec& spec, Rng& rng, std::size_t& mode,
                                       std::optional<std::size_t> forced_mode = std::nullopt) {
    std::vector<double> x(spec.dim);
    if (spec.winner_dist == WinnerDist::gauss_mixture) {
        mode = forced_mode ? *forced_mode : static_cast<std::size_t>(rng.below(spec.n_modes));
        const auto m = mode_center(spec, mode);
        for (std::size_t i = 0; i < spec.dim; ++i) x[i] = m[i] + spec.mode_std * rng.gaussian();
        return x;
    }
    const double sector = 2.0 * std::numbers::pi / static_cast<double>(spec.n_modes);
    double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (forced_mode) phi = sector * (static_cast<double>(*forced_mode) + rng.uniform());
    mode = std::min(static_cast<std::size_t>(phi / sector), spec.n_modes - 1);
    const double r = spec.mode_radius + spec.mode_std * rng.gaussian();
    x[0] = r * std::cos(phi);
    x[1] = r * std::sin(phi);
    for (std::size_t i = 2; i < spec.dim; ++i) x[i] = spec.mode_std * rng.gaussian();
    return x;
}

} // namespace detail

/// Deterministic given `spec.seed`; pairs are drawn sequentially from one
/// SplitMix64 stream.
inline Dataset generate_pairs(const DatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Dataset ds{spec.dim, spec.cond_dim(), {}};
    ds.pairs.reserve(spec.n_pairs);
    const double s = spec.corruption_scale;
    for (std::size_t n = 0; n < spec.n_pairs; ++n) {
        PreferencePair p;
        std::size_t mode = 0;
        p.x0_w = detail::draw_winner(spec, rng, mode);
        p.x0_l.resize(spec.dim);
        switch (spec.loser_mode) {
        case LoserMode::additive_noise:
            for (std::size_t i = 0; i < spec.dim; ++i) p.x0_l[i] = p.x0_w[i] + s * rng.gaussian();
            break;
        case LoserMode::shifted_mode: {
            std::size_t unused = 0;
            p.x0_l = detail::draw_winner(spec, rng, unused, mode);
            const double shift = s / std::sqrt(static_cast<double>(spec.dim));
            for (double& v : p.x0_l) v += shift;
            break;
        }
        case LoserMode::correlated: {
            const auto m = detail::mode_center(spec, mode);
            for (std::size_t i = 0; i < spec.dim; ++i)
                p.x0_l[i] = m[i] + (1.0 + s) * (p.x0_w[i] - m[i]) + 0.1 * s * rng.gaussian();
            break;
        }
        }
        if (spec.conditional) {
            p.c.assign(spec.n_modes, 0.0);
            p.c[mode] = 1.0;
        }
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

/// `n` independent draws from the winner distribution of `spec`, from a
/// stream seeded by `seed` (not `spec.seed`). When `conditions` is given it
/// receives each draw's condition vector (one-hot mode, or empty).
inline std::vector<std::vector<double>> sample_winners(const DatasetSpec& spec, std::size_t n, std::uint64_t seed,
                                                       std::vector<std::vector<double>>* conditions = nullptr) {
    spec.validate();
    Rng rng(seed);
    std::vector<std::vector<double>> out;
    out.reserve(n);
    if (conditions) conditions->clear();
    std::size_t mode = 0;
    for (std::size_t k = 0; k < n; ++k) {
        out.push_back(detail::draw_winner(spec, rng, mode));
        if (!conditions) continue;
        std::vector<double> c;
        if (spec.conditional) {
            c.assign(spec.n_modes, 0.0);
            c[mode] = 1.0;
        }
        conditions->push_back(std::move(c));
    }
    return out;
}

// Dataset file layout (u32 little-endian header, f64 little-endian payload):
//
//   magic "SDPD" | version (1) | dim | cond_dim | n_pairs |
//   n_pairs x ( c[cond_dim] | x0_w[dim] | x0_l[dim] )
inline constexpr std::uint32_t kDatasetMagic = io::magic("SDPD");
inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetShape {
    std::size_t dim = 0;
    std::size_t cond_dim = 0;
};

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
    ds.validate();
    io::ByteWriter w;
    w.put_u32(kDatasetMagic);
    w.put_u32(kDatasetVersion);
    w.put_u32(static_cast<std::uint32_t>(ds.dim));
    w.put_u32(static_cast<std::uint32_t>(ds.cond_dim));
    w.put_u32(static_cast<std::uint32_t>(ds.pairs.size()));
    for (const auto& p : ds.pairs) {
        for (double v : p.c) w.put_f64(v);
        for (double v : p.x0_w) w.put_f64(v);
        for (double v : p.x0_l) w.put_f64(v);
    }
    return w.take();
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes,
                              std::optional<DatasetShape> expected = std::nullopt) {
    io::ByteReader r(bytes);
    if (r.get_u32("magic") != kDatasetMagic) throw ParseError("bad dataset magic", 0);
    if (const auto v = r.get_u32("version"); v != kDatasetVersion)
        throw SchemaError("unsupported dataset version " + std::to_string(v));
    Dataset ds;
    ds.dim = r.get_u32("dim");
    ds.cond_dim = r.get_u32("cond_dim");
    const std::size_t n_pairs = r.get_u32("n_pairs");
    if (n_pairs == 0) throw SchemaError("dataset header declares zero pairs");
    if (ds.dim == 0) throw SchemaError("dataset header declares zero dimension");
    if (expected && (expected->dim != ds.dim || expected->cond_dim != ds.cond_dim))
        throw SchemaError("dataset dimensions (" + std::to_string(ds.dim) + ", " + std::to_string(ds.cond_dim) +
                          ") do not match expected (" + std::to_string(expected->dim) + ", " +
                          std::to_string(expected->cond_dim) + ")");
    const std::size_t per_pair = 8 * (ds.cond_dim + 2 * ds.dim);
    if (r.remaining() / per_pair < n_pairs) {
        const std::size_t complete = r.remaining() / per_pair;
        throw ParseError("truncated pair payload (" + std::to_string(complete) + " of " +
                             std::to_string(n_pairs) + " pairs complete)",
                         r.offset() + r.remaining());
    }
    ds.pairs.resize(n_pairs);
    for (auto& p : ds.pairs) {
        p.c.resize(ds.cond_dim);
        p.x0_w.resize(ds.dim);
        p.x0_l.resize(ds.dim);
        for (double& v : p.c) v = r.get_f64("condition");
        for (double& v : p.x0_w) v = r.get_f64("winner");
        for (double& v : p.x0_l) v = r.get_f64("loser");
    }
    r.expect_end();
    ds.validate();
    return ds;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    io::write_file(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path, std::optional<DatasetShape> expected = std::nullopt) {
    return decode_dataset(io::read_file(path), expected);
}

/// Human-readable CSV: header `c0..,w0..,l0..`, one row per pair, 17 digits.
inline void write_dataset_text(std::ostream& os, const Dataset& ds) {
    std::string sep;
    for (std::size_t i = 0; i < ds.cond_dim; ++i, sep = ",") os << sep << 'c' << i;
    for (std::size_t i = 0; i < ds.dim; ++i, sep = ",") os << sep << 'w' << i;
    for (std::size_t i = 0; i < ds.dim; ++i, sep = ",") os << sep << 'l' << i;
    os << '\n';
    const auto old_precision = os.precision(17);
    for (const auto& p : ds.pairs) {
        sep.clear();
        for (const auto* v : {&p.c, &p.x0_w, &p.x0_l})
            for (double x : *v) {
                os << sep << x;
                sep = ",";
            }
        os << '\n';
    }
    os.precision(old_precision);
}

} // namespace sdpo
