// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <vector>

#include "sdpo/binary_io.hpp"
#include "sdpo/network.hpp"

namespace sdpo {

// Parameter snapshot layout (all integers u32 little-endian):
//
//   magic "SDPW" | version (1) | input_dim | output_dim | time_embed_dim |
//   activation (0 tanh, 1 relu) | n_hidden | hidden_widths[n_hidden] |
//   param_count | theta[param_count] as f64 little-endian, flat order
//
// Flat order is layer by layer; each layer is its row-major (out x in)
// weight matrix followed by its bias vector.
inline constexpr std::uint32_t kParamMagic = io::magic("SDPW");
inline constexpr std::uint32_t kParamVersion = 1;

inline std::vector<std::uint8_t> encode_params(const DenoiserParams& p) {
    p.validate();
    io::ByteWriter w;
    w.put_u32(kParamMagic);
    w.put_u32(kParamVersion);
    w.put_u32(static_cast<std::uint32_t>(p.spec.input_dim));
    w.put_u32(static_cast<std::uint32_t>(p.spec.output_dim));
    w.put_u32(static_cast<std::uint32_t>(p.spec.time_embed_dim));
    w.put_u32(static_cast<std::uint32_t>(p.spec.activation));
    w.put_u32(static_cast<std::uint32_t>(p.spec.hidden_widths.size()));
    for (std::size_t h : p.spec.hidden_widths) w.put_u32(static_cast<std::uint32_t>(h));
    w.put_u32(static_cast<std::uint32_t>(p.theta.size()));
    for (double v : p.theta) w.put_f64(v);
    return w.take();
}

inline DenoiserParams decode_params(const std::vector<std::uint8_t>& bytes) {
    io::ByteReader r(bytes);
    if (r.get_u32("magic") != kParamMagic) throw ParseError("bad parameter-file magic", 0);
    if (const auto v = r.get_u32("version"); v != kParamVersion)
        throw SchemaError("unsupported parameter-file version " + std::to_string(v));
    DenoiserParams p;
    p.spec.input_dim = r.get_u32("input_dim");
    p.spec.output_dim = r.get_u32("output_dim");
    p.spec.time_embed_dim = r.get_u32("time_embed_dim");
    const std::size_t act_offset = r.offset();
    const auto act = r.get_u32("activation");
    if (act > 1) throw ParseError("unknown activation code", act_offset);
    p.spec.activation = static_cast<Activation>(act);
    const auto n_hidden = r.get_u32("n_hidden");
    if (static_cast<std::size_t>(n_hidden) * 4 > r.remaining())
        throw ParseError("hidden layer count exceeds file size", r.offset());
    for (std::uint32_t k = 0; k < n_hidden; ++k) p.spec.hidden_widths.push_back(r.get_u32("hidden width"));
    try {
        p.spec.validate();
    } catch (const ConfigError& e) {
        throw SchemaError(std::string("invalid network header: ") + e.what());
    }
    const auto count = r.get_u32("param_count");
    if (count != p.spec.param_count())
        throw SchemaError("param_count " + std::to_string(count) + " disagrees with header shape (" +
                          std::to_string(p.spec.param_count()) + ")");
    p.theta.resize(count);
    for (double& v : p.theta) v = r.get_f64("theta");
    r.expect_end();
    return p;
}

inline void save_params(const std::filesystem::path& path, const DenoiserParams& p) {
    io::write_file(path, encode_params(p));
}

inline DenoiserParams load_params(const std::filesystem::path& path) { return decode_params(io::read_file(path)); }

} // namespace sdpo
