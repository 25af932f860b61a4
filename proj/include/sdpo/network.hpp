// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdpo/dual.hpp"
#include "sdpo/error.hpp"
#include "sdpo/rng.hpp"

namespace sdpo {

enum class Activation : std::uint32_t { tanh = 0, relu = 1 };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + name + "'");
}

/// Shape of the fully-connected noise predictor eps_theta(x_t, c, t).
///
/// The input vector is the concatenation [x_t, c, embed(t)], so
/// `input_dim = output_dim + cond_dim + time_embed_dim`. Hidden layers use
/// `activation`; the output layer is linear. A `time_embed_dim` of zero drops
/// the time input altogether.
struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t output_dim = 0;
    Activation activation = Activation::tanh;
    std::size_t time_embed_dim = 0;

    static NetworkSpec for_data(std::size_t data_dim, std::size_t cond_dim,
                                std::vector<std::size_t> hidden, std::size_t time_embed_dim,
                                Activation act = Activation::tanh) {
        NetworkSpec s;
        s.input_dim = data_dim + cond_dim + time_embed_dim;
        s.hidden_widths = std::move(hidden);
        s.output_dim = data_dim;
        s.activation = act;
        s.time_embed_dim = time_embed_dim;
        s.validate();
        return s;
    }

    std::size_t data_dim() const { return output_dim; }
    std::size_t cond_dim() const { return input_dim - output_dim - time_embed_dim; }
    std::size_t num_layers() const { return hidden_widths.size() + 1; }

    std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim : hidden_widths[l - 1]; }
    std::size_t layer_out(std::size_t l) const {
        return l == hidden_widths.size() ? output_dim : hidden_widths[l];
    }

    /// Offset of layer l's weight block in theta. The block is the row-major
    /// (out x in) weight matrix followed by the out-length bias.
    std::size_t layer_offset(std::size_t l) const {
        std::size_t off = 0;
        for (std::size_t k = 0; k < l; ++k) off += layer_out(k) * (layer_in(k) + 1);
        return off;
    }

    std::size_t param_count() const { return layer_offset(num_layers()); }

    void validate() const {
        detail::require_config(output_dim >= 1, "network output_dim must be >= 1");
        detail::require_config(input_dim >= output_dim + time_embed_dim,
                               "network input_dim smaller than output_dim + time_embed_dim");
        for (std::size_t w : hidden_widths) detail::require_config(w >= 1, "hidden widths must be >= 1");
    }

    bool operator==(const NetworkSpec&) const = default;
};

/// Flat parameter vector together with the spec that gives it meaning.
struct DenoiserParams {
    NetworkSpec spec;
    std::vector<double> theta;

    void validate() const {
        spec.validate();
        detail::require_shape(theta.size() == spec.param_count(),
                              "theta length " + std::to_string(theta.size()) + " does not match spec (" +
                                  std::to_string(spec.param_count()) + ")");
        for (double v : theta)
            if (!std::isfinite(v)) throw NumericError("non-finite entry in theta");
    }

    bool operator==(const DenoiserParams&) const = default;
};

enum class InitScheme { scaled_normal, zero };

/// Weights ~ N(0, 1) / sqrt(fan_in) drawn layer by layer in flat order from
/// `Rng(seed)`; biases zero. `InitScheme::zero` zeroes everything.
inline DenoiserParams init_network(const NetworkSpec& spec, std::uint64_t seed,
                                   InitScheme scheme = InitScheme::scaled_normal) {
    spec.validate();
    DenoiserParams p{spec, std::vector<double>(spec.param_count(), 0.0)};
    if (scheme == InitScheme::zero) return p;
    Rng rng(seed);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const std::size_t n_in = spec.layer_in(l), n_out = spec.layer_out(l);
        const double scale = 1.0 / std::sqrt(static_cast<double>(n_in));
        double* w = p.theta.data() + spec.layer_offset(l);
        for (std::size_t k = 0; k < n_in * n_out; ++k) w[k] = scale * rng.gaussian();
    }
    return p;
}

/// Fixed sinusoidal embedding: entry i is sin(t f_k) for even i and
/// cos(t f_k) for odd i, with k = i / 2 and f_k = 10000^(-2k / dim).
inline void time_embedding(int t, std::span<double> out) {
    const double dim = static_cast<double>(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double k = static_cast<double>(i / 2);
        const double freq = std::pow(10000.0, -2.0 * k / dim);
        const double arg = static_cast<double>(t) * freq;
        out[i] = (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
}

/// Per-layer activations recorded by the forward pass: `layers[0]` is the
/// network input, `layers[l + 1]` the output of layer l.
template <class S>
struct ForwardTrace {
    std::vector<std::vector<S>> layers;

    std::span<const S> output() const { return layers.back(); }
};

namespace detail {

template <class S>
S activate(Activation a, const S& z) {
    if (a == Activation::tanh) {
        using std::tanh;
        return tanh(z);
    }
    return primal(z) > 0.0 ? z : S(0.0);
}

// Derivative expressed through the post-activation value y.
template <class S>
S activate_grad(Activation a, const S& y) {
    if (a == Activation::tanh) return S(1.0) - y * y;
    return S(primal(y) > 0.0 ? 1.0 : 0.0);
}

inline void check_inputs(const NetworkSpec& spec, std::size_t theta_size, std::size_t x_size,
                         std::size_t c_size, int t) {
    require_shape(theta_size == spec.param_count(), "theta length does not match network spec");
    require_shape(x_size == spec.data_dim(), "x_t has " + std::to_string(x_size) + " entries, expected " +
                                                 std::to_string(spec.data_dim()));
    require_shape(c_size == spec.cond_dim(), "condition has " + std::to_string(c_size) +
                                                 " entries, expected " + std::to_string(spec.cond_dim()));
    require_shape(t >= 0, "timestep must be non-negative");
}

} // namespace detail

/// Forward pass over an arbitrary scalar type (double or Dual).
template <class S>
ForwardTrace<S> forward_trace(const NetworkSpec& spec, std::span<const S> theta, std::span<const double> x_t,
                              std::span<const double> c, int t) {
    detail::check_inputs(spec, theta.size(), x_t.size(), c.size(), t);
    ForwardTrace<S> trace;
    trace.layers.resize(spec.num_layers() + 1);

    std::vector<double> input(spec.input_dim);
    std::copy(x_t.begin(), x_t.end(), input.begin());
    std::copy(c.begin(), c.end(), input.begin() + static_cast<std::ptrdiff_t>(x_t.size()));
    time_embedding(t, std::span<double>(input).subspan(x_t.size() + c.size()));
    trace.layers[0].assign(input.begin(), input.end());

    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const std::size_t n_in = spec.layer_in(l), n_out = spec.layer_out(l);
        const S* w = theta.data() + spec.layer_offset(l);
        const S* b = w + n_in * n_out;
        const std::vector<S>& a = trace.layers[l];
        std::vector<S>& z = trace.layers[l + 1];
        z.resize(n_out);
        const bool hidden = l + 1 < spec.num_layers();
        for (std::size_t j = 0; j < n_out; ++j) {
            S acc = b[j];
            const S* row = w + j * n_in;
            for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * a[i];
            z[j] = hidden ? detail::activate(spec.activation, acc) : acc;
        }
    }
    return trace;
}

/// Reverse pass: accumulates d(cotangent . eps_hat)/d(theta) into `grad`.
template <class S>
void backprop(const NetworkSpec& spec, std::span<const S> theta, const ForwardTrace<S>& trace,
              std::span<const S> cotangent, std::span<S> grad) {
    detail::require_shape(cotangent.size() == spec.output_dim, "cotangent length does not match output_dim");
    detail::require_shape(grad.size() == spec.param_count(), "gradient buffer length does not match spec");

    std::vector<S> delta(cotangent.begin(), cotangent.end());
    std::vector<S> prev;
    for (std::size_t l = spec.num_layers(); l-- > 0;) {
        const std::size_t n_in = spec.layer_in(l), n_out = spec.layer_out(l);
        const std::size_t off = spec.layer_offset(l);
        const S* w = theta.data() + off;
        S* gw = grad.data() + off;
        S* gb = gw + n_in * n_out;
        const std::vector<S>& a = trace.layers[l];
        for (std::size_t j = 0; j < n_out; ++j) {
            S* grow = gw + j * n_in;
            for (std::size_t i = 0; i < n_in; ++i) grow[i] += delta[j] * a[i];
            gb[j] += delta[j];
        }
        if (l == 0) break;
        prev.assign(n_in, S(0.0));
        for (std::size_t j = 0; j < n_out; ++j) {
            const S* row = w + j * n_in;
            for (std::size_t i = 0; i < n_in; ++i) prev[i] += row[i] * delta[j];
        }
        for (std::size_t i = 0; i < n_in; ++i) prev[i] *= detail::activate_grad(spec.activation, a[i]);
        delta.swap(prev);
    }
}

/// Predicted noise eps_theta(x_t, c, t).
inline std::vector<double> forward(const DenoiserParams& params, std::span<const double> x_t,
                                   std::span<const double> c, int t) {
    auto trace = forward_trace<double>(params.spec, params.theta, x_t, c, t);
    return std::move(trace.layers.back());
}

/// Adds `scale * J^T cotangent` to `grad`, where J = d eps_hat / d theta.
inline void accumulate_param_grad(const DenoiserParams& params, std::span<const double> x_t,
                                  std::span<const double> c, int t, std::span<const double> cotangent,
                                  std::span<double> grad, double scale = 1.0) {
    const auto trace = forward_trace<double>(params.spec, params.theta, x_t, c, t);
    if (scale == 1.0) {
        backprop<double>(params.spec, params.theta, trace, cotangent, grad);
        return;
    }
    std::vector<double> scaled(cotangent.begin(), cotangent.end());
    for (double& v : scaled) v *= scale;
    backprop<double>(params.spec, params.theta, trace, scaled, grad);
}

/// J^T cotangent: exact gradient of the scalar cotangent . eps_theta(x_t, c, t).
inline std::vector<double> param_grad(const DenoiserParams& params, std::span<const double> x_t,
                                      std::span<const double> c, int t, std::span<const double> cotangent) {
    std::vector<double> grad(params.spec.param_count(), 0.0);
    accumulate_param_grad(params, x_t, c, t, cotangent, grad);
    return grad;
}

} // namespace sdpo
