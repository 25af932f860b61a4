// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

namespace sdpo {

/// First-order forward-mode number: value plus one directional derivative.
///
/// Instantiating the network passes with `Dual` and seeding the parameter
/// tangents with a direction `v` propagates d/ds f(theta + s v) exactly; run
/// through the reverse pass this yields the Hessian-vector product.
struct Dual {
    double value = 0.0;
    double tangent = 0.0;

    constexpr Dual() = default;
    constexpr Dual(double v) : value(v) {} // NOLINT: implicit promotion from double
    constexpr Dual(double v, double t) : value(v), tangent(t) {}

    constexpr Dual& operator+=(const Dual& o) {
        value += o.value;
        tangent += o.tangent;
        return *this;
    }
    constexpr Dual& operator-=(const Dual& o) {
        value -= o.value;
        tangent -= o.tangent;
        return *this;
    }
    constexpr Dual& operator*=(const Dual& o) {
        tangent = tangent * o.value + value * o.tangent;
        value *= o.value;
        return *this;
    }
};

constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
constexpr Dual operator-(const Dual& a) { return {-a.value, -a.tangent}; }
constexpr Dual operator/(const Dual& a, const Dual& b) {
    return {a.value / b.value, (a.tangent * b.value - a.value * b.tangent) / (b.value * b.value)};
}
constexpr bool operator>(const Dual& a, double b) { return a.value > b; }

inline Dual tanh(const Dual& a) {
    const double y = std::tanh(a.value);
    return {y, (1.0 - y * y) * a.tangent};
}

/// Scalar extraction used by generic code that must branch on a value.
inline double primal(double x) { return x; }
inline double primal(const Dual& x) { return x.value; }

} // namespace sdpo
