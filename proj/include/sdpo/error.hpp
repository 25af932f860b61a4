// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdpo {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Vector or matrix dimensions do not agree with the network or dataset.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value (schedule range, network widths, run config).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite value encountered where a finite one is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A caller-side precondition was violated (e.g. lambda outside [0, 1]).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Training loop aborted; carries the step index at which it happened.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Malformed binary file; carries the byte offset where decoding failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Well-formed file whose header contradicts the expected schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Run directory is missing an artifact needed for export.
class ExportError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

inline void require_config(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

} // namespace detail
} // namespace sdpo
