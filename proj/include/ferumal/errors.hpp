// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ferumal {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape mismatch, empty input, or an out-of-range argument.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Non-finite input or an overflow during evaluation.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A layer was used before its data-dependent initialisation.
class StateError : public Error {
public:
    using Error::Error;
};

/// Invalid or unknown configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unparsable or degenerate input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite or runaway training loss.
class DivergedError : public NumericError {
public:
    DivergedError(const std::string &what, std::size_t iteration)
        : NumericError(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}

    [[nodiscard]] std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

}  // namespace ferumal
