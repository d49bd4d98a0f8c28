// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace petdiff {

/// Invalid or inconsistent configuration (unknown key, bad value, hash mismatch).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing, malformed or corrupted input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN or infinity produced during training or sampling.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::int64_t index = -1) : std::runtime_error(what), index_(index) {}
    /// Offending sample index (training) or step (sampling); -1 if unknown.
    std::int64_t index() const noexcept { return index_; }

private:
    std::int64_t index_;
};

}  // namespace petdiff
