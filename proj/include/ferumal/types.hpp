// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace ferumal {

// Batches are rows = instances, columns = dimensions.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

using Rng = std::mt19937_64;

/// Matrix of i.i.d. N(0, 1) draws, filled row by row from a generator seeded with `seed`.
inline Matrix standard_normal_matrix(Index rows, Index cols, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) { out(i, j) = normal(rng); }
    }
    return out;
}

inline Matrix standard_normal_matrix(Index rows, Index cols, Rng &rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) { out(i, j) = normal(rng); }
    }
    return out;
}

}  // namespace ferumal
