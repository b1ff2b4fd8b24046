// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>

#include "ferumal/errors.hpp"
#include "ferumal/types.hpp"

namespace ferumal {

/// Squared Exponential kernel k(x, y) = exp(-gamma * |x - y|^2).
struct KernelParams {
    double gamma = 1.0;

    void validate() const {
        if (!(gamma > 0.0) || !std::isfinite(gamma)) {
            throw ArgumentError("kernel gamma must be positive and finite, got " + std::to_string(gamma));
        }
    }
};

namespace detail {

// Sum of squared differences, accumulated left to right.
template <class A, class B>
double squared_distance(const Eigen::MatrixBase<A> &x, const Eigen::MatrixBase<B> &y) {
    double r = 0.0;
    for (Index k = 0; k < x.size(); ++k) {
        const double diff = x(k) - y(k);
        r += diff * diff;
    }
    return r;
}

}  // namespace detail

template <class A, class B>
double rbf_eval(const Eigen::MatrixBase<A> &x, const Eigen::MatrixBase<B> &y, const KernelParams &params) {
    if (x.size() != y.size()) {
        throw ArgumentError("rbf_eval: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                            std::to_string(y.size()) + ")");
    }
    if (!x.allFinite() || !y.allFinite()) { throw NumericError("rbf_eval: non-finite input"); }
    params.validate();
    return std::exp(-params.gamma * detail::squared_distance(x, y));
}

/// Entry (i, m) = k(U_i, W_m). Rows of U and W are points.
inline Matrix kernel_cross_matrix(const Matrix &U, const Matrix &W, const KernelParams &params) {
    if (U.cols() != W.cols()) {
        throw ArgumentError("kernel_cross_matrix: column mismatch (" + std::to_string(U.cols()) + " vs " +
                            std::to_string(W.cols()) + ")");
    }
    params.validate();
    Matrix K(U.rows(), W.rows());
    for (Index m = 0; m < W.rows(); ++m) {
        for (Index i = 0; i < U.rows(); ++i) {
            K(i, m) = std::exp(-params.gamma * detail::squared_distance(U.row(i), W.row(m)));
        }
    }
    return K;
}

}  // namespace ferumal
