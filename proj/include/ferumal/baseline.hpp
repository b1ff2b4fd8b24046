// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>

#include "ferumal/layers.hpp"

namespace ferumal {

/// RealNVP-style coupling whose scale/translation come from a two-hidden-layer tanh network.
/// The network maps u1 (d) -> [s_raw, t] (2 (D - d)).
struct MlpCouplingLayer {
    Matrix W1;  // H x d
    Vector b1;
    Matrix W2;  // H x H
    Vector b2;
    Matrix W3;  // 2(D - d) x H
    Vector b3;
    Index d = 0;
    ScaleClamp clamp;

    [[nodiscard]] Index hidden() const { return W1.rows(); }
    [[nodiscard]] Index transformed() const { return W3.rows() / 2; }
    [[nodiscard]] Index dim() const { return d + transformed(); }

    /// Hidden layers get uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; the output layer starts at zero.
    static MlpCouplingLayer make(Index D, Index d, Index hidden, ScaleClamp clamp, Rng &rng) {
        if (hidden <= 0) { throw ConfigError("mlp coupling: hidden width must be >= 1"); }
        if (d < 1 || d >= D) { throw ArgumentError("mlp coupling: split size must satisfy 1 <= d < D"); }
        MlpCouplingLayer layer;
        layer.d = d;
        layer.clamp = clamp;
        auto uniform = [&rng](Index rows, Index cols, double bound) {
            std::uniform_real_distribution<double> dist(-bound, bound);
            Matrix m(rows, cols);
            for (Index i = 0; i < rows; ++i) {
                for (Index j = 0; j < cols; ++j) { m(i, j) = dist(rng); }
            }
            return m;
        };
        const double b_in = 1.0 / std::sqrt(static_cast<double>(d));
        const double b_hidden = 1.0 / std::sqrt(static_cast<double>(hidden));
        layer.W1 = uniform(hidden, d, b_in);
        layer.b1 = uniform(hidden, 1, b_in);
        layer.W2 = uniform(hidden, hidden, b_hidden);
        layer.b2 = uniform(hidden, 1, b_hidden);
        layer.W3 = Matrix::Zero(2 * (D - d), hidden);
        layer.b3 = Vector::Zero(2 * (D - d));
        return layer;
    }
};

struct MlpCouplingTerms {
    Matrix h1;
    Matrix h2;
    Matrix s_raw;
    Matrix s;
    Matrix t;
};

namespace detail {

/// tanh via the vectorised exp; absolute error ~1e-16. Saturates correctly for large |x|.
inline Matrix tanh_exp(const Matrix &x) {
    return (1.0 - 2.0 / ((2.0 * x.array()).exp() + 1.0)).matrix();
}

}  // namespace detail

inline MlpCouplingTerms mlp_coupling_terms(const MlpCouplingLayer &layer, const Matrix &u1) {
    MlpCouplingTerms terms;
    terms.h1 = detail::tanh_exp((u1 * layer.W1.transpose()).rowwise() + layer.b1.transpose());
    terms.h2 = detail::tanh_exp((terms.h1 * layer.W2.transpose()).rowwise() + layer.b2.transpose());
    const Matrix out = (terms.h2 * layer.W3.transpose()).rowwise() + layer.b3.transpose();
    const Index rest = layer.transformed();
    terms.s_raw = out.leftCols(rest);
    terms.t = out.rightCols(rest);
    terms.s = layer.clamp.apply(terms.s_raw);
    return terms;
}

inline LayerOutput mlp_coupling_forward(const MlpCouplingLayer &layer, const Matrix &u) {
    detail::require_cols(u, layer.dim(), "mlp_coupling_forward");
    const Index d = layer.d;
    const Index rest = layer.transformed();
    const Matrix u1 = u.leftCols(d);
    const auto terms = mlp_coupling_terms(layer, u1);
    LayerOutput out;
    out.y.resize(u.rows(), u.cols());
    out.y.leftCols(d) = u1;
    out.y.rightCols(rest) = terms.s.array().exp() * u.rightCols(rest).array() + terms.t.array();
    out.logdet = terms.s.rowwise().sum();
    detail::require_finite_rows(out.y, "mlp_coupling_forward");
    return out;
}

inline Matrix mlp_coupling_inverse(const MlpCouplingLayer &layer, const Matrix &y) {
    detail::require_cols(y, layer.dim(), "mlp_coupling_inverse");
    const Index d = layer.d;
    const Index rest = layer.transformed();
    const Matrix y1 = y.leftCols(d);
    const auto terms = mlp_coupling_terms(layer, y1);
    Matrix u(y.rows(), y.cols());
    u.leftCols(d) = y1;
    u.rightCols(rest) = (y.rightCols(rest).array() - terms.t.array()) * (-terms.s.array()).exp();
    detail::require_finite_rows(u, "mlp_coupling_inverse");
    return u;
}

inline Matrix mlp_coupling_backward(const MlpCouplingLayer &layer, const Matrix &u, const Matrix &grad_y,
                                    const Vector &grad_logdet, MlpCouplingLayer &grad) {
    const Index d = layer.d;
    const Index rest = layer.transformed();
    const Matrix u1 = u.leftCols(d);
    const auto terms = mlp_coupling_terms(layer, u1);

    const Matrix exp_s = terms.s.array().exp();
    const Matrix gy2 = grad_y.rightCols(rest);

    Matrix grad_u(u.rows(), u.cols());
    grad_u.rightCols(rest) = gy2.array() * exp_s.array();

    Matrix grad_s = gy2.array() * exp_s.array() * u.rightCols(rest).array();
    grad_s.colwise() += grad_logdet;

    Matrix grad_out(u.rows(), 2 * rest);
    grad_out.leftCols(rest) = grad_s.array() * layer.clamp.derivative(terms.s_raw).array();
    grad_out.rightCols(rest) = gy2;

    grad.W3 += grad_out.transpose() * terms.h2;
    grad.b3 += grad_out.colwise().sum().transpose();
    const Matrix grad_a2 = (grad_out * layer.W3).array() * (1.0 - terms.h2.array().square());
    grad.W2 += grad_a2.transpose() * terms.h1;
    grad.b2 += grad_a2.colwise().sum().transpose();
    const Matrix grad_a1 = (grad_a2 * layer.W2).array() * (1.0 - terms.h1.array().square());
    grad.W1 += grad_a1.transpose() * u1;
    grad.b1 += grad_a1.colwise().sum().transpose();

    grad_u.leftCols(d) = grad_y.leftCols(d) + grad_a1 * layer.W1;
    return grad_u;
}

/// Learnable scalars of one MLP coupling layer.
inline std::size_t mlp_coupling_param_count(Index D, Index d, Index hidden) {
    if (hidden <= 0) { throw ConfigError("baseline: hidden width must be >= 1"); }
    const auto h = static_cast<std::size_t>(hidden);
    const auto in = static_cast<std::size_t>(d);
    const auto out = static_cast<std::size_t>(2 * (D - d));
    return (in * h + h) + (h * h + h) + (h * out + out);
}

}  // namespace ferumal
