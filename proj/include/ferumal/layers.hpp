// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ferumal/errors.hpp"
#include "ferumal/kernel.hpp"
#include "ferumal/types.hpp"

namespace ferumal {

/// Output of an invertible layer: transformed batch and per-row log|det J|.
struct LayerOutput {
    Matrix y;
    Vector logdet;
};

/// Soft clamp s <- c * tanh(s_raw / c) on scale logits. Disabled when `bound` is empty.
struct ScaleClamp {
    std::optional<double> bound;

    [[nodiscard]] Matrix apply(const Matrix &raw) const {
        if (!bound) { return raw; }
        const double c = *bound;
        return (raw.array() / c).tanh() * c;
    }

    /// ds / ds_raw evaluated at `raw`.
    [[nodiscard]] Matrix derivative(const Matrix &raw) const {
        if (!bound) { return Matrix::Ones(raw.rows(), raw.cols()); }
        const auto th = (raw.array() / *bound).tanh();
        return 1.0 - th * th;
    }
};

namespace detail {

inline void require_cols(const Matrix &m, Index cols, const char *where) {
    if (m.cols() != cols) {
        throw ArgumentError(std::string(where) + ": expected " + std::to_string(cols) + " columns, got " +
                            std::to_string(m.cols()));
    }
}

inline void require_finite_rows(const Matrix &m, const char *where) {
    for (Index b = 0; b < m.rows(); ++b) {
        if (!m.row(b).allFinite()) {
            throw NumericError(std::string(where) + ": non-finite value in batch row " + std::to_string(b));
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Permutation

enum class PermutationKind { random, reversal };

struct PermutationLayer {
    std::vector<Index> perm;  // y_j = u_{perm[j]}, zero-based
    PermutationKind kind = PermutationKind::random;

    [[nodiscard]] Index dim() const { return static_cast<Index>(perm.size()); }

    static PermutationLayer reversal(Index D) {
        PermutationLayer p;
        p.kind = PermutationKind::reversal;
        p.perm.resize(static_cast<std::size_t>(D));
        for (Index j = 0; j < D; ++j) { p.perm[static_cast<std::size_t>(j)] = D - 1 - j; }
        return p;
    }

    static PermutationLayer random(Index D, Rng &rng) {
        PermutationLayer p;
        p.kind = PermutationKind::random;
        p.perm.resize(static_cast<std::size_t>(D));
        std::iota(p.perm.begin(), p.perm.end(), Index{0});
        std::shuffle(p.perm.begin(), p.perm.end(), rng);
        return p;
    }

    [[nodiscard]] bool is_bijection() const {
        std::vector<bool> seen(perm.size(), false);
        for (Index j : perm) {
            if (j < 0 || j >= dim() || seen[static_cast<std::size_t>(j)]) { return false; }
            seen[static_cast<std::size_t>(j)] = true;
        }
        return true;
    }

    [[nodiscard]] std::vector<Index> inverse_perm() const {
        std::vector<Index> inv(perm.size());
        for (std::size_t j = 0; j < perm.size(); ++j) { inv[static_cast<std::size_t>(perm[j])] = static_cast<Index>(j); }
        return inv;
    }
};

inline Matrix permute_forward(const PermutationLayer &layer, const Matrix &u) {
    detail::require_cols(u, layer.dim(), "permute_forward");
    Matrix y(u.rows(), u.cols());
    for (Index j = 0; j < layer.dim(); ++j) { y.col(j) = u.col(layer.perm[static_cast<std::size_t>(j)]); }
    return y;
}

inline Matrix permute_inverse(const PermutationLayer &layer, const Matrix &y) {
    detail::require_cols(y, layer.dim(), "permute_inverse");
    Matrix u(y.rows(), y.cols());
    for (Index j = 0; j < layer.dim(); ++j) { u.col(layer.perm[static_cast<std::size_t>(j)]) = y.col(j); }
    return u;
}

// The gradient of a permutation is its inverse applied to the upstream gradient.
inline Matrix permute_backward(const PermutationLayer &layer, const Matrix &grad_y) {
    return permute_inverse(layer, grad_y);
}

// ---------------------------------------------------------------------------
// ActNorm: y = scale * u + bias, per dimension.

struct ActNormLayer {
    Vector scale;
    Vector bias;
    bool initialized = false;

    static ActNormLayer identity(Index D) {
        return ActNormLayer{Vector::Ones(D), Vector::Zero(D), true};
    }

    static ActNormLayer uninitialized(Index D) {
        return ActNormLayer{Vector::Ones(D), Vector::Zero(D), false};
    }

    [[nodiscard]] Index dim() const { return scale.size(); }
};

inline constexpr double kActNormStdFloor = 1e-6;

/// Sets scale/bias so that `batch` maps to per-dimension mean 0 and (population) std 1.
inline void actnorm_initialize(ActNormLayer &layer, const Matrix &batch) {
    detail::require_cols(batch, layer.dim(), "actnorm_initialize");
    if (batch.rows() == 0) { throw ArgumentError("actnorm_initialize: empty batch"); }
    const RowVector mean = batch.colwise().mean();
    const Matrix centered = batch.rowwise() - mean;
    const RowVector var = centered.array().square().colwise().mean();
    for (Index j = 0; j < layer.dim(); ++j) {
        const double sd = std::max(std::sqrt(var(j)), kActNormStdFloor);
        layer.scale(j) = 1.0 / sd;
        layer.bias(j) = -mean(j) / sd;
    }
    layer.initialized = true;
}

inline double actnorm_logdet(const ActNormLayer &layer) {
    return layer.scale.array().abs().log().sum();
}

inline LayerOutput actnorm_forward(const ActNormLayer &layer, const Matrix &u) {
    if (!layer.initialized) { throw StateError("actnorm_forward: layer used before initialisation"); }
    detail::require_cols(u, layer.dim(), "actnorm_forward");
    LayerOutput out;
    out.y = (u.array().rowwise() * layer.scale.transpose().array()).rowwise() + layer.bias.transpose().array();
    out.logdet = Vector::Constant(u.rows(), actnorm_logdet(layer));
    return out;
}

inline Matrix actnorm_inverse(const ActNormLayer &layer, const Matrix &y) {
    if (!layer.initialized) { throw StateError("actnorm_inverse: layer used before initialisation"); }
    detail::require_cols(y, layer.dim(), "actnorm_inverse");
    return (y.array().rowwise() - layer.bias.transpose().array()).rowwise() / layer.scale.transpose().array();
}

/// Backpropagates through ActNorm. Accumulates into `grad` and returns dL/du.
inline Matrix actnorm_backward(const ActNormLayer &layer, const Matrix &u, const Matrix &grad_y,
                               const Vector &grad_logdet, ActNormLayer &grad) {
    const double gld = grad_logdet.sum();
    grad.scale.array() += (grad_y.array() * u.array()).colwise().sum().transpose() + gld / layer.scale.array();
    grad.bias += grad_y.colwise().sum().transpose();
    return grad_y.array().rowwise() * layer.scale.transpose().array();
}

// ---------------------------------------------------------------------------
// Kernelised affine coupling with auxiliary points.

/// Learnable points in the space of the unchanged half, one per row.
struct AuxiliaryPoints {
    Matrix W;  // N x d
    bool shared = false;
    bool frozen = false;

    [[nodiscard]] Index count() const { return W.rows(); }
};

/// Scale and translation are s = clamp(A_s K(u1, W)^T), t = A_t K(u1, W)^T.
struct KernelCouplingLayer {
    std::size_t aux_index = 0;  // into FlowModel::aux
    Matrix A_s;                 // (D - d) x N
    Matrix A_t;                 // (D - d) x N
    KernelParams kernel;
    Index d = 0;
    ScaleClamp clamp;

    [[nodiscard]] Index dim() const { return d + A_s.rows(); }
};

/// Intermediate quantities of a kernel coupling evaluated at the unchanged half u1.
struct KernelCouplingTerms {
    Matrix K;      // B x N
    Matrix s_raw;  // B x (D - d)
    Matrix s;      // B x (D - d), post clamp
    Matrix t;      // B x (D - d)
};

inline KernelCouplingTerms kernel_coupling_terms(const KernelCouplingLayer &layer, const AuxiliaryPoints &aux,
                                                 const Matrix &u1) {
    if (aux.W.cols() != layer.d) {
        throw ArgumentError("kernel coupling: auxiliary points have " + std::to_string(aux.W.cols()) +
                            " columns, expected " + std::to_string(layer.d));
    }
    KernelCouplingTerms terms;
    terms.K = kernel_cross_matrix(u1, aux.W, layer.kernel);
    terms.s_raw = terms.K * layer.A_s.transpose();
    terms.s = layer.clamp.apply(terms.s_raw);
    terms.t = terms.K * layer.A_t.transpose();
    return terms;
}

inline LayerOutput coupling_forward(const KernelCouplingLayer &layer, const AuxiliaryPoints &aux, const Matrix &u) {
    detail::require_cols(u, layer.dim(), "coupling_forward");
    const Index d = layer.d;
    const Index rest = u.cols() - d;
    const Matrix u1 = u.leftCols(d);
    const auto terms = kernel_coupling_terms(layer, aux, u1);
    LayerOutput out;
    out.y.resize(u.rows(), u.cols());
    out.y.leftCols(d) = u1;
    out.y.rightCols(rest) = terms.s.array().exp() * u.rightCols(rest).array() + terms.t.array();
    out.logdet = terms.s.rowwise().sum();
    detail::require_finite_rows(out.y, "coupling_forward");
    return out;
}

inline Matrix coupling_inverse(const KernelCouplingLayer &layer, const AuxiliaryPoints &aux, const Matrix &y) {
    detail::require_cols(y, layer.dim(), "coupling_inverse");
    const Index d = layer.d;
    const Index rest = y.cols() - d;
    const Matrix y1 = y.leftCols(d);
    const auto terms = kernel_coupling_terms(layer, aux, y1);
    Matrix u(y.rows(), y.cols());
    u.leftCols(d) = y1;
    u.rightCols(rest) = (y.rightCols(rest).array() - terms.t.array()) * (-terms.s.array()).exp();
    detail::require_finite_rows(u, "coupling_inverse");
    return u;
}

/// Backpropagates through a kernel coupling. Parameter gradients are accumulated into
/// `grad` (A_s, A_t) and `grad_aux` (W); returns dL/du.
inline Matrix coupling_backward(const KernelCouplingLayer &layer, const AuxiliaryPoints &aux, const Matrix &u,
                                const Matrix &grad_y, const Vector &grad_logdet, KernelCouplingLayer &grad,
                                AuxiliaryPoints &grad_aux) {
    const Index d = layer.d;
    const Index rest = u.cols() - d;
    const Matrix u1 = u.leftCols(d);
    const auto terms = kernel_coupling_terms(layer, aux, u1);

    const Matrix exp_s = terms.s.array().exp();
    const Matrix gy2 = grad_y.rightCols(rest);

    Matrix grad_u(u.rows(), u.cols());
    grad_u.rightCols(rest) = gy2.array() * exp_s.array();

    // dL/ds includes the log-det term, which is the row sum of s.
    Matrix grad_s = gy2.array() * exp_s.array() * u.rightCols(rest).array();
    grad_s.colwise() += grad_logdet;
    const Matrix grad_s_raw = grad_s.array() * layer.clamp.derivative(terms.s_raw).array();

    grad.A_s += grad_s_raw.transpose() * terms.K;
    grad.A_t += gy2.transpose() * terms.K;

    // dK_bm/du1_b = -2 gamma K_bm (u1_b - w_m); dK_bm/dw_m = -dK_bm/du1_b.
    const Matrix G = (grad_s_raw * layer.A_s + gy2 * layer.A_t).cwiseProduct(terms.K);
    const double two_gamma = 2.0 * layer.kernel.gamma;
    const Vector row_sum = G.rowwise().sum();
    const RowVector col_sum = G.colwise().sum();
    grad_u.leftCols(d) = grad_y.leftCols(d) - two_gamma * (u1.array().colwise() * row_sum.array()).matrix() +
                         two_gamma * (G * aux.W);
    if (!aux.frozen) {
        grad_aux.W += two_gamma * (G.transpose() * u1) -
                      two_gamma * (aux.W.array().colwise() * col_sum.transpose().array()).matrix();
    }
    return grad_u;
}

}  // namespace ferumal
