// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"

namespace ferumal {
namespace {

using testing::log_abs_det;
using testing::numerical_jacobian;
using testing::row_map;

// --- permutation -----------------------------------------------------------

TEST(Permutation, IdentityAndReversal) {
    PermutationLayer id;
    id.perm = {0, 1, 2};
    Matrix u(1, 3);
    u << 1, 2, 3;
    EXPECT_EQ(permute_forward(id, u), u);
    Matrix expected(1, 3);
    expected << 3, 2, 1;
    EXPECT_EQ(permute_forward(PermutationLayer::reversal(3), u), expected);
}

TEST(Permutation, RandomIsBijectionAndInverts) {
    Rng rng(5);
    const auto p = PermutationLayer::random(7, rng);
    EXPECT_TRUE(p.is_bijection());
    const Matrix u = standard_normal_matrix(4, 7, 1);
    EXPECT_EQ(permute_inverse(p, permute_forward(p, u)), u);
    EXPECT_EQ(permute_forward(p, permute_inverse(p, u)), u);
}

TEST(Permutation, DimensionMismatch) {
    EXPECT_THROW(permute_forward(PermutationLayer::reversal(3), Matrix::Zero(1, 4)), ArgumentError);
}

// --- actnorm ----------------------------------------------------------------

TEST(ActNorm, IdentityParameters) {
    const auto layer = ActNormLayer::identity(3);
    const Matrix u = standard_normal_matrix(5, 3, 2);
    const auto out = actnorm_forward(layer, u);
    EXPECT_EQ(out.y, u);
    EXPECT_EQ(out.logdet, Vector::Zero(5));
}

TEST(ActNorm, LogdetOfReciprocalScales) {
    ActNormLayer layer = ActNormLayer::identity(2);
    layer.scale << 2.0, 0.5;
    const auto out = actnorm_forward(layer, Matrix::Ones(3, 2));
    for (Index b = 0; b < 3; ++b) { EXPECT_NEAR(out.logdet(b), 0.0, 1e-15); }
}

TEST(ActNorm, UninitialisedIsStateError) {
    const auto layer = ActNormLayer::uninitialized(2);
    EXPECT_THROW(actnorm_forward(layer, Matrix::Zero(1, 2)), StateError);
    EXPECT_THROW(actnorm_inverse(layer, Matrix::Zero(1, 2)), StateError);
}

TEST(ActNorm, LogdetMatchesNumericalJacobian) {
    Rng rng(9);
    std::normal_distribution<double> normal(0.0, 0.5);
    for (int trial = 0; trial < 10; ++trial) {
        ActNormLayer layer = ActNormLayer::identity(4);
        for (Index j = 0; j < 4; ++j) {
            layer.scale(j) = std::exp(normal(rng)) * (j % 2 ? -1.0 : 1.0);
            layer.bias(j) = normal(rng);
        }
        const Vector x = standard_normal_matrix(1, 4, rng).row(0).transpose();
        const auto f = row_map([&](const Matrix &m) { return actnorm_forward(layer, m).y; });
        const double analytic = actnorm_forward(layer, x.transpose()).logdet(0);
        EXPECT_NEAR(analytic, log_abs_det(numerical_jacobian(f, x)), 1e-8);
        EXPECT_TRUE(actnorm_inverse(layer, actnorm_forward(layer, x.transpose()).y).isApprox(x.transpose(), 1e-14));
    }
}

TEST(ActNorm, InitialisationWhitensBatch) {
    const Matrix batch = (standard_normal_matrix(64, 3, 4) * 3.0).array() + 7.0;
    ActNormLayer layer = ActNormLayer::uninitialized(3);
    actnorm_initialize(layer, batch);
    const Matrix y = actnorm_forward(layer, batch).y;
    const RowVector mean = y.colwise().mean();
    const RowVector sd = (y.rowwise() - mean).array().square().colwise().mean().sqrt();
    for (Index j = 0; j < 3; ++j) {
        EXPECT_LT(std::abs(mean(j)), 1e-12);
        EXPECT_NEAR(sd(j), 1.0, 1e-12);
    }
}

TEST(ActNorm, ConstantColumnUsesStdFloor) {
    Matrix batch = standard_normal_matrix(10, 2, 3);
    batch.col(1).setConstant(4.0);
    ActNormLayer layer = ActNormLayer::uninitialized(2);
    actnorm_initialize(layer, batch);
    EXPECT_DOUBLE_EQ(layer.scale(1), 1.0 / kActNormStdFloor);
    EXPECT_TRUE(layer.scale.allFinite());
}

// --- kernel coupling ----------------------------------------------------------

KernelCouplingLayer make_coupling(Index D, Index N, double gamma, std::optional<double> clamp) {
    KernelCouplingLayer layer;
    layer.d = D / 2;
    layer.A_s = Matrix::Zero(D - D / 2, N);
    layer.A_t = Matrix::Zero(D - D / 2, N);
    layer.kernel.gamma = gamma;
    layer.clamp.bound = clamp;
    return layer;
}

TEST(KernelCoupling, ZeroWeightsIsIdentity) {
    const auto layer = make_coupling(4, 3, 1.0, 5.0);
    const AuxiliaryPoints aux{standard_normal_matrix(3, 2, 1)};
    const Matrix u = standard_normal_matrix(6, 4, 2);
    const auto out = coupling_forward(layer, aux, u);
    EXPECT_EQ(out.y, u);
    EXPECT_EQ(out.logdet, Vector::Zero(6));
    EXPECT_EQ(coupling_inverse(layer, aux, u), u);
}

TEST(KernelCoupling, SinglePointTranslation) {
    // D = 2, d = 1, W = [[0]], A_s = 0, A_t = 1, gamma = 1, u = (0, 2): t = k(0, 0) = 1.
    auto layer = make_coupling(2, 1, 1.0, std::nullopt);
    layer.A_t(0, 0) = 1.0;
    const AuxiliaryPoints aux{Matrix::Zero(1, 1)};
    Matrix u(1, 2);
    u << 0.0, 2.0;
    const auto out = coupling_forward(layer, aux, u);
    EXPECT_DOUBLE_EQ(out.y(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(out.y(0, 1), 3.0);
    EXPECT_DOUBLE_EQ(out.logdet(0), 0.0);
    const Matrix back = coupling_inverse(layer, aux, out.y);
    EXPECT_DOUBLE_EQ(back(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(back(0, 1), 2.0);
}

TEST(KernelCoupling, LogdetMatchesNumericalJacobian) {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        auto layer = make_coupling(4, 5, 0.7, trial % 2 ? std::optional<double>(5.0) : std::nullopt);
        layer.A_s = standard_normal_matrix(2, 5, rng) * 0.5;
        layer.A_t = standard_normal_matrix(2, 5, rng);
        const AuxiliaryPoints aux{standard_normal_matrix(5, 2, rng)};
        const Vector x = standard_normal_matrix(1, 4, rng).row(0).transpose();
        const auto f = row_map([&](const Matrix &m) { return coupling_forward(layer, aux, m).y; });
        const double analytic = coupling_forward(layer, aux, x.transpose()).logdet(0);
        const double numeric = log_abs_det(numerical_jacobian(f, x));
        EXPECT_NEAR(analytic, numeric, 1e-5 * std::max(1.0, std::abs(analytic)));
    }
}

TEST(KernelCoupling, RoundTripThousandPoints) {
    Rng rng(8);
    auto layer = make_coupling(5, 7, 0.4, 5.0);
    layer.A_s = standard_normal_matrix(3, 7, rng);
    layer.A_t = standard_normal_matrix(3, 7, rng) * 2.0;
    const AuxiliaryPoints aux{standard_normal_matrix(7, 2, rng)};
    const Matrix u = standard_normal_matrix(1000, 5, rng) * 2.0;
    const Matrix back = coupling_inverse(layer, aux, coupling_forward(layer, aux, u).y);
    EXPECT_LT((back - u).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(KernelCoupling, ClampBoundsScaleLogits) {
    auto layer = make_coupling(2, 1, 1.0, 5.0);
    layer.A_s(0, 0) = 1e6;
    const AuxiliaryPoints aux{Matrix::Zero(1, 1)};
    Matrix u(1, 2);
    u << 0.0, 1.0;
    const auto out = coupling_forward(layer, aux, u);
    EXPECT_LE(out.logdet(0), 5.0);
    EXPECT_NEAR(out.logdet(0), 5.0, 1e-12);
}

TEST(KernelCoupling, OverflowReportsRow) {
    auto layer = make_coupling(2, 1, 1.0, std::nullopt);
    layer.A_s(0, 0) = 1e4;
    const AuxiliaryPoints aux{Matrix::Zero(1, 1)};
    Matrix u(2, 2);
    u << 50.0, 1.0, 0.0, 1.0;  // row 1 sits on the auxiliary point: exp(1e4) overflows
    try {
        coupling_forward(layer, aux, u);
        FAIL() << "expected NumericError";
    } catch (const NumericError &e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    }
}

TEST(KernelCoupling, AuxWidthMismatch) {
    const auto layer = make_coupling(4, 3, 1.0, 5.0);
    const AuxiliaryPoints aux{Matrix::Zero(3, 3)};
    EXPECT_THROW(coupling_forward(layer, aux, Matrix::Zero(1, 4)), ArgumentError);
}

}  // namespace
}  // namespace ferumal
