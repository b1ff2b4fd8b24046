// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ferumal/baseline.hpp"
#include "ferumal/layers.hpp"

namespace ferumal {

enum class CouplingKind { kernel, mlp };

using Layer = std::variant<ActNormLayer, PermutationLayer, KernelCouplingLayer, MlpCouplingLayer>;

/// Chain of layers mapping data x to latent z with a standard-normal base.
/// Each block is: ActNorm, random permutation, coupling, reversal permutation, coupling.
struct FlowModel {
    Index dim = 0;
    Index blocks = 0;
    CouplingKind coupling = CouplingKind::kernel;
    std::vector<Layer> layers;
    std::vector<AuxiliaryPoints> aux;  // referenced by KernelCouplingLayer::aux_index

    [[nodiscard]] Index split() const { return dim / 2; }

    [[nodiscard]] bool shared_aux() const { return aux.size() == 1 && aux.front().shared; }

    [[nodiscard]] bool initialized() const {
        for (const auto &layer : layers) {
            if (const auto *an = std::get_if<ActNormLayer>(&layer); an && !an->initialized) { return false; }
        }
        return true;
    }

    [[nodiscard]] std::size_t coupling_layers() const {
        std::size_t n = 0;
        for (const auto &layer : layers) {
            n += std::holds_alternative<KernelCouplingLayer>(layer) || std::holds_alternative<MlpCouplingLayer>(layer);
        }
        return n;
    }
};

struct KernelFlowOptions {
    Index dim = 2;
    Index blocks = 5;
    Index aux_points = 50;
    bool shared_aux = false;
    bool freeze_aux = false;
    double gamma = 1.0;
    std::vector<double> gamma_per_layer;  // empty: every coupling uses `gamma`
    std::optional<double> s_clamp = 5.0;
    std::uint64_t seed = 0;
};

struct MlpFlowOptions {
    Index dim = 2;
    Index blocks = 5;
    Index hidden = 64;
    std::optional<double> s_clamp = 5.0;
    std::uint64_t seed = 0;
};

/// True when, for every position of the block input, at least one of the block's two
/// couplings places it in the transformed half.
inline bool block_covers_all_dims(const PermutationLayer &random_perm, Index d) {
    const Index D = random_perm.dim();
    std::vector<bool> covered(static_cast<std::size_t>(D), false);
    // First coupling transforms positions p >= d of the permuted input.
    for (Index p = d; p < D; ++p) { covered[static_cast<std::size_t>(random_perm.perm[static_cast<std::size_t>(p)])] = true; }
    // After the reversal, position q holds the first coupling's position D - 1 - q.
    for (Index q = d; q < D; ++q) {
        covered[static_cast<std::size_t>(random_perm.perm[static_cast<std::size_t>(D - 1 - q)])] = true;
    }
    for (bool c : covered) {
        if (!c) { return false; }
    }
    return true;
}

namespace detail {

inline constexpr int kMaxPermutationRetries = 100;

inline PermutationLayer sample_block_permutation(Index D, Index d, Rng &rng) {
    for (int attempt = 0; attempt < kMaxPermutationRetries; ++attempt) {
        auto perm = PermutationLayer::random(D, rng);
        if (block_covers_all_dims(perm, d)) { return perm; }
    }
    throw ArgumentError("could not sample a permutation covering all dimensions");
}

inline void validate_structure(Index dim, Index blocks) {
    if (dim < 2) { throw ConfigError("flow dimensionality must be >= 2, got " + std::to_string(dim)); }
    if (blocks < 1) { throw ConfigError("flow needs at least one block"); }
}

template <class MakeCoupling>
FlowModel build_flow(Index dim, Index blocks, CouplingKind kind, Rng &rng, MakeCoupling &&make_coupling) {
    validate_structure(dim, blocks);
    FlowModel model;
    model.dim = dim;
    model.blocks = blocks;
    model.coupling = kind;
    const Index d = dim / 2;
    std::size_t coupling_index = 0;
    for (Index b = 0; b < blocks; ++b) {
        model.layers.emplace_back(ActNormLayer::uninitialized(dim));
        model.layers.emplace_back(sample_block_permutation(dim, d, rng));
        model.layers.emplace_back(make_coupling(coupling_index++));
        model.layers.emplace_back(PermutationLayer::reversal(dim));
        model.layers.emplace_back(make_coupling(coupling_index++));
    }
    return model;
}

}  // namespace detail

/// Kernel flow with zero weights (identity couplings) and zero auxiliary points;
/// call data_dependent_init before use.
inline FlowModel make_kernel_flow(const KernelFlowOptions &opt) {
    if (opt.aux_points < 1) { throw ConfigError("aux_points must be >= 1"); }
    KernelParams{opt.gamma}.validate();
    const auto couplings = static_cast<std::size_t>(2 * opt.blocks);
    if (!opt.gamma_per_layer.empty() && opt.gamma_per_layer.size() != couplings) {
        throw ConfigError("gamma_per_layer needs one entry per coupling layer (" + std::to_string(couplings) + ")");
    }
    Rng rng(opt.seed);
    const Index d = opt.dim / 2;
    const Index rest = opt.dim - d;
    std::vector<AuxiliaryPoints> aux;
    if (opt.shared_aux) {
        aux.push_back(AuxiliaryPoints{Matrix::Zero(opt.aux_points, d), true, opt.freeze_aux});
    }
    auto model = detail::build_flow(opt.dim, opt.blocks, CouplingKind::kernel, rng, [&](std::size_t index) {
        KernelCouplingLayer layer;
        layer.d = d;
        layer.A_s = Matrix::Zero(rest, opt.aux_points);
        layer.A_t = Matrix::Zero(rest, opt.aux_points);
        layer.kernel.gamma = opt.gamma_per_layer.empty() ? opt.gamma : opt.gamma_per_layer[index];
        layer.kernel.validate();
        layer.clamp.bound = opt.s_clamp;
        if (opt.shared_aux) {
            layer.aux_index = 0;
        } else {
            layer.aux_index = aux.size();
            aux.push_back(AuxiliaryPoints{Matrix::Zero(opt.aux_points, d), false, opt.freeze_aux});
        }
        return Layer{std::move(layer)};
    });
    model.aux = std::move(aux);
    return model;
}

inline FlowModel make_mlp_flow(const MlpFlowOptions &opt) {
    if (opt.hidden < 1) { throw ConfigError("hidden width must be >= 1"); }
    Rng rng(opt.seed);
    const Index d = opt.dim / 2;
    return detail::build_flow(opt.dim, opt.blocks, CouplingKind::mlp, rng, [&](std::size_t) {
        return Layer{MlpCouplingLayer::make(opt.dim, d, opt.hidden, ScaleClamp{opt.s_clamp}, rng)};
    });
}

/// Marks every ActNorm as initialised with its current (default: identity) parameters.
inline void initialize_actnorm_identity(FlowModel &model) {
    for (auto &layer : model.layers) {
        if (auto *an = std::get_if<ActNormLayer>(&layer)) { an->initialized = true; }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Forward pass. When `trace` is non-null it receives the input of every layer.
inline LayerOutput flow_forward(const FlowModel &model, const Matrix &x, std::vector<Matrix> *trace = nullptr) {
    detail::require_cols(x, model.dim, "flow_forward");
    LayerOutput out{x, Vector::Zero(x.rows())};
    if (trace) {
        trace->clear();
        trace->reserve(model.layers.size());
    }
    for (const auto &layer : model.layers) {
        if (trace) { trace->push_back(out.y); }
        std::visit(
            [&](const auto &l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, PermutationLayer>) {
                    out.y = permute_forward(l, out.y);
                } else {
                    LayerOutput step;
                    if constexpr (std::is_same_v<T, ActNormLayer>) {
                        step = actnorm_forward(l, out.y);
                    } else if constexpr (std::is_same_v<T, KernelCouplingLayer>) {
                        step = coupling_forward(l, model.aux.at(l.aux_index), out.y);
                    } else {
                        step = mlp_coupling_forward(l, out.y);
                    }
                    out.y = std::move(step.y);
                    out.logdet += step.logdet;
                }
            },
            layer);
    }
    return out;
}

inline Matrix flow_inverse(const FlowModel &model, const Matrix &z) {
    detail::require_cols(z, model.dim, "flow_inverse");
    Matrix x = z;
    for (auto it = model.layers.rbegin(); it != model.layers.rend(); ++it) {
        std::visit(
            [&](const auto &l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, PermutationLayer>) {
                    x = permute_inverse(l, x);
                } else if constexpr (std::is_same_v<T, ActNormLayer>) {
                    x = actnorm_inverse(l, x);
                } else if constexpr (std::is_same_v<T, KernelCouplingLayer>) {
                    x = coupling_inverse(l, model.aux.at(l.aux_index), x);
                } else {
                    x = mlp_coupling_inverse(l, x);
                }
            },
            *it);
    }
    return x;
}

inline double standard_normal_log_norm(Index D) {
    return -0.5 * static_cast<double>(D) * std::log(2.0 * std::numbers::pi);
}

/// log p(x) in nats under the standard-normal base, one entry per row.
inline Vector log_prob(const FlowModel &model, const Matrix &x) {
    const auto out = flow_forward(model, x);
    return (standard_normal_log_norm(model.dim) - 0.5 * out.y.rowwise().squaredNorm().array()).matrix() + out.logdet;
}

inline Matrix sample(const FlowModel &model, std::uint64_t seed, Index count) {
    if (count < 0) { throw ArgumentError("sample: negative count"); }
    const Matrix z = standard_normal_matrix(count, model.dim, seed);
    if (count == 0) { return z; }
    return flow_inverse(model, z);
}

// ---------------------------------------------------------------------------
// Parameters

/// Visits every learnable tensor in a fixed order: layers first, then auxiliary point sets.
/// `fn(path, data, size, frozen)`; `data` is const when `model` is.
template <class Model, class Fn>
    requires std::is_same_v<std::remove_const_t<Model>, FlowModel>
void for_each_param(Model &model, Fn &&fn) {
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i);
        std::visit(
            [&](auto &l) {
                using T = std::remove_cvref_t<decltype(l)>;
                if constexpr (std::is_same_v<T, ActNormLayer>) {
                    fn(prefix + ".actnorm.scale", l.scale.data(), l.scale.size(), false);
                    fn(prefix + ".actnorm.bias", l.bias.data(), l.bias.size(), false);
                } else if constexpr (std::is_same_v<T, KernelCouplingLayer>) {
                    fn(prefix + ".kernel.A_s", l.A_s.data(), l.A_s.size(), false);
                    fn(prefix + ".kernel.A_t", l.A_t.data(), l.A_t.size(), false);
                } else if constexpr (std::is_same_v<T, MlpCouplingLayer>) {
                    fn(prefix + ".mlp.W1", l.W1.data(), l.W1.size(), false);
                    fn(prefix + ".mlp.b1", l.b1.data(), l.b1.size(), false);
                    fn(prefix + ".mlp.W2", l.W2.data(), l.W2.size(), false);
                    fn(prefix + ".mlp.b2", l.b2.data(), l.b2.size(), false);
                    fn(prefix + ".mlp.W3", l.W3.data(), l.W3.size(), false);
                    fn(prefix + ".mlp.b3", l.b3.data(), l.b3.size(), false);
                }
            },
            model.layers[i]);
    }
    for (std::size_t a = 0; a < model.aux.size(); ++a) {
        auto &set = model.aux[a];
        fn("aux" + std::to_string(a) + ".W", set.W.data(), set.W.size(), set.frozen);
    }
}

/// Same structure as `model` with every learnable tensor zeroed.
inline FlowModel zeros_like(const FlowModel &model) {
    FlowModel out = model;
    for_each_param(out, [](const std::string &, double *data, Index size, bool) { std::fill(data, data + size, 0.0); });
    return out;
}

struct ParamBreakdown {
    std::size_t coupling_weights = 0;
    std::size_t aux_points = 0;
    std::size_t actnorm = 0;
    std::size_t total = 0;
};

/// Learnable scalar counts from the architecture: per kernel coupling 2 N (D - d) weights,
/// d N auxiliary coordinates per coupling (or once when shared), 2 D per ActNorm.
/// Frozen auxiliary points are not counted.
inline ParamBreakdown param_count(const FlowModel &model) {
    ParamBreakdown out;
    const auto D = static_cast<std::size_t>(model.dim);
    const auto d = static_cast<std::size_t>(model.split());
    const auto L = model.coupling_layers();
    out.actnorm = 2 * D * static_cast<std::size_t>(model.blocks);
    if (model.coupling == CouplingKind::kernel) {
        const auto N = model.aux.empty() ? std::size_t{0} : static_cast<std::size_t>(model.aux.front().count());
        const bool frozen = !model.aux.empty() && model.aux.front().frozen;
        out.coupling_weights = L * 2 * N * (D - d);
        out.aux_points = frozen ? 0 : (model.shared_aux() ? d * N : L * d * N);
    } else {
        Index hidden = 0;
        for (const auto &layer : model.layers) {
            if (const auto *m = std::get_if<MlpCouplingLayer>(&layer)) { hidden = m->hidden(); }
        }
        out.coupling_weights = L * mlp_coupling_param_count(model.dim, model.split(), hidden);
    }
    out.total = out.coupling_weights + out.aux_points + out.actnorm;
    return out;
}

/// Alias used by baseline comparisons; identical accounting.
inline ParamBreakdown baseline_param_count(const FlowModel &model) {
    if (model.coupling != CouplingKind::mlp) { throw ArgumentError("baseline_param_count: not an MLP-coupling flow"); }
    return param_count(model);
}

// ---------------------------------------------------------------------------
// Reverse mode

/// Backpropagates upstream gradients (dL/dz per row, dL/dlogdet per row) through the chain.
/// `trace` must be the layer inputs recorded by flow_forward. Returns parameter gradients in
/// a model-shaped container and writes dL/dx to `grad_x` when given.
inline FlowModel flow_backward(const FlowModel &model, const std::vector<Matrix> &trace, const Matrix &grad_z,
                               const Vector &grad_logdet, Matrix *grad_x = nullptr) {
    if (trace.size() != model.layers.size()) { throw ArgumentError("flow_backward: trace does not match model"); }
    FlowModel grad = zeros_like(model);
    Matrix g = grad_z;
    for (std::size_t k = model.layers.size(); k-- > 0;) {
        const Matrix &u = trace[k];
        std::visit(
            [&](const auto &l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, PermutationLayer>) {
                    g = permute_backward(l, g);
                } else if constexpr (std::is_same_v<T, ActNormLayer>) {
                    g = actnorm_backward(l, u, g, grad_logdet, std::get<ActNormLayer>(grad.layers[k]));
                } else if constexpr (std::is_same_v<T, KernelCouplingLayer>) {
                    g = coupling_backward(l, model.aux.at(l.aux_index), u, g, grad_logdet,
                                          std::get<KernelCouplingLayer>(grad.layers[k]), grad.aux.at(l.aux_index));
                } else {
                    g = mlp_coupling_backward(l, u, g, grad_logdet, std::get<MlpCouplingLayer>(grad.layers[k]));
                }
            },
            model.layers[k]);
    }
    if (grad_x) { *grad_x = std::move(g); }
    return grad;
}

}  // namespace ferumal
