// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "ferumal/data.hpp"
#include "ferumal/flow.hpp"

namespace ferumal {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to reproduce log_prob in raw units: the model, the standardisation
/// that maps raw rows into model space, and the resolved run configuration.
struct Checkpoint {
    FlowModel model;
    Standardization stats;
    json config = json::object();
};

namespace detail {

// Row-major flattening. Doubles are written in shortest round-trip form, so reload is bit-exact.
inline json matrix_to_json(const Matrix &m) {
    json data = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) { data.push_back(m(i, j)); }
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json &j) {
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    const auto &data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
        throw DataError("checkpoint: tensor data does not match its shape");
    }
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j2 = 0; j2 < cols; ++j2) { m(i, j2) = data[static_cast<std::size_t>(i * cols + j2)].get<double>(); }
    }
    return m;
}

inline json vector_to_json(const Eigen::Ref<const Vector> &v) {
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) { out.push_back(v(i)); }
    return out;
}

inline Vector vector_from_json(const json &j) {
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) { v(static_cast<Index>(i)) = j[i].get<double>(); }
    return v;
}

inline json clamp_to_json(const ScaleClamp &c) { return c.bound ? json(*c.bound) : json(nullptr); }

inline ScaleClamp clamp_from_json(const json &j) {
    return j.is_null() ? ScaleClamp{} : ScaleClamp{j.get<double>()};
}

}  // namespace detail

inline json model_to_json(const FlowModel &model) {
    json layers = json::array();
    for (const auto &layer : model.layers) {
        std::visit(
            [&](const auto &l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, ActNormLayer>) {
                    layers.push_back({{"type", "actnorm"},
                                      {"scale", detail::vector_to_json(l.scale)},
                                      {"bias", detail::vector_to_json(l.bias)},
                                      {"initialized", l.initialized}});
                } else if constexpr (std::is_same_v<T, PermutationLayer>) {
                    layers.push_back({{"type", "permutation"},
                                      {"kind", l.kind == PermutationKind::reversal ? "reversal" : "random"},
                                      {"perm", l.perm}});
                } else if constexpr (std::is_same_v<T, KernelCouplingLayer>) {
                    layers.push_back({{"type", "kernel_coupling"},
                                      {"aux", l.aux_index},
                                      {"d", l.d},
                                      {"gamma", l.kernel.gamma},
                                      {"s_clamp", detail::clamp_to_json(l.clamp)},
                                      {"A_s", detail::matrix_to_json(l.A_s)},
                                      {"A_t", detail::matrix_to_json(l.A_t)}});
                } else {
                    layers.push_back({{"type", "mlp_coupling"},
                                      {"d", l.d},
                                      {"s_clamp", detail::clamp_to_json(l.clamp)},
                                      {"W1", detail::matrix_to_json(l.W1)},
                                      {"b1", detail::vector_to_json(l.b1)},
                                      {"W2", detail::matrix_to_json(l.W2)},
                                      {"b2", detail::vector_to_json(l.b2)},
                                      {"W3", detail::matrix_to_json(l.W3)},
                                      {"b3", detail::vector_to_json(l.b3)}});
                }
            },
            layer);
    }
    json aux = json::array();
    for (const auto &set : model.aux) {
        aux.push_back({{"W", detail::matrix_to_json(set.W)}, {"shared", set.shared}, {"frozen", set.frozen}});
    }
    return {{"dim", model.dim},
            {"blocks", model.blocks},
            {"coupling", model.coupling == CouplingKind::kernel ? "kernel" : "mlp"},
            {"shared_aux", model.shared_aux()},
            {"layers", std::move(layers)},
            {"aux", std::move(aux)}};
}

inline FlowModel model_from_json(const json &j) {
    FlowModel model;
    model.dim = j.at("dim").get<Index>();
    model.blocks = j.at("blocks").get<Index>();
    const auto coupling = j.at("coupling").get<std::string>();
    if (coupling != "kernel" && coupling != "mlp") { throw DataError("checkpoint: unknown coupling '" + coupling + "'"); }
    model.coupling = coupling == "kernel" ? CouplingKind::kernel : CouplingKind::mlp;
    for (const auto &a : j.at("aux")) {
        model.aux.push_back(
            {detail::matrix_from_json(a.at("W")), a.at("shared").get<bool>(), a.at("frozen").get<bool>()});
    }
    for (const auto &l : j.at("layers")) {
        const auto type = l.at("type").get<std::string>();
        if (type == "actnorm") {
            model.layers.emplace_back(ActNormLayer{detail::vector_from_json(l.at("scale")),
                                                   detail::vector_from_json(l.at("bias")),
                                                   l.at("initialized").get<bool>()});
        } else if (type == "permutation") {
            PermutationLayer p;
            p.kind = l.at("kind").get<std::string>() == "reversal" ? PermutationKind::reversal : PermutationKind::random;
            p.perm = l.at("perm").get<std::vector<Index>>();
            if (!p.is_bijection() || p.dim() != model.dim) { throw DataError("checkpoint: invalid permutation"); }
            model.layers.emplace_back(std::move(p));
        } else if (type == "kernel_coupling") {
            KernelCouplingLayer k;
            k.aux_index = l.at("aux").get<std::size_t>();
            if (k.aux_index >= model.aux.size()) { throw DataError("checkpoint: coupling references missing aux set"); }
            k.d = l.at("d").get<Index>();
            k.kernel.gamma = l.at("gamma").get<double>();
            k.clamp = detail::clamp_from_json(l.at("s_clamp"));
            k.A_s = detail::matrix_from_json(l.at("A_s"));
            k.A_t = detail::matrix_from_json(l.at("A_t"));
            model.layers.emplace_back(std::move(k));
        } else if (type == "mlp_coupling") {
            MlpCouplingLayer m;
            m.d = l.at("d").get<Index>();
            m.clamp = detail::clamp_from_json(l.at("s_clamp"));
            m.W1 = detail::matrix_from_json(l.at("W1"));
            m.b1 = detail::vector_from_json(l.at("b1"));
            m.W2 = detail::matrix_from_json(l.at("W2"));
            m.b2 = detail::vector_from_json(l.at("b2"));
            m.W3 = detail::matrix_from_json(l.at("W3"));
            m.b3 = detail::vector_from_json(l.at("b3"));
            model.layers.emplace_back(std::move(m));
        } else {
            throw DataError("checkpoint: unknown layer type '" + type + "'");
        }
    }
    return model;
}

inline json checkpoint_to_json(const Checkpoint &ckpt) {
    return {{"format", "ferumal-checkpoint"},
            {"version", kCheckpointVersion},
            {"config", ckpt.config},
            {"standardization",
             {{"mean", detail::vector_to_json(ckpt.stats.mean.transpose())},
              {"std", detail::vector_to_json(ckpt.stats.std.transpose())}}},
            {"model", model_to_json(ckpt.model)}};
}

inline Checkpoint checkpoint_from_json(const json &j) {
    if (j.value("format", std::string{}) != "ferumal-checkpoint") { throw DataError("not a ferumal checkpoint"); }
    if (j.at("version").get<int>() != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    }
    Checkpoint ckpt;
    ckpt.config = j.at("config");
    ckpt.model = model_from_json(j.at("model"));
    const auto &s = j.at("standardization");
    ckpt.stats.mean = detail::vector_from_json(s.at("mean")).transpose();
    ckpt.stats.std = detail::vector_from_json(s.at("std")).transpose();
    if (ckpt.stats.mean.size() != ckpt.model.dim || ckpt.stats.std.size() != ckpt.model.dim) {
        throw DataError("checkpoint: standardisation does not match model dimensionality");
    }
    return ckpt;
}

inline void save_checkpoint(const std::string &path, const Checkpoint &ckpt) {
    std::ofstream out(path);
    if (!out) { throw DataError("cannot write checkpoint '" + path + "'"); }
    out << checkpoint_to_json(ckpt).dump(1) << "\n";
    if (!out) { throw DataError("failed writing checkpoint '" + path + "'"); }
}

inline Checkpoint load_checkpoint(const std::string &path) {
    std::ifstream in(path);
    if (!in) { throw DataError("cannot open checkpoint '" + path + "'"); }
    json j;
    try {
        in >> j;
    } catch (const json::exception &e) {
        throw DataError("checkpoint '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        return checkpoint_from_json(j);
    } catch (const json::exception &e) {
        throw DataError("checkpoint '" + path + "' is malformed: " + e.what());
    }
}

}  // namespace ferumal
