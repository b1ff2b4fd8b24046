// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ferumal/data.hpp"
#include "ferumal/training.hpp"

namespace ferumal {

/// Dataset, training and output settings of one run. Serialised as a flat JSON object;
/// keys not listed in `RunConfig::keys()` are rejected.
struct RunConfig {
    // data
    std::string dataset = "moons";  // moons | pinwheel | line | csv
    std::string data_path;
    Index n_train = 20000;
    Index n_val = 5000;
    Index n_test = 5000;
    double noise = 0.1;
    int arms = 5;
    double data_scale = 2.0;
    SplitFractions split;
    std::uint64_t data_seed = 0;
    Index subsample = 0;  // 0 keeps the full train split

    TrainConfig train;

    // outputs
    std::string output_dir = "run";
    Index checkpoint_every = 0;  // 0: final checkpoint only

    // gamma search
    std::vector<double> search_grid{0.1, 0.3, 1.0, 3.0, 10.0};
    int search_refine = 4;
    Index search_iterations = 1000;
    unsigned search_threads = 1;

    [[nodiscard]] bool tabular() const { return dataset == "csv"; }

    static const std::vector<std::string> &keys() {
        static const std::vector<std::string> k{
            "dataset",       "data_path",       "n_train",       "n_val",          "n_test",
            "noise",         "arms",            "data_scale",    "split",          "data_seed",
            "subsample",     "coupling",        "blocks",        "aux_points",     "shared_aux",
            "freeze_aux",    "gamma",           "gamma_per_layer", "hidden",       "batch_size",
            "iterations",    "lr",              "beta1",         "beta2",          "eps",
            "schedule",      "step_size",       "step_factor",   "cosine_period",  "seed",
            "s_clamp",       "deterministic",   "val_every",     "keep_best",      "output_dir",
            "checkpoint_every", "search_grid",  "search_refine", "search_iterations", "search_threads",
            "divergence_margin"};
        return k;
    }
};

inline nlohmann::json to_json(const RunConfig &c) {
    const auto &t = c.train;
    return {{"dataset", c.dataset},
            {"data_path", c.data_path},
            {"n_train", c.n_train},
            {"n_val", c.n_val},
            {"n_test", c.n_test},
            {"noise", c.noise},
            {"arms", c.arms},
            {"data_scale", c.data_scale},
            {"split", {c.split.train, c.split.val, c.split.test}},
            {"data_seed", c.data_seed},
            {"subsample", c.subsample},
            {"coupling", t.coupling == CouplingKind::kernel ? "kernel" : "mlp"},
            {"blocks", t.blocks},
            {"aux_points", t.aux_points},
            {"shared_aux", t.shared_aux},
            {"freeze_aux", t.freeze_aux},
            {"gamma", t.gamma},
            {"gamma_per_layer", t.gamma_per_layer},
            {"hidden", t.hidden},
            {"batch_size", t.batch_size},
            {"iterations", t.iterations},
            {"lr", t.lr},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"eps", t.eps},
            {"schedule", t.schedule.kind == LrSchedule::Kind::cosine ? "cosine" : "steplr"},
            {"step_size", t.schedule.step_size},
            {"step_factor", t.schedule.factor},
            {"cosine_period", t.schedule.period},
            {"seed", t.seed},
            {"s_clamp", t.s_clamp ? nlohmann::json(*t.s_clamp) : nlohmann::json(nullptr)},
            {"deterministic", t.deterministic},
            {"val_every", t.val_every},
            {"keep_best", t.keep_best},
            {"divergence_margin", t.divergence_margin},
            {"output_dir", c.output_dir},
            {"checkpoint_every", c.checkpoint_every},
            {"search_grid", c.search_grid},
            {"search_refine", c.search_refine},
            {"search_iterations", c.search_iterations},
            {"search_threads", c.search_threads}};
}

namespace detail {

template <class T>
void read_key(const nlohmann::json &j, const char *key, T &out) {
    if (!j.contains(key)) { return; }
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception &) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

}  // namespace detail

/// Parses and validates a config object. Architecture defaults depend on the dataset:
/// 50 auxiliary points and 64 hidden units for toy data, 100 and 128 for tabular data.
inline RunConfig run_config_from_json(const nlohmann::json &j) {
    if (!j.is_object()) { throw ConfigError("config must be a JSON object"); }
    const auto &known = RunConfig::keys();
    for (const auto &item : j.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
            throw ConfigError("unknown config key '" + item.key() + "'");
        }
    }
    RunConfig c;
    detail::read_key(j, "dataset", c.dataset);
    if (c.dataset != "moons" && c.dataset != "pinwheel" && c.dataset != "line" && c.dataset != "csv") {
        throw ConfigError("dataset must be one of moons, pinwheel, line, csv");
    }
    if (c.tabular()) {
        c.train.aux_points = 100;
        c.train.hidden = 128;
    }
    if (c.dataset == "line") {
        c.noise = 0.05;
        c.data_scale = 1.0;
    }
    detail::read_key(j, "data_path", c.data_path);
    detail::read_key(j, "n_train", c.n_train);
    detail::read_key(j, "n_val", c.n_val);
    detail::read_key(j, "n_test", c.n_test);
    detail::read_key(j, "noise", c.noise);
    detail::read_key(j, "arms", c.arms);
    detail::read_key(j, "data_scale", c.data_scale);
    if (j.contains("split")) {
        std::vector<double> s;
        detail::read_key(j, "split", s);
        if (s.size() != 3) { throw ConfigError("split needs three fractions"); }
        c.split = {s[0], s[1], s[2]};
    }
    detail::read_key(j, "data_seed", c.data_seed);
    detail::read_key(j, "subsample", c.subsample);

    auto &t = c.train;
    if (j.contains("coupling")) {
        std::string kind;
        detail::read_key(j, "coupling", kind);
        if (kind != "kernel" && kind != "mlp") { throw ConfigError("coupling must be kernel or mlp"); }
        t.coupling = kind == "kernel" ? CouplingKind::kernel : CouplingKind::mlp;
    }
    detail::read_key(j, "blocks", t.blocks);
    detail::read_key(j, "aux_points", t.aux_points);
    detail::read_key(j, "shared_aux", t.shared_aux);
    detail::read_key(j, "freeze_aux", t.freeze_aux);
    detail::read_key(j, "gamma", t.gamma);
    detail::read_key(j, "gamma_per_layer", t.gamma_per_layer);
    detail::read_key(j, "hidden", t.hidden);
    detail::read_key(j, "batch_size", t.batch_size);
    detail::read_key(j, "iterations", t.iterations);
    detail::read_key(j, "lr", t.lr);
    detail::read_key(j, "beta1", t.beta1);
    detail::read_key(j, "beta2", t.beta2);
    detail::read_key(j, "eps", t.eps);
    if (j.contains("schedule")) {
        std::string kind;
        detail::read_key(j, "schedule", kind);
        if (kind != "cosine" && kind != "steplr") { throw ConfigError("schedule must be cosine or steplr"); }
        t.schedule.kind = kind == "cosine" ? LrSchedule::Kind::cosine : LrSchedule::Kind::steplr;
    }
    detail::read_key(j, "step_size", t.schedule.step_size);
    detail::read_key(j, "step_factor", t.schedule.factor);
    detail::read_key(j, "cosine_period", t.schedule.period);
    detail::read_key(j, "seed", t.seed);
    if (j.contains("s_clamp")) {
        const auto &v = j.at("s_clamp");
        if (v.is_null() || (v.is_boolean() && !v.get<bool>())) {
            t.s_clamp.reset();
        } else if (v.is_number()) {
            t.s_clamp = v.get<double>();
        } else {
            throw ConfigError("s_clamp must be a positive number, null or false");
        }
    }
    detail::read_key(j, "deterministic", t.deterministic);
    detail::read_key(j, "val_every", t.val_every);
    detail::read_key(j, "keep_best", t.keep_best);
    detail::read_key(j, "divergence_margin", t.divergence_margin);
    detail::read_key(j, "output_dir", c.output_dir);
    detail::read_key(j, "checkpoint_every", c.checkpoint_every);
    detail::read_key(j, "search_grid", c.search_grid);
    detail::read_key(j, "search_refine", c.search_refine);
    detail::read_key(j, "search_iterations", c.search_iterations);
    detail::read_key(j, "search_threads", c.search_threads);

    t.validate();
    if (c.tabular() && c.data_path.empty()) { throw ConfigError("dataset csv needs data_path"); }
    if (!c.tabular() && (c.n_train < 2 || c.n_val < 0 || c.n_test < 0)) { throw ConfigError("bad split sizes"); }
    if (c.subsample < 0) { throw ConfigError("subsample must be >= 0"); }
    if (c.checkpoint_every < 0) { throw ConfigError("checkpoint_every must be >= 0"); }
    if (c.search_iterations < 1) { throw ConfigError("search_iterations must be >= 1"); }
    if (c.search_grid.empty()) { throw ConfigError("search_grid must not be empty"); }
    return c;
}

/// Reads a config file. A missing or unparsable file is a ConfigError naming the path.
inline nlohmann::json read_config_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) { throw ConfigError("cannot open config file '" + path + "'"); }
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

/// Applies a `key=value` override; the value is parsed as JSON, falling back to a string.
inline void apply_override(nlohmann::json &j, const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) { throw ConfigError("override '" + assignment + "' is not key=value"); }
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    auto parsed = nlohmann::json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
}

/// Builds the dataset a config describes: generated toy data or a standardised CSV, optionally
/// subsampled to `subsample` training rows.
inline Dataset load_dataset(const RunConfig &c) {
    Dataset ds;
    if (c.tabular()) {
        ds = load_csv(c.data_path, c.split, c.data_seed);
    } else {
        ToyDatasetSpec spec;
        spec.kind = c.dataset;
        spec.n_train = c.n_train;
        spec.n_val = c.n_val;
        spec.n_test = c.n_test;
        spec.noise = c.noise;
        spec.arms = c.arms;
        spec.scale = c.data_scale;
        spec.seed = c.data_seed;
        ds = make_toy_dataset(spec);
    }
    if (c.subsample > 0) { ds = subsample_train(ds, c.subsample, c.data_seed + 11); }
    return ds;
}

}  // namespace ferumal
