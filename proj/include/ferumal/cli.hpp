// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

#include "ferumal/checkpoint.hpp"
#include "ferumal/config.hpp"
#include "ferumal/training.hpp"

// Command implementations behind the `ferumal` executable. Each returns a process exit code.
namespace ferumal::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kDiverged = 4, kInternal = 5 };

/// Runs `body`, translating library exceptions into exit codes and a message on `err`.
template <class Body>
int guarded(std::ostream &err, Body &&body) {
    try {
        return body();
    } catch (const ConfigError &e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ArgumentError &e) {
        err << "argument error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DataError &e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericError &e) {
        err << "numeric error: " << e.what() << "\n";
        return kDiverged;
    } catch (const StateError &e) {
        err << "internal error: " << e.what() << "\n";
        return kInternal;
    } catch (const nlohmann::json::exception &e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception &e) {
        err << "internal error: " << e.what() << "\n";
        return kInternal;
    }
}

namespace detail {

inline std::string fmt(const char *format, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, value);
    return buf;
}

inline std::ofstream open_output(const std::filesystem::path &path) {
    if (path.has_parent_path()) { std::filesystem::create_directories(path.parent_path()); }
    std::ofstream out(path);
    if (!out) { throw DataError("cannot write '" + path.string() + "'"); }
    return out;
}

inline void write_param_line(std::ostream &os, const char *label, const ParamBreakdown &p) {
    os << "model=" << label << " coupling_weights=" << p.coupling_weights << " aux_points=" << p.aux_points
       << " actnorm=" << p.actnorm << " total=" << p.total << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
    TrainStatus status = TrainStatus::completed;
    double initial_loss = 0.0;
    double train_nll = 0.0;
    double val_nll = 0.0;
    double test_nll = 0.0;
};

/// Trains per `config_json` and writes checkpoint.json, curve.csv and metrics.json into the
/// configured output directory.
inline int cmd_train(const nlohmann::json &config_json, std::ostream &out, std::ostream &err,
                     TrainSummary *summary = nullptr) {
    return guarded(err, [&] {
        const RunConfig cfg = run_config_from_json(config_json);
        const nlohmann::json echo = to_json(cfg);
        const Dataset ds = load_dataset(cfg);
        const std::filesystem::path dir(cfg.output_dir);
        std::filesystem::create_directories(dir);

        TrainHooks hooks;
        hooks.checkpoint_every = cfg.checkpoint_every;
        hooks.on_checkpoint = [&](Index it, const FlowModel &m) {
            save_checkpoint((dir / ("checkpoint_" + std::to_string(it) + ".json")).string(), {m, ds.stats, echo});
        };
        auto result = train(make_model(cfg.train, ds.dim()), ds, cfg.train, hooks);

        save_checkpoint((dir / "checkpoint.json").string(), {result.model, ds.stats, echo});
        {
            auto curve = detail::open_output(dir / "curve.csv");
            write_curve(curve, result.curve, "config: " + echo.dump());
        }

        nlohmann::json metrics{{"format", "ferumal-metrics"},
                               {"version", 1},
                               {"config", echo},
                               {"status", result.status == TrainStatus::completed ? "completed" : "diverged"},
                               {"initial_loss", result.initial_loss},
                               {"params", {{"coupling_weights", param_count(result.model).coupling_weights},
                                           {"aux_points", param_count(result.model).aux_points},
                                           {"actnorm", param_count(result.model).actnorm},
                                           {"total", param_count(result.model).total}}}};
        TrainSummary s;
        s.status = result.status;
        s.initial_loss = result.initial_loss;
        if (result.status == TrainStatus::completed) {
            s.train_nll = mean_nll(result.model, ds.train, ds.stats);
            metrics["train_nll"] = s.train_nll;
            if (ds.val.rows() > 0) {
                s.val_nll = mean_nll(result.model, ds.val, ds.stats);
                metrics["val_nll"] = s.val_nll;
            }
            if (ds.test.rows() > 0) {
                s.test_nll = mean_nll(result.model, ds.test, ds.stats);
                metrics["test_nll"] = s.test_nll;
            }
        } else {
            metrics["message"] = result.message;
        }
        {
            auto m = detail::open_output(dir / "metrics.json");
            m << metrics.dump(2) << "\n";
        }
        if (summary) { *summary = s; }
        if (result.status == TrainStatus::diverged) {
            err << "training diverged: " << result.message << "; last good parameters written to "
                << (dir / "checkpoint.json").string() << "\n";
            return static_cast<int>(kDiverged);
        }
        out << "# ferumal-train v1\n";
        out << "train_nll=" << detail::fmt("%.10f", s.train_nll) << " val_nll=" << detail::fmt("%.10f", s.val_nll)
            << " test_nll=" << detail::fmt("%.10f", s.test_nll) << " checkpoint=" << (dir / "checkpoint.json").string()
            << "\n";
        return static_cast<int>(kOk);
    });
}

// ---------------------------------------------------------------------------
// eval

/// Mean NLL (raw units) of `data_csv` rows, or of the test split regenerated from the
/// checkpoint's config when `data_csv` is empty.
inline double evaluate_checkpoint(const Checkpoint &ckpt, const std::string &data_csv, Index *rows = nullptr) {
    if (!data_csv.empty()) {
        const Matrix raw = read_csv_matrix(data_csv);
        if (raw.cols() != ckpt.model.dim) {
            throw DataError("data has " + std::to_string(raw.cols()) + " columns, model expects " +
                            std::to_string(ckpt.model.dim));
        }
        if (rows) { *rows = raw.rows(); }
        return mean_nll(ckpt.model, ckpt.stats.apply(raw), ckpt.stats);
    }
    const Dataset ds = load_dataset(run_config_from_json(ckpt.config));
    if (ds.test.rows() == 0) { throw DataError("checkpoint's dataset has an empty test split"); }
    if (rows) { *rows = ds.test.rows(); }
    return mean_nll(ckpt.model, ds.test, ds.stats);
}

inline int cmd_eval(const std::string &checkpoint_path, const std::string &data_csv, std::ostream &out,
                    std::ostream &err) {
    return guarded(err, [&] {
        const Checkpoint ckpt = load_checkpoint(checkpoint_path);
        Index rows = 0;
        const double nll = evaluate_checkpoint(ckpt, data_csv, &rows);
        out << "# ferumal-eval v1\n";
        out << "nll_nats=" << detail::fmt("%.10f", nll) << " rows=" << rows
            << " source=" << (data_csv.empty() ? std::string("test-split") : data_csv) << "\n";
        return static_cast<int>(kOk);
    });
}

// ---------------------------------------------------------------------------
// sample / hist2d

/// Samples in raw data units.
inline Matrix sample_raw(const Checkpoint &ckpt, Index n, std::uint64_t seed) {
    return ckpt.stats.invert(sample(ckpt.model, seed, n));
}

inline void write_points_csv(std::ostream &os, const Matrix &pts, const std::string &comment) {
    os << "# ferumal-samples v1\n";
    if (!comment.empty()) { os << "# " << comment << "\n"; }
    for (Index j = 0; j < pts.cols(); ++j) { os << (j ? "," : "") << "x" << j; }
    os << "\n";
    char buf[40];
    for (Index i = 0; i < pts.rows(); ++i) {
        for (Index j = 0; j < pts.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", pts(i, j));
            os << (j ? "," : "") << buf;
        }
        os << "\n";
    }
}

inline int cmd_sample(const std::string &checkpoint_path, Index n, std::uint64_t seed, const std::string &out_path,
                      std::ostream &err) {
    return guarded(err, [&] {
        if (n < 0) { throw ArgumentError("sample count must be >= 0"); }
        const Checkpoint ckpt = load_checkpoint(checkpoint_path);
        auto os = detail::open_output(out_path);
        write_points_csv(os, sample_raw(ckpt, n, seed), "config: " + ckpt.config.dump());
        return static_cast<int>(kOk);
    });
}

using CountGrid = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

/// Counts of 2-D points on a bins x bins grid over [lo, hi)^2. Row index is the y bin, column
/// index the x bin. Points outside the range are dropped.
inline CountGrid histogram2d(const Matrix &pts, int bins, double lo, double hi) {
    if (pts.cols() != 2) { throw ArgumentError("hist2d needs 2-D points, got " + std::to_string(pts.cols()) + "-D"); }
    if (bins < 1) { throw ArgumentError("hist2d: bins must be >= 1"); }
    if (!(hi > lo)) { throw ArgumentError("hist2d: range must satisfy lo < hi"); }
    CountGrid grid = CountGrid::Zero(bins, bins);
    const double width = (hi - lo) / bins;
    for (Index i = 0; i < pts.rows(); ++i) {
        const double x = pts(i, 0);
        const double y = pts(i, 1);
        if (!(x >= lo && x < hi && y >= lo && y < hi)) { continue; }
        const int cx = std::min(bins - 1, static_cast<int>(std::floor((x - lo) / width)));
        const int cy = std::min(bins - 1, static_cast<int>(std::floor((y - lo) / width)));
        ++grid(cy, cx);
    }
    return grid;
}

inline void write_hist2d(std::ostream &os, const CountGrid &grid, double lo, double hi, const std::string &comment) {
    os << "# ferumal-hist2d v1\n";
    os << "# bins=" << grid.rows() << " range=" << lo << "," << hi << " rows=y cols=x\n";
    if (!comment.empty()) { os << "# " << comment << "\n"; }
    for (Index r = 0; r < grid.rows(); ++r) {
        for (Index c = 0; c < grid.cols(); ++c) { os << (c ? "," : "") << grid(r, c); }
        os << "\n";
    }
}

struct Hist2dSource {
    std::string checkpoint;  // model samples when set
    std::string data_csv;    // raw points otherwise
    Index n = 100000;
    std::uint64_t seed = 0;
};

inline int cmd_hist2d(const Hist2dSource &src, int bins, double lo, double hi, const std::string &out_path,
                      std::ostream &err) {
    return guarded(err, [&] {
        if (src.checkpoint.empty() == src.data_csv.empty()) {
            throw ArgumentError("hist2d needs exactly one of a checkpoint or a data file");
        }
        Matrix pts;
        std::string comment;
        if (!src.checkpoint.empty()) {
            const Checkpoint ckpt = load_checkpoint(src.checkpoint);
            if (ckpt.model.dim != 2) {
                throw ArgumentError("hist2d needs a 2-D model, got D=" + std::to_string(ckpt.model.dim));
            }
            pts = sample_raw(ckpt, src.n, src.seed);
            comment = "source=samples n=" + std::to_string(src.n) + " seed=" + std::to_string(src.seed) +
                      " config: " + ckpt.config.dump();
        } else {
            pts = read_csv_matrix(src.data_csv);
            comment = "source=" + src.data_csv;
        }
        const auto grid = histogram2d(pts, bins, lo, hi);
        auto os = detail::open_output(out_path);
        write_hist2d(os, grid, lo, hi, comment);
        return static_cast<int>(kOk);
    });
}

// ---------------------------------------------------------------------------
// gradcheck / paramcount

/// Randomises every learnable tensor of an initialised model around its current value so that
/// all gradient paths are exercised.
inline void perturb_params(FlowModel &model, double scale, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    for_each_param(model, [&](const std::string &, double *data, Index size, bool) {
        for (Index i = 0; i < size; ++i) { data[i] += normal(rng); }
    });
}

struct GradcheckSetup {
    FlowModel model;
    Matrix batch;
};

/// Default problem: D = 4, 2 blocks, 8 auxiliary points, batch of 16 Gaussian rows.
inline GradcheckSetup default_gradcheck_setup(std::uint64_t seed = 0) {
    TrainConfig t;
    t.blocks = 2;
    t.aux_points = 8;
    t.gamma = 0.5;
    t.seed = seed;
    GradcheckSetup s{make_model(t, 4), standard_normal_matrix(16, 4, seed + 1)};
    data_dependent_init(s.model, s.batch, seed + 2);
    perturb_params(s.model, 0.1, seed + 3);
    return s;
}

inline int cmd_gradcheck(const std::optional<nlohmann::json> &config_json, std::ostream &out, std::ostream &err) {
    return guarded(err, [&] {
        GradcheckSetup s;
        if (config_json) {
            const RunConfig cfg = run_config_from_json(*config_json);
            const Dataset ds = load_dataset(cfg);
            s.batch = ds.train.topRows(std::min<Index>(16, ds.train.rows()));
            s.model = make_model(cfg.train, ds.dim());
            data_dependent_init(s.model, s.batch, cfg.train.seed + 2);
            perturb_params(s.model, 0.1, cfg.train.seed + 3);
        } else {
            s = default_gradcheck_setup();
        }
        const auto report = gradcheck(s.model, s.batch);
        out << "# ferumal-gradcheck v1\n";
        out << "checked=" << report.checked << " failures=" << report.failures
            << " max_rel_error=" << detail::fmt("%.3e", report.max_rel_error)
            << " max_abs_error=" << detail::fmt("%.3e", report.max_abs_error)
            << " worst=" << (report.worst_path.empty() ? "-" : report.worst_path) << "\n";
        return static_cast<int>(report.failures == 0 ? kOk : kDiverged);
    });
}

/// Counts for the configured kernel flow and for the MLP baseline with the same scaffolding.
struct ParamComparison {
    ParamBreakdown kernel;
    ParamBreakdown baseline;
};

inline ParamComparison compare_param_counts(const TrainConfig &t, Index dim) {
    TrainConfig k = t;
    k.coupling = CouplingKind::kernel;
    TrainConfig b = t;
    b.coupling = CouplingKind::mlp;
    return {param_count(make_model(k, dim)), baseline_param_count(make_model(b, dim))};
}

inline int cmd_paramcount(const nlohmann::json &config_json, std::optional<Index> dim, std::ostream &out,
                          std::ostream &err) {
    return guarded(err, [&] {
        const RunConfig cfg = run_config_from_json(config_json);
        Index D = 2;
        if (dim) {
            D = *dim;
        } else if (cfg.tabular()) {
            D = read_csv_matrix(cfg.data_path).cols();
        }
        const auto cmp = compare_param_counts(cfg.train, D);
        out << "# ferumal-paramcount v1\n";
        out << "dim=" << D << " blocks=" << cfg.train.blocks << " aux_points=" << cfg.train.aux_points
            << " shared_aux=" << (cfg.train.shared_aux ? "true" : "false") << " hidden=" << cfg.train.hidden << "\n";
        detail::write_param_line(out, "kernel", cmp.kernel);
        detail::write_param_line(out, "baseline", cmp.baseline);
        out << "kernel_to_baseline=" << detail::fmt("%.4f", static_cast<double>(cmp.kernel.total) /
                                                                static_cast<double>(cmp.baseline.total))
            << "\n";
        return static_cast<int>(kOk);
    });
}

// ---------------------------------------------------------------------------
// hpsearch

inline int cmd_hpsearch(const nlohmann::json &config_json, std::ostream &out, std::ostream &err) {
    return guarded(err, [&] {
        const RunConfig cfg = run_config_from_json(config_json);
        const Dataset ds = load_dataset(cfg);
        GammaSearchResult result;
        try {
            result = gamma_search(ds, cfg.train, cfg.search_grid, cfg.search_refine, cfg.search_iterations,
                                  cfg.search_threads);
        } catch (const SearchFailedError &e) {
            err << "gamma search failed: " << e.what() << "\n";
            for (const auto &t : e.trials()) { err << "  gamma=" << t.gamma << " " << t.note << "\n"; }
            return static_cast<int>(kDiverged);
        }
        const std::filesystem::path dir(cfg.output_dir);
        auto log = detail::open_output(dir / "hpsearch.csv");
        log << "# ferumal-hpsearch v1\n# config: " << to_json(cfg).dump() << "\n";
        log << "index,phase,gamma,val_nll,diverged\n";
        for (const auto &t : result.trials) {
            log << t.index << "," << t.phase << "," << detail::fmt("%.10g", t.gamma) << ","
                << detail::fmt("%.10f", t.val_nll) << "," << (t.diverged ? 1 : 0) << "\n";
        }
        out << "# ferumal-hpsearch v1\n";
        out << "best_gamma=" << detail::fmt("%.10g", result.best_gamma)
            << " best_val_nll=" << detail::fmt("%.10f", result.best_val_nll) << " trials=" << result.trials.size()
            << "\n";
        return static_cast<int>(kOk);
    });
}

}  // namespace ferumal::cli
