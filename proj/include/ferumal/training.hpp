// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <future>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ferumal/data.hpp"
#include "ferumal/flow.hpp"

namespace ferumal {

// ---------------------------------------------------------------------------
// Configuration

struct LrSchedule {
    enum class Kind { steplr, cosine };
    Kind kind = Kind::cosine;
    Index step_size = 1000;  // steplr period
    double factor = 0.5;     // steplr decay
    Index period = 0;        // cosine T; 0 means "the run length"
};

/// lr at `step` (zero-based). steplr: base * factor^floor(step / step_size);
/// cosine: base * (1 + cos(pi step / T)) / 2, and 0 from step T on.
inline double lr_at(const LrSchedule &schedule, Index step, double base_lr) {
    if (step < 0) { throw ArgumentError("lr_at: negative step"); }
    if (schedule.kind == LrSchedule::Kind::steplr) {
        if (schedule.step_size < 1) { throw ConfigError("steplr step_size must be >= 1"); }
        return base_lr * std::pow(schedule.factor, static_cast<double>(step / schedule.step_size));
    }
    if (schedule.period < 1) { throw ConfigError("cosine period must be >= 1"); }
    if (step >= schedule.period) { return 0.0; }
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                           static_cast<double>(schedule.period)));
}

struct TrainConfig {
    CouplingKind coupling = CouplingKind::kernel;
    Index blocks = 5;
    Index aux_points = 50;
    bool shared_aux = false;
    bool freeze_aux = false;
    double gamma = 1.0;
    std::vector<double> gamma_per_layer;
    Index hidden = 64;  // baseline only
    Index batch_size = 200;
    Index iterations = 10000;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LrSchedule schedule;
    std::uint64_t seed = 0;
    std::optional<double> s_clamp = 5.0;
    bool deterministic = true;
    Index val_every = 200;  // 0 disables validation
    bool keep_best = true;
    double divergence_margin = 1e3;

    void validate() const {
        if (blocks < 1) { throw ConfigError("blocks must be >= 1"); }
        if (coupling == CouplingKind::kernel && aux_points < 1) { throw ConfigError("aux_points must be >= 1"); }
        if (coupling == CouplingKind::mlp && hidden < 1) { throw ConfigError("hidden must be >= 1"); }
        if (!(gamma > 0.0) || !std::isfinite(gamma)) { throw ConfigError("gamma must be positive and finite"); }
        for (double g : gamma_per_layer) {
            if (!(g > 0.0) || !std::isfinite(g)) { throw ConfigError("gamma_per_layer entries must be positive"); }
        }
        if (batch_size < 1) { throw ConfigError("batch_size must be >= 1"); }
        if (iterations < 1) { throw ConfigError("iterations must be >= 1"); }
        if (!(lr > 0.0)) { throw ConfigError("lr must be positive"); }
        if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
            throw ConfigError("beta1 and beta2 must lie in (0, 1)");
        }
        if (!(eps > 0.0)) { throw ConfigError("eps must be positive"); }
        if (s_clamp && !(*s_clamp > 0.0)) { throw ConfigError("s_clamp must be positive"); }
        if (schedule.kind == LrSchedule::Kind::steplr && (schedule.step_size < 1 || !(schedule.factor > 0.0))) {
            throw ConfigError("steplr needs step_size >= 1 and factor > 0");
        }
        if (schedule.period < 0) { throw ConfigError("cosine period must be >= 0"); }
        if (val_every < 0) { throw ConfigError("val_every must be >= 0"); }
    }
};

/// Fresh (uninitialised) model for data of dimensionality `dim`.
inline FlowModel make_model(const TrainConfig &config, Index dim) {
    config.validate();
    if (config.coupling == CouplingKind::kernel) {
        KernelFlowOptions opt;
        opt.dim = dim;
        opt.blocks = config.blocks;
        opt.aux_points = config.aux_points;
        opt.shared_aux = config.shared_aux;
        opt.freeze_aux = config.freeze_aux;
        opt.gamma = config.gamma;
        opt.gamma_per_layer = config.gamma_per_layer;
        opt.s_clamp = config.s_clamp;
        opt.seed = config.seed;
        return make_kernel_flow(opt);
    }
    MlpFlowOptions opt;
    opt.dim = dim;
    opt.blocks = config.blocks;
    opt.hidden = config.hidden;
    opt.s_clamp = config.s_clamp;
    opt.seed = config.seed;
    return make_mlp_flow(opt);
}

// ---------------------------------------------------------------------------
// Objective and gradient

/// Mean negative log-likelihood of `batch` in nats.
inline double objective(const FlowModel &model, const Matrix &batch) {
    if (batch.rows() == 0) { throw ArgumentError("objective: empty batch"); }
    if (!model.initialized()) { throw StateError("objective: model is not initialised"); }
    const double loss = -log_prob(model, batch).mean();
    if (!std::isfinite(loss)) { throw NumericError("objective: non-finite loss"); }
    return loss;
}

struct GradientResult {
    double loss = 0.0;
    FlowModel grad;  // same structure as the model
};

/// Exact gradient of `objective(model, batch)` by reverse-mode differentiation.
inline GradientResult gradient(const FlowModel &model, const Matrix &batch) {
    if (batch.rows() == 0) { throw ArgumentError("gradient: empty batch"); }
    if (!model.initialized()) { throw StateError("gradient: model is not initialised"); }
    std::vector<Matrix> trace;
    const auto out = flow_forward(model, batch, &trace);
    const auto B = static_cast<double>(batch.rows());
    GradientResult result;
    result.loss = -(standard_normal_log_norm(model.dim) - 0.5 * out.y.rowwise().squaredNorm().array() +
                    out.logdet.array())
                       .mean();
    if (!std::isfinite(result.loss)) { throw NumericError("gradient: non-finite loss"); }
    const Matrix grad_z = out.y / B;
    const Vector grad_logdet = Vector::Constant(batch.rows(), -1.0 / B);
    result.grad = flow_backward(model, trace, grad_z, grad_logdet);
    for_each_param(std::as_const(result.grad), [](const std::string &path, const double *data, Index size, bool) {
        for (Index i = 0; i < size; ++i) {
            if (!std::isfinite(data[i])) { throw NumericError("gradient: non-finite entry in " + path); }
        }
    });
    return result;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    FlowModel m;
    FlowModel v;
    std::size_t step = 0;

    static AdamState zeros_for(const FlowModel &model) { return {zeros_like(model), zeros_like(model), 0}; }
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

namespace detail {

struct ParamSpan {
    double *data;
    Index size;
    bool frozen;
};

inline std::vector<ParamSpan> param_spans(FlowModel &model) {
    std::vector<ParamSpan> spans;
    for_each_param(model, [&](const std::string &, double *data, Index size, bool frozen) {
        spans.push_back({data, size, frozen});
    });
    return spans;
}

}  // namespace detail

/// Bias-corrected Adam update: theta -= lr * m_hat / (sqrt(v_hat) + eps). Frozen tensors are skipped.
inline void adam_step(FlowModel &params, FlowModel &grads, AdamState &state, double lr, const AdamHyper &hyper) {
    auto p = detail::param_spans(params);
    auto g = detail::param_spans(grads);
    auto m = detail::param_spans(state.m);
    auto v = detail::param_spans(state.v);
    if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
        throw ArgumentError("adam_step: parameter structures differ");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k].frozen) { continue; }
        for (Index i = 0; i < p[k].size; ++i) {
            const double gi = g[k].data[i];
            double &mi = m[k].data[i];
            double &vi = v[k].data[i];
            mi = hyper.beta1 * mi + (1.0 - hyper.beta1) * gi;
            vi = hyper.beta2 * vi + (1.0 - hyper.beta2) * gi * gi;
            p[k].data[i] -= lr * (mi / c1) / (std::sqrt(vi / c2) + hyper.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Data-dependent initialisation

/// One pass through the stack: each ActNorm whitens its incoming activations, each kernel
/// coupling takes its auxiliary points from the rows of its incoming unchanged half and
/// resets its weights to zero. Shared points come from the first coupling.
inline void data_dependent_init(FlowModel &model, const Matrix &init_batch, std::uint64_t seed) {
    if (init_batch.rows() == 0) { throw ArgumentError("data_dependent_init: empty batch"); }
    detail::require_cols(init_batch, model.dim, "data_dependent_init");
    Rng rng(seed);
    std::vector<bool> aux_done(model.aux.size(), false);
    Matrix x = init_batch;
    for (auto &layer : model.layers) {
        std::visit(
            [&](auto &l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, ActNormLayer>) {
                    actnorm_initialize(l, x);
                    x = actnorm_forward(l, x).y;
                } else if constexpr (std::is_same_v<T, PermutationLayer>) {
                    x = permute_forward(l, x);
                } else if constexpr (std::is_same_v<T, KernelCouplingLayer>) {
                    l.A_s.setZero();
                    l.A_t.setZero();
                    auto &aux = model.aux.at(l.aux_index);
                    if (!aux_done[l.aux_index]) {
                        const Index N = aux.count();
                        const Index n = x.rows();
                        std::vector<Index> rows;
                        if (n >= N) {
                            std::vector<Index> idx(static_cast<std::size_t>(n));
                            std::iota(idx.begin(), idx.end(), Index{0});
                            std::shuffle(idx.begin(), idx.end(), rng);
                            rows.assign(idx.begin(), idx.begin() + N);
                        } else {
                            std::uniform_int_distribution<Index> pick(0, n - 1);
                            for (Index m = 0; m < N; ++m) { rows.push_back(pick(rng)); }
                        }
                        for (Index m = 0; m < N; ++m) { aux.W.row(m) = x.row(rows[static_cast<std::size_t>(m)]).leftCols(l.d); }
                        aux_done[l.aux_index] = true;
                    }
                    x = coupling_forward(l, aux, x).y;
                } else {
                    x = mlp_coupling_forward(l, x).y;
                }
            },
            layer);
    }
}

// ---------------------------------------------------------------------------
// Training loop

struct CurveRecord {
    Index iteration = 0;
    std::string split;  // "train" | "val"
    double nll = 0.0;   // nats, raw data units
    double lr = 0.0;
    double elapsed = 0.0;  // seconds; 0 in deterministic runs
};

inline constexpr const char *kCurveHeader = "iteration,split,nll,lr,elapsed_s";

/// Learning-curve table: a format-version line, optional comment lines, the fixed header, one
/// record per row.
inline void write_curve(std::ostream &os, const std::vector<CurveRecord> &curve, const std::string &comment = {}) {
    os << "# ferumal-curve v1\n";
    if (!comment.empty()) { os << "# " << comment << "\n"; }
    os << kCurveHeader << "\n";
    char buf[160];
    for (const auto &r : curve) {
        std::snprintf(buf, sizeof(buf), "%lld,%s,%.10f,%.10g,%.3f\n", static_cast<long long>(r.iteration),
                      r.split.c_str(), r.nll, r.lr, r.elapsed);
        os << buf;
    }
}

enum class TrainStatus { completed, diverged };

struct TrainResult {
    FlowModel model;
    std::vector<CurveRecord> curve;
    TrainStatus status = TrainStatus::completed;
    std::string message;
    double initial_loss = 0.0;  // standardised objective right after initialisation
    double best_val_nll = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

/// Epoch-shuffled minibatches; the last incomplete batch of an epoch is dropped.
class BatchSampler {
public:
    BatchSampler(const Matrix &data, Index batch_size, std::uint64_t seed)
        : data_(data), batch_(std::min(batch_size, data.rows())), rng_(seed), order_(static_cast<std::size_t>(data.rows())) {
        std::iota(order_.begin(), order_.end(), Index{0});
        reshuffle();
    }

    Matrix next() {
        if (pos_ + static_cast<std::size_t>(batch_) > order_.size()) { reshuffle(); }
        Matrix out(batch_, data_.cols());
        for (Index i = 0; i < batch_; ++i) { out.row(i) = data_.row(order_[pos_++]); }
        return out;
    }

private:
    void reshuffle() {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
    }

    const Matrix &data_;
    Index batch_;
    Rng rng_;
    std::vector<Index> order_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Maximum-likelihood training. The first minibatch initialises the model; iteration 0 trains on
/// it as well. Recorded NLLs are in raw data units (standardised objective + log-scale of the
/// standardisation). On divergence, the returned model holds the last parameters with a finite loss.
struct TrainHooks {
    Index checkpoint_every = 0;
    std::function<void(Index iteration, const FlowModel &)> on_checkpoint;
    std::function<void(const FlowModel &)> on_initialized;  // after data-dependent init, before step 0
};

inline TrainResult train(FlowModel model, const Dataset &dataset, const TrainConfig &config,
                         const TrainHooks &hooks = {}) {
    config.validate();
    if (dataset.dim() != model.dim) { throw ArgumentError("train: dataset and model dimensionality differ"); }
    if (dataset.train.rows() < 2) { throw DataError("train: need at least two training rows"); }
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        if (config.deterministic) { return 0.0; }
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    const double offset = dataset.stats.log_scale();
    LrSchedule schedule = config.schedule;
    if (schedule.kind == LrSchedule::Kind::cosine && schedule.period == 0) { schedule.period = config.iterations; }
    const AdamHyper hyper{config.beta1, config.beta2, config.eps};

    detail::BatchSampler sampler(dataset.train, config.batch_size, config.seed + 0x9e3779b97f4a7c15ULL);
    Matrix batch = sampler.next();
    data_dependent_init(model, batch, config.seed + 1);

    TrainResult result;
    result.initial_loss = objective(model, batch);
    if (hooks.on_initialized) { hooks.on_initialized(model); }
    AdamState state = AdamState::zeros_for(model);
    const bool validate = config.val_every > 0 && dataset.val.rows() > 0;
    FlowModel best;
    FlowModel last_good = model;

    for (Index it = 0; it < config.iterations; ++it) {
        if (it > 0) { batch = sampler.next(); }
        const double lr = lr_at(schedule, it, config.lr);
        GradientResult g;
        try {
            g = gradient(model, batch);
            if (g.loss > result.initial_loss + config.divergence_margin) {
                throw NumericError("loss " + std::to_string(g.loss) + " exceeds initial loss by more than " +
                                   std::to_string(config.divergence_margin));
            }
        } catch (const NumericError &e) {
            result.status = TrainStatus::diverged;
            result.message = DivergedError(e.what(), static_cast<std::size_t>(it)).what();
            result.model = std::move(last_good);
            return result;
        }
        last_good = model;
        result.curve.push_back({it, "train", g.loss + offset, lr, elapsed()});
        adam_step(model, g.grad, state, lr, hyper);

        if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && (it + 1) % hooks.checkpoint_every == 0) {
            hooks.on_checkpoint(it + 1, model);
        }
        const bool last = it + 1 == config.iterations;
        if (validate && ((it + 1) % config.val_every == 0 || last)) {
            double val = std::numeric_limits<double>::infinity();
            try {
                val = objective(model, dataset.val) + offset;
            } catch (const NumericError &) {
                // a non-finite validation loss never becomes the best checkpoint
            }
            result.curve.push_back({it + 1, "val", val, lr, elapsed()});
            if (std::isfinite(val) && (std::isnan(result.best_val_nll) || val < result.best_val_nll)) {
                result.best_val_nll = val;
                best = model;
            }
        }
    }
    result.model = (config.keep_best && validate && std::isfinite(result.best_val_nll)) ? std::move(best)
                                                                                       : std::move(model);
    return result;
}

/// Mean NLL of `x` (standardised rows) in raw data units.
inline double mean_nll(const FlowModel &model, const Matrix &x, const Standardization &stats) {
    return objective(model, x) + stats.log_scale();
}

// ---------------------------------------------------------------------------
// Hyperparameter search for gamma

struct GammaTrial {
    std::size_t index = 0;
    std::string phase;  // "coarse" | "refine"
    double gamma = 0.0;
    double val_nll = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
    std::string note;
};

struct GammaSearchResult {
    double best_gamma = 0.0;
    double best_val_nll = 0.0;
    std::vector<GammaTrial> trials;
};

class SearchFailedError : public Error {
public:
    SearchFailedError(const std::string &what, std::vector<GammaTrial> trials)
        : Error(what), trials_(std::move(trials)) {}

    [[nodiscard]] const std::vector<GammaTrial> &trials() const { return trials_; }

private:
    std::vector<GammaTrial> trials_;
};

inline constexpr double kGammaTieTolerance = 1e-9;

namespace detail {

/// Runs `evaluate(gamma)` for every gamma, up to `threads` at a time; results keep input order.
template <class Evaluate>
std::vector<GammaTrial> run_trials(const std::vector<double> &gammas, const std::string &phase, std::size_t first_index,
                                   unsigned threads, Evaluate &evaluate) {
    std::vector<GammaTrial> trials(gammas.size());
    auto run_one = [&](std::size_t k) {
        GammaTrial t;
        t.index = first_index + k;
        t.phase = phase;
        t.gamma = gammas[k];
        try {
            const std::optional<double> val = evaluate(gammas[k]);
            if (val && std::isfinite(*val)) {
                t.val_nll = *val;
            } else {
                t.diverged = true;
                t.note = "diverged";
            }
        } catch (const NumericError &e) {
            t.diverged = true;
            t.note = e.what();
        }
        return t;
    };
    const std::size_t width = std::max(1u, threads);
    for (std::size_t begin = 0; begin < gammas.size(); begin += width) {
        const std::size_t end = std::min(gammas.size(), begin + width);
        if (width == 1) {
            trials[begin] = run_one(begin);
            continue;
        }
        std::vector<std::future<GammaTrial>> futures;
        for (std::size_t k = begin; k < end; ++k) { futures.push_back(std::async(std::launch::async, run_one, k)); }
        for (std::size_t k = begin; k < end; ++k) { trials[k] = futures[k - begin].get(); }
    }
    return trials;
}

inline const GammaTrial *best_trial(const std::vector<GammaTrial> &trials) {
    const GammaTrial *best = nullptr;
    for (const auto &t : trials) {
        if (t.diverged) { continue; }
        if (!best || t.val_nll < best->val_nll - kGammaTieTolerance ||
            (std::abs(t.val_nll - best->val_nll) <= kGammaTieTolerance && t.gamma < best->gamma)) {
            best = &t;
        }
    }
    return best;
}

}  // namespace detail

/// Coarse-to-fine search. Every coarse gamma is evaluated; the interval between the best coarse
/// value's grid neighbours is then sampled log-uniformly `refine_count` times. Returns the
/// trial with the lowest validation NLL, preferring the smaller gamma within 1e-9 nats.
/// `evaluate(gamma) -> std::optional<double>`; an empty result or a NumericError marks divergence.
template <class Evaluate>
GammaSearchResult search_gamma(std::vector<double> coarse, int refine_count, std::uint64_t seed, Evaluate &&evaluate,
                               unsigned threads = 1) {
    if (coarse.empty()) { throw ArgumentError("gamma search: empty coarse grid"); }
    for (double g : coarse) {
        if (!(g > 0.0) || !std::isfinite(g)) { throw ArgumentError("gamma search: grid values must be positive"); }
    }
    std::sort(coarse.begin(), coarse.end());
    coarse.erase(std::unique(coarse.begin(), coarse.end()), coarse.end());

    GammaSearchResult result;
    result.trials = detail::run_trials(coarse, "coarse", 0, threads, evaluate);
    const GammaTrial *best = detail::best_trial(result.trials);
    if (!best) { throw SearchFailedError("gamma search: every coarse trial diverged", result.trials); }

    const auto pos = static_cast<std::size_t>(std::find(coarse.begin(), coarse.end(), best->gamma) - coarse.begin());
    const double lo = pos > 0 ? coarse[pos - 1] : coarse[pos];
    const double hi = pos + 1 < coarse.size() ? coarse[pos + 1] : coarse[pos];
    if (refine_count > 0 && hi > lo) {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
        std::vector<double> fine;
        for (int k = 0; k < refine_count; ++k) { fine.push_back(std::exp(u(rng))); }
        auto refined = detail::run_trials(fine, "refine", result.trials.size(), threads, evaluate);
        result.trials.insert(result.trials.end(), refined.begin(), refined.end());
    }
    best = detail::best_trial(result.trials);
    result.best_gamma = best->gamma;
    result.best_val_nll = best->val_nll;
    return result;
}

/// Trains one model per candidate gamma with `budget` iterations and scores it on the val split.
inline GammaSearchResult gamma_search(const Dataset &dataset, const TrainConfig &config,
                                      const std::vector<double> &coarse, int refine_count, Index budget,
                                      unsigned threads = 1) {
    if (dataset.val.rows() == 0) { throw DataError("gamma search needs a validation split"); }
    auto evaluate = [&](double gamma) -> std::optional<double> {
        TrainConfig trial = config;
        trial.gamma = gamma;
        trial.gamma_per_layer.clear();
        trial.iterations = budget;
        if (trial.schedule.kind == LrSchedule::Kind::cosine) { trial.schedule.period = 0; }
        auto run = train(make_model(trial, dataset.dim()), dataset, trial);
        if (run.status == TrainStatus::diverged) { return std::nullopt; }
        return mean_nll(run.model, dataset.val, dataset.stats);
    };
    return search_gamma(coarse, refine_count, config.seed + 7, evaluate, threads);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_path;
    std::size_t checked = 0;
    std::size_t failures = 0;
};

/// Compares `gradient` with central differences of `objective` for every learnable scalar.
/// An entry passes when |a - n| <= abs_floor or |a - n| / max(|a|, |n|) < rel_tol.
inline GradCheckReport gradcheck(const FlowModel &model, const Matrix &batch, double h = 1e-6, double rel_tol = 1e-4,
                                 double abs_floor = 1e-8) {
    const auto analytic = gradient(model, batch);
    FlowModel probe = model;
    std::vector<std::pair<std::string, std::pair<double *, Index>>> slots;
    for_each_param(probe, [&](const std::string &path, double *data, Index size, bool frozen) {
        if (!frozen) { slots.push_back({path, {data, size}}); }
    });
    std::vector<const double *> grads;
    for_each_param(analytic.grad, [&](const std::string &, const double *data, Index, bool frozen) {
        if (!frozen) { grads.push_back(data); }
    });
    GradCheckReport report;
    for (std::size_t k = 0; k < slots.size(); ++k) {
        auto [data, size] = slots[k].second;
        for (Index i = 0; i < size; ++i) {
            const double keep = data[i];
            data[i] = keep + h;
            const double up = objective(probe, batch);
            data[i] = keep - h;
            const double down = objective(probe, batch);
            data[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double a = grads[k][i];
            const double abs_err = std::abs(a - numeric);
            const double scale = std::max(std::abs(a), std::abs(numeric));
            const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
            ++report.checked;
            const bool ok = abs_err <= abs_floor || rel_err < rel_tol;
            if (!ok) { ++report.failures; }
            const double effective = abs_err <= abs_floor ? 0.0 : rel_err;
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (effective > report.max_rel_error) {
                report.max_rel_error = effective;
                report.worst_path = slots[k].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

}  // namespace ferumal
