// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits nonzero if any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ferumal/cli.hpp"
#include "ferumal/ferumal.hpp"
#include "support/oracles.hpp"

namespace ferumal::acceptance {
namespace {

using testing::enumerate_learnable;
using testing::flatten_params;
using testing::grid_mass_2d;
using testing::log_abs_det;
using testing::numerical_jacobian;
using testing::numerical_param_gradient;
using testing::random_kernel_flow;
using testing::random_mlp_flow;
using testing::row_map;

enum class Status { pass, fail, skip };

struct Outcome {
    Status status = Status::fail;
    std::string detail;
};

std::string fmt(const char *format, double a) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), format, a);
    return buf;
}

std::string fmt(const char *format, double a, double b) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), format, a, b);
    return buf;
}

class Stopwatch {
public:
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string config_path(const std::string &name) { return std::string(FERUMAL_SOURCE_DIR) + "/configs/" + name; }

double median3(std::array<double, 3> v) {
    std::sort(v.begin(), v.end());
    return v[1];
}

struct TrainedRun {
    FlowModel model;
    Dataset data;
    double train_nll = 0.0;
    double test_nll = 0.0;
};

TrainedRun train_from_json(const nlohmann::json &j) {
    const RunConfig cfg = run_config_from_json(j);
    TrainedRun run;
    run.data = load_dataset(cfg);
    auto result = train(make_model(cfg.train, run.data.dim()), run.data, cfg.train);
    if (result.status != TrainStatus::completed) { throw NumericError("training diverged: " + result.message); }
    run.model = std::move(result.model);
    run.train_nll = mean_nll(run.model, run.data.train, run.data.stats);
    run.test_nll = mean_nll(run.model, run.data.test, run.data.stats);
    return run;
}

// --- 1 ----------------------------------------------------------------------------------

Outcome invertibility() {
    const Stopwatch clock;
    constexpr std::array<Index, 3> dims{2, 6, 43};
    constexpr std::array<Index, 3> depths{1, 3, 5};
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Index D = dims[static_cast<std::size_t>(i % 3)];
        const Index blocks = depths[static_cast<std::size_t>((i / 3) % 3)];
        const auto model = random_kernel_flow(D, blocks, 16, i % 2 == 0, 5.0, 1000 + static_cast<std::uint64_t>(i));
        const Matrix x = 1.5 * standard_normal_matrix(1000, D, 2000 + static_cast<std::uint64_t>(i));
        const Matrix back = flow_inverse(model, flow_forward(model, x).y);
        worst = std::max(worst, (back - x).cwiseAbs().maxCoeff());
    }
    const double secs = clock.seconds();
    const bool ok = worst < 1e-8 && secs < 60.0;
    return {ok ? Status::pass : Status::fail,
            fmt("max round-trip error %.3g over 20 models x 1000 inputs (limit 1e-8), %.1fs", worst, secs)};
}

// --- 2 ----------------------------------------------------------------------------------

double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale > 0.0 ? std::abs(a - b) / scale : 0.0;
}

Outcome logdet_correctness() {
    const Stopwatch clock;
    double kernel_err = 0.0;
    double mlp_err = 0.0;
    double actnorm_err = 0.0;
    constexpr int kPairs = 20;
    for (int i = 0; i < kPairs; ++i) {
        const Index D = 2 + i % 5;
        const auto seed = static_cast<std::uint64_t>(300 + i);
        const Vector x = standard_normal_matrix(1, D, seed + 7).row(0).transpose();

        const auto kflow = random_kernel_flow(D, 1, 8, false, 5.0, seed, 0.5);
        const auto &kc = std::get<KernelCouplingLayer>(kflow.layers[2]);
        const auto &aux = kflow.aux.at(kc.aux_index);
        auto kmap = row_map([&](const Matrix &u) { return coupling_forward(kc, aux, u).y; });
        const double k_analytic = coupling_forward(kc, aux, x.transpose()).logdet(0);
        kernel_err = std::max(kernel_err, relative_error(k_analytic, log_abs_det(numerical_jacobian(kmap, x))));

        const auto mflow = random_mlp_flow(D, 1, 16, 5.0, seed, 0.5);
        const auto &mc = std::get<MlpCouplingLayer>(mflow.layers[2]);
        auto mmap = row_map([&](const Matrix &u) { return mlp_coupling_forward(mc, u).y; });
        const double m_analytic = mlp_coupling_forward(mc, x.transpose()).logdet(0);
        mlp_err = std::max(mlp_err, relative_error(m_analytic, log_abs_det(numerical_jacobian(mmap, x))));

        ActNormLayer an = ActNormLayer::identity(D);
        Rng rng(seed);
        std::normal_distribution<double> normal(0.0, 0.7);
        for (Index j = 0; j < D; ++j) {
            an.scale(j) = std::exp(normal(rng));
            an.bias(j) = normal(rng);
        }
        auto amap = row_map([&](const Matrix &u) { return actnorm_forward(an, u).y; });
        const double a_analytic = actnorm_forward(an, x.transpose()).logdet(0);
        actnorm_err = std::max(actnorm_err, relative_error(a_analytic, log_abs_det(numerical_jacobian(amap, x))));
    }
    const double secs = clock.seconds();
    const double worst = std::max({kernel_err, mlp_err, actnorm_err});
    const bool ok = worst < 1e-5 && secs < 60.0;
    return {ok ? Status::pass : Status::fail,
            "max relative error kernel " + fmt("%.3g", kernel_err) + ", baseline " + fmt("%.3g", mlp_err) +
                ", actnorm " + fmt("%.3g", actnorm_err) + " over 20 pairs each (limit 1e-5), " + fmt("%.1fs", secs)};
}

// --- 3 ----------------------------------------------------------------------------------

Outcome gradient_correctness() {
    const Stopwatch clock;
    double worst_rel = 0.0;
    double worst_abs = 0.0;
    std::size_t failures = 0;
    std::size_t checked = 0;
    int variant = 0;
    for (bool shared : {false, true}) {
        for (bool clamp : {true, false}) {
            const auto seed = static_cast<std::uint64_t>(40 + variant++);
            const auto model = random_kernel_flow(4, 2, 8, shared, clamp ? std::optional<double>(5.0) : std::nullopt, seed);
            const Matrix batch = standard_normal_matrix(16, 4, seed + 1);
            const auto numeric =
                numerical_param_gradient(model, [&](const FlowModel &m) { return objective(m, batch); });
            const auto analytic = flatten_params(gradient(model, batch).grad);
            if (numeric.size() != analytic.size()) { return {Status::fail, "gradient layout mismatch"}; }
            for (std::size_t i = 0; i < numeric.size(); ++i) {
                const double abs_err = std::abs(numeric[i] - analytic[i]);
                const double rel = relative_error(numeric[i], analytic[i]);
                ++checked;
                worst_abs = std::max(worst_abs, abs_err);
                if (abs_err <= 1e-8) { continue; }
                worst_rel = std::max(worst_rel, rel);
                failures += rel >= 1e-4;
            }
        }
    }
    const double secs = clock.seconds();
    const bool ok = failures == 0 && secs < 120.0;
    return {ok ? Status::pass : Status::fail,
            std::to_string(checked) + " scalars over 4 variants (shared/per-layer x clamp on/off), " +
                std::to_string(failures) + " failures, max abs error " + fmt("%.3g", worst_abs) +
                ", max relative error above the floor " + fmt("%.3g", worst_rel) + " (limit 1e-4, abs floor 1e-8), " + fmt("%.1fs", secs)};
}

// --- 4 and 5 ----------------------------------------------------------------------------

struct ToyResults {
    std::optional<TrainedRun> moons_seed0;
    Outcome outcome;
};

ToyResults toy_nll() {
    ToyResults out;
    std::string detail;
    bool ok = true;
    const std::vector<std::pair<std::string, double>> targets{{"moons", 2.55}, {"pinwheel", 2.60}};
    for (const auto &[name, limit] : targets) {
        const Stopwatch clock;
        const auto base = read_config_file(config_path(name + ".json"));
        const RunConfig cfg = run_config_from_json(base);
        if (cfg.train.batch_size != 200 || cfg.train.iterations != 10000) {
            out.outcome = {Status::fail, name + ".json must use batch 200 and 10000 iterations"};
            return out;
        }
        std::array<double, 3> test{};
        for (int s = 0; s < 3; ++s) {
            auto j = base;
            j["seed"] = s;
            j["data_seed"] = s;
            auto run = train_from_json(j);
            test[static_cast<std::size_t>(s)] = run.test_nll;
            if (name == "moons" && s == 0) { out.moons_seed0 = std::move(run); }
        }
        const double med = median3(test);
        const double secs = clock.seconds();
        ok = ok && med <= limit && secs <= 20.0 * 60.0;
        if (!detail.empty()) { detail += "; "; }
        detail += name + " median test NLL " + fmt("%.4f", med) + fmt(" (limit %.2f, %.0fs)", limit, secs);
    }
    out.outcome = {ok ? Status::pass : Status::fail, detail};
    return out;
}

Outcome normalisation(const std::optional<TrainedRun> &moons) {
    if (!moons) { return {Status::fail, "no trained moons model"}; }
    const auto &stats = moons->data.stats;
    // Density in raw data coordinates.
    auto log_density = [&](const Matrix &raw) -> Vector {
        return (log_prob(moons->model, stats.apply(raw)).array() - stats.log_scale()).matrix();
    };
    const double mass = grid_mass_2d(log_density, -6.0, 6.0, 512);
    const bool ok = mass >= 0.99 && mass <= 1.01;
    return {ok ? Status::pass : Status::fail,
            fmt("density mass over [-6,6]^2 on a 512^2 grid = %.5f (range [0.99, 1.01])", mass)};
}

// --- 6 ----------------------------------------------------------------------------------

/// NLL of a batch under the Gaussian fitted by per-dimension whitening.
double whitened_gaussian_nll(const Matrix &batch) {
    const auto D = static_cast<double>(batch.cols());
    const RowVector mean = batch.colwise().mean();
    const RowVector var = (batch.rowwise() - mean).array().square().colwise().mean();
    return 0.5 * D * (1.0 + std::log(2.0 * std::numbers::pi)) + 0.5 * var.array().log().sum();
}

Outcome initialisation() {
    double closed_form_err = 0.0;
    double worst_excess = -std::numeric_limits<double>::infinity();
    int cases = 0;
    for (const std::string name : {"moons", "pinwheel"}) {
        for (int s = 0; s < 3; ++s) {
            auto j = read_config_file(config_path(name + ".json"));
            j["seed"] = s;
            j["data_seed"] = s;
            const RunConfig cfg = run_config_from_json(j);
            const Dataset ds = load_dataset(cfg);
            const Matrix batch = ds.train.topRows(cfg.train.batch_size);

            TrainConfig kcfg = cfg.train;
            kcfg.coupling = CouplingKind::kernel;
            TrainConfig mcfg = cfg.train;
            mcfg.coupling = CouplingKind::mlp;
            FlowModel kernel = make_model(kcfg, ds.dim());
            FlowModel mlp = make_model(mcfg, ds.dim());
            data_dependent_init(kernel, batch, 5);
            data_dependent_init(mlp, batch, 5);
            const double expected = whitened_gaussian_nll(batch);
            const double k_loss = objective(kernel, batch);
            const double m_loss = objective(mlp, batch);
            closed_form_err = std::max({closed_form_err, std::abs(k_loss - expected), std::abs(m_loss - expected)});
            worst_excess = std::max(worst_excess, k_loss - m_loss);

            // Iteration 0 inside the training loop: both draw the same first batch from the same seed.
            kcfg.iterations = 1;
            mcfg.iterations = 1;
            const auto kr = train(make_model(kcfg, ds.dim()), ds, kcfg);
            const auto mr = train(make_model(mcfg, ds.dim()), ds, mcfg);
            worst_excess = std::max(worst_excess, kr.initial_loss - mr.initial_loss);
            worst_excess = std::max(worst_excess, kr.curve.front().nll - mr.curve.front().nll);
            ++cases;
        }
    }
    const bool ok = closed_form_err <= 1e-10 && worst_excess <= 1e-10;
    return {ok ? Status::pass : Status::fail,
            std::to_string(cases) + " batches: max |init loss - closed form| " + fmt("%.3g", closed_form_err) +
                " (limit 1e-10), max kernel - baseline iteration-0 loss " + fmt("%.3g", worst_excess) +
                " (limit 1e-10)"};
}

// --- 7 ----------------------------------------------------------------------------------

Outcome low_data() {
    const Stopwatch clock;
    const auto base = read_config_file(config_path("pinwheel_500.json"));
    std::array<double, 3> k_test{}, m_test{}, k_gap{}, m_gap{};
    for (int s = 0; s < 3; ++s) {
        auto j = base;
        j["seed"] = s;
        j["data_seed"] = s;
        j["coupling"] = "kernel";
        const auto k = train_from_json(j);
        j["coupling"] = "mlp";
        const auto m = train_from_json(j);
        const auto i = static_cast<std::size_t>(s);
        k_test[i] = k.test_nll;
        m_test[i] = m.test_nll;
        k_gap[i] = k.test_nll - k.train_nll;
        m_gap[i] = m.test_nll - m.train_nll;
    }
    const double secs = clock.seconds();
    const double kt = median3(k_test);
    const double mt = median3(m_test);
    const double kg = median3(k_gap);
    const double mg = median3(m_gap);
    bool ok = kt <= mt && mg > kg && secs <= 15.0 * 60.0;
    std::string detail = "pinwheel-500 median test NLL kernel " + fmt("%.4f", kt) + " vs baseline " + fmt("%.4f", mt) +
                         ", median gap kernel " + fmt("%.4f", kg) + " vs baseline " + fmt("%.4f", mg) +
                         fmt(", %.0fs", secs);

    if (const char *csv = std::getenv("FERUMAL_MINIBOONE_CSV")) {
        auto j = read_config_file(config_path("tabular.json"));
        j["data_path"] = csv;
        j["subsample"] = 500;
        j["shared_aux"] = true;
        const auto run = train_from_json(j);
        ok = ok && run.test_nll <= 30.0;
        detail += "; miniboone-500 test NLL " + fmt("%.3f", run.test_nll) + " (limit 30.0)";
    } else {
        detail += "; miniboone-500 skipped (FERUMAL_MINIBOONE_CSV unset)";
    }
    return {ok ? Status::pass : Status::fail, detail};
}

// --- 8 ----------------------------------------------------------------------------------

Outcome parameter_counts() {
    Rng rng(8);
    auto uniform = [&rng](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
    int mismatches = 0;
    int shared_not_smaller = 0;
    for (int i = 0; i < 50; ++i) {
        const Index D = uniform(2, 43);
        const Index blocks = uniform(1, 5);
        KernelFlowOptions k;
        k.dim = D;
        k.blocks = blocks;
        k.aux_points = uniform(1, 60);
        k.shared_aux = i % 2 == 0;
        k.freeze_aux = i % 7 == 0;
        k.seed = static_cast<std::uint64_t>(i);
        const auto kernel = make_kernel_flow(k);
        mismatches += param_count(kernel).total != enumerate_learnable(kernel);

        MlpFlowOptions m;
        m.dim = D;
        m.blocks = blocks;
        m.hidden = uniform(1, 128);
        m.seed = static_cast<std::uint64_t>(i);
        const auto mlp = make_mlp_flow(m);
        mismatches += baseline_param_count(mlp).total != enumerate_learnable(mlp);

        // Every block holds two couplings, so L >= 2 always.
        k.freeze_aux = false;
        k.shared_aux = true;
        const auto shared = param_count(make_kernel_flow(k)).total;
        k.shared_aux = false;
        const auto per_layer = param_count(make_kernel_flow(k)).total;
        shared_not_smaller += !(shared < per_layer);
    }

    const RunConfig tab = run_config_from_json(read_config_file(config_path("tabular.json")));
    const auto cmp = cli::compare_param_counts(tab.train, 43);
    const double ratio = static_cast<double>(cmp.kernel.total) / static_cast<double>(cmp.baseline.total);
    const bool ok = mismatches == 0 && shared_not_smaller == 0 && ratio < 0.40;
    return {ok ? Status::pass : Status::fail,
            std::to_string(mismatches) + " enumeration mismatches over 50 configs, " + std::to_string(shared_not_smaller) +
                " shared >= per-layer; D=43 tabular kernel " + std::to_string(cmp.kernel.total) + " vs baseline " +
                std::to_string(cmp.baseline.total) + fmt(" = %.1f%% (limit 40%%)", 100.0 * ratio)};
}

// --- 9 ----------------------------------------------------------------------------------

Outcome power_smoke() {
    const char *csv = std::getenv("FERUMAL_POWER_CSV");
    if (csv == nullptr) { return {Status::skip, "FERUMAL_POWER_CSV unset; UCI Power data not supplied"}; }
    auto j = read_config_file(config_path("tabular.json"));
    j["data_path"] = csv;
    j["iterations"] = 5000;
    const RunConfig cfg = run_config_from_json(j);
    const Dataset ds = load_dataset(cfg);
    double post_init = std::numeric_limits<double>::quiet_NaN();
    TrainHooks hooks;
    hooks.on_initialized = [&](const FlowModel &m) { post_init = mean_nll(m, ds.test, ds.stats); };
    const auto result = train(make_model(cfg.train, ds.dim()), ds, cfg.train, hooks);
    if (result.status != TrainStatus::completed) { return {Status::fail, "training diverged: " + result.message}; }
    const double final_nll = mean_nll(result.model, ds.test, ds.stats);
    const double drop = post_init - final_nll;
    return {drop >= 1.0 ? Status::pass : Status::fail,
            fmt("power test NLL %.4f after init, ", post_init) + fmt("%.4f after 5000 iterations, ", final_nll) +
                fmt("drop %.4f (need >= 1.0)", drop)};
}

Outcome guarded(const std::function<Outcome()> &body) {
    try {
        return body();
    } catch (const std::exception &e) {
        return {Status::fail, std::string("error: ") + e.what()};
    }
}

int run() {
    int failures = 0;
    auto report = [&](int id, const char *name, const Outcome &o) {
        const char *tag = o.status == Status::pass ? "PASS" : (o.status == Status::skip ? "SKIP" : "FAIL");
        failures += o.status == Status::fail;
        std::printf("criterion %d %-20s %s  %s\n", id, name, tag, o.detail.c_str());
        std::fflush(stdout);
    };
    report(1, "invertibility", guarded(invertibility));
    report(2, "logdet", guarded(logdet_correctness));
    report(3, "gradients", guarded(gradient_correctness));
    ToyResults toys;
    try {
        toys = toy_nll();
    } catch (const std::exception &e) {
        toys.outcome = {Status::fail, std::string("error: ") + e.what()};
    }
    report(4, "toy-nll", toys.outcome);
    report(5, "normalisation", guarded([&] { return normalisation(toys.moons_seed0); }));
    report(6, "initialisation", guarded(initialisation));
    report(7, "low-data", guarded(low_data));
    report(8, "param-counts", guarded(parameter_counts));
    report(9, "power-smoke", guarded(power_smoke));
    return failures == 0 ? 0 : 1;
}

}  // namespace
}  // namespace ferumal::acceptance

int main() { return ferumal::acceptance::run(); }
