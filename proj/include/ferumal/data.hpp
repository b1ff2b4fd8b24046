// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "ferumal/errors.hpp"
#include "ferumal/types.hpp"

namespace ferumal {

enum class DataSource { synthetic, csv };

/// Per-dimension z-scoring x_std = (x - mean) / std.
struct Standardization {
    RowVector mean;
    RowVector std;

    static Standardization identity(Index D) { return {RowVector::Zero(D), RowVector::Ones(D)}; }

    /// Mean and population standard deviation of `raw`. Throws DataError on a constant column.
    static Standardization fit(const Matrix &raw) {
        if (raw.rows() == 0) { throw DataError("cannot standardise an empty split"); }
        Standardization s;
        s.mean = raw.colwise().mean();
        s.std = (raw.rowwise() - s.mean).array().square().colwise().mean().sqrt();
        for (Index j = 0; j < raw.cols(); ++j) {
            if (!(s.std(j) > 0.0)) { throw DataError("column " + std::to_string(j) + " is constant"); }
        }
        return s;
    }

    [[nodiscard]] Matrix apply(const Matrix &raw) const {
        return (raw.rowwise() - mean).array().rowwise() / std.array();
    }

    [[nodiscard]] Matrix invert(const Matrix &standardized) const {
        return (standardized.array().rowwise() * std.array()).matrix().rowwise() + mean;
    }

    /// log|det| of the map from standardised back to raw units; adding it to a standardised
    /// NLL gives the NLL in raw units.
    [[nodiscard]] double log_scale() const { return std.array().log().sum(); }
};

/// Standardised train/val/test splits. Statistics come from the train split only.
struct Dataset {
    std::string name;
    DataSource source = DataSource::synthetic;
    Matrix train;
    Matrix val;
    Matrix test;
    Standardization stats;

    [[nodiscard]] Index dim() const { return train.cols(); }
};

/// Standardises all three raw splits with statistics fitted on `raw_train`.
inline Dataset make_dataset(std::string name, DataSource source, const Matrix &raw_train, const Matrix &raw_val,
                            const Matrix &raw_test) {
    if (raw_val.cols() != raw_train.cols() || raw_test.cols() != raw_train.cols()) {
        throw DataError("splits disagree on dimensionality");
    }
    Dataset ds;
    ds.name = std::move(name);
    ds.source = source;
    ds.stats = Standardization::fit(raw_train);
    ds.train = ds.stats.apply(raw_train);
    ds.val = ds.stats.apply(raw_val);
    ds.test = ds.stats.apply(raw_test);
    return ds;
}

namespace detail {

inline Matrix shuffle_rows(const Matrix &m, Rng &rng) {
    std::vector<Index> idx(static_cast<std::size_t>(m.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) { out.row(i) = m.row(idx[static_cast<std::size_t>(i)]); }
    return out;
}

inline Matrix take_rows(const Matrix &m, const std::vector<Index> &idx, std::size_t begin, std::size_t end) {
    Matrix out(static_cast<Index>(end - begin), m.cols());
    for (std::size_t i = begin; i < end; ++i) { out.row(static_cast<Index>(i - begin)) = m.row(idx[i]); }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic 2-D generators

/// Two interleaved unit half-circles: (cos a, sin a) and (1 - cos a, 0.5 - sin a), a ~ U[0, pi],
/// plus isotropic Gaussian noise.
inline Matrix gen_moons(Index n, double noise, std::uint64_t seed) {
    if (n < 0) { throw ArgumentError("gen_moons: negative n"); }
    Rng rng(seed);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(n, 2);
    const Index outer = n / 2;
    for (Index i = 0; i < n; ++i) {
        const double a = angle(rng);
        if (i < outer) {
            out(i, 0) = std::cos(a);
            out(i, 1) = std::sin(a);
        } else {
            out(i, 0) = 1.0 - std::cos(a);
            out(i, 1) = 0.5 - std::sin(a);
        }
    }
    if (noise > 0.0) {
        for (Index i = 0; i < n; ++i) {
            out(i, 0) += noise * normal(rng);
            out(i, 1) += noise * normal(rng);
        }
    }
    return detail::shuffle_rows(out, rng);
}

inline constexpr double kPinwheelRadialStd = 0.3;
inline constexpr double kPinwheelTangentialStd = 0.1;
inline constexpr double kPinwheelRate = 0.25;

/// Gaussian arms (radial std 0.3 around radius 1, tangential std 0.1) sheared into a spiral:
/// arm k is rotated by 2 pi k / arms + 0.25 exp(radial coordinate). Arms are equally populated.
inline Matrix gen_pinwheel(Index n, int arms, std::uint64_t seed) {
    if (n < 0) { throw ArgumentError("gen_pinwheel: negative n"); }
    if (arms < 1) { throw ArgumentError("gen_pinwheel: need at least one arm"); }
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(n, 2);
    for (Index i = 0; i < n; ++i) {
        const double radial = 1.0 + kPinwheelRadialStd * normal(rng);
        const double tangential = kPinwheelTangentialStd * normal(rng);
        const auto arm = static_cast<double>(i % arms);
        const double a = 2.0 * std::numbers::pi * arm / arms + kPinwheelRate * std::exp(radial);
        out(i, 0) = std::cos(a) * radial - std::sin(a) * tangential;
        out(i, 1) = std::sin(a) * radial + std::cos(a) * tangential;
    }
    return detail::shuffle_rows(out, rng);
}

/// Points on y = x for x ~ U[-2, 2], plus isotropic Gaussian noise.
inline Matrix gen_line(Index n, double noise, std::uint64_t seed) {
    if (n < 0) { throw ArgumentError("gen_line: negative n"); }
    Rng rng(seed);
    std::uniform_real_distribution<double> pos(-2.0, 2.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(n, 2);
    for (Index i = 0; i < n; ++i) {
        const double x = pos(rng);
        out(i, 0) = x + noise * normal(rng);
        out(i, 1) = x + noise * normal(rng);
    }
    return out;
}

struct ToyDatasetSpec {
    std::string kind = "moons";  // moons | pinwheel | line
    Index n_train = 20000;
    Index n_val = 5000;
    Index n_test = 5000;
    double noise = 0.1;  // moons / line
    int arms = 5;        // pinwheel
    double scale = 2.0;  // raw coordinates are multiplied by this
    std::uint64_t seed = 0;
};

inline Matrix generate_toy(const std::string &kind, Index n, double noise, int arms, std::uint64_t seed) {
    if (kind == "moons") { return gen_moons(n, noise, seed); }
    if (kind == "pinwheel") { return gen_pinwheel(n, arms, seed); }
    if (kind == "line") { return gen_line(n, noise, seed); }
    throw ArgumentError("unknown toy dataset '" + kind + "'");
}

/// Draws train, val and test from independent streams of the same generator.
inline Dataset make_toy_dataset(const ToyDatasetSpec &spec) {
    if (spec.n_train < 2 || spec.n_val < 0 || spec.n_test < 0) { throw ArgumentError("toy dataset: bad split sizes"); }
    auto draw = [&](Index n, std::uint64_t offset) {
        return Matrix(spec.scale * generate_toy(spec.kind, n, spec.noise, spec.arms, spec.seed * 3 + offset));
    };
    return make_dataset(spec.kind, DataSource::synthetic, draw(spec.n_train, 0), draw(spec.n_val, 1),
                        draw(spec.n_test, 2));
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) { s.remove_prefix(1); }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) { s.remove_suffix(1); }
    return s;
}

inline bool parse_double(std::string_view cell, double &value) {
    cell = trim(cell);
    if (!cell.empty() && cell.front() == '+') { cell.remove_prefix(1); }
    if (cell.empty()) { return false; }
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    return ec == std::errc() && ptr == cell.data() + cell.size();
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) { break; }
        start = pos + 1;
    }
    return cells;
}

}  // namespace detail

/// Reads a numeric CSV (rows = instances). A first row that does not parse as numbers is a header.
/// Blank lines and lines starting with '#' are skipped.
inline Matrix read_csv_matrix(const std::string &path) {
    std::ifstream in(path);
    if (!in) { throw DataError("cannot open '" + path + "'"); }
    std::vector<double> values;
    Index cols = -1;
    Index rows = 0;
    std::string line;
    std::size_t line_no = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++line_no;
        const auto content = detail::trim(line);
        if (content.empty() || content.front() == '#') { continue; }
        const auto cells = detail::split_commas(content);
        std::vector<double> row(cells.size());
        bool numeric = true;
        std::size_t bad = 0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (!detail::parse_double(cells[c], row[c])) {
                numeric = false;
                bad = c;
                break;
            }
        }
        if (first_content) {
            first_content = false;
            if (!numeric) {
                cols = static_cast<Index>(cells.size());
                continue;
            }
        }
        if (!numeric) {
            throw DataError(path + ": unparsable cell at row " + std::to_string(line_no) + ", column " +
                            std::to_string(bad + 1) + ": '" + std::string(detail::trim(cells[bad])) + "'");
        }
        if (cols < 0) { cols = static_cast<Index>(row.size()); }
        if (static_cast<Index>(row.size()) != cols) {
            throw DataError(path + ": row " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                            " columns, expected " + std::to_string(cols));
        }
        for (double v : row) {
            if (!std::isfinite(v)) {
                throw DataError(path + ": non-finite value at row " + std::to_string(line_no));
            }
        }
        values.insert(values.end(), row.begin(), row.end());
        ++rows;
    }
    if (rows == 0) { throw DataError(path + ": no data rows"); }
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), rows,
                                                                                                   cols);
}

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

/// Shuffles `raw` with `seed`, splits by fractions and standardises with train statistics.
inline Dataset split_and_standardize(std::string name, DataSource source, const Matrix &raw,
                                     const SplitFractions &fracs, std::uint64_t seed) {
    if (fracs.train <= 0.0 || fracs.val < 0.0 || fracs.test < 0.0 ||
        std::abs(fracs.train + fracs.val + fracs.test - 1.0) > 1e-9) {
        throw ArgumentError("split fractions must be non-negative, train > 0, and sum to 1");
    }
    for (Index j = 0; j < raw.cols(); ++j) {
        if ((raw.col(j).array() == raw(0, j)).all()) {
            throw DataError("column " + std::to_string(j + 1) + " of '" + name + "' is constant");
        }
    }
    const auto n = static_cast<std::size_t>(raw.rows());
    std::vector<Index> idx(n);
    std::iota(idx.begin(), idx.end(), Index{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(fracs.train * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fracs.val * static_cast<double>(n))));
    if (n_train < 2) { throw DataError("'" + name + "' has too few rows for a train split"); }
    return make_dataset(std::move(name), source, detail::take_rows(raw, idx, 0, n_train),
                        detail::take_rows(raw, idx, n_train, n_train + n_val),
                        detail::take_rows(raw, idx, n_train + n_val, n));
}

inline Dataset load_csv(const std::string &path, const SplitFractions &fracs = {}, std::uint64_t seed = 0) {
    return split_and_standardize(path, DataSource::csv, read_csv_matrix(path), fracs, seed);
}

/// Replaces the train split by `count` rows drawn without replacement and re-fits the
/// standardisation on that subsample. Val and test hold the same raw points as before.
inline Dataset subsample_train(const Dataset &ds, Index count, std::uint64_t seed) {
    if (count < 2 || count > ds.train.rows()) {
        throw ArgumentError("subsample_train: count " + std::to_string(count) + " outside [2, " +
                            std::to_string(ds.train.rows()) + "]");
    }
    std::vector<Index> idx(static_cast<std::size_t>(ds.train.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const Matrix raw_train = ds.stats.invert(ds.train);
    return make_dataset(ds.name, ds.source, detail::take_rows(raw_train, idx, 0, static_cast<std::size_t>(count)),
                        ds.stats.invert(ds.val), ds.stats.invert(ds.test));
}

}  // namespace ferumal
