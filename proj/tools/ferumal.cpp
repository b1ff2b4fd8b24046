// Copyright 2026 The Ferumal Authors.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ferumal/cli.hpp"

namespace {

// Loads the config file (if any) and applies --set overrides on top.
std::optional<nlohmann::json> resolve_config(const std::string &path, const std::vector<std::string> &overrides,
                                             bool required) {
    if (path.empty() && overrides.empty()) {
        if (required) { throw ferumal::ConfigError("a --config file is required"); }
        return std::nullopt;
    }
    nlohmann::json j = path.empty() ? nlohmann::json::object() : ferumal::read_config_file(path);
    for (const auto &o : overrides) { ferumal::apply_override(j, o); }
    return j;
}

}  // namespace

int main(int argc, char **argv) {
    using namespace ferumal;
    CLI::App app{"Kernelised normalising flows: training, evaluation and sampling"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto add_config = [&](CLI::App *cmd) {
        cmd->add_option("-c,--config", config_path, "JSON config file");
        cmd->add_option("--set", overrides, "Override a config key: key=value (repeatable)");
    };

    auto *train = app.add_subcommand("train", "Train a flow and write checkpoint, learning curve and metrics");
    add_config(train);

    std::string checkpoint;
    std::string data;
    auto *eval = app.add_subcommand("eval", "Mean NLL (nats) of a checkpoint on data or its test split");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", data, "Raw CSV to evaluate (default: regenerated test split)");

    Index n = 1000;
    std::uint64_t seed = 0;
    std::string out_path;
    auto *sample = app.add_subcommand("sample", "Draw samples (raw units) to CSV");
    sample->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    sample->add_option("-n,--count", n, "Number of samples");
    sample->add_option("--seed", seed, "Sampling seed");
    sample->add_option("-o,--out", out_path, "Output CSV")->required();

    int bins = 64;
    std::vector<double> range{-4.0, 4.0};
    auto *hist = app.add_subcommand("hist2d", "2-D histogram grid of model samples or raw data");
    hist->add_option("--checkpoint", checkpoint, "Histogram of samples from this checkpoint");
    hist->add_option("--data", data, "Histogram of the rows of this CSV");
    hist->add_option("-n,--count", n, "Number of model samples")->default_val(100000);
    hist->add_option("--seed", seed, "Sampling seed");
    hist->add_option("--bins", bins, "Bins per axis");
    hist->add_option("--range", range, "lo hi")->expected(2);
    hist->add_option("-o,--out", out_path, "Output CSV")->required();

    auto *gradcheck = app.add_subcommand("gradcheck", "Compare exact gradients with central differences");
    add_config(gradcheck);

    std::optional<Index> dim;
    auto *paramcount = app.add_subcommand("paramcount", "Learnable parameter counts: kernel flow vs MLP baseline");
    add_config(paramcount);
    paramcount->add_option("--dim", dim, "Data dimensionality (default: from the dataset)");

    auto *hpsearch = app.add_subcommand("hpsearch", "Coarse-to-fine search for the kernel gamma");
    add_config(hpsearch);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kConfigError;
    }

    std::optional<nlohmann::json> cfg;
    const int config_status = cli::guarded(std::cerr, [&] {
        const bool required = train->parsed() || hpsearch->parsed();
        cfg = resolve_config(config_path, overrides, required);
        return 0;
    });
    if (config_status != 0) { return config_status; }

    if (train->parsed()) { return cli::cmd_train(*cfg, std::cout, std::cerr); }
    if (eval->parsed()) { return cli::cmd_eval(checkpoint, data, std::cout, std::cerr); }
    if (sample->parsed()) { return cli::cmd_sample(checkpoint, n, seed, out_path, std::cerr); }
    if (hist->parsed()) {
        return cli::cmd_hist2d({checkpoint, data, n, seed}, bins, range[0], range[1], out_path, std::cerr);
    }
    if (gradcheck->parsed()) { return cli::cmd_gradcheck(cfg, std::cout, std::cerr); }
    if (paramcount->parsed()) {
        return cli::cmd_paramcount(cfg.value_or(nlohmann::json::object()), dim, std::cout, std::cerr);
    }
    if (hpsearch->parsed()) { return cli::cmd_hpsearch(*cfg, std::cout, std::cerr); }
    return cli::kInternal;
}
