// Command-line front end: fit importance weights on CSV data, run benchmark
// experiments from a JSON config, and reproduce the synthetic, scaling, and
// ablation studies.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iwbench/iwbench.hpp"

namespace {

constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;

int default_workers() {
    if (const char* env = std::getenv("IWBENCH_WORKERS")) {
        try {
            return std::max(1, std::stoi(env));
        } catch (...) {
            std::cerr << "warning: ignoring invalid IWBENCH_WORKERS value \"" << env << "\"\n";
        }
    }
    return 1;
}

struct WeighOptions {
    std::string source_path;
    std::string target_path;
    std::string method = "iwn";
    std::string output_path = "weights.csv";
    std::vector<std::string> target_columns;
    std::vector<std::string> categorical_columns;
    std::uint64_t seed = 0;
    std::optional<int> iters;
    std::optional<int> batch_size;
    std::optional<int> k;
    std::optional<double> sigma;
};

int run_weigh(const WeighOptions& opt) {
    using namespace iwbench;
    const Dataset source_raw = load_csv(opt.source_path, opt.target_columns, opt.categorical_columns);
    const Dataset target_raw = load_csv(opt.target_path, opt.target_columns, opt.categorical_columns);
    // The target sample is the unbiased one; its statistics standardize both.
    const PreprocessStats stats = fit_preprocess(target_raw);
    const Eigen::MatrixXd sx = apply_preprocess(source_raw, stats).x;
    const Eigen::MatrixXd tx = apply_preprocess(target_raw, stats).x;

    WeightVector weights;
    if (opt.method == "iwn") {
        IwnConfig cfg;
        cfg.seed = opt.seed;
        if (opt.iters) {
            cfg.max_iters = *opt.iters;
            cfg.patience = std::min(cfg.patience, cfg.max_iters);
        }
        if (opt.batch_size) cfg.batch_size = *opt.batch_size;
        weights = iwn_fit(sx, tx, cfg).weights;
    } else if (opt.method == "kmm") {
        KmmConfig cfg;
        if (opt.iters) cfg.max_iters = *opt.iters;
        if (opt.sigma) {
            weights = kmm_solve(sx, tx, *opt.sigma, cfg).weights;
        } else {
            weights = select_by_discrepancy(sx, tx, cfg).result.weights;
        }
    } else if (opt.method == "kliep") {
        KliepConfig cfg;
        cfg.seed = opt.seed;
        if (opt.iters) cfg.max_iters = *opt.iters;
        if (opt.sigma) {
            weights = kliep_fit(sx, tx, *opt.sigma, cfg).weights;
        } else {
            weights = kliep_lcv(sx, tx, cfg).result.weights;
        }
    } else if (opt.method == "nnw") {
        if (opt.k) {
            weights = nnw_fit(sx, tx, *opt.k);
        } else {
            weights = select_by_discrepancy(sx, tx, NnwConfig{}).weights;
        }
    } else {
        throw iwbench::ConfigError("unknown method \"" + opt.method + "\"");
    }

    CsvTable out;
    out.header = {"row", "weight"};
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        out.rows.push_back({std::to_string(i), format_double(weights.values[i])});
    }
    write_csv(opt.output_path, out);
    std::cout << "wrote " << weights.size() << " weights to " << opt.output_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Importance weighting for covariate shift: IWN with KMM, KLIEP and "
                 "nearest-neighbor baselines, plus a benchmark harness"};
    app.require_subcommand(1);

    WeighOptions weigh_opt;
    auto* weigh = app.add_subcommand("weigh", "Fit one weighting method on source/target CSVs");
    weigh->add_option("--source", weigh_opt.source_path, "Biased source CSV")->required();
    weigh->add_option("--target", weigh_opt.target_path, "Unbiased target CSV")->required();
    weigh->add_option("--method", weigh_opt.method, "iwn|kmm|kliep|nnw");
    weigh->add_option("--output", weigh_opt.output_path, "Output weights CSV");
    weigh->add_option("--target-columns", weigh_opt.target_columns,
                      "Columns excluded from the inputs");
    weigh->add_option("--categorical-columns", weigh_opt.categorical_columns,
                      "Columns to one-hot encode");
    weigh->add_option("--seed", weigh_opt.seed, "Random seed");
    weigh->add_option("--iters", weigh_opt.iters, "Iteration budget override");
    weigh->add_option("--batch-size", weigh_opt.batch_size, "IWN batch size");
    weigh->add_option("--k", weigh_opt.k, "NNW neighbor count (skips selection)");
    weigh->add_option("--sigma", weigh_opt.sigma, "Kernel sigma (skips selection)");

    std::string bench_config_path;
    std::string bench_output_dir;
    int workers = default_workers();
    auto* bench = app.add_subcommand("bench", "Run a benchmark experiment from a JSON config");
    bench->add_option("--config", bench_config_path, "ExperimentConfig JSON file")->required();
    bench->add_option("--output-dir", bench_output_dir, "Override the config's output directory");
    bench->add_option("--workers", workers, "Concurrent repetitions (default $IWBENCH_WORKERS or 1)");

    iwbench::SyntheticStudyConfig syn_cfg;
    auto* synthetic = app.add_subcommand("synthetic", "Gaussian-mixture covariate-shift study");
    synthetic->add_option("--dim", syn_cfg.dim, "Input dimension");
    synthetic->add_option("--rows", syn_cfg.rows, "Sample size per side");
    synthetic->add_option("--iterations", syn_cfg.iterations, "IWN iterations");
    synthetic->add_option("--eval-every", syn_cfg.eval_every, "Evaluation cadence");
    synthetic->add_option("--seed", syn_cfg.seed, "Random seed");
    synthetic->add_option("--output-dir", syn_cfg.output_dir, "Output directory");

    iwbench::ScalingConfig scaling_cfg;
    auto* scaling = app.add_subcommand("scaling", "Fit-time scaling study");
    scaling->add_option("--sizes", scaling_cfg.sizes, "Sample sizes");
    scaling->add_option("--dims", scaling_cfg.dims, "Input dimensions");
    scaling->add_option("--methods", scaling_cfg.methods, "Methods to time");
    scaling->add_option("--budget", scaling_cfg.budget_seconds, "Per-fit time budget (s)");
    scaling->add_option("--seed", scaling_cfg.seed, "Random seed");
    scaling->add_option("--output-dir", scaling_cfg.output_dir, "Output directory");

    iwbench::AblationConfig abl_cfg;
    auto* ablation = app.add_subcommand("ablation", "Architecture and batch-size ablation");
    ablation->add_option("--layers-grid", abl_cfg.layer_grid, "Hidden layer counts");
    ablation->add_option("--units-grid", abl_cfg.unit_grid, "Hidden units per layer");
    ablation->add_option("--batch-grid", abl_cfg.batch_grid, "Batch sizes");
    ablation->add_option("--dim", abl_cfg.dim, "Input dimension");
    ablation->add_option("--base-rows", abl_cfg.base_rows, "Unbiased dataset size");
    ablation->add_option("--bias-rows", abl_cfg.bias_rows, "Biased sample size");
    ablation->add_option("--reps", abl_cfg.repetitions, "Repetitions per cell");
    ablation->add_option("--iterations", abl_cfg.iterations, "IWN iterations per fit");
    ablation->add_option("--seed", abl_cfg.seed, "Random seed");
    ablation->add_option("--output-dir", abl_cfg.output_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (weigh->parsed()) {
            return run_weigh(weigh_opt);
        }
        if (bench->parsed()) {
            std::ifstream in(bench_config_path);
            if (!in) {
                throw iwbench::ConfigError("cannot open config file: " + bench_config_path);
            }
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw iwbench::ConfigError("config is not valid JSON: " + std::string(e.what()));
            }
            iwbench::ExperimentConfig cfg = iwbench::experiment_config_from_json(j);
            if (!bench_output_dir.empty()) {
                cfg.output_dir = bench_output_dir;
            }
            if (workers > 1) {
                std::cerr << "warning: workers > 1; timing columns are not comparable across runs\n";
            }
            iwbench::run_experiment(cfg, workers);
            std::cout << "results written to " << cfg.output_dir << "\n";
            return 0;
        }
        if (synthetic->parsed()) {
            const auto res = iwbench::run_synthetic_study(syn_cfg);
            std::cout << "mae_uniform=" << res.mae_uniform << " mae_kmm=" << res.mae_kmm
                      << " mae_iwn=" << res.mae_iwn << " iwn_score_ratio=" << res.iwn_score_ratio
                      << "\ntraces written to " << syn_cfg.output_dir << "\n";
            return 0;
        }
        if (scaling->parsed()) {
            const auto cells = iwbench::run_scaling_study(scaling_cfg);
            for (const auto& c : cells) {
                std::cout << c.method << " n=" << c.n << " p=" << c.p << " -> "
                          << (c.seconds ? std::to_string(*c.seconds) + "s" : ">budget") << "\n";
            }
            std::cout << "table written to " << scaling_cfg.output_dir << "\n";
            return 0;
        }
        if (ablation->parsed()) {
            iwbench::run_ablation(abl_cfg);
            std::cout << "tables written to " << abl_cfg.output_dir << "\n";
            return 0;
        }
    } catch (const iwbench::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntimeError;
    }
    return 0;
}
