#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "iwbench/baselines.hpp"
#include "iwbench/common.hpp"
#include "iwbench/csv.hpp"
#include "iwbench/dataset.hpp"
#include "iwbench/eval.hpp"
#include "iwbench/iwn.hpp"
#include "iwbench/kernel_mmd.hpp"

namespace iwbench {

/// Invalid configuration (bad file, bad field, unknown method). The CLI maps
/// this to exit code 1; other runtime failures map to 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Experiment configuration and its JSON form

enum class BiasKind { none, input, output };

inline const char* to_string(BiasKind k) {
    switch (k) {
        case BiasKind::none: return "none";
        case BiasKind::input: return "input";
        case BiasKind::output: return "output";
    }
    return "none";
}

inline BiasKind bias_kind_from_string(const std::string& s) {
    if (s == "none") return BiasKind::none;
    if (s == "input") return BiasKind::input;
    if (s == "output") return BiasKind::output;
    throw ConfigError("unknown bias kind \"" + s + "\" (expected none|input|output)");
}

struct CsvSourceConfig {
    std::string path;
    std::vector<std::string> target_columns;
    std::vector<std::string> categorical_columns;
};

struct SyntheticSourceConfig {
    int components = 10;
    int dim = 8;
    int base_rows = 2000;
};

struct MethodConfig {
    std::string name;  // iwn | kmm | kliep | nnw
    std::variant<IwnConfig, KmmConfig, KliepConfig, NnwConfig> config;
};

struct ExperimentConfig {
    std::variant<CsvSourceConfig, SyntheticSourceConfig> dataset = SyntheticSourceConfig{};
    BiasKind bias = BiasKind::input;
    int bias_rows = 1000;
    std::vector<MethodConfig> methods;
    int repetitions = 10;
    std::uint64_t seed = 0;
    double time_budget_seconds = 500.0;
    std::string output_dir = "iwbench_out";

    void validate() const {
        if (bias_rows < 1) throw ConfigError("bias.rows must be >= 1");
        if (methods.empty()) throw ConfigError("methods list is empty");
        if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
        if (!(time_budget_seconds > 0.0)) throw ConfigError("time_budget_seconds must be positive");
        if (output_dir.empty()) throw ConfigError("output_dir is empty");
    }
};

namespace detail {

inline nlohmann::json to_json(const IwnConfig& c) {
    nlohmann::json j{{"batch_size", c.batch_size},     {"lr", c.lr},
                     {"max_iters", c.max_iters},       {"patience", c.patience},
                     {"sigma_init", c.sigma_init},     {"hidden_layers", c.hidden_layers},
                     {"hidden_units", c.hidden_units}, {"seed", c.seed}};
    if (c.trace_full_mmd_every) j["trace_full_mmd_every"] = *c.trace_full_mmd_every;
    return j;
}

inline IwnConfig iwn_from_json(const nlohmann::json& j) {
    IwnConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.patience = j.value("patience", c.patience);
    c.sigma_init = j.value("sigma_init", c.sigma_init);
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    c.hidden_units = j.value("hidden_units", c.hidden_units);
    c.seed = j.value("seed", c.seed);
    if (j.contains("trace_full_mmd_every")) {
        c.trace_full_mmd_every = j.at("trace_full_mmd_every").get<int>();
    }
    return c;
}

inline nlohmann::json to_json(const KmmConfig& c) {
    nlohmann::json j{{"sigma_grid", c.sigma_grid},
                     {"weight_cap", c.weight_cap},
                     {"max_iters", c.max_iters},
                     {"tolerance", c.tolerance}};
    if (c.slack) j["slack"] = *c.slack;
    return j;
}

inline KmmConfig kmm_from_json(const nlohmann::json& j) {
    KmmConfig c;
    c.sigma_grid = j.value("sigma_grid", c.sigma_grid);
    c.weight_cap = j.value("weight_cap", c.weight_cap);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.tolerance = j.value("tolerance", c.tolerance);
    if (j.contains("slack")) c.slack = j.at("slack").get<double>();
    return c;
}

inline nlohmann::json to_json(const KliepConfig& c) {
    return nlohmann::json{{"num_centers", c.num_centers}, {"sigma_grid", c.sigma_grid},
                          {"lr", c.lr},                   {"max_iters", c.max_iters},
                          {"lcv_folds", c.lcv_folds},     {"seed", c.seed}};
}

inline KliepConfig kliep_from_json(const nlohmann::json& j) {
    KliepConfig c;
    c.num_centers = j.value("num_centers", c.num_centers);
    c.sigma_grid = j.value("sigma_grid", c.sigma_grid);
    c.lr = j.value("lr", c.lr);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.lcv_folds = j.value("lcv_folds", c.lcv_folds);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline nlohmann::json to_json(const NnwConfig& c) {
    return nlohmann::json{{"k_grid", c.k_grid}};
}

inline NnwConfig nnw_from_json(const nlohmann::json& j) {
    NnwConfig c;
    c.k_grid = j.value("k_grid", c.k_grid);
    return c;
}

}  // namespace detail

inline nlohmann::json to_json(const MethodConfig& m) {
    nlohmann::json j = std::visit([](const auto& c) { return detail::to_json(c); }, m.config);
    j["name"] = m.name;
    return j;
}

inline MethodConfig method_config_from_json(const nlohmann::json& j) {
    MethodConfig m;
    m.name = j.at("name").get<std::string>();
    try {
        if (m.name == "iwn") {
            m.config = detail::iwn_from_json(j);
        } else if (m.name == "kmm") {
            m.config = detail::kmm_from_json(j);
        } else if (m.name == "kliep") {
            m.config = detail::kliep_from_json(j);
        } else if (m.name == "nnw") {
            m.config = detail::nnw_from_json(j);
        } else {
            throw ConfigError("unknown method \"" + m.name + "\" (expected iwn|kmm|kliep|nnw)");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid method config for \"" + m.name + "\": " + e.what());
    }
    return m;
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    if (const auto* csv = std::get_if<CsvSourceConfig>(&cfg.dataset)) {
        j["dataset"] = {{"type", "csv"},
                        {"path", csv->path},
                        {"target_columns", csv->target_columns},
                        {"categorical_columns", csv->categorical_columns}};
    } else {
        const auto& syn = std::get<SyntheticSourceConfig>(cfg.dataset);
        j["dataset"] = {{"type", "synthetic"},
                        {"components", syn.components},
                        {"dim", syn.dim},
                        {"base_rows", syn.base_rows}};
    }
    j["bias"] = {{"kind", to_string(cfg.bias)}, {"rows", cfg.bias_rows}};
    j["methods"] = nlohmann::json::array();
    for (const auto& m : cfg.methods) {
        j["methods"].push_back(to_json(m));
    }
    j["repetitions"] = cfg.repetitions;
    j["seed"] = cfg.seed;
    j["time_budget_seconds"] = cfg.time_budget_seconds;
    j["output_dir"] = cfg.output_dir;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    try {
        const auto& ds = j.at("dataset");
        const auto type = ds.at("type").get<std::string>();
        if (type == "csv") {
            CsvSourceConfig csv;
            csv.path = ds.at("path").get<std::string>();
            csv.target_columns = ds.value("target_columns", csv.target_columns);
            csv.categorical_columns = ds.value("categorical_columns", csv.categorical_columns);
            cfg.dataset = std::move(csv);
        } else if (type == "synthetic") {
            SyntheticSourceConfig syn;
            syn.components = ds.value("components", syn.components);
            syn.dim = ds.value("dim", syn.dim);
            syn.base_rows = ds.value("base_rows", syn.base_rows);
            cfg.dataset = syn;
        } else {
            throw ConfigError("unknown dataset type \"" + type + "\" (expected csv|synthetic)");
        }
        if (j.contains("bias")) {
            cfg.bias = bias_kind_from_string(j.at("bias").at("kind").get<std::string>());
            cfg.bias_rows = j.at("bias").value("rows", cfg.bias_rows);
        }
        for (const auto& m : j.at("methods")) {
            cfg.methods.push_back(method_config_from_json(m));
        }
        cfg.repetitions = j.value("repetitions", cfg.repetitions);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.time_budget_seconds = j.value("time_budget_seconds", cfg.time_budget_seconds);
        cfg.output_dir = j.value("output_dir", cfg.output_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid experiment config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Run records and summaries

struct RunRecord {
    std::string method;
    int repetition = 0;
    std::optional<double> score_ratio;  // empty means the fit timed out
    double fit_seconds = 0.0;
    double weight_min = 0.0, weight_max = 0.0, weight_mean = 0.0, weight_cv = 0.0;
    std::string trace_file;  // IWN only
};

struct MethodSummary {
    std::string method;
    double avg_score_ratio = 0.0;
    double std_score_ratio = 0.0;
    double avg_rank = 0.0;
    double avg_fit_seconds = 0.0;
    int scored_runs = 0;
    int timeouts = 0;
};

struct ExperimentResult {
    std::vector<RunRecord> records;
    std::vector<MethodSummary> summary;
};

namespace detail {

template <typename F>
inline void parallel_for(int count, int workers, F&& body) {
    if (workers <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (int i; (i = next.fetch_add(1)) < count;) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min(workers, count);
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline void weight_stats(const WeightVector& w, RunRecord& rec) {
    rec.weight_min = w.values.minCoeff();
    rec.weight_max = w.values.maxCoeff();
    rec.weight_mean = w.values.mean();
    const double var = (w.values.array() - rec.weight_mean).square().mean();
    rec.weight_cv = rec.weight_mean != 0.0 ? std::sqrt(var) / rec.weight_mean : 0.0;
}

/// Average ranks (1 = best ratio) with ties sharing the mean of their span.
inline std::vector<double> average_ranks(const std::vector<double>& ratios) {
    std::vector<std::size_t> order(ratios.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ratios[a] < ratios[b]; });
    std::vector<double> ranks(ratios.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && ratios[order[j]] == ratios[order[i]]) ++j;
        const double shared = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) ranks[order[t]] = shared;
        i = j;
    }
    return ranks;
}

inline double sample_std(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline std::string fixed2(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment runner

namespace detail {

struct PreparedData {
    Dataset base;             // preprocessed unbiased dataset (the target set)
    PreprocessStats stats;
};

inline PreparedData prepare_base(const ExperimentConfig& cfg) {
    Dataset raw;
    if (const auto* csv = std::get_if<CsvSourceConfig>(&cfg.dataset)) {
        try {
            raw = load_csv(csv->path, csv->target_columns, csv->categorical_columns);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    } else {
        const auto& syn = std::get<SyntheticSourceConfig>(cfg.dataset);
        const MixtureSpec spec = make_mixture_spec(syn.components, syn.dim, Rng(cfg.seed).split(11).next_u64());
        raw = sample_mixture(spec, syn.base_rows, MixtureSide::source,
                             Rng(cfg.seed).split(12).next_u64());
    }
    if (!raw.y) {
        throw ConfigError("scoring requires output columns (set dataset.target_columns)");
    }
    if (cfg.bias == BiasKind::output && !raw.y) {
        throw ConfigError("output bias requires target columns");
    }
    PreparedData prep;
    prep.stats = fit_preprocess(raw);
    prep.base = apply_preprocess(raw, prep.stats);
    return prep;
}

inline Dataset draw_biased_source(const Dataset& base, BiasKind kind, int n,
                                  std::uint64_t seed) {
    switch (kind) {
        case BiasKind::input:
            return bias_input(base, n, seed);
        case BiasKind::output:
            return bias_output(base, n, seed);
        case BiasKind::none: {
            const Eigen::VectorXd probs = Eigen::VectorXd::Constant(
                base.rows(), 1.0 / static_cast<double>(base.rows()));
            Rng rng(seed);
            Dataset out = base.take_rows(sample_with_replacement(probs, n, rng));
            out.seed_provenance = seed;
            return out;
        }
    }
    throw std::logic_error("unreachable bias kind");
}

struct FitOutcome {
    std::optional<WeightVector> weights;  // empty on timeout
    double seconds = 0.0;
    std::optional<FitReport> iwn_report;
};

inline FitOutcome fit_method(const MethodConfig& method, const Eigen::MatrixXd& source_x,
                             const Eigen::MatrixXd& target_x, std::uint64_t derived_seed,
                             double budget_seconds) {
    const Deadline deadline = Deadline::in_seconds(budget_seconds);
    FitOutcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (const auto* iwn_cfg = std::get_if<IwnConfig>(&method.config)) {
            IwnConfig c = *iwn_cfg;
            c.seed = derived_seed;
            IwnResult res = iwn_fit(source_x, target_x, c, nullptr, deadline);
            out.weights = std::move(res.weights);
            out.iwn_report = std::move(res.report);
        } else if (const auto* kmm_cfg = std::get_if<KmmConfig>(&method.config)) {
            out.weights = select_by_discrepancy(source_x, target_x, *kmm_cfg, deadline)
                              .result.weights;
        } else if (const auto* kliep_cfg = std::get_if<KliepConfig>(&method.config)) {
            KliepConfig c = *kliep_cfg;
            c.seed = derived_seed;
            out.weights = kliep_lcv(source_x, target_x, c, deadline).result.weights;
        } else {
            out.weights =
                select_by_discrepancy(source_x, target_x, std::get<NnwConfig>(method.config),
                                      deadline)
                    .weights;
        }
    } catch (const TimeoutError&) {
        out.weights.reset();
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace detail

/// Runs the full protocol: per repetition, draw the biased source sample, fit
/// every method under the time budget, score each with a weighted ridge
/// against the uniformly weighted one, and aggregate mean/std score ratios,
/// average ranks, and average fit times. Writes runs.csv, summary.csv,
/// summary.txt and per-IWN-run trace files into the output directory.
/// Everything except wall-clock fields is a pure function of the config.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, int workers = 1) {
    cfg.validate();
    const detail::PreparedData prep = detail::prepare_base(cfg);
    std::filesystem::create_directories(cfg.output_dir);

    const Eigen::MatrixXd& target_x = prep.base.x;
    const Eigen::VectorXd target_y = prep.base.y->col(0);

    const auto n_methods = cfg.methods.size();
    std::vector<std::vector<RunRecord>> per_rep(static_cast<std::size_t>(cfg.repetitions));

    detail::parallel_for(cfg.repetitions, workers, [&](int rep) {
        Rng rep_rng = Rng(cfg.seed).split(100 + static_cast<std::uint64_t>(rep));
        const Dataset source =
            detail::draw_biased_source(prep.base, cfg.bias, cfg.bias_rows, rep_rng.next_u64());
        const Eigen::MatrixXd& source_x = source.x;
        const Eigen::VectorXd source_y = source.y->col(0);

        const RidgeModel uniform_model = ridge_fit_weighted(
            source_x, source_y, WeightVector::uniform(source_x.rows()));
        const double mae_uniform = mae(uniform_model, target_x, target_y);

        std::vector<RunRecord>& records = per_rep[static_cast<std::size_t>(rep)];
        for (std::size_t mi = 0; mi < n_methods; ++mi) {
            const MethodConfig& method = cfg.methods[mi];
            RunRecord rec;
            rec.method = method.name;
            rec.repetition = rep;
            const std::uint64_t method_seed = rep_rng.next_u64();
            detail::FitOutcome outcome = detail::fit_method(
                method, source_x, target_x, method_seed, cfg.time_budget_seconds);
            rec.fit_seconds = outcome.seconds;
            if (outcome.weights) {
                detail::weight_stats(*outcome.weights, rec);
                const RidgeModel weighted_model =
                    ridge_fit_weighted(source_x, source_y, *outcome.weights);
                rec.score_ratio =
                    score_ratio(mae(weighted_model, target_x, target_y), mae_uniform);
                if (outcome.iwn_report) {
                    rec.trace_file = "trace_m" + std::to_string(mi) + "_" + method.name + "_rep" +
                                     std::to_string(rep) + ".csv";
                    write_fit_report_csv(*outcome.iwn_report,
                                         (std::filesystem::path(cfg.output_dir) / rec.trace_file)
                                             .string());
                }
            }
            records.push_back(std::move(rec));
        }
    });

    ExperimentResult result;
    for (auto& records : per_rep) {
        for (auto& rec : records) {
            result.records.push_back(std::move(rec));
        }
    }

    // Per-repetition ranks over the methods that produced a score.
    std::vector<std::vector<double>> rank_lists(n_methods);
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        std::vector<double> ratios;
        std::vector<std::size_t> scored_methods;
        for (std::size_t mi = 0; mi < n_methods; ++mi) {
            const auto& rec = result.records[static_cast<std::size_t>(rep) * n_methods + mi];
            if (rec.score_ratio) {
                ratios.push_back(*rec.score_ratio);
                scored_methods.push_back(mi);
            }
        }
        const std::vector<double> ranks = detail::average_ranks(ratios);
        for (std::size_t i = 0; i < scored_methods.size(); ++i) {
            rank_lists[scored_methods[i]].push_back(ranks[i]);
        }
    }

    for (std::size_t mi = 0; mi < n_methods; ++mi) {
        MethodSummary s;
        s.method = cfg.methods[mi].name;
        std::vector<double> ratios;
        double time_acc = 0.0;
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
            const auto& rec = result.records[static_cast<std::size_t>(rep) * n_methods + mi];
            time_acc += rec.fit_seconds;
            if (rec.score_ratio) {
                ratios.push_back(*rec.score_ratio);
            } else {
                ++s.timeouts;
            }
        }
        s.scored_runs = static_cast<int>(ratios.size());
        if (!ratios.empty()) {
            double acc = 0.0;
            for (double r : ratios) acc += r;
            s.avg_score_ratio = acc / static_cast<double>(ratios.size());
            s.std_score_ratio = detail::sample_std(ratios, s.avg_score_ratio);
        }
        if (!rank_lists[mi].empty()) {
            double acc = 0.0;
            for (double r : rank_lists[mi]) acc += r;
            s.avg_rank = acc / static_cast<double>(rank_lists[mi].size());
        }
        s.avg_fit_seconds = time_acc / static_cast<double>(cfg.repetitions);
        result.summary.push_back(std::move(s));
    }

    // runs.csv: raw records; fit_seconds is the only wall-clock column.
    CsvTable runs;
    runs.header = {"method",     "repetition", "score_ratio", "fit_seconds", "weight_min",
                   "weight_max", "weight_mean", "weight_cv",  "trace_file"};
    for (const auto& rec : result.records) {
        runs.rows.push_back({rec.method, std::to_string(rec.repetition),
                             rec.score_ratio ? format_double(*rec.score_ratio) : "timeout",
                             format_double(rec.fit_seconds), format_double(rec.weight_min),
                             format_double(rec.weight_max), format_double(rec.weight_mean),
                             format_double(rec.weight_cv), rec.trace_file});
    }
    write_csv((std::filesystem::path(cfg.output_dir) / "runs.csv").string(), runs);

    CsvTable summary;
    summary.header = {"method",   "avg_score_ratio", "std_score_ratio", "avg_rank",
                      "avg_fit_seconds", "scored_runs",     "timeouts"};
    for (const auto& s : result.summary) {
        summary.rows.push_back({s.method, format_double(s.avg_score_ratio),
                                format_double(s.std_score_ratio), format_double(s.avg_rank),
                                format_double(s.avg_fit_seconds), std::to_string(s.scored_runs),
                                std::to_string(s.timeouts)});
    }
    write_csv((std::filesystem::path(cfg.output_dir) / "summary.csv").string(), summary);

    std::ostringstream txt;
    txt << std::left << std::setw(8) << "Method" << std::right << std::setw(18)
        << "Avg Score Ratio" << std::setw(10) << "Avg Rank" << std::setw(20)
        << "Avg Comp. Time (s)" << '\n';
    for (const auto& s : result.summary) {
        std::string ratio_cell =
            s.scored_runs > 0
                ? detail::fixed2(s.avg_score_ratio) + " (" + detail::fixed2(s.std_score_ratio) + ")"
                : std::string("timeout");
        txt << std::left << std::setw(8) << s.method << std::right << std::setw(18) << ratio_cell
            << std::setw(10) << detail::fixed2(s.avg_rank) << std::setw(20)
            << detail::fixed2(s.avg_fit_seconds) << '\n';
    }
    std::ofstream txt_out(std::filesystem::path(cfg.output_dir) / "summary.txt");
    txt_out << txt.str();

    return result;
}

// ---------------------------------------------------------------------------
// Synthetic mixture study

struct SyntheticStudyConfig {
    int components = 10;
    int dim = 8;
    int rows = 2000;
    int iterations = 4000;
    int eval_every = 100;
    int batch_size = 256;
    double lr = 0.001;
    std::uint64_t seed = 0;
    std::string output_dir = "iwbench_synthetic";
};

struct SyntheticStudyResult {
    double mae_uniform = 0.0;
    double mae_kmm = 0.0;
    double mae_iwn = 0.0;
    double iwn_score_ratio = 0.0;
    double kmm_score_ratio = 0.0;
    double full_mmd_initial = 0.0;            // iteration-0 weights at the initial sigma
    double full_mmd_final = 0.0;              // returned weights at the returned sigma
    double full_mmd_uniform_final_sigma = 0.0;  // uniform weights at the returned sigma
    std::vector<std::pair<int, double>> mae_trace;
    FitReport report;
};

/// Covariate-shift mixture experiment: source and target are drawn from the
/// same Gaussian mixture with different component proportions; IWN trains
/// with periodic evaluation of the downstream weighted ridge against uniform
/// and KMM references. Emits a tidy trace CSV (iteration, series, value).
inline SyntheticStudyResult run_synthetic_study(const SyntheticStudyConfig& cfg) {
    if (cfg.rows < 2 || cfg.iterations < 1 || cfg.eval_every < 1) {
        throw ConfigError("run_synthetic_study: invalid configuration");
    }
    Rng root(cfg.seed);
    const MixtureSpec spec = make_mixture_spec(cfg.components, cfg.dim, root.split(1).next_u64());
    const Dataset source = sample_mixture(spec, cfg.rows, MixtureSide::source, root.split(2).next_u64());
    const Dataset target = sample_mixture(spec, cfg.rows, MixtureSide::target, root.split(3).next_u64());
    const Eigen::MatrixXd& sx = source.x;
    const Eigen::MatrixXd& tx = target.x;
    const Eigen::VectorXd sy = source.y->col(0);
    const Eigen::VectorXd ty = target.y->col(0);

    SyntheticStudyResult out;
    const RidgeModel uniform_model =
        ridge_fit_weighted(sx, sy, WeightVector::uniform(sx.rows()));
    out.mae_uniform = mae(uniform_model, tx, ty);

    const KmmSelection kmm = select_by_discrepancy(sx, tx, KmmConfig{});
    out.mae_kmm = mae(ridge_fit_weighted(sx, sy, kmm.result.weights), tx, ty);

    IwnConfig iwn_cfg;
    iwn_cfg.batch_size = cfg.batch_size;
    iwn_cfg.lr = cfg.lr;
    iwn_cfg.max_iters = cfg.iterations;
    iwn_cfg.patience = cfg.iterations;
    iwn_cfg.seed = root.split(4).next_u64();
    iwn_cfg.trace_full_mmd_every = cfg.eval_every;

    IwnObserver observer;
    observer.every = cfg.eval_every;
    observer.fn = [&](int iter, const MlpModel& model, KernelParam) {
        const WeightVector w_now = iwn_weigh_new(model, sx);
        out.mae_trace.emplace_back(iter, mae(ridge_fit_weighted(sx, sy, w_now), tx, ty));
    };

    IwnResult iwn = iwn_fit(sx, tx, iwn_cfg, &observer);
    out.mae_iwn = mae(ridge_fit_weighted(sx, sy, iwn.weights), tx, ty);
    out.iwn_score_ratio = score_ratio(out.mae_iwn, out.mae_uniform);
    out.kmm_score_ratio = score_ratio(out.mae_kmm, out.mae_uniform);
    out.full_mmd_initial = iwn.report.full_mmd_trace.front().second;
    out.full_mmd_final = weighted_mmd(sx, tx, iwn.weights, iwn.kernel).value;
    out.full_mmd_uniform_final_sigma =
        weighted_mmd(sx, tx, WeightVector::uniform(sx.rows()), iwn.kernel).value;
    out.report = std::move(iwn.report);

    std::filesystem::create_directories(cfg.output_dir);
    CsvTable traces;
    traces.header = {"iteration", "series", "value"};
    for (std::size_t i = 0; i < out.report.batch_mmd_trace.size(); ++i) {
        traces.rows.push_back(
            {std::to_string(i), "batch_mmd", format_double(out.report.batch_mmd_trace[i])});
        traces.rows.push_back(
            {std::to_string(i), "sigma", format_double(out.report.sigma_trace[i])});
    }
    for (const auto& [iter, value] : out.report.full_mmd_trace) {
        traces.rows.push_back({std::to_string(iter), "full_mmd", format_double(value)});
    }
    for (const auto& [iter, value] : out.mae_trace) {
        traces.rows.push_back({std::to_string(iter), "mae_iwn", format_double(value)});
    }
    traces.rows.push_back({"0", "mae_uniform", format_double(out.mae_uniform)});
    traces.rows.push_back({"0", "mae_kmm", format_double(out.mae_kmm)});
    write_csv((std::filesystem::path(cfg.output_dir) / "synthetic_traces.csv").string(), traces);

    CsvTable summary;
    summary.header = {"mae_uniform", "mae_kmm", "mae_iwn", "iwn_score_ratio", "kmm_score_ratio",
                      "full_mmd_initial", "full_mmd_final", "best_iter", "stop_reason",
                      "wall_time_seconds"};
    summary.rows.push_back(
        {format_double(out.mae_uniform), format_double(out.mae_kmm), format_double(out.mae_iwn),
         format_double(out.iwn_score_ratio), format_double(out.kmm_score_ratio),
         format_double(out.full_mmd_initial), format_double(out.full_mmd_final),
         std::to_string(out.report.best_iter), to_string(out.report.stop_reason),
         format_double(out.report.wall_time_seconds)});
    write_csv((std::filesystem::path(cfg.output_dir) / "synthetic_summary.csv").string(), summary);
    return out;
}

// ---------------------------------------------------------------------------
// Scaling study

struct ScalingConfig {
    std::vector<int> sizes = {500, 2000};
    std::vector<int> dims = {32};
    std::vector<std::string> methods = {"iwn", "kmm", "kliep", "nnw"};
    double budget_seconds = 500.0;
    std::uint64_t seed = 0;
    std::string output_dir = "iwbench_scaling";
    // Fixed-work settings so timing ratios across sizes are well defined.
    int iwn_iters = 500;
    int iwn_batch = 256;
    int kmm_iters = 300;
    double kmm_sigma = 0.1;
    int kliep_iters = 1000;
    double kliep_sigma = 0.1;
    int nnw_k = 10;
};

struct ScalingCell {
    std::string method;
    int n = 0;
    int p = 0;
    std::optional<double> seconds;  // empty means the budget expired
};

/// Measures wall-clock fit time per (method, sample size, dimension) on
/// synthetic mixture data, with each solver pinned to a fixed amount of work.
inline std::vector<ScalingCell> run_scaling_study(const ScalingConfig& cfg) {
    if (cfg.sizes.empty() || cfg.dims.empty() || cfg.methods.empty()) {
        throw ConfigError("run_scaling_study: empty grid");
    }
    std::vector<ScalingCell> cells;
    Rng root(cfg.seed);
    for (int p : cfg.dims) {
        for (int n : cfg.sizes) {
            const MixtureSpec spec =
                make_mixture_spec(10, p, root.split(static_cast<std::uint64_t>(p)).next_u64());
            Rng data_rng = root.split(static_cast<std::uint64_t>(p) * 1000003 +
                                      static_cast<std::uint64_t>(n));
            const Dataset source =
                sample_mixture(spec, n, MixtureSide::source, data_rng.next_u64());
            const Dataset target =
                sample_mixture(spec, n, MixtureSide::target, data_rng.next_u64());

            for (const std::string& method : cfg.methods) {
                ScalingCell cell{method, n, p, std::nullopt};
                const Deadline deadline = Deadline::in_seconds(cfg.budget_seconds);
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    if (method == "iwn") {
                        IwnConfig c;
                        c.batch_size = cfg.iwn_batch;
                        c.max_iters = cfg.iwn_iters;
                        c.patience = cfg.iwn_iters;
                        c.seed = data_rng.next_u64();
                        iwn_fit(source.x, target.x, c, nullptr, deadline);
                    } else if (method == "kmm") {
                        KmmConfig c;
                        c.max_iters = cfg.kmm_iters;
                        c.tolerance = 0.0;  // run the full iteration budget
                        kmm_solve(source.x, target.x, cfg.kmm_sigma, c, deadline);
                    } else if (method == "kliep") {
                        KliepConfig c;
                        c.max_iters = cfg.kliep_iters;
                        c.seed = data_rng.next_u64();
                        kliep_fit(source.x, target.x, cfg.kliep_sigma, c, deadline);
                    } else if (method == "nnw") {
                        nnw_fit(source.x, target.x, std::min<int>(cfg.nnw_k, n), deadline);
                    } else {
                        throw ConfigError("run_scaling_study: unknown method \"" + method + "\"");
                    }
                    cell.seconds =
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count();
                } catch (const TimeoutError&) {
                    cell.seconds.reset();
                }
                cells.push_back(std::move(cell));
            }
        }
    }

    std::filesystem::create_directories(cfg.output_dir);
    CsvTable table;
    table.header = {"method", "n", "p", "seconds"};
    for (const auto& cell : cells) {
        table.rows.push_back({cell.method, std::to_string(cell.n), std::to_string(cell.p),
                              cell.seconds ? format_double(*cell.seconds) : "timeout"});
    }
    write_csv((std::filesystem::path(cfg.output_dir) / "scaling.csv").string(), table);
    return cells;
}

// ---------------------------------------------------------------------------
// Architecture / batch-size ablation

struct AblationConfig {
    std::vector<int> layer_grid = {0, 1, 2, 3, 4};
    std::vector<int> unit_grid = {10, 100, 300};
    std::vector<int> batch_grid = {16, 64, 256, 1024, 4096};
    int fixed_batch = 256;
    int fixed_layers = 3;
    int fixed_units = 100;
    int components = 10;
    int dim = 8;
    int base_rows = 2000;
    int bias_rows = 1000;
    int repetitions = 10;
    int iterations = 2000;
    bool run_architecture_arm = true;
    bool run_batch_arm = true;
    std::uint64_t seed = 0;
    std::string output_dir = "iwbench_ablation";
};

struct AblationCell {
    int layers = 0;
    int units = 0;
    int batch = 0;
    double mean_score = 0.0;
    double std_score = 0.0;
    double mean_seconds = 0.0;
    double std_seconds = 0.0;
};

struct AblationResult {
    std::vector<AblationCell> architecture_cells;  // at the fixed batch size
    std::vector<AblationCell> batch_cells;         // at the fixed architecture
};

/// Sweeps weighting-network depth/width at a fixed batch size, and batch size
/// at a fixed architecture, on a synthetic dataset biased through the
/// input-feature bias. Scores are mean/std score ratios over repetitions.
inline AblationResult run_ablation(const AblationConfig& cfg) {
    if (cfg.repetitions < 1 || cfg.iterations < 1) {
        throw ConfigError("run_ablation: invalid configuration");
    }
    Rng root(cfg.seed);
    const MixtureSpec spec = make_mixture_spec(cfg.components, cfg.dim, root.split(1).next_u64());
    Dataset base = sample_mixture(spec, cfg.base_rows, MixtureSide::source, root.split(2).next_u64());
    const PreprocessStats stats = fit_preprocess(base);
    base = apply_preprocess(base, stats);
    const Eigen::MatrixXd& tx = base.x;
    const Eigen::VectorXd ty = base.y->col(0);

    // Per-repetition biased sources and their uniform references are shared
    // by every cell.
    std::vector<Dataset> sources;
    std::vector<double> mae_uniform(static_cast<std::size_t>(cfg.repetitions));
    Rng bias_rng = root.split(3);
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        Dataset src = bias_input(base, cfg.bias_rows, bias_rng.next_u64());
        const RidgeModel uniform_model =
            ridge_fit_weighted(src.x, src.y->col(0), WeightVector::uniform(src.x.rows()));
        mae_uniform[static_cast<std::size_t>(rep)] = mae(uniform_model, tx, ty);
        sources.push_back(std::move(src));
    }

    auto run_cell = [&](int layers, int units, int batch, std::uint64_t cell_seed) {
        AblationCell cell{layers, units, batch, 0, 0, 0, 0};
        std::vector<double> scores, times;
        Rng cell_rng(cell_seed);
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
            const Dataset& src = sources[static_cast<std::size_t>(rep)];
            IwnConfig c;
            c.hidden_layers = layers;
            c.hidden_units = units;
            c.batch_size = batch;
            c.max_iters = cfg.iterations;
            c.patience = cfg.iterations;
            c.seed = cell_rng.next_u64();
            const IwnResult res = iwn_fit(src.x, tx, c);
            const double m = mae(ridge_fit_weighted(src.x, src.y->col(0), res.weights), tx, ty);
            scores.push_back(score_ratio(m, mae_uniform[static_cast<std::size_t>(rep)]));
            times.push_back(res.report.wall_time_seconds);
        }
        double acc = 0.0;
        for (double s : scores) acc += s;
        cell.mean_score = acc / static_cast<double>(scores.size());
        cell.std_score = detail::sample_std(scores, cell.mean_score);
        acc = 0.0;
        for (double t : times) acc += t;
        cell.mean_seconds = acc / static_cast<double>(times.size());
        cell.std_seconds = detail::sample_std(times, cell.mean_seconds);
        return cell;
    };

    AblationResult result;
    Rng cell_seed_rng = root.split(4);
    if (cfg.run_architecture_arm) {
        for (int layers : cfg.layer_grid) {
            for (int units : cfg.unit_grid) {
                result.architecture_cells.push_back(
                    run_cell(layers, units, cfg.fixed_batch, cell_seed_rng.next_u64()));
            }
        }
    }
    Rng batch_seed_rng = root.split(5);
    if (cfg.run_batch_arm) {
        for (int batch : cfg.batch_grid) {
            result.batch_cells.push_back(
                run_cell(cfg.fixed_layers, cfg.fixed_units, batch, batch_seed_rng.next_u64()));
        }
    }

    std::filesystem::create_directories(cfg.output_dir);
    CsvTable arch;
    arch.header = {"layers", "units", "mean_score", "std_score", "mean_seconds", "std_seconds"};
    for (const auto& c : result.architecture_cells) {
        arch.rows.push_back({std::to_string(c.layers), std::to_string(c.units),
                             format_double(c.mean_score), format_double(c.std_score),
                             format_double(c.mean_seconds), format_double(c.std_seconds)});
    }
    write_csv((std::filesystem::path(cfg.output_dir) / "ablation_architecture.csv").string(), arch);

    CsvTable batch;
    batch.header = {"batch_size", "mean_score", "std_score", "mean_seconds", "std_seconds"};
    for (const auto& c : result.batch_cells) {
        batch.rows.push_back({std::to_string(c.batch), format_double(c.mean_score),
                              format_double(c.std_score), format_double(c.mean_seconds),
                              format_double(c.std_seconds)});
    }
    write_csv((std::filesystem::path(cfg.output_dir) / "ablation_batch.csv").string(), batch);

    std::ostringstream txt;
    if (!result.architecture_cells.empty()) {
        txt << "Neural Network Architecture (score ratio, batch " << cfg.fixed_batch << ")\n";
        txt << std::left << std::setw(10) << "Layers";
        for (int units : cfg.unit_grid) {
            txt << std::right << std::setw(14) << (std::to_string(units) + " units");
        }
        txt << '\n';
        std::size_t idx = 0;
        for (int layers : cfg.layer_grid) {
            txt << std::left << std::setw(10) << layers;
            for (std::size_t u = 0; u < cfg.unit_grid.size(); ++u, ++idx) {
                const auto& c = result.architecture_cells[idx];
                txt << std::right << std::setw(14)
                    << (detail::fixed2(c.mean_score) + " (" + detail::fixed2(c.std_score) + ")");
            }
            txt << '\n';
        }
        txt << '\n';
    }
    if (!result.batch_cells.empty()) {
        txt << "Batch Size (architecture " << cfg.fixed_layers << "x" << cfg.fixed_units << ")\n";
        txt << std::left << std::setw(10) << "Size" << std::right << std::setw(14) << "Score"
            << std::setw(16) << "Time (s)" << '\n';
        for (const auto& c : result.batch_cells) {
            txt << std::left << std::setw(10) << c.batch << std::right << std::setw(14)
                << (detail::fixed2(c.mean_score) + " (" + detail::fixed2(c.std_score) + ")")
                << std::setw(16)
                << (detail::fixed2(c.mean_seconds) + " (" + detail::fixed2(c.std_seconds) + ")")
                << '\n';
        }
    }
    std::ofstream txt_out(std::filesystem::path(cfg.output_dir) / "ablation.txt");
    txt_out << txt.str();
    return result;
}

}  // namespace iwbench
