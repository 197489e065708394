#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "iwbench/common.hpp"
#include "iwbench/csv.hpp"
#include "iwbench/kernel_mmd.hpp"
#include "iwbench/network.hpp"

namespace iwbench {

struct IwnConfig {
    int batch_size = 256;
    double lr = 0.001;
    int max_iters = 50000;
    int patience = 20000;
    double sigma_init = 0.1;
    int hidden_layers = 3;
    int hidden_units = 100;
    std::uint64_t seed = 0;
    std::optional<int> trace_full_mmd_every;

    void validate() const {
        if (batch_size < 2) throw std::invalid_argument("IwnConfig: batch_size must be >= 2");
        if (!(lr > 0.0)) throw std::invalid_argument("IwnConfig: lr must be positive");
        if (max_iters < 1) throw std::invalid_argument("IwnConfig: max_iters must be >= 1");
        if (patience < 1 || patience > max_iters) {
            throw std::invalid_argument("IwnConfig: need 1 <= patience <= max_iters");
        }
        if (!(sigma_init > 0.0)) throw std::invalid_argument("IwnConfig: sigma_init must be positive");
        if (hidden_layers < 0) throw std::invalid_argument("IwnConfig: hidden_layers must be >= 0");
        if (trace_full_mmd_every && *trace_full_mmd_every < 1) {
            throw std::invalid_argument("IwnConfig: trace_full_mmd_every must be >= 1");
        }
    }
};

enum class StopReason { max_iters, early_stop };

inline const char* to_string(StopReason r) {
    return r == StopReason::max_iters ? "max_iters" : "early_stop";
}

struct FitReport {
    std::vector<double> batch_mmd_trace;
    std::vector<double> sigma_trace;
    std::vector<std::pair<int, double>> full_mmd_trace;  // sparse (iteration, value)
    int best_iter = 0;
    StopReason stop_reason = StopReason::max_iters;
    double wall_time_seconds = 0.0;
    bool sigma_clamped = false;
    bool pretrain_converged = true;
    bool degenerate_final_weights = false;

    int iterations_run() const { return static_cast<int>(batch_mmd_trace.size()); }
};

/// Writes the per-iteration traces as CSV: iteration, batch_mmd, sigma, and
/// full_mmd where recorded (empty otherwise).
inline void write_fit_report_csv(const FitReport& report, const std::string& path) {
    CsvTable table;
    table.header = {"iteration", "batch_mmd", "sigma", "full_mmd"};
    std::size_t next_full = 0;
    for (std::size_t i = 0; i < report.batch_mmd_trace.size(); ++i) {
        std::string full;
        if (next_full < report.full_mmd_trace.size() &&
            report.full_mmd_trace[next_full].first == static_cast<int>(i)) {
            full = format_double(report.full_mmd_trace[next_full].second);
            ++next_full;
        }
        table.rows.push_back({std::to_string(i), format_double(report.batch_mmd_trace[i]),
                              format_double(report.sigma_trace[i]), std::move(full)});
    }
    write_csv(path, table);
}

/// Evaluates the trained weighting network on new rows: w = |W(x)| rescaled to
/// mean 1 over those rows.
inline WeightVector iwn_weigh_new(const MlpModel& model, const Eigen::MatrixXd& new_x) {
    if (new_x.rows() < 1) {
        throw std::invalid_argument("iwn_weigh_new: empty input");
    }
    return WeightVector::unit_mean(mlp_forward(model, new_x).cwiseAbs());
}

struct IwnResult {
    WeightVector weights;
    MlpModel model;
    KernelParam kernel;
    FitReport report;
};

/// Optional per-iteration hook; `every` controls the cadence. The observer
/// sees the current model and kernel parameter and must not mutate them.
struct IwnObserver {
    int every = 1;
    std::function<void(int iter, const MlpModel&, KernelParam)> fn;
};

namespace detail {

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m,
                                   const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
    }
    return out;
}

}  // namespace detail

/// Trains the importance weighting network: alternating Adam descent on the
/// network and Adam ascent on log(sigma) over paired mini-batches of the
/// self-normalized batch MMD. Batches are drawn uniformly with replacement
/// from each sample, so any batch size works for any m, n. Early stopping
/// watches an exponential moving average (decay 0.99) of the noisy batch
/// objective; the parameters at the smoothed minimum are returned.
inline IwnResult iwn_fit(const Eigen::MatrixXd& source_x, const Eigen::MatrixXd& target_x,
                         const IwnConfig& cfg = {}, const IwnObserver* observer = nullptr,
                         const Deadline& deadline = {}) {
    cfg.validate();
    if (source_x.rows() < 1 || target_x.rows() < 1) {
        throw std::invalid_argument("iwn_fit: empty source or target sample");
    }
    if (source_x.cols() != target_x.cols()) {
        throw std::invalid_argument("iwn_fit: feature dimension mismatch");
    }
    constexpr double kLogSigmaLo = -6.0 * M_LN10;  // sigma clamp [1e-6, 1e6]
    constexpr double kLogSigmaHi = 6.0 * M_LN10;

    const auto t_start = std::chrono::steady_clock::now();
    Rng root(cfg.seed);
    Rng init_rng = root.split(1);
    Rng pretrain_rng = root.split(2);
    Rng batch_rng = root.split(3);

    MlpModel model = mlp_init(static_cast<int>(source_x.cols()), cfg.hidden_layers,
                              cfg.hidden_units, init_rng.next_u64());
    PretrainConfig pre_cfg;
    pre_cfg.batch_size = cfg.batch_size;
    pre_cfg.adam.lr = cfg.lr;
    pre_cfg.seed = pretrain_rng.next_u64();

    IwnResult result;
    result.report.pretrain_converged = pretrain_to_one(model, source_x, pre_cfg).converged;

    AdamState theta_state = AdamState::for_model(model, AdamConfig{.lr = cfg.lr});
    ScalarAdam sigma_state{AdamConfig{.lr = cfg.lr}};
    double log_sigma = std::log(cfg.sigma_init);

    MlpModel best_model = model;
    double best_log_sigma = log_sigma;
    double best_smoothed = std::numeric_limits<double>::infinity();
    double smoothed = 0.0;
    constexpr double kEmaDecay = 0.99;

    FitReport& report = result.report;
    report.batch_mmd_trace.reserve(static_cast<std::size_t>(cfg.max_iters));
    report.sigma_trace.reserve(static_cast<std::size_t>(cfg.max_iters));
    report.stop_reason = StopReason::max_iters;

    const Eigen::Index m = source_x.rows();
    const Eigen::Index n = target_x.rows();
    std::vector<Eigen::Index> sidx(static_cast<std::size_t>(cfg.batch_size));
    std::vector<Eigen::Index> tidx(static_cast<std::size_t>(cfg.batch_size));

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        check_deadline(deadline, "iwn_fit");
        for (auto& i : sidx) i = static_cast<Eigen::Index>(batch_rng.below(static_cast<std::uint64_t>(m)));
        for (auto& i : tidx) i = static_cast<Eigen::Index>(batch_rng.below(static_cast<std::uint64_t>(n)));
        const Eigen::MatrixXd sb = detail::gather_rows(source_x, sidx);
        const Eigen::MatrixXd tb = detail::gather_rows(target_x, tidx);

        ForwardCache cache;
        const Eigen::VectorXd raw = mlp_forward(model, sb, &cache);
        const BatchMmdGradients grads = batch_mmd_grads(sb, tb, raw, KernelParam{log_sigma});
        if (!std::isfinite(grads.value.value)) {
            throw std::runtime_error("iwn_fit: non-finite batch objective at iteration " +
                                     std::to_string(iter));
        }

        adam_step(model, mlp_backward(model, cache, grads.d_raw), theta_state);
        log_sigma = sigma_state.descend(log_sigma, -grads.d_log_sigma);  // ascent
        if (log_sigma < kLogSigmaLo || log_sigma > kLogSigmaHi) {
            log_sigma = std::clamp(log_sigma, kLogSigmaLo, kLogSigmaHi);
            report.sigma_clamped = true;
        }

        report.batch_mmd_trace.push_back(grads.value.value);
        report.sigma_trace.push_back(std::exp(log_sigma));

        smoothed = iter == 0 ? grads.value.value
                             : kEmaDecay * smoothed + (1.0 - kEmaDecay) * grads.value.value;
        if (smoothed < best_smoothed) {
            best_smoothed = smoothed;
            report.best_iter = iter;
            best_model = model;
            best_log_sigma = log_sigma;
        }

        if (cfg.trace_full_mmd_every && iter % *cfg.trace_full_mmd_every == 0) {
            const WeightVector w_now = iwn_weigh_new(model, source_x);
            report.full_mmd_trace.emplace_back(
                iter, weighted_mmd(source_x, target_x, w_now, KernelParam{log_sigma}).value);
        }
        if (observer && observer->fn && observer->every > 0 && iter % observer->every == 0) {
            observer->fn(iter, model, KernelParam{log_sigma});
        }

        if (iter - report.best_iter >= cfg.patience) {
            report.stop_reason = StopReason::early_stop;
            break;
        }
    }

    result.model = std::move(best_model);
    result.kernel = KernelParam{best_log_sigma};

    Eigen::VectorXd final_abs = mlp_forward(result.model, source_x).cwiseAbs();
    if (final_abs.sum() <= 0.0) {
        report.degenerate_final_weights = true;
    }
    result.weights = WeightVector::unit_mean(std::move(final_abs));

    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

}  // namespace iwbench
