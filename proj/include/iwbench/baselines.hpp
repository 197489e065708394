#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "iwbench/common.hpp"
#include "iwbench/kdtree.hpp"
#include "iwbench/kernel_mmd.hpp"
#include "iwbench/rng.hpp"

namespace iwbench {

// ---------------------------------------------------------------------------
// Kernel mean matching

struct KmmConfig {
    std::vector<double> sigma_grid = decade_grid(-4, 4);
    double weight_cap = 1000.0;
    /// Mean-constraint slack; defaults to sqrt(m-1)/sqrt(m) at solve time.
    std::optional<double> slack;
    int max_iters = 2000;
    double tolerance = 1e-8;

    double resolve_slack(Eigen::Index m) const {
        if (slack) {
            if (*slack < 0.0) throw std::invalid_argument("KmmConfig: slack must be >= 0");
            return *slack;
        }
        return std::sqrt(static_cast<double>(m - 1)) / std::sqrt(static_cast<double>(m));
    }

    void validate() const {
        if (!(weight_cap > 0.0)) throw std::invalid_argument("KmmConfig: weight_cap must be positive");
        if (sigma_grid.empty()) throw std::invalid_argument("KmmConfig: empty sigma grid");
        for (double s : sigma_grid) {
            if (!(s > 0.0)) throw std::invalid_argument("KmmConfig: sigma grid values must be positive");
        }
        if (max_iters < 1) throw std::invalid_argument("KmmConfig: max_iters must be >= 1");
    }
};

struct KmmResult {
    WeightVector weights;
    bool converged = false;
    int iters = 0;
    double objective = 0.0;  // empirical weighted MMD value at the returned weights
};

namespace detail {

/// Projection onto {0 <= w <= cap} intersected with {|mean(w) - 1| <= eps},
/// by Dykstra's alternating projections (both sets are convex; the box and
/// the slab projections are closed-form).
inline void project_box_slab(Eigen::VectorXd& w, double cap, double eps) {
    const auto n = static_cast<double>(w.size());
    Eigen::VectorXd p = Eigen::VectorXd::Zero(w.size());
    Eigen::VectorXd q = Eigen::VectorXd::Zero(w.size());
    Eigen::VectorXd x = w;
    for (int cycle = 0; cycle < 200; ++cycle) {
        const Eigen::VectorXd y = (x + p).cwiseMax(0.0).cwiseMin(cap);
        p = x + p - y;
        Eigen::VectorXd z = y + q;
        const double mean = z.sum() / n;
        if (mean > 1.0 + eps) {
            z.array() -= mean - (1.0 + eps);
        } else if (mean < 1.0 - eps) {
            z.array() += (1.0 - eps) - mean;
        }
        q = y + q - z;
        const double drift = (z - x).cwiseAbs().maxCoeff();
        x = z;
        if (drift < 1e-13 && cycle > 0) {
            break;
        }
    }
    // Final polish: the slab projection is applied last above, so nail the box
    // and re-check the (much wider) slab.
    w = x.cwiseMax(0.0).cwiseMin(cap);
    const double mean = w.sum() / n;
    if (mean > 1.0 + eps) {
        w.array() -= mean - (1.0 + eps);
        w = w.cwiseMax(0.0);
    } else if (mean < 1.0 - eps) {
        w.array() += (1.0 - eps) - mean;
        w = w.cwiseMin(cap);
    }
}

}  // namespace detail

/// Minimizes the empirical weighted MMD over per-instance weights subject to
/// 0 <= w_i <= weight_cap and |mean(w) - 1| <= slack, by projected gradient
/// descent with a Lipschitz step (Gershgorin row-sum bound on the quadratic
/// term). Starts from the feasible uniform vector, so the returned objective
/// never exceeds the uniform one.
inline KmmResult kmm_solve(const Eigen::MatrixXd& source_x, const Eigen::MatrixXd& target_x,
                           double sigma, const KmmConfig& cfg = {}, const Deadline& deadline = {}) {
    cfg.validate();
    if (source_x.rows() < 1 || target_x.rows() < 1) {
        throw std::invalid_argument("kmm_solve: empty sample");
    }
    if (source_x.cols() != target_x.cols()) {
        throw std::invalid_argument("kmm_solve: feature dimension mismatch");
    }
    const Eigen::Index m = source_x.rows();
    const Eigen::Index n = target_x.rows();
    const double eps = cfg.resolve_slack(m);
    const KernelParam kernel = KernelParam::from_sigma(sigma);

    check_deadline(deadline, "kmm_solve");
    const Eigen::MatrixXd k_ss = gaussian_gram(source_x, source_x, kernel);
    check_deadline(deadline, "kmm_solve");
    const Eigen::VectorXd kappa =
        gaussian_gram(source_x, target_x, kernel) * Eigen::VectorXd::Ones(n);
    const double c_tt =
        detail::accumulate_kernel(target_x, target_x, kernel.sigma(), Eigen::VectorXd::Ones(n),
                                  Eigen::VectorXd::Ones(n))
            .quad /
        (static_cast<double>(n) * static_cast<double>(n));

    const double md = static_cast<double>(m);
    const double nd = static_cast<double>(n);
    auto objective = [&](const Eigen::VectorXd& w, const Eigen::VectorXd& k_ss_w) {
        return w.dot(k_ss_w) / (md * md) - 2.0 * w.dot(kappa) / (nd * md) + c_tt;
    };

    // Lipschitz constant of the gradient: (2/m^2) * lambda_max(K) bounded by
    // the largest row sum (K has positive entries).
    const double lip = 2.0 / (md * md) * k_ss.rowwise().sum().maxCoeff();
    const double step = 1.0 / lip;

    Eigen::VectorXd w = Eigen::VectorXd::Ones(m);
    detail::project_box_slab(w, cfg.weight_cap, eps);  // no-op unless cap < 1
    Eigen::VectorXd k_ss_w = k_ss * w;

    KmmResult result;
    double best_obj = objective(w, k_ss_w);
    Eigen::VectorXd best_w = w;
    for (int it = 0; it < cfg.max_iters; ++it) {
        check_deadline(deadline, "kmm_solve");
        const Eigen::VectorXd grad = 2.0 / (md * md) * k_ss_w - 2.0 / (nd * md) * kappa;
        Eigen::VectorXd w_next = w - step * grad;
        detail::project_box_slab(w_next, cfg.weight_cap, eps);
        const double delta = (w_next - w).cwiseAbs().maxCoeff();
        w = std::move(w_next);
        k_ss_w = k_ss * w;
        result.iters = it + 1;
        const double obj = objective(w, k_ss_w);
        if (obj < best_obj) {
            best_obj = obj;
            best_w = w;
        }
        if (delta < cfg.tolerance) {
            result.converged = true;
            break;
        }
    }
    result.weights = WeightVector{std::move(best_w)};
    result.objective = best_obj;
    return result;
}

// ---------------------------------------------------------------------------
// KLIEP

struct KliepConfig {
    int num_centers = 100;
    std::vector<double> sigma_grid = decade_grid(-4, 4);
    double lr = 0.01;
    int max_iters = 1000;
    int lcv_folds = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_centers < 1) throw std::invalid_argument("KliepConfig: num_centers must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("KliepConfig: lr must be positive");
        if (max_iters < 1) throw std::invalid_argument("KliepConfig: max_iters must be >= 1");
        if (lcv_folds < 2) throw std::invalid_argument("KliepConfig: lcv_folds must be >= 2");
        if (sigma_grid.empty()) throw std::invalid_argument("KliepConfig: empty sigma grid");
    }
};

struct KliepResult {
    WeightVector weights;
    Eigen::VectorXd alpha;
    Eigen::MatrixXd centers;
    std::vector<double> objective_trace;  // target log-likelihood after each step
};

namespace detail {

inline double kliep_objective(const Eigen::MatrixXd& a, const Eigen::VectorXd& alpha) {
    const Eigen::VectorXd ratios = a * alpha;
    double obj = 0.0;
    for (Eigen::Index j = 0; j < ratios.size(); ++j) {
        if (ratios[j] <= 0.0) {
            return -std::numeric_limits<double>::infinity();
        }
        obj += std::log(ratios[j]);
    }
    return obj;
}

inline KliepResult kliep_fit_impl(const Eigen::MatrixXd& source_x,
                                  const Eigen::MatrixXd& likelihood_targets,
                                  const Eigen::MatrixXd& center_pool, double sigma,
                                  const KliepConfig& cfg, const Deadline& deadline) {
    const KernelParam kernel = KernelParam::from_sigma(sigma);

    // Centers: seeded uniform subsample of the pool rows.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(center_pool.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    Rng rng(cfg.seed);
    rng.shuffle(order);
    const auto num_centers =
        std::min<Eigen::Index>(cfg.num_centers, center_pool.rows());
    Eigen::MatrixXd centers(num_centers, center_pool.cols());
    for (Eigen::Index i = 0; i < num_centers; ++i) {
        centers.row(i) = center_pool.row(order[static_cast<std::size_t>(i)]);
    }

    check_deadline(deadline, "kliep_fit");
    const Eigen::MatrixXd a = gaussian_gram(likelihood_targets, centers, kernel);
    const Eigen::MatrixXd phi = gaussian_gram(source_x, centers, kernel);
    if ((a.rowwise().sum().array() <= 0.0).any()) {
        throw std::runtime_error("kliep_fit: degenerate kernel design (sigma too large)");
    }
    const Eigen::VectorXd b = phi.colwise().sum().transpose() / static_cast<double>(source_x.rows());
    const double b_total = b.sum();
    if (!(b_total > 0.0)) {
        throw std::runtime_error("kliep_fit: degenerate kernel design (sigma too large)");
    }

    // Feasible uniform start: alpha = c*1 with mean source ratio 1.
    Eigen::VectorXd alpha = Eigen::VectorXd::Constant(num_centers, 1.0 / b_total);

    KliepResult result;
    result.objective_trace.reserve(static_cast<std::size_t>(cfg.max_iters) + 1);
    double best_obj = detail::kliep_objective(a, alpha);
    result.objective_trace.push_back(best_obj);
    Eigen::VectorXd best_alpha = alpha;

    for (int it = 0; it < cfg.max_iters; ++it) {
        if ((it & 31) == 0) check_deadline(deadline, "kliep_fit");
        const Eigen::VectorXd ratios = a * alpha;
        alpha += cfg.lr * (a.transpose() * ratios.cwiseInverse());
        alpha = alpha.cwiseMax(0.0);
        const double mass = b.dot(alpha);
        if (!(mass > 0.0)) {
            break;  // ascent collapsed; keep the best iterate seen so far
        }
        alpha /= mass;
        const double obj = detail::kliep_objective(a, alpha);
        result.objective_trace.push_back(obj);
        if (obj > best_obj) {
            best_obj = obj;
            best_alpha = alpha;
        }
    }

    result.alpha = std::move(best_alpha);
    result.centers = std::move(centers);
    result.weights = WeightVector{phi * result.alpha};
    return result;
}

}  // namespace detail

/// Models the density ratio as a nonnegative kernel expansion over target
/// centers and maximizes the target log-likelihood by projected gradient
/// ascent, renormalizing after each step so the weights average to 1 over the
/// source sample. Returns the best iterate by recorded objective.
inline KliepResult kliep_fit(const Eigen::MatrixXd& source_x, const Eigen::MatrixXd& target_x,
                             double sigma, const KliepConfig& cfg = {},
                             const Deadline& deadline = {}) {
    cfg.validate();
    if (source_x.rows() < 1 || target_x.rows() < 1) {
        throw std::invalid_argument("kliep_fit: empty sample");
    }
    if (source_x.cols() != target_x.cols()) {
        throw std::invalid_argument("kliep_fit: feature dimension mismatch");
    }
    return detail::kliep_fit_impl(source_x, target_x, target_x, sigma, cfg, deadline);
}

struct KliepSelection {
    double sigma = 0.0;
    KliepResult result;
    std::vector<std::pair<double, double>> grid_scores;  // (sigma, mean held-out log-lik)
};

/// Likelihood cross-validation over the sigma grid: target rows are split
/// into contiguous folds, the model is fit on the held-in folds (centers
/// included), and each sigma is scored by the mean held-out log-likelihood.
/// Ties break toward the smaller sigma; the winner is refit on all targets.
inline KliepSelection kliep_lcv(const Eigen::MatrixXd& source_x, const Eigen::MatrixXd& target_x,
                                const KliepConfig& cfg = {}, const Deadline& deadline = {}) {
    cfg.validate();
    const Eigen::Index n = target_x.rows();
    if (n < cfg.lcv_folds) {
        throw std::invalid_argument("kliep_lcv: need at least lcv_folds target rows");
    }
    std::vector<double> grid = cfg.sigma_grid;
    std::sort(grid.begin(), grid.end());

    // np.array_split-style contiguous folds.
    std::vector<std::pair<Eigen::Index, Eigen::Index>> folds;
    const Eigen::Index base = n / cfg.lcv_folds;
    const Eigen::Index rem = n % cfg.lcv_folds;
    Eigen::Index start = 0;
    for (int f = 0; f < cfg.lcv_folds; ++f) {
        const Eigen::Index len = base + (f < rem ? 1 : 0);
        folds.emplace_back(start, len);
        start += len;
    }

    KliepSelection sel;
    double best_score = -std::numeric_limits<double>::infinity();
    bool any = false;
    std::string last_error;
    for (double sigma : grid) {
        double score_sum = 0.0;
        bool ok = true;
        try {
            for (const auto& [fold_start, fold_len] : folds) {
                check_deadline(deadline, "kliep_lcv");
                Eigen::MatrixXd held_in(n - fold_len, target_x.cols());
                held_in.topRows(fold_start) = target_x.topRows(fold_start);
                held_in.bottomRows(n - fold_start - fold_len) =
                    target_x.bottomRows(n - fold_start - fold_len);
                const KliepResult fit =
                    detail::kliep_fit_impl(source_x, held_in, held_in, sigma, cfg, deadline);
                const Eigen::MatrixXd a_out = gaussian_gram(
                    target_x.middleRows(fold_start, fold_len), fit.centers,
                    KernelParam::from_sigma(sigma));
                const double obj = detail::kliep_objective(a_out, fit.alpha);
                if (!std::isfinite(obj)) {
                    ok = false;
                    break;
                }
                score_sum += obj / static_cast<double>(fold_len);
            }
        } catch (const TimeoutError&) {
            throw;
        } catch (const std::exception& e) {
            ok = false;
            last_error = e.what();
        }
        if (!ok) {
            continue;
        }
        const double mean_score = score_sum / static_cast<double>(folds.size());
        sel.grid_scores.emplace_back(sigma, mean_score);
        if (!any || mean_score > best_score) {
            any = true;
            best_score = mean_score;
            sel.sigma = sigma;
        }
    }
    if (!any) {
        throw std::runtime_error("kliep_lcv: every sigma in the grid failed" +
                                 (last_error.empty() ? std::string()
                                                     : " (last error: " + last_error + ")"));
    }
    sel.result = kliep_fit(source_x, target_x, sel.sigma, cfg, deadline);
    return sel;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor weighting

struct NnwConfig {
    std::vector<int> k_grid = {1, 5, 10, 20, 50, 100};

    void validate() const {
        if (k_grid.empty()) throw std::invalid_argument("NnwConfig: empty k grid");
        for (int k : k_grid) {
            if (k < 1) throw std::invalid_argument("NnwConfig: k values must be >= 1");
        }
    }
};

/// Weights each source instance by the number of target points that claim it
/// among their k nearest source neighbors, rescaled to mean 1. Uses a k-d
/// tree, falling back to brute force in high dimension where the tree
/// degenerates to a scan anyway.
inline WeightVector nnw_fit(const Eigen::MatrixXd& source_x, const Eigen::MatrixXd& target_x,
                            int k, const Deadline& deadline = {}) {
    if (source_x.rows() < 1 || target_x.rows() < 1) {
        throw std::invalid_argument("nnw_fit: empty sample");
    }
    if (source_x.cols() != target_x.cols()) {
        throw std::invalid_argument("nnw_fit: feature dimension mismatch");
    }
    if (k < 1 || k > source_x.rows()) {
        throw std::invalid_argument("nnw_fit: k must be in [1, m]");
    }
    const bool use_tree = source_x.cols() <= 15 && source_x.rows() >= 32;
    std::optional<KdTree> tree;
    if (use_tree) {
        tree.emplace(source_x);
    }

    Eigen::VectorXd counts = Eigen::VectorXd::Zero(source_x.rows());
    for (Eigen::Index j = 0; j < target_x.rows(); ++j) {
        if ((j & 127) == 0) check_deadline(deadline, "nnw_fit");
        const Eigen::VectorXd q = target_x.row(j).transpose();
        const auto neighbors = use_tree ? tree->knearest(q, k) : brute_force_knearest(source_x, q, k);
        for (Eigen::Index idx : neighbors) {
            counts[idx] += 1.0;
        }
    }
    return WeightVector{counts * (static_cast<double>(source_x.rows()) / counts.sum())};
}

// ---------------------------------------------------------------------------
// Unsupervised model selection

/// Discrepancy of the squared-loss linear hypothesis class between the
/// weighted source and the target: the spectral norm of the difference of
/// second-moment matrices over bias-augmented rows (x, 1).
inline double linear_discrepancy(const Eigen::MatrixXd& source_x, const WeightVector& w,
                                 const Eigen::MatrixXd& target_x) {
    if (source_x.cols() != target_x.cols()) {
        throw std::invalid_argument("linear_discrepancy: feature dimension mismatch");
    }
    if (w.size() != source_x.rows()) {
        throw std::invalid_argument("linear_discrepancy: weight count mismatch");
    }
    if ((w.values.array() < 0.0).any() || !w.values.allFinite()) {
        throw std::invalid_argument("linear_discrepancy: weights must be finite and nonnegative");
    }
    // Mean-1 convention, with room for KMM's slack (always < 1).
    if (std::abs(w.mean() - 1.0) > 1.0) {
        throw std::invalid_argument("linear_discrepancy: weights too far from mean 1");
    }
    const Eigen::Index p = source_x.cols();
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p + 1, p + 1);
    const Eigen::MatrixXd sw = source_x.array().colwise() * w.values.array();
    s.topLeftCorner(p, p) = source_x.transpose() * sw;
    s.topRightCorner(p, 1) = sw.colwise().sum().transpose();
    s.bottomLeftCorner(1, p) = sw.colwise().sum();
    s(p, p) = w.values.sum();
    s /= static_cast<double>(source_x.rows());

    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(p + 1, p + 1);
    t.topLeftCorner(p, p) = target_x.transpose() * target_x;
    t.topRightCorner(p, 1) = target_x.colwise().sum().transpose();
    t.bottomLeftCorner(1, p) = target_x.colwise().sum();
    t(p, p) = static_cast<double>(target_x.rows());
    t /= static_cast<double>(target_x.rows());

    const Eigen::MatrixXd diff = s - t;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diff);
    if (es.info() != Eigen::Success) {
        throw std::runtime_error("linear_discrepancy: eigen decomposition failed");
    }
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct KmmSelection {
    double sigma = 0.0;
    KmmResult result;
    double discrepancy = 0.0;
};

struct NnwSelection {
    int k = 0;
    WeightVector weights;
    double discrepancy = 0.0;
};

/// Fits KMM at every sigma in the grid and keeps the fit with the smallest
/// linear discrepancy; ties break toward the smaller sigma. Failed grid
/// points are skipped, and only an all-failed grid is an error.
inline KmmSelection select_by_discrepancy(const Eigen::MatrixXd& source_x,
                                          const Eigen::MatrixXd& target_x, const KmmConfig& cfg,
                                          const Deadline& deadline = {}) {
    cfg.validate();
    std::vector<double> grid = cfg.sigma_grid;
    std::sort(grid.begin(), grid.end());
    KmmSelection sel;
    bool any = false;
    std::string last_error;
    for (double sigma : grid) {
        try {
            KmmResult fit = kmm_solve(source_x, target_x, sigma, cfg, deadline);
            const double disc = linear_discrepancy(source_x, fit.weights, target_x);
            if (!any || disc < sel.discrepancy) {
                any = true;
                sel.sigma = sigma;
                sel.result = std::move(fit);
                sel.discrepancy = disc;
            }
        } catch (const TimeoutError&) {
            throw;
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    if (!any) {
        throw std::runtime_error("select_by_discrepancy(kmm): every sigma failed" +
                                 (last_error.empty() ? std::string()
                                                     : " (last error: " + last_error + ")"));
    }
    return sel;
}

/// Same selection for the nearest-neighbor method over its k grid.
inline NnwSelection select_by_discrepancy(const Eigen::MatrixXd& source_x,
                                          const Eigen::MatrixXd& target_x, const NnwConfig& cfg,
                                          const Deadline& deadline = {}) {
    cfg.validate();
    std::vector<int> grid = cfg.k_grid;
    std::sort(grid.begin(), grid.end());
    NnwSelection sel;
    bool any = false;
    std::string last_error;
    for (int k : grid) {
        try {
            WeightVector w = nnw_fit(source_x, target_x, k, deadline);
            const double disc = linear_discrepancy(source_x, w, target_x);
            if (!any || disc < sel.discrepancy) {
                any = true;
                sel.k = k;
                sel.weights = std::move(w);
                sel.discrepancy = disc;
            }
        } catch (const TimeoutError&) {
            throw;
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    if (!any) {
        throw std::runtime_error("select_by_discrepancy(nnw): every k failed" +
                                 (last_error.empty() ? std::string()
                                                     : " (last error: " + last_error + ")"));
    }
    return sel;
}

}  // namespace iwbench
