#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "iwbench/common.hpp"

namespace iwbench {

/// Gaussian kernel parameter, stored as log(sigma) so that gradient ascent on
/// it can never drive sigma nonpositive. The kernel is
/// k(x, x') = exp(-sigma * ||x - x'||^2); sigma acts as an inverse squared
/// bandwidth.
struct KernelParam {
    double log_sigma = std::log(0.1);

    double sigma() const { return std::exp(log_sigma); }

    static KernelParam from_sigma(double sigma) {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) {
            throw std::invalid_argument("KernelParam: sigma must be finite and positive");
        }
        return KernelParam{std::log(sigma)};
    }
};

/// Squared Euclidean distances via the expansion |a|^2 + |b|^2 - 2 a.b,
/// clamped at 0. The expansion is the one deliberate floating-point hazard in
/// this module: it can go slightly negative for near-identical rows.
inline Eigen::MatrixXd pairwise_sq_dists(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("pairwise_sq_dists: feature dimension mismatch");
    }
    const Eigen::VectorXd a2 = a.rowwise().squaredNorm();
    const Eigen::VectorXd b2 = b.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = (-2.0 * a * b.transpose());
    d2.colwise() += a2;
    d2.rowwise() += b2.transpose();
    return d2.cwiseMax(0.0);
}

inline Eigen::MatrixXd gaussian_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                     KernelParam kernel) {
    return (-kernel.sigma() * pairwise_sq_dists(a, b).array()).exp();
}

/// The three sums of the empirical weighted MMD (V-statistic, diagonals
/// included): value = term_ss + term_tt - 2*term_st.
struct BatchMmdValue {
    double value = 0.0;
    double term_ss = 0.0;
    double term_tt = 0.0;
    double term_st = 0.0;
    bool degenerate_weights = false;
};

namespace detail {

/// Row-blocked kernel sums between two samples: wa^T K wb, wa^T (D2 .* K) wb,
/// and the vector K wb. Blocking bounds memory at block_rows x b.rows() while
/// keeping a fixed summation order, so results do not depend on block size.
struct KernelAccum {
    Eigen::VectorXd k_times_wb;  // K(a, b) * wb
    double quad = 0.0;           // wa^T K wb
    double quad_d2 = 0.0;        // wa^T (D2 .* K) wb
};

inline KernelAccum accumulate_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                     double sigma, const Eigen::VectorXd& wa,
                                     const Eigen::VectorXd& wb) {
    constexpr Eigen::Index kBlockRows = 512;
    KernelAccum acc;
    acc.k_times_wb.resize(a.rows());
    const Eigen::VectorXd b2 = b.rowwise().squaredNorm();
    for (Eigen::Index start = 0; start < a.rows(); start += kBlockRows) {
        const Eigen::Index len = std::min(kBlockRows, a.rows() - start);
        const auto a_blk = a.middleRows(start, len);
        Eigen::MatrixXd d2 = (-2.0 * a_blk * b.transpose());
        d2.colwise() += a_blk.rowwise().squaredNorm();
        d2.rowwise() += b2.transpose();
        d2 = d2.cwiseMax(0.0);
        const Eigen::MatrixXd k = (-sigma * d2.array()).exp();
        const Eigen::VectorXd kwb = k * wb;
        acc.k_times_wb.segment(start, len) = kwb;
        acc.quad += wa.segment(start, len).dot(kwb);
        acc.quad_d2 += wa.segment(start, len).dot((d2.array() * k.array()).matrix() * wb);
    }
    return acc;
}

}  // namespace detail

/// Empirical weighted MMD between a weighted source sample and a target
/// sample:
///   (1/m^2) sum_ij w_i w_j k(x_i, x_j) + (1/n^2) sum_ij k(x'_i, x'_j)
///     - (2/nm) sum_ij w_i k(x_i, x'_j)
/// Weights must be nonnegative with mean 1 (within 1e-8).
inline BatchMmdValue weighted_mmd(const Eigen::MatrixXd& source_x,
                                  const Eigen::MatrixXd& target_x, const WeightVector& w,
                                  KernelParam kernel) {
    if (source_x.cols() != target_x.cols()) {
        throw std::invalid_argument("weighted_mmd: feature dimension mismatch");
    }
    if (w.size() != source_x.rows()) {
        throw std::invalid_argument("weighted_mmd: weight count does not match source rows");
    }
    if ((w.values.array() < 0.0).any()) {
        throw std::invalid_argument("weighted_mmd: weights must be nonnegative");
    }
    if (std::abs(w.mean() - 1.0) > 1e-8) {
        throw std::invalid_argument("weighted_mmd: weights must have mean 1");
    }
    const double m = static_cast<double>(source_x.rows());
    const double n = static_cast<double>(target_x.rows());
    const double sigma = kernel.sigma();
    const Eigen::VectorXd ones_t = Eigen::VectorXd::Ones(target_x.rows());

    BatchMmdValue out;
    out.term_ss =
        detail::accumulate_kernel(source_x, source_x, sigma, w.values, w.values).quad / (m * m);
    out.term_tt =
        detail::accumulate_kernel(target_x, target_x, sigma, ones_t, ones_t).quad / (n * n);
    out.term_st =
        detail::accumulate_kernel(source_x, target_x, sigma, w.values, ones_t).quad / (n * m);
    out.value = out.term_ss + out.term_tt - 2.0 * out.term_st;
    return out;
}

/// Self-normalized batch weights v_i = |raw_i| / sum_j |raw_j|. An all-zero
/// raw vector has no scale; it falls back to uniform weights and reports the
/// degenerate flag.
struct SelfNormWeights {
    Eigen::VectorXd v;
    double abs_sum = 0.0;
    bool degenerate = false;
};

inline SelfNormWeights self_normalize(const Eigen::VectorXd& raw) {
    SelfNormWeights out;
    const Eigen::VectorXd abs = raw.cwiseAbs();
    out.abs_sum = abs.sum();
    if (out.abs_sum > 0.0) {
        out.v = abs / out.abs_sum;
    } else {
        out.v = Eigen::VectorXd::Constant(raw.size(), 1.0 / static_cast<double>(raw.size()));
        out.degenerate = true;
    }
    return out;
}

/// Batch MMD with self-normalized weights (the saddle-point objective's
/// value):
///   v^T K_ss v + (1/Bt^2) sum K_tt - (2/Bt) v^T K_st 1,    sum_i v_i = 1.
inline BatchMmdValue batch_mmd_selfnorm(const Eigen::MatrixXd& source_batch,
                                        const Eigen::MatrixXd& target_batch,
                                        const Eigen::VectorXd& raw, KernelParam kernel) {
    if (source_batch.cols() != target_batch.cols()) {
        throw std::invalid_argument("batch_mmd_selfnorm: feature dimension mismatch");
    }
    if (raw.size() != source_batch.rows() || raw.size() == 0) {
        throw std::invalid_argument("batch_mmd_selfnorm: raw size does not match source batch");
    }
    const SelfNormWeights sw = self_normalize(raw);
    const double bt = static_cast<double>(target_batch.rows());
    const double sigma = kernel.sigma();
    const Eigen::VectorXd ones_t = Eigen::VectorXd::Ones(target_batch.rows());

    BatchMmdValue out;
    out.term_ss = detail::accumulate_kernel(source_batch, source_batch, sigma, sw.v, sw.v).quad;
    out.term_tt =
        detail::accumulate_kernel(target_batch, target_batch, sigma, ones_t, ones_t).quad /
        (bt * bt);
    out.term_st =
        detail::accumulate_kernel(source_batch, target_batch, sigma, sw.v, ones_t).quad / bt;
    out.value = out.term_ss + out.term_tt - 2.0 * out.term_st;
    out.degenerate_weights = sw.degenerate;
    return out;
}

/// Value plus analytic gradients of batch_mmd_selfnorm with respect to the
/// raw outputs and log(sigma).
struct BatchMmdGradients {
    Eigen::VectorXd d_raw;
    double d_log_sigma = 0.0;
    BatchMmdValue value;
};

// With J(v) = v^T K v + c - (2/Bt) v^T K_st 1 and v_j = |r_j| / S:
//   dJ/dv = 2 K v - (2/Bt) K_st 1 =: g
//   dv_j/dr_i = sign(r_i) (delta_ij - v_j) / S
//   dJ/dr_i = sign(r_i) (g_i - g.v) / S          (sign(0) := 0)
// and dk/dsigma = -d2 * k gives dJ/dlog_sigma = sigma * dJ/dsigma.
inline BatchMmdGradients batch_mmd_grads(const Eigen::MatrixXd& source_batch,
                                         const Eigen::MatrixXd& target_batch,
                                         const Eigen::VectorXd& raw, KernelParam kernel) {
    if (source_batch.cols() != target_batch.cols()) {
        throw std::invalid_argument("batch_mmd_grads: feature dimension mismatch");
    }
    if (raw.size() != source_batch.rows() || raw.size() == 0) {
        throw std::invalid_argument("batch_mmd_grads: raw size does not match source batch");
    }
    const SelfNormWeights sw = self_normalize(raw);
    const double bt = static_cast<double>(target_batch.rows());
    const double sigma = kernel.sigma();
    const Eigen::VectorXd ones_t = Eigen::VectorXd::Ones(target_batch.rows());

    const auto acc_ss =
        detail::accumulate_kernel(source_batch, source_batch, sigma, sw.v, sw.v);
    const auto acc_tt =
        detail::accumulate_kernel(target_batch, target_batch, sigma, ones_t, ones_t);
    const auto acc_st =
        detail::accumulate_kernel(source_batch, target_batch, sigma, sw.v, ones_t);

    BatchMmdGradients out;
    out.value.term_ss = acc_ss.quad;
    out.value.term_tt = acc_tt.quad / (bt * bt);
    out.value.term_st = acc_st.quad / bt;
    out.value.value = out.value.term_ss + out.value.term_tt - 2.0 * out.value.term_st;
    out.value.degenerate_weights = sw.degenerate;

    out.d_raw = Eigen::VectorXd::Zero(raw.size());
    if (!sw.degenerate) {
        const Eigen::VectorXd g = 2.0 * acc_ss.k_times_wb - (2.0 / bt) * acc_st.k_times_wb;
        const double g_dot_v = g.dot(sw.v);
        for (Eigen::Index i = 0; i < raw.size(); ++i) {
            const double sign = raw[i] > 0.0 ? 1.0 : (raw[i] < 0.0 ? -1.0 : 0.0);
            out.d_raw[i] = sign * (g[i] - g_dot_v) / sw.abs_sum;
        }
    }

    const double d_sigma =
        -(acc_ss.quad_d2 + acc_tt.quad_d2 / (bt * bt) - 2.0 / bt * acc_st.quad_d2);
    out.d_log_sigma = sigma * d_sigma;
    return out;
}

}  // namespace iwbench
