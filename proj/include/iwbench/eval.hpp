#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "iwbench/common.hpp"

namespace iwbench {

struct RidgeModel {
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    double alpha = 0.0;
    double loo_error = 0.0;  // weighted leave-one-out MSE at the selected alpha

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        if (x.cols() != coefficients.size()) {
            throw std::invalid_argument("RidgeModel::predict: feature dimension mismatch");
        }
        return (x * coefficients).array() + intercept;
    }
};

namespace detail {

struct RidgeFitAtAlpha {
    Eigen::VectorXd beta_aug;  // coefficients then intercept
    double loo_error = 0.0;
};

// Weighted ridge with an unpenalized intercept, written over the augmented
// design [X, 1]: solve (Xa^T W Xa + P) b = Xa^T W y with P = diag(a,...,a,0).
// The leave-one-out residual follows from Sherman-Morrison:
//   y_i - xa_i . b_{-i} = r_i / (1 - h_i),  h_i = w_i xa_i^T A^{-1} xa_i,
// and the reported error is the w-weighted mean of the squared LOO residuals.
inline RidgeFitAtAlpha ridge_at_alpha(const Eigen::MatrixXd& x_aug, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& w, double alpha) {
    const Eigen::Index p = x_aug.cols() - 1;
    const Eigen::MatrixXd xw = x_aug.array().colwise() * w.array();
    Eigen::MatrixXd a = x_aug.transpose() * xw;
    a.topLeftCorner(p, p).diagonal().array() += alpha;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) {
        throw std::runtime_error("ridge_fit_weighted: decomposition failed");
    }

    RidgeFitAtAlpha fit;
    fit.beta_aug = ldlt.solve(x_aug.transpose() * (w.array() * y.array()).matrix());

    const Eigen::VectorXd residuals = y - x_aug * fit.beta_aug;
    const Eigen::MatrixXd ainv_xt = ldlt.solve(x_aug.transpose());
    double num = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double h = w[i] * x_aug.row(i).dot(ainv_xt.col(i));
        double denom = 1.0 - h;
        if (std::abs(denom) < 1e-8) {
            denom = denom < 0.0 ? -1e-8 : 1e-8;
        }
        const double loo_residual = residuals[i] / denom;
        num += w[i] * loo_residual * loo_residual;
    }
    fit.loo_error = num / w.sum();
    return fit;
}

}  // namespace detail

/// Weighted ridge regression with the penalty strength chosen by closed-form
/// weighted leave-one-out error over the grid (ties toward the smaller
/// alpha). Weights enter homogeneously, so any positive rescaling of w gives
/// the same model.
inline RidgeModel ridge_fit_weighted(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                     const WeightVector& w,
                                     const std::vector<double>& alpha_grid = decade_grid(-4, 4)) {
    if (x.rows() != y.size() || x.rows() != w.size()) {
        throw std::invalid_argument("ridge_fit_weighted: row count mismatch");
    }
    if (x.rows() < 2) {
        throw std::invalid_argument("ridge_fit_weighted: need more than one row");
    }
    if ((w.values.array() < 0.0).any()) {
        throw std::invalid_argument("ridge_fit_weighted: weights must be nonnegative");
    }
    if (!(w.values.sum() > 0.0)) {
        throw std::invalid_argument("ridge_fit_weighted: all weights are zero");
    }
    if (alpha_grid.empty()) {
        throw std::invalid_argument("ridge_fit_weighted: empty alpha grid");
    }
    std::vector<double> grid = alpha_grid;
    std::sort(grid.begin(), grid.end());
    for (double a : grid) {
        if (!(a > 0.0)) {
            throw std::invalid_argument("ridge_fit_weighted: alpha values must be positive");
        }
    }

    Eigen::MatrixXd x_aug(x.rows(), x.cols() + 1);
    x_aug.leftCols(x.cols()) = x;
    x_aug.col(x.cols()).setOnes();

    RidgeModel model;
    double best = std::numeric_limits<double>::infinity();
    for (double alpha : grid) {
        const auto fit = detail::ridge_at_alpha(x_aug, y, w.values, alpha);
        if (fit.loo_error < best) {
            best = fit.loo_error;
            model.alpha = alpha;
            model.loo_error = fit.loo_error;
            model.coefficients = fit.beta_aug.head(x.cols());
            model.intercept = fit.beta_aug[x.cols()];
        }
    }
    return model;
}

/// Mean absolute error of the model over a test sample.
inline double mae(const RidgeModel& model, const Eigen::MatrixXd& x_test,
                  const Eigen::VectorXd& y_test) {
    if (x_test.rows() == 0) {
        throw std::invalid_argument("mae: empty test set");
    }
    if (x_test.rows() != y_test.size()) {
        throw std::invalid_argument("mae: row count mismatch");
    }
    return (model.predict(x_test) - y_test).cwiseAbs().mean();
}

/// MAE of the importance-weighted model divided by MAE of the uniformly
/// weighted one; below 1 means the weighting helped.
inline double score_ratio(double mae_weighted, double mae_uniform) {
    if (!(mae_uniform > 0.0)) {
        throw std::invalid_argument("score_ratio: division by zero (uniform MAE must be positive)");
    }
    return mae_weighted / mae_uniform;
}

}  // namespace iwbench
