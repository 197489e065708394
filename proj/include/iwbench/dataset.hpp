#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "iwbench/csv.hpp"
#include "iwbench/rng.hpp"

namespace iwbench {

/// A raw categorical column: label values awaiting one-hot encoding.
struct CategoricalColumn {
    std::string name;
    std::vector<std::string> values;
};

/// Dense numeric design matrix (rows are instances) with optional outputs.
/// Categorical columns loaded from CSV are kept as labels until
/// apply_preprocess() encodes them; a preprocessed dataset has none.
struct Dataset {
    Eigen::MatrixXd x;
    std::vector<std::string> feature_names;
    std::optional<Eigen::MatrixXd> y;
    std::vector<std::string> output_names;
    std::vector<CategoricalColumn> categoricals;
    std::optional<std::uint64_t> seed_provenance;

    Eigen::Index rows() const { return x.rows(); }
    Eigen::Index num_features() const { return x.cols(); }
    bool preprocessed() const { return categoricals.empty(); }

    Dataset take_rows(const std::vector<Eigen::Index>& idx) const {
        Dataset out;
        out.x.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out.x.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
        }
        out.feature_names = feature_names;
        if (y) {
            Eigen::MatrixXd ysel(static_cast<Eigen::Index>(idx.size()), y->cols());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                ysel.row(static_cast<Eigen::Index>(i)) = y->row(idx[i]);
            }
            out.y = std::move(ysel);
            out.output_names = output_names;
        }
        for (const auto& col : categoricals) {
            CategoricalColumn sel{col.name, {}};
            sel.values.reserve(idx.size());
            for (Eigen::Index i : idx) {
                sel.values.push_back(col.values[static_cast<std::size_t>(i)]);
            }
            out.categoricals.push_back(std::move(sel));
        }
        return out;
    }

    Dataset without_outputs() const {
        Dataset out = *this;
        out.y.reset();
        out.output_names.clear();
        return out;
    }
};

/// Column statistics frozen on the unbiased sample: scaling moments for
/// numeric columns and the observed level list for each categorical column.
struct PreprocessStats {
    Eigen::VectorXd means;
    Eigen::VectorXd stds;
    std::vector<std::string> numeric_names;
    std::vector<std::string> categorical_names;
    std::vector<std::vector<std::string>> categorical_levels;

    Eigen::Index encoded_dim() const {
        Eigen::Index p = means.size();
        for (const auto& levels : categorical_levels) {
            p += static_cast<Eigen::Index>(levels.size());
        }
        return p;
    }
};

// ---------------------------------------------------------------------------
// CSV ingestion

inline Dataset load_csv(const std::string& path,
                        const std::vector<std::string>& target_columns = {},
                        const std::vector<std::string>& categorical_columns = {}) {
    const CsvTable table = read_csv(path);
    if (table.rows.empty()) {
        throw std::runtime_error(path + ": no data rows");
    }

    auto column_index = [&table, &path](const std::string& name) {
        auto it = std::find(table.header.begin(), table.header.end(), name);
        if (it == table.header.end()) {
            throw std::runtime_error(path + ": missing named column \"" + name + "\"");
        }
        return static_cast<std::size_t>(it - table.header.begin());
    };
    for (const auto& t : target_columns) {
        if (std::find(categorical_columns.begin(), categorical_columns.end(), t) !=
            categorical_columns.end()) {
            throw std::invalid_argument("column \"" + t + "\" listed as both target and categorical");
        }
        column_index(t);
    }
    for (const auto& c : categorical_columns) {
        column_index(c);
    }

    const std::size_t num_rows = table.rows.size();
    std::vector<std::size_t> numeric_cols;
    Dataset ds;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        const std::string& name = table.header[c];
        const bool is_target = std::find(target_columns.begin(), target_columns.end(), name) !=
                               target_columns.end();
        const bool is_categorical =
            std::find(categorical_columns.begin(), categorical_columns.end(), name) !=
            categorical_columns.end();
        if (is_target) {
            continue;  // gathered below in target_columns order
        }
        if (is_categorical) {
            CategoricalColumn col{name, {}};
            col.values.reserve(num_rows);
            for (const auto& row : table.rows) {
                col.values.push_back(row[c]);
            }
            ds.categoricals.push_back(std::move(col));
        } else {
            numeric_cols.push_back(c);
            ds.feature_names.push_back(name);
        }
    }

    ds.x.resize(static_cast<Eigen::Index>(num_rows), static_cast<Eigen::Index>(numeric_cols.size()));
    for (std::size_t r = 0; r < num_rows; ++r) {
        for (std::size_t j = 0; j < numeric_cols.size(); ++j) {
            ds.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
                parse_double(table.rows[r][numeric_cols[j]],
                             "column \"" + table.header[numeric_cols[j]] + "\" of " + path);
        }
    }

    if (!target_columns.empty()) {
        Eigen::MatrixXd y(static_cast<Eigen::Index>(num_rows),
                          static_cast<Eigen::Index>(target_columns.size()));
        for (std::size_t j = 0; j < target_columns.size(); ++j) {
            const std::size_t c = column_index(target_columns[j]);
            for (std::size_t r = 0; r < num_rows; ++r) {
                y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
                    parse_double(table.rows[r][c], "column \"" + target_columns[j] + "\" of " + path);
            }
        }
        ds.y = std::move(y);
        ds.output_names = target_columns;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing

inline PreprocessStats fit_preprocess(const Dataset& unbiased) {
    if (unbiased.rows() < 2) {
        throw std::invalid_argument("fit_preprocess: need at least 2 rows");
    }
    PreprocessStats stats;
    stats.numeric_names = unbiased.feature_names;
    const Eigen::Index p = unbiased.x.cols();
    stats.means.resize(p);
    stats.stds.resize(p);
    const double n = static_cast<double>(unbiased.rows());
    for (Eigen::Index j = 0; j < p; ++j) {
        const double mean = unbiased.x.col(j).mean();
        const double var = (unbiased.x.col(j).array() - mean).square().sum() / n;
        double sd = std::sqrt(var);
        if (sd == 0.0) {
            sd = 1.0;  // constant column
        }
        stats.means[j] = mean;
        stats.stds[j] = sd;
    }
    for (const auto& col : unbiased.categoricals) {
        stats.categorical_names.push_back(col.name);
        std::vector<std::string> levels;
        for (const auto& v : col.values) {
            if (std::find(levels.begin(), levels.end(), v) == levels.end()) {
                levels.push_back(v);
            }
        }
        stats.categorical_levels.push_back(std::move(levels));
    }
    return stats;
}

inline Dataset apply_preprocess(const Dataset& data, const PreprocessStats& stats) {
    if (data.feature_names != stats.numeric_names) {
        throw std::invalid_argument("apply_preprocess: numeric column schema mismatch");
    }
    if (data.categoricals.size() != stats.categorical_names.size()) {
        throw std::invalid_argument("apply_preprocess: categorical column schema mismatch");
    }
    for (std::size_t c = 0; c < data.categoricals.size(); ++c) {
        if (data.categoricals[c].name != stats.categorical_names[c]) {
            throw std::invalid_argument("apply_preprocess: categorical column schema mismatch");
        }
    }

    Dataset out;
    const Eigen::Index rows = data.rows();
    out.x.resize(rows, stats.encoded_dim());
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
        out.x.col(j) = (data.x.col(j).array() - stats.means[j]) / stats.stds[j];
    }
    out.feature_names = stats.numeric_names;

    Eigen::Index offset = data.x.cols();
    for (std::size_t c = 0; c < data.categoricals.size(); ++c) {
        const auto& levels = stats.categorical_levels[c];
        const auto& col = data.categoricals[c];
        out.x.middleCols(offset, static_cast<Eigen::Index>(levels.size())).setZero();
        for (Eigen::Index r = 0; r < rows; ++r) {
            auto it = std::find(levels.begin(), levels.end(), col.values[static_cast<std::size_t>(r)]);
            if (it != levels.end()) {
                out.x(r, offset + static_cast<Eigen::Index>(it - levels.begin())) = 1.0;
            }
            // unseen level: leave the whole block at zero
        }
        for (const auto& level : levels) {
            out.feature_names.push_back(col.name + "=" + level);
        }
        offset += static_cast<Eigen::Index>(levels.size());
    }

    if (!out.x.allFinite()) {
        throw std::runtime_error("apply_preprocess: non-finite value after preprocessing");
    }
    out.y = data.y;
    out.output_names = data.output_names;
    out.seed_provenance = data.seed_provenance;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian-mixture generator

/// Isotropic Gaussian mixture with distinct source and target component
/// proportions; outputs follow the per-component linear model y = coef_k^T x.
struct MixtureSpec {
    int num_components = 0;
    int dim = 0;
    Eigen::MatrixXd component_means;   // num_components x dim
    double component_std = 0.2;
    Eigen::VectorXd source_props;
    Eigen::VectorXd target_props;
    Eigen::MatrixXd regression_coefs;  // num_components x dim

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["num_components"] = num_components;
        j["dim"] = dim;
        j["component_std"] = component_std;
        auto matrix_to_json = [](const Eigen::MatrixXd& m) {
            nlohmann::json rows = nlohmann::json::array();
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                nlohmann::json row = nlohmann::json::array();
                for (Eigen::Index c = 0; c < m.cols(); ++c) {
                    row.push_back(m(r, c));
                }
                rows.push_back(std::move(row));
            }
            return rows;
        };
        j["component_means"] = matrix_to_json(component_means);
        j["regression_coefs"] = matrix_to_json(regression_coefs);
        j["source_props"] = std::vector<double>(source_props.begin(), source_props.end());
        j["target_props"] = std::vector<double>(target_props.begin(), target_props.end());
        return j;
    }

    static MixtureSpec from_json(const nlohmann::json& j) {
        MixtureSpec spec;
        spec.num_components = j.at("num_components").get<int>();
        spec.dim = j.at("dim").get<int>();
        spec.component_std = j.at("component_std").get<double>();
        auto matrix_from_json = [](const nlohmann::json& rows) {
            Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
            for (std::size_t r = 0; r < rows.size(); ++r) {
                for (std::size_t c = 0; c < rows[r].size(); ++c) {
                    m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        rows[r][c].get<double>();
                }
            }
            return m;
        };
        spec.component_means = matrix_from_json(j.at("component_means"));
        spec.regression_coefs = matrix_from_json(j.at("regression_coefs"));
        auto vec_from_json = [](const nlohmann::json& a) {
            Eigen::VectorXd v(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) {
                v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
            }
            return v;
        };
        spec.source_props = vec_from_json(j.at("source_props"));
        spec.target_props = vec_from_json(j.at("target_props"));
        return spec;
    }
};

inline MixtureSpec make_mixture_spec(int num_components, int dim, std::uint64_t seed) {
    if (num_components < 3) {
        throw std::invalid_argument("make_mixture_spec: need at least 3 components");
    }
    if (dim < 1) {
        throw std::invalid_argument("make_mixture_spec: dim must be >= 1");
    }
    MixtureSpec spec;
    spec.num_components = num_components;
    spec.dim = dim;
    spec.component_std = 0.2;

    Rng rng(seed);
    spec.component_means.resize(num_components, dim);
    for (int k = 0; k < num_components; ++k) {
        for (int d = 0; d < dim; ++d) {
            spec.component_means(k, d) = rng.normal();
        }
    }
    spec.regression_coefs.resize(num_components, dim);
    for (int k = 0; k < num_components; ++k) {
        for (int d = 0; d < dim; ++d) {
            spec.regression_coefs(k, d) = rng.normal();
        }
    }

    const int M = num_components;
    spec.source_props = Eigen::VectorXd::Constant(M, 0.8 / (M - 1));
    spec.source_props[M - 1] = 0.2;
    spec.target_props = Eigen::VectorXd::Constant(M, 0.1 / (M - 2));
    spec.target_props[M - 2] = 0.1;
    spec.target_props[M - 1] = 0.8;
    return spec;
}

enum class MixtureSide { source, target };

/// Draws row indices with replacement: inverse-CDF over the cumulative
/// probabilities, one uniform per draw.
inline std::vector<Eigen::Index> sample_with_replacement(const Eigen::VectorXd& probs, int n,
                                                         Rng& rng) {
    if (probs.size() == 0 || n < 1) {
        throw std::invalid_argument("sample_with_replacement: empty support or n < 1");
    }
    if ((probs.array() < 0.0).any()) {
        throw std::invalid_argument("sample_with_replacement: negative probability");
    }
    if (std::abs(probs.sum() - 1.0) > 1e-12) {
        throw std::invalid_argument("sample_with_replacement: probabilities must sum to 1");
    }
    std::vector<double> cum(static_cast<std::size_t>(probs.size()));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        cum[static_cast<std::size_t>(i)] = acc;
    }
    cum.back() = 1.0;

    std::vector<Eigen::Index> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        auto it = std::upper_bound(cum.begin(), cum.end(), u);
        out[static_cast<std::size_t>(i)] =
            static_cast<Eigen::Index>(std::min<std::ptrdiff_t>(it - cum.begin(), probs.size() - 1));
    }
    return out;
}

inline Dataset sample_mixture(const MixtureSpec& spec, int n, MixtureSide side, std::uint64_t seed,
                              std::vector<int>* component_ids = nullptr) {
    if (n < 1) {
        throw std::invalid_argument("sample_mixture: n must be >= 1");
    }
    const Eigen::VectorXd& props =
        side == MixtureSide::source ? spec.source_props : spec.target_props;
    if (std::abs(props.sum() - 1.0) > 1e-12 || (props.array() < 0.0).any()) {
        throw std::invalid_argument("sample_mixture: invalid mixture proportions");
    }
    std::vector<double> cum(static_cast<std::size_t>(props.size()));
    double acc = 0.0;
    for (Eigen::Index k = 0; k < props.size(); ++k) {
        acc += props[k];
        cum[static_cast<std::size_t>(k)] = acc;
    }
    cum.back() = 1.0;

    Rng rng(seed);
    Dataset ds;
    ds.x.resize(n, spec.dim);
    Eigen::MatrixXd y(n, 1);
    if (component_ids) {
        component_ids->assign(static_cast<std::size_t>(n), 0);
    }
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        const auto k = static_cast<Eigen::Index>(
            std::min<std::ptrdiff_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin(),
                                     props.size() - 1));
        for (int d = 0; d < spec.dim; ++d) {
            ds.x(i, d) = spec.component_means(k, d) + spec.component_std * rng.normal();
        }
        y(i, 0) = spec.regression_coefs.row(k).dot(ds.x.row(i));
        if (component_ids) {
            (*component_ids)[static_cast<std::size_t>(i)] = static_cast<int>(k);
        }
    }
    for (int d = 0; d < spec.dim; ++d) {
        ds.feature_names.push_back("x" + std::to_string(d));
    }
    ds.y = std::move(y);
    ds.output_names = {"y"};
    ds.seed_provenance = seed;
    return ds;
}

// ---------------------------------------------------------------------------
// Bias injection

/// Centered projection of the rows onto the top eigenvector of the empirical
/// covariance. Sign convention: the loading with the largest absolute value is
/// positive, so repeated runs cannot mirror the component.
inline Eigen::VectorXd first_pc_scores(const Eigen::MatrixXd& m) {
    if (m.rows() < 1 || m.cols() < 1) {
        throw std::invalid_argument("first_pc_scores: empty matrix");
    }
    const Eigen::RowVectorXd mean = m.colwise().mean();
    const Eigen::MatrixXd centered = m.rowwise() - mean;
    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(m.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) {
        throw std::runtime_error("first_pc_scores: eigen decomposition failed");
    }
    Eigen::VectorXd v = es.eigenvectors().col(m.cols() - 1);
    Eigen::Index max_idx = 0;
    v.cwiseAbs().maxCoeff(&max_idx);
    if (v[max_idx] < 0.0) {
        v = -v;
    }
    return centered * v;
}

/// Selection probabilities for the input-feature bias: a Gaussian weighting on
/// the score axis with mean m + (mu - m)/3 and std (mu - m)/8, m and mu being
/// the minimum and mean of the scores. Normalized to sum 1.
inline Eigen::VectorXd input_bias_probabilities(const Eigen::VectorXd& scores) {
    const double lo = scores.minCoeff();
    const double mean = scores.mean();
    if (!(mean > lo)) {
        throw std::runtime_error("degenerate PCA bias: all first-component scores equal");
    }
    const double w_mean = lo + (mean - lo) / 3.0;
    const double w_std = (mean - lo) / 8.0;
    Eigen::VectorXd p =
        (-0.5 * ((scores.array() - w_mean) / w_std).square()).exp();
    p /= p.sum();
    return p;
}

/// Selection probabilities for the output bias: sigmoid(3 (s - 1)) per row,
/// normalized to sum 1.
inline Eigen::VectorXd output_bias_probabilities(const Eigen::VectorXd& scores) {
    Eigen::VectorXd p(scores.size());
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        const double z = 3.0 * (scores[i] - 1.0);
        p[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    const double sum = p.sum();
    if (sum <= 0.0) {
        throw std::runtime_error("degenerate output bias: all selection weights are zero");
    }
    p /= sum;
    return p;
}

/// First-PC score of the outputs, standardized to unit variance. A scalar
/// output therefore becomes plain standardized y, which keeps the sigmoid's
/// slope scale-free.
inline Eigen::VectorXd output_bias_scores(const Eigen::MatrixXd& y) {
    Eigen::VectorXd s = first_pc_scores(y);
    const double var = s.array().square().sum() / static_cast<double>(s.size());
    double sd = std::sqrt(var);
    if (sd == 0.0) {
        sd = 1.0;
    }
    return s / sd;
}

inline Dataset bias_input(const Dataset& data, int n, std::uint64_t seed) {
    if (!data.preprocessed()) {
        throw std::invalid_argument("bias_input: dataset must be preprocessed first");
    }
    if (n < 1) {
        throw std::invalid_argument("bias_input: n must be >= 1");
    }
    const Eigen::VectorXd scores = first_pc_scores(data.x);
    const Eigen::VectorXd probs = input_bias_probabilities(scores);
    Rng rng(seed);
    Dataset out = data.take_rows(sample_with_replacement(probs, n, rng));
    out.seed_provenance = seed;
    return out;
}

inline Dataset bias_output(const Dataset& data, int n, std::uint64_t seed) {
    if (!data.y) {
        throw std::invalid_argument("bias_output: dataset has no outputs");
    }
    if (n < 1) {
        throw std::invalid_argument("bias_output: n must be >= 1");
    }
    const Eigen::VectorXd scores = output_bias_scores(*data.y);
    const Eigen::VectorXd probs = output_bias_probabilities(scores);
    Rng rng(seed);
    Dataset out = data.take_rows(sample_with_replacement(probs, n, rng));
    out.seed_provenance = seed;
    return out;
}

}  // namespace iwbench
