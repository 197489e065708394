#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "iwbench/rng.hpp"

namespace iwbench {

/// Fully connected ReLU network with a single linear output. weights[l] maps
/// layer l's input width to its output width (inputs are row vectors); there
/// is no output activation -- nonnegativity of the downstream weights comes
/// from the absolute value in the objective.
struct MlpModel {
    std::vector<Eigen::MatrixXd> weights;  // fan_in x fan_out
    std::vector<Eigen::VectorXd> biases;

    Eigen::Index input_dim() const { return weights.front().rows(); }
    int num_layers() const { return static_cast<int>(weights.size()); }

    nlohmann::json to_json() const {
        nlohmann::json layers = nlohmann::json::array();
        for (std::size_t l = 0; l < weights.size(); ++l) {
            nlohmann::json layer;
            layer["rows"] = weights[l].rows();
            layer["cols"] = weights[l].cols();
            std::vector<double> w(weights[l].size());
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                w.data(), weights[l].rows(), weights[l].cols()) = weights[l];
            layer["weights"] = w;
            layer["biases"] = std::vector<double>(biases[l].begin(), biases[l].end());
            layers.push_back(std::move(layer));
        }
        return nlohmann::json{{"layers", layers}};
    }

    static MlpModel from_json(const nlohmann::json& j) {
        MlpModel model;
        for (const auto& layer : j.at("layers")) {
            const auto rows = layer.at("rows").get<Eigen::Index>();
            const auto cols = layer.at("cols").get<Eigen::Index>();
            const auto w = layer.at("weights").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(w.size()) != rows * cols) {
                throw std::invalid_argument("MlpModel::from_json: weight size mismatch");
            }
            Eigen::MatrixXd wm(rows, cols);
            wm = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                Eigen::RowMajor>>(w.data(), rows, cols);
            model.weights.push_back(std::move(wm));
            const auto b = layer.at("biases").get<std::vector<double>>();
            model.biases.emplace_back(
                Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
        }
        return model;
    }
};

/// Fan-in-scaled uniform init (range +-sqrt(6/(fan_in+fan_out))), zero biases.
/// hidden_layers = 0 degenerates to a pure linear model.
inline MlpModel mlp_init(int input_dim, int hidden_layers = 3, int hidden_units = 100,
                         std::uint64_t seed = 0) {
    if (input_dim < 1) {
        throw std::invalid_argument("mlp_init: input_dim must be >= 1");
    }
    if (hidden_layers < 0 || (hidden_layers > 0 && hidden_units < 1)) {
        throw std::invalid_argument("mlp_init: invalid architecture");
    }
    std::vector<Eigen::Index> dims;
    dims.push_back(input_dim);
    for (int l = 0; l < hidden_layers; ++l) {
        dims.push_back(hidden_units);
    }
    dims.push_back(1);

    Rng rng(seed);
    MlpModel model;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const Eigen::Index fan_in = dims[l];
        const Eigen::Index fan_out = dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Eigen::MatrixXd w(fan_in, fan_out);
        for (Eigen::Index i = 0; i < fan_in; ++i) {
            for (Eigen::Index j = 0; j < fan_out; ++j) {
                w(i, j) = rng.uniform(-bound, bound);
            }
        }
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(Eigen::VectorXd::Zero(fan_out));
    }
    return model;
}

/// Activations entering each layer plus hidden pre-activations, as needed by
/// the backward pass.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;
    std::vector<Eigen::MatrixXd> preacts;
};

inline Eigen::VectorXd mlp_forward(const MlpModel& model, const Eigen::MatrixXd& x_batch,
                                   ForwardCache* cache = nullptr) {
    if (x_batch.cols() != model.input_dim()) {
        throw std::invalid_argument("mlp_forward: feature dimension mismatch");
    }
    if (cache) {
        cache->inputs.clear();
        cache->preacts.clear();
    }
    Eigen::MatrixXd a = x_batch;
    const int layers = model.num_layers();
    for (int l = 0; l < layers; ++l) {
        if (cache) {
            cache->inputs.push_back(a);
        }
        Eigen::MatrixXd z = a * model.weights[static_cast<std::size_t>(l)];
        z.rowwise() += model.biases[static_cast<std::size_t>(l)].transpose();
        if (l + 1 < layers) {
            if (cache) {
                cache->preacts.push_back(z);
            }
            a = z.cwiseMax(0.0);  // ReLU; derivative at 0 taken as 0
        } else {
            a = std::move(z);
        }
    }
    return a.col(0);
}

struct MlpGradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

/// Exact gradients of sum_i d_outputs[i] * output_i with respect to every
/// parameter, given the cache of the matching forward call.
inline MlpGradients mlp_backward(const MlpModel& model, const ForwardCache& cache,
                                 const Eigen::VectorXd& d_outputs) {
    const int layers = model.num_layers();
    if (static_cast<int>(cache.inputs.size()) != layers ||
        static_cast<int>(cache.preacts.size()) != layers - 1 ||
        cache.inputs.front().rows() != d_outputs.size()) {
        throw std::invalid_argument("mlp_backward: cache does not match model/batch");
    }
    MlpGradients grads;
    grads.weights.resize(static_cast<std::size_t>(layers));
    grads.biases.resize(static_cast<std::size_t>(layers));

    Eigen::MatrixXd g = d_outputs;  // B x 1
    for (int l = layers - 1; l >= 0; --l) {
        const auto lu = static_cast<std::size_t>(l);
        grads.weights[lu] = cache.inputs[lu].transpose() * g;
        grads.biases[lu] = g.colwise().sum().transpose();
        if (l > 0) {
            g = (g * model.weights[lu].transpose()).array() *
                (cache.preacts[lu - 1].array() > 0.0).cast<double>();
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

struct AdamState {
    std::vector<Eigen::MatrixXd> m_weights, v_weights;
    std::vector<Eigen::VectorXd> m_biases, v_biases;
    long step_count = 0;
    AdamConfig cfg;

    static AdamState for_model(const MlpModel& model, AdamConfig cfg = {}) {
        AdamState s;
        s.cfg = cfg;
        for (std::size_t l = 0; l < model.weights.size(); ++l) {
            s.m_weights.emplace_back(
                Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
            s.v_weights.emplace_back(
                Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
            s.m_biases.emplace_back(Eigen::VectorXd::Zero(model.biases[l].size()));
            s.v_biases.emplace_back(Eigen::VectorXd::Zero(model.biases[l].size()));
        }
        return s;
    }
};

namespace detail {

template <typename Param, typename Grad>
void adam_update(Param& p, const Grad& g, Param& m, Param& v, const AdamConfig& cfg,
                 double bc1, double bc2) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = (cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square()).matrix();
    p.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
}

}  // namespace detail

/// One bias-corrected Adam step on all parameters.
inline void adam_step(MlpModel& model, const MlpGradients& grads, AdamState& state) {
    if (grads.weights.size() != model.weights.size()) {
        throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step_count));
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        detail::adam_update(model.weights[l], grads.weights[l], state.m_weights[l],
                            state.v_weights[l], state.cfg, bc1, bc2);
        detail::adam_update(model.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l],
                            state.cfg, bc1, bc2);
    }
}

/// Adam over a single scalar (used for the kernel parameter).
struct ScalarAdam {
    AdamConfig cfg;
    double m = 0.0;
    double v = 0.0;
    long step_count = 0;

    double descend(double value, double grad) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
        return value - cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
    }
};

// ---------------------------------------------------------------------------
// Constant-output pretraining

struct PretrainConfig {
    int max_epochs = 100;
    double tol = 1e-3;  // stop once full-sample MSE to the constant 1 is below
    int batch_size = 256;
    AdamConfig adam;
    std::uint64_t seed = 0;
};

struct PretrainReport {
    bool converged = false;
    int epochs_run = 0;
    double final_mse = 0.0;
};

/// Fits the network toward the constant output 1 (mini-batch Adam on squared
/// error), which makes the initial self-normalized batch weights near-uniform
/// and guarantees a nonzero |raw| sum when training starts.
inline PretrainReport pretrain_to_one(MlpModel& model, const Eigen::MatrixXd& source_x,
                                      const PretrainConfig& cfg = {}) {
    if (source_x.rows() < 1) {
        throw std::invalid_argument("pretrain_to_one: empty sample");
    }
    auto full_mse = [&]() {
        const Eigen::VectorXd out = mlp_forward(model, source_x);
        return (out.array() - 1.0).square().mean();
    };

    PretrainReport report;
    report.final_mse = full_mse();
    if (report.final_mse < cfg.tol) {
        report.converged = true;
        return report;
    }

    AdamState state = AdamState::for_model(model, cfg.adam);
    Rng rng(cfg.seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(source_x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const auto len = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                                   order.size() - start);
            Eigen::MatrixXd batch(static_cast<Eigen::Index>(len), source_x.cols());
            for (std::size_t i = 0; i < len; ++i) {
                batch.row(static_cast<Eigen::Index>(i)) = source_x.row(order[start + i]);
            }
            ForwardCache cache;
            const Eigen::VectorXd out = mlp_forward(model, batch, &cache);
            const Eigen::VectorXd d_out =
                2.0 * (out.array() - 1.0).matrix() / static_cast<double>(len);
            adam_step(model, mlp_backward(model, cache, d_out), state);
        }
        report.epochs_run = epoch;
        report.final_mse = full_mse();
        if (report.final_mse < cfg.tol) {
            report.converged = true;
            break;
        }
    }
    return report;
}

}  // namespace iwbench
