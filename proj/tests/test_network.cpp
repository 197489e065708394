#include <gtest/gtest.h>

#include <cmath>

#include "iwbench/dataset.hpp"
#include "iwbench/kernel_mmd.hpp"
#include "iwbench/network.hpp"

using namespace iwbench;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

TEST(MlpInit, PaperArchitectureShapes) {
    const MlpModel model = mlp_init(5, 3, 100, 0);
    ASSERT_EQ(model.num_layers(), 4);
    EXPECT_EQ(model.weights[0].rows(), 5);
    EXPECT_EQ(model.weights[0].cols(), 100);
    EXPECT_EQ(model.weights[1].rows(), 100);
    EXPECT_EQ(model.weights[1].cols(), 100);
    EXPECT_EQ(model.weights[2].rows(), 100);
    EXPECT_EQ(model.weights[2].cols(), 100);
    EXPECT_EQ(model.weights[3].rows(), 100);
    EXPECT_EQ(model.weights[3].cols(), 1);
    for (const auto& b : model.biases) {
        EXPECT_DOUBLE_EQ(b.cwiseAbs().maxCoeff(), 0.0);
    }
    // fan-in scaled bound on the first layer
    const double bound = std::sqrt(6.0 / (5 + 100));
    EXPECT_LE(model.weights[0].cwiseAbs().maxCoeff(), bound);
}

TEST(MlpInit, ZeroHiddenLayersIsLinear) {
    const MlpModel model = mlp_init(7, 0, 100, 1);
    ASSERT_EQ(model.num_layers(), 1);
    EXPECT_EQ(model.weights[0].rows(), 7);
    EXPECT_EQ(model.weights[0].cols(), 1);

    Rng rng(2);
    const Eigen::MatrixXd x = random_matrix(6, 7, rng);
    const Eigen::VectorXd out = mlp_forward(model, x);
    const Eigen::VectorXd expected = x * model.weights[0];
    EXPECT_LT((out - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MlpInit, SameSeedBitwiseIdentical) {
    const MlpModel a = mlp_init(4, 2, 16, 77);
    const MlpModel b = mlp_init(4, 2, 16, 77);
    for (int l = 0; l < a.num_layers(); ++l) {
        EXPECT_TRUE(a.weights[size_t(l)].isApprox(b.weights[size_t(l)], 0.0));
    }
    const MlpModel c = mlp_init(4, 2, 16, 78);
    EXPECT_FALSE(a.weights[0].isApprox(c.weights[0], 0.0));
}

TEST(MlpForward, ConstantNetworkOutputsBias) {
    MlpModel model = mlp_init(3, 2, 8, 3);
    for (auto& w : model.weights) w.setZero();
    model.biases.back()[0] = 4.25;
    Rng rng(4);
    const Eigen::VectorXd out = mlp_forward(model, random_matrix(5, 3, rng));
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        EXPECT_DOUBLE_EQ(out[i], 4.25);
    }
}

TEST(MlpForward, HandComputedTwoLayerTrace) {
    // One hidden layer of width 2, input 1x2. Chosen so one hidden unit is
    // clipped by the ReLU.
    MlpModel model;
    Eigen::MatrixXd w0(2, 2);
    w0 << 1.0, -1.0,
          2.0, 1.0;
    Eigen::MatrixXd w1(2, 1);
    w1 << 0.5, -2.0;
    model.weights = {w0, w1};
    model.biases = {Eigen::Vector2d(0.5, -0.25), Eigen::VectorXd::Constant(1, 0.125)};

    Eigen::MatrixXd x(1, 2);
    x << 1.0, -2.0;
    // pre-activation: [1*1 + (-2)*2 + 0.5, 1*(-1) + (-2)*1 - 0.25] = [-2.5, -3.25]
    // relu -> [0, 0]; output = 0.125
    EXPECT_DOUBLE_EQ(mlp_forward(model, x)[0], 0.125);

    x << 2.0, 0.5;
    // pre-activation: [2 + 1 + 0.5, -2 + 0.5 - 0.25] = [3.5, -1.75]
    // relu -> [3.5, 0]; output = 3.5*0.5 + 0*(-2) + 0.125 = 1.875
    EXPECT_DOUBLE_EQ(mlp_forward(model, x)[0], 1.875);
}

TEST(MlpForward, RowPermutationEquivariance) {
    const MlpModel model = mlp_init(4, 2, 12, 5);
    Rng rng(6);
    const Eigen::MatrixXd x = random_matrix(6, 4, rng);
    const Eigen::VectorXd out = mlp_forward(model, x);
    Eigen::MatrixXd xr = x.colwise().reverse();
    const Eigen::VectorXd out_r = mlp_forward(model, xr);
    EXPECT_TRUE(out_r.isApprox(out.reverse(), 0.0));
}

TEST(MlpForward, DimensionMismatchThrows) {
    const MlpModel model = mlp_init(4, 1, 8, 7);
    Eigen::MatrixXd x(2, 3);
    x.setZero();
    EXPECT_THROW(mlp_forward(model, x), std::invalid_argument);
}

TEST(MlpBackward, MatchesFiniteDifferencesEveryLayer) {
    Rng rng(8);
    const Eigen::Index batch = 8, p = 4;
    MlpModel model = mlp_init(int(p), 2, 6, 9);
    const Eigen::MatrixXd x = random_matrix(batch, p, rng);
    Eigen::VectorXd d_out(batch);
    for (Eigen::Index i = 0; i < batch; ++i) d_out[i] = rng.normal();

    auto loss = [&](const MlpModel& m) { return d_out.dot(mlp_forward(m, x)); };

    ForwardCache cache;
    mlp_forward(model, x, &cache);
    const MlpGradients grads = mlp_backward(model, cache, d_out);

    const double h = 1e-5;
    for (int l = 0; l < model.num_layers(); ++l) {
        auto& w = model.weights[size_t(l)];
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                const double keep = w(i, j);
                w(i, j) = keep + h;
                const double up = loss(model);
                w(i, j) = keep - h;
                const double dn = loss(model);
                w(i, j) = keep;
                const double fd = (up - dn) / (2.0 * h);
                const double got = grads.weights[size_t(l)](i, j);
                const double denom = std::max({std::abs(fd), std::abs(got), 1e-6});
                ASSERT_LT(std::abs(got - fd) / denom, 1e-4)
                    << "layer " << l << " w(" << i << "," << j << ")";
            }
        }
        auto& b = model.biases[size_t(l)];
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            const double keep = b[i];
            b[i] = keep + h;
            const double up = loss(model);
            b[i] = keep - h;
            const double dn = loss(model);
            b[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double got = grads.biases[size_t(l)][i];
            const double denom = std::max({std::abs(fd), std::abs(got), 1e-6});
            ASSERT_LT(std::abs(got - fd) / denom, 1e-4) << "layer " << l << " b(" << i << ")";
        }
    }
}

TEST(MlpBackward, ZeroUpstreamGradientGivesZero) {
    const MlpModel model = mlp_init(3, 2, 5, 10);
    Rng rng(11);
    const Eigen::MatrixXd x = random_matrix(4, 3, rng);
    ForwardCache cache;
    mlp_forward(model, x, &cache);
    const MlpGradients grads = mlp_backward(model, cache, Eigen::VectorXd::Zero(4));
    for (const auto& g : grads.weights) {
        EXPECT_DOUBLE_EQ(g.cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(MlpBackward, LinearInUpstreamGradient) {
    // duplicating a row and halving its two upstream entries leaves the
    // parameter gradients unchanged
    const MlpModel model = mlp_init(3, 1, 6, 12);
    Rng rng(13);
    const Eigen::MatrixXd x = random_matrix(3, 3, rng);
    Eigen::VectorXd d(3);
    d << 1.0, -0.5, 2.0;
    ForwardCache cache;
    mlp_forward(model, x, &cache);
    const MlpGradients base = mlp_backward(model, cache, d);

    Eigen::MatrixXd x_dup(4, 3);
    x_dup << x, x.row(0);
    Eigen::VectorXd d_dup(4);
    d_dup << 0.5, -0.5, 2.0, 0.5;
    ForwardCache cache_dup;
    mlp_forward(model, x_dup, &cache_dup);
    const MlpGradients dup = mlp_backward(model, cache_dup, d_dup);
    for (int l = 0; l < model.num_layers(); ++l) {
        EXPECT_LT((base.weights[size_t(l)] - dup.weights[size_t(l)]).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(MlpBackward, StaleCacheThrows) {
    const MlpModel model = mlp_init(3, 1, 6, 14);
    Rng rng(15);
    ForwardCache cache;
    mlp_forward(model, random_matrix(4, 3, rng), &cache);
    EXPECT_THROW(mlp_backward(model, cache, Eigen::VectorXd::Zero(5)), std::invalid_argument);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
    MlpModel model;
    model.weights = {Eigen::MatrixXd::Zero(1, 1)};
    model.biases = {Eigen::VectorXd::Zero(1)};
    AdamState state = AdamState::for_model(model, AdamConfig{.lr = 0.01});
    MlpGradients grads;
    grads.weights = {Eigen::MatrixXd::Constant(1, 1, 3.0)};
    grads.biases = {Eigen::VectorXd::Constant(1, -0.2)};
    adam_step(model, grads, state);
    EXPECT_EQ(state.step_count, 1);
    // first bias-corrected step: -lr * g / (|g| + eps) ~= -lr * sign(g)
    EXPECT_NEAR(model.weights[0](0, 0), -0.01, 1e-8);
    EXPECT_NEAR(model.biases[0][0], 0.01, 1e-7);
}

TEST(Adam, ZeroGradientLeavesParamsAndCounts) {
    MlpModel model = mlp_init(2, 1, 3, 16);
    const MlpModel before = model;
    AdamState state = AdamState::for_model(model);
    MlpGradients grads;
    for (const auto& w : model.weights) grads.weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : model.biases) grads.biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
    adam_step(model, grads, state);
    EXPECT_EQ(state.step_count, 1);
    for (int l = 0; l < model.num_layers(); ++l) {
        EXPECT_TRUE(model.weights[size_t(l)].isApprox(before.weights[size_t(l)], 0.0));
    }
}

TEST(Adam, QuadraticScalarConverges) {
    // 100 steps on f(t) = t^2 from t = 1 at lr 0.1
    ScalarAdam adam{AdamConfig{.lr = 0.1}};
    double theta = 1.0;
    for (int i = 0; i < 100; ++i) {
        theta = adam.descend(theta, 2.0 * theta);
    }
    EXPECT_LT(std::abs(theta), 0.05);
}

TEST(Adam, OddSymmetryUnderSignFlip) {
    ScalarAdam a{AdamConfig{.lr = 0.05}};
    ScalarAdam b{AdamConfig{.lr = 0.05}};
    double ta = 0.7, tb = -0.7;
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        const double g = rng.normal();
        ta = a.descend(ta, g);
        tb = b.descend(tb, -g);
        ASSERT_NEAR(ta, -tb, 1e-12);
    }
}

TEST(Pretrain, ReachesConstantOne) {
    const MixtureSpec spec = make_mixture_spec(10, 8, 3);
    const Dataset ds = sample_mixture(spec, 2000, MixtureSide::source, 4);
    MlpModel model = mlp_init(8, 3, 100, 5);
    const PretrainReport report = pretrain_to_one(model, ds.x);
    EXPECT_TRUE(report.converged);
    const Eigen::VectorXd out = mlp_forward(model, ds.x);
    EXPECT_LT((out.array() - 1.0).abs().maxCoeff(), 0.1);
}

TEST(Pretrain, AlreadyConstantReturnsAtEpochZero) {
    MlpModel model = mlp_init(3, 1, 4, 6);
    for (auto& w : model.weights) w.setZero();
    model.biases.back()[0] = 1.0;
    Rng rng(18);
    Eigen::MatrixXd x(10, 3);
    for (Eigen::Index i = 0; i < 10; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
    const PretrainReport report = pretrain_to_one(model, x);
    EXPECT_TRUE(report.converged);
    EXPECT_EQ(report.epochs_run, 0);
    EXPECT_DOUBLE_EQ(report.final_mse, 0.0);
}

TEST(Pretrain, FeedsNearUniformSelfNormalizedWeights) {
    const MixtureSpec spec = make_mixture_spec(10, 8, 7);
    const Dataset ds = sample_mixture(spec, 2000, MixtureSide::source, 8);
    MlpModel model = mlp_init(8, 3, 100, 9);
    PretrainConfig cfg;
    cfg.tol = 1e-4;  // tight enough that batch weights stay within 5% of uniform
    pretrain_to_one(model, ds.x, cfg);

    const Eigen::Index batch = 256;
    const Eigen::VectorXd raw = mlp_forward(model, ds.x.topRows(batch));
    const auto sw = self_normalize(raw);
    const double uniform = 1.0 / double(batch);
    EXPECT_LT((sw.v.array() - uniform).abs().maxCoeff(), 0.05 * uniform);
}

TEST(MlpModel, JsonCheckpointRoundTrip) {
    const MlpModel model = mlp_init(4, 2, 8, 19);
    const MlpModel back = MlpModel::from_json(model.to_json());
    ASSERT_EQ(back.num_layers(), model.num_layers());
    for (int l = 0; l < model.num_layers(); ++l) {
        EXPECT_TRUE(back.weights[size_t(l)].isApprox(model.weights[size_t(l)], 0.0));
        EXPECT_TRUE(back.biases[size_t(l)].isApprox(model.biases[size_t(l)], 0.0));
    }
}

}  // namespace
