#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "iwbench/dataset.hpp"

using namespace iwbench;

namespace {

class LoadCsvTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = std::filesystem::temp_directory_path() /
               ("iwbench_ds_" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir_);
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }

    std::string write_file(const std::string& name, const std::string& content) {
        const auto path = dir_ / name;
        std::ofstream out(path);
        out << content;
        return path.string();
    }

    std::filesystem::path dir_;
};

TEST_F(LoadCsvTest, SplitsTargetsFromInputs) {
    const auto path = write_file("d.csv", "a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
    const Dataset ds = load_csv(path, {"y"});
    EXPECT_EQ(ds.x.rows(), 3);
    EXPECT_EQ(ds.x.cols(), 2);
    ASSERT_TRUE(ds.y.has_value());
    EXPECT_EQ(ds.y->rows(), 3);
    EXPECT_EQ(ds.y->cols(), 1);
    EXPECT_DOUBLE_EQ((*ds.y)(2, 0), 9.0);
    EXPECT_DOUBLE_EQ(ds.x(1, 1), 5.0);  // row order preserved
    EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"a", "b"}));
}

TEST_F(LoadCsvTest, NoTargetsMeansNoOutputs) {
    const auto path = write_file("d.csv", "a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
    const Dataset ds = load_csv(path, {});
    EXPECT_FALSE(ds.y.has_value());
    EXPECT_EQ(ds.x.cols(), 3);
}

TEST_F(LoadCsvTest, NonNumericValueThrows) {
    const auto path = write_file("bad.csv", "a,b\n1,abc\n");
    try {
        load_csv(path, {});
        FAIL() << "expected an error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("non-numeric value"), std::string::npos);
    }
}

TEST_F(LoadCsvTest, MissingColumnThrows) {
    const auto path = write_file("d.csv", "a,b\n1,2\n");
    EXPECT_THROW(load_csv(path, {"nope"}), std::runtime_error);
}

TEST_F(LoadCsvTest, HeaderOnlyFileThrows) {
    const auto path = write_file("h.csv", "a,b\n");
    EXPECT_THROW(load_csv(path, {}), std::runtime_error);
}

TEST_F(LoadCsvTest, CategoricalColumnsKeptAsLabels) {
    const auto path = write_file("c.csv", "a,color,y\n1,red,0\n2,blue,1\n");
    const Dataset ds = load_csv(path, {"y"}, {"color"});
    EXPECT_EQ(ds.x.cols(), 1);
    ASSERT_EQ(ds.categoricals.size(), 1u);
    EXPECT_EQ(ds.categoricals[0].name, "color");
    EXPECT_EQ(ds.categoricals[0].values, (std::vector<std::string>{"red", "blue"}));
    EXPECT_FALSE(ds.preprocessed());
}

Dataset numeric_dataset(std::initializer_list<std::initializer_list<double>> rows) {
    Dataset ds;
    const auto r = static_cast<Eigen::Index>(rows.size());
    const auto c = static_cast<Eigen::Index>(rows.begin()->size());
    ds.x.resize(r, c);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        Eigen::Index j = 0;
        for (double v : row) ds.x(i, j++) = v;
        ++i;
    }
    for (Eigen::Index j = 0; j < c; ++j) ds.feature_names.push_back("f" + std::to_string(j));
    return ds;
}

TEST(Preprocess, TwoPointMoments) {
    const Dataset ds = numeric_dataset({{1.0}, {3.0}});
    const PreprocessStats stats = fit_preprocess(ds);
    EXPECT_DOUBLE_EQ(stats.means[0], 2.0);
    EXPECT_DOUBLE_EQ(stats.stds[0], 1.0);  // population std
}

TEST(Preprocess, ConstantColumnStdBecomesOne) {
    const Dataset ds = numeric_dataset({{5.0}, {5.0}, {5.0}});
    const PreprocessStats stats = fit_preprocess(ds);
    EXPECT_DOUBLE_EQ(stats.means[0], 5.0);
    EXPECT_DOUBLE_EQ(stats.stds[0], 1.0);
}

TEST(Preprocess, CategoricalLevelsInFirstAppearanceOrder) {
    Dataset ds = numeric_dataset({{0.0}, {1.0}, {2.0}});
    ds.categoricals.push_back({"c", {"a", "b", "a"}});
    const PreprocessStats stats = fit_preprocess(ds);
    ASSERT_EQ(stats.categorical_levels.size(), 1u);
    EXPECT_EQ(stats.categorical_levels[0], (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(stats.encoded_dim(), 3);  // 1 numeric + 2 levels
}

TEST(Preprocess, SingleRowThrows) {
    const Dataset ds = numeric_dataset({{1.0}});
    EXPECT_THROW(fit_preprocess(ds), std::invalid_argument);
}

TEST(Preprocess, ApplyScalesByFrozenStats) {
    const Dataset fitset = numeric_dataset({{1.0}, {3.0}});
    const PreprocessStats stats = fit_preprocess(fitset);
    const Dataset applied = apply_preprocess(numeric_dataset({{3.0}}), stats);
    EXPECT_DOUBLE_EQ(applied.x(0, 0), 1.0);  // (3 - 2) / 1
}

TEST(Preprocess, UnseenLevelEncodesAllZeros) {
    Dataset fitset = numeric_dataset({{0.0}, {1.0}});
    fitset.categoricals.push_back({"c", {"a", "b"}});
    const PreprocessStats stats = fit_preprocess(fitset);

    Dataset fresh = numeric_dataset({{0.0}});
    fresh.categoricals.push_back({"c", {"c"}});
    const Dataset applied = apply_preprocess(fresh, stats);
    EXPECT_DOUBLE_EQ(applied.x(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(applied.x(0, 2), 0.0);
    EXPECT_TRUE(applied.preprocessed());
    EXPECT_EQ(applied.feature_names, (std::vector<std::string>{"f0", "c=a", "c=b"}));
}

TEST(Preprocess, SelfStandardizationIsExact) {
    Rng rng(5);
    Dataset ds;
    ds.x.resize(50, 3);
    for (Eigen::Index i = 0; i < 50; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) ds.x(i, j) = rng.normal(2.0, 3.0);
    ds.feature_names = {"a", "b", "c"};
    const Dataset out = apply_preprocess(ds, fit_preprocess(ds));
    for (Eigen::Index j = 0; j < 3; ++j) {
        const double mean = out.x.col(j).mean();
        const double sd = std::sqrt((out.x.col(j).array() - mean).square().mean());
        EXPECT_LT(std::abs(mean), 1e-10);
        EXPECT_LT(std::abs(sd - 1.0), 1e-10);
    }
}

TEST(Preprocess, SchemaMismatchThrows) {
    const Dataset fitset = numeric_dataset({{1.0}, {3.0}});
    const PreprocessStats stats = fit_preprocess(fitset);
    Dataset other = numeric_dataset({{1.0, 2.0}, {3.0, 4.0}});
    EXPECT_THROW(apply_preprocess(other, stats), std::invalid_argument);
}

TEST(MixtureSpec, PaperProportions) {
    const MixtureSpec spec = make_mixture_spec(10, 4, 0);
    for (int k = 0; k < 9; ++k) {
        EXPECT_NEAR(spec.source_props[k], 0.8 / 9.0, 1e-15);
    }
    EXPECT_DOUBLE_EQ(spec.source_props[9], 0.2);
    for (int k = 0; k < 8; ++k) {
        EXPECT_DOUBLE_EQ(spec.target_props[k], 0.0125);
    }
    EXPECT_DOUBLE_EQ(spec.target_props[8], 0.1);
    EXPECT_DOUBLE_EQ(spec.target_props[9], 0.8);
    EXPECT_NEAR(spec.source_props.sum(), 1.0, 1e-12);
    EXPECT_NEAR(spec.target_props.sum(), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(spec.component_std, 0.2);
}

TEST(MixtureSpec, MinimumComponents) {
    const MixtureSpec spec = make_mixture_spec(3, 2, 1);
    EXPECT_NEAR(spec.source_props[0], 0.4, 1e-15);
    EXPECT_NEAR(spec.source_props[1], 0.4, 1e-15);
    EXPECT_NEAR(spec.source_props[2], 0.2, 1e-15);
    EXPECT_NEAR(spec.target_props[0], 0.1, 1e-15);
    EXPECT_NEAR(spec.target_props[1], 0.1, 1e-15);
    EXPECT_NEAR(spec.target_props[2], 0.8, 1e-15);
    EXPECT_THROW(make_mixture_spec(2, 2, 1), std::invalid_argument);
}

TEST(MixtureSpec, JsonRoundTrip) {
    const MixtureSpec spec = make_mixture_spec(4, 3, 9);
    const MixtureSpec back = MixtureSpec::from_json(spec.to_json());
    EXPECT_EQ(back.num_components, spec.num_components);
    EXPECT_EQ(back.dim, spec.dim);
    EXPECT_TRUE(back.component_means.isApprox(spec.component_means, 0.0));
    EXPECT_TRUE(back.regression_coefs.isApprox(spec.regression_coefs, 0.0));
    EXPECT_TRUE(back.source_props.isApprox(spec.source_props, 0.0));
}

TEST(SampleMixture, ComponentFrequenciesConcentrate) {
    const MixtureSpec spec = make_mixture_spec(10, 3, 7);
    std::vector<int> ids;
    const int n = 10000;
    sample_mixture(spec, n, MixtureSide::source, 21, &ids);
    std::vector<int> counts(10, 0);
    for (int id : ids) ++counts[size_t(id)];
    for (int k = 0; k < 10; ++k) {
        const double pk = spec.source_props[k];
        const double tol = 3.0 * std::sqrt(pk * (1.0 - pk) / n);
        EXPECT_NEAR(counts[size_t(k)] / double(n), pk, tol) << "component " << k;
    }
}

TEST(SampleMixture, DegenerateNoiseCollapsesToMeans) {
    MixtureSpec spec = make_mixture_spec(5, 3, 11);
    spec.component_std = 1e-9;
    std::vector<int> ids;
    const Dataset ds = sample_mixture(spec, 200, MixtureSide::target, 3, &ids);
    for (int i = 0; i < 200; ++i) {
        const double dist =
            (ds.x.row(i) - spec.component_means.row(ids[size_t(i)])).norm();
        EXPECT_LT(dist, 1e-6);
    }
}

TEST(SampleMixture, OutputsFollowComponentLinearModel) {
    const MixtureSpec spec = make_mixture_spec(6, 4, 13);
    std::vector<int> ids;
    const Dataset ds = sample_mixture(spec, 100, MixtureSide::source, 5, &ids);
    for (int i = 0; i < 100; ++i) {
        const double expected = spec.regression_coefs.row(ids[size_t(i)]).dot(ds.x.row(i));
        EXPECT_DOUBLE_EQ((*ds.y)(i, 0), expected);
    }
}

TEST(SampleMixture, DeterministicGivenSeed) {
    const MixtureSpec spec = make_mixture_spec(4, 2, 17);
    const Dataset a = sample_mixture(spec, 64, MixtureSide::source, 99);
    const Dataset b = sample_mixture(spec, 64, MixtureSide::source, 99);
    EXPECT_TRUE(a.x.isApprox(b.x, 0.0));
    EXPECT_TRUE(a.y->isApprox(*b.y, 0.0));
    const Dataset c = sample_mixture(spec, 64, MixtureSide::source, 100);
    EXPECT_FALSE(a.x.isApprox(c.x, 0.0));
}

TEST(FirstPcScores, SignConventionAndCentering) {
    // Dominant variance along the second axis; its loading is fixed positive.
    Dataset ds = numeric_dataset({{0.1, -4.0}, {-0.1, 0.0}, {0.0, 4.0}});
    const Eigen::VectorXd scores = first_pc_scores(ds.x);
    EXPECT_NEAR(scores.mean(), 0.0, 1e-12);
    EXPECT_LT(scores[0], 0.0);  // row with smallest second coordinate
    EXPECT_GT(scores[2], 0.0);
}

TEST(InputBias, PlugInFormula) {
    Eigen::VectorXd scores(3);
    scores << 0.0, 1.0, 2.0;  // min 0, mean 1 -> weighting mean 1/3, std 1/8
    const Eigen::VectorXd p = input_bias_probabilities(scores);
    Eigen::VectorXd expected(3);
    for (int i = 0; i < 3; ++i) {
        const double z = (scores[i] - 1.0 / 3.0) / (1.0 / 8.0);
        expected[i] = std::exp(-0.5 * z * z);
    }
    expected /= expected.sum();
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(p[i], expected[i], 1e-12);
    }
}

TEST(InputBias, DegenerateScoresThrow) {
    EXPECT_THROW(input_bias_probabilities(Eigen::VectorXd::Constant(4, 1.5)), std::runtime_error);
}

TEST(InputBias, ResampleContract) {
    Rng rng(3);
    Dataset ds;
    ds.x.resize(40, 2);
    for (Eigen::Index i = 0; i < 40; ++i)
        for (Eigen::Index j = 0; j < 2; ++j) ds.x(i, j) = rng.normal();
    ds.feature_names = {"a", "b"};
    const Dataset biased = bias_input(ds, 25, 8);
    EXPECT_EQ(biased.rows(), 25);
    // every drawn row must exist in the input dataset
    for (Eigen::Index i = 0; i < biased.rows(); ++i) {
        bool found = false;
        for (Eigen::Index r = 0; r < ds.rows(); ++r) {
            if ((biased.x.row(i) - ds.x.row(r)).norm() == 0.0) {
                found = true;
                break;
            }
        }
        EXPECT_TRUE(found) << "row " << i;
    }
    EXPECT_EQ(biased.seed_provenance, std::optional<std::uint64_t>(8));
}

TEST(InputBias, BiasedMeanScoreBelowUnbiasedMean) {
    const MixtureSpec spec = make_mixture_spec(10, 6, 23);
    Dataset base = sample_mixture(spec, 1500, MixtureSide::source, 31);
    base = apply_preprocess(base, fit_preprocess(base));
    const Eigen::VectorXd scores = first_pc_scores(base.x);

    const Dataset biased = bias_input(base, 800, 77);
    EXPECT_EQ(biased.rows(), 800);
    // bias_input draws by inverse CDF from its seed; redo the draw to read off
    // which scores were selected.
    Rng rng(77);
    const Eigen::VectorXd probs = input_bias_probabilities(scores);
    const auto idx = sample_with_replacement(probs, 800, rng);
    double mean_sel = 0.0;
    for (auto i : idx) mean_sel += scores[i];
    mean_sel /= 800.0;
    EXPECT_LT(mean_sel, scores.mean());
}

TEST(InputBias, RequiresPreprocessedData) {
    Dataset ds = numeric_dataset({{0.0}, {1.0}});
    ds.categoricals.push_back({"c", {"a", "b"}});
    EXPECT_THROW(bias_input(ds, 2, 0), std::invalid_argument);
}

TEST(OutputBias, SigmoidWeightValues) {
    // score 1 -> unnormalized weight 0.5; scores {0, 2} -> ratio of sigmoids
    Eigen::VectorXd one(1);
    one << 1.0;
    Eigen::VectorXd scores(2);
    scores << 0.0, 2.0;
    const Eigen::VectorXd p = output_bias_probabilities(scores);
    const double w0 = std::exp(-3.0) / (1.0 + std::exp(-3.0));
    const double w2 = std::exp(3.0) / (1.0 + std::exp(3.0));
    EXPECT_NEAR(p[1] / p[0], w2 / w0, 1e-12);

    // sigmoid limits
    Eigen::VectorXd extreme(2);
    extreme << -400.0, 400.0;
    const Eigen::VectorXd pe = output_bias_probabilities(extreme);
    EXPECT_NEAR(pe[1], 1.0, 1e-12);
    EXPECT_NEAR(pe[0], 0.0, 1e-12);
}

TEST(OutputBias, ScalarOutputsUseStandardizedY) {
    Eigen::MatrixXd y(4, 1);
    y << 0.0, 1.0, 2.0, 3.0;
    const Eigen::VectorXd s = output_bias_scores(y);
    EXPECT_NEAR(s.mean(), 0.0, 1e-12);
    EXPECT_NEAR(s.array().square().mean(), 1.0, 1e-12);
}

TEST(OutputBias, RequiresOutputs) {
    Dataset ds = numeric_dataset({{0.0}, {1.0}});
    EXPECT_THROW(bias_output(ds, 2, 0), std::invalid_argument);
}

TEST(OutputBias, DrawsRequestedRows) {
    Dataset ds = numeric_dataset({{0.0}, {1.0}, {2.0}});
    Eigen::MatrixXd y(3, 1);
    y << 0.0, 1.0, 5.0;
    ds.y = y;
    ds.output_names = {"y"};
    const Dataset biased = bias_output(ds, 10, 4);
    EXPECT_EQ(biased.rows(), 10);
    ASSERT_TRUE(biased.y.has_value());
    EXPECT_EQ(biased.y->rows(), 10);
}

TEST(SampleWithReplacement, InverseCdfIsDeterministic) {
    Eigen::VectorXd p(3);
    p << 0.2, 0.3, 0.5;
    Rng a(5), b(5);
    EXPECT_EQ(sample_with_replacement(p, 50, a), sample_with_replacement(p, 50, b));
    Eigen::VectorXd bad(2);
    bad << 0.6, 0.6;
    Rng c(5);
    EXPECT_THROW(sample_with_replacement(bad, 5, c), std::invalid_argument);
}

TEST(Dataset, TakeRowsGathersEverything) {
    Dataset ds = numeric_dataset({{0.0}, {1.0}, {2.0}});
    Eigen::MatrixXd y(3, 1);
    y << 10.0, 11.0, 12.0;
    ds.y = y;
    ds.output_names = {"y"};
    ds.categoricals.push_back({"c", {"a", "b", "c"}});
    const Dataset sel = ds.take_rows({2, 0, 2});
    EXPECT_DOUBLE_EQ(sel.x(0, 0), 2.0);
    EXPECT_DOUBLE_EQ((*sel.y)(1, 0), 10.0);
    EXPECT_EQ(sel.categoricals[0].values, (std::vector<std::string>{"c", "a", "c"}));
}

}  // namespace
