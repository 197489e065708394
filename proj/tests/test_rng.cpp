#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "iwbench/rng.hpp"

using namespace iwbench;

namespace {

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        ASSERT_EQ(a.next_u64(), b.next_u64());
    }
}

TEST(Rng, DifferentSeedsDiffer) {
    Rng a(1), b(2);
    int equal = 0;
    for (int i = 0; i < 64; ++i) {
        equal += a.next_u64() == b.next_u64();
    }
    EXPECT_EQ(equal, 0);
}

TEST(Rng, SplitStreamsAreIndependentOfParentUse) {
    Rng parent(7);
    Rng child_before = parent.split(3);
    parent.next_u64();
    parent.next_u64();
    Rng child_after = parent.split(3);
    // Splitting depends only on (key, stream id), not on the parent's position.
    EXPECT_EQ(child_before.next_u64(), child_after.next_u64());
    // And distinct stream ids give distinct streams.
    Rng other = parent.split(4);
    EXPECT_NE(parent.split(3).next_u64(), other.next_u64());
}

TEST(Rng, UniformInHalfOpenUnitInterval) {
    Rng rng(11);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    EXPECT_LT(lo, 0.01);
    EXPECT_GT(hi, 0.99);
}

TEST(Rng, NormalMomentsRoughlyStandard) {
    Rng rng(13);
    const int n = 50000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum2 += z * z;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Rng, BelowCoversRangeUniformly) {
    Rng rng(17);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 25000; ++i) {
        ++counts[size_t(rng.below(5))];
    }
    for (int c : counts) {
        EXPECT_NEAR(double(c), 5000.0, 300.0);
    }
}

TEST(Rng, ShuffleIsAPermutationAndDeterministic) {
    std::vector<int> v1 = {0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<int> v2 = v1;
    Rng a(23), b(23);
    a.shuffle(v1);
    b.shuffle(v2);
    EXPECT_EQ(v1, v2);
    EXPECT_EQ(std::set<int>(v1.begin(), v1.end()).size(), 8u);
}

}  // namespace
