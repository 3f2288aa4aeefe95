#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchdebias/error.hpp"
#include "patchdebias/sampler.hpp"

using namespace patchdebias;

namespace {

std::vector<GroupId> groups_with_counts(std::array<std::size_t, 4> counts) {
    std::vector<GroupId> g;
    for (std::uint8_t k = 0; k < 4; ++k) {
        g.insert(g.end(), counts[k], GroupId(k));
    }
    // Interleave so group membership is not just a contiguous range.
    std::vector<GroupId> out(g.size());
    std::size_t stride = 7;
    while (std::gcd(stride, g.size()) != 1) ++stride;
    for (std::size_t i = 0; i < g.size(); ++i) out[(i * stride) % g.size()] = g[i];
    return out;
}

std::array<std::size_t, 4> histogram(const GroupedDataset& ds, const std::vector<std::size_t>& b) {
    std::array<std::size_t, 4> h{};
    for (auto i : b) ++h[ds.group_of(i).value()];
    return h;
}

}  // namespace

TEST(Biased, SingleRecordRepeats) {
    const std::vector<GroupId> g{GroupId(2)};
    const GroupedDataset ds(g);
    const BatchSampler s(ds, 1);
    EXPECT_EQ(s.draw_biased(4, 0, 0), (std::vector<std::size_t>{0, 0, 0, 0}));
}

TEST(Biased, MultinomialWithinThreeSigma) {
    const auto g = groups_with_counts({700, 100, 100, 100});
    const GroupedDataset ds(g);
    const BatchSampler s(ds, 77);
    std::array<std::size_t, 4> total{};
    for (std::size_t step = 0; step < 100; ++step) {
        const auto h = histogram(ds, s.draw_biased(1000, 0, step));
        for (int k = 0; k < 4; ++k) total[k] += h[k];
    }
    const std::array<double, 4> p{0.7, 0.1, 0.1, 0.1};
    const double n = 100.0 * 1000.0;
    for (int k = 0; k < 4; ++k) {
        const double sigma = std::sqrt(n * p[k] * (1 - p[k]));
        EXPECT_NEAR(static_cast<double>(total[k]), n * p[k], 3 * sigma) << "group " << k;
    }
}

TEST(Biased, ChiSquareAgainstGroupProportions) {
    const auto g = groups_with_counts({530, 90, 60, 320});
    const GroupedDataset ds(g);
    const BatchSampler s(ds, 2024);
    std::array<double, 4> obs{};
    for (std::size_t step = 0; step < 100; ++step) {
        const auto h = histogram(ds, s.draw_biased(1000, 3, step));
        for (int k = 0; k < 4; ++k) obs[k] += static_cast<double>(h[k]);
    }
    double chi2 = 0.0;
    for (int k = 0; k < 4; ++k) {
        const double expected = 1e5 * static_cast<double>(ds.count(k)) / 1000.0;
        chi2 += (obs[k] - expected) * (obs[k] - expected) / expected;
    }
    // Upper 0.001 quantile of chi-square with 3 degrees of freedom.
    EXPECT_LT(chi2, 16.266);
}

TEST(Biased, Deterministic) {
    const auto g = groups_with_counts({10, 10, 10, 10});
    const GroupedDataset ds(g);
    EXPECT_EQ(BatchSampler(ds, 5).draw_biased(32, 2, 9), BatchSampler(ds, 5).draw_biased(32, 2, 9));
    EXPECT_NE(BatchSampler(ds, 5).draw_biased(32, 2, 9), BatchSampler(ds, 5).draw_biased(32, 2, 10));
    EXPECT_NE(BatchSampler(ds, 5).draw_biased(32, 2, 9), BatchSampler(ds, 6).draw_biased(32, 2, 9));
}

TEST(LessBiased, ExactCounts) {
    const auto g = groups_with_counts({50, 3, 9, 20});
    const GroupedDataset ds(g);
    const BatchSampler s(ds, 9);
    EXPECT_EQ(histogram(ds, s.draw_less_biased(8, 0, 0)), (std::array<std::size_t, 4>{2, 2, 2, 2}));
    EXPECT_EQ(histogram(ds, s.draw_less_biased(6, 0, 0)), (std::array<std::size_t, 4>{2, 2, 1, 1}));
    for (std::size_t b = 4; b < 70; ++b) {
        const auto h = histogram(ds, s.draw_less_biased(b, 1, b));
        const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
        EXPECT_LE(*hi - *lo, 1u);
        EXPECT_EQ(h[0] + h[1] + h[2] + h[3], b);
    }
}

TEST(LessBiased, SingletonMinorityRepeats) {
    const auto g = groups_with_counts({30, 1, 12, 8});
    const GroupedDataset ds(g);
    const std::size_t only = ds.members(1)[0];
    const auto batch = BatchSampler(ds, 4).draw_less_biased(40, 0, 0);
    EXPECT_EQ(std::count(batch.begin(), batch.end(), only), 10);
}

TEST(LessBiased, UniformWithinGroup) {
    const auto g = groups_with_counts({4, 4, 4, 4});
    const GroupedDataset ds(g);
    const BatchSampler s(ds, 12);
    std::vector<double> hits(16, 0.0);
    for (std::size_t step = 0; step < 2000; ++step) {
        for (auto i : s.draw_less_biased(16, 0, step)) hits[i] += 1.0;
    }
    // Each record expects 2000 * 4 / 4 = 2000 draws.
    for (double h : hits) EXPECT_NEAR(h, 2000.0, 3 * std::sqrt(8000.0 * 0.25 * 0.75));
}

TEST(LessBiased, EmptyGroupIsNamed) {
    const auto g = groups_with_counts({5, 5, 0, 5});
    const GroupedDataset ds(g);
    try {
        BatchSampler(ds, 0).draw_less_biased(8, 0, 0);
        FAIL() << "expected an error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("group 2"), std::string::npos);
    }
    EXPECT_THROW(BatchSampler(ds, 0).draw_less_biased(3, 0, 0), ValidationError);
}

TEST(Pair, IndependentStreams) {
    const auto g = groups_with_counts({25, 25, 25, 25});
    const GroupedDataset ds(g);
    const BatchSampler s(ds, 3);
    const auto pair = s.draw_pair(16, 4, 2);
    EXPECT_EQ(pair.biased, s.draw_biased(16, 4, 2));
    EXPECT_EQ(pair.less_biased, s.draw_less_biased(16, 4, 2));
}

TEST(Erm, FullBatchIsPermutation) {
    const auto g = groups_with_counts({6, 7, 8, 9});
    const GroupedDataset ds(g);
    const BatchSampler s(ds, 1);
    const auto batches = s.draw_erm(30, 0);
    ASSERT_EQ(batches.size(), 1u);
    auto sorted = batches[0];
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(30);
    std::iota(iota.begin(), iota.end(), 0);
    EXPECT_EQ(sorted, iota);
}

TEST(Erm, EachRecordOncePerEpoch) {
    const auto g = groups_with_counts({20, 10, 5, 15});
    const GroupedDataset ds(g);
    const BatchSampler s(ds, 8);
    const auto batches = s.draw_erm(16, 2);
    ASSERT_EQ(batches.size(), 4u);
    EXPECT_EQ(batches.back().size(), 2u);
    std::vector<int> seen(50, 0);
    for (const auto& b : batches) {
        for (auto i : b) ++seen[i];
    }
    for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(Erm, EpochsReshuffleReproducibly) {
    const auto g = groups_with_counts({20, 10, 5, 15});
    const GroupedDataset ds(g);
    EXPECT_NE(BatchSampler(ds, 8).erm_permutation(0), BatchSampler(ds, 8).erm_permutation(1));
    EXPECT_EQ(BatchSampler(ds, 8).erm_permutation(1), BatchSampler(ds, 8).erm_permutation(1));
}
