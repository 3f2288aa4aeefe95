#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "patchdebias/composition.hpp"
#include "patchdebias/error.hpp"

using namespace patchdebias;

TEST(Ratios, FourByFourExample) {
    std::vector<PixelClass> m(16, PixelClass::Background);
    for (int i = 0; i < 4; ++i) m[i] = PixelClass::Tumor;
    for (int i = 4; i < 8; ++i) m[i] = PixelClass::Healthy;
    const auto r = compute_ratios(MaskView(m, 4, 4));
    EXPECT_DOUBLE_EQ(r.r_tumor, 0.25);
    EXPECT_DOUBLE_EQ(r.r_tissue, 0.5);
    ASSERT_TRUE(r.r_tumor_tissue.has_value());
    EXPECT_DOUBLE_EQ(*r.r_tumor_tissue, 0.5);
    EXPECT_EQ(r.tissue_pixels, 8u);
}

TEST(Ratios, NoTissueLeavesTumorTissueUndefined) {
    std::vector<PixelClass> m(9, PixelClass::Background);
    const auto r = compute_ratios(MaskView(m, 3, 3));
    EXPECT_EQ(r.r_tumor, 0.0);
    EXPECT_EQ(r.r_tissue, 0.0);
    EXPECT_FALSE(r.r_tumor_tissue.has_value());
}

TEST(Ratios, MatchBruteForceAndInvariants) {
    Rng rng(21);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t h = 1 + rng.below(16);
        const std::size_t w = 1 + rng.below(16);
        const auto m = oracle::random_mask(rng, h * w);
        const auto c = oracle::count_pixels(m);
        const auto r = compute_ratios(MaskView(m, h, w));
        const double n = static_cast<double>(h * w);
        const std::size_t s = c.tumor + c.healthy;
        ASSERT_EQ(r.tumor_pixels, c.tumor);
        ASSERT_EQ(r.tissue_pixels, s);
        ASSERT_EQ(r.r_tumor, static_cast<double>(c.tumor) / n);
        ASSERT_EQ(r.r_tissue, static_cast<double>(s) / n);
        ASSERT_LE(r.r_tumor, r.r_tissue);
        ASSERT_EQ(r.r_tumor_tissue.has_value(), s > 0);
        if (s > 0) {
            ASSERT_EQ(*r.r_tumor_tissue, static_cast<double>(c.tumor) / static_cast<double>(s));
            ASSERT_NEAR(r.r_tumor, *r.r_tumor_tissue * r.r_tissue, 1e-12);
        }
        ASSERT_EQ(r.r_tumor > 0.0, binary_label(MaskView(m, h, w)) == 1);
    }
}

TEST(Ratios, FromCountsRejectsInconsistentCounts) {
    EXPECT_THROW(ratios_from_counts(5, 3, 10), ValidationError);
    EXPECT_THROW(ratios_from_counts(1, 11, 10), ValidationError);
}

TEST(InferTissue, ZerosAndOnes) {
    std::vector<float> zeros(4 * 4 * 3, 0.0f);
    const auto none = infer_tissue(PixelView(zeros.data(), 4, 4, 3, 12), 0.05);
    for (auto v : none.tissue) EXPECT_EQ(v, 0);
    std::vector<float> ones(4 * 4 * 3, 1.0f);
    const auto all = infer_tissue(PixelView(ones.data(), 4, 4, 3, 12), 0.05);
    for (auto v : all.tissue) EXPECT_EQ(v, 1);
    EXPECT_THROW(infer_tissue(PixelView(ones.data(), 4, 4, 3, 12), 0.0), ValidationError);
}

TEST(InferTissue, ExactOnNoiselessScenes) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        SceneSpec s;
        s.seed = seed;
        s.height = 80;
        s.width = 80;
        s.noise_sigma = 0.0;
        s.tumor_blob_count = 2;
        s.healthy_coverage = 0.1;
        s.blob_brightness_jitter = 0.3;
        s.blob_color_jitter = 0.3;
        const auto pair = generate_scene(s);
        const double eps = 0.5 * (s.background_intensity_max + s.tissue_floor());
        const auto inferred = infer_tissue(PixelView(pair.image), eps);
        const auto truth = tissue_from_mask(MaskView(pair.mask));
        EXPECT_EQ(inferred.tissue, truth.tissue);
    }
}

TEST(InferTissue, InferredRatiosKeepTumorBelowTissue) {
    std::vector<PixelClass> m(4, PixelClass::Tumor);
    TissueMap empty{2, 2, std::vector<std::uint8_t>(4, 0)};
    const auto r = compute_ratios(MaskView(m, 2, 2), empty);
    EXPECT_EQ(r.r_tumor, 1.0);
    EXPECT_EQ(r.r_tissue, 1.0);
}

TEST(Spurious, Examples) {
    EXPECT_EQ(binarize_spurious(0.05, 0.1), 0);
    EXPECT_EQ(binarize_spurious(0.1, 0.1), 1);
    EXPECT_EQ(binarize_spurious(0.5, 0.03), 1);
    EXPECT_THROW(binarize_spurious(0.5, 1.5), ValidationError);
}

TEST(Spurious, Monotone) {
    Rng rng(3);
    for (int t = 0; t < 2000; ++t) {
        const double a = rng.uniform();
        const double b = rng.uniform();
        const double tau = rng.uniform();
        const double lo = std::min(a, b);
        const double hi = std::max(a, b);
        EXPECT_LE(binarize_spurious(lo, tau), binarize_spurious(hi, tau));
        EXPECT_GE(binarize_spurious(a, std::min(tau, b)), binarize_spurious(a, std::max(tau, b)));
    }
}

TEST(Groups, Encoding) {
    EXPECT_EQ(assign_group(0, 0).value(), 0);
    EXPECT_EQ(assign_group(1, 1).value(), 3);
    std::set<int> ids;
    for (std::uint8_t y = 0; y < 2; ++y) {
        for (std::uint8_t z = 0; z < 2; ++z) {
            const GroupId g = assign_group(y, z);
            ids.insert(g.value());
            EXPECT_EQ(g.label(), y);
            EXPECT_EQ(g.spurious(), z);
        }
    }
    EXPECT_EQ(ids.size(), 4u);
    EXPECT_THROW(assign_group(2, 0), ValidationError);
}

TEST(Records, OneColumnPerTau) {
    SceneSpec s;
    s.seed = 12;
    s.noise_sigma = 0.0;
    s.background_intensity_max = 0.02;
    s.height = 64;
    s.width = 64;
    const auto pair = generate_scene(s, "img");
    const auto patches = partition(pair.image, pair.mask, {32, 32});
    const std::vector<double> taus{0.1, 0.03};
    for (const Patch& p : patches) {
        const PatchRecord rec = make_record(p, Split::Test, taus);
        ASSERT_EQ(rec.z.size(), 2u);
        EXPECT_EQ(rec.label, binary_label(p.mask));
        for (std::size_t k = 0; k < taus.size(); ++k) {
            EXPECT_EQ(rec.z[k], binarize_spurious(rec.ratios.r_tissue, taus[k]));
            EXPECT_EQ(rec.groups[k], assign_group(rec.label, rec.z[k]));
        }
        EXPECT_EQ(rec.tau_index(0.03), 1u);
        EXPECT_THROW(rec.tau_index(0.5), ValidationError);
        const PatchRecord inferred = make_record(p, Split::Test, taus, TissueSource::Inferred);
        EXPECT_EQ(inferred.ratios.tissue_pixels, rec.ratios.tissue_pixels);
    }
}
