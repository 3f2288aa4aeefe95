#include <gtest/gtest.h>

#include "metric_fixtures.hpp"
#include "patchdebias/error.hpp"
#include "patchdebias/metrics.hpp"
#include "patchdebias/random.hpp"

using namespace patchdebias;

TEST(Evaluate, HandComputedFixtures) {
    for (const auto& f : fixtures::metric_fixtures()) {
        const auto s = fixtures::expand(f);
        const EvalResult r = evaluate(s.preds, s.labels, s.groups);
        EXPECT_EQ(r.wga, f.wga) << f.name;
        EXPECT_EQ(r.bca, f.bca) << f.name;
        EXPECT_EQ(r.empty_groups, f.empty_groups) << f.name;
        for (std::size_t g = 0; g < 4; ++g) {
            EXPECT_EQ(r.per_group[g].total,
                      static_cast<std::size_t>(f.groups[g].first + f.groups[g].second));
            EXPECT_EQ(r.per_group[g].correct, static_cast<std::size_t>(f.groups[g].first));
        }
    }
}

TEST(Evaluate, PermutationInvariant) {
    Rng rng(3);
    for (const auto& f : fixtures::metric_fixtures()) {
        auto s = fixtures::expand(f);
        const EvalResult a = evaluate(s.preds, s.labels, s.groups);
        for (std::size_t i = s.preds.size(); i > 1; --i) {
            const std::size_t j = rng.below(i);
            std::swap(s.preds[i - 1], s.preds[j]);
            std::swap(s.labels[i - 1], s.labels[j]);
            std::swap(s.groups[i - 1], s.groups[j]);
        }
        const EvalResult b = evaluate(s.preds, s.labels, s.groups);
        EXPECT_EQ(a.wga, b.wga);
        EXPECT_EQ(a.bca, b.bca);
    }
}

TEST(Evaluate, BcaIgnoresClassImbalance) {
    const auto f = fixtures::metric_fixtures()[5];
    const auto s = fixtures::expand(f);
    const double before = evaluate(s.preds, s.labels, s.groups).bca;
    // Triple every class-0 sample; per-class accuracy is unchanged.
    auto h = f;
    h.groups[0] = {3, 6};
    h.groups[1] = {15, 0};
    const auto t = fixtures::expand(h);
    EXPECT_EQ(evaluate(t.preds, t.labels, t.groups).bca, before);
}

TEST(Evaluate, WgaBelowEveryGroupAndBca) {
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        std::vector<std::uint8_t> preds, labels;
        std::vector<GroupId> groups;
        const std::uint8_t z = static_cast<std::uint8_t>(rng.below(2));
        for (int i = 0; i < 50; ++i) {
            const auto y = static_cast<std::uint8_t>(rng.below(2));
            labels.push_back(y);
            preds.push_back(static_cast<std::uint8_t>(rng.below(2)));
            groups.push_back(assign_group(y, z));
        }
        const EvalResult r = evaluate(preds, labels, groups);
        for (const auto& g : r.per_group) {
            if (!g.empty()) EXPECT_LE(r.wga, g.rate());
        }
        // Groups coincide with classes here, so WGA is the worse class.
        if (r.empty_classes.empty()) EXPECT_LE(r.wga, r.bca);
    }
}

TEST(Evaluate, Errors) {
    const std::vector<std::uint8_t> p{0, 1};
    const std::vector<std::uint8_t> l{0};
    const std::vector<GroupId> g{GroupId(0), GroupId(1)};
    EXPECT_THROW(evaluate(p, l, g), ValidationError);
    EXPECT_THROW(evaluate({}, {}, {}), ValidationError);
}

TEST(Evaluate, JsonHasCounts) {
    const auto s = fixtures::expand(fixtures::metric_fixtures()[2]);
    nlohmann::json j = evaluate(s.preds, s.labels, s.groups);
    EXPECT_EQ(j.at("empty_groups"), nlohmann::json::array({1, 3}));
    EXPECT_EQ(j.at("groups").size(), 4u);
    EXPECT_TRUE(j.contains("wga"));
}
