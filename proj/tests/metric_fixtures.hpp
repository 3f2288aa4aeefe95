#pragma once

// Hand-computed WGA/BCA fixtures. Each group lists (correct, wrong) counts;
// the label follows the group id. Expected values are reduced fractions
// worked out by hand.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchdebias/composition.hpp"

namespace fixtures {

struct MetricFixture {
    std::string name;
    std::array<std::pair<int, int>, 4> groups;
    double wga;
    double bca;
    std::vector<std::uint8_t> empty_groups;
};

inline std::vector<MetricFixture> metric_fixtures() {
    return {
        {"perfect", {{{5, 0}, {3, 0}, {2, 0}, {4, 0}}}, 1.0, 1.0, {}},
        {"group_min", {{{9, 1}, {8, 2}, {1, 1}, {19, 1}}}, 1.0 / 2.0, 387.0 / 440.0, {}},
        {"imbalanced_classes", {{{900, 100}, {0, 0}, {7, 3}, {0, 0}}}, 7.0 / 10.0, 4.0 / 5.0, {1, 3}},
        {"all_wrong", {{{0, 3}, {0, 2}, {0, 4}, {0, 1}}}, 0.0, 0.0, {}},
        {"single_class", {{{3, 1}, {1, 1}, {0, 0}, {0, 0}}}, 1.0 / 2.0, 2.0 / 3.0, {2, 3}},
        {"thirds", {{{1, 2}, {5, 0}, {2, 1}, {7, 7}}}, 1.0 / 3.0, 87.0 / 136.0, {}},
        {"one_group_zero", {{{10, 0}, {0, 1}, {10, 0}, {10, 0}}}, 0.0, 21.0 / 22.0, {}},
        {"single_sample", {{{1, 0}, {0, 0}, {0, 0}, {0, 0}}}, 1.0, 1.0, {1, 2, 3}},
        {"uniform", {{{2, 1}, {2, 1}, {2, 1}, {2, 1}}}, 2.0 / 3.0, 2.0 / 3.0, {}},
        {"mixed", {{{97, 3}, {13, 7}, {11, 9}, {41, 1}}}, 11.0 / 20.0, 653.0 / 744.0, {}},
    };
}

struct Samples {
    std::vector<std::uint8_t> preds;
    std::vector<std::uint8_t> labels;
    std::vector<patchdebias::GroupId> groups;
};

// Samples are emitted round-robin across groups so no group is contiguous.
inline Samples expand(const MetricFixture& f) {
    Samples s;
    std::array<std::pair<int, int>, 4> left = f.groups;
    bool any = true;
    while (any) {
        any = false;
        for (std::uint8_t g = 0; g < 4; ++g) {
            auto& [c, w] = left[g];
            if (c + w == 0) continue;
            any = true;
            const std::uint8_t y = g >> 1;
            const bool correct = c > 0;
            (correct ? c : w) -= 1;
            s.labels.push_back(y);
            s.preds.push_back(correct ? y : static_cast<std::uint8_t>(1 - y));
            s.groups.emplace_back(g);
        }
    }
    return s;
}

}  // namespace fixtures
