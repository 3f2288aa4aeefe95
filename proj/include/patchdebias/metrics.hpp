#pragma once

// Per-group accuracy, worst-group accuracy (WGA) and balanced-class accuracy
// (BCA). All accuracies are integer ratios divided exactly once.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "patchdebias/composition.hpp"

namespace patchdebias {

struct RatioCount {
    std::size_t correct = 0;
    std::size_t total = 0;

    bool empty() const { return total == 0; }
    double rate() const;
};

struct EvalResult {
    std::array<RatioCount, GroupId::kCount> per_group{};
    std::array<RatioCount, 2> per_class{};
    double wga = 0.0;
    double bca = 0.0;
    // Group ids with no samples; excluded from the WGA minimum.
    std::vector<std::uint8_t> empty_groups;
    // Classes with no samples; excluded from the BCA mean.
    std::vector<std::uint8_t> empty_classes;

    std::size_t worst_group() const;
};

EvalResult evaluate(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels,
                    std::span<const GroupId> groups);

void to_json(nlohmann::json& j, const EvalResult& r);

}  // namespace patchdebias
