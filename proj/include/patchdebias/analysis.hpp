#pragma once

// Conditional ratio histograms with per-bin prediction outcomes, and the
// (label, tissue-size) contingency summary.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdebias/composition.hpp"

namespace patchdebias {

enum class RatioKind : std::uint8_t { Tumor, TumorTissue, Tissue };

const char* to_string(RatioKind k);
RatioKind ratio_kind_from_string(const std::string& s);

std::optional<double> ratio_of(const PatchRatios& r, RatioKind kind);

constexpr std::size_t kDefaultBins = 20;

struct ConditionalHistogram {
    RatioKind kind = RatioKind::Tumor;
    std::uint8_t condition = 1;  // histogram of records with label == condition
    std::vector<double> edges;   // n_bins + 1, uniform on [0,1]
    std::vector<double> mass;    // normalized; all zero when `empty`
    std::vector<std::size_t> counts;
    std::size_t matched = 0;            // records with label == condition
    std::size_t excluded_undefined = 0; // matched but ratio undefined
    bool empty = true;

    // Filled by overlay_predictions; NaN marks an empty bin.
    std::vector<double> correct_fraction;
    std::vector<double> incorrect_fraction;

    // (record index, bin) of every binned record.
    std::vector<std::pair<std::size_t, std::size_t>> members;
    std::size_t source_size = 0;

    std::size_t bins() const { return counts.size(); }
};

// Bins are [a, b) except the last, which is closed.
std::size_t bin_index(double value, std::span<const double> edges);

ConditionalHistogram histogram(std::span<const PatchRecord> records, RatioKind kind,
                               std::uint8_t condition, std::size_t n_bins = kDefaultBins);

// preds and labels are aligned with the record list the histogram was built from.
ConditionalHistogram overlay_predictions(const ConditionalHistogram& hist,
                                         std::span<const std::uint8_t> preds,
                                         std::span<const std::uint8_t> labels);

// CSV: bin_left,bin_right,mass,count,correct_fraction,incorrect_fraction
std::string histogram_csv(const ConditionalHistogram& hist);

struct BiasReport {
    double tau = 0.0;
    std::array<std::array<std::size_t, 2>, 2> counts{};  // [y][z]
    std::array<double, GroupId::kCount> proportions{};
    double alignment = 0.0;  // P(z == y)
    std::size_t total = 0;
};

BiasReport bias_report(std::span<const PatchRecord> records, double tau);

void to_json(nlohmann::json& j, const BiasReport& r);

}  // namespace patchdebias
