#pragma once

// Patch composition ratios, the binarized tissue-size attribute, and the
// four (label, attribute) groups.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchdebias/patchgrid.hpp"

namespace patchdebias {

// All three ratios come from exact integer counts, divided once.
struct PatchRatios {
    std::size_t tumor_pixels = 0;
    std::size_t tissue_pixels = 0;  // tumor + healthy
    std::size_t total_pixels = 0;

    double r_tumor = 0.0;
    // Undefined (nullopt) when the patch holds no tissue.
    std::optional<double> r_tumor_tissue;
    double r_tissue = 0.0;
};

PatchRatios ratios_from_counts(std::size_t tumor, std::size_t tissue, std::size_t total);

PatchRatios compute_ratios(const MaskView& mask);

// Binary tissue map, row-major, 1 = tissue.
struct TissueMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> tissue;
};

constexpr double kDefaultTissueThreshold = 0.05;

// A pixel is tissue iff its brightest channel exceeds `threshold`.
TissueMap infer_tissue(const PixelView& pixels, double threshold = kDefaultTissueThreshold);

TissueMap tissue_from_mask(const MaskView& mask);

// Tumor counts from the mask, tissue from an inferred map. Tumor pixels
// always count as tissue so r_tumor <= r_tissue holds on this path too.
PatchRatios compute_ratios(const MaskView& mask, const TissueMap& tissue);

// z = 1 ("large tissue") iff r_tissue >= tau.
std::uint8_t binarize_spurious(double r_tissue, double tau);

// Encodes (y, z) as 2y + z.
class GroupId {
public:
    static constexpr std::size_t kCount = 4;

    constexpr GroupId() = default;
    constexpr explicit GroupId(std::uint8_t value) : value_(value) {}

    static GroupId encode(std::uint8_t label, std::uint8_t spurious);

    constexpr std::uint8_t value() const { return value_; }
    constexpr std::uint8_t label() const { return value_ >> 1; }
    constexpr std::uint8_t spurious() const { return value_ & 1u; }

    friend constexpr bool operator==(GroupId, GroupId) = default;

private:
    std::uint8_t value_ = 0;
};

GroupId assign_group(std::uint8_t label, std::uint8_t spurious);

std::string group_name(GroupId g);

// One labelled patch and where it came from.
struct PatchRecord {
    std::string image_id;
    Split split = Split::Train;
    std::size_t grid_row = 0;
    std::size_t grid_col = 0;
    std::uint8_t label = 0;
    PatchRatios ratios;
    // Parallel arrays, one entry per threshold.
    std::vector<double> taus;
    std::vector<std::uint8_t> z;
    std::vector<GroupId> groups;

    // Index of `tau` in `taus`; throws if absent.
    std::size_t tau_index(double tau) const;
};

enum class TissueSource : std::uint8_t { Mask, Inferred };

PatchRecord make_record(const Patch& patch, Split split, std::span<const double> taus,
                        TissueSource source = TissueSource::Mask,
                        double threshold = kDefaultTissueThreshold);

}  // namespace patchdebias
