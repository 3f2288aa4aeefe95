#include "patchdebias/composition.hpp"

#include <algorithm>
#include <cmath>

#include "patchdebias/error.hpp"

namespace patchdebias {

PatchRatios ratios_from_counts(std::size_t tumor, std::size_t tissue, std::size_t total) {
    if (tumor > tissue || tissue > total) {
        throw ValidationError("ratios: require tumor <= tissue <= total");
    }
    PatchRatios r;
    r.tumor_pixels = tumor;
    r.tissue_pixels = tissue;
    r.total_pixels = total;
    if (total == 0) {
        return r;
    }
    const auto t = static_cast<double>(total);
    r.r_tumor = static_cast<double>(tumor) / t;
    r.r_tissue = static_cast<double>(tissue) / t;
    if (tissue > 0) {
        r.r_tumor_tissue = static_cast<double>(tumor) / static_cast<double>(tissue);
    }
    return r;
}

PatchRatios compute_ratios(const MaskView& mask) {
    std::size_t tumor = 0;
    std::size_t healthy = 0;
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        for (std::size_t c = 0; c < mask.cols(); ++c) {
            const PixelClass p = mask(r, c);
            tumor += p == PixelClass::Tumor;
            healthy += p == PixelClass::Healthy;
        }
    }
    return ratios_from_counts(tumor, tumor + healthy, mask.size());
}

TissueMap infer_tissue(const PixelView& pixels, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ValidationError("infer_tissue: threshold must be in (0,1)");
    }
    TissueMap map{pixels.rows(), pixels.cols(), {}};
    map.tissue.resize(map.rows * map.cols);
    for (std::size_t r = 0; r < pixels.rows(); ++r) {
        for (std::size_t c = 0; c < pixels.cols(); ++c) {
            float brightest = 0.0f;
            for (std::size_t ch = 0; ch < pixels.channels(); ++ch) {
                brightest = std::max(brightest, pixels(r, c, ch));
            }
            map.tissue[r * map.cols + c] = static_cast<double>(brightest) > threshold;
        }
    }
    return map;
}

TissueMap tissue_from_mask(const MaskView& mask) {
    TissueMap map{mask.rows(), mask.cols(), {}};
    map.tissue.resize(map.rows * map.cols);
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        for (std::size_t c = 0; c < mask.cols(); ++c) {
            map.tissue[r * map.cols + c] = mask(r, c) != PixelClass::Background;
        }
    }
    return map;
}

PatchRatios compute_ratios(const MaskView& mask, const TissueMap& tissue) {
    if (tissue.rows != mask.rows() || tissue.cols != mask.cols()) {
        throw ValidationError("compute_ratios: tissue map and mask sizes differ");
    }
    std::size_t tumor = 0;
    std::size_t tissue_count = 0;
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        for (std::size_t c = 0; c < mask.cols(); ++c) {
            const bool is_tumor = mask(r, c) == PixelClass::Tumor;
            tumor += is_tumor;
            tissue_count += is_tumor || tissue.tissue[r * tissue.cols + c] != 0;
        }
    }
    return ratios_from_counts(tumor, tissue_count, mask.size());
}

std::uint8_t binarize_spurious(double r_tissue, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw ValidationError("binarize_spurious: tau must be in [0,1]");
    }
    return r_tissue >= tau ? 1 : 0;
}

GroupId GroupId::encode(std::uint8_t label, std::uint8_t spurious) {
    if (label > 1 || spurious > 1) {
        throw ValidationError("group: label and spurious bit must be 0 or 1");
    }
    return GroupId(static_cast<std::uint8_t>(2 * label + spurious));
}

GroupId assign_group(std::uint8_t label, std::uint8_t spurious) {
    return GroupId::encode(label, spurious);
}

std::string group_name(GroupId g) {
    std::string name = g.label() ? "tumor" : "non-tumor";
    name += g.spurious() ? "/large-tissue" : "/small-tissue";
    return name;
}

std::size_t PatchRecord::tau_index(double tau) const {
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (taus[i] == tau) {
            return i;
        }
    }
    throw ValidationError("patch record has no columns for tau=" + std::to_string(tau));
}

PatchRecord make_record(const Patch& patch, Split split, std::span<const double> taus,
                        TissueSource source, double threshold) {
    PatchRecord rec;
    rec.image_id = patch.image_id;
    rec.split = split;
    rec.grid_row = patch.grid_row;
    rec.grid_col = patch.grid_col;
    rec.label = binary_label(patch.mask, PixelClass::Tumor);
    rec.ratios = source == TissueSource::Mask
                     ? compute_ratios(patch.mask)
                     : compute_ratios(patch.mask, infer_tissue(patch.pixels, threshold));
    for (double tau : taus) {
        const std::uint8_t z = binarize_spurious(rec.ratios.r_tissue, tau);
        rec.taus.push_back(tau);
        rec.z.push_back(z);
        rec.groups.push_back(assign_group(rec.label, z));
    }
    return rec;
}

}  // namespace patchdebias
