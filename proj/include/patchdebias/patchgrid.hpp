#pragma once

// Fixed-size patch partitioning and patch-level labels derived from pixel
// annotations.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "patchdebias/synthdata.hpp"

namespace patchdebias {

enum class EdgePolicy : std::uint8_t { DropPartial };

struct PatchGridSpec {
    std::size_t patch_height = 32;
    std::size_t patch_width = 32;
    EdgePolicy edge_policy = EdgePolicy::DropPartial;
};

// Read-only strided view of an h x w class map.
class MaskView {
public:
    MaskView() = default;
    MaskView(const PixelClass* base, std::size_t rows, std::size_t cols, std::size_t stride)
        : base_(base), rows_(rows), cols_(cols), stride_(stride) {}
    // Contiguous row-major storage.
    MaskView(std::span<const PixelClass> data, std::size_t rows, std::size_t cols);
    explicit MaskView(const SegmentationMask& mask);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return rows_ * cols_; }
    PixelClass operator()(std::size_t r, std::size_t c) const { return base_[r * stride_ + c]; }

private:
    const PixelClass* base_ = nullptr;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t stride_ = 0;
};

// Read-only strided view of an h x w x M region of a MultimodalImage.
class PixelView {
public:
    PixelView() = default;
    PixelView(const float* base, std::size_t rows, std::size_t cols, std::size_t channels,
              std::size_t row_stride)
        : base_(base), rows_(rows), cols_(cols), channels_(channels), row_stride_(row_stride) {}
    explicit PixelView(const MultimodalImage& image);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t channels() const { return channels_; }
    float operator()(std::size_t r, std::size_t c, std::size_t ch) const {
        return base_[r * row_stride_ + c * channels_ + ch];
    }

private:
    const float* base_ = nullptr;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t channels_ = 0;
    std::size_t row_stride_ = 0;
};

// A patch borrows from its source image and mask; keep them alive.
struct Patch {
    std::string image_id;
    std::size_t grid_row = 0;
    std::size_t grid_col = 0;
    std::size_t top = 0;
    std::size_t left = 0;
    PixelView pixels;
    MaskView mask;
};

// Row-major tiling anchored at (0,0). Partial patches on the bottom/right
// border are dropped, so the result has floor(H/h) * floor(W/w) entries.
std::vector<Patch> partition(const MultimodalImage& image, const SegmentationMask& mask,
                             const PatchGridSpec& spec);

// 1 iff at least one pixel equals target.
std::uint8_t binary_label(const MaskView& mask, PixelClass target = PixelClass::Tumor);

// Component c is 1 iff classes[c] occurs in the mask.
std::vector<std::uint8_t> multilabel_vector(const MaskView& mask,
                                            std::span<const PixelClass> classes);

}  // namespace patchdebias
