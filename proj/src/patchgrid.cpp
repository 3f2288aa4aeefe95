#include "patchdebias/patchgrid.hpp"

#include <array>

#include "patchdebias/error.hpp"

namespace patchdebias {

MaskView::MaskView(std::span<const PixelClass> data, std::size_t rows, std::size_t cols)
    : MaskView(data.data(), rows, cols, cols) {
    if (data.size() != rows * cols) {
        throw ValidationError("mask view: data size does not match rows * cols");
    }
}

MaskView::MaskView(const SegmentationMask& mask)
    : MaskView(mask.labels.data(), mask.height, mask.width, mask.width) {}

PixelView::PixelView(const MultimodalImage& image)
    : PixelView(image.data.data(), image.height, image.width, image.channels,
                image.width * image.channels) {}

std::vector<Patch> partition(const MultimodalImage& image, const SegmentationMask& mask,
                             const PatchGridSpec& spec) {
    if (image.height != mask.height || image.width != mask.width) {
        throw ValidationError("partition: image and mask sizes differ");
    }
    if (spec.patch_height < 1 || spec.patch_width < 1) {
        throw ValidationError("partition: patch dimensions must be >= 1");
    }
    if (spec.patch_height > image.height || spec.patch_width > image.width) {
        throw ValidationError("partition: patch larger than image");
    }
    const std::size_t rows = image.height / spec.patch_height;
    const std::size_t cols = image.width / spec.patch_width;
    const std::size_t row_stride = image.width * image.channels;

    std::vector<Patch> patches;
    patches.reserve(rows * cols);
    for (std::size_t gr = 0; gr < rows; ++gr) {
        for (std::size_t gc = 0; gc < cols; ++gc) {
            Patch p;
            p.image_id = image.image_id;
            p.grid_row = gr;
            p.grid_col = gc;
            p.top = gr * spec.patch_height;
            p.left = gc * spec.patch_width;
            p.pixels = PixelView(image.data.data() + p.top * row_stride + p.left * image.channels,
                                 spec.patch_height, spec.patch_width, image.channels, row_stride);
            p.mask = MaskView(mask.labels.data() + p.top * mask.width + p.left, spec.patch_height,
                              spec.patch_width, mask.width);
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

std::uint8_t binary_label(const MaskView& mask, PixelClass target) {
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        for (std::size_t c = 0; c < mask.cols(); ++c) {
            if (mask(r, c) == target) {
                return 1;
            }
        }
    }
    return 0;
}

std::vector<std::uint8_t> multilabel_vector(const MaskView& mask,
                                            std::span<const PixelClass> classes) {
    if (classes.empty()) {
        throw ValidationError("multilabel_vector: class list is empty");
    }
    std::array<bool, 256> present{};
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        for (std::size_t c = 0; c < mask.cols(); ++c) {
            present[static_cast<std::uint8_t>(mask(r, c))] = true;
        }
    }
    std::vector<std::uint8_t> out;
    out.reserve(classes.size());
    for (PixelClass cls : classes) {
        out.push_back(present[static_cast<std::uint8_t>(cls)] ? 1 : 0);
    }
    return out;
}

}  // namespace patchdebias
