#pragma once

// Synthetic multimodal scenes with pixel-level segmentation masks.
//
// Tumors are rotated ellipses (convex by construction) surrounded by a thin
// healthy rim; extra healthy tissue comes from independent ellipses. The
// background is near-black low-amplitude noise. Nothing here injects a
// correlation between tissue size and label: it emerges from the geometry
// once the image is cut into patches and labelled.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace patchdebias {

enum class PixelClass : std::uint8_t {
    Background = 0,
    Healthy = 1,
    Tumor = 2,
};

const char* to_string(PixelClass c);

struct SceneSpec {
    std::uint64_t seed = 0;
    std::size_t height = 256;
    std::size_t width = 256;
    std::size_t channels = 3;
    std::size_t tumor_blob_count = 1;
    double tumor_coverage = 0.2;
    double healthy_coverage = 0.05;
    double background_intensity_max = 0.04;
    double noise_sigma = 0.01;

    // Healthy rim width around each tumor blob, in pixels. Only drawn when
    // healthy_coverage > 0.
    std::size_t rim_thickness = 2;
    // Number of stand-alone healthy ellipses that absorb the healthy budget
    // left after the rims.
    std::size_t healthy_blob_count = 2;
    // Small isolated tumor foci (no rim), areas in pixels drawn uniformly
    // from [satellite_min_area, satellite_max_area]. They count towards
    // tumor_coverage.
    std::size_t tumor_satellite_count = 0;
    double satellite_min_area = 8.0;
    double satellite_max_area = 48.0;
    // Per-class mean channel intensities; cycled when channels differ from
    // the profile length.
    std::vector<double> tumor_profile{0.62, 0.40, 0.55};
    std::vector<double> healthy_profile{0.55, 0.45, 0.50};
    // Per-blob multiplicative brightness jitter (uniform in [1-j, 1+j]).
    double blob_brightness_jitter = 0.0;
    // Independent per-channel multiplicative tint per blob, in [0,1).
    double blob_color_jitter = 0.0;

    // Throws ValidationError on a violated invariant.
    void validate() const;

    // Smallest intensity any tissue channel can take. Always strictly above
    // 2 * background_intensity_max.
    double tissue_floor() const;
};

void to_json(nlohmann::json& j, const SceneSpec& spec);
void from_json(const nlohmann::json& j, SceneSpec& spec);

// H x W x M float32 tensor stored row-major (channel fastest).
struct MultimodalImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> data;
    std::string image_id;

    float at(std::size_t row, std::size_t col, std::size_t channel) const {
        return data[(row * width + col) * channels + channel];
    }
    float& at(std::size_t row, std::size_t col, std::size_t channel) {
        return data[(row * width + col) * channels + channel];
    }
};

struct SegmentationMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<PixelClass> labels;
    std::string image_id;

    PixelClass at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
    PixelClass& at(std::size_t row, std::size_t col) { return labels[row * width + col]; }
};

// One rasterized tumor blob before union with the others. Exposed so the
// convexity property can be checked per blob.
struct BlobPixels {
    std::vector<std::uint32_t> pixels;  // flat row * width + col indices
};

struct Scene {
    MultimodalImage image;
    SegmentationMask mask;
    std::vector<BlobPixels> tumor_blobs;
};

Scene generate_scene_detailed(const SceneSpec& spec, std::string image_id = {});

struct GeneratedPair {
    MultimodalImage image;
    SegmentationMask mask;
};

// Pure function of spec: identical specs produce bit-identical outputs.
GeneratedPair generate_scene(const SceneSpec& spec, std::string image_id = {});

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

const char* to_string(Split split);
Split split_from_string(const std::string& name);

struct SplitFractions {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

struct ManifestEntry {
    std::string image_id;
    SceneSpec spec;
    Split split = Split::Train;
    std::string image_path;
    std::string mask_path;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    SplitFractions fractions;

    std::size_t count(Split split) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& manifest);
void from_json(const nlohmann::json& j, DatasetManifest& manifest);

// Largest-remainder apportionment of n items over the three splits. Ties in
// the fractional part go to the earlier split.
std::array<std::size_t, 3> apportion_splits(std::size_t n, const SplitFractions& fractions);

// Assigns whole images to splits (never individual patches). Images are
// taken in index order: the first quota go to train, then validation, then
// test.
DatasetManifest generate_corpus(const std::vector<SceneSpec>& specs,
                                const SplitFractions& fractions);

std::string image_id_for(std::size_t index);

}  // namespace patchdebias
