#include "patchdebias/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "patchdebias/error.hpp"
#include "patchdebias/random.hpp"

namespace patchdebias {

namespace {

struct Ellipse {
    double cy = 0.0;
    double cx = 0.0;
    double semi_a = 0.0;  // along the rotated x axis
    double semi_b = 0.0;
    double angle = 0.0;
};

// Half-extents of the axis-aligned bounding box of a rotated ellipse.
std::pair<double, double> half_extents(double a, double b, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {std::sqrt(a * a * s * s + b * b * c * c), std::sqrt(a * a * c * c + b * b * s * s)};
}

// Calls fn(flat_index) for every pixel whose centre lies inside the ellipse
// grown by `grow` pixels on both semi-axes and scaled by `scale`.
template <typename Fn>
void rasterize(const Ellipse& e, double scale, double grow, std::size_t height, std::size_t width,
               Fn&& fn) {
    const double a = e.semi_a * scale + grow;
    const double b = e.semi_b * scale + grow;
    if (a <= 0.0 || b <= 0.0) {
        return;
    }
    const auto [ey, ex] = half_extents(a, b, e.angle);
    const auto clamp_index = [](double v, std::size_t n) {
        return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n)));
    };
    const std::size_t r0 = clamp_index(std::floor(e.cy - ey - 1.0), height);
    const std::size_t r1 = clamp_index(std::ceil(e.cy + ey + 1.0), height);
    const std::size_t c0 = clamp_index(std::floor(e.cx - ex - 1.0), width);
    const std::size_t c1 = clamp_index(std::ceil(e.cx + ex + 1.0), width);
    const double cs = std::cos(e.angle);
    const double sn = std::sin(e.angle);
    const double inv_a2 = 1.0 / (a * a);
    const double inv_b2 = 1.0 / (b * b);
    for (std::size_t r = r0; r < r1; ++r) {
        const double dy = static_cast<double>(r) + 0.5 - e.cy;
        for (std::size_t c = c0; c < c1; ++c) {
            const double dx = static_cast<double>(c) + 0.5 - e.cx;
            const double u = dx * cs + dy * sn;
            const double v = -dx * sn + dy * cs;
            if (u * u * inv_a2 + v * v * inv_b2 <= 1.0) {
                fn(r * width + c);
            }
        }
    }
}

Ellipse random_ellipse(Rng& rng, double area, std::size_t height, std::size_t width) {
    Ellipse e;
    const double aspect = rng.uniform(0.55, 1.0);
    e.semi_a = std::sqrt(area / (std::numbers::pi * aspect));
    e.semi_b = aspect * e.semi_a;
    e.angle = rng.uniform(0.0, std::numbers::pi);
    const auto [ey, ex] = half_extents(e.semi_a, e.semi_b, e.angle);
    const double h = static_cast<double>(height);
    const double w = static_cast<double>(width);
    e.cy = (2.0 * ey < h) ? rng.uniform(ey, h - ey) : 0.5 * h;
    e.cx = (2.0 * ex < w) ? rng.uniform(ex, w - ex) : 0.5 * w;
    return e;
}

double truncated_noise(Rng& rng, double sigma) {
    if (sigma <= 0.0) {
        return 0.0;
    }
    return std::clamp(rng.normal() * sigma, -3.0 * sigma, 3.0 * sigma);
}

bool in_unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

}  // namespace

const char* to_string(PixelClass c) {
    switch (c) {
        case PixelClass::Background: return "background";
        case PixelClass::Healthy: return "healthy";
        case PixelClass::Tumor: return "tumor";
    }
    return "unknown";
}

void SceneSpec::validate() const {
    if (height < 1 || width < 1) {
        throw ValidationError("scene: height and width must be >= 1");
    }
    if (channels < 1) {
        throw ValidationError("scene: channels must be >= 1");
    }
    if (!in_unit(tumor_coverage)) {
        throw ValidationError("scene: tumor_coverage must be in [0,1]");
    }
    if (!in_unit(healthy_coverage)) {
        throw ValidationError("scene: healthy_coverage must be in [0,1]");
    }
    if (tumor_coverage + healthy_coverage > 1.0 + 1e-12) {
        throw ValidationError("scene: tumor_coverage + healthy_coverage exceeds 1");
    }
    if (!std::isfinite(background_intensity_max) || background_intensity_max < 0.0 ||
        background_intensity_max >= 0.5) {
        throw ValidationError("scene: background_intensity_max must be in [0,0.5)");
    }
    if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) {
        throw ValidationError("scene: noise_sigma must be finite and >= 0");
    }
    if (tumor_profile.empty() || healthy_profile.empty()) {
        throw ValidationError("scene: intensity profiles must be non-empty");
    }
    for (double v : tumor_profile) {
        if (!in_unit(v)) throw ValidationError("scene: tumor_profile values must be in [0,1]");
    }
    for (double v : healthy_profile) {
        if (!in_unit(v)) throw ValidationError("scene: healthy_profile values must be in [0,1]");
    }
    if (!(satellite_min_area > 0.0 && satellite_min_area <= satellite_max_area &&
          std::isfinite(satellite_max_area))) {
        throw ValidationError("scene: need 0 < satellite_min_area <= satellite_max_area");
    }
    if (!std::isfinite(blob_color_jitter) || blob_color_jitter < 0.0 || blob_color_jitter >= 1.0) {
        throw ValidationError("scene: blob_color_jitter must be in [0,1)");
    }
    if (!std::isfinite(blob_brightness_jitter) || blob_brightness_jitter < 0.0 ||
        blob_brightness_jitter >= 1.0) {
        throw ValidationError("scene: blob_brightness_jitter must be in [0,1)");
    }
}

double SceneSpec::tissue_floor() const {
    const double lo = 2.0 * background_intensity_max;
    return lo + 0.01 * (1.0 - lo);
}

Scene generate_scene_detailed(const SceneSpec& spec, std::string image_id) {
    spec.validate();
    const std::size_t H = spec.height;
    const std::size_t W = spec.width;
    const std::size_t N = H * W;
    const double area = static_cast<double>(N);

    // Region 0 is background; tumor blobs then healthy blobs get 1.. ids.
    std::vector<std::uint16_t> region(N, 0);
    std::vector<PixelClass> cls(N, PixelClass::Background);
    std::vector<double> region_gain{1.0};

    Rng geometry({spec.seed, 0x67656f6dULL});
    Rng shading({spec.seed, 0x73686164ULL});

    Scene scene;

    // Tumor blobs: nominal ellipses, then a common scale found by bisection so
    // the union hits the requested coverage.
    std::vector<Ellipse> tumors;
    std::vector<Ellipse> satellites;
    if (spec.tumor_blob_count > 0 && spec.tumor_coverage > 0.0) {
        for (std::size_t k = 0; k < spec.tumor_satellite_count; ++k) {
            satellites.push_back(random_ellipse(
                geometry, geometry.uniform(spec.satellite_min_area, spec.satellite_max_area), H, W));
        }
        std::vector<double> weights(spec.tumor_blob_count);
        for (double& w : weights) {
            w = geometry.uniform(0.5, 1.5);
        }
        double wsum = 0.0;
        for (double w : weights) wsum += w;
        for (double w : weights) {
            tumors.push_back(random_ellipse(geometry, spec.tumor_coverage * area * w / wsum, H, W));
        }

        std::vector<std::uint8_t> scratch(N);
        const auto coverage_at = [&](double scale) {
            std::fill(scratch.begin(), scratch.end(), 0);
            std::size_t count = 0;
            const auto mark = [&](std::size_t i) {
                count += scratch[i] == 0;
                scratch[i] = 1;
            };
            for (const auto& e : tumors) rasterize(e, scale, 0.0, H, W, mark);
            for (const auto& e : satellites) rasterize(e, 1.0, 0.0, H, W, mark);
            return static_cast<double>(count) / area;
        };

        double min_axis = tumors.front().semi_b;
        for (const auto& e : tumors) min_axis = std::min(min_axis, e.semi_b);
        const double diag = std::hypot(static_cast<double>(H), static_cast<double>(W));
        double lo = 0.0;
        double hi = 2.0 * diag / std::max(min_axis, 1e-9) + 1.0;
        double best_scale = hi;
        double best_err = std::abs(coverage_at(hi) - spec.tumor_coverage);
        for (int iter = 0; iter < 60 && best_err > 0.002 * spec.tumor_coverage; ++iter) {
            const double mid = 0.5 * (lo + hi);
            const double cov = coverage_at(mid);
            const double err = std::abs(cov - spec.tumor_coverage);
            if (err < best_err) {
                best_err = err;
                best_scale = mid;
            }
            if (cov < spec.tumor_coverage) {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        for (auto& e : tumors) {
            e.semi_a *= best_scale;
            e.semi_b *= best_scale;
            const auto id = static_cast<std::uint16_t>(region_gain.size());
            region_gain.push_back(
                geometry.uniform(1.0 - spec.blob_brightness_jitter, 1.0 + spec.blob_brightness_jitter));
            BlobPixels blob;
            rasterize(e, 1.0, 0.0, H, W, [&](std::size_t i) {
                blob.pixels.push_back(static_cast<std::uint32_t>(i));
                if (cls[i] != PixelClass::Tumor) {
                    cls[i] = PixelClass::Tumor;
                    region[i] = id;
                }
            });
            scene.tumor_blobs.push_back(std::move(blob));
        }
        for (const auto& e : satellites) {
            const auto id = static_cast<std::uint16_t>(region_gain.size());
            region_gain.push_back(
                geometry.uniform(1.0 - spec.blob_brightness_jitter, 1.0 + spec.blob_brightness_jitter));
            BlobPixels blob;
            rasterize(e, 1.0, 0.0, H, W, [&](std::size_t i) {
                blob.pixels.push_back(static_cast<std::uint32_t>(i));
                if (cls[i] != PixelClass::Tumor) {
                    cls[i] = PixelClass::Tumor;
                    region[i] = id;
                }
            });
            scene.tumor_blobs.push_back(std::move(blob));
        }
    }

    if (spec.healthy_coverage > 0.0) {
        std::size_t healthy = 0;
        if (spec.rim_thickness > 0) {
            for (std::size_t t = 0; t < tumors.size(); ++t) {
                const auto id = static_cast<std::uint16_t>(t + 1);
                rasterize(tumors[t], 1.0, static_cast<double>(spec.rim_thickness), H, W,
                          [&](std::size_t i) {
                              if (cls[i] == PixelClass::Background) {
                                  cls[i] = PixelClass::Healthy;
                                  region[i] = id;
                                  ++healthy;
                              }
                          });
            }
        }
        const double budget = spec.healthy_coverage * area - static_cast<double>(healthy);
        if (budget > 0.0 && spec.healthy_blob_count > 0) {
            const double each = budget / static_cast<double>(spec.healthy_blob_count);
            for (std::size_t k = 0; k < spec.healthy_blob_count; ++k) {
                const Ellipse e = random_ellipse(geometry, each, H, W);
                const auto id = static_cast<std::uint16_t>(region_gain.size());
                region_gain.push_back(geometry.uniform(1.0 - spec.blob_brightness_jitter,
                                                       1.0 + spec.blob_brightness_jitter));
                rasterize(e, 1.0, 0.0, H, W, [&](std::size_t i) {
                    if (cls[i] == PixelClass::Background) {
                        cls[i] = PixelClass::Healthy;
                        region[i] = id;
                    }
                });
            }
        }
    }

    MultimodalImage& image = scene.image;
    image.height = H;
    image.width = W;
    image.channels = spec.channels;
    image.data.assign(N * spec.channels, 0.0f);
    image.image_id = image_id;

    // Per-region, per-channel tint on top of the brightness gain.
    Rng tint_rng({spec.seed, 0x74696e74ULL});
    std::vector<double> tint(region_gain.size() * spec.channels, 1.0);
    if (spec.blob_color_jitter > 0.0) {
        for (std::size_t k = spec.channels; k < tint.size(); ++k) {
            tint[k] = tint_rng.uniform(1.0 - spec.blob_color_jitter, 1.0 + spec.blob_color_jitter);
        }
    }

    const double floor = spec.tissue_floor();
    for (std::size_t i = 0; i < N; ++i) {
        float* px = image.data.data() + i * spec.channels;
        if (cls[i] == PixelClass::Background) {
            for (std::size_t ch = 0; ch < spec.channels; ++ch) {
                const double v = shading.uniform(0.0, spec.background_intensity_max) +
                                 truncated_noise(shading, spec.noise_sigma);
                px[ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
            continue;
        }
        const auto& profile =
            cls[i] == PixelClass::Tumor ? spec.tumor_profile : spec.healthy_profile;
        const double gain = region_gain[region[i]];
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
            const double v = profile[ch % profile.size()] * gain * tint[region[i] * spec.channels + ch] +
                             truncated_noise(shading, spec.noise_sigma);
            px[ch] = static_cast<float>(std::clamp(v, floor, 1.0));
        }
    }

    scene.mask.height = H;
    scene.mask.width = W;
    scene.mask.labels = std::move(cls);
    scene.mask.image_id = std::move(image_id);
    return scene;
}

GeneratedPair generate_scene(const SceneSpec& spec, std::string image_id) {
    Scene scene = generate_scene_detailed(spec, std::move(image_id));
    return {std::move(scene.image), std::move(scene.mask)};
}

const char* to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Validation: return "val";
        case Split::Test: return "test";
    }
    return "unknown";
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Validation;
    if (name == "test") return Split::Test;
    throw ValidationError("unknown split '" + name + "'");
}

std::size_t DatasetManifest::count(Split split) const {
    return static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [split](const ManifestEntry& e) { return e.split == split; }));
}

std::array<std::size_t, 3> apportion_splits(std::size_t n, const SplitFractions& fractions) {
    const std::array<double, 3> f{fractions.train, fractions.validation, fractions.test};
    double sum = 0.0;
    for (double v : f) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ValidationError("split fractions must be finite and >= 0");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("split fractions must sum to 1");
    }
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double quota = f[k] * static_cast<double>(n);
        counts[k] = static_cast<std::size_t>(std::floor(quota));
        remainder[k] = quota - std::floor(quota);
        assigned += counts[k];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < n; k = (k + 1) % 3) {
        ++counts[order[k]];
        ++assigned;
    }
    return counts;
}

DatasetManifest generate_corpus(const std::vector<SceneSpec>& specs,
                                const SplitFractions& fractions) {
    if (specs.empty()) {
        throw ValidationError("corpus: spec list is empty");
    }
    for (const auto& s : specs) {
        s.validate();
    }
    const auto counts = apportion_splits(specs.size(), fractions);
    DatasetManifest manifest;
    manifest.fractions = fractions;
    std::size_t index = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t j = 0; j < counts[k]; ++j, ++index) {
            ManifestEntry entry;
            entry.image_id = image_id_for(index);
            entry.spec = specs[index];
            entry.split = static_cast<Split>(k);
            manifest.entries.push_back(std::move(entry));
        }
    }
    return manifest;
}

std::string image_id_for(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05zu", index);
    return buf;
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
    j = nlohmann::json{{"seed", s.seed},
                       {"height", s.height},
                       {"width", s.width},
                       {"channels", s.channels},
                       {"tumor_blob_count", s.tumor_blob_count},
                       {"tumor_coverage", s.tumor_coverage},
                       {"healthy_coverage", s.healthy_coverage},
                       {"background_intensity_max", s.background_intensity_max},
                       {"noise_sigma", s.noise_sigma},
                       {"rim_thickness", s.rim_thickness},
                       {"healthy_blob_count", s.healthy_blob_count},
                       {"tumor_satellite_count", s.tumor_satellite_count},
                       {"satellite_min_area", s.satellite_min_area},
                       {"satellite_max_area", s.satellite_max_area},
                       {"tumor_profile", s.tumor_profile},
                       {"healthy_profile", s.healthy_profile},
                       {"blob_brightness_jitter", s.blob_brightness_jitter},
                       {"blob_color_jitter", s.blob_color_jitter}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
    SceneSpec d;
    s.seed = j.value("seed", d.seed);
    s.height = j.value("height", d.height);
    s.width = j.value("width", d.width);
    s.channels = j.value("channels", d.channels);
    s.tumor_blob_count = j.value("tumor_blob_count", d.tumor_blob_count);
    s.tumor_coverage = j.value("tumor_coverage", d.tumor_coverage);
    s.healthy_coverage = j.value("healthy_coverage", d.healthy_coverage);
    s.background_intensity_max = j.value("background_intensity_max", d.background_intensity_max);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.rim_thickness = j.value("rim_thickness", d.rim_thickness);
    s.healthy_blob_count = j.value("healthy_blob_count", d.healthy_blob_count);
    s.tumor_satellite_count = j.value("tumor_satellite_count", d.tumor_satellite_count);
    s.satellite_min_area = j.value("satellite_min_area", d.satellite_min_area);
    s.satellite_max_area = j.value("satellite_max_area", d.satellite_max_area);
    s.tumor_profile = j.value("tumor_profile", d.tumor_profile);
    s.healthy_profile = j.value("healthy_profile", d.healthy_profile);
    s.blob_brightness_jitter = j.value("blob_brightness_jitter", d.blob_brightness_jitter);
    s.blob_color_jitter = j.value("blob_color_jitter", d.blob_color_jitter);
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = nlohmann::json::object();
    j["fractions"] = {{"train", m.fractions.train},
                      {"val", m.fractions.validation},
                      {"test", m.fractions.test}};
    auto& entries = j["images"] = nlohmann::json::array();
    for (const auto& e : m.entries) {
        entries.push_back({{"image_id", e.image_id},
                           {"split", to_string(e.split)},
                           {"seed", e.spec.seed},
                           {"spec", e.spec},
                           {"image_path", e.image_path},
                           {"mask_path", e.mask_path}});
    }
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
    const auto& f = j.at("fractions");
    m.fractions.train = f.at("train").get<double>();
    m.fractions.validation = f.at("val").get<double>();
    m.fractions.test = f.at("test").get<double>();
    m.entries.clear();
    for (const auto& e : j.at("images")) {
        ManifestEntry entry;
        entry.image_id = e.at("image_id").get<std::string>();
        entry.split = split_from_string(e.at("split").get<std::string>());
        entry.spec = e.at("spec").get<SceneSpec>();
        entry.image_path = e.value("image_path", std::string{});
        entry.mask_path = e.value("mask_path", std::string{});
        m.entries.push_back(std::move(entry));
    }
}

}  // namespace patchdebias
