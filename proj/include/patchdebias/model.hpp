#pragma once

// Small patch classifier with hand-written reverse-mode gradients:
//
//   conv 3x3/2 (k1) -> ReLU -> conv 3x3/2 (k2) -> global average pool
//   -> affine -> 2 logits
//
// Convolutions are "valid" (no padding). Parameters are float64, inputs
// float32 in H x W x C order.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdebias/patchgrid.hpp"

namespace patchdebias {

struct ClassifierSpec {
    // Network input, i.e. after average pooling of the raw patch.
    std::size_t input_height = 16;
    std::size_t input_width = 16;
    std::size_t channels = 3;
    // Average-pool factor applied to raw patches before the first conv.
    std::size_t input_pool = 1;
    std::size_t conv1_filters = 8;
    std::size_t conv2_filters = 8;
    std::uint64_t init_seed = 0;

    void validate() const;

    std::size_t conv1_height() const { return (input_height - 3) / 2 + 1; }
    std::size_t conv1_width() const { return (input_width - 3) / 2 + 1; }
    std::size_t conv2_height() const { return (conv1_height() - 3) / 2 + 1; }
    std::size_t conv2_width() const { return (conv1_width() - 3) / 2 + 1; }
    std::size_t input_size() const { return input_height * input_width * channels; }
};

// Picks the smallest integer pool factor that brings a raw patch down to at
// most max_side on both axes.
ClassifierSpec classifier_for_patch(std::size_t patch_height, std::size_t patch_width,
                                    std::size_t channels, std::size_t max_side,
                                    std::size_t conv1_filters, std::size_t conv2_filters,
                                    std::uint64_t init_seed);

void to_json(nlohmann::json& j, const ClassifierSpec& s);
void from_json(const nlohmann::json& j, ClassifierSpec& s);

struct LayerSlice {
    std::string name;
    std::size_t offset = 0;
    std::vector<std::size_t> shape;

    std::size_t size() const;
};

class ParamLayout {
public:
    ParamLayout() = default;
    explicit ParamLayout(const ClassifierSpec& spec);

    const std::vector<LayerSlice>& slices() const { return slices_; }
    const LayerSlice& slice(const std::string& name) const;
    std::size_t total() const { return total_; }

    friend bool operator==(const ParamLayout& a, const ParamLayout& b);

private:
    std::vector<LayerSlice> slices_;
    std::size_t total_ = 0;
};

void to_json(nlohmann::json& j, const ParamLayout& layout);

struct ParamVector {
    ParamLayout layout;
    std::vector<double> values;

    std::span<double> slice(const std::string& name);
    std::span<const double> slice(const std::string& name) const;
};

struct GradVector {
    std::vector<double> values;

    bool all_finite() const;
};

// Per-layer copies of theta, in layout order.
std::vector<std::vector<double>> unflatten(const ParamVector& theta);
ParamVector flatten(const ParamLayout& layout, const std::vector<std::vector<double>>& layers);

// Dense store of network inputs; sample i occupies one contiguous H*W*C run.
class InputSet {
public:
    InputSet() = default;
    InputSet(std::size_t height, std::size_t width, std::size_t channels)
        : height_(height), width_(width), channels_(channels) {}

    void push(std::span<const float> sample);
    std::size_t size() const { return sample_size() == 0 ? 0 : data_.size() / sample_size(); }
    std::size_t sample_size() const { return height_ * width_ * channels_; }
    std::span<const float> sample(std::size_t i) const {
        return {data_.data() + i * sample_size(), sample_size()};
    }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t channels() const { return channels_; }

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    std::vector<float> data_;
};

// Average-pools a patch by `pool` on both axes (trailing rows/cols that do
// not fill a window are dropped).
std::vector<float> prepare_input(const PixelView& patch, std::size_t pool);

using Logits = std::array<double, 2>;

// Mean-reduced softmax cross-entropy, computed with log-sum-exp.
double softmax_cross_entropy(const Logits& logits, std::uint8_t label);

// argmax with ties going to label 0.
std::uint8_t predict_label(const Logits& logits);

struct LossAndGrad {
    double loss = 0.0;
    GradVector grad;
};

class Classifier {
public:
    explicit Classifier(ClassifierSpec spec);

    const ClassifierSpec& spec() const { return spec_; }
    const ParamLayout& layout() const { return layout_; }

    // Fan-in scaled uniform weights, zero biases, from spec.init_seed.
    ParamVector initialize() const;
    ParamVector zeros() const;

    Logits forward_one(const ParamVector& theta, std::span<const float> input) const;

    std::vector<Logits> forward(const ParamVector& theta, const InputSet& inputs,
                                std::span<const std::size_t> batch) const;

    // labels[i] belongs to inputs.sample(batch[i]). Gradients are reduced in
    // batch order.
    LossAndGrad loss_and_grad(const ParamVector& theta, const InputSet& inputs,
                              std::span<const std::size_t> batch,
                              std::span<const std::uint8_t> labels) const;

    double loss(const ParamVector& theta, const InputSet& inputs,
                std::span<const std::size_t> batch, std::span<const std::uint8_t> labels) const;

    std::vector<std::uint8_t> predict(const ParamVector& theta, const InputSet& inputs,
                                      std::span<const std::size_t> batch) const;
    std::vector<std::uint8_t> predict_all(const ParamVector& theta, const InputSet& inputs) const;

private:
    void check_theta(const ParamVector& theta) const;
    void check_inputs(const InputSet& inputs, std::span<const std::size_t> batch) const;

    ClassifierSpec spec_;
    ParamLayout layout_;
};

// theta as a rank-1 float64 PBTENSR1 file plus a JSON sidecar holding the
// spec and layout.
void save_checkpoint(const std::filesystem::path& tensor_path, const ClassifierSpec& spec,
                     const ParamVector& theta);
std::pair<ClassifierSpec, ParamVector> load_checkpoint(const std::filesystem::path& tensor_path);

}  // namespace patchdebias
