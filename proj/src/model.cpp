#include "patchdebias/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "patchdebias/error.hpp"
#include "patchdebias/random.hpp"
#include "patchdebias/tensor_io.hpp"

namespace patchdebias {

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kStride = 2;
constexpr std::size_t kClasses = 2;

// Raw views into theta for one evaluation.
struct Weights {
    const double* w1;
    const double* b1;
    const double* w2;
    const double* b2;
    const double* wf;
    const double* bf;
};

struct GradWeights {
    double* w1;
    double* b1;
    double* w2;
    double* b2;
    double* wf;
    double* bf;
};

template <typename P, typename V>
P bind(V& values, const ParamLayout& layout) {
    auto at = [&](const char* name) { return values.data() + layout.slice(name).offset; };
    return P{at("conv1.weight"), at("conv1.bias"), at("conv2.weight"),
             at("conv2.bias"),   at("fc.weight"),  at("fc.bias")};
}

// Per-sample activations.
struct Workspace {
    std::vector<double> a1;  // conv1 pre-activation, H1 x W1 x K1
    std::vector<double> h1;  // ReLU(a1)
    std::vector<double> pooled;
    std::vector<double> dh1;

    explicit Workspace(const ClassifierSpec& s)
        : a1(s.conv1_height() * s.conv1_width() * s.conv1_filters),
          h1(a1.size()),
          pooled(s.conv2_filters),
          dh1(a1.size()) {}
};

// Forward pass for one sample; fills the workspace and returns logits.
Logits run_forward(const ClassifierSpec& s, const Weights& w, std::span<const float> x,
                   Workspace& ws) {
    const std::size_t W0 = s.input_width;
    const std::size_t C = s.channels;
    const std::size_t H1 = s.conv1_height();
    const std::size_t W1 = s.conv1_width();
    const std::size_t K1 = s.conv1_filters;
    const std::size_t H2 = s.conv2_height();
    const std::size_t W2 = s.conv2_width();
    const std::size_t K2 = s.conv2_filters;
    const std::size_t row_span = kKernel * C;  // contiguous input run per kernel row

    for (std::size_t oy = 0; oy < H1; ++oy) {
        for (std::size_t ox = 0; ox < W1; ++ox) {
            double* out = ws.a1.data() + (oy * W1 + ox) * K1;
            for (std::size_t f = 0; f < K1; ++f) {
                double acc = w.b1[f];
                const double* wk = w.w1 + f * kKernel * row_span;
                for (std::size_t ky = 0; ky < kKernel; ++ky) {
                    const float* in = x.data() + ((oy * kStride + ky) * W0 + ox * kStride) * C;
                    const double* wr = wk + ky * row_span;
                    for (std::size_t t = 0; t < row_span; ++t) {
                        acc += wr[t] * static_cast<double>(in[t]);
                    }
                }
                out[f] = acc;
            }
        }
    }
    for (std::size_t i = 0; i < ws.a1.size(); ++i) {
        ws.h1[i] = ws.a1[i] > 0.0 ? ws.a1[i] : 0.0;
    }

    // conv2 followed by global average pooling. Pooling commutes with the
    // bias, so it is added once after the spatial mean.
    const std::size_t row_span2 = kKernel * K1;
    std::fill(ws.pooled.begin(), ws.pooled.end(), 0.0);
    for (std::size_t oy = 0; oy < H2; ++oy) {
        for (std::size_t ox = 0; ox < W2; ++ox) {
            for (std::size_t k = 0; k < K2; ++k) {
                double acc = 0.0;
                const double* wk = w.w2 + k * kKernel * row_span2;
                for (std::size_t ky = 0; ky < kKernel; ++ky) {
                    const double* in = ws.h1.data() + ((oy * kStride + ky) * W1 + ox * kStride) * K1;
                    const double* wr = wk + ky * row_span2;
                    for (std::size_t t = 0; t < row_span2; ++t) {
                        acc += wr[t] * in[t];
                    }
                }
                ws.pooled[k] += acc;
            }
        }
    }
    const double inv_positions = 1.0 / static_cast<double>(H2 * W2);
    for (std::size_t k = 0; k < K2; ++k) {
        ws.pooled[k] = ws.pooled[k] * inv_positions + w.b2[k];
    }

    Logits logits{};
    for (std::size_t o = 0; o < kClasses; ++o) {
        double acc = w.bf[o];
        for (std::size_t k = 0; k < K2; ++k) {
            acc += w.wf[o * K2 + k] * ws.pooled[k];
        }
        logits[o] = acc;
    }
    return logits;
}

// Accumulates d(loss)/d(theta) for one sample given d(loss)/d(logits).
void run_backward(const ClassifierSpec& s, const Weights& w, std::span<const float> x,
                  Workspace& ws, const Logits& dlogits, GradWeights& g) {
    const std::size_t W0 = s.input_width;
    const std::size_t C = s.channels;
    const std::size_t H1 = s.conv1_height();
    const std::size_t W1 = s.conv1_width();
    const std::size_t K1 = s.conv1_filters;
    const std::size_t H2 = s.conv2_height();
    const std::size_t W2 = s.conv2_width();
    const std::size_t K2 = s.conv2_filters;

    std::vector<double> dpooled(K2, 0.0);
    for (std::size_t o = 0; o < kClasses; ++o) {
        g.bf[o] += dlogits[o];
        for (std::size_t k = 0; k < K2; ++k) {
            g.wf[o * K2 + k] += dlogits[o] * ws.pooled[k];
            dpooled[k] += w.wf[o * K2 + k] * dlogits[o];
        }
    }

    // Every conv2 output position receives the same upstream gradient.
    const double inv_positions = 1.0 / static_cast<double>(H2 * W2);
    std::vector<double> da2(K2);
    for (std::size_t k = 0; k < K2; ++k) {
        g.b2[k] += dpooled[k];
        da2[k] = dpooled[k] * inv_positions;
    }

    const std::size_t row_span2 = kKernel * K1;
    std::fill(ws.dh1.begin(), ws.dh1.end(), 0.0);
    for (std::size_t oy = 0; oy < H2; ++oy) {
        for (std::size_t ox = 0; ox < W2; ++ox) {
            for (std::size_t k = 0; k < K2; ++k) {
                const double d = da2[k];
                double* gk = g.w2 + k * kKernel * row_span2;
                const double* wk = w.w2 + k * kKernel * row_span2;
                for (std::size_t ky = 0; ky < kKernel; ++ky) {
                    const std::size_t base = ((oy * kStride + ky) * W1 + ox * kStride) * K1;
                    const double* in = ws.h1.data() + base;
                    double* din = ws.dh1.data() + base;
                    double* gr = gk + ky * row_span2;
                    const double* wr = wk + ky * row_span2;
                    for (std::size_t t = 0; t < row_span2; ++t) {
                        gr[t] += d * in[t];
                        din[t] += d * wr[t];
                    }
                }
            }
        }
    }

    const std::size_t row_span = kKernel * C;
    for (std::size_t oy = 0; oy < H1; ++oy) {
        for (std::size_t ox = 0; ox < W1; ++ox) {
            const std::size_t pos = (oy * W1 + ox) * K1;
            for (std::size_t f = 0; f < K1; ++f) {
                if (ws.a1[pos + f] <= 0.0) {
                    continue;
                }
                const double d = ws.dh1[pos + f];
                g.b1[f] += d;
                double* gk = g.w1 + f * kKernel * row_span;
                for (std::size_t ky = 0; ky < kKernel; ++ky) {
                    const float* in = x.data() + ((oy * kStride + ky) * W0 + ox * kStride) * C;
                    double* gr = gk + ky * row_span;
                    for (std::size_t t = 0; t < row_span; ++t) {
                        gr[t] += d * static_cast<double>(in[t]);
                    }
                }
            }
        }
    }
}

// Returns per-class softmax probabilities and the loss for one sample.
std::pair<double, Logits> cross_entropy_terms(const Logits& z, std::uint8_t label) {
    const double m = std::max(z[0], z[1]);
    const double e0 = std::exp(z[0] - m);
    const double e1 = std::exp(z[1] - m);
    const double lse = m + std::log(e0 + e1);
    const double inv = 1.0 / (e0 + e1);
    return {lse - z[label], Logits{e0 * inv, e1 * inv}};
}

}  // namespace

void ClassifierSpec::validate() const {
    if (input_height < 7 || input_width < 7) {
        throw ValidationError("classifier: network input must be at least 7x7");
    }
    if (channels < 1 || conv1_filters < 1 || conv2_filters < 1 || input_pool < 1) {
        throw ValidationError("classifier: channels, filters and input_pool must be >= 1");
    }
}

ClassifierSpec classifier_for_patch(std::size_t patch_height, std::size_t patch_width,
                                    std::size_t channels, std::size_t max_side,
                                    std::size_t conv1_filters, std::size_t conv2_filters,
                                    std::uint64_t init_seed) {
    if (max_side < 1) {
        throw ValidationError("classifier: max input side must be >= 1");
    }
    const std::size_t longest = std::max(patch_height, patch_width);
    const std::size_t pool = (longest + max_side - 1) / max_side;
    ClassifierSpec s;
    s.input_pool = std::max<std::size_t>(pool, 1);
    s.input_height = patch_height / s.input_pool;
    s.input_width = patch_width / s.input_pool;
    s.channels = channels;
    s.conv1_filters = conv1_filters;
    s.conv2_filters = conv2_filters;
    s.init_seed = init_seed;
    s.validate();
    return s;
}

void to_json(nlohmann::json& j, const ClassifierSpec& s) {
    j = nlohmann::json{{"input_height", s.input_height}, {"input_width", s.input_width},
                       {"channels", s.channels},         {"input_pool", s.input_pool},
                       {"conv1_filters", s.conv1_filters}, {"conv2_filters", s.conv2_filters},
                       {"init_seed", s.init_seed}};
}

void from_json(const nlohmann::json& j, ClassifierSpec& s) {
    j.at("input_height").get_to(s.input_height);
    j.at("input_width").get_to(s.input_width);
    j.at("channels").get_to(s.channels);
    j.at("input_pool").get_to(s.input_pool);
    j.at("conv1_filters").get_to(s.conv1_filters);
    j.at("conv2_filters").get_to(s.conv2_filters);
    j.at("init_seed").get_to(s.init_seed);
}

std::size_t LayerSlice::size() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

ParamLayout::ParamLayout(const ClassifierSpec& spec) {
    spec.validate();
    const auto add = [this](std::string name, std::vector<std::size_t> shape) {
        LayerSlice s{std::move(name), total_, std::move(shape)};
        total_ += s.size();
        slices_.push_back(std::move(s));
    };
    add("conv1.weight", {spec.conv1_filters, kKernel, kKernel, spec.channels});
    add("conv1.bias", {spec.conv1_filters});
    add("conv2.weight", {spec.conv2_filters, kKernel, kKernel, spec.conv1_filters});
    add("conv2.bias", {spec.conv2_filters});
    add("fc.weight", {kClasses, spec.conv2_filters});
    add("fc.bias", {kClasses});
}

const LayerSlice& ParamLayout::slice(const std::string& name) const {
    for (const auto& s : slices_) {
        if (s.name == name) return s;
    }
    throw ValidationError("parameter layout has no slice '" + name + "'");
}

bool operator==(const ParamLayout& a, const ParamLayout& b) {
    if (a.total_ != b.total_ || a.slices_.size() != b.slices_.size()) return false;
    for (std::size_t i = 0; i < a.slices_.size(); ++i) {
        const auto& x = a.slices_[i];
        const auto& y = b.slices_[i];
        if (x.name != y.name || x.offset != y.offset || x.shape != y.shape) return false;
    }
    return true;
}

void to_json(nlohmann::json& j, const ParamLayout& layout) {
    j = nlohmann::json::array();
    for (const auto& s : layout.slices()) {
        j.push_back({{"name", s.name}, {"offset", s.offset}, {"shape", s.shape}});
    }
}

std::span<double> ParamVector::slice(const std::string& name) {
    const auto& s = layout.slice(name);
    return {values.data() + s.offset, s.size()};
}

std::span<const double> ParamVector::slice(const std::string& name) const {
    const auto& s = layout.slice(name);
    return {values.data() + s.offset, s.size()};
}

bool GradVector::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::vector<std::vector<double>> unflatten(const ParamVector& theta) {
    std::vector<std::vector<double>> layers;
    for (const auto& s : theta.layout.slices()) {
        const auto first = theta.values.begin() + static_cast<std::ptrdiff_t>(s.offset);
        layers.emplace_back(first, first + static_cast<std::ptrdiff_t>(s.size()));
    }
    return layers;
}

ParamVector flatten(const ParamLayout& layout, const std::vector<std::vector<double>>& layers) {
    if (layers.size() != layout.slices().size()) {
        throw ValidationError("flatten: layer count does not match layout");
    }
    ParamVector theta{layout, std::vector<double>(layout.total())};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& s = layout.slices()[i];
        if (layers[i].size() != s.size()) {
            throw ValidationError("flatten: layer '" + s.name + "' has the wrong size");
        }
        std::copy(layers[i].begin(), layers[i].end(),
                  theta.values.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
    return theta;
}

void InputSet::push(std::span<const float> sample) {
    if (sample.size() != sample_size() || sample.empty()) {
        throw ValidationError("input set: sample has the wrong size");
    }
    data_.insert(data_.end(), sample.begin(), sample.end());
}

std::vector<float> prepare_input(const PixelView& patch, std::size_t pool) {
    if (pool < 1) {
        throw ValidationError("prepare_input: pool must be >= 1");
    }
    const std::size_t H = patch.rows() / pool;
    const std::size_t W = patch.cols() / pool;
    const std::size_t C = patch.channels();
    std::vector<float> out(H * W * C);
    const double inv = 1.0 / static_cast<double>(pool * pool);
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
            for (std::size_t ch = 0; ch < C; ++ch) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < pool; ++dy) {
                    for (std::size_t dx = 0; dx < pool; ++dx) {
                        acc += patch(r * pool + dy, c * pool + dx, ch);
                    }
                }
                out[(r * W + c) * C + ch] = static_cast<float>(acc * inv);
            }
        }
    }
    return out;
}

double softmax_cross_entropy(const Logits& logits, std::uint8_t label) {
    if (label > 1) {
        throw ValidationError("cross entropy: label must be 0 or 1");
    }
    return cross_entropy_terms(logits, label).first;
}

std::uint8_t predict_label(const Logits& logits) { return logits[1] > logits[0] ? 1 : 0; }

Classifier::Classifier(ClassifierSpec spec) : spec_(spec), layout_(spec_) {}

ParamVector Classifier::zeros() const { return {layout_, std::vector<double>(layout_.total())}; }

ParamVector Classifier::initialize() const {
    ParamVector theta = zeros();
    Rng rng({spec_.init_seed, 0x696e6974ULL});
    const auto fill = [&](const char* name, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : theta.slice(name)) {
            v = rng.uniform(-bound, bound);
        }
    };
    fill("conv1.weight", kKernel * kKernel * spec_.channels);
    fill("conv2.weight", kKernel * kKernel * spec_.conv1_filters);
    fill("fc.weight", spec_.conv2_filters);
    return theta;
}

void Classifier::check_theta(const ParamVector& theta) const {
    if (theta.values.size() != layout_.total()) {
        throw ValidationError("classifier: parameter vector has " +
                              std::to_string(theta.values.size()) + " entries, expected " +
                              std::to_string(layout_.total()));
    }
}

void Classifier::check_inputs(const InputSet& inputs, std::span<const std::size_t> batch) const {
    if (inputs.height() != spec_.input_height || inputs.width() != spec_.input_width ||
        inputs.channels() != spec_.channels) {
        throw ValidationError("classifier: input shape does not match the classifier spec");
    }
    for (std::size_t idx : batch) {
        if (idx >= inputs.size()) {
            throw ValidationError("classifier: batch index out of range");
        }
    }
}

Logits Classifier::forward_one(const ParamVector& theta, std::span<const float> input) const {
    check_theta(theta);
    if (input.size() != spec_.input_size()) {
        throw ValidationError("classifier: input sample has the wrong size");
    }
    Workspace ws(spec_);
    return run_forward(spec_, bind<Weights>(theta.values, layout_), input, ws);
}

std::vector<Logits> Classifier::forward(const ParamVector& theta, const InputSet& inputs,
                                        std::span<const std::size_t> batch) const {
    check_theta(theta);
    check_inputs(inputs, batch);
    const Weights w = bind<Weights>(theta.values, layout_);
    Workspace ws(spec_);
    std::vector<Logits> out;
    out.reserve(batch.size());
    for (std::size_t idx : batch) {
        out.push_back(run_forward(spec_, w, inputs.sample(idx), ws));
    }
    return out;
}

LossAndGrad Classifier::loss_and_grad(const ParamVector& theta, const InputSet& inputs,
                                      std::span<const std::size_t> batch,
                                      std::span<const std::uint8_t> labels) const {
    check_theta(theta);
    check_inputs(inputs, batch);
    if (labels.size() != batch.size() || batch.empty()) {
        throw ValidationError("loss_and_grad: need one label per batch entry and a non-empty batch");
    }
    const Weights w = bind<Weights>(theta.values, layout_);
    LossAndGrad out;
    out.grad.values.assign(layout_.total(), 0.0);
    GradWeights g = bind<GradWeights>(out.grad.values, layout_);
    Workspace ws(spec_);
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (labels[i] > 1) {
            throw ValidationError("loss_and_grad: labels must be 0 or 1");
        }
        const auto x = inputs.sample(batch[i]);
        const Logits z = run_forward(spec_, w, x, ws);
        const auto [loss, prob] = cross_entropy_terms(z, labels[i]);
        total += loss;
        Logits dz{prob[0] * inv_batch, prob[1] * inv_batch};
        dz[labels[i]] -= inv_batch;
        run_backward(spec_, w, x, ws, dz, g);
    }
    out.loss = total * inv_batch;
    return out;
}

double Classifier::loss(const ParamVector& theta, const InputSet& inputs,
                        std::span<const std::size_t> batch,
                        std::span<const std::uint8_t> labels) const {
    if (labels.size() != batch.size() || batch.empty()) {
        throw ValidationError("loss: need one label per batch entry and a non-empty batch");
    }
    const auto logits = forward(theta, inputs, batch);
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        total += softmax_cross_entropy(logits[i], labels[i]);
    }
    return total / static_cast<double>(batch.size());
}

std::vector<std::uint8_t> Classifier::predict(const ParamVector& theta, const InputSet& inputs,
                                              std::span<const std::size_t> batch) const {
    const auto logits = forward(theta, inputs, batch);
    std::vector<std::uint8_t> out;
    out.reserve(logits.size());
    for (const auto& z : logits) {
        out.push_back(predict_label(z));
    }
    return out;
}

std::vector<std::uint8_t> Classifier::predict_all(const ParamVector& theta,
                                                  const InputSet& inputs) const {
    std::vector<std::size_t> all(inputs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return predict(theta, inputs, all);
}

void save_checkpoint(const std::filesystem::path& tensor_path, const ClassifierSpec& spec,
                     const ParamVector& theta) {
    write_tensor(tensor_path, TensorBlob::from_f64({static_cast<std::uint32_t>(theta.values.size())},
                                                   theta.values));
    nlohmann::json sidecar{{"classifier", spec}, {"layout", theta.layout}};
    auto json_path = tensor_path;
    json_path += ".json";
    std::ofstream out(json_path);
    if (!out) {
        throw IoError("cannot write " + json_path.string());
    }
    out << sidecar.dump(2) << '\n';
}

std::pair<ClassifierSpec, ParamVector> load_checkpoint(const std::filesystem::path& tensor_path) {
    auto json_path = tensor_path;
    json_path += ".json";
    std::ifstream in(json_path);
    if (!in) {
        throw IoError("cannot open " + json_path.string());
    }
    const auto sidecar = nlohmann::json::parse(in);
    const auto spec = sidecar.at("classifier").get<ClassifierSpec>();
    ParamLayout layout(spec);
    nlohmann::json expected;
    to_json(expected, layout);
    if (sidecar.at("layout") != expected) {
        throw IoError("checkpoint layout does not match its classifier spec");
    }
    ParamVector theta{layout, read_tensor(tensor_path).as_f64()};
    if (theta.values.size() != layout.total()) {
        throw IoError("checkpoint tensor length does not match layout");
    }
    return {spec, std::move(theta)};
}

}  // namespace patchdebias
