#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "geostyle/ops.hpp"
#include "geostyle/rng.hpp"
#include "geostyle/tensor.hpp"

namespace geostyle {

enum class LayerKind { conv, relu, maxpool, linear, dropout, softmax };

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::string name;
    // conv
    int out_channels = 0;
    int kernel_h = 0, kernel_w = 0;
    int stride = 1, pad = 0;
    // maxpool (stride reused)
    int window = 0;
    // linear
    int out_dim = 0;
    // dropout
    double drop_prob = 0.0;
    // optional tap: the layer's (post-activation) output is captured under
    // this name during forward passes
    std::string tap;

    static LayerSpec make_conv(std::string name, int out_channels, int kh, int kw,
                               int stride = 1, int pad = 0);
    static LayerSpec make_relu(std::string name, std::string tap = "");
    static LayerSpec make_maxpool(std::string name, int window, int stride);
    static LayerSpec make_linear(std::string name, int out_dim);
    static LayerSpec make_dropout(std::string name, double p);
    static LayerSpec make_softmax(std::string name);
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    int in_channels = 0, in_h = 0, in_w = 0;
    int num_classes = 0;
};

// Per-layer output extents. Once a linear layer is reached the activation is
// flat: c holds the width and h == w == 1.
struct LayerShape {
    int c = 0, h = 0, w = 0;
    bool flat = false;
    std::int64_t count() const { return static_cast<std::int64_t>(c) * h * w; }
};

struct Layout {
    std::vector<LayerShape> out_shapes;
    std::vector<bool> flatten_before;          // layer consumes a flattened input
    std::map<std::string, int> tap_layer;      // tap name -> layer index
    std::map<std::string, int> name_to_index;  // layer name -> index
};

// Shape-propagates the spec and enforces its structural invariants
// (consecutive layers compatible, final softmax over num_classes, at least
// one conv before the first linear). Throws ShapeError/UsageError.
Layout validate(const NetworkSpec& spec);

template <typename T>
struct LayerParamsT {
    BasicTensor<T> weight;  // conv kernels OIHW or linear weight k x d
    BasicTensor<T> bias;
    bool present() const { return weight.rank() > 0; }

    template <typename U>
    LayerParamsT<U> cast() const {
        if (!present()) return {};
        return LayerParamsT<U>{weight.template cast<U>(), bias.template cast<U>()};
    }
};

template <typename T>
struct WeightsT {
    std::vector<LayerParamsT<T>> layers;  // aligned with NetworkSpec::layers

    template <typename U>
    WeightsT<U> cast() const {
        WeightsT<U> out;
        out.layers.reserve(layers.size());
        for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
        return out;
    }
};

using Weights = WeightsT<float>;

struct InitSpec {
    enum class Kind { gaussian, zeros };
    Kind kind = Kind::gaussian;
    double sigma = 0.05;

    static InitSpec gaussian(double sigma) { return {Kind::gaussian, sigma}; }
    static InitSpec zeros() { return {Kind::zeros, 0.0}; }
};

// Deterministic given seed: weight tensors are filled with Gaussian draws in
// layer order from a single stream; biases start at zero.
Weights build_network(const NetworkSpec& spec, const InitSpec& init, std::uint64_t seed);

template <typename T>
struct ForwardResult {
    BasicTensor<T> probs;                       // N x k
    std::map<std::string, BasicTensor<T>> taps;  // requested taps, post-activation
};

// Full forward pass. Dropout fires only in train mode and then requires an
// RNG; in eval mode dropout is the identity.
template <typename T>
ForwardResult<T> forward(const NetworkSpec& spec, const WeightsT<T>& weights,
                         const BasicTensor<T>& batch, const std::set<std::string>& taps,
                         bool train_mode, Rng* dropout_rng = nullptr);

// Forward pass that keeps everything needed for backprop.
template <typename T>
struct ForwardTrace {
    std::vector<BasicTensor<T>> layer_inputs;          // as consumed (post-flatten)
    std::vector<MaxPoolContext<T>> pool_ctx;           // populated for maxpool layers
    std::vector<std::vector<std::uint8_t>> drop_mask;  // populated for active dropout
    BasicTensor<T> logits;                             // pre-softmax
    BasicTensor<T> probs;
};

template <typename T>
ForwardTrace<T> forward_trace(const NetworkSpec& spec, const WeightsT<T>& weights,
                              const BasicTensor<T>& batch, bool train_mode,
                              Rng* dropout_rng = nullptr);

// Backprop from d(loss)/d(logits); returns parameter gradients in a
// structure aligned with Weights.
template <typename T>
WeightsT<T> backward_trace(const NetworkSpec& spec, const WeightsT<T>& weights,
                           const ForwardTrace<T>& trace, const BasicTensor<T>& grad_logits);

struct HeadOptions {
    double dropout_prob = 0.5;
    double sigma = 0.05;
};

// Re-dimensions the final linear layer to new_k with a fresh Gaussian init
// and inserts a dropout layer ahead of each of the last two linear layers
// (where none is present yet). Every other parameter is copied verbatim.
std::pair<NetworkSpec, Weights> replace_head(const NetworkSpec& spec, const Weights& weights,
                                             int new_k, std::uint64_t seed,
                                             const HeadOptions& opts = {});

// The layer list replace_head produces, computed without weights; lets
// artifact consumers rebuild the fine-tuned network's structure from the
// base architecture alone.
NetworkSpec head_replaced_spec(const NetworkSpec& spec, int new_k, const HeadOptions& opts = {});

// Eval-mode forward of a single C x H x W image; returns the flattened
// post-activation tensor at the named tap.
std::vector<float> extract_features(const NetworkSpec& spec, const Weights& weights,
                                    const Tensor& image, const std::string& tap);

// GSWT weight file: magic "GSWT", version byte, entry count, then per entry
// a name (u32 length + bytes) and the tensor in GSTN format. Entries are
// "<layer>.kernel"/"<layer>.weight" and "<layer>.bias" in layer order.
inline constexpr char kWeightsMagic[4] = {'G', 'S', 'W', 'T'};

void save_weights(const std::string& path, const NetworkSpec& spec, const Weights& weights);
Weights load_weights(const std::string& path, const NetworkSpec& spec);

// Mean cross-entropy of softmax(logits) against integer labels, computed as
// log-sum-exp for stability; gradient is (softmax - onehot)/N.
template <typename T>
T cross_entropy_from_logits(const BasicTensor<T>& logits, const std::vector<int>& labels);

template <typename T>
BasicTensor<T> cross_entropy_grad_from_logits(const BasicTensor<T>& logits,
                                              const std::vector<int>& labels);

// Named architectures: "desk" (64x64 default; 4 conv blocks of 8/16/32/64
// filters, two linear layers) and "vggf" (224x224 VGG-F geometry).
NetworkSpec make_network_spec(const std::string& arch, int input_size, int num_classes);

// ---------------------------------------------------------------------------
// Template implementations
// ---------------------------------------------------------------------------

namespace netdetail {

template <typename T>
BasicTensor<T> flatten_batch(const BasicTensor<T>& x) {
    const int n = x.dim(0);
    return x.reshaped({n, static_cast<int>(x.numel() / n)});
}

}  // namespace netdetail

template <typename T>
ForwardTrace<T> forward_trace(const NetworkSpec& spec, const WeightsT<T>& weights,
                              const BasicTensor<T>& batch, bool train_mode, Rng* dropout_rng) {
    const Layout layout = validate(spec);
    if (batch.rank() != 4 || batch.dim(1) != spec.in_channels || batch.dim(2) != spec.in_h ||
        batch.dim(3) != spec.in_w) {
        throw ShapeError("batch shape " + batch.shape_str() + " does not match network input 3x" +
                         std::to_string(spec.in_h) + "x" + std::to_string(spec.in_w) +
                         " (expected [N," + std::to_string(spec.in_channels) + "," +
                         std::to_string(spec.in_h) + "," + std::to_string(spec.in_w) + "])");
    }
    if (weights.layers.size() != spec.layers.size()) {
        throw ShapeError("weights have " + std::to_string(weights.layers.size()) +
                         " layer slots for a " + std::to_string(spec.layers.size()) +
                         "-layer network");
    }

    const std::size_t L = spec.layers.size();
    ForwardTrace<T> trace;
    trace.layer_inputs.resize(L);
    trace.pool_ctx.resize(L);
    trace.drop_mask.resize(L);

    BasicTensor<T> cur = batch;
    for (std::size_t i = 0; i < L; ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (layout.flatten_before[i] && cur.rank() == 4) cur = netdetail::flatten_batch(cur);
        trace.layer_inputs[i] = cur;
        switch (layer.kind) {
            case LayerKind::conv:
                cur = conv2d(cur, weights.layers[i].weight, weights.layers[i].bias, layer.stride,
                             layer.pad);
                break;
            case LayerKind::relu:
                cur = relu(cur);
                break;
            case LayerKind::maxpool: {
                auto r = maxpool2d_with_indices(cur, layer.window, layer.stride);
                trace.pool_ctx[i] = std::move(r.ctx);
                cur = std::move(r.output);
                break;
            }
            case LayerKind::linear:
                cur = linear(cur, weights.layers[i].weight, weights.layers[i].bias);
                break;
            case LayerKind::dropout:
                if (train_mode && layer.drop_prob > 0.0) {
                    if (!dropout_rng) {
                        throw UsageError("train-mode forward through dropout layer '" +
                                         layer.name + "' requires an RNG");
                    }
                    auto r = dropout_train(cur, layer.drop_prob, *dropout_rng);
                    trace.drop_mask[i] = std::move(r.mask);
                    cur = std::move(r.output);
                }
                // eval mode (or p == 0 shortcut handled above): identity
                break;
            case LayerKind::softmax:
                trace.logits = cur;
                cur = softmax(cur);
                break;
        }
    }
    trace.probs = std::move(cur);
    return trace;
}

template <typename T>
ForwardResult<T> forward(const NetworkSpec& spec, const WeightsT<T>& weights,
                         const BasicTensor<T>& batch, const std::set<std::string>& taps,
                         bool train_mode, Rng* dropout_rng) {
    const Layout layout = validate(spec);
    for (const auto& t : taps) {
        if (layout.tap_layer.find(t) == layout.tap_layer.end()) {
            throw UsageError("unknown tap name '" + t + "'");
        }
    }
    // Re-walk the layers, capturing tap outputs. Reuses forward_trace for the
    // heavy lifting only when no taps are needed would save little; keep one
    // code path.
    if (batch.rank() != 4) {
        throw ShapeError("forward expects an NCHW batch, got " + batch.shape_str());
    }
    ForwardResult<T> result{BasicTensor<T>(), {}};
    if (taps.empty()) {
        auto trace = forward_trace(spec, weights, batch, train_mode, dropout_rng);
        result.probs = std::move(trace.probs);
        return result;
    }
    auto trace = forward_trace(spec, weights, batch, train_mode, dropout_rng);
    // Outputs of layer i equal the input of layer i+1 except for flattening;
    // recompute the tapped layers' outputs from the stored inputs.
    for (const auto& t : taps) {
        const int idx = layout.tap_layer.at(t);
        const LayerSpec& layer = spec.layers[static_cast<std::size_t>(idx)];
        const auto& before = trace.layer_inputs[static_cast<std::size_t>(idx)];
        BasicTensor<T> out;
        switch (layer.kind) {
            case LayerKind::conv:
                out = conv2d(before, weights.layers[static_cast<std::size_t>(idx)].weight,
                             weights.layers[static_cast<std::size_t>(idx)].bias, layer.stride,
                             layer.pad);
                break;
            case LayerKind::relu:
                out = relu(before);
                break;
            case LayerKind::maxpool:
                out = maxpool2d(before, layer.window, layer.stride);
                break;
            case LayerKind::linear:
                out = linear(before, weights.layers[static_cast<std::size_t>(idx)].weight,
                             weights.layers[static_cast<std::size_t>(idx)].bias);
                break;
            case LayerKind::dropout:
                if (train_mode && layer.drop_prob > 0.0 &&
                    !trace.drop_mask[static_cast<std::size_t>(idx)].empty()) {
                    out = dropout_backward(trace.drop_mask[static_cast<std::size_t>(idx)],
                                           layer.drop_prob, before);
                    // dropout_backward applies mask-and-scale, same as forward
                } else {
                    out = before;
                }
                break;
            case LayerKind::softmax:
                out = trace.probs;
                break;
        }
        result.taps.emplace(t, std::move(out));
    }
    result.probs = std::move(trace.probs);
    return result;
}

template <typename T>
WeightsT<T> backward_trace(const NetworkSpec& spec, const WeightsT<T>& weights,
                           const ForwardTrace<T>& trace, const BasicTensor<T>& grad_logits) {
    const Layout layout = validate(spec);
    const std::size_t L = spec.layers.size();
    if (trace.layer_inputs.size() != L) {
        throw UsageError("backward_trace called with a trace from a different network");
    }
    WeightsT<T> grads;
    grads.layers.resize(L);

    // The last layer is softmax; grad_logits is already d(loss)/d(its input).
    BasicTensor<T> grad = grad_logits;
    for (std::size_t ii = L - 1; ii-- > 0;) {
        const std::size_t i = ii;  // walk layers below the softmax
        const LayerSpec& layer = spec.layers[i];
        const auto& input = trace.layer_inputs[i];
        switch (layer.kind) {
            case LayerKind::conv: {
                auto g = conv2d_backward(input, weights.layers[i].weight, layer.stride, layer.pad,
                                         grad);
                grads.layers[i].weight = std::move(g.kernels);
                grads.layers[i].bias = std::move(g.bias);
                grad = std::move(g.input);
                break;
            }
            case LayerKind::relu:
                grad = relu_backward(input, grad);
                break;
            case LayerKind::maxpool:
                grad = maxpool2d_backward(trace.pool_ctx[i], grad);
                break;
            case LayerKind::linear: {
                auto g = linear_backward(input, weights.layers[i].weight, grad);
                grads.layers[i].weight = std::move(g.weight);
                grads.layers[i].bias = std::move(g.bias);
                grad = std::move(g.input);
                break;
            }
            case LayerKind::dropout:
                if (!trace.drop_mask[i].empty()) {
                    grad = dropout_backward(trace.drop_mask[i], layer.drop_prob, grad);
                }
                break;
            case LayerKind::softmax:
                throw UsageError("softmax must be the final layer");
        }
        // Undo the implicit flatten so the gradient matches the previous
        // layer's output shape.
        if (layout.flatten_before[i] && i > 0) {
            const LayerShape& prev = layout.out_shapes[i - 1];
            grad = grad.reshaped({grad.dim(0), prev.c, prev.h, prev.w});
        }
    }
    return grads;
}

template <typename T>
T cross_entropy_from_logits(const BasicTensor<T>& logits, const std::vector<int>& labels) {
    const int N = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != N) {
        throw UsageError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(N) + " rows");
    }
    T total = 0;
    for (int n = 0; n < N; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        if (y < 0 || y >= k) throw UsageError("cross_entropy: label out of range");
        const T* row = logits.data() + static_cast<std::int64_t>(n) * k;
        T mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T lse = 0;
        for (int j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
        total += std::log(lse) + mx - row[y];
    }
    return total / static_cast<T>(N);
}

template <typename T>
BasicTensor<T> cross_entropy_grad_from_logits(const BasicTensor<T>& logits,
                                              const std::vector<int>& labels) {
    const int N = logits.dim(0);
    BasicTensor<T> g = softmax(logits);
    for (int n = 0; n < N; ++n) {
        g.at2(n, labels[static_cast<std::size_t>(n)]) -= T{1};
    }
    const T inv = T{1} / static_cast<T>(N);
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= inv;
    return g;
}

}  // namespace geostyle
