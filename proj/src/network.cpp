#include "geostyle/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "geostyle/errors.hpp"
#include "geostyle/tensor_io.hpp"

namespace geostyle {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::linear: return "linear";
        case LayerKind::dropout: return "dropout";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

LayerSpec LayerSpec::make_conv(std::string name, int out_channels, int kh, int kw, int stride,
                               int pad) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.name = std::move(name);
    l.out_channels = out_channels;
    l.kernel_h = kh;
    l.kernel_w = kw;
    l.stride = stride;
    l.pad = pad;
    return l;
}

LayerSpec LayerSpec::make_relu(std::string name, std::string tap) {
    LayerSpec l;
    l.kind = LayerKind::relu;
    l.name = std::move(name);
    l.tap = std::move(tap);
    return l;
}

LayerSpec LayerSpec::make_maxpool(std::string name, int window, int stride) {
    LayerSpec l;
    l.kind = LayerKind::maxpool;
    l.name = std::move(name);
    l.window = window;
    l.stride = stride;
    return l;
}

LayerSpec LayerSpec::make_linear(std::string name, int out_dim) {
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.name = std::move(name);
    l.out_dim = out_dim;
    return l;
}

LayerSpec LayerSpec::make_dropout(std::string name, double p) {
    LayerSpec l;
    l.kind = LayerKind::dropout;
    l.name = std::move(name);
    l.drop_prob = p;
    return l;
}

LayerSpec LayerSpec::make_softmax(std::string name) {
    LayerSpec l;
    l.kind = LayerKind::softmax;
    l.name = std::move(name);
    return l;
}

Layout validate(const NetworkSpec& spec) {
    if (spec.layers.empty()) throw UsageError("network has no layers");
    if (spec.in_channels < 1 || spec.in_h < 1 || spec.in_w < 1) {
        throw UsageError("network input extents must be positive");
    }
    if (spec.num_classes < 2) throw UsageError("network needs at least 2 classes");

    Layout layout;
    layout.out_shapes.resize(spec.layers.size());
    layout.flatten_before.assign(spec.layers.size(), false);

    LayerShape cur{spec.in_channels, spec.in_h, spec.in_w, false};
    bool seen_conv = false;
    bool seen_linear = false;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        const std::string where = "layer " + std::to_string(i) + " ('" + layer.name + "')";
        if (layer.name.empty()) throw UsageError("layer " + std::to_string(i) + " has no name");
        if (!layout.name_to_index.emplace(layer.name, static_cast<int>(i)).second) {
            throw UsageError("duplicate layer name '" + layer.name + "'");
        }
        switch (layer.kind) {
            case LayerKind::conv: {
                if (cur.flat) throw ShapeError(where + ": conv after flatten");
                if (layer.out_channels < 1 || layer.kernel_h < 1 || layer.kernel_w < 1 ||
                    layer.stride < 1 || layer.pad < 0) {
                    throw UsageError(where + ": bad conv geometry");
                }
                const int ph = cur.h + 2 * layer.pad, pw = cur.w + 2 * layer.pad;
                if (layer.kernel_h > ph || layer.kernel_w > pw) {
                    throw ShapeError(where + ": kernel exceeds padded input");
                }
                cur = {layer.out_channels, (ph - layer.kernel_h) / layer.stride + 1,
                       (pw - layer.kernel_w) / layer.stride + 1, false};
                seen_conv = true;
                break;
            }
            case LayerKind::relu:
                break;  // shape preserved
            case LayerKind::maxpool: {
                if (cur.flat) throw ShapeError(where + ": maxpool after flatten");
                if (layer.window < 1 || layer.stride < 1) {
                    throw UsageError(where + ": bad pool geometry");
                }
                if (layer.window > cur.h || layer.window > cur.w) {
                    throw ShapeError(where + ": pool window exceeds input");
                }
                cur = {cur.c, (cur.h - layer.window) / layer.stride + 1,
                       (cur.w - layer.window) / layer.stride + 1, false};
                break;
            }
            case LayerKind::linear: {
                if (layer.out_dim < 1) throw UsageError(where + ": bad linear width");
                if (!seen_conv) {
                    throw UsageError(where + ": at least one conv layer must precede the first "
                                             "linear layer");
                }
                if (!cur.flat) layout.flatten_before[i] = true;
                cur = {layer.out_dim, 1, 1, true};
                seen_linear = true;
                break;
            }
            case LayerKind::dropout:
                if (layer.drop_prob < 0.0 || layer.drop_prob >= 1.0) {
                    throw UsageError(where + ": dropout probability must be in [0, 1)");
                }
                break;  // shape preserved
            case LayerKind::softmax:
                if (i + 1 != spec.layers.size()) {
                    throw UsageError(where + ": softmax must be the final layer");
                }
                if (!cur.flat) throw ShapeError(where + ": softmax needs a flat input");
                break;
        }
        layout.out_shapes[i] = cur;
        if (!layer.tap.empty()) {
            if (!layout.tap_layer.emplace(layer.tap, static_cast<int>(i)).second) {
                throw UsageError("duplicate tap name '" + layer.tap + "'");
            }
        }
    }
    if (spec.layers.back().kind != LayerKind::softmax) {
        throw UsageError("network must end with a softmax layer");
    }
    if (!seen_linear) throw UsageError("network needs at least one linear layer");
    if (layout.out_shapes.back().c != spec.num_classes) {
        throw ShapeError("final layer width " + std::to_string(layout.out_shapes.back().c) +
                         " does not match num_classes " + std::to_string(spec.num_classes));
    }
    return layout;
}

Weights build_network(const NetworkSpec& spec, const InitSpec& init, std::uint64_t seed) {
    const Layout layout = validate(spec);
    Weights w;
    w.layers.resize(spec.layers.size());
    Rng rng(seed);
    LayerShape cur{spec.in_channels, spec.in_h, spec.in_w, false};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (layer.kind == LayerKind::conv) {
            Tensor kernels({layer.out_channels, cur.c, layer.kernel_h, layer.kernel_w});
            if (init.kind == InitSpec::Kind::gaussian) {
                for (std::int64_t j = 0; j < kernels.numel(); ++j) {
                    kernels[j] = static_cast<float>(rng.gaussian() * init.sigma);
                }
            }
            w.layers[i].weight = std::move(kernels);
            w.layers[i].bias = Tensor({layer.out_channels});
        } else if (layer.kind == LayerKind::linear) {
            const std::int64_t in_dim = cur.count();
            Tensor weight({layer.out_dim, static_cast<int>(in_dim)});
            if (init.kind == InitSpec::Kind::gaussian) {
                for (std::int64_t j = 0; j < weight.numel(); ++j) {
                    weight[j] = static_cast<float>(rng.gaussian() * init.sigma);
                }
            }
            w.layers[i].weight = std::move(weight);
            w.layers[i].bias = Tensor({layer.out_dim});
        }
        cur = layout.out_shapes[i];
    }
    return w;
}

std::pair<NetworkSpec, Weights> replace_head(const NetworkSpec& spec, const Weights& weights,
                                             int new_k, std::uint64_t seed,
                                             const HeadOptions& opts) {
    if (new_k < 2) throw UsageError("replace_head needs at least 2 classes");
    validate(spec);
    if (weights.layers.size() != spec.layers.size()) {
        throw ShapeError("weights do not align with the network spec");
    }

    // Indices of linear layers, in order.
    std::vector<std::size_t> linear_idx;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind == LayerKind::linear) linear_idx.push_back(i);
    }
    const std::size_t head = linear_idx.back();

    // A dropout layer goes immediately before each of the last two linear
    // layers unless one already sits there.
    std::vector<std::size_t> want_dropout(linear_idx.end() - std::min<std::size_t>(
                                              2, linear_idx.size()),
                                          linear_idx.end());

    NetworkSpec out_spec;
    out_spec.in_channels = spec.in_channels;
    out_spec.in_h = spec.in_h;
    out_spec.in_w = spec.in_w;
    out_spec.num_classes = new_k;
    Weights out_w;

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const bool wants = std::find(want_dropout.begin(), want_dropout.end(), i) !=
                           want_dropout.end();
        const bool already = i > 0 && spec.layers[i - 1].kind == LayerKind::dropout;
        if (wants && !already) {
            out_spec.layers.push_back(
                LayerSpec::make_dropout("drop_" + spec.layers[i].name, opts.dropout_prob));
            out_w.layers.emplace_back();
        }
        LayerSpec layer = spec.layers[i];
        LayerParamsT<float> params = weights.layers[i];
        if (i == head) {
            layer.out_dim = new_k;
            const int in_dim = params.weight.dim(1);
            Tensor weight({new_k, in_dim});
            Rng rng(mix_seed(seed, 0x68656164));  // head-init stream
            for (std::int64_t j = 0; j < weight.numel(); ++j) {
                weight[j] = static_cast<float>(rng.gaussian() * opts.sigma);
            }
            params.weight = std::move(weight);
            params.bias = Tensor({new_k});
        }
        out_spec.layers.push_back(std::move(layer));
        out_w.layers.push_back(std::move(params));
    }
    validate(out_spec);
    return {std::move(out_spec), std::move(out_w)};
}

NetworkSpec head_replaced_spec(const NetworkSpec& spec, int new_k, const HeadOptions& opts) {
    if (new_k < 2) throw UsageError("replace_head needs at least 2 classes");
    validate(spec);

    std::vector<std::size_t> linear_idx;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind == LayerKind::linear) linear_idx.push_back(i);
    }
    const std::size_t head = linear_idx.back();
    std::vector<std::size_t> want_dropout(linear_idx.end() - std::min<std::size_t>(
                                              2, linear_idx.size()),
                                          linear_idx.end());

    NetworkSpec out_spec;
    out_spec.in_channels = spec.in_channels;
    out_spec.in_h = spec.in_h;
    out_spec.in_w = spec.in_w;
    out_spec.num_classes = new_k;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const bool wants = std::find(want_dropout.begin(), want_dropout.end(), i) !=
                           want_dropout.end();
        const bool already = i > 0 && spec.layers[i - 1].kind == LayerKind::dropout;
        if (wants && !already) {
            out_spec.layers.push_back(
                LayerSpec::make_dropout("drop_" + spec.layers[i].name, opts.dropout_prob));
        }
        LayerSpec layer = spec.layers[i];
        if (i == head) layer.out_dim = new_k;
        out_spec.layers.push_back(std::move(layer));
    }
    validate(out_spec);
    return out_spec;
}

std::vector<float> extract_features(const NetworkSpec& spec, const Weights& weights,
                                    const Tensor& image, const std::string& tap) {
    if (image.rank() != 3) {
        throw ShapeError("extract_features expects a CxHxW image, got " + image.shape_str());
    }
    Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    auto result = forward(spec, weights, batch, {tap}, /*train_mode=*/false);
    const Tensor& t = result.taps.at(tap);
    return std::vector<float>(t.data(), t.data() + t.numel());
}

void save_weights(const std::string& path, const NetworkSpec& spec, const Weights& weights) {
    validate(spec);
    if (weights.layers.size() != spec.layers.size()) {
        throw ShapeError("weights do not align with the network spec");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_magic(out, kWeightsMagic);
    write_u8(out, 1);
    std::uint32_t entries = 0;
    for (const auto& l : weights.layers) {
        if (l.present()) entries += 2;
    }
    write_u32(out, entries);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (!weights.layers[i].present()) continue;
        const bool is_conv = spec.layers[i].kind == LayerKind::conv;
        write_string(out, spec.layers[i].name + (is_conv ? ".kernel" : ".weight"));
        write_tensor(out, weights.layers[i].weight);
        write_string(out, spec.layers[i].name + ".bias");
        write_tensor(out, weights.layers[i].bias);
    }
    if (!out) throw FormatError("failed while writing '" + path + "'");
}

Weights load_weights(const std::string& path, const NetworkSpec& spec) {
    const Layout layout = validate(spec);
    (void)layout;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open weights file '" + path + "'");
    expect_magic(in, kWeightsMagic, "weights file '" + path + "'");
    const std::uint8_t version = read_u8(in, "weights version");
    if (version != 1) {
        throw FormatError("unsupported weights version " + std::to_string(version));
    }
    const std::uint32_t entries = read_u32(in, "weights entry count");
    std::map<std::string, Tensor> blob;
    for (std::uint32_t e = 0; e < entries; ++e) {
        std::string name = read_string(in, "weights entry name");
        Tensor t = read_tensor(in, "weights entry '" + name + "'");
        if (!blob.emplace(std::move(name), std::move(t)).second) {
            throw FormatError("duplicate weights entry in '" + path + "'");
        }
    }

    Weights w;
    w.layers.resize(spec.layers.size());
    const InitSpec zero = InitSpec::zeros();
    Weights expect = build_network(spec, zero, 0);  // shape template
    std::size_t used = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (!expect.layers[i].present()) continue;
        const bool is_conv = spec.layers[i].kind == LayerKind::conv;
        const std::string wname = spec.layers[i].name + (is_conv ? ".kernel" : ".weight");
        const std::string bname = spec.layers[i].name + ".bias";
        auto wit = blob.find(wname);
        auto bit = blob.find(bname);
        if (wit == blob.end() || bit == blob.end()) {
            throw FormatError("weights file '" + path + "' is missing entries for layer '" +
                              spec.layers[i].name + "'");
        }
        if (!wit->second.same_shape(expect.layers[i].weight) ||
            !bit->second.same_shape(expect.layers[i].bias)) {
            throw ShapeError("weights for layer '" + spec.layers[i].name + "' have shape " +
                             wit->second.shape_str() + "/" + bit->second.shape_str() +
                             " but the network needs " + expect.layers[i].weight.shape_str() +
                             "/" + expect.layers[i].bias.shape_str());
        }
        w.layers[i].weight = std::move(wit->second);
        w.layers[i].bias = std::move(bit->second);
        used += 2;
    }
    if (used != blob.size()) {
        throw FormatError("weights file '" + path + "' contains entries for layers the network "
                          "does not have");
    }
    return w;
}

NetworkSpec make_network_spec(const std::string& arch, int input_size, int num_classes) {
    if (num_classes < 2) throw UsageError("need at least 2 classes");
    NetworkSpec spec;
    spec.in_channels = 3;
    spec.in_h = spec.in_w = input_size;
    spec.num_classes = num_classes;
    if (arch == "desk") {
        if (input_size < 16 || input_size % 16 != 0) {
            throw UsageError("desk architecture needs an input size divisible by 16");
        }
        const int filters[4] = {8, 16, 32, 64};
        for (int b = 0; b < 4; ++b) {
            const std::string n = std::to_string(b + 1);
            spec.layers.push_back(LayerSpec::make_conv("conv" + n, filters[b], 3, 3, 1, 1));
            spec.layers.push_back(LayerSpec::make_relu("relu" + n, "conv" + n));
            spec.layers.push_back(LayerSpec::make_maxpool("pool" + n, 2, 2));
        }
        spec.layers.push_back(LayerSpec::make_linear("fc1", 256));
        spec.layers.push_back(LayerSpec::make_relu("relu_fc1", "fc1"));
        spec.layers.push_back(LayerSpec::make_linear("fc2", num_classes));
        spec.layers.push_back(LayerSpec::make_softmax("prob"));
    } else if (arch == "vggf") {
        if (input_size != 224) throw UsageError("vggf architecture expects 224x224 input");
        spec.layers.push_back(LayerSpec::make_conv("conv1", 64, 11, 11, 4, 0));
        spec.layers.push_back(LayerSpec::make_relu("relu1"));
        spec.layers.push_back(LayerSpec::make_maxpool("pool1", 3, 2));
        spec.layers.push_back(LayerSpec::make_conv("conv2", 256, 5, 5, 1, 2));
        spec.layers.push_back(LayerSpec::make_relu("relu2"));
        spec.layers.push_back(LayerSpec::make_maxpool("pool2", 3, 2));
        spec.layers.push_back(LayerSpec::make_conv("conv3", 256, 3, 3, 1, 1));
        spec.layers.push_back(LayerSpec::make_relu("relu3"));
        spec.layers.push_back(LayerSpec::make_conv("conv4", 256, 3, 3, 1, 1));
        spec.layers.push_back(LayerSpec::make_relu("relu4"));
        spec.layers.push_back(LayerSpec::make_conv("conv5", 256, 3, 3, 1, 1));
        spec.layers.push_back(LayerSpec::make_relu("relu5", "lastconv"));
        spec.layers.push_back(LayerSpec::make_maxpool("pool5", 3, 2));
        spec.layers.push_back(LayerSpec::make_linear("fc6", 4096));
        spec.layers.push_back(LayerSpec::make_relu("relu6", "fc6"));
        spec.layers.push_back(LayerSpec::make_linear("fc7", 4096));
        spec.layers.push_back(LayerSpec::make_relu("relu7", "fc7"));
        spec.layers.push_back(LayerSpec::make_linear("fc8", num_classes));
        spec.layers.push_back(LayerSpec::make_softmax("prob"));
    } else {
        throw UsageError("unknown architecture '" + arch + "' (expected desk or vggf)");
    }
    validate(spec);
    return spec;
}

}  // namespace geostyle
