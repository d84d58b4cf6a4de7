#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "geostyle/errors.hpp"
#include "geostyle/network.hpp"
#include "geostyle/rng.hpp"
#include "support/gradcheck.hpp"

using namespace geostyle;

namespace {

NetworkSpec toy_spec(int k = 4) {
    NetworkSpec spec;
    spec.in_channels = 3;
    spec.in_h = spec.in_w = 8;
    spec.num_classes = k;
    spec.layers = {
        LayerSpec::make_conv("c1", 2, 3, 3, 1, 1),
        LayerSpec::make_relu("r1", "c1"),
        LayerSpec::make_maxpool("p1", 2, 2),
        LayerSpec::make_linear("fc", k),
        LayerSpec::make_softmax("prob"),
    };
    return spec;
}

Tensor random_batch(const NetworkSpec& spec, int n, Rng& rng) {
    Tensor batch({n, spec.in_channels, spec.in_h, spec.in_w});
    for (std::int64_t i = 0; i < batch.numel(); ++i) {
        batch[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    return batch;
}

bool identical(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("network validation rejects malformed layer stacks") {
    NetworkSpec s = toy_spec();
    CHECK_NOTHROW(validate(s));

    NetworkSpec no_softmax = s;
    no_softmax.layers.pop_back();
    CHECK_THROWS_AS(validate(no_softmax), UsageError);

    NetworkSpec no_conv = s;
    no_conv.layers.erase(no_conv.layers.begin());  // linear now precedes any conv
    CHECK_THROWS_AS(validate(no_conv), UsageError);

    NetworkSpec wrong_k = s;
    wrong_k.num_classes = 7;  // fc still emits 4
    CHECK_THROWS_AS(validate(wrong_k), ShapeError);

    NetworkSpec dup = s;
    dup.layers[1].name = "c1";
    CHECK_THROWS_AS(validate(dup), UsageError);
}

TEST_CASE("zero-initialized network predicts the uniform distribution") {
    NetworkSpec spec = toy_spec(4);
    Weights w = build_network(spec, InitSpec::zeros(), 0);
    Rng rng(61);
    Tensor batch = random_batch(spec, 3, rng);
    auto out = forward(spec, w, batch, {}, false);
    for (int n = 0; n < 3; ++n)
        for (int j = 0; j < 4; ++j) {
            CHECK(out.probs.at2(n, j) == doctest::Approx(0.25).epsilon(1e-6));
        }
}

TEST_CASE("same seed builds bit-identical weights") {
    NetworkSpec spec = toy_spec();
    Weights a = build_network(spec, InitSpec::gaussian(0.05), 99);
    Weights b = build_network(spec, InitSpec::gaussian(0.05), 99);
    Weights c = build_network(spec, InitSpec::gaussian(0.05), 100);
    REQUIRE(a.layers.size() == b.layers.size());
    bool all_same = true, any_diff_c = false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (!a.layers[i].present()) continue;
        all_same = all_same && identical(a.layers[i].weight, b.layers[i].weight) &&
                   identical(a.layers[i].bias, b.layers[i].bias);
        any_diff_c = any_diff_c || !identical(a.layers[i].weight, c.layers[i].weight);
    }
    CHECK(all_same);
    CHECK(any_diff_c);
}

TEST_CASE("gaussian init is centered with the requested scale") {
    NetworkSpec spec;
    spec.in_channels = 3;
    spec.in_h = spec.in_w = 16;
    spec.num_classes = 4;
    spec.layers = {
        LayerSpec::make_conv("c1", 8, 3, 3, 1, 1),
        LayerSpec::make_relu("r1"),
        LayerSpec::make_maxpool("p1", 2, 2),
        LayerSpec::make_linear("fc", 20),  // 20x512 weights
        LayerSpec::make_relu("r2"),
        LayerSpec::make_linear("out", 4),
        LayerSpec::make_softmax("prob"),
    };
    const double sigma = 0.01;
    Weights w = build_network(spec, InitSpec::gaussian(sigma), 7);
    double sum = 0;
    std::int64_t n = 0;
    for (const auto& l : w.layers) {
        if (!l.present()) continue;
        for (std::int64_t i = 0; i < l.weight.numel(); ++i) sum += l.weight[i];
        n += l.weight.numel();
        for (std::int64_t i = 0; i < l.bias.numel(); ++i) CHECK(l.bias[i] == 0.f);
    }
    REQUIRE(n > 10000);
    const double mean = sum / static_cast<double>(n);
    CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("eval-mode forward is deterministic") {
    NetworkSpec spec = toy_spec();
    Weights w = build_network(spec, InitSpec::gaussian(0.1), 3);
    Rng rng(71);
    Tensor batch = random_batch(spec, 2, rng);
    auto a = forward(spec, w, batch, {"c1"}, false);
    auto b = forward(spec, w, batch, {"c1"}, false);
    CHECK(identical(a.probs, b.probs));
    CHECK(identical(a.taps.at("c1"), b.taps.at("c1")));
    for (int n = 0; n < 2; ++n) {
        double row = 0;
        for (int j = 0; j < 4; ++j) row += a.probs.at2(n, j);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("unknown tap names are rejected") {
    NetworkSpec spec = toy_spec();
    Weights w = build_network(spec, InitSpec::zeros(), 0);
    Rng rng(73);
    Tensor batch = random_batch(spec, 1, rng);
    CHECK_THROWS_AS(forward(spec, w, batch, {"nope"}, false), UsageError);
}

TEST_CASE("dropout with probability zero leaves train and eval forward identical") {
    NetworkSpec spec = toy_spec();
    spec.layers.insert(spec.layers.begin() + 3, LayerSpec::make_dropout("d0", 0.0));
    Weights w = build_network(spec, InitSpec::gaussian(0.1), 5);
    Rng rng(79), drop_rng(1);
    Tensor batch = random_batch(spec, 2, rng);
    auto train = forward(spec, w, batch, {}, true, &drop_rng);
    auto eval = forward(spec, w, batch, {}, false);
    CHECK(identical(train.probs, eval.probs));
}

TEST_CASE("dropout in eval mode is the identity even with nonzero probability") {
    NetworkSpec with = toy_spec();
    with.layers.insert(with.layers.begin() + 3, LayerSpec::make_dropout("d0", 0.5));
    NetworkSpec without = toy_spec();
    Weights w = build_network(without, InitSpec::gaussian(0.1), 5);
    Weights w_with;
    w_with.layers = w.layers;
    w_with.layers.insert(w_with.layers.begin() + 3, LayerParamsT<float>{});
    Rng rng(83);
    Tensor batch = random_batch(without, 2, rng);
    auto a = forward(with, w_with, batch, {}, false);
    auto b = forward(without, w, batch, {}, false);
    CHECK(identical(a.probs, b.probs));
}

TEST_CASE("forward equals the hand-composed stack of tensor ops") {
    NetworkSpec spec;
    spec.in_channels = 1;
    spec.in_h = spec.in_w = 6;
    spec.num_classes = 3;
    spec.layers = {
        LayerSpec::make_conv("c1", 2, 3, 3, 1, 1),
        LayerSpec::make_relu("r1"),
        LayerSpec::make_conv("c2", 3, 3, 3, 1, 0),
        LayerSpec::make_relu("r2"),
        LayerSpec::make_maxpool("p1", 2, 2),
        LayerSpec::make_linear("fc", 3),
        LayerSpec::make_softmax("prob"),
    };
    Weights w = build_network(spec, InitSpec::gaussian(0.2), 11);
    Rng rng(89);
    Tensor batch = random_batch(spec, 2, rng);

    Tensor h = conv2d(batch, w.layers[0].weight, w.layers[0].bias, 1, 1);
    h = relu(h);
    h = conv2d(h, w.layers[2].weight, w.layers[2].bias, 1, 0);
    h = relu(h);
    h = maxpool2d(h, 2, 2);
    h = h.reshaped({2, static_cast<int>(h.numel() / 2)});
    h = linear(h, w.layers[5].weight, w.layers[5].bias);
    Tensor expect = softmax(h);

    auto out = forward(spec, w, batch, {}, false);
    CHECK(identical(out.probs, expect));
}

TEST_CASE("replace_head keeps every pre-head parameter bit-exact") {
    NetworkSpec spec = make_network_spec("desk", 64, 10);
    Weights w = build_network(spec, InitSpec::gaussian(0.05), 17);
    auto [spec2, w2] = replace_head(spec, w, 12, 23);

    CHECK(spec2.num_classes == 12);
    // Two dropout layers were inserted (none present before).
    int dropouts = 0;
    for (const auto& l : spec2.layers) {
        if (l.kind == LayerKind::dropout) ++dropouts;
    }
    CHECK(dropouts == 2);
    // Dropout sits immediately before each of the last two linear layers.
    for (std::size_t i = 0; i < spec2.layers.size(); ++i) {
        if (spec2.layers[i].kind == LayerKind::linear) {
            CHECK(spec2.layers[i - 1].kind == LayerKind::dropout);
        }
    }

    // Map old layers to new by name; all but the head must be bit-identical.
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].name == "fc2") continue;
        for (std::size_t j = 0; j < spec2.layers.size(); ++j) {
            if (spec2.layers[j].name != spec.layers[i].name) continue;
            if (!w.layers[i].present()) continue;
            CHECK(identical(w.layers[i].weight, w2.layers[j].weight));
            CHECK(identical(w.layers[i].bias, w2.layers[j].bias));
        }
    }

    // The head itself was re-dimensioned and re-initialized.
    for (std::size_t j = 0; j < spec2.layers.size(); ++j) {
        if (spec2.layers[j].name == "fc2") {
            CHECK(spec2.layers[j].out_dim == 12);
            CHECK(w2.layers[j].weight.dim(0) == 12);
        }
    }

    // Probabilities still normalize after replacement.
    Rng rng(97);
    Tensor batch = random_batch(spec2, 1, rng);
    auto out = forward(spec2, w2, batch, {}, false);
    REQUIRE(out.probs.dim(1) == 12);
    double row = 0;
    for (int j = 0; j < 12; ++j) row += out.probs.at2(0, j);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-5));

    // Replacing with the same class count still re-initializes the head.
    std::size_t old_head = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].name == "fc2") old_head = i;
    }
    auto [spec3, w3] = replace_head(spec, w, 10, 31);
    bool head_changed = false;
    for (std::size_t j = 0; j < spec3.layers.size(); ++j) {
        if (spec3.layers[j].name == "fc2") {
            head_changed = !identical(w.layers[old_head].weight, w3.layers[j].weight);
        }
    }
    CHECK(head_changed);

    CHECK_THROWS_AS(replace_head(spec, w, 1, 0), UsageError);

    // Running replace_head twice does not stack extra dropout layers.
    auto [spec4, w4] = replace_head(spec2, w2, 6, 41);
    (void)w4;
    int dropouts4 = 0;
    for (const auto& l : spec4.layers) {
        if (l.kind == LayerKind::dropout) ++dropouts4;
    }
    CHECK(dropouts4 == 2);
}

TEST_CASE("the weight-free head transform mirrors replace_head exactly") {
    // Artifact loaders rebuild the fine-tuned structure via head_replaced_spec
    // alone, so the two spec paths must never drift apart.
    auto same_layer = [](const LayerSpec& a, const LayerSpec& b) {
        return a.kind == b.kind && a.name == b.name && a.out_channels == b.out_channels &&
               a.kernel_h == b.kernel_h && a.kernel_w == b.kernel_w && a.stride == b.stride &&
               a.pad == b.pad && a.window == b.window && a.out_dim == b.out_dim &&
               a.drop_prob == b.drop_prob && a.tap == b.tap;
    };
    auto check_pair = [&](const std::string& arch, int input, int k_before, int k_after) {
        CAPTURE(arch);
        CAPTURE(k_after);
        NetworkSpec base = make_network_spec(arch, input, k_before);
        Weights w = build_network(base, InitSpec::zeros(), 0);
        auto [with_weights, unused] = replace_head(base, w, k_after, 5);
        (void)unused;
        const NetworkSpec spec_only = head_replaced_spec(base, k_after);
        CHECK(spec_only.num_classes == with_weights.num_classes);
        CHECK(spec_only.in_channels == with_weights.in_channels);
        CHECK(spec_only.in_h == with_weights.in_h);
        CHECK(spec_only.in_w == with_weights.in_w);
        REQUIRE(spec_only.layers.size() == with_weights.layers.size());
        for (std::size_t i = 0; i < spec_only.layers.size(); ++i) {
            CHECK(same_layer(spec_only.layers[i], with_weights.layers[i]));
        }
    };
    check_pair("desk", 64, 10, 12);
    check_pair("desk", 16, 3, 3);  // unchanged class count still restructures
    check_pair("vggf", 224, 5, 7);

    CHECK_THROWS_AS(head_replaced_spec(make_network_spec("desk", 64, 10), 1), UsageError);
}

TEST_CASE("feature extraction is deterministic and shaped by the tap layer") {
    NetworkSpec spec = make_network_spec("desk", 64, 12);
    Weights w = build_network(spec, InitSpec::gaussian(0.05), 13);
    Tensor img({3, 64, 64});
    Rng rng(101);
    for (std::int64_t i = 0; i < img.numel(); ++i) {
        img[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    auto fa = extract_features(spec, w, img, "conv4");
    auto fb = extract_features(spec, w, img, "conv4");
    CHECK(fa == fb);
    CHECK(fa.size() == 64u * 8u * 8u);  // filters x pooled spatial extent at that depth
    auto fc = extract_features(spec, w, img, "fc1");
    CHECK(fc.size() == 256u);
    CHECK_THROWS_AS(extract_features(spec, w, img, "missing"), UsageError);
}

TEST_CASE("full-size geometry exposes a 4096-wide feature tap and 256 last-conv filters") {
    NetworkSpec spec = make_network_spec("vggf", 224, 1000);
    const Layout layout = validate(spec);
    const int fc7_layer = layout.tap_layer.at("fc7");
    CHECK(layout.out_shapes[static_cast<std::size_t>(fc7_layer)].count() == 4096);
    const int fc6_layer = layout.tap_layer.at("fc6");
    CHECK(layout.out_shapes[static_cast<std::size_t>(fc6_layer)].count() == 4096);
    const int last_conv = layout.tap_layer.at("lastconv");
    CHECK(layout.out_shapes[static_cast<std::size_t>(last_conv)].c == 256);
    CHECK(layout.out_shapes.back().c == 1000);

    // A single eval-mode pass through the full geometry produces the
    // advertised feature length.
    Weights w = build_network(spec, InitSpec::zeros(), 0);
    Tensor img = Tensor::full({3, 224, 224}, 0.5f);
    auto feats = extract_features(spec, w, img, "fc7");
    CHECK(feats.size() == 4096u);
}

TEST_CASE("weights round-trip through their file format bit-exactly") {
    NetworkSpec spec = toy_spec();
    Weights w = build_network(spec, InitSpec::gaussian(0.05), 19);
    const std::string path = "weights_roundtrip.gswt";
    save_weights(path, spec, w);
    Weights back = load_weights(path, spec);
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        if (!w.layers[i].present()) continue;
        CHECK(identical(w.layers[i].weight, back.layers[i].weight));
        CHECK(identical(w.layers[i].bias, back.layers[i].bias));
    }
    std::filesystem::remove(path);
}

TEST_CASE("truncated weight files fail cleanly") {
    NetworkSpec spec = toy_spec();
    Weights w = build_network(spec, InitSpec::gaussian(0.05), 19);
    const std::string path = "weights_trunc.gswt";
    save_weights(path, spec, w);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_weights(path, spec), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("loading weights against a mismatched network names the offending layer") {
    NetworkSpec spec = toy_spec();
    Weights w = build_network(spec, InitSpec::gaussian(0.05), 19);
    const std::string path = "weights_mismatch.gswt";
    save_weights(path, spec, w);
    NetworkSpec other = toy_spec();
    other.layers[0].out_channels = 4;  // c1 now wants 4 filters
    try {
        load_weights(path, other);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("c1") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("cross-entropy of the uniform prediction is ln k") {
    const int k = 12;
    Tensor logits({3, k});  // all zeros -> uniform softmax
    std::vector<int> labels{0, 5, 11};
    const float loss = cross_entropy_from_logits(logits, labels);
    CHECK(loss == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-5));
}

TEST_CASE("cross-entropy gradient matches finite differences") {
    Rng rng(109);
    TensorD logits({4, 6});
    gradcheck::fill_away_from_zero(logits, rng);
    std::vector<int> labels{0, 3, 5, 2};
    auto eval = [&] { return cross_entropy_from_logits(logits, labels); };
    TensorD analytic = cross_entropy_grad_from_logits(logits, labels);
    CHECK(gradcheck::max_fd_error(logits, eval, analytic) < 1e-5);
}

TEST_CASE("whole-network gradients agree with finite differences") {
    NetworkSpec spec;
    spec.in_channels = 2;
    spec.in_h = spec.in_w = 6;
    spec.num_classes = 3;
    spec.layers = {
        LayerSpec::make_conv("c1", 2, 3, 3, 1, 1),
        LayerSpec::make_relu("r1"),
        LayerSpec::make_maxpool("p1", 2, 2),
        LayerSpec::make_linear("fc1", 5),
        LayerSpec::make_relu("r2"),
        LayerSpec::make_linear("fc2", 3),
        LayerSpec::make_softmax("prob"),
    };
    Weights wf = build_network(spec, InitSpec::gaussian(0.3), 113);
    WeightsT<double> w = wf.cast<double>();
    Rng rng(127);
    TensorD batch({2, 2, 6, 6});
    gradcheck::fill_away_from_zero(batch, rng);
    std::vector<int> labels{1, 2};

    auto eval = [&] {
        auto trace = forward_trace(spec, w, batch, false);
        return cross_entropy_from_logits(trace.logits, labels);
    };
    auto trace = forward_trace(spec, w, batch, false);
    TensorD grad_logits = cross_entropy_grad_from_logits(trace.logits, labels);
    WeightsT<double> grads = backward_trace(spec, w, trace, grad_logits);

    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        if (!w.layers[i].present()) continue;
        CHECK(gradcheck::max_fd_error(w.layers[i].weight, eval, grads.layers[i].weight) < 1e-5);
        CHECK(gradcheck::max_fd_error(w.layers[i].bias, eval, grads.layers[i].bias) < 1e-5);
    }
}
