#include <doctest.h>

#include <functional>

#include "geostyle/ops.hpp"
#include "geostyle/rng.hpp"
#include "support/gradcheck.hpp"

using namespace geostyle;
using gradcheck::fill_away_from_zero;
using gradcheck::max_fd_error;
using gradcheck::separate_pool_ties;

namespace {

// Scalar objective: weighted sum of all output elements against a fixed
// random projection, so every output contributes to the gradient.
TensorD random_projection(const std::vector<int>& shape, Rng& rng) {
    TensorD p(shape);
    for (std::int64_t i = 0; i < p.numel(); ++i) p[i] = rng.uniform(-1.0, 1.0);
    return p;
}

double dot_all(const TensorD& a, const TensorD& b) {
    double s = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

constexpr double kTol = 1e-5;

}  // namespace

TEST_CASE("conv2d gradients agree with finite differences") {
    Rng rng(201);
    for (int it = 0; it < 5; ++it) {
        TensorD x({1, 2, 5, 5}), k({2, 2, 3, 3}), b({2});
        fill_away_from_zero(x, rng);
        fill_away_from_zero(k, rng);
        fill_away_from_zero(b, rng);
        const int stride = 1 + it % 2, pad = it % 2;
        TensorD proj = random_projection(conv2d(x, k, b, stride, pad).shape(), rng);
        auto eval = [&] { return dot_all(conv2d(x, k, b, stride, pad), proj); };
        auto grads = conv2d_backward(x, k, stride, pad, proj);
        CHECK(max_fd_error(x, eval, grads.input) < kTol);
        CHECK(max_fd_error(k, eval, grads.kernels) < kTol);
        CHECK(max_fd_error(b, eval, grads.bias) < kTol);
    }
}

TEST_CASE("linear gradients agree with finite differences") {
    Rng rng(203);
    for (int it = 0; it < 5; ++it) {
        TensorD x({3, 6}), w({4, 6}), b({4});
        fill_away_from_zero(x, rng);
        fill_away_from_zero(w, rng);
        fill_away_from_zero(b, rng);
        TensorD proj = random_projection({3, 4}, rng);
        auto eval = [&] { return dot_all(linear(x, w, b), proj); };
        auto grads = linear_backward(x, w, proj);
        CHECK(max_fd_error(x, eval, grads.input) < kTol);
        CHECK(max_fd_error(w, eval, grads.weight) < kTol);
        CHECK(max_fd_error(b, eval, grads.bias) < kTol);
    }
}

TEST_CASE("relu gradient agrees with finite differences away from the kink") {
    Rng rng(205);
    for (int it = 0; it < 5; ++it) {
        TensorD x({4, 7});
        fill_away_from_zero(x, rng);
        TensorD proj = random_projection({4, 7}, rng);
        auto eval = [&] { return dot_all(relu(x), proj); };
        TensorD analytic = relu_backward(x, proj);
        CHECK(max_fd_error(x, eval, analytic) < kTol);
    }
}

TEST_CASE("maxpool gradient agrees with finite differences away from ties") {
    Rng rng(207);
    for (int it = 0; it < 5; ++it) {
        TensorD x({1, 2, 6, 6});
        fill_away_from_zero(x, rng);
        separate_pool_ties(x, 2, 2);
        TensorD proj = random_projection({1, 2, 3, 3}, rng);
        auto eval = [&] { return dot_all(maxpool2d(x, 2, 2), proj); };
        auto fwd = maxpool2d_with_indices(x, 2, 2);
        TensorD analytic = maxpool2d_backward(fwd.ctx, proj);
        CHECK(max_fd_error(x, eval, analytic) < kTol);
    }
}

TEST_CASE("softmax gradient agrees with finite differences") {
    Rng rng(209);
    for (int it = 0; it < 5; ++it) {
        TensorD x({3, 5});
        fill_away_from_zero(x, rng);
        TensorD proj = random_projection({3, 5}, rng);
        auto eval = [&] { return dot_all(softmax(x), proj); };
        TensorD probs = softmax(x);
        TensorD analytic = softmax_backward(probs, proj);
        CHECK(max_fd_error(x, eval, analytic) < kTol);
    }
}

TEST_CASE("bilinear upsample gradient agrees with finite differences") {
    Rng rng(211);
    for (int it = 0; it < 5; ++it) {
        TensorD x({3, 4});
        fill_away_from_zero(x, rng);
        TensorD proj = random_projection({7, 9}, rng);
        auto eval = [&] { return dot_all(bilinear_resize(x, 7, 9), proj); };
        TensorD analytic = bilinear_resize_backward<double>(3, 4, proj);
        CHECK(max_fd_error(x, eval, analytic) < kTol);
    }
}

TEST_CASE("dropout gradient with a fixed mask agrees with finite differences") {
    Rng rng(213);
    TensorD x({5, 5});
    fill_away_from_zero(x, rng);
    Rng mask_rng(7);
    auto fwd = dropout_train(x, 0.4, mask_rng);
    // With the mask frozen, the op is linear: reapplying the mask-and-scale
    // to fresh input reproduces the forward map.
    TensorD proj = random_projection({5, 5}, rng);
    auto eval = [&] { return dot_all(dropout_backward(fwd.mask, 0.4, x), proj); };
    TensorD analytic = dropout_backward(fwd.mask, 0.4, proj);
    CHECK(max_fd_error(x, eval, analytic) < kTol);
}
