#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "geostyle/errors.hpp"
#include "geostyle/rng.hpp"
#include "geostyle/tensor.hpp"

// Forward and backward tensor operations. All ops are pure functions of
// their arguments (no global state), reentrant, and deterministic: the
// per-element accumulation order is fixed, so results are bit-identical
// across runs. No broadcasting: shape mismatches throw ShapeError.

namespace geostyle {

namespace detail {

inline int ceil_div_nonneg(int a, int b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

template <typename T>
void require_rank(const BasicTensor<T>& t, int rank, const char* name) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(name) + " must have rank " + std::to_string(rank) +
                         ", got shape " + t.shape_str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation (no kernel flip), zero padding.
// input N x C x H x W, kernels O x I x KH x KW (C == I), bias rank-1 of O.
// output N x O x (H+2p-KH)/s+1 x (W+2p-KW)/s+1.
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      const BasicTensor<T>& bias, int stride, int pad) {
    detail::require_rank(input, 4, "conv2d input");
    detail::require_rank(kernels, 4, "conv2d kernels");
    detail::require_rank(bias, 1, "conv2d bias");
    if (stride < 1) throw UsageError("conv2d stride must be >= 1");
    if (pad < 0) throw UsageError("conv2d pad must be >= 0");

    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int O = kernels.dim(0), I = kernels.dim(1), KH = kernels.dim(2), KW = kernels.dim(3);
    if (C != I) {
        throw ShapeError("conv2d channel mismatch: input " + input.shape_str() +
                         " vs kernels " + kernels.shape_str());
    }
    if (bias.dim(0) != O) {
        throw ShapeError("conv2d bias length " + std::to_string(bias.dim(0)) +
                         " does not match " + std::to_string(O) + " output channels");
    }
    if (H + 2 * pad < KH || W + 2 * pad < KW) {
        throw ShapeError("conv2d kernel " + kernels.shape_str() +
                         " larger than padded input " + input.shape_str());
    }
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;

    BasicTensor<T> out({N, O, OH, OW});
    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < O; ++oc) {
            T* out_plane = out.data() + ((static_cast<std::int64_t>(n) * O + oc) * OH) * OW;
            const T b = bias[oc];
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) out_plane[i] = b;
            // Each output element accumulates contributions in (ic, kh, kw)
            // order, matching the naive reference loop bit for bit.
            for (int ic = 0; ic < C; ++ic) {
                const T* in_plane = input.data() + ((static_cast<std::int64_t>(n) * C + ic) * H) * W;
                for (int kh = 0; kh < KH; ++kh) {
                    for (int kw = 0; kw < KW; ++kw) {
                        const T wv = kernels.at4(oc, ic, kh, kw);
                        const int oh_lo = std::max(0, detail::ceil_div_nonneg(pad - kh, stride));
                        const int oh_hi = std::min(OH, detail::ceil_div_nonneg(H + pad - kh, stride));
                        const int ow_lo = std::max(0, detail::ceil_div_nonneg(pad - kw, stride));
                        const int ow_hi = std::min(OW, detail::ceil_div_nonneg(W + pad - kw, stride));
                        for (int oh = oh_lo; oh < oh_hi; ++oh) {
                            const int ih = oh * stride + kh - pad;
                            const T* in_row = in_plane + static_cast<std::int64_t>(ih) * W;
                            T* out_row = out_plane + static_cast<std::int64_t>(oh) * OW;
                            const int base = kw - pad;
                            for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                out_row[ow] += wv * in_row[ow * stride + base];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
struct Conv2dGrads {
    BasicTensor<T> input;
    BasicTensor<T> kernels;
    BasicTensor<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                               int stride, int pad, const BasicTensor<T>& grad_out) {
    detail::require_rank(grad_out, 4, "conv2d grad_out");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int O = kernels.dim(0), KH = kernels.dim(2), KW = kernels.dim(3);
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    if (grad_out.dim(0) != N || grad_out.dim(1) != O || grad_out.dim(2) != OH ||
        grad_out.dim(3) != OW) {
        throw ShapeError("conv2d grad_out shape " + grad_out.shape_str() +
                         " does not match forward output");
    }

    Conv2dGrads<T> g{BasicTensor<T>({N, C, H, W}), BasicTensor<T>({O, C, KH, KW}),
                     BasicTensor<T>({O})};

    for (int oc = 0; oc < O; ++oc) {
        T acc = 0;
        for (int n = 0; n < N; ++n) {
            const T* go = grad_out.data() + ((static_cast<std::int64_t>(n) * O + oc) * OH) * OW;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) acc += go[i];
        }
        g.bias[oc] = acc;
    }

    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < O; ++oc) {
            const T* go_plane = grad_out.data() + ((static_cast<std::int64_t>(n) * O + oc) * OH) * OW;
            for (int ic = 0; ic < C; ++ic) {
                const T* in_plane = input.data() + ((static_cast<std::int64_t>(n) * C + ic) * H) * W;
                T* gin_plane = g.input.data() + ((static_cast<std::int64_t>(n) * C + ic) * H) * W;
                for (int kh = 0; kh < KH; ++kh) {
                    for (int kw = 0; kw < KW; ++kw) {
                        const T wv = kernels.at4(oc, ic, kh, kw);
                        T wacc = 0;
                        const int oh_lo = std::max(0, detail::ceil_div_nonneg(pad - kh, stride));
                        const int oh_hi = std::min(OH, detail::ceil_div_nonneg(H + pad - kh, stride));
                        const int ow_lo = std::max(0, detail::ceil_div_nonneg(pad - kw, stride));
                        const int ow_hi = std::min(OW, detail::ceil_div_nonneg(W + pad - kw, stride));
                        for (int oh = oh_lo; oh < oh_hi; ++oh) {
                            const int ih = oh * stride + kh - pad;
                            const T* in_row = in_plane + static_cast<std::int64_t>(ih) * W;
                            T* gin_row = gin_plane + static_cast<std::int64_t>(ih) * W;
                            const T* go_row = go_plane + static_cast<std::int64_t>(oh) * OW;
                            const int base = kw - pad;
                            for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                wacc += go_row[ow] * in_row[ow * stride + base];
                                gin_row[ow * stride + base] += go_row[ow] * wv;
                            }
                        }
                        g.kernels.at4(oc, ic, kh, kw) += wacc;
                    }
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape());
    const T* src = x.data();
    T* dst = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
    return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
    if (!x.same_shape(grad_out)) {
        throw ShapeError("relu grad_out shape " + grad_out.shape_str() +
                         " does not match input " + x.shape_str());
    }
    BasicTensor<T> g(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) g[i] = x[i] > T{0} ? grad_out[i] : T{0};
    return g;
}

// ---------------------------------------------------------------------------
// maxpool2d: per-window maximum; argmax indices (flat input offsets) retained
// so the backward pass can route gradients. Ties go to the first maximum in
// scan order.
// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolContext {
    std::vector<int> input_shape;
    int window = 0;
    int stride = 0;
    std::vector<std::int64_t> argmax;  // one flat input index per output element
};

template <typename T>
struct MaxPoolResult {
    BasicTensor<T> output;
    MaxPoolContext<T> ctx;
};

template <typename T>
MaxPoolResult<T> maxpool2d_with_indices(const BasicTensor<T>& x, int window, int stride) {
    detail::require_rank(x, 4, "maxpool2d input");
    if (window < 1 || stride < 1) throw UsageError("maxpool2d window and stride must be >= 1");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < window || W < window) {
        throw ShapeError("maxpool2d window " + std::to_string(window) +
                         " larger than input " + x.shape_str());
    }
    const int OH = (H - window) / stride + 1;
    const int OW = (W - window) / stride + 1;

    MaxPoolResult<T> r{BasicTensor<T>({N, C, OH, OW}),
                       MaxPoolContext<T>{x.shape(), window, stride, {}}};
    r.ctx.argmax.resize(static_cast<std::size_t>(r.output.numel()));

    std::int64_t oi = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::int64_t plane = (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    const int h0 = oh * stride, w0 = ow * stride;
                    T best = x[plane + static_cast<std::int64_t>(h0) * W + w0];
                    std::int64_t best_idx = plane + static_cast<std::int64_t>(h0) * W + w0;
                    for (int kh = 0; kh < window; ++kh) {
                        for (int kw = 0; kw < window; ++kw) {
                            const std::int64_t idx =
                                plane + static_cast<std::int64_t>(h0 + kh) * W + (w0 + kw);
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    r.output[oi] = best;
                    r.ctx.argmax[static_cast<std::size_t>(oi)] = best_idx;
                    ++oi;
                }
            }
        }
    }
    return r;
}

template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& x, int window, int stride) {
    return maxpool2d_with_indices(x, window, stride).output;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const MaxPoolContext<T>& ctx, const BasicTensor<T>& grad_out) {
    if (ctx.argmax.empty() || ctx.input_shape.empty()) {
        throw UsageError("maxpool2d_backward called without saved forward context");
    }
    if (static_cast<std::int64_t>(ctx.argmax.size()) != grad_out.numel()) {
        throw ShapeError("maxpool2d grad_out shape " + grad_out.shape_str() +
                         " does not match saved context");
    }
    BasicTensor<T> g(ctx.input_shape);
    for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
        g[ctx.argmax[static_cast<std::size_t>(i)]] += grad_out[i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// linear: out = x . weight^T + bias, x is N x d, weight k x d, bias rank-1 k.
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
    detail::require_rank(x, 2, "linear input");
    detail::require_rank(weight, 2, "linear weight");
    detail::require_rank(bias, 1, "linear bias");
    const int N = x.dim(0), d = x.dim(1);
    const int k = weight.dim(0);
    if (weight.dim(1) != d) {
        throw ShapeError("linear dim mismatch: input " + x.shape_str() + " vs weight " +
                         weight.shape_str());
    }
    if (bias.dim(0) != k) {
        throw ShapeError("linear bias length " + std::to_string(bias.dim(0)) +
                         " does not match " + std::to_string(k) + " outputs");
    }
    BasicTensor<T> out({N, k});
    for (int n = 0; n < N; ++n) {
        const T* xr = x.data() + static_cast<std::int64_t>(n) * d;
        for (int j = 0; j < k; ++j) {
            const T* wr = weight.data() + static_cast<std::int64_t>(j) * d;
            T acc = bias[j];
            for (int i = 0; i < d; ++i) acc += xr[i] * wr[i];
            out.at2(n, j) = acc;
        }
    }
    return out;
}

template <typename T>
struct LinearGrads {
    BasicTensor<T> input;
    BasicTensor<T> weight;
    BasicTensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                               const BasicTensor<T>& grad_out) {
    const int N = x.dim(0), d = x.dim(1), k = weight.dim(0);
    if (grad_out.rank() != 2 || grad_out.dim(0) != N || grad_out.dim(1) != k) {
        throw ShapeError("linear grad_out shape " + grad_out.shape_str() +
                         " does not match forward output");
    }
    LinearGrads<T> g{BasicTensor<T>({N, d}), BasicTensor<T>({k, d}), BasicTensor<T>({k})};
    for (int n = 0; n < N; ++n) {
        const T* xr = x.data() + static_cast<std::int64_t>(n) * d;
        const T* gor = grad_out.data() + static_cast<std::int64_t>(n) * k;
        T* gxr = g.input.data() + static_cast<std::int64_t>(n) * d;
        for (int j = 0; j < k; ++j) {
            const T go = gor[j];
            const T* wr = weight.data() + static_cast<std::int64_t>(j) * d;
            T* gwr = g.weight.data() + static_cast<std::int64_t>(j) * d;
            for (int i = 0; i < d; ++i) {
                gxr[i] += go * wr[i];
                gwr[i] += go * xr[i];
            }
            g.bias[j] += go;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// softmax over rows of an N x k tensor, with max subtraction for stability.
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
    detail::require_rank(logits, 2, "softmax input");
    const int N = logits.dim(0), k = logits.dim(1);
    BasicTensor<T> out({N, k});
    for (int n = 0; n < N; ++n) {
        const T* row = logits.data() + static_cast<std::int64_t>(n) * k;
        T* orow = out.data() + static_cast<std::int64_t>(n) * k;
        T mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < k; ++j) orow[j] /= sum;
    }
    return out;
}

template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_out) {
    if (!probs.same_shape(grad_out)) {
        throw ShapeError("softmax grad_out shape " + grad_out.shape_str() +
                         " does not match probs " + probs.shape_str());
    }
    const int N = probs.dim(0), k = probs.dim(1);
    BasicTensor<T> g({N, k});
    for (int n = 0; n < N; ++n) {
        const T* p = probs.data() + static_cast<std::int64_t>(n) * k;
        const T* go = grad_out.data() + static_cast<std::int64_t>(n) * k;
        T dot = 0;
        for (int j = 0; j < k; ++j) dot += go[j] * p[j];
        T* gr = g.data() + static_cast<std::int64_t>(n) * k;
        for (int j = 0; j < k; ++j) gr[j] = p[j] * (go[j] - dot);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Bilinear interpolation with half-pixel centers: the source coordinate for
// destination index d is (d + 0.5) * in/out - 0.5, clamped to the valid
// range. Interpolation weights are convex, so outputs never leave the input
// value range. Arithmetic in double regardless of T.
// ---------------------------------------------------------------------------

namespace detail {

struct LerpCoord {
    int lo;
    int hi;
    double frac;
};

inline LerpCoord lerp_coord(int dst, int in_size, int out_size) {
    const double src = (static_cast<double>(dst) + 0.5) *
                           (static_cast<double>(in_size) / out_size) - 0.5;
    const double clamped = std::min(std::max(src, 0.0), static_cast<double>(in_size - 1));
    const int lo = static_cast<int>(clamped);
    const int hi = std::min(lo + 1, in_size - 1);
    return {lo, hi, clamped - lo};
}

}  // namespace detail

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& map, int out_h, int out_w) {
    detail::require_rank(map, 2, "bilinear input");
    if (out_h < 1 || out_w < 1) throw UsageError("bilinear output dims must be >= 1");
    const int h = map.dim(0), w = map.dim(1);
    BasicTensor<T> out({out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const auto cy = detail::lerp_coord(y, h, out_h);
        for (int x = 0; x < out_w; ++x) {
            const auto cx = detail::lerp_coord(x, w, out_w);
            const double v00 = map.at2(cy.lo, cx.lo);
            const double v01 = map.at2(cy.lo, cx.hi);
            const double v10 = map.at2(cy.hi, cx.lo);
            const double v11 = map.at2(cy.hi, cx.hi);
            const double top = v00 + cx.frac * (v01 - v00);
            const double bot = v10 + cx.frac * (v11 - v10);
            out.at2(y, x) = static_cast<T>(top + cy.frac * (bot - top));
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> bilinear_upsample(const BasicTensor<T>& map, int out_h, int out_w) {
    detail::require_rank(map, 2, "bilinear input");
    if (out_h < map.dim(0) || out_w < map.dim(1)) {
        throw UsageError("bilinear_upsample target " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " smaller than input " + map.shape_str());
    }
    return bilinear_resize(map, out_h, out_w);
}

template <typename T>
BasicTensor<T> bilinear_resize_backward(int in_h, int in_w, const BasicTensor<T>& grad_out) {
    detail::require_rank(grad_out, 2, "bilinear grad_out");
    const int out_h = grad_out.dim(0), out_w = grad_out.dim(1);
    BasicTensor<T> g({in_h, in_w});
    for (int y = 0; y < out_h; ++y) {
        const auto cy = detail::lerp_coord(y, in_h, out_h);
        for (int x = 0; x < out_w; ++x) {
            const auto cx = detail::lerp_coord(x, in_w, out_w);
            const double go = grad_out.at2(y, x);
            g.at2(cy.lo, cx.lo) += static_cast<T>((1.0 - cy.frac) * (1.0 - cx.frac) * go);
            g.at2(cy.lo, cx.hi) += static_cast<T>((1.0 - cy.frac) * cx.frac * go);
            g.at2(cy.hi, cx.lo) += static_cast<T>(cy.frac * (1.0 - cx.frac) * go);
            g.at2(cy.hi, cx.hi) += static_cast<T>(cy.frac * cx.frac * go);
        }
    }
    return g;
}

// Channel-wise bilinear resize of a C x H x W image.
template <typename T>
BasicTensor<T> bilinear_resize_chw(const BasicTensor<T>& img, int out_h, int out_w) {
    detail::require_rank(img, 3, "bilinear_resize_chw input");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    BasicTensor<T> out({C, out_h, out_w});
    for (int c = 0; c < C; ++c) {
        BasicTensor<T> plane({H, W});
        std::copy(img.data() + static_cast<std::int64_t>(c) * H * W,
                  img.data() + static_cast<std::int64_t>(c + 1) * H * W, plane.data());
        BasicTensor<T> r = bilinear_resize(plane, out_h, out_w);
        std::copy(r.data(), r.data() + r.numel(),
                  out.data() + static_cast<std::int64_t>(c) * out_h * out_w);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dropout with inverted scaling: kept activations are divided by the keep
// probability at train time, so evaluation needs no rescaling.
// ---------------------------------------------------------------------------

template <typename T>
struct DropoutResult {
    BasicTensor<T> output;
    std::vector<std::uint8_t> mask;
};

template <typename T>
DropoutResult<T> dropout_train(const BasicTensor<T>& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw UsageError("dropout probability must be in [0, 1)");
    const double keep = 1.0 - p;
    DropoutResult<T> r{BasicTensor<T>(x.shape()), std::vector<std::uint8_t>()};
    r.mask.resize(static_cast<std::size_t>(x.numel()));
    const T scale = static_cast<T>(1.0 / keep);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const bool kept = rng.uniform() < keep;
        r.mask[static_cast<std::size_t>(i)] = kept ? 1 : 0;
        r.output[i] = kept ? x[i] * scale : T{0};
    }
    return r;
}

template <typename T>
BasicTensor<T> dropout_backward(const std::vector<std::uint8_t>& mask, double p,
                                const BasicTensor<T>& grad_out) {
    if (static_cast<std::int64_t>(mask.size()) != grad_out.numel()) {
        throw UsageError("dropout_backward called without a matching saved mask");
    }
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    BasicTensor<T> g(grad_out.shape());
    for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
        g[i] = mask[static_cast<std::size_t>(i)] ? grad_out[i] * scale : T{0};
    }
    return g;
}

}  // namespace geostyle
