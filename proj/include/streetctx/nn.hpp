#pragma once

// Small CNN stack for street-context classification: plain C++ forward/backward
// passes over double-precision tensors, SGD with momentum, and a compact
// binary model format.  No threading, no blas — results are bit-reproducible
// for a fixed seed and architecture.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "streetctx/image.hpp"
#include "streetctx/rng.hpp"
#include "streetctx/tensor.hpp"

#include <json.hpp>

namespace streetctx::nn {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

struct Conv {
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 0;
};

struct Relu {};

struct MaxPool {
    std::size_t window = 2;
    std::size_t stride = 2;
};

struct GlobalAvgPool {};

struct Linear {
    std::size_t out_features = 0;
};

using LayerSpec = std::variant<Conv, Relu, MaxPool, GlobalAvgPool, Linear>;

inline const char* layer_name(const LayerSpec& l) {
    switch (l.index()) {
        case 0: return "conv";
        case 1: return "relu";
        case 2: return "maxpool";
        case 3: return "gap";
        default: return "linear";
    }
}

// Reference architecture: three conv/relu stages with 2x2 pooling after the
// first two, global average pooling, then a single linear classifier head.
inline std::vector<LayerSpec> streetnet_arch(std::size_t num_classes) {
    if (num_classes == 0) throw std::invalid_argument("streetnet_arch: num_classes must be positive");
    return {
        Conv{16, 3, 1, 1}, Relu{}, MaxPool{2, 2},
        Conv{32, 3, 1, 1}, Relu{}, MaxPool{2, 2},
        Conv{64, 3, 1, 1}, Relu{},
        GlobalAvgPool{},
        Linear{num_classes},
    };
}

// Feature-map shape as {channels, height, width}; rank-1 {features} after GAP.
struct FeatureShape {
    std::size_t channels = 0, height = 0, width = 0;
    bool flat = false; // true once spatial dims have been collapsed
};

inline FeatureShape propagate_shape(const FeatureShape& in, const LayerSpec& layer) {
    FeatureShape out = in;
    if (const auto* c = std::get_if<Conv>(&layer)) {
        if (in.flat) throw std::invalid_argument("conv applied to flattened features");
        if (c->kernel == 0 || c->stride == 0) throw std::invalid_argument("conv: kernel and stride must be positive");
        std::ptrdiff_t oh = (std::ptrdiff_t(in.height) + 2 * std::ptrdiff_t(c->pad) - std::ptrdiff_t(c->kernel)) / std::ptrdiff_t(c->stride) + 1;
        std::ptrdiff_t ow = (std::ptrdiff_t(in.width) + 2 * std::ptrdiff_t(c->pad) - std::ptrdiff_t(c->kernel)) / std::ptrdiff_t(c->stride) + 1;
        if (oh <= 0 || ow <= 0)
            throw std::invalid_argument("conv: output would be empty for input " +
                                        std::to_string(in.height) + "x" + std::to_string(in.width));
        out.channels = c->out_channels;
        out.height = std::size_t(oh);
        out.width = std::size_t(ow);
    } else if (std::get_if<Relu>(&layer)) {
        // shape preserved
    } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
        if (in.flat) throw std::invalid_argument("maxpool applied to flattened features");
        if (p->window == 0 || p->stride == 0) throw std::invalid_argument("maxpool: window and stride must be positive");
        if (in.height < p->window || in.width < p->window)
            throw std::invalid_argument("maxpool: window larger than input");
        out.height = (in.height - p->window) / p->stride + 1;
        out.width = (in.width - p->window) / p->stride + 1;
    } else if (std::get_if<GlobalAvgPool>(&layer)) {
        if (in.flat) throw std::invalid_argument("gap applied to flattened features");
        out.flat = true;
        out.height = out.width = 1;
    } else if (const auto* fc = std::get_if<Linear>(&layer)) {
        if (!in.flat) throw std::invalid_argument("linear layer requires flattened features (add gap first)");
        if (fc->out_features == 0) throw std::invalid_argument("linear: out_features must be positive");
        out.channels = fc->out_features;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer primitives (forward + backward)
// ---------------------------------------------------------------------------

namespace detail {
// First output index y with y*stride + kofs - pad >= 0.
inline std::size_t conv_lo(std::size_t pad, std::size_t kofs, std::size_t stride) {
    if (kofs >= pad) return 0;
    std::size_t deficit = pad - kofs;
    return (deficit + stride - 1) / stride;
}
// One past the last output index y with y*stride + kofs - pad < extent.
inline std::size_t conv_hi(std::size_t extent, std::size_t pad, std::size_t kofs, std::size_t stride,
                           std::size_t out_extent) {
    std::ptrdiff_t limit = std::ptrdiff_t(extent) + std::ptrdiff_t(pad) - std::ptrdiff_t(kofs);
    if (limit <= 0) return 0;
    std::size_t hi = (std::size_t(limit) + stride - 1) / stride;
    return std::min(hi, out_extent);
}

// Fast path for the 3x3 / stride 1 / pad 1 shape (output size == input size,
// H, W >= 2): the three kernel taps of a row are kept in registers and the
// borders are patched separately, so the interior loop is three fused
// multiply-adds per output element with unit-stride access.
inline void conv3x3_s1p1_forward_plane(const double* in_plane, const double* kw, double* out_plane,
                                       std::size_t H, std::size_t W) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
        const double w0 = kw[ky * 3 + 0], w1 = kw[ky * 3 + 1], w2 = kw[ky * 3 + 2];
        const std::size_t y_lo = ky == 0 ? 1 : 0;
        const std::size_t y_hi = ky == 2 ? H - 1 : H;
        for (std::size_t y = y_lo; y < y_hi; ++y) {
            const double* irow = in_plane + (y + ky - 1) * W;
            double* orow = out_plane + y * W;
            orow[0] += w1 * irow[0] + w2 * irow[1];
            for (std::size_t x = 1; x + 1 < W; ++x)
                orow[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
            orow[W - 1] += w0 * irow[W - 2] + w1 * irow[W - 1];
        }
    }
}

// dinput for the same shape: the transpose correlation, i.e. a 3x3 pass over
// dout with the kernel taps mirrored in both axes.
inline void conv3x3_s1p1_dinput_plane(const double* dout_plane, const double* kw,
                                      double* din_plane, std::size_t H, std::size_t W) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
        const double w0 = kw[ky * 3 + 0], w1 = kw[ky * 3 + 1], w2 = kw[ky * 3 + 2];
        // input row iy receives dout row oy = iy - ky + 1
        const std::size_t iy_lo = ky == 2 ? 1 : 0;
        const std::size_t iy_hi = ky == 0 ? H - 1 : H;
        for (std::size_t iy = iy_lo; iy < iy_hi; ++iy) {
            const double* drow = dout_plane + (iy + 1 - ky) * W;
            double* dirow = din_plane + iy * W;
            dirow[0] += w1 * drow[0] + w0 * drow[1];
            for (std::size_t x = 1; x + 1 < W; ++x)
                dirow[x] += w2 * drow[x - 1] + w1 * drow[x] + w0 * drow[x + 1];
            dirow[W - 1] += w2 * drow[W - 2] + w1 * drow[W - 1];
        }
    }
}

// dkernel for the same shape: nine shifted plane dot-products, three
// independent accumulators per kernel row so the loop stays a reduction.
inline void conv3x3_s1p1_dkernel_plane(const double* in_plane, const double* dout_plane,
                                       double* kw_grad, std::size_t H, std::size_t W) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
        double g0 = 0.0, g1 = 0.0, g2 = 0.0;
        const std::size_t y_lo = ky == 0 ? 1 : 0;
        const std::size_t y_hi = ky == 2 ? H - 1 : H;
        for (std::size_t y = y_lo; y < y_hi; ++y) {
            const double* irow = in_plane + (y + ky - 1) * W;
            const double* drow = dout_plane + y * W;
            g1 += drow[0] * irow[0];
            g2 += drow[0] * irow[1];
            for (std::size_t x = 1; x + 1 < W; ++x) {
                const double d = drow[x];
                g0 += d * irow[x - 1];
                g1 += d * irow[x];
                g2 += d * irow[x + 1];
            }
            g0 += drow[W - 1] * irow[W - 2];
            g1 += drow[W - 1] * irow[W - 1];
        }
        kw_grad[ky * 3 + 0] += g0;
        kw_grad[ky * 3 + 1] += g1;
        kw_grad[ky * 3 + 2] += g2;
    }
}
} // namespace detail

// input: N x C x H x W, kernel: O x C x k x k, bias: O  ->  N x O x oH x oW.
// Zero padding, floor output size.
inline Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                             std::size_t stride, std::size_t pad) {
    if (input.rank() != 4 || kernel.rank() != 4 || bias.rank() != 1)
        throw std::invalid_argument("conv2d: expected input NCHW, kernel OCkk, bias O");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t O = kernel.dim(0), K = kernel.dim(2);
    if (kernel.dim(1) != C) throw std::invalid_argument("conv2d: kernel channel count mismatch");
    if (kernel.dim(3) != K) throw std::invalid_argument("conv2d: kernel must be square");
    if (bias.dim(0) != O) throw std::invalid_argument("conv2d: bias length mismatch");
    FeatureShape fs = propagate_shape({C, H, W, false}, Conv{O, K, stride, pad});
    const std::size_t oH = fs.height, oW = fs.width;

    Tensor out({N, O, oH, oW});
    const double* in = input.data();
    const double* ker = kernel.data();
    const double* b = bias.data();
    double* o = out.data();

    if (K == 3 && stride == 1 && pad == 1 && H >= 2 && W >= 2) {
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t oc = 0; oc < O; ++oc) {
                double* plane = o + ((n * O + oc) * oH) * oW;
                std::fill(plane, plane + oH * oW, b[oc]);
                for (std::size_t c = 0; c < C; ++c)
                    detail::conv3x3_s1p1_forward_plane(in + ((n * C + c) * H) * W,
                                                       ker + (oc * C + c) * 9, plane, H, W);
            }
        return out;
    }

    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t oc = 0; oc < O; ++oc) {
            double* plane = o + ((n * O + oc) * oH) * oW;
            std::fill(plane, plane + oH * oW, b[oc]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* in_plane = in + ((n * C + c) * H) * W;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    const std::size_t y_lo = detail::conv_lo(pad, ky, stride);
                    const std::size_t y_hi = detail::conv_hi(H, pad, ky, stride, oH);
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const double w = ker[((oc * C + c) * K + ky) * K + kx];
                        if (w == 0.0) continue;
                        const std::size_t x_lo = detail::conv_lo(pad, kx, stride);
                        const std::size_t x_hi = detail::conv_hi(W, pad, kx, stride, oW);
                        for (std::size_t y = y_lo; y < y_hi; ++y) {
                            const std::size_t iy = y * stride + ky - pad;
                            double* orow = plane + y * oW;
                            const double* irow = in_plane + iy * W + (x_lo * stride + kx - pad);
                            if (stride == 1) {
                                for (std::size_t x = x_lo; x < x_hi; ++x)
                                    orow[x] += w * irow[x - x_lo];
                            } else {
                                for (std::size_t x = x_lo; x < x_hi; ++x)
                                    orow[x] += w * irow[(x - x_lo) * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor dinput, dkernel, dbias;
};

inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, std::size_t stride,
                                 std::size_t pad, const Tensor& dout) {
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t O = kernel.dim(0), K = kernel.dim(2);
    const std::size_t oH = dout.dim(2), oW = dout.dim(3);
    if (dout.dim(0) != N || dout.dim(1) != O)
        throw std::invalid_argument("conv2d_backward: dout shape mismatch");

    ConvGrads g{Tensor(input.shape()), Tensor(kernel.shape()), Tensor({O})};
    const double* in = input.data();
    const double* ker = kernel.data();
    const double* dO = dout.data();
    double* dIn = g.dinput.data();
    double* dK = g.dkernel.data();
    double* dB = g.dbias.data();

    if (K == 3 && stride == 1 && pad == 1 && H >= 2 && W >= 2) {
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t oc = 0; oc < O; ++oc) {
                const double* dplane = dO + ((n * O + oc) * oH) * oW;
                double acc = 0.0;
                for (std::size_t i = 0; i < oH * oW; ++i) acc += dplane[i];
                dB[oc] += acc;
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t plane_off = ((n * C + c) * H) * W;
                    const std::size_t k_off = (oc * C + c) * 9;
                    detail::conv3x3_s1p1_dinput_plane(dplane, ker + k_off, dIn + plane_off, H, W);
                    detail::conv3x3_s1p1_dkernel_plane(in + plane_off, dplane, dK + k_off, H, W);
                }
            }
        return g;
    }

    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t oc = 0; oc < O; ++oc) {
            const double* dplane = dO + ((n * O + oc) * oH) * oW;
            double acc = 0.0;
            for (std::size_t i = 0; i < oH * oW; ++i) acc += dplane[i];
            dB[oc] += acc;
            for (std::size_t c = 0; c < C; ++c) {
                const double* in_plane = in + ((n * C + c) * H) * W;
                double* din_plane = dIn + ((n * C + c) * H) * W;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    const std::size_t y_lo = detail::conv_lo(pad, ky, stride);
                    const std::size_t y_hi = detail::conv_hi(H, pad, ky, stride, oH);
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const std::size_t x_lo = detail::conv_lo(pad, kx, stride);
                        const std::size_t x_hi = detail::conv_hi(W, pad, kx, stride, oW);
                        const double w = ker[((oc * C + c) * K + ky) * K + kx];
                        double wg = 0.0;
                        for (std::size_t y = y_lo; y < y_hi; ++y) {
                            const std::size_t iy = y * stride + ky - pad;
                            const double* drow = dplane + y * oW;
                            const double* irow = in_plane + iy * W + (x_lo * stride + kx - pad);
                            double* dirow = din_plane + iy * W + (x_lo * stride + kx - pad);
                            if (stride == 1) {
                                for (std::size_t x = x_lo; x < x_hi; ++x) {
                                    const double d = drow[x];
                                    wg += d * irow[x - x_lo];
                                    dirow[x - x_lo] += w * d;
                                }
                            } else {
                                for (std::size_t x = x_lo; x < x_hi; ++x) {
                                    const double d = drow[x];
                                    wg += d * irow[(x - x_lo) * stride];
                                    dirow[(x - x_lo) * stride] += w * d;
                                }
                            }
                        }
                        dK[((oc * C + c) * K + ky) * K + kx] += wg;
                    }
                }
            }
        }
    }
    return g;
}

inline Tensor relu_forward(const Tensor& x) {
    Tensor y(x.shape());
    const double* xi = x.data();
    double* yi = y.data();
    for (std::size_t i = 0; i < x.numel(); ++i) yi[i] = xi[i] > 0.0 ? xi[i] : 0.0;
    return y;
}

// Subgradient at zero is taken as zero.
inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    require_same_shape(x, dy, "relu_backward");
    Tensor dx(x.shape());
    const double* xi = x.data();
    const double* di = dy.data();
    double* o = dx.data();
    for (std::size_t i = 0; i < x.numel(); ++i) o[i] = xi[i] > 0.0 ? di[i] : 0.0;
    return dx;
}

struct MaxPoolResult {
    Tensor output;
    std::vector<std::size_t> argmax; // flat input index per output element
};

// No padding; ties resolve to the first maximum in row-major window order.
inline MaxPoolResult maxpool_forward(const Tensor& x, std::size_t window, std::size_t stride) {
    if (x.rank() != 4) throw std::invalid_argument("maxpool: expected NCHW input");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    FeatureShape fs = propagate_shape({C, H, W, false}, MaxPool{window, stride});
    const std::size_t oH = fs.height, oW = fs.width;
    MaxPoolResult r{Tensor({N, C, oH, oW}), {}};
    r.argmax.resize(r.output.numel());
    const double* in = x.data();
    double* out = r.output.data();
    std::size_t oi = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * H * W;
            for (std::size_t y = 0; y < oH; ++y)
                for (std::size_t x2 = 0; x2 < oW; ++x2, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t wy = 0; wy < window; ++wy)
                        for (std::size_t wx = 0; wx < window; ++wx) {
                            const std::size_t idx = base + (y * stride + wy) * W + (x2 * stride + wx);
                            if (in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                            }
                        }
                    out[oi] = best;
                    r.argmax[oi] = best_idx;
                }
        }
    return r;
}

inline Tensor maxpool_backward(const std::vector<std::size_t>& argmax,
                               const std::vector<std::size_t>& input_shape, const Tensor& dy) {
    Tensor dx(input_shape);
    double* o = dx.data();
    const double* d = dy.data();
    for (std::size_t i = 0; i < dy.numel(); ++i) o[argmax[i]] += d[i];
    return dx;
}

// N x C x H x W -> N x C (mean over the spatial plane).
inline Tensor gap_forward(const Tensor& x) {
    if (x.rank() != 4) throw std::invalid_argument("gap: expected NCHW input");
    const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor out({N, C});
    const double* in = x.data();
    double* o = out.data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        const double* p = in + nc * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        o[nc] = acc / double(plane);
    }
    return out;
}

inline Tensor gap_backward(const std::vector<std::size_t>& input_shape, const Tensor& dy) {
    Tensor dx(input_shape);
    const std::size_t plane = input_shape[2] * input_shape[3];
    const double scale = 1.0 / double(plane);
    double* o = dx.data();
    const double* d = dy.data();
    for (std::size_t nc = 0; nc < dy.numel(); ++nc) {
        const double v = d[nc] * scale;
        double* p = o + nc * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = v;
    }
    return dx;
}

// x: N x K, weight: C x K, bias: C  ->  N x C.
inline Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
        throw std::invalid_argument("linear: expected x NxK, weight CxK, bias C");
    const std::size_t N = x.dim(0), K = x.dim(1), C = weight.dim(0);
    if (weight.dim(1) != K || bias.dim(0) != C)
        throw std::invalid_argument("linear: weight/bias shape mismatch");
    Tensor out({N, C});
    const double* xi = x.data();
    const double* w = weight.data();
    const double* b = bias.data();
    double* o = out.data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double acc = b[c];
            const double* xr = xi + n * K;
            const double* wr = w + c * K;
            for (std::size_t k = 0; k < K; ++k) acc += wr[k] * xr[k];
            o[n * C + c] = acc;
        }
    return out;
}

struct LinearGrads {
    Tensor dinput, dweight, dbias;
};

inline LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dout) {
    const std::size_t N = x.dim(0), K = x.dim(1), C = weight.dim(0);
    LinearGrads g{Tensor(x.shape()), Tensor(weight.shape()), Tensor({C})};
    const double* xi = x.data();
    const double* w = weight.data();
    const double* d = dout.data();
    double* dx = g.dinput.data();
    double* dw = g.dweight.data();
    double* db = g.dbias.data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double dv = d[n * C + c];
            db[c] += dv;
            const double* xr = xi + n * K;
            double* dwr = dw + c * K;
            double* dxr = dx + n * K;
            const double* wr = w + c * K;
            for (std::size_t k = 0; k < K; ++k) {
                dwr[k] += dv * xr[k];
                dxr[k] += dv * wr[k];
            }
        }
    return g;
}

struct SoftmaxXentResult {
    double loss = 0.0;
    Tensor probs;   // N x C
    Tensor dlogits; // N x C, already divided by N
};

// Mean cross-entropy over the batch with the max-subtraction stabilisation.
inline SoftmaxXentResult softmax_cross_entropy(const Tensor& logits,
                                               const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: expected NxC logits");
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    if (labels.size() != N) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    SoftmaxXentResult r{0.0, Tensor({N, C}), Tensor({N, C})};
    const double* z = logits.data();
    double* p = r.probs.data();
    double* d = r.dlogits.data();
    for (std::size_t n = 0; n < N; ++n) {
        if (labels[n] >= C) throw std::invalid_argument("softmax_cross_entropy: label out of range");
        const double* zr = z + n * C;
        double m = zr[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, zr[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double e = std::exp(zr[c] - m);
            p[n * C + c] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < C; ++c) p[n * C + c] /= sum;
        r.loss -= std::log(p[n * C + labels[n]]);
        for (std::size_t c = 0; c < C; ++c)
            d[n * C + c] = (p[n * C + c] - (c == labels[n] ? 1.0 : 0.0)) / double(N);
    }
    r.loss /= double(N);
    return r;
}

// ---------------------------------------------------------------------------
// Model: architecture + parameters + class catalog
// ---------------------------------------------------------------------------

struct Model {
    std::vector<LayerSpec> arch;
    std::vector<Tensor> params; // conv: kernel then bias; linear: weight then bias
    std::vector<std::string> catalog;
    std::size_t input_channels = 3;
    std::size_t input_height = 64;
    std::size_t input_width = 64;
};

// Glorot-uniform initialisation: every weight drawn from U(-L, L) with
// L = sqrt(6 / (fan_in + fan_out)); biases start at zero.  Parameters are
// drawn in layer order, elements in row-major order, so a fixed seed yields
// bit-identical models.
inline Model init_model(const std::vector<LayerSpec>& arch, std::vector<std::string> catalog,
                        std::size_t input_h, std::size_t input_w, std::uint64_t seed) {
    Model m;
    m.arch = arch;
    m.catalog = std::move(catalog);
    m.input_height = input_h;
    m.input_width = input_w;
    Xoshiro256ss rng(seed);
    FeatureShape fs{m.input_channels, input_h, input_w, false};
    for (const auto& layer : arch) {
        if (const auto* c = std::get_if<Conv>(&layer)) {
            const std::size_t fan_in = fs.channels * c->kernel * c->kernel;
            const std::size_t fan_out = c->out_channels * c->kernel * c->kernel;
            const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
            Tensor k({c->out_channels, fs.channels, c->kernel, c->kernel});
            for (std::size_t i = 0; i < k.numel(); ++i)
                k[i] = (2.0 * rng.next_double() - 1.0) * limit;
            m.params.push_back(std::move(k));
            m.params.push_back(Tensor({c->out_channels}));
        } else if (const auto* fc = std::get_if<Linear>(&layer)) {
            const std::size_t fan_in = fs.channels;
            const double limit = std::sqrt(6.0 / double(fan_in + fc->out_features));
            Tensor w({fc->out_features, fan_in});
            for (std::size_t i = 0; i < w.numel(); ++i)
                w[i] = (2.0 * rng.next_double() - 1.0) * limit;
            m.params.push_back(std::move(w));
            m.params.push_back(Tensor({fc->out_features}));
        }
        fs = propagate_shape(fs, layer);
    }
    if (!fs.flat) throw std::invalid_argument("architecture must end with gap + linear");
    if (fs.channels != m.catalog.size())
        throw std::invalid_argument("final layer width " + std::to_string(fs.channels) +
                                    " does not match catalog size " + std::to_string(m.catalog.size()));
    return m;
}

struct ForwardCache {
    std::vector<Tensor> inputs;                  // input to each layer
    std::vector<std::vector<std::size_t>> pool_argmax; // per layer; empty unless maxpool
    Tensor output;                               // N x num_classes logits
    int gap_layer = -1;                          // index of the gap layer, if any
};

inline Tensor model_forward(const Model& m, const Tensor& batch, ForwardCache* cache) {
    Tensor cur = batch;
    std::size_t pi = 0;
    if (cache) {
        cache->inputs.clear();
        cache->pool_argmax.assign(m.arch.size(), {});
        cache->gap_layer = -1;
    }
    for (std::size_t li = 0; li < m.arch.size(); ++li) {
        const LayerSpec& layer = m.arch[li];
        if (cache) cache->inputs.push_back(cur);
        if (const auto* c = std::get_if<Conv>(&layer)) {
            cur = conv2d_forward(cur, m.params[pi], m.params[pi + 1], c->stride, c->pad);
            pi += 2;
        } else if (std::get_if<Relu>(&layer)) {
            cur = relu_forward(cur);
        } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
            MaxPoolResult r = maxpool_forward(cur, p->window, p->stride);
            if (cache) cache->pool_argmax[li] = std::move(r.argmax);
            cur = std::move(r.output);
        } else if (std::get_if<GlobalAvgPool>(&layer)) {
            if (cache) cache->gap_layer = int(li);
            cur = gap_forward(cur);
        } else {
            cur = linear_forward(cur, m.params[pi], m.params[pi + 1]);
            pi += 2;
        }
    }
    if (cache) cache->output = cur;
    return cur;
}

// Returns one gradient tensor per parameter tensor, in the same order.
inline std::vector<Tensor> model_backward(const Model& m, const ForwardCache& cache,
                                          const Tensor& dlogits) {
    std::vector<Tensor> grads(m.params.size());
    // locate parameter offsets per layer
    std::vector<std::size_t> param_at(m.arch.size(), std::size_t(-1));
    std::size_t pi = 0;
    for (std::size_t li = 0; li < m.arch.size(); ++li) {
        if (std::holds_alternative<Conv>(m.arch[li]) || std::holds_alternative<Linear>(m.arch[li])) {
            param_at[li] = pi;
            pi += 2;
        }
    }
    Tensor d = dlogits;
    for (std::size_t ri = m.arch.size(); ri-- > 0;) {
        const LayerSpec& layer = m.arch[ri];
        const Tensor& x = cache.inputs[ri];
        if (const auto* c = std::get_if<Conv>(&layer)) {
            ConvGrads g = conv2d_backward(x, m.params[param_at[ri]], c->stride, c->pad, d);
            grads[param_at[ri]] = std::move(g.dkernel);
            grads[param_at[ri] + 1] = std::move(g.dbias);
            d = std::move(g.dinput);
        } else if (std::get_if<Relu>(&layer)) {
            d = relu_backward(x, d);
        } else if (std::get_if<MaxPool>(&layer)) {
            d = maxpool_backward(cache.pool_argmax[ri], x.shape(), d);
        } else if (std::get_if<GlobalAvgPool>(&layer)) {
            d = gap_backward(x.shape(), d);
        } else {
            LinearGrads g = linear_backward(x, m.params[param_at[ri]], d);
            grads[param_at[ri]] = std::move(g.dweight);
            grads[param_at[ri] + 1] = std::move(g.dbias);
            d = std::move(g.dinput);
        }
    }
    return grads;
}

// v <- momentum * v - lr * g;  p <- p + v
inline void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                     std::vector<Tensor>& velocity, double lr, double momentum) {
    if (grads.size() != params.size() || velocity.size() != params.size())
        throw std::invalid_argument("sgd_step: parameter/gradient/velocity count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].data();
        const double* g = grads[i].data();
        double* v = velocity[i].data();
        for (std::size_t j = 0; j < params[i].numel(); ++j) {
            v[j] = momentum * v[j] - lr * g[j];
            p[j] += v[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Nearest-neighbour resize to the model input size, then map byte values
// to [-0.5, 0.5] via v/255 - 0.5.  Channel-major output (RGB planes).
inline void image_to_tensor(const img::RgbImage& image, std::size_t target_h, std::size_t target_w,
                            double* dst) {
    const img::RgbImage* src = &image;
    img::RgbImage resized;
    if (image.width != target_w || image.height != target_h) {
        resized = img::resize_nearest(image, target_w, target_h);
        src = &resized;
    }
    const std::size_t plane = target_h * target_w;
    for (std::size_t y = 0; y < target_h; ++y)
        for (std::size_t x = 0; x < target_w; ++x) {
            const std::size_t pix = (y * target_w + x) * 3;
            const std::size_t out = y * target_w + x;
            dst[out] = double(src->pixels[pix]) / 255.0 - 0.5;
            dst[plane + out] = double(src->pixels[pix + 1]) / 255.0 - 0.5;
            dst[2 * plane + out] = double(src->pixels[pix + 2]) / 255.0 - 0.5;
        }
}

inline Tensor batch_from_images(const std::vector<const img::RgbImage*>& images, std::size_t target_h,
                                std::size_t target_w) {
    Tensor batch({images.size(), 3, target_h, target_w});
    const std::size_t stride = 3 * target_h * target_w;
    for (std::size_t i = 0; i < images.size(); ++i)
        image_to_tensor(*images[i], target_h, target_w, batch.data() + i * stride);
    return batch;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    std::size_t input_height = 64;
    std::size_t input_width = 64;
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean over samples
    double train_accuracy = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<EpochStats> history;
};

struct Example {
    const img::RgbImage* image = nullptr;
    std::size_t label = 0; // catalog index
};

// Deterministic training loop.  RNG usage, in order: model init (seed),
// then one full Fisher-Yates shuffle of the example order per epoch from
// a separate stream (seed ^ 0x5bf0...), so init and shuffling never
// interleave.
inline TrainResult train(const std::vector<Example>& dataset, const std::vector<LayerSpec>& arch,
                         const std::vector<std::string>& catalog, const TrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    if (catalog.empty()) throw std::invalid_argument("train: catalog is empty");
    if (cfg.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
    if (cfg.batch_size > dataset.size())
        throw std::invalid_argument("train: batch_size " + std::to_string(cfg.batch_size) +
                                    " exceeds dataset size " + std::to_string(dataset.size()));
    for (const auto& ex : dataset) {
        if (!ex.image) throw std::invalid_argument("train: null image in dataset");
        if (ex.image->width != dataset[0].image->width || ex.image->height != dataset[0].image->height)
            throw std::invalid_argument(
                "train: inconsistent image sizes (" + std::to_string(ex.image->width) + "x" +
                std::to_string(ex.image->height) + " vs " + std::to_string(dataset[0].image->width) +
                "x" + std::to_string(dataset[0].image->height) + ")");
        if (ex.label >= catalog.size())
            throw std::invalid_argument("train: label index " + std::to_string(ex.label) +
                                        " outside catalog of " + std::to_string(catalog.size()));
    }

    TrainResult result;
    result.model = init_model(arch, catalog, cfg.input_height, cfg.input_width, cfg.seed);
    Model& model = result.model;

    std::vector<Tensor> velocity;
    velocity.reserve(model.params.size());
    for (const auto& p : model.params) velocity.emplace_back(p.shape());

    // Pre-resize every image once; training touches each image many times.
    const std::size_t stride = 3 * cfg.input_height * cfg.input_width;
    std::vector<double> pixels(dataset.size() * stride);
    for (std::size_t i = 0; i < dataset.size(); ++i)
        image_to_tensor(*dataset[i].image, cfg.input_height, cfg.input_width,
                        pixels.data() + i * stride);

    Xoshiro256ss shuffle_rng(cfg.seed ^ 0x5bf03635dcf26e5bULL);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_prefix(order, order.size(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < dataset.size(); start += cfg.batch_size) {
            const std::size_t bn = std::min(cfg.batch_size, dataset.size() - start);
            Tensor batch({bn, 3, cfg.input_height, cfg.input_width});
            std::vector<std::size_t> labels(bn);
            for (std::size_t b = 0; b < bn; ++b) {
                const std::size_t src = order[start + b];
                std::memcpy(batch.data() + b * stride, pixels.data() + src * stride,
                            stride * sizeof(double));
                labels[b] = dataset[src].label;
            }
            ForwardCache cache;
            Tensor logits = model_forward(model, batch, &cache);
            SoftmaxXentResult sx = softmax_cross_entropy(logits, labels);
            loss_sum += sx.loss * double(bn);
            const std::size_t C = catalog.size();
            for (std::size_t b = 0; b < bn; ++b) {
                const double* row = logits.data() + b * C;
                std::size_t best = 0;
                for (std::size_t c = 1; c < C; ++c)
                    if (row[c] > row[best]) best = c;
                if (best == labels[b]) ++correct;
            }
            std::vector<Tensor> grads = model_backward(model, cache, sx.dlogits);
            sgd_step(model.params, grads, velocity, cfg.learning_rate, cfg.momentum);
        }
        EpochStats st;
        st.epoch = epoch;
        st.loss = loss_sum / double(dataset.size());
        st.train_accuracy = double(correct) / double(dataset.size());
        if (!std::isfinite(st.loss))
            throw std::runtime_error("train: loss diverged (epoch " + std::to_string(epoch) + ")");
        result.history.push_back(st);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

struct Prediction {
    std::size_t class_index = 0;
    std::vector<double> probabilities;    // one per catalog entry, sums to 1
    Tensor last_conv;                     // C x H x W activation feeding the gap layer
    std::vector<double> penultimate;      // gap output (feature vector)
};

inline Prediction predict(const Model& m, const img::RgbImage& image) {
    if (image.width != m.input_width || image.height != m.input_height)
        throw std::invalid_argument("predict: image " + std::to_string(image.width) + "x" +
                                    std::to_string(image.height) + " does not match model input " +
                                    std::to_string(m.input_width) + "x" +
                                    std::to_string(m.input_height));
    Tensor batch = batch_from_images({&image}, m.input_height, m.input_width);
    ForwardCache cache;
    Tensor logits = model_forward(m, batch, &cache);
    const std::size_t C = logits.dim(1);

    Prediction pred;
    const double* z = logits.data();
    double mx = z[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
    double sum = 0.0;
    pred.probabilities.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        pred.probabilities[c] = std::exp(z[c] - mx);
        sum += pred.probabilities[c];
    }
    for (std::size_t c = 0; c < C; ++c) pred.probabilities[c] /= sum;
    pred.class_index = 0;
    for (std::size_t c = 1; c < C; ++c)
        if (z[c] > z[pred.class_index]) pred.class_index = c;

    if (cache.gap_layer >= 0) {
        const Tensor& feat = cache.inputs[std::size_t(cache.gap_layer)]; // 1 x C x H x W
        pred.last_conv = Tensor({feat.dim(1), feat.dim(2), feat.dim(3)},
                                std::vector<double>(feat.values()));
        Tensor pooled = gap_forward(feat);
        pred.penultimate.assign(pooled.data(), pooled.data() + pooled.numel());
    }
    return pred;
}

// ---------------------------------------------------------------------------
// Model serialization
// ---------------------------------------------------------------------------
//
// Layout: "SCTX" | version byte 0x01 | u32 LE header length | header JSON |
// parameter doubles, little-endian IEEE-754, in parameter order.

namespace detail {

inline void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::vector<std::uint8_t>& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t((bits >> (8 * i)) & 0xff));
}

inline nlohmann::json arch_to_json(const std::vector<LayerSpec>& arch) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& layer : arch) {
        nlohmann::json j;
        j["type"] = layer_name(layer);
        if (const auto* c = std::get_if<Conv>(&layer)) {
            j["out_channels"] = c->out_channels;
            j["kernel"] = c->kernel;
            j["stride"] = c->stride;
            j["pad"] = c->pad;
        } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
            j["window"] = p->window;
            j["stride"] = p->stride;
        } else if (const auto* fc = std::get_if<Linear>(&layer)) {
            j["out_features"] = fc->out_features;
        }
        a.push_back(std::move(j));
    }
    return a;
}

inline std::vector<LayerSpec> arch_from_json(const nlohmann::json& a) {
    std::vector<LayerSpec> arch;
    for (const auto& j : a) {
        const std::string type = j.at("type").get<std::string>();
        if (type == "conv")
            arch.push_back(Conv{j.at("out_channels").get<std::size_t>(),
                                j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>(),
                                j.at("pad").get<std::size_t>()});
        else if (type == "relu")
            arch.push_back(Relu{});
        else if (type == "maxpool")
            arch.push_back(MaxPool{j.at("window").get<std::size_t>(), j.at("stride").get<std::size_t>()});
        else if (type == "gap")
            arch.push_back(GlobalAvgPool{});
        else if (type == "linear")
            arch.push_back(Linear{j.at("out_features").get<std::size_t>()});
        else
            throw std::runtime_error("model file: unknown layer type '" + type + "'");
    }
    return arch;
}

} // namespace detail

inline std::vector<std::uint8_t> serialize_model(const Model& m) {
    nlohmann::json header;
    header["arch"] = detail::arch_to_json(m.arch);
    header["catalog"] = m.catalog;
    header["input"] = {{"channels", m.input_channels},
                       {"height", m.input_height},
                       {"width", m.input_width}};
    const std::string hs = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(9 + hs.size() + m.params.size() * 64);
    out.insert(out.end(), {'S', 'C', 'T', 'X'});
    out.push_back(0x01);
    detail::put_u32_le(out, std::uint32_t(hs.size()));
    out.insert(out.end(), hs.begin(), hs.end());
    for (const auto& p : m.params)
        for (std::size_t i = 0; i < p.numel(); ++i) detail::put_f64_le(out, p[i]);
    return out;
}

inline Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 9 || std::memcmp(bytes.data(), "SCTX", 4) != 0)
        throw std::runtime_error("model file: bad magic (expected SCTX)");
    if (bytes[4] != 0x01)
        throw std::runtime_error("model file: unsupported version " + std::to_string(int(bytes[4])));
    std::uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i) hlen |= std::uint32_t(bytes[5 + i]) << (8 * i);
    if (bytes.size() < 9 + std::size_t(hlen)) throw std::runtime_error("model file: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + hlen);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("model file: header is not valid JSON: ") + e.what());
    }

    Model m;
    m.arch = detail::arch_from_json(header.at("arch"));
    m.catalog = header.at("catalog").get<std::vector<std::string>>();
    m.input_channels = header.at("input").at("channels").get<std::size_t>();
    m.input_height = header.at("input").at("height").get<std::size_t>();
    m.input_width = header.at("input").at("width").get<std::size_t>();

    // Reconstruct parameter shapes from the architecture.
    FeatureShape fs{m.input_channels, m.input_height, m.input_width, false};
    std::vector<std::vector<std::size_t>> shapes;
    for (const auto& layer : m.arch) {
        if (const auto* c = std::get_if<Conv>(&layer)) {
            shapes.push_back({c->out_channels, fs.channels, c->kernel, c->kernel});
            shapes.push_back({c->out_channels});
        } else if (const auto* fc = std::get_if<Linear>(&layer)) {
            shapes.push_back({fc->out_features, fs.channels});
            shapes.push_back({fc->out_features});
        }
        fs = propagate_shape(fs, layer);
    }

    std::size_t off = 9 + hlen;
    for (const auto& shape : shapes) {
        Tensor t(shape);
        const std::size_t need = t.numel() * 8;
        if (bytes.size() - off < need) throw std::runtime_error("model file: truncated parameters");
        for (std::size_t i = 0; i < t.numel(); ++i) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[off + i * 8 + b]) << (8 * b);
            double d;
            std::memcpy(&d, &bits, sizeof d);
            t[i] = d;
        }
        off += need;
        m.params.push_back(std::move(t));
    }
    if (off != bytes.size()) throw std::runtime_error("model file: trailing bytes after parameters");
    return m;
}

} // namespace streetctx::nn
