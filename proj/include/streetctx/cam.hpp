#pragma once

// Class activation maps: weighted sum of the final conv feature maps using
// the classifier weights for one class, min-max normalized, bilinearly
// upsampled, and rendered over the source image with a fixed blue->red ramp.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "streetctx/image.hpp"
#include "streetctx/tensor.hpp"

namespace streetctx::cam {

struct ActivationMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> values; // row-major, each in [0,1]

    double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

// raw[y,x] = sum_k W[c,k] * f_k[y,x], then min-max normalized to [0,1].
// If the raw map is constant (max == min) the result is all zeros.
inline ActivationMap class_activation_map(const nn::Tensor& last_conv, const nn::Tensor& linear_weight,
                                          std::size_t class_index) {
    if (last_conv.rank() != 3)
        throw std::invalid_argument("class_activation_map: expected KxHxW feature tensor");
    if (linear_weight.rank() != 2)
        throw std::invalid_argument("class_activation_map: expected CxK weight matrix");
    const std::size_t K = last_conv.dim(0), H = last_conv.dim(1), W = last_conv.dim(2);
    const std::size_t C = linear_weight.dim(0);
    if (class_index >= C)
        throw std::out_of_range("class_activation_map: class index " + std::to_string(class_index) +
                                " out of range for " + std::to_string(C) + " classes");
    if (linear_weight.dim(1) != K)
        throw std::invalid_argument("class_activation_map: weight width " +
                                    std::to_string(linear_weight.dim(1)) +
                                    " does not match feature channels " + std::to_string(K));

    ActivationMap map;
    map.width = W;
    map.height = H;
    map.values.assign(H * W, 0.0);
    const double* f = last_conv.data();
    const double* w = linear_weight.data() + class_index * K;
    for (std::size_t k = 0; k < K; ++k) {
        const double wk = w[k];
        const double* plane = f + k * H * W;
        for (std::size_t i = 0; i < H * W; ++i) map.values[i] += wk * plane[i];
    }

    double lo = map.values[0], hi = map.values[0];
    for (double v : map.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) {
        std::fill(map.values.begin(), map.values.end(), 0.0);
        return map;
    }
    // Divide by the range directly: (hi - lo) / (hi - lo) is exactly 1.0 in
    // IEEE arithmetic, so the extremes land exactly on the interval endpoints.
    const double range = hi - lo;
    for (double& v : map.values) v = (v - lo) / range;
    return map;
}

// Corner-aligned bilinear interpolation: output corners sample input corners
// exactly.  Output dimensions must be at least the source dimensions.
inline ActivationMap bilinear_upsample(const ActivationMap& src, std::size_t out_w, std::size_t out_h) {
    if (out_w == 0 || out_h == 0)
        throw std::invalid_argument("bilinear_upsample: output dimensions must be positive");
    if (out_w < src.width || out_h < src.height)
        throw std::invalid_argument("bilinear_upsample: output must be at least source size");
    ActivationMap out;
    out.width = out_w;
    out.height = out_h;
    out.values.resize(out_w * out_h);
    const double sy = out_h > 1 ? double(src.height - 1) / double(out_h - 1) : 0.0;
    const double sx = out_w > 1 ? double(src.width - 1) / double(out_w - 1) : 0.0;
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = double(y) * sy;
        const std::size_t y0 = std::min(std::size_t(fy), src.height - 1);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double ty = fy - double(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = double(x) * sx;
            const std::size_t x0 = std::min(std::size_t(fx), src.width - 1);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double tx = fx - double(x0);
            const double top = src.at(x0, y0) * (1.0 - tx) + src.at(x1, y0) * tx;
            const double bot = src.at(x0, y1) * (1.0 - tx) + src.at(x1, y1) * tx;
            out.values[y * out_w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    return out;
}

// Five-stop linear ramp: blue, cyan, green, yellow, red at t = 0, .25, .5, .75, 1.
inline std::array<std::uint8_t, 3> heat_color(double t) {
    static constexpr double stops[5][3] = {
        {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * 4.0;
    const std::size_t i = std::min(std::size_t(pos), std::size_t(3));
    const double f = pos - double(i);
    std::array<std::uint8_t, 3> rgb{};
    for (int c = 0; c < 3; ++c) {
        const double v = stops[i][c] * (1.0 - f) + stops[i + 1][c] * f;
        rgb[std::size_t(c)] = std::uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
    }
    return rgb;
}

// Per-pixel blend: out = (1 - alpha) * image + alpha * colormap(value).
inline img::RgbImage render_overlay(const img::RgbImage& image, const ActivationMap& map, double alpha) {
    if (map.width != image.width || map.height != image.height)
        throw std::invalid_argument("render_overlay: map " + std::to_string(map.width) + "x" +
                                    std::to_string(map.height) + " does not match image " +
                                    std::to_string(image.width) + "x" + std::to_string(image.height));
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("render_overlay: alpha must be in [0,1]");
    img::RgbImage out(image.width, image.height);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const auto heat = heat_color(map.values[i]);
        for (std::size_t c = 0; c < 3; ++c) {
            const double v =
                (1.0 - alpha) * double(image.pixels[i * 3 + c]) + alpha * double(heat[c]);
            out.pixels[i * 3 + c] = std::uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

// Row-major argmax; ties resolve to the first occurrence. Returns {x, y}.
inline std::pair<std::size_t, std::size_t> map_argmax(const ActivationMap& map) {
    if (map.values.empty()) throw std::invalid_argument("map_argmax: empty map");
    std::size_t best = 0;
    for (std::size_t i = 1; i < map.values.size(); ++i)
        if (map.values[i] > map.values[best]) best = i;
    return {best % map.width, best / map.width};
}

} // namespace streetctx::cam
