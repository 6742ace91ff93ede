#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace streetctx::img {

// Row-major 8-bit RGB raster.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels; // 3 * width * height

    RgbImage() = default;
    RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(3 * w * h, 0) {}

    std::uint8_t& at(std::size_t x, std::size_t y, int channel) {
        return pixels[(y * width + x) * 3 + channel];
    }
    std::uint8_t at(std::size_t x, std::size_t y, int channel) const {
        return pixels[(y * width + x) * 3 + channel];
    }

    bool operator==(const RgbImage& o) const {
        return width == o.width && height == o.height && pixels == o.pixels;
    }
};

// Binary PPM (P6), maxval 255, header exactly "P6\n{w} {h}\n255\n".
inline std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

inline RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto read_token = [&]() -> std::string {
        while (pos < bytes.size() && (bytes[pos] == ' ' || bytes[pos] == '\n' ||
                                      bytes[pos] == '\t' || bytes[pos] == '\r'))
            ++pos;
        std::string tok;
        while (pos < bytes.size() && bytes[pos] != ' ' && bytes[pos] != '\n' &&
               bytes[pos] != '\t' && bytes[pos] != '\r')
            tok += static_cast<char>(bytes[pos++]);
        return tok;
    };

    const std::string magic = read_token();
    if (magic != "P6") throw std::invalid_argument("unsupported PPM magic '" + magic + "'");
    const std::string w_tok = read_token(), h_tok = read_token(), max_tok = read_token();
    std::size_t w = 0, h = 0;
    try {
        w = std::stoul(w_tok);
        h = std::stoul(h_tok);
    } catch (const std::exception&) {
        throw std::invalid_argument("PPM: bad dimensions '" + w_tok + " " + h_tok + "'");
    }
    if (w == 0 || h == 0)
        throw std::invalid_argument("PPM: bad dimensions '" + w_tok + " " + h_tok + "'");
    if (max_tok != "255") throw std::invalid_argument("PPM: maxval must be 255, got '" + max_tok + "'");
    if (pos >= bytes.size() || bytes[pos] != '\n')
        throw std::invalid_argument("PPM: header must end with a newline");
    ++pos;

    const std::size_t need = 3 * w * h;
    if (bytes.size() - pos < need)
        throw std::invalid_argument("PPM: pixel data truncated (" +
                                    std::to_string(bytes.size() - pos) + " of " +
                                    std::to_string(need) + " bytes)");
    RgbImage image(w, h);
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
              bytes.begin() + static_cast<std::ptrdiff_t>(pos + need), image.pixels.begin());
    return image;
}

// Nearest-neighbour resize; source index floor(i * src / dst).
inline RgbImage resize_nearest(const RgbImage& src, std::size_t w, std::size_t h) {
    if (w == 0 || h == 0) throw std::invalid_argument("resize: zero output dims");
    if (w == src.width && h == src.height) return src;
    RgbImage out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = y * src.height / h;
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = x * src.width / w;
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = src.at(sx, sy, c);
        }
    }
    return out;
}

} // namespace streetctx::img
