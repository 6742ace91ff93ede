#pragma once

#include "streetctx/image.hpp"
#include "streetctx/labeler.hpp"
#include "streetctx/rng.hpp"

#include <array>
#include <cstdint>

namespace streetctx::img {

// Deterministic stand-in for street-view imagery: seeded background noise
// with a class-discriminative motif filling one quadrant. Quadrant index is
// the class code mod 4 (0 top-left, 1 top-right, 2 bottom-left, 3
// bottom-right); the palette is fixed per class.
struct SynthMotif {
    std::size_t x0, y0, x1, y1; // half-open pixel box
};

inline constexpr std::array<std::array<std::uint8_t, 3>, labeler::kContextCount> kSynthPalette = {{
    {150, 40, 40},   // Alley: brick red
    {230, 140, 30},  // CommercialThroughway: orange
    {60, 90, 200},   // DowntownCommercial: steel blue
    {140, 60, 180},  // DowntownResidential: purple
    {70, 70, 75},    // Highway: dark gray band
    {205, 205, 210}, // HighwayRamp: light gray
    {120, 80, 40},   // Industrial: brown
    {230, 220, 60},  // NeighborhoodCommercial: yellow
    {60, 200, 200},  // NeighborhoodResidential: cyan
    {40, 180, 60},   // Park: green
    {240, 120, 160}, // ResidentialThroughway: pink
}};

inline int synth_quadrant(labeler::StreetContext label) {
    return static_cast<int>(label) % 4;
}

inline SynthMotif synth_motif_box(labeler::StreetContext label, std::size_t width,
                                  std::size_t height) {
    const int q = synth_quadrant(label);
    const std::size_t mx = width / 2, my = height / 2;
    SynthMotif box;
    box.x0 = (q % 2 == 0) ? 0 : mx;
    box.x1 = (q % 2 == 0) ? mx : width;
    box.y0 = (q < 2) ? 0 : my;
    box.y1 = (q < 2) ? my : height;
    return box;
}

inline RgbImage synth_render(labeler::StreetContext label, std::uint64_t seed,
                             std::size_t width, std::size_t height) {
    const int code = static_cast<int>(label);
    // Per-(label, seed) stream so same-seed renders of different classes
    // do not share noise.
    Xoshiro256ss rng(seed ^ (static_cast<std::uint64_t>(code + 1) * 0x9E3779B97F4A7C15ull));

    RgbImage image(width, height);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::uint8_t v = static_cast<std::uint8_t>(100 + rng.next_below(56));
            for (int c = 0; c < 3; ++c) image.at(x, y, c) = v;
        }

    const auto box = synth_motif_box(label, width, height);
    const auto& base = kSynthPalette[static_cast<std::size_t>(code)];
    const std::size_t stripe = 2 + static_cast<std::size_t>(code % 5);
    for (std::size_t y = box.y0; y < box.y1; ++y) {
        const bool dark = (y % (stripe + 1)) == 0;
        for (std::size_t x = box.x0; x < box.x1; ++x) {
            const int jitter = static_cast<int>(rng.next_below(17)) - 8;
            for (int c = 0; c < 3; ++c) {
                int v = base[static_cast<std::size_t>(c)];
                if (dark) v = v * 6 / 10;
                v += jitter;
                if (v < 0) v = 0;
                if (v > 255) v = 255;
                image.at(x, y, c) = static_cast<std::uint8_t>(v);
            }
        }
    }
    return image;
}

} // namespace streetctx::img
