#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <streetctx/image.hpp>
#include <streetctx/rng.hpp>

#include "helpers.hpp"

using namespace streetctx;
using img::RgbImage;

namespace {

RgbImage random_image(std::size_t w, std::size_t h, Xoshiro256ss& rng) {
    RgbImage image;
    image.width = w;
    image.height = h;
    image.pixels.resize(w * h * 3);
    for (auto& p : image.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
    return image;
}

}  // namespace

TEST_CASE("a 1x1 white image encodes to the exact byte sequence", "[image]") {
    RgbImage white;
    white.width = 1;
    white.height = 1;
    white.pixels = {255, 255, 255};
    const auto bytes = img::encode_ppm(white);
    const std::string header = "P6\n1 1\n255\n";
    REQUIRE(bytes.size() == header.size() + 3);
    REQUIRE(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
    REQUIRE(bytes[header.size()] == 255);
    REQUIRE(bytes[header.size() + 1] == 255);
    REQUIRE(bytes[header.size() + 2] == 255);
}

TEST_CASE("encode then decode is the identity", "[image]") {
    Xoshiro256ss rng(88);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t w = 1 + rng.next_below(16);
        const std::size_t h = 1 + rng.next_below(16);
        const RgbImage original = random_image(w, h, rng);
        const RgbImage decoded = img::decode_ppm(img::encode_ppm(original));
        REQUIRE(decoded == original);
    }
}

TEST_CASE("pixel accessor addresses row-major interleaved channels", "[image]") {
    RgbImage image;
    image.width = 2;
    image.height = 2;
    image.pixels = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    REQUIRE(image.at(0, 0, 0) == 1);
    REQUIRE(image.at(1, 0, 2) == 6);
    REQUIRE(image.at(0, 1, 0) == 7);
    REQUIRE(image.at(1, 1, 1) == 11);
}

TEST_CASE("non-P6 magic is rejected", "[image]") {
    const std::string gray = "P5\n1 1\n255\n ";
    REQUIRE_THROWS_WITH(img::decode_ppm(std::vector<std::uint8_t>(gray.begin(), gray.end())),
                        Catch::Matchers::ContainsSubstring("unsupported PPM magic 'P5'"));
}

TEST_CASE("non-255 maxval is rejected", "[image]") {
    const std::string deep = "P6\n1 1\n65535\n";
    REQUIRE_THROWS_WITH(img::decode_ppm(std::vector<std::uint8_t>(deep.begin(), deep.end())),
                        Catch::Matchers::ContainsSubstring("maxval must be 255"));
}

TEST_CASE("truncated pixel payloads report progress", "[image]") {
    RgbImage image;
    image.width = 2;
    image.height = 2;
    image.pixels.assign(12, 9);
    auto bytes = img::encode_ppm(image);
    bytes.resize(bytes.size() - 5);
    REQUIRE_THROWS_WITH(img::decode_ppm(bytes),
                        Catch::Matchers::ContainsSubstring("pixel data truncated") &&
                            Catch::Matchers::ContainsSubstring("7 of 12"));
}

TEST_CASE("bad dimensions are rejected", "[image]") {
    const std::string zero = "P6\n0 4\n255\n";
    REQUIRE_THROWS_WITH(img::decode_ppm(std::vector<std::uint8_t>(zero.begin(), zero.end())),
                        Catch::Matchers::ContainsSubstring("bad dimensions"));
    const std::string words = "P6\nwide tall\n255\n";
    REQUIRE_THROWS_AS(img::decode_ppm(std::vector<std::uint8_t>(words.begin(), words.end())),
                      std::invalid_argument);
}

TEST_CASE("resize_nearest replicates pixels upward and strides downward", "[image]") {
    RgbImage two;
    two.width = 2;
    two.height = 2;
    two.pixels = {
        10, 10, 10, 20, 20, 20,   // row 0
        30, 30, 30, 40, 40, 40,   // row 1
    };

    const RgbImage up = img::resize_nearest(two, 4, 4);
    REQUIRE(up.width == 4u);
    REQUIRE(up.height == 4u);
    // floor(i * 2 / 4): indices 0,0,1,1 per axis.
    REQUIRE(up.at(0, 0, 0) == 10);
    REQUIRE(up.at(1, 1, 0) == 10);
    REQUIRE(up.at(2, 0, 0) == 20);
    REQUIRE(up.at(3, 3, 0) == 40);
    REQUIRE(up.at(0, 3, 0) == 30);

    RgbImage four;
    four.width = 4;
    four.height = 1;
    four.pixels = {0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
    const RgbImage down = img::resize_nearest(four, 2, 1);
    // floor(i * 4 / 2): picks source columns 0 and 2.
    REQUIRE(down.at(0, 0, 0) == 0);
    REQUIRE(down.at(1, 0, 0) == 2);
}

TEST_CASE("resize_nearest at identical dimensions is the identity", "[image]") {
    Xoshiro256ss rng(3);
    const RgbImage image = random_image(5, 7, rng);
    REQUIRE(img::resize_nearest(image, 5, 7) == image);
}

TEST_CASE("resize_nearest rejects empty targets", "[image]") {
    Xoshiro256ss rng(4);
    const RgbImage image = random_image(2, 2, rng);
    REQUIRE_THROWS_AS(img::resize_nearest(image, 0, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(img::resize_nearest(image, 2, 0), std::invalid_argument);
}
