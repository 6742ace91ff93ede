#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <streetctx/geo.hpp>
#include <streetctx/geojson.hpp>
#include <streetctx/rng.hpp>

#include "helpers.hpp"

using namespace streetctx;
using geo::LatLon;
using geo::StreetSegment;

namespace {

const char* kTinyCity = R"({
  "type": "FeatureCollection",
  "features": [
    {
      "type": "Feature",
      "properties": {"id": "market_st", "transport": "Throughway", "commercial_frac": 0.8},
      "geometry": {"type": "LineString", "coordinates": [[-122.42, 37.77], [-122.41, 37.78]]}
    }
  ]
})";

geo::SegmentCollection fuzz_collection(Xoshiro256ss& rng, std::size_t count) {
    geo::SegmentCollection coll;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<LatLon> verts;
        double lat = -80.0 + 160.0 * rng.next_double();
        double lon = -170.0 + 340.0 * rng.next_double();
        const std::size_t n = 2 + rng.next_below(4);
        for (std::size_t v = 0; v < n; ++v) {
            verts.push_back({lat, lon});
            lat += 1e-4 + 1e-3 * rng.next_double();
            lon += 1e-4 + 1e-3 * rng.next_double();
        }
        StreetSegment seg("street_" + std::to_string(i), verts);
        if (rng.next_below(2) == 0) seg.set_attribute("transport", "Highway");
        if (rng.next_below(2) == 0) seg.set_attribute("side_use", "Commercial");
        coll.add(std::move(seg));
    }
    return coll;
}

}  // namespace

TEST_CASE("a single LineString feature becomes one segment", "[geojson]") {
    const auto coll = geo::parse_geojson_streets(kTinyCity);
    REQUIRE(coll.size() == 1);
    const auto& seg = coll.segments()[0];
    REQUIRE(seg.id() == "market_st");
    REQUIRE(seg.vertices().size() == 2);
    // GeoJSON stores [lon, lat]; internally we hold {lat, lon}.
    REQUIRE(seg.vertices()[0].lat == 37.77);
    REQUIRE(seg.vertices()[0].lon == -122.42);
    REQUIRE(seg.vertices()[1].lat == 37.78);
    REQUIRE(seg.vertices()[1].lon == -122.41);
    REQUIRE(seg.attribute("transport") != nullptr);
    REQUIRE(*seg.attribute("transport") == "Throughway");
    REQUIRE(seg.attribute("commercial_frac") != nullptr);
    REQUIRE(*seg.attribute("commercial_frac") == "0.8");
}

TEST_CASE("an empty FeatureCollection parses to an empty collection", "[geojson]") {
    const auto coll = geo::parse_geojson_streets(R"({"type":"FeatureCollection","features":[]})");
    REQUIRE(coll.empty());
}

TEST_CASE("features without an id property get zero-padded positional ids", "[geojson]") {
    const std::string two = R"({
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "properties": {},
         "geometry": {"type": "LineString", "coordinates": [[0.0, 0.0], [0.001, 0.0]]}},
        {"type": "Feature", "properties": {},
         "geometry": {"type": "LineString", "coordinates": [[1.0, 1.0], [1.001, 1.0]]}}
      ]
    })";
    const auto coll = geo::parse_geojson_streets(two);
    REQUIRE(coll.size() == 2);
    REQUIRE(coll.segments()[0].id() == "000000");
    REQUIRE(coll.segments()[1].id() == "000001");
}

TEST_CASE("malformed JSON reports a parse error", "[geojson]") {
    REQUIRE_THROWS_WITH(geo::parse_geojson_streets("{ not json"),
                        Catch::Matchers::ContainsSubstring("GeoJSON parse error"));
}

TEST_CASE("a non-FeatureCollection root is rejected", "[geojson]") {
    REQUIRE_THROWS_WITH(geo::parse_geojson_streets(R"({"type":"Feature"})"),
                        Catch::Matchers::ContainsSubstring("not a FeatureCollection"));
    REQUIRE_THROWS_AS(geo::parse_geojson_streets("[1,2,3]"), std::invalid_argument);
}

TEST_CASE("non-LineString geometry is rejected with the feature index", "[geojson]") {
    const std::string mixed = R"({
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "properties": {},
         "geometry": {"type": "LineString", "coordinates": [[0.0, 0.0], [0.001, 0.0]]}},
        {"type": "Feature", "properties": {},
         "geometry": {"type": "Point", "coordinates": [0.0, 0.0]}}
      ]
    })";
    REQUIRE_THROWS_WITH(geo::parse_geojson_streets(mixed),
                        Catch::Matchers::ContainsSubstring("feature 1") &&
                            Catch::Matchers::ContainsSubstring("not LineString"));
}

TEST_CASE("bad coordinate pairs are rejected with feature and vertex indices", "[geojson]") {
    const std::string bad = R"({
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "properties": {},
         "geometry": {"type": "LineString", "coordinates": [[0.0, 0.0], ["x", 1.0]]}}
      ]
    })";
    REQUIRE_THROWS_WITH(geo::parse_geojson_streets(bad),
                        Catch::Matchers::ContainsSubstring("feature 0") &&
                            Catch::Matchers::ContainsSubstring("vertex 1"));
}

TEST_CASE("out-of-range coordinates fail validation during parse", "[geojson]") {
    const std::string bad = R"({
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "properties": {},
         "geometry": {"type": "LineString", "coordinates": [[0.0, 0.0], [0.001, 95.0]]}}
      ]
    })";
    REQUIRE_THROWS_WITH(geo::parse_geojson_streets(bad),
                        Catch::Matchers::ContainsSubstring("latitude"));
}

TEST_CASE("serialize then parse is the identity on fuzzed collections", "[geojson]") {
    Xoshiro256ss rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        const auto original = fuzz_collection(rng, 1 + rng.next_below(12));
        const std::string text = geo::serialize_geojson_streets(original);
        const auto reparsed = geo::parse_geojson_streets(text);
        REQUIRE(reparsed.size() == original.size());
        for (std::size_t i = 0; i < original.size(); ++i) {
            const auto& a = original.segments()[i];
            const auto& b = reparsed.segments()[i];
            REQUIRE(a.id() == b.id());
            REQUIRE(a.vertices().size() == b.vertices().size());
            for (std::size_t v = 0; v < a.vertices().size(); ++v) {
                // Bit-for-bit equality: doubles are emitted with shortest
                // round-trip formatting.
                REQUIRE(a.vertices()[v].lat == b.vertices()[v].lat);
                REQUIRE(a.vertices()[v].lon == b.vertices()[v].lon);
            }
            for (const auto& key : {"transport", "side_use"}) {
                const auto* pa = a.attribute(key);
                const auto* pb = b.attribute(key);
                REQUIRE((pa == nullptr) == (pb == nullptr));
                if (pa != nullptr) REQUIRE(*pa == *pb);
            }
        }
    }
}

TEST_CASE("serialized output is a FeatureCollection with id properties", "[geojson]") {
    geo::SegmentCollection coll;
    StreetSegment seg("alpha", {{37.7, -122.4}, {37.71, -122.41}});
    seg.set_attribute("special", "Park");
    coll.add(std::move(seg));
    const std::string text = geo::serialize_geojson_streets(coll);
    REQUIRE(text.find("\"FeatureCollection\"") != std::string::npos);
    REQUIRE(text.find("\"alpha\"") != std::string::npos);
    REQUIRE(text.find("\"Park\"") != std::string::npos);
}
