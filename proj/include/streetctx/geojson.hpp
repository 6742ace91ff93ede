#pragma once

#include "streetctx/geo.hpp"

#include <json.hpp>

#include <cstdio>
#include <string>

namespace streetctx::geo {

namespace detail {

inline std::string zero_padded_index(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06zu", i);
    return buf;
}

inline std::string property_to_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

} // namespace detail

// Parses a GeoJSON FeatureCollection of LineStrings (RFC 7946 subset).
// Coordinates are [lon, lat] pairs; every feature becomes one segment.
inline SegmentCollection parse_geojson_streets(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("GeoJSON parse error: ") + e.what());
    }
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection")
        throw std::invalid_argument("GeoJSON: root is not a FeatureCollection");
    const auto features = doc.find("features");
    if (features == doc.end() || !features->is_array())
        throw std::invalid_argument("GeoJSON: missing features array");

    SegmentCollection out;
    for (std::size_t i = 0; i < features->size(); ++i) {
        const auto& f = (*features)[i];
        const std::string where = "feature " + std::to_string(i);
        if (!f.is_object() || f.value("type", "") != "Feature")
            throw std::invalid_argument(where + ": not a Feature");
        const auto geom = f.find("geometry");
        if (geom == f.end() || !geom->is_object() || geom->value("type", "") != "LineString")
            throw std::invalid_argument(where + ": geometry is not LineString");
        const auto coords = geom->find("coordinates");
        if (coords == geom->end() || !coords->is_array())
            throw std::invalid_argument(where + ": missing coordinates");

        std::vector<LatLon> vertices;
        vertices.reserve(coords->size());
        for (std::size_t k = 0; k < coords->size(); ++k) {
            const auto& c = (*coords)[k];
            if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number())
                throw std::invalid_argument(where + " vertex " + std::to_string(k) +
                                            ": coordinate is not a [lon, lat] pair");
            LatLon p{c[1].get<double>(), c[0].get<double>()};
            validate_lat_lon(p, where + " vertex " + std::to_string(k));
            vertices.push_back(p);
        }

        std::string id = detail::zero_padded_index(i);
        std::map<std::string, std::string> attrs;
        const auto props = f.find("properties");
        if (props != f.end() && props->is_object()) {
            for (auto it = props->begin(); it != props->end(); ++it) {
                if (it.key() == "id") id = detail::property_to_string(it.value());
                else attrs[it.key()] = detail::property_to_string(it.value());
            }
        }
        out.add(StreetSegment(std::move(id), std::move(vertices), std::move(attrs)));
    }
    return out;
}

// Serializes back to the same FeatureCollection subset. Doubles use the
// shortest round-trip representation, so parse(serialize(c)) restores
// bit-equal coordinates.
inline std::string serialize_geojson_streets(const SegmentCollection& collection) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& s : collection.segments()) {
        nlohmann::json props;
        props["id"] = s.id();
        for (const auto& [k, v] : s.attributes()) props[k] = v;
        nlohmann::json coords = nlohmann::json::array();
        for (const auto& p : s.vertices()) coords.push_back({p.lon, p.lat});
        features.push_back({{"type", "Feature"},
                            {"properties", std::move(props)},
                            {"geometry", {{"type", "LineString"}, {"coordinates", std::move(coords)}}}});
    }
    nlohmann::json doc{{"type", "FeatureCollection"}, {"features", std::move(features)}};
    return doc.dump();
}

} // namespace streetctx::geo
