#pragma once

#include "streetctx/csvio.hpp"
#include "streetctx/geo.hpp"
#include "streetctx/rng.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace streetctx::sampler {

// Attribute key that carries a segment's context label.
inline constexpr const char* kContextLabelKey = "street_context";

struct SamplePoint {
    std::string segment_id;
    geo::LatLon location;
    double road_bearing = 0.0; // degrees in [0, 360)
    double fraction = 0.0;     // arc-length parameter in [0, 1]
};

struct CameraHeadingPair {
    double left = 0.0;
    double right = 0.0; // right - left == 90 (mod 360)
};

// One sampled point with its paired left/right views. Both images carry
// the segment's label; status is "ok" unless fetching found no coverage.
struct SampleRecord {
    std::string sample_id;
    std::string segment_id;
    geo::LatLon location;
    double road_bearing = 0.0;
    CameraHeadingPair headings;
    std::string label;
    std::string image_path_left;
    std::string image_path_right;
    std::string status = "ok";
};

inline double normalize_deg(double d) {
    d = std::fmod(d, 360.0);
    if (d < 0.0) d += 360.0;
    return d;
}

inline CameraHeadingPair camera_headings(double road_bearing) {
    if (!std::isfinite(road_bearing))
        throw std::invalid_argument("road bearing is not finite");
    return {normalize_deg(road_bearing - 45.0), normalize_deg(road_bearing + 45.0)};
}

// Uniform draw of n distinct segments (Fisher-Yates prefix over indices),
// consuming draws from the caller's stream.
inline std::vector<geo::StreetSegment> sample_segments(const geo::SegmentCollection& collection,
                                                       std::size_t n, Xoshiro256ss& rng) {
    if (n > collection.size())
        throw std::invalid_argument("cannot sample " + std::to_string(n) + " segments from " +
                                    std::to_string(collection.size()));
    std::vector<std::size_t> idx(collection.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle_prefix(idx, n, rng);
    std::vector<geo::StreetSegment> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(collection.segments()[idx[i]]);
    return out;
}

inline std::vector<geo::StreetSegment> sample_segments(const geo::SegmentCollection& collection,
                                                       std::size_t n, std::uint64_t seed) {
    Xoshiro256ss rng(seed);
    return sample_segments(collection, n, rng);
}

// Point at arc-length fraction t along the segment. The containing edge's
// lat/lon are interpolated linearly; its initial great-circle bearing is
// the road bearing. A point landing exactly on a joint belongs to the
// later edge.
inline SamplePoint point_at_fraction(const geo::StreetSegment& segment, double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::out_of_range("fraction " + std::to_string(t) + " out of [0, 1]");
    const auto& v = segment.vertices();
    std::vector<double> edge_len(v.size() - 1);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        edge_len[i] = geo::haversine_m(v[i], v[i + 1]);
        total += edge_len[i];
    }
    const double target = t * total;

    double cum = 0.0;
    std::size_t edge = edge_len.size() - 1;
    bool within = false;
    for (std::size_t i = 0; i < edge_len.size(); ++i) {
        if (target < cum + edge_len[i]) { edge = i; within = true; break; }
        cum += edge_len[i];
    }
    double u;
    if (within) {
        u = edge_len[edge] > 0.0 ? (target - cum) / edge_len[edge] : 0.0;
        if (u > 1.0) u = 1.0;
    } else {
        // target reached the accumulated total (t == 1, or rounding pushed it
        // past the last joint): the point is exactly the far endpoint.
        u = 1.0;
    }

    const geo::LatLon& a = v[edge];
    const geo::LatLon& b = v[edge + 1];
    SamplePoint p;
    p.segment_id = segment.id();
    p.location = geo::LatLon{a.lat + (b.lat - a.lat) * u, a.lon + (b.lon - a.lon) * u};
    p.road_bearing = geo::initial_bearing_deg(a, b);
    p.fraction = t;
    return p;
}

inline std::string sample_id_for_index(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu", i);
    return buf;
}

// Samples n labeled segments without replacement, one uniform arc-length
// fraction each, and derives the paired camera headings. Stream order per
// seed: first the segment draws, then one fraction per chosen segment.
inline std::vector<SampleRecord> build_manifest(const geo::SegmentCollection& labeled,
                                                std::size_t n, std::uint64_t seed) {
    Xoshiro256ss rng(seed);
    const auto chosen = sample_segments(labeled, n, rng);
    std::vector<SampleRecord> records;
    records.reserve(n);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        const auto& seg = chosen[i];
        const std::string* label = seg.attribute(kContextLabelKey);
        if (!label)
            throw std::invalid_argument("segment '" + seg.id() + "' has no context label");
        const double t = rng.next_double();
        const SamplePoint point = point_at_fraction(seg, t);
        SampleRecord rec;
        rec.sample_id = sample_id_for_index(i);
        rec.segment_id = seg.id();
        rec.location = point.location;
        rec.road_bearing = point.road_bearing;
        rec.headings = camera_headings(point.road_bearing);
        rec.label = *label;
        rec.image_path_left = "images/" + rec.sample_id + "_L.ppm";
        rec.image_path_right = "images/" + rec.sample_id + "_R.ppm";
        records.push_back(std::move(rec));
    }
    return records;
}

// Manifest CSV: two rows per sample point (side L then R), floats with
// 9 significant digits. A tenth "status" column is written only when some
// record is not "ok" (fetch marks dropped samples no_coverage).
inline std::string write_manifest_csv(const std::vector<SampleRecord>& records) {
    bool with_status = false;
    for (const auto& r : records)
        if (r.status != "ok") with_status = true;

    std::vector<std::string> header = {"sample_id", "segment_id", "lat",   "lon",       "road_bearing",
                                       "side",      "heading",    "label", "image_path"};
    if (with_status) header.push_back("status");
    std::string out = csv::join_row(header);
    for (const auto& r : records) {
        for (int side = 0; side < 2; ++side) {
            std::vector<std::string> row = {
                r.sample_id,
                r.segment_id,
                csv::format_float(r.location.lat),
                csv::format_float(r.location.lon),
                csv::format_float(r.road_bearing),
                side == 0 ? "L" : "R",
                csv::format_float(side == 0 ? r.headings.left : r.headings.right),
                r.label,
                side == 0 ? r.image_path_left : r.image_path_right,
            };
            if (with_status) row.push_back(r.status);
            out += csv::join_row(row);
        }
    }
    return out;
}

inline std::vector<SampleRecord> parse_manifest_csv(const std::string& text) {
    const auto rows = csv::parse(text);
    if (rows.empty()) throw std::invalid_argument("manifest: empty");
    const auto& h = rows[0];
    if (h.size() < 9 || h[0] != "sample_id")
        throw std::invalid_argument("manifest: unexpected header");
    const bool with_status = h.size() >= 10 && h[9] == "status";

    std::vector<SampleRecord> records;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() < 9)
            throw std::invalid_argument("manifest row " + std::to_string(i) + ": expected 9+ fields");
        const bool left = row[5] == "L";
        if (!left && row[5] != "R")
            throw std::invalid_argument("manifest row " + std::to_string(i) + ": side must be L or R");
        if (left) {
            SampleRecord rec;
            rec.sample_id = row[0];
            rec.segment_id = row[1];
            rec.location = geo::LatLon{std::stod(row[2]), std::stod(row[3])};
            rec.road_bearing = std::stod(row[4]);
            rec.headings.left = std::stod(row[6]);
            rec.label = row[7];
            rec.image_path_left = row[8];
            if (with_status && row.size() >= 10) rec.status = row[9];
            records.push_back(std::move(rec));
        } else {
            if (records.empty() || records.back().sample_id != row[0])
                throw std::invalid_argument("manifest row " + std::to_string(i) +
                                            ": R side without matching L row");
            records.back().headings.right = std::stod(row[6]);
            records.back().image_path_right = row[8];
        }
    }
    return records;
}

} // namespace streetctx::sampler
