#pragma once

#include "streetctx/csvio.hpp"
#include "streetctx/geo.hpp"

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace streetctx::geo {

namespace shp_detail {

inline std::uint32_t read_u32_be(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline std::uint32_t read_u32_le(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
           (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline double read_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

} // namespace shp_detail

// Parses the main (.shp) file of an ESRI shapefile, PolyLine records only.
// Multi-part records are split into one segment per part with id
// "{record}_{part}" (record number as stored, part index from 0). The
// optional sidecar CSV (header record_index,key,value) attaches attributes
// to every part of the named record.
inline SegmentCollection parse_shapefile_polylines(const std::vector<unsigned char>& bytes,
                                                   const std::string& labels_csv = "") {
    using namespace shp_detail;
    if (bytes.size() < 100 || read_u32_be(bytes.data()) != 9994u)
        throw std::invalid_argument("not a shapefile");
    const std::uint32_t file_shape_type = read_u32_le(bytes.data() + 32);
    if (file_shape_type != 3u)
        throw std::invalid_argument("unsupported shape type " + std::to_string(file_shape_type) +
                                    " (only PolyLine, type 3)");

    // Sidecar attributes keyed by record number.
    std::map<std::uint32_t, std::map<std::string, std::string>> sidecar;
    if (!labels_csv.empty()) {
        const auto rows = csv::parse(labels_csv);
        if (rows.empty() || rows[0] != std::vector<std::string>{"record_index", "key", "value"})
            throw std::invalid_argument("labels CSV: expected header record_index,key,value");
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() != 3)
                throw std::invalid_argument("labels CSV row " + std::to_string(i) + ": expected 3 fields");
            sidecar[static_cast<std::uint32_t>(std::stoul(rows[i][0]))][rows[i][1]] = rows[i][2];
        }
    }

    SegmentCollection out;
    std::size_t pos = 100;
    while (pos < bytes.size()) {
        if (pos + 8 > bytes.size())
            throw std::invalid_argument("record header truncated at byte " + std::to_string(pos));
        const std::uint32_t record_number = read_u32_be(bytes.data() + pos);
        const std::uint32_t content_words = read_u32_be(bytes.data() + pos + 4);
        const std::size_t content_bytes = std::size_t(content_words) * 2;
        pos += 8;
        const std::string rec = "record " + std::to_string(record_number);
        if (pos + content_bytes > bytes.size())
            throw std::invalid_argument(rec + ": truncated");
        const unsigned char* c = bytes.data() + pos;

        if (content_bytes < 4) throw std::invalid_argument(rec + ": truncated");
        const std::uint32_t rec_type = read_u32_le(c);
        if (rec_type != 3u)
            throw std::invalid_argument(rec + ": unsupported shape type " + std::to_string(rec_type));
        // shape type + box + numParts + numPoints
        if (content_bytes < 4 + 32 + 4 + 4) throw std::invalid_argument(rec + ": truncated");
        const std::uint32_t num_parts = read_u32_le(c + 36);
        const std::uint32_t num_points = read_u32_le(c + 40);
        const std::size_t need = 44 + std::size_t(num_parts) * 4 + std::size_t(num_points) * 16;
        if (content_bytes < need) throw std::invalid_argument(rec + ": truncated");

        std::vector<std::uint32_t> parts(num_parts);
        for (std::uint32_t i = 0; i < num_parts; ++i) parts[i] = read_u32_le(c + 44 + i * 4);
        const unsigned char* pts = c + 44 + num_parts * 4;

        for (std::uint32_t part = 0; part < num_parts; ++part) {
            const std::uint32_t begin = parts[part];
            const std::uint32_t end = (part + 1 < num_parts) ? parts[part + 1] : num_points;
            if (begin >= end || end > num_points)
                throw std::invalid_argument(rec + ": bad part index " + std::to_string(begin));
            std::vector<LatLon> vertices;
            vertices.reserve(end - begin);
            for (std::uint32_t i = begin; i < end; ++i) {
                const double lon = read_f64_le(pts + std::size_t(i) * 16);
                const double lat = read_f64_le(pts + std::size_t(i) * 16 + 8);
                LatLon p{lat, lon};
                validate_lat_lon(p, rec + " point " + std::to_string(i));
                vertices.push_back(p);
            }
            std::map<std::string, std::string> attrs;
            if (auto it = sidecar.find(record_number); it != sidecar.end()) attrs = it->second;
            out.add(StreetSegment(std::to_string(record_number) + "_" + std::to_string(part),
                                  std::move(vertices), std::move(attrs)));
        }
        pos += content_bytes;
    }
    return out;
}

} // namespace streetctx::geo
