#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace streetctx::geo {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;

    bool operator==(const LatLon& o) const { return lat == o.lat && lon == o.lon; }
};

inline void validate_lat_lon(const LatLon& p, const std::string& where) {
    if (!std::isfinite(p.lat) || !std::isfinite(p.lon))
        throw std::invalid_argument(where + ": coordinate is not finite");
    if (p.lat < -90.0 || p.lat > 90.0)
        throw std::invalid_argument(where + ": latitude " + std::to_string(p.lat) + " out of [-90, 90]");
    if (p.lon < -180.0 || p.lon > 180.0)
        throw std::invalid_argument(where + ": longitude " + std::to_string(p.lon) + " out of [-180, 180]");
}

// Great-circle distance on a sphere of radius kEarthRadiusM.
inline double haversine_m(const LatLon& a, const LatLon& b) {
    const double la1 = deg2rad(a.lat), la2 = deg2rad(b.lat);
    const double dphi = deg2rad(b.lat - a.lat);
    const double dlam = deg2rad(b.lon - a.lon);
    const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlam / 2.0);
    const double h = s1 * s1 + std::cos(la1) * std::cos(la2) * s2 * s2;
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

// Initial great-circle bearing from a to b, degrees clockwise from north
// in [0, 360).
inline double initial_bearing_deg(const LatLon& a, const LatLon& b) {
    const double la1 = deg2rad(a.lat), la2 = deg2rad(b.lat);
    const double dlam = deg2rad(b.lon - a.lon);
    const double y = std::sin(dlam) * std::cos(la2);
    const double x = std::cos(la1) * std::sin(la2) - std::sin(la1) * std::cos(la2) * std::cos(dlam);
    double deg = rad2deg(std::atan2(y, x));
    deg = std::fmod(deg, 360.0);
    if (deg < 0.0) deg += 360.0;
    return deg;
}

class StreetSegment {
public:
    StreetSegment(std::string id, std::vector<LatLon> vertices,
                  std::map<std::string, std::string> attributes = {})
        : id_(std::move(id)), vertices_(std::move(vertices)), attributes_(std::move(attributes)) {
        if (vertices_.size() < 2)
            throw std::invalid_argument("segment '" + id_ + "': needs at least 2 vertices");
        for (std::size_t i = 0; i < vertices_.size(); ++i) {
            validate_lat_lon(vertices_[i], "segment '" + id_ + "' vertex " + std::to_string(i));
            if (i > 0 && vertices_[i] == vertices_[i - 1])
                throw std::invalid_argument("segment '" + id_ + "': repeated vertex at index " +
                                            std::to_string(i));
        }
    }

    const std::string& id() const { return id_; }
    const std::vector<LatLon>& vertices() const { return vertices_; }
    const std::map<std::string, std::string>& attributes() const { return attributes_; }

    void set_attribute(const std::string& key, const std::string& value) {
        attributes_[key] = value;
    }

    const std::string* attribute(const std::string& key) const {
        auto it = attributes_.find(key);
        return it == attributes_.end() ? nullptr : &it->second;
    }

private:
    std::string id_;
    std::vector<LatLon> vertices_;
    std::map<std::string, std::string> attributes_;
};

// WGS84 throughout; re-projection is the caller's job.
class SegmentCollection {
public:
    SegmentCollection() = default;

    explicit SegmentCollection(std::vector<StreetSegment> segments) {
        for (auto& s : segments) add(std::move(s));
    }

    void add(StreetSegment segment) {
        for (const auto& s : segments_)
            if (s.id() == segment.id())
                throw std::invalid_argument("duplicate segment id '" + segment.id() + "'");
        segments_.push_back(std::move(segment));
    }

    const std::vector<StreetSegment>& segments() const { return segments_; }
    std::vector<StreetSegment>& segments() { return segments_; }
    std::size_t size() const { return segments_.size(); }
    bool empty() const { return segments_.empty(); }

private:
    std::vector<StreetSegment> segments_;
};

inline double polyline_length_m(const StreetSegment& segment) {
    double total = 0.0;
    const auto& v = segment.vertices();
    for (std::size_t i = 1; i < v.size(); ++i) total += haversine_m(v[i - 1], v[i]);
    return total;
}

} // namespace streetctx::geo
