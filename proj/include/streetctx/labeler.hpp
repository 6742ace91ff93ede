#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace streetctx::labeler {

// The San Francisco street-context taxonomy. Codes are stable and
// alphabetical; serialized forms always use the names below.
enum class StreetContext : int {
    Alley = 0,
    CommercialThroughway = 1,
    DowntownCommercial = 2,
    DowntownResidential = 3,
    Highway = 4,
    HighwayRamp = 5,
    Industrial = 6,
    NeighborhoodCommercial = 7,
    NeighborhoodResidential = 8,
    Park = 9,
    ResidentialThroughway = 10,
};

inline constexpr int kContextCount = 11;

inline constexpr std::array<const char*, kContextCount> kContextNames = {
    "Alley",
    "CommercialThroughway",
    "DowntownCommercial",
    "DowntownResidential",
    "Highway",
    "HighwayRamp",
    "Industrial",
    "NeighborhoodCommercial",
    "NeighborhoodResidential",
    "Park",
    "ResidentialThroughway",
};

inline const char* to_string(StreetContext c) {
    return kContextNames[static_cast<int>(c)];
}

inline StreetContext context_from_string(const std::string& name) {
    for (int i = 0; i < kContextCount; ++i)
        if (name == kContextNames[i]) return static_cast<StreetContext>(i);
    throw std::invalid_argument("unknown street context '" + name + "'");
}

enum class SideUse { Commercial, Residential, Mixed, None };
enum class Transport { Throughway, Highway, HighwayRamp, Downtown, Neighborhood };
enum class Special { None, Alley, Park, Industrial };

inline SideUse side_use_from_string(const std::string& s) {
    if (s == "Commercial") return SideUse::Commercial;
    if (s == "Residential") return SideUse::Residential;
    if (s == "Mixed") return SideUse::Mixed;
    if (s == "None" || s.empty()) return SideUse::None;
    throw std::invalid_argument("unknown side use '" + s + "'");
}

inline Transport transport_from_string(const std::string& s) {
    if (s == "Throughway") return Transport::Throughway;
    if (s == "Highway") return Transport::Highway;
    if (s == "HighwayRamp") return Transport::HighwayRamp;
    if (s == "Downtown") return Transport::Downtown;
    if (s == "Neighborhood") return Transport::Neighborhood;
    throw std::invalid_argument("unknown transport context '" + s + "'");
}

inline Special special_from_string(const std::string& s) {
    if (s == "None" || s.empty()) return Special::None;
    if (s == "Alley") return Special::Alley;
    if (s == "Park") return Special::Park;
    if (s == "Industrial") return Special::Industrial;
    throw std::invalid_argument("unknown special condition '" + s + "'");
}

struct SegmentAttributes {
    SideUse side_use = SideUse::None;
    Transport transport = Transport::Neighborhood;
    Special special = Special::None;
    std::optional<double> commercial_frac;
};

// Stage 1: side use from the fraction of commercial side parcels.
// Threshold is inclusive on the commercial side.
inline SideUse derive_side_use(double commercial_frac, double threshold = 0.5) {
    if (!(commercial_frac >= 0.0 && commercial_frac <= 1.0))
        throw std::out_of_range("commercial fraction " + std::to_string(commercial_frac) +
                                " out of [0, 1]");
    return commercial_frac >= threshold ? SideUse::Commercial : SideUse::Residential;
}

// The three-stage rule scheme as a total function. Precedence:
//   1. special conditions override everything,
//   2. highway-class transport overrides side use,
//   3. otherwise side use x transport, with Mixed treated as Commercial
//      and None as Residential (low-confidence fallbacks).
inline StreetContext classify_street(const SegmentAttributes& attrs) {
    switch (attrs.special) {
        case Special::Alley: return StreetContext::Alley;
        case Special::Park: return StreetContext::Park;
        case Special::Industrial: return StreetContext::Industrial;
        case Special::None: break;
    }
    if (attrs.transport == Transport::Highway) return StreetContext::Highway;
    if (attrs.transport == Transport::HighwayRamp) return StreetContext::HighwayRamp;

    const bool commercial =
        attrs.side_use == SideUse::Commercial || attrs.side_use == SideUse::Mixed;
    switch (attrs.transport) {
        case Transport::Throughway:
            return commercial ? StreetContext::CommercialThroughway
                              : StreetContext::ResidentialThroughway;
        case Transport::Downtown:
            return commercial ? StreetContext::DowntownCommercial
                              : StreetContext::DowntownResidential;
        default:
            return commercial ? StreetContext::NeighborhoodCommercial
                              : StreetContext::NeighborhoodResidential;
    }
}

// True when classify_street had to fall back on a Mixed/None side use and
// the result should be flagged low-confidence.
inline bool is_low_confidence(const SegmentAttributes& attrs) {
    if (attrs.special != Special::None) return false;
    if (attrs.transport == Transport::Highway || attrs.transport == Transport::HighwayRamp)
        return false;
    return attrs.side_use == SideUse::Mixed || attrs.side_use == SideUse::None;
}

struct CityProfile {
    std::string name;
    std::vector<StreetContext> catalog;

    bool contains(StreetContext c) const {
        for (auto x : catalog)
            if (x == c) return true;
        return false;
    }
};

inline CityProfile context_catalog(const std::string& profile) {
    CityProfile p;
    p.name = profile;
    if (profile == "SanFrancisco") {
        for (int i = 0; i < kContextCount; ++i) p.catalog.push_back(static_cast<StreetContext>(i));
    } else if (profile == "Boston") {
        for (int i = 0; i < kContextCount; ++i)
            if (static_cast<StreetContext>(i) != StreetContext::DowntownResidential)
                p.catalog.push_back(static_cast<StreetContext>(i));
    } else {
        throw std::invalid_argument("unknown city profile '" + profile +
                                    "' (known: SanFrancisco, Boston)");
    }
    return p;
}

inline CityProfile custom_catalog(std::vector<StreetContext> contexts,
                                  const std::string& name = "Custom") {
    if (contexts.empty()) throw std::invalid_argument("custom catalog must be non-empty");
    return CityProfile{name, std::move(contexts)};
}

// Guards against labels a city's catalog does not contain. The one known
// remap is DowntownResidential -> DowntownCommercial under Boston (nearest
// downtown class); anything else out of catalog is an error.
inline StreetContext remap_to_profile(StreetContext label, const CityProfile& profile) {
    if (profile.contains(label)) return label;
    if (label == StreetContext::DowntownResidential &&
        profile.contains(StreetContext::DowntownCommercial))
        return StreetContext::DowntownCommercial;
    throw std::invalid_argument(std::string("label '") + to_string(label) +
                                "' not mappable into profile '" + profile.name + "'");
}

} // namespace streetctx::labeler
