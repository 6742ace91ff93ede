#pragma once

// Shared utilities for the test suite: tolerance metrics, finite-difference
// gradient checks, deterministic fixtures, a small silhouette scorer, binary
// shapefile construction, and helpers for driving the CLI as a subprocess.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <sys/wait.h>

#include <streetctx/fsio.hpp>
#include <streetctx/geo.hpp>
#include <streetctx/hash.hpp>
#include <streetctx/labeler.hpp>
#include <streetctx/rng.hpp>
#include <streetctx/sampler.hpp>
#include <streetctx/tensor.hpp>

namespace testutil {

// ---------------------------------------------------------------------------
// numeric comparisons
// ---------------------------------------------------------------------------

// Relative error with an absolute floor of 1, so values near zero are judged
// on absolute error instead of exploding the denominator.
inline double rel_err(double analytic, double numeric) {
    const double scale = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / scale;
}

// Central finite difference of a scalar-valued function with respect to one
// mutable slot. The slot is restored before returning.
template <typename LossFn>
double central_diff(LossFn&& loss, double& slot, double eps = 1e-5) {
    const double saved = slot;
    slot = saved + eps;
    const double hi = loss();
    slot = saved - eps;
    const double lo = loss();
    slot = saved;
    return (hi - lo) / (2.0 * eps);
}

// Worst-case rel_err between an analytic gradient tensor and central finite
// differences of `loss` taken through every element of `arg`.
template <typename LossFn>
double max_grad_rel_err(LossFn&& loss,
                        streetctx::nn::Tensor& arg,
                        const streetctx::nn::Tensor& analytic,
                        double eps = 1e-5) {
    if (analytic.numel() != arg.numel()) {
        throw std::invalid_argument("max_grad_rel_err: gradient shape mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < arg.numel(); ++i) {
        const double fd = central_diff(loss, arg.data()[i], eps);
        worst = std::max(worst, rel_err(analytic.values()[i], fd));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// clustering quality
// ---------------------------------------------------------------------------

// Mean silhouette coefficient over all points. `points` is row-major n x dim.
// Points in singleton clusters score 0 by convention.
inline double silhouette(const std::vector<double>& points,
                         std::size_t dim,
                         const std::vector<std::size_t>& labels) {
    const std::size_t n = labels.size();
    if (dim == 0 || points.size() != n * dim) {
        throw std::invalid_argument("silhouette: shape mismatch");
    }
    const std::size_t k = n == 0 ? 0 : 1 + *std::max_element(labels.begin(), labels.end());
    std::vector<std::size_t> cluster_size(k, 0);
    for (std::size_t lbl : labels) cluster_size[lbl]++;

    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double d = points[i * dim + c] - points[j * dim + c];
            s += d * d;
        }
        return std::sqrt(s);
    };

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (cluster_size[labels[i]] <= 1) continue;  // s(i) = 0
        std::vector<double> mean_to(k, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            mean_to[labels[j]] += dist(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t denom = (c == labels[i]) ? cluster_size[c] - 1 : cluster_size[c];
            if (denom > 0) mean_to[c] /= static_cast<double>(denom);
        }
        const double a = mean_to[labels[i]];
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            if (c != labels[i] && cluster_size[c] > 0) b = std::min(b, mean_to[c]);
        }
        total += (b - a) / std::max(a, b);
    }
    return n == 0 ? 0.0 : total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// filesystem + subprocess
// ---------------------------------------------------------------------------

#ifdef STREETCTX_TEST_TMP
inline std::filesystem::path test_tmp_root() { return STREETCTX_TEST_TMP; }
#else
inline std::filesystem::path test_tmp_root() {
    return std::filesystem::temp_directory_path() / "streetctx_tests";
}
#endif

// A fresh, empty directory under the test scratch root.
inline std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = test_tmp_root() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string sha256_file(const std::filesystem::path& path) {
    return streetctx::hash::sha256_hex(streetctx::io::read_file_bytes(path.string()));
}

// Order-independent digest of every regular file under a directory.
inline std::string sha256_tree(const std::filesystem::path& root) {
    std::vector<std::string> lines;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), root).generic_string();
        lines.push_back(rel + '\0' + sha256_file(entry.path()) + '\n');
    }
    std::sort(lines.begin(), lines.end());
    std::string joined;
    for (const auto& line : lines) joined += line;
    return streetctx::hash::sha256_hex(joined);
}

struct CliResult {
    int exit_code = -1;
    std::string output;  // merged stdout + stderr

    bool contains(const std::string& needle) const {
        return output.find(needle) != std::string::npos;
    }
};

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    out += "'";
    return out;
}

// Runs the CLI binary with `args` appended, in `workdir`, capturing the merged
// output. The binary path comes from the build system.
inline CliResult run_cli(const std::string& args, const std::filesystem::path& workdir) {
#ifndef STREETCTX_CLI_PATH
    throw std::runtime_error("STREETCTX_CLI_PATH is not defined");
#else
    std::filesystem::create_directories(workdir);
    const auto log_path = workdir / ".cli_output.log";
    const std::string cmd = "cd " + shell_quote(workdir.string()) + " && " +
                            shell_quote(STREETCTX_CLI_PATH) + " " + args + " > " +
                            shell_quote(log_path.string()) + " 2>&1";
    const int raw = std::system(cmd.c_str());
    CliResult result;
    if (raw == -1) {
        result.exit_code = -1;
    } else if (WIFEXITED(raw)) {
        result.exit_code = WEXITSTATUS(raw);
    } else {
        result.exit_code = 128;
    }
    if (std::filesystem::exists(log_path)) {
        result.output = streetctx::io::read_file_text(log_path.string());
    }
    return result;
#endif
}

// ---------------------------------------------------------------------------
// fixtures
// ---------------------------------------------------------------------------

// Deterministic labeled street network: `count` three-vertex segments laid
// out on a coordinate lattice, each tagged with a context label cycling
// through the full eleven-name catalog.
inline streetctx::geo::SegmentCollection fixture_city(std::size_t count) {
    using streetctx::geo::LatLon;
    streetctx::geo::SegmentCollection city;
    for (std::size_t i = 0; i < count; ++i) {
        const double lat = 37.70 + 0.001 * static_cast<double>(i % 97);
        const double lon = -122.45 + 0.002 * static_cast<double>(i / 97);
        const std::vector<LatLon> verts = {
            {lat, lon},
            {lat + 0.0003, lon + 0.0007},
            {lat + 0.0004, lon + 0.0016},
        };
        char id[32];
        std::snprintf(id, sizeof(id), "seg_%04zu", i);
        streetctx::geo::StreetSegment seg(id, verts);
        seg.set_attribute(streetctx::sampler::kContextLabelKey,
                          streetctx::labeler::kContextNames[i % streetctx::labeler::kContextCount]);
        city.add(std::move(seg));
    }
    return city;
}

// ---------------------------------------------------------------------------
// shapefile construction (little-endian host assumed for double bytes)
// ---------------------------------------------------------------------------

inline void put_be32(std::vector<unsigned char>& out, std::size_t pos, std::uint32_t v) {
    out[pos] = static_cast<unsigned char>((v >> 24) & 0xFF);
    out[pos + 1] = static_cast<unsigned char>((v >> 16) & 0xFF);
    out[pos + 2] = static_cast<unsigned char>((v >> 8) & 0xFF);
    out[pos + 3] = static_cast<unsigned char>(v & 0xFF);
}

inline void push_le32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

inline void push_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>(v & 0xFF));
}

inline void push_le_double(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
    }
}

// One PolyLine record: parts hold (lon, lat) pairs in file order.
struct ShpRecord {
    std::uint32_t number = 1;
    std::vector<std::vector<std::pair<double, double>>> parts;
};

inline std::vector<unsigned char> write_shapefile(const std::vector<ShpRecord>& records) {
    std::vector<unsigned char> out(100, 0);
    put_be32(out, 0, 9994);  // file code

    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    bool have_point = false;
    for (const auto& rec : records) {
        for (const auto& part : rec.parts) {
            for (const auto& [x, y] : part) {
                if (!have_point) {
                    min_x = max_x = x;
                    min_y = max_y = y;
                    have_point = true;
                } else {
                    min_x = std::min(min_x, x);
                    max_x = std::max(max_x, x);
                    min_y = std::min(min_y, y);
                    max_y = std::max(max_y, y);
                }
            }
        }
    }

    // header: version 1000 LE @28, shape type 3 LE @32, bbox @36..67
    out[28] = 0xE8;
    out[29] = 0x03;
    out[32] = 0x03;
    {
        std::vector<unsigned char> bbox;
        push_le_double(bbox, min_x);
        push_le_double(bbox, min_y);
        push_le_double(bbox, max_x);
        push_le_double(bbox, max_y);
        std::copy(bbox.begin(), bbox.end(), out.begin() + 36);
    }

    for (const auto& rec : records) {
        std::size_t num_points = 0;
        for (const auto& part : rec.parts) num_points += part.size();
        const std::uint32_t content_bytes =
            static_cast<std::uint32_t>(44 + 4 * rec.parts.size() + 16 * num_points);

        push_be32(out, rec.number);
        push_be32(out, content_bytes / 2);  // length in 16-bit words

        push_le32(out, 3);  // shape type
        double rmin_x = 0, rmin_y = 0, rmax_x = 0, rmax_y = 0;
        bool first = true;
        for (const auto& part : rec.parts) {
            for (const auto& [x, y] : part) {
                if (first) {
                    rmin_x = rmax_x = x;
                    rmin_y = rmax_y = y;
                    first = false;
                } else {
                    rmin_x = std::min(rmin_x, x);
                    rmax_x = std::max(rmax_x, x);
                    rmin_y = std::min(rmin_y, y);
                    rmax_y = std::max(rmax_y, y);
                }
            }
        }
        push_le_double(out, rmin_x);
        push_le_double(out, rmin_y);
        push_le_double(out, rmax_x);
        push_le_double(out, rmax_y);
        push_le32(out, static_cast<std::uint32_t>(rec.parts.size()));
        push_le32(out, static_cast<std::uint32_t>(num_points));
        std::uint32_t offset = 0;
        for (const auto& part : rec.parts) {
            push_le32(out, offset);
            offset += static_cast<std::uint32_t>(part.size());
        }
        for (const auto& part : rec.parts) {
            for (const auto& [x, y] : part) {
                push_le_double(out, x);
                push_le_double(out, y);
            }
        }
    }

    put_be32(out, 24, static_cast<std::uint32_t>(out.size() / 2));  // file length in words
    return out;
}

}  // namespace testutil
