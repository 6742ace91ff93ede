#pragma once

#include "streetctx/fsio.hpp"
#include "streetctx/hash.hpp"
#include "streetctx/image.hpp"
#include "streetctx/sampler.hpp"
#include "streetctx/synth.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace streetctx::imagery {

struct ImageRequest {
    geo::LatLon location;
    double heading = 0.0; // degrees in [0, 360)
    int fov = 90;
    std::size_t width = 640;
    std::size_t height = 640;
};

inline void validate_request(const ImageRequest& req) {
    geo::validate_lat_lon(req.location, "image request");
    if (!(req.heading >= 0.0 && req.heading < 360.0))
        throw std::invalid_argument("image request: heading " + std::to_string(req.heading) +
                                    " out of [0, 360)");
    if (req.fov != 90) throw std::invalid_argument("image request: fov must be 90");
    if (req.width == 0 || req.height == 0 || req.width > 640 || req.height > 640)
        throw std::invalid_argument("image request: size must be within 640x640");
}

// Canonical query string; fixed field order and decimal places so equal
// requests hash to equal cache keys.
inline std::string canonical_request(const ImageRequest& req) {
    validate_request(req);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "size=%zux%zu&location=%.6f,%.6f&heading=%.1f&fov=90",
                  req.width, req.height, req.location.lat, req.location.lon, req.heading);
    return buf;
}

inline std::string cache_key(const ImageRequest& req) {
    return hash::sha256_hex(canonical_request(req));
}

// ---------------------------------------------------------------------------
// Errors

struct ImageryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct HttpStatusError : ImageryError {
    HttpStatusError(int status_, const std::string& request_echo)
        : ImageryError("provider returned HTTP " + std::to_string(status_) + " for " + request_echo),
          status(status_) {}
    int status;
};

struct AuthError : HttpStatusError {
    using HttpStatusError::HttpStatusError;
};

// Quota or rate error; safe to retry later.
struct RetryableError : HttpStatusError {
    using HttpStatusError::HttpStatusError;
};

struct DecodeError : ImageryError {
    using ImageryError::ImageryError;
};

// The provider has no imagery at the requested location.
struct NoCoverageError : ImageryError {
    using ImageryError::ImageryError;
};

// ---------------------------------------------------------------------------
// Providers

// What a provider needs to serve one image. Live providers use only the
// request; the synthetic provider also needs the label.
struct ProviderRequest {
    ImageRequest image;
    std::string label;
    std::string sample_id;
    std::string side; // "L" or "R"
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string name() const = 0;
    // Returns the raw payload bytes (reference path: binary PPM).
    virtual std::vector<std::uint8_t> fetch(const ProviderRequest& req,
                                            const std::string& api_key) = 0;
};

// Offline provider rendering deterministic class-discriminative images.
// Per-image seed = base seed XOR the first 8 bytes (big-endian) of the
// request's cache key, so every request gets its own noise.
class SyntheticProvider : public Provider {
public:
    explicit SyntheticProvider(std::uint64_t base_seed) : base_seed_(base_seed) {}

    std::string name() const override { return "synthetic"; }

    std::vector<std::uint8_t> fetch(const ProviderRequest& req, const std::string&) override {
        const auto label = labeler::context_from_string(req.label);
        const std::string key = cache_key(req.image);
        std::uint64_t mix = 0;
        for (int i = 0; i < 16; ++i) {
            const char c = key[i];
            mix = (mix << 4) | static_cast<std::uint64_t>(c <= '9' ? c - '0' : c - 'a' + 10);
        }
        const auto image =
            img::synth_render(label, base_seed_ ^ mix, req.image.width, req.image.height);
        ++renders_;
        return img::encode_ppm(image);
    }

    std::uint64_t renders() const { return renders_.load(); }

private:
    std::uint64_t base_seed_;
    std::atomic<std::uint64_t> renders_{0};
};

// ---------------------------------------------------------------------------
// Token-bucket rate limiter (default 10 requests/second). Clock and sleep
// are injectable for tests.

class TokenBucket {
public:
    using NowFn = std::function<double()>;
    using SleepFn = std::function<void(double)>;

    TokenBucket(double rate_per_sec, double capacity, NowFn now = default_now,
                SleepFn sleep = default_sleep)
        : rate_(rate_per_sec), capacity_(capacity), tokens_(capacity),
          now_(std::move(now)), sleep_(std::move(sleep)), last_(now_()) {
        if (rate_per_sec <= 0.0 || capacity <= 0.0)
            throw std::invalid_argument("token bucket: rate and capacity must be positive");
    }

    // Blocks until one token is available, then consumes it.
    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        for (;;) {
            refill();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            const double wait = (1.0 - tokens_) / rate_;
            lock.unlock();
            sleep_(wait);
            lock.lock();
        }
    }

    // Non-blocking variant used by tests.
    bool try_acquire() {
        std::lock_guard<std::mutex> lock(mutex_);
        refill();
        if (tokens_ >= 1.0) {
            tokens_ -= 1.0;
            return true;
        }
        return false;
    }

private:
    static double default_now() {
        return std::chrono::duration<double>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    }
    static void default_sleep(double seconds) {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    }

    void refill() {
        const double t = now_();
        tokens_ = std::min(capacity_, tokens_ + (t - last_) * rate_);
        last_ = t;
    }

    double rate_, capacity_, tokens_;
    NowFn now_;
    SleepFn sleep_;
    double last_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Disk cache: cache/{first 2 hex}/{key}.bin plus {key}.json metadata.
// Concurrent readers, serialized atomic writers.

class DiskCache {
public:
    explicit DiskCache(std::filesystem::path root) : root_(std::move(root)) {}

    const std::filesystem::path& root() const { return root_; }

    std::optional<std::vector<std::uint8_t>> get(const std::string& key) const {
        const auto path = bin_path(key);
        std::error_code ec;
        if (!std::filesystem::exists(path, ec)) {
            ++misses_;
            return std::nullopt;
        }
        ++hits_;
        return io::read_file_bytes(path);
    }

    void put(const std::string& key, const std::vector<std::uint8_t>& payload,
             const std::string& provider_name, const std::string& request_echo) {
        nlohmann::json meta{{"provider", provider_name},
                            {"request", request_echo},
                            {"fetched_at", now_iso8601()}};
        std::lock_guard<std::mutex> lock(write_mutex_);
        io::write_file_atomic(bin_path(key), payload);
        io::write_file_atomic(meta_path(key), meta.dump());
    }

    // Checks the stored request echo still hashes to the entry's key.
    bool validate(const std::string& key) const {
        const auto meta = nlohmann::json::parse(io::read_file_text(meta_path(key)));
        return hash::sha256_hex(meta.at("request").get<std::string>()) == key;
    }

    std::uint64_t hits() const { return hits_.load(); }
    std::uint64_t misses() const { return misses_.load(); }

    std::filesystem::path bin_path(const std::string& key) const {
        return root_ / key.substr(0, 2) / (key + ".bin");
    }
    std::filesystem::path meta_path(const std::string& key) const {
        return root_ / key.substr(0, 2) / (key + ".json");
    }

private:
    static std::string now_iso8601() {
        const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm_utc{};
        gmtime_r(&t, &tm_utc);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
        return buf;
    }

    std::filesystem::path root_;
    mutable std::mutex write_mutex_;
    mutable std::atomic<std::uint64_t> hits_{0};
    mutable std::atomic<std::uint64_t> misses_{0};
};

// ---------------------------------------------------------------------------
// Fetching

using Decoder = std::function<img::RgbImage(const std::vector<std::uint8_t>&)>;

inline img::RgbImage decode_ppm_payload(const std::vector<std::uint8_t>& bytes) {
    try {
        return img::decode_ppm(bytes);
    } catch (const std::exception& e) {
        throw DecodeError("payload of " + std::to_string(bytes.size()) + " bytes: " + e.what());
    }
}

struct FetchOptions {
    std::size_t width = 640;
    std::size_t height = 640;
    Decoder decoder = decode_ppm_payload;
};

inline std::vector<std::uint8_t> fetch_payload(const ProviderRequest& preq, Provider& provider,
                                               DiskCache& cache, const std::string& api_key) {
    const std::string key = cache_key(preq.image);
    if (auto cached = cache.get(key)) return std::move(*cached);
    auto payload = provider.fetch(preq, api_key);
    cache.put(key, payload, provider.name(), canonical_request(preq.image));
    return payload;
}

// Fetches and decodes the left/right pair for one sample. Cache hits skip
// the provider entirely; provider errors leave the cache untouched.
inline std::pair<img::RgbImage, img::RgbImage> fetch_pair(const sampler::SampleRecord& sample,
                                                          Provider& provider, DiskCache& cache,
                                                          const std::string& api_key,
                                                          const FetchOptions& options = {}) {
    auto one = [&](double heading, const std::string& side) {
        ProviderRequest preq;
        preq.image = ImageRequest{sample.location, heading, 90, options.width, options.height};
        preq.label = sample.label;
        preq.sample_id = sample.sample_id;
        preq.side = side;
        return options.decoder(fetch_payload(preq, provider, cache, api_key));
    };
    return {one(sample.headings.left, "L"), one(sample.headings.right, "R")};
}

struct FetchStats {
    std::uint64_t cache_hits = 0;
    std::uint64_t provider_calls = 0;
    std::uint64_t images_written = 0;
    std::uint64_t no_coverage = 0;
};

// Fetches a whole manifest with bounded parallelism, writing decoded
// images as PPM next to the manifest. Samples without coverage are marked
// status=no_coverage and skipped; any other failure aborts the run.
inline FetchStats fetch_manifest(std::vector<sampler::SampleRecord>& records, Provider& provider,
                                 DiskCache& cache, const std::string& api_key,
                                 const std::filesystem::path& images_root,
                                 std::size_t parallelism = 4, const FetchOptions& options = {}) {
    if (parallelism == 0) parallelism = 1;
    const std::uint64_t hits_before = cache.hits();
    const std::uint64_t misses_before = cache.misses();

    std::atomic<std::size_t> next{0};
    std::atomic<std::uint64_t> written{0};
    std::atomic<std::uint64_t> dropped{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::size_t first_error_index = records.size();

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= records.size()) return;
            auto& rec = records[i];
            try {
                auto [left, right] = fetch_pair(rec, provider, cache, api_key, options);
                const auto left_bytes = img::encode_ppm(left);
                const auto right_bytes = img::encode_ppm(right);
                io::write_file_atomic(images_root / rec.image_path_left, left_bytes);
                io::write_file_atomic(images_root / rec.image_path_right, right_bytes);
                written += 2;
            } catch (const NoCoverageError&) {
                rec.status = "no_coverage";
                ++dropped;
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (i < first_error_index) {
                    first_error_index = i;
                    first_error = std::current_exception();
                }
            }
        }
    };

    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < parallelism; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);

    FetchStats stats;
    stats.cache_hits = cache.hits() - hits_before;
    stats.provider_calls = cache.misses() - misses_before;
    stats.images_written = written.load();
    stats.no_coverage = dropped.load();
    return stats;
}

} // namespace streetctx::imagery
