// streetctx: street-context classification pipeline driver.
//
// Subcommands: ingest | label | sample | fetch | train | eval | cam | embed.
// Configuration comes from a flat JSON file of dotted keys (--config) with
// per-key command-line overrides (--train.lr 0.01); common flags have short
// aliases (--manifest, --out, ...).  Every run appends one JSON line to the
// run log with the config hash and the hashes of all declared inputs and
// outputs.  Exit codes: 0 success, 1 domain error, 2 usage error.
//
// Secrets: the live provider's API key is read from the environment variable
// STREETCTX_API_KEY only; it never appears in config files, logs, or errors.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "streetctx/cam.hpp"
#include "streetctx/csvio.hpp"
#include "streetctx/eval.hpp"
#include "streetctx/fsio.hpp"
#include "streetctx/geo.hpp"
#include "streetctx/geojson.hpp"
#include "streetctx/hash.hpp"
#include "streetctx/http_provider.hpp"
#include "streetctx/imagery.hpp"
#include "streetctx/labeler.hpp"
#include "streetctx/nn.hpp"
#include "streetctx/sampler.hpp"
#include "streetctx/shapefile.hpp"
#include "streetctx/synth.hpp"
#include "streetctx/tsne.hpp"

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace streetctx;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const char* kUsage = R"(usage: streetctx <command> [--config FILE] [--KEY VALUE]...

commands:
  ingest   read street geometry (GeoJSON or shapefile) into segments
  label    classify segments into street contexts
  sample   draw sample points and build the image manifest
  fetch    download (or render) the manifest's street-view image pairs
  train    train the CNN classifier on fetched images
  eval     split, evaluate, and write report/confusion CSVs
  cam      render class-activation-map overlays
  embed    t-SNE embedding of penultimate features

Any configuration key can be set with --KEY VALUE (e.g. --train.lr 0.01);
--config FILE loads a flat JSON object of such keys first.  Common aliases:
  ingest: --geojson --shapefile --labels --out
  label:  --in --profile --out
  sample: --segments --n --seed --out
  fetch:  --manifest --provider --cache --images --parallelism --out
  train:  --manifest --images --model --epochs --seed
  eval:   --manifest --images --model --ratio --seed --reports
  cam:    --manifest --images --model --count --alpha --out
  embed:  --manifest --images --model --features --out

The live provider's API key is read from STREETCTX_API_KEY.
)";

// ---------------------------------------------------------------------------
// Config: flat dotted keys -> scalar JSON values
// ---------------------------------------------------------------------------

class Config {
public:
    void set(const std::string& key, json value) { values_[key] = std::move(value); }

    void load_file(const fs::path& path) {
        json doc;
        try {
            doc = json::parse(io::read_file_text(path));
        } catch (const json::parse_error& e) {
            throw std::runtime_error("config '" + path.string() + "': " + e.what());
        }
        if (!doc.is_object()) throw std::runtime_error("config '" + path.string() + "': not a JSON object");
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            if (!it.value().is_primitive())
                throw std::runtime_error("config key '" + it.key() + "': value must be scalar");
            values_[it.key()] = it.value();
        }
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, std::optional<std::string> fallback = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (fallback) return *fallback;
            throw UsageError("missing required config key '" + key + "'");
        }
        if (it->second.is_string()) return it->second.get<std::string>();
        return it->second.dump();
    }

    double get_double(const std::string& key, std::optional<double> fallback = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (fallback) return *fallback;
            throw UsageError("missing required config key '" + key + "'");
        }
        if (it->second.is_number()) return it->second.get<double>();
        try {
            return std::stod(it->second.get<std::string>());
        } catch (const std::exception&) {
            throw UsageError("config key '" + key + "': expected a number, got '" +
                             it->second.dump() + "'");
        }
    }

    std::uint64_t get_u64(const std::string& key, std::optional<std::uint64_t> fallback = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (fallback) return *fallback;
            throw UsageError("missing required config key '" + key + "'");
        }
        if (it->second.is_number_unsigned()) return it->second.get<std::uint64_t>();
        if (it->second.is_number_integer()) {
            const auto v = it->second.get<std::int64_t>();
            if (v < 0) throw UsageError("config key '" + key + "': expected a non-negative integer");
            return std::uint64_t(v);
        }
        try {
            return std::stoull(it->second.get<std::string>());
        } catch (const std::exception&) {
            throw UsageError("config key '" + key + "': expected an integer, got '" +
                             it->second.dump() + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second.is_boolean()) return it->second.get<bool>();
        const std::string s = it->second.is_string() ? it->second.get<std::string>() : it->second.dump();
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw UsageError("config key '" + key + "': expected true/false, got '" + s + "'");
    }

    // Canonical form for the run log: one JSON object, keys sorted (std::map).
    std::string canonical() const {
        json doc(json::value_t::object);
        for (const auto& [k, v] : values_) doc[k] = v;
        return doc.dump();
    }

private:
    std::map<std::string, json> values_;
};

// Short per-command aliases onto dotted keys.
const std::map<std::string, std::map<std::string, std::string>>& alias_table() {
    static const std::map<std::string, std::map<std::string, std::string>> table = {
        {"ingest",
         {{"geojson", "paths.geojson"},
          {"shapefile", "paths.shapefile"},
          {"labels", "paths.labels"},
          {"out", "paths.segments"}}},
        {"label",
         {{"in", "paths.segments"}, {"profile", "city.profile"}, {"out", "paths.labeled"}}},
        {"sample",
         {{"segments", "paths.labeled"},
          {"n", "sampler.n"},
          {"seed", "sampler.seed"},
          {"out", "paths.manifest"}}},
        {"fetch",
         {{"manifest", "paths.manifest"},
          {"provider", "fetch.provider"},
          {"cache", "paths.cache"},
          {"images", "paths.images"},
          {"parallelism", "fetch.parallelism"},
          {"out", "paths.fetched"}}},
        {"train",
         {{"manifest", "paths.fetched"},
          {"images", "paths.images"},
          {"model", "paths.model"},
          {"epochs", "train.epochs"},
          {"seed", "train.seed"}}},
        {"eval",
         {{"manifest", "paths.fetched"},
          {"images", "paths.images"},
          {"model", "paths.model"},
          {"ratio", "eval.ratio"},
          {"seed", "eval.seed"},
          {"reports", "paths.reports"}}},
        {"cam",
         {{"manifest", "paths.fetched"},
          {"images", "paths.images"},
          {"model", "paths.model"},
          {"count", "cam.count"},
          {"alpha", "cam.alpha"},
          {"class", "cam.class"},
          {"out", "paths.cam"}}},
        {"embed",
         {{"manifest", "paths.fetched"},
          {"images", "paths.images"},
          {"model", "paths.model"},
          {"features", "paths.features"},
          {"scatter", "paths.scatter"},
          {"out", "paths.embedding"}}},
    };
    return table;
}

// ---------------------------------------------------------------------------
// Path hashing for the run log
// ---------------------------------------------------------------------------

std::string hash_file(const fs::path& p) { return hash::sha256_hex(io::read_file_bytes(p)); }

// Directories hash as the digest of "relpath\0filehash\n" lines in sorted
// relative-path order.
std::string hash_path(const fs::path& p) {
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(p))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::vector<std::string> rels;
        std::map<std::string, const fs::path*> by_rel;
        for (const auto& f : files) {
            std::string rel = fs::relative(f, p).generic_string();
            by_rel[rel] = &f;
        }
        std::string acc;
        for (const auto& [rel, file] : by_rel) {
            acc += rel;
            acc += '\0';
            acc += hash_file(*file);
            acc += '\n';
        }
        return hash::sha256_hex(acc);
    }
    return hash_file(p);
}

// ---------------------------------------------------------------------------
// Stage wrapper: input existence + immutability, output hashing, run log
// ---------------------------------------------------------------------------

struct StageResult {
    std::vector<fs::path> outputs;
    std::string summary;
};

int run_stage(const std::string& command, const Config& cfg, const std::vector<fs::path>& inputs,
              const std::function<StageResult()>& body) {
    for (const auto& in : inputs)
        if (!fs::exists(in)) throw std::runtime_error(command + ": input '" + in.string() + "' not found");

    std::map<std::string, std::string> input_hashes;
    for (const auto& in : inputs) input_hashes[in.generic_string()] = hash_path(in);

    StageResult result = body();

    for (const auto& in : inputs) {
        if (hash_path(in) != input_hashes.at(in.generic_string()))
            throw std::runtime_error(command + ": input '" + in.string() +
                                     "' was modified during the run");
    }

    std::map<std::string, std::string> output_hashes;
    for (const auto& out : result.outputs) {
        if (!fs::exists(out))
            throw std::runtime_error(command + ": declared output '" + out.string() +
                                     "' was not written");
        output_hashes[out.generic_string()] = hash_path(out);
    }

    json line;
    line["command"] = command;
    line["config_hash"] = hash::sha256_hex(cfg.canonical());
    line["inputs"] = input_hashes;
    line["outputs"] = output_hashes;

    const fs::path runlog = cfg.get_string("paths.runlog", std::string("runlog.jsonl"));
    if (!runlog.parent_path().empty()) fs::create_directories(runlog.parent_path());
    std::ofstream log(runlog, std::ios::app);
    if (!log) throw std::runtime_error("cannot append to run log '" + runlog.string() + "'");
    log << line.dump() << "\n";

    std::cout << result.summary << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

std::vector<std::string> profile_names(const labeler::CityProfile& profile) {
    std::vector<std::string> names;
    names.reserve(profile.catalog.size());
    for (auto c : profile.catalog) names.emplace_back(labeler::to_string(c));
    return names;
}

std::vector<sampler::SampleRecord> load_ok_records(const fs::path& manifest) {
    auto records = sampler::parse_manifest_csv(io::read_file_text(manifest));
    std::vector<sampler::SampleRecord> ok;
    for (auto& r : records)
        if (r.status == "ok") ok.push_back(std::move(r));
    if (ok.empty()) throw std::runtime_error("manifest '" + manifest.string() + "' has no usable samples");
    return ok;
}

img::RgbImage load_image(const fs::path& images_root, const std::string& rel) {
    return img::decode_ppm(io::read_file_bytes(images_root / rel));
}

std::size_t catalog_index(const std::vector<std::string>& catalog, const std::string& label) {
    for (std::size_t i = 0; i < catalog.size(); ++i)
        if (catalog[i] == label) return i;
    throw std::runtime_error("label '" + label + "' is not in the model catalog");
}

// predict() requires the model's exact input size; stored imagery may be
// larger, so stages resize on the way in.
nn::Prediction predict_resized(const nn::Model& model, const img::RgbImage& image) {
    if (image.width == model.input_width && image.height == model.input_height)
        return nn::predict(model, image);
    return nn::predict(model, img::resize_nearest(image, model.input_width, model.input_height));
}

// The classifier head's weight matrix (last linear layer).
const nn::Tensor& linear_weight_of(const nn::Model& model) {
    std::size_t pi = 0, found = model.params.size();
    for (const auto& layer : model.arch) {
        if (std::holds_alternative<nn::Conv>(layer)) pi += 2;
        else if (std::holds_alternative<nn::Linear>(layer)) { found = pi; pi += 2; }
    }
    if (found >= model.params.size()) throw std::runtime_error("model has no linear layer");
    return model.params[found];
}

fs::path default_sibling(const fs::path& base, const std::string& name) {
    fs::path dir = base.parent_path();
    return dir.empty() ? fs::path(name) : dir / name;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_ingest(const Config& cfg) {
    const bool has_geojson = cfg.has("paths.geojson");
    const bool has_shapefile = cfg.has("paths.shapefile");
    if (has_geojson == has_shapefile)
        throw UsageError("ingest: provide exactly one of --geojson or --shapefile");
    const fs::path out = cfg.get_string("paths.segments");

    std::vector<fs::path> inputs;
    if (has_geojson) inputs.emplace_back(cfg.get_string("paths.geojson"));
    if (has_shapefile) {
        inputs.emplace_back(cfg.get_string("paths.shapefile"));
        if (cfg.has("paths.labels")) inputs.emplace_back(cfg.get_string("paths.labels"));
    }

    return run_stage("ingest", cfg, inputs, [&]() {
        geo::SegmentCollection collection;
        if (has_geojson) {
            collection = geo::parse_geojson_streets(io::read_file_text(inputs[0]));
        } else {
            const std::string labels_csv =
                cfg.has("paths.labels") ? io::read_file_text(cfg.get_string("paths.labels")) : "";
            collection = geo::parse_shapefile_polylines(io::read_file_bytes(inputs[0]), labels_csv);
        }
        io::write_file_atomic(out, geo::serialize_geojson_streets(collection));
        return StageResult{{out}, "ingest: " + std::to_string(collection.size()) + " segments -> " +
                                      out.string()};
    });
}

labeler::SegmentAttributes attributes_of(const geo::StreetSegment& seg, double threshold) {
    labeler::SegmentAttributes attrs;
    if (const auto* s = seg.attribute("side_use")) {
        attrs.side_use = labeler::side_use_from_string(*s);
    } else if (const auto* f = seg.attribute("commercial_frac")) {
        double frac = 0.0;
        try {
            frac = std::stod(*f);
        } catch (const std::exception&) {
            throw std::runtime_error("segment '" + seg.id() + "': commercial_frac '" + *f +
                                     "' is not a number");
        }
        attrs.commercial_frac = frac;
        attrs.side_use = labeler::derive_side_use(frac, threshold);
    }
    if (const auto* t = seg.attribute("transport")) attrs.transport = labeler::transport_from_string(*t);
    if (const auto* sp = seg.attribute("special")) attrs.special = labeler::special_from_string(*sp);
    return attrs;
}

int cmd_label(const Config& cfg) {
    const fs::path in = cfg.get_string("paths.segments");
    const fs::path out = cfg.get_string("paths.labeled");
    const std::string profile_name = cfg.get_string("city.profile", std::string("SanFrancisco"));
    const double threshold = cfg.get_double("city.commercial_threshold", 0.5);

    return run_stage("label", cfg, {in}, [&]() {
        const auto profile = labeler::context_catalog(profile_name);
        auto collection = geo::parse_geojson_streets(io::read_file_text(in));
        std::size_t low_confidence = 0;
        for (auto& seg : collection.segments()) {
            labeler::SegmentAttributes attrs;
            try {
                attrs = attributes_of(seg, threshold);
            } catch (const std::exception& e) {
                throw std::runtime_error("label: segment '" + seg.id() + "': " + e.what());
            }
            const auto context = labeler::remap_to_profile(labeler::classify_street(attrs), profile);
            seg.set_attribute(sampler::kContextLabelKey, labeler::to_string(context));
            if (labeler::is_low_confidence(attrs)) {
                seg.set_attribute("low_confidence", "true");
                ++low_confidence;
            }
        }
        io::write_file_atomic(out, geo::serialize_geojson_streets(collection));
        return StageResult{{out}, "label: " + std::to_string(collection.size()) + " segments (" +
                                      profile_name + ", " + std::to_string(low_confidence) +
                                      " low-confidence) -> " + out.string()};
    });
}

int cmd_sample(const Config& cfg) {
    const fs::path in = cfg.get_string("paths.labeled");
    const fs::path out = cfg.get_string("paths.manifest");
    const std::size_t n = cfg.get_u64("sampler.n");
    const std::uint64_t seed = cfg.get_u64("sampler.seed", std::uint64_t{1});

    return run_stage("sample", cfg, {in}, [&]() {
        const auto collection = geo::parse_geojson_streets(io::read_file_text(in));
        const auto records = sampler::build_manifest(collection, n, seed);
        io::write_file_atomic(out, sampler::write_manifest_csv(records));
        return StageResult{{out}, "sample: " + std::to_string(records.size()) +
                                      " sample points (seed " + std::to_string(seed) + ") -> " +
                                      out.string()};
    });
}

int cmd_fetch(const Config& cfg) {
    const fs::path manifest = cfg.get_string("paths.manifest");
    const fs::path images_root =
        cfg.get_string("paths.images", manifest.parent_path().empty()
                                           ? std::string(".")
                                           : manifest.parent_path().string());
    const fs::path cache_root =
        cfg.get_string("paths.cache", default_sibling(manifest, "cache").string());
    const fs::path out =
        cfg.get_string("paths.fetched", default_sibling(manifest, "manifest_fetched.csv").string());
    const std::string provider_name = cfg.get_string("fetch.provider", std::string("synthetic"));
    const std::size_t parallelism = cfg.get_u64("fetch.parallelism", std::uint64_t{4});

    imagery::FetchOptions options;
    options.width = cfg.get_u64("fetch.width", std::uint64_t{640});
    options.height = cfg.get_u64("fetch.height", std::uint64_t{640});

    std::unique_ptr<imagery::Provider> provider;
    std::string api_key;
    if (provider_name == "synthetic") {
        provider = std::make_unique<imagery::SyntheticProvider>(cfg.get_u64("fetch.synth_seed", std::uint64_t{1}));
    } else if (provider_name == "http") {
        const char* key = std::getenv("STREETCTX_API_KEY");
        if (!key || !*key)
            throw std::runtime_error("fetch: environment variable STREETCTX_API_KEY is not set");
        api_key = key;
        provider = std::make_unique<imagery::HttpProvider>(cfg.get_string("fetch.base_url"),
                                                           cfg.get_double("fetch.rps", 10.0));
    } else {
        throw UsageError("fetch: unknown provider '" + provider_name + "' (known: synthetic, http)");
    }

    return run_stage("fetch", cfg, {manifest}, [&]() {
        imagery::DiskCache cache(cache_root);
        auto records = sampler::parse_manifest_csv(io::read_file_text(manifest));
        const auto stats = imagery::fetch_manifest(records, *provider, cache, api_key, images_root,
                                                   parallelism, options);
        io::write_file_atomic(out, sampler::write_manifest_csv(records));
        StageResult r;
        r.outputs = {out, images_root / "images"};
        r.summary = "fetch: " + std::to_string(stats.provider_calls) + " provider calls, " +
                    std::to_string(stats.cache_hits) + " cache hits, " +
                    std::to_string(stats.images_written) + " images written, " +
                    std::to_string(stats.no_coverage) + " without coverage -> " + out.string();
        return r;
    });
}

nn::TrainConfig train_config_from(const Config& cfg) {
    nn::TrainConfig tc;
    tc.epochs = cfg.get_u64("train.epochs", std::uint64_t{20});
    tc.batch_size = cfg.get_u64("train.batch_size", std::uint64_t{32});
    tc.learning_rate = cfg.get_double("train.lr", 0.01);
    tc.momentum = cfg.get_double("train.momentum", 0.9);
    tc.seed = cfg.get_u64("train.seed", std::uint64_t{1});
    tc.input_height = cfg.get_u64("train.input", std::uint64_t{64});
    tc.input_width = tc.input_height;
    return tc;
}

int cmd_train(const Config& cfg) {
    const fs::path manifest = cfg.get_string("paths.fetched");
    const fs::path images_root =
        cfg.get_string("paths.images", manifest.parent_path().empty()
                                           ? std::string(".")
                                           : manifest.parent_path().string());
    const fs::path model_path = cfg.get_string("paths.model");
    const fs::path history_path = cfg.get_string(
        "paths.history", fs::path(model_path).replace_extension(".history.csv").string());
    const std::string catalog_mode = cfg.get_string("train.catalog", std::string("profile"));

    return run_stage("train", cfg, {manifest, images_root / "images"}, [&]() {
        const auto records = load_ok_records(manifest);

        std::vector<std::string> catalog;
        if (catalog_mode == "profile") {
            catalog = profile_names(
                labeler::context_catalog(cfg.get_string("city.profile", std::string("SanFrancisco"))));
        } else if (catalog_mode == "manifest") {
            std::set<std::string> distinct;
            for (const auto& r : records) distinct.insert(r.label);
            catalog.assign(distinct.begin(), distinct.end());
        } else {
            throw UsageError("train: train.catalog must be 'profile' or 'manifest'");
        }

        std::vector<img::RgbImage> images;
        images.reserve(records.size() * 2);
        std::vector<nn::Example> dataset;
        dataset.reserve(records.size() * 2);
        for (const auto& r : records) {
            const std::size_t label = catalog_index(catalog, r.label);
            images.push_back(load_image(images_root, r.image_path_left));
            dataset.push_back({&images.back(), label});
            images.push_back(load_image(images_root, r.image_path_right));
            dataset.push_back({&images.back(), label});
        }

        const nn::TrainConfig tc = train_config_from(cfg);
        const auto arch = nn::streetnet_arch(catalog.size());
        auto result = nn::train(dataset, arch, catalog, tc);

        io::write_file_atomic(model_path, nn::serialize_model(result.model));
        std::string history = "epoch,loss,train_acc\n";
        for (const auto& e : result.history)
            history += csv::join_row({std::to_string(e.epoch), csv::format_float(e.loss),
                                      csv::format_float(e.train_accuracy)});
        io::write_file_atomic(history_path, history);

        const auto& last = result.history.back();
        return StageResult{{model_path, history_path},
                           "train: " + std::to_string(dataset.size()) + " images, " +
                               std::to_string(tc.epochs) + " epochs, final loss " +
                               csv::format_float(last.loss) + ", train accuracy " +
                               csv::format_float(last.train_accuracy) + " -> " + model_path.string()};
    });
}

int cmd_eval(const Config& cfg) {
    const fs::path manifest = cfg.get_string("paths.fetched");
    const fs::path images_root =
        cfg.get_string("paths.images", manifest.parent_path().empty()
                                           ? std::string(".")
                                           : manifest.parent_path().string());
    const fs::path model_path = cfg.get_string("paths.model");
    const fs::path reports = cfg.get_string("paths.reports", std::string("reports"));
    const double ratio = cfg.get_double("eval.ratio", 0.8);
    const std::uint64_t seed = cfg.get_u64("eval.seed", std::uint64_t{1});

    return run_stage("eval", cfg, {manifest, images_root / "images", model_path}, [&]() {
        const auto records = load_ok_records(manifest);
        const auto model = nn::deserialize_model(io::read_file_bytes(model_path));

        std::vector<std::string> ids;
        ids.reserve(records.size());
        for (const auto& r : records) ids.push_back(r.sample_id);
        const auto split = eval::split_dataset(ids, ratio, seed);
        const std::set<std::string> val(split.val_ids.begin(), split.val_ids.end());

        std::vector<std::size_t> truth, pred;
        for (const auto& r : records) {
            if (!val.count(r.sample_id)) continue;
            const std::size_t t = catalog_index(model.catalog, r.label);
            for (const auto* rel : {&r.image_path_left, &r.image_path_right}) {
                const auto image = load_image(images_root, *rel);
                truth.push_back(t);
                pred.push_back(predict_resized(model, image).class_index);
            }
        }
        const auto cm = eval::confusion_matrix(truth, pred, model.catalog);

        const std::vector<std::pair<std::string, std::string>> echo = {
            {"split_ratio", csv::format_float(ratio)},
            {"split_seed", std::to_string(seed)},
            {"model", model_path.filename().string()},
            {"val_points", std::to_string(split.val_ids.size())},
        };
        fs::create_directories(reports);
        io::write_file_atomic(reports / "report.csv", eval::render_report_csv(cm, echo));
        io::write_file_atomic(reports / "confusion.csv", eval::render_confusion_csv(cm));
        io::write_file_atomic(reports / "reference_baselines.csv", eval::render_baselines_csv());

        return StageResult{{reports / "report.csv", reports / "confusion.csv",
                            reports / "reference_baselines.csv"},
                           "eval: " + std::to_string(truth.size()) + " validation images, accuracy " +
                               csv::format_float(eval::accuracy(cm)) + " -> " +
                               (reports / "report.csv").string()};
    });
}

int cmd_cam(const Config& cfg) {
    const fs::path manifest = cfg.get_string("paths.fetched");
    const fs::path images_root =
        cfg.get_string("paths.images", manifest.parent_path().empty()
                                           ? std::string(".")
                                           : manifest.parent_path().string());
    const fs::path model_path = cfg.get_string("paths.model");
    const fs::path out_dir = cfg.get_string("paths.cam", std::string("cam"));
    const std::size_t count = cfg.get_u64("cam.count", std::uint64_t{8});
    const double alpha = cfg.get_double("cam.alpha", 0.45);

    return run_stage("cam", cfg, {manifest, images_root / "images", model_path}, [&]() {
        const auto records = load_ok_records(manifest);
        const auto model = nn::deserialize_model(io::read_file_bytes(model_path));
        const auto& weight = linear_weight_of(model);

        std::optional<std::size_t> forced_class;
        if (cfg.has("cam.class"))
            forced_class = catalog_index(model.catalog, cfg.get_string("cam.class"));

        fs::create_directories(out_dir);
        std::size_t rendered = 0;
        for (const auto& r : records) {
            if (rendered / 2 >= count) break;
            for (const auto& [rel, side] :
                 {std::pair{&r.image_path_left, "L"}, std::pair{&r.image_path_right, "R"}}) {
                const auto image = load_image(images_root, *rel);
                const auto prediction = predict_resized(model, image);
                const std::size_t cls = forced_class ? *forced_class : prediction.class_index;
                const auto map = cam::class_activation_map(prediction.last_conv, weight, cls);
                const auto up = cam::bilinear_upsample(map, image.width, image.height);
                const auto overlay = cam::render_overlay(image, up, alpha);
                const auto [ax, ay] = cam::map_argmax(up);

                const std::string stem = r.sample_id + "_" + side + "_cam";
                io::write_file_atomic(out_dir / (stem + ".ppm"), img::encode_ppm(overlay));
                json sidecar{{"sample_id", r.sample_id},
                             {"side", side},
                             {"class", model.catalog[cls]},
                             {"cam_argmax", {ax, ay}}};
                io::write_file_atomic(out_dir / (stem + ".json"), sidecar.dump());
                rendered += 1;
            }
        }
        return StageResult{{out_dir}, "cam: " + std::to_string(rendered) + " overlays (alpha " +
                                          csv::format_float(alpha) + ") -> " + out_dir.string()};
    });
}

tsne::TsneConfig tsne_config_from(const Config& cfg) {
    tsne::TsneConfig tc;
    tc.perplexity = cfg.get_double("tsne.perplexity", 0.0);
    tc.iterations = cfg.get_u64("tsne.iterations", std::uint64_t{1000});
    tc.learning_rate = cfg.get_double("tsne.lr", 200.0);
    tc.seed = cfg.get_u64("tsne.seed", std::uint64_t{1});
    return tc;
}

int cmd_embed(const Config& cfg) {
    const fs::path out = cfg.get_string("paths.embedding", std::string("embedding.csv"));
    const fs::path scatter_path =
        cfg.get_string("paths.scatter", fs::path(out).replace_extension(".ppm").string());

    // Standalone mode: externally produced features.
    if (cfg.has("paths.features")) {
        const fs::path features = cfg.get_string("paths.features");
        return run_stage("embed", cfg, {features}, [&]() {
            auto table = tsne::parse_feature_csv(io::read_file_text(features));
            if (cfg.get_bool("tsne.standardize", false)) tsne::standardize_features(table.features);
            const auto emb = tsne::tsne_embed(table.features, tsne_config_from(cfg));
            io::write_file_atomic(out, tsne::export_embedding_csv(emb, table.sample_ids, table.labels));

            std::vector<std::string> classes;
            std::vector<std::size_t> label_idx;
            for (const auto& l : table.labels) {
                std::size_t i = 0;
                for (; i < classes.size(); ++i)
                    if (classes[i] == l) break;
                if (i == classes.size()) classes.push_back(l);
                label_idx.push_back(i);
            }
            io::write_file_atomic(scatter_path,
                                  img::encode_ppm(tsne::scatter_raster(emb, label_idx)));
            return StageResult{{out, scatter_path},
                               "embed: " + std::to_string(emb.n) + " points, final KL " +
                                   csv::format_float(emb.final_kl) + " -> " + out.string()};
        });
    }

    const fs::path manifest = cfg.get_string("paths.fetched");
    const fs::path images_root =
        cfg.get_string("paths.images", manifest.parent_path().empty()
                                           ? std::string(".")
                                           : manifest.parent_path().string());
    const fs::path model_path = cfg.get_string("paths.model");
    const std::string scope = cfg.get_string("embed.scope", std::string("val"));

    return run_stage("embed", cfg, {manifest, images_root / "images", model_path}, [&]() {
        const auto records = load_ok_records(manifest);
        const auto model = nn::deserialize_model(io::read_file_bytes(model_path));

        std::set<std::string> chosen;
        if (scope == "val") {
            std::vector<std::string> ids;
            for (const auto& r : records) ids.push_back(r.sample_id);
            const auto split = eval::split_dataset(ids, cfg.get_double("eval.ratio", 0.8),
                                                   cfg.get_u64("eval.seed", std::uint64_t{1}));
            chosen.insert(split.val_ids.begin(), split.val_ids.end());
        } else if (scope != "all") {
            throw UsageError("embed: embed.scope must be 'val' or 'all'");
        }

        tsne::FeatureMatrix features;
        std::vector<std::string> ids, labels;
        std::vector<std::size_t> label_idx;
        for (const auto& r : records) {
            if (scope == "val" && !chosen.count(r.sample_id)) continue;
            for (const auto& [rel, side] :
                 {std::pair{&r.image_path_left, "L"}, std::pair{&r.image_path_right, "R"}}) {
                const auto image = load_image(images_root, *rel);
                const auto prediction = predict_resized(model, image);
                if (features.d == 0) features.d = prediction.penultimate.size();
                features.rows.insert(features.rows.end(), prediction.penultimate.begin(),
                                     prediction.penultimate.end());
                ++features.n;
                ids.push_back(r.sample_id + "_" + side);
                labels.push_back(r.label);
                label_idx.push_back(catalog_index(model.catalog, r.label));
            }
        }

        if (cfg.get_bool("tsne.standardize", false)) tsne::standardize_features(features);
        const auto emb = tsne::tsne_embed(features, tsne_config_from(cfg));
        io::write_file_atomic(out, tsne::export_embedding_csv(emb, ids, labels));
        io::write_file_atomic(scatter_path, img::encode_ppm(tsne::scatter_raster(emb, label_idx)));
        return StageResult{{out, scatter_path}, "embed: " + std::to_string(emb.n) +
                                                    " points, final KL " +
                                                    csv::format_float(emb.final_kl) + " -> " +
                                                    out.string()};
    });
}

} // namespace

int main(int argc, char** argv) {
    try {
        if (argc < 2) throw UsageError("missing command");
        const std::string command = argv[1];
        if (command == "--help" || command == "help") {
            std::cout << kUsage;
            return 0;
        }
        const auto& aliases = alias_table();
        const auto alias_it = aliases.find(command);
        if (alias_it == aliases.end()) throw UsageError("unknown command '" + command + "'");

        // two passes: --config first, then every override on top
        std::vector<std::pair<std::string, std::string>> pairs;
        for (int i = 2; i < argc; ++i) {
            std::string flag = argv[i];
            if (flag == "--help") {
                std::cout << kUsage;
                return 0;
            }
            if (flag.rfind("--", 0) != 0) throw UsageError("expected --flag, got '" + flag + "'");
            if (i + 1 >= argc) throw UsageError("flag '" + flag + "' needs a value");
            pairs.emplace_back(flag.substr(2), argv[++i]);
        }

        Config cfg;
        for (const auto& [key, value] : pairs)
            if (key == "config") cfg.load_file(value);
        for (const auto& [key, value] : pairs) {
            if (key == "config") continue;
            std::string dotted = key;
            if (key.find('.') == std::string::npos) {
                const auto a = alias_it->second.find(key);
                if (a == alias_it->second.end())
                    throw UsageError("unknown flag '--" + key + "' for command '" + command + "'");
                dotted = a->second;
            }
            cfg.set(dotted, json(value));
        }

        if (command == "ingest") return cmd_ingest(cfg);
        if (command == "label") return cmd_label(cfg);
        if (command == "sample") return cmd_sample(cfg);
        if (command == "fetch") return cmd_fetch(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "eval") return cmd_eval(cfg);
        if (command == "cam") return cmd_cam(cfg);
        if (command == "embed") return cmd_embed(cfg);
        throw UsageError("unknown command '" + command + "'");
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n\n" << kUsage;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
