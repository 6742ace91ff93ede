#pragma once

// Deterministic train/validation splitting, confusion matrices, and the
// report files written by the eval stage.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "streetctx/csvio.hpp"
#include "streetctx/rng.hpp"

namespace streetctx::eval {

struct SplitAssignment {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

// Split at the sample-point level so both images of a pair stay together.
// Seeded shuffle, train count = round-half-up(ratio * n).
inline SplitAssignment split_dataset(const std::vector<std::string>& sample_ids, double ratio,
                                     std::uint64_t seed) {
    if (sample_ids.empty()) throw std::invalid_argument("split_dataset: no sample points");
    if (ratio <= 0.0 || ratio >= 1.0)
        throw std::invalid_argument("split_dataset: ratio must be in (0,1)");
    std::vector<std::string> order = sample_ids;
    Xoshiro256ss rng(seed);
    shuffle_prefix(order, order.size(), rng);
    const std::size_t train_n = std::size_t(std::floor(ratio * double(order.size()) + 0.5));
    SplitAssignment split;
    split.train_ids.assign(order.begin(), order.begin() + std::ptrdiff_t(train_n));
    split.val_ids.assign(order.begin() + std::ptrdiff_t(train_n), order.end());
    return split;
}

struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::size_t> counts; // C*C row-major; rows = true, cols = predicted

    std::size_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * classes.size() + pred];
    }
    std::size_t total() const {
        std::size_t t = 0;
        for (std::size_t c : counts) t += c;
        return t;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& truth,
                                        const std::vector<std::size_t>& pred,
                                        const std::vector<std::string>& catalog) {
    if (truth.size() != pred.size())
        throw std::invalid_argument("confusion_matrix: " + std::to_string(truth.size()) +
                                    " truth labels vs " + std::to_string(pred.size()) + " predictions");
    ConfusionMatrix cm;
    cm.classes = catalog;
    cm.counts.assign(catalog.size() * catalog.size(), 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= catalog.size() || pred[i] >= catalog.size())
            throw std::invalid_argument("confusion_matrix: label index outside catalog at row " +
                                        std::to_string(i));
        ++cm.counts[truth[i] * catalog.size() + pred[i]];
    }
    return cm;
}

inline ConfusionMatrix confusion_matrix(const std::vector<std::string>& truth,
                                        const std::vector<std::string>& pred,
                                        const std::vector<std::string>& catalog) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < catalog.size(); ++i) index[catalog[i]] = i;
    auto lookup = [&](const std::string& name) {
        auto it = index.find(name);
        if (it == index.end())
            throw std::invalid_argument("confusion_matrix: label '" + name + "' not in catalog");
        return it->second;
    };
    std::vector<std::size_t> t, p;
    t.reserve(truth.size());
    p.reserve(pred.size());
    for (const auto& s : truth) t.push_back(lookup(s));
    for (const auto& s : pred) p.push_back(lookup(s));
    return confusion_matrix(t, p, catalog);
}

inline double accuracy(const ConfusionMatrix& cm) {
    const std::size_t total = cm.total();
    if (total == 0) throw std::invalid_argument("accuracy: confusion matrix is empty");
    std::size_t diag = 0;
    for (std::size_t c = 0; c < cm.classes.size(); ++c) diag += cm.at(c, c);
    return double(diag) / double(total);
}

// Diagonal over row sum; nullopt when a class has no true samples.
inline std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm) {
    std::vector<std::optional<double>> out(cm.classes.size());
    for (std::size_t t = 0; t < cm.classes.size(); ++t) {
        std::size_t row = 0;
        for (std::size_t p = 0; p < cm.classes.size(); ++p) row += cm.at(t, p);
        if (row > 0) out[t] = double(cm.at(t, t)) / double(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

// metric,value rows: overall accuracy, per-class accuracy (n/a for classes
// with no true samples), then config echo rows for reproducibility.
inline std::string render_report_csv(const ConfusionMatrix& cm,
                                     const std::vector<std::pair<std::string, std::string>>& echo) {
    std::string out = "metric,value\n";
    out += csv::join_row({"overall_accuracy", csv::format_float(accuracy(cm))});
    const auto per_class = per_class_accuracy(cm);
    for (std::size_t c = 0; c < cm.classes.size(); ++c) {
        const std::string value = per_class[c] ? csv::format_float(*per_class[c]) : "n/a";
        out += csv::join_row({"per_class_accuracy." + cm.classes[c], value});
    }
    out += csv::join_row({"evaluated_samples", std::to_string(cm.total())});
    for (const auto& [key, value] : echo) out += csv::join_row({"config." + key, value});
    return out;
}

// First row and first column carry the class names; counts are plain integers.
inline std::string render_confusion_csv(const ConfusionMatrix& cm) {
    std::vector<std::string> header{""};
    header.insert(header.end(), cm.classes.begin(), cm.classes.end());
    std::string out = csv::join_row(header);
    for (std::size_t t = 0; t < cm.classes.size(); ++t) {
        std::vector<std::string> row{cm.classes[t]};
        for (std::size_t p = 0; p < cm.classes.size(); ++p)
            row.push_back(std::to_string(cm.at(t, p)));
        out += csv::join_row(row);
    }
    return out;
}

// Published validation accuracies for full-scale backbones on the original
// Boston / San Francisco corpora.  Shipped for documentation only — this
// pipeline does not attempt to reproduce them (the corpora and pretrained
// backbones are not available at this scale).
struct ReferenceBaseline {
    const char* architecture;
    double boston_accuracy_pct;
    double sf_accuracy_pct;
};

inline constexpr ReferenceBaseline kReferenceBaselines[] = {
    {"ResNet18", 85.64, 81.72},
    {"ResNet34", 85.45, 82.02},
    {"ResNet50", 85.64, 82.71},
    {"AlexNet", 83.16, 81.69},
    {"Inception-v3", 87.79, 84.17},
};

inline std::string render_baselines_csv() {
    std::string out = "# published reference values for full-scale backbones; not produced by this "
                      "pipeline\narchitecture,boston_accuracy_pct,sf_accuracy_pct\n";
    for (const auto& b : kReferenceBaselines) {
        out += csv::join_row({b.architecture, csv::format_float(b.boston_accuracy_pct),
                              csv::format_float(b.sf_accuracy_pct)});
    }
    return out;
}

} // namespace streetctx::eval
