#pragma once

// Exact O(n^2) t-SNE over penultimate-layer features: perplexity-calibrated
// Gaussian affinities (binary search on the precision), symmetrized joint P,
// Student-t low-dimensional kernel, and gradient descent with momentum and
// early exaggeration.  Deterministic per seed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "streetctx/csvio.hpp"
#include "streetctx/image.hpp"
#include "streetctx/rng.hpp"

namespace streetctx::tsne {

inline constexpr double kProbFloor = 1e-12; // log-safety floor on P and Q entries

struct FeatureMatrix {
    std::size_t n = 0; // point count
    std::size_t d = 0; // feature dimension
    std::vector<double> rows; // n*d, row-major

    const double* row(std::size_t i) const { return rows.data() + i * d; }
};

inline void validate_features(const FeatureMatrix& X) {
    if (X.n < 4) throw std::invalid_argument("feature matrix needs at least 4 points, got " +
                                             std::to_string(X.n));
    if (X.d == 0) throw std::invalid_argument("feature matrix has zero dimensions");
    if (X.rows.size() != X.n * X.d)
        throw std::invalid_argument("feature matrix storage does not match n*d");
    for (double v : X.rows)
        if (!std::isfinite(v)) throw std::invalid_argument("feature matrix contains a non-finite value");
}

// In-place per-dimension z-scoring (optional preprocessing; off by default).
// Constant dimensions map to zero.
inline void standardize_features(FeatureMatrix& X) {
    validate_features(X);
    for (std::size_t k = 0; k < X.d; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < X.n; ++i) mean += X.rows[i * X.d + k];
        mean /= double(X.n);
        double var = 0.0;
        for (std::size_t i = 0; i < X.n; ++i) {
            const double t = X.rows[i * X.d + k] - mean;
            var += t * t;
        }
        var /= double(X.n);
        const double sd = std::sqrt(var);
        for (std::size_t i = 0; i < X.n; ++i) {
            double& v = X.rows[i * X.d + k];
            v = sd > 0.0 ? (v - mean) / sd : 0.0;
        }
    }
}

// D[i,j] = squared Euclidean distance between rows i and j.
inline std::vector<double> pairwise_sq_dists(const FeatureMatrix& X) {
    validate_features(X);
    std::vector<double> D(X.n * X.n, 0.0);
    for (std::size_t i = 0; i < X.n; ++i) {
        const double* xi = X.row(i);
        for (std::size_t j = i + 1; j < X.n; ++j) {
            const double* xj = X.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < X.d; ++k) {
                const double t = xi[k] - xj[k];
                acc += t * t;
            }
            D[i * X.n + j] = acc;
            D[j * X.n + i] = acc;
        }
    }
    return D;
}

struct Calibration {
    std::vector<double> pcond;     // n*n conditional probabilities, zero diagonal, rows sum to 1
    std::vector<double> beta;      // per-row precision (p_{j|i} proportional to exp(-beta_i * D_ij))
    std::vector<std::uint8_t> flagged; // 1 when the bisection hit max_steps without meeting tol
};

namespace detail {

// Fill one conditional row for a given precision; returns its entropy in bits.
inline double fill_row(const double* drow, std::size_t n, std::size_t i, double beta, double* prow) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
            prow[j] = 0.0;
            continue;
        }
        prow[j] = std::exp(-beta * drow[j]);
        sum += prow[j];
    }
    if (sum <= 0.0) {
        // pathologically large beta: fall back to uniform over the others
        const double u = 1.0 / double(n - 1);
        for (std::size_t j = 0; j < n; ++j) prow[j] = (j == i) ? 0.0 : u;
        return std::log2(double(n - 1));
    }
    double entropy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        prow[j] /= sum;
        if (prow[j] > 0.0) entropy -= prow[j] * std::log2(prow[j]);
    }
    return entropy;
}

} // namespace detail

// Binary search each row's precision so the conditional distribution's
// Shannon entropy (bits) matches log2(perplexity) within tol.
inline Calibration perplexity_calibrate(const std::vector<double>& D, std::size_t n, double perplexity,
                                        double tol = 1e-5, std::size_t max_steps = 50) {
    if (D.size() != n * n) throw std::invalid_argument("perplexity_calibrate: D must be n*n");
    if (3.0 * perplexity > double(n - 1))
        throw std::invalid_argument("perplexity " + std::to_string(perplexity) +
                                    " too large for " + std::to_string(n) +
                                    " points (need 3*perplexity <= n-1)");
    const double target = std::log2(perplexity);
    Calibration cal;
    cal.pcond.assign(n * n, 0.0);
    cal.beta.assign(n, 1.0);
    cal.flagged.assign(n, 0);

    for (std::size_t i = 0; i < n; ++i) {
        const double* drow = D.data() + i * n;
        double* prow = cal.pcond.data() + i * n;
        double beta = 1.0;
        double beta_lo = 0.0;
        double beta_hi = std::numeric_limits<double>::infinity();
        double entropy = detail::fill_row(drow, n, i, beta, prow);
        std::size_t step = 0;
        while (std::fabs(entropy - target) > tol && step < max_steps) {
            if (entropy > target) {
                // too spread out: sharpen by raising the precision
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : (beta + beta_hi) / 2.0;
            } else {
                beta_hi = beta;
                beta = (beta + beta_lo) / 2.0;
            }
            entropy = detail::fill_row(drow, n, i, beta, prow);
            ++step;
        }
        cal.beta[i] = beta;
        if (std::fabs(entropy - target) > tol) cal.flagged[i] = 1;
    }
    return cal;
}

// P_ij = (P_{j|i} + P_{i|j}) / (2n), floored at kProbFloor off the diagonal.
inline std::vector<double> symmetrize(const std::vector<double>& pcond, std::size_t n) {
    if (pcond.size() != n * n) throw std::invalid_argument("symmetrize: matrix must be n*n");
    std::vector<double> P(n * n, 0.0);
    const double inv2n = 1.0 / (2.0 * double(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            P[i * n + j] = std::max((pcond[i * n + j] + pcond[j * n + i]) * inv2n, kProbFloor);
        }
    return P;
}

// KL(P || Q) = sum_{i != j} p log(p / q), natural log; entries assumed floored.
inline double kl_divergence(const std::vector<double>& P, const std::vector<double>& Q, std::size_t n) {
    if (P.size() != n * n || Q.size() != n * n)
        throw std::invalid_argument("kl_divergence: matrices must be n*n");
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double p = P[i * n + j];
            if (p > 0.0) kl += p * std::log(p / Q[i * n + j]);
        }
    return kl;
}

struct TsneConfig {
    double perplexity = 0.0;          // 0 = auto: min(30, (n-1)/3)
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    std::size_t momentum_switch_iter = 250;    // 1-based iteration that first uses momentum_final
    double early_exaggeration = 4.0;
    std::size_t exaggeration_iters = 100;      // iterations 1..100 use the exaggerated P
    std::uint64_t seed = 1;
    double calibration_tol = 1e-5;
    std::size_t calibration_max_steps = 50;
};

struct Embedding {
    std::size_t n = 0;
    std::vector<double> y;          // n*2, row-major
    double final_kl = 0.0;
    std::vector<double> kl_trace;   // kl_trace[t] = KL of the state produced by update t+1
};

namespace detail {

// Student-t weights and floored Q for the current layout; returns sum of weights.
inline double compute_q(const std::vector<double>& y, std::size_t n, std::vector<double>& w,
                        std::vector<double>& q) {
    double sumw = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i * n + i] = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y[i * 2] - y[j * 2];
            const double dy = y[i * 2 + 1] - y[j * 2 + 1];
            const double wij = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = wij;
            w[j * n + i] = wij;
            sumw += 2.0 * wij;
        }
    }
    for (std::size_t i = 0; i < n * n; ++i) q[i] = std::max(w[i] / sumw, kProbFloor);
    for (std::size_t i = 0; i < n; ++i) q[i * n + i] = 0.0;
    return sumw;
}

// Shared by the optimizer and the public kl_gradient: the t-SNE gradient
//   dC/dy_i = 4 * sum_j (exag*p_ij - q_ij) (y_i - y_j) (1 + |y_i - y_j|^2)^-1
// with w and q already computed for the current layout.
inline void gradient_into(const std::vector<double>& P, double exag, const std::vector<double>& w,
                          const std::vector<double>& q, const std::vector<double>& y, std::size_t n,
                          std::vector<double>& grad) {
    for (std::size_t i = 0; i < n; ++i) {
        double gx = 0.0, gy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double pq = exag * P[i * n + j] - q[i * n + j];
            const double common = 4.0 * pq * w[i * n + j];
            gx += common * (y[i * 2] - y[j * 2]);
            gy += common * (y[i * 2 + 1] - y[j * 2 + 1]);
        }
        grad[i * 2] = gx;
        grad[i * 2 + 1] = gy;
    }
}

} // namespace detail

inline double auto_perplexity(std::size_t n) {
    return std::min(30.0, double(n - 1) / 3.0);
}

// Gradient of KL(P || Q(y)) at the layout y (n x 2).
inline std::vector<double> kl_gradient(const std::vector<double>& P, const std::vector<double>& y,
                                       std::size_t n) {
    if (P.size() != n * n || y.size() != n * 2)
        throw std::invalid_argument("kl_gradient: shape mismatch");
    std::vector<double> w(n * n, 0.0), q(n * n, 0.0);
    detail::compute_q(y, n, w, q);
    std::vector<double> grad(n * 2, 0.0);
    detail::gradient_into(P, 1.0, w, q, y, n, grad);
    return grad;
}

// KL(P || Q(y)) for the current layout, matching the optimizer's floored Q.
inline double kl_objective(const std::vector<double>& P, const std::vector<double>& y, std::size_t n) {
    std::vector<double> w(n * n, 0.0), q(n * n, 0.0);
    detail::compute_q(y, n, w, q);
    return kl_divergence(P, q, n);
}

inline Embedding tsne_embed(const FeatureMatrix& X, TsneConfig cfg) {
    validate_features(X);
    const std::size_t n = X.n;
    if (cfg.perplexity <= 0.0) cfg.perplexity = auto_perplexity(n);
    if (cfg.iterations == 0) throw std::invalid_argument("tsne: iterations must be positive");

    const std::vector<double> D = pairwise_sq_dists(X);
    Calibration cal = perplexity_calibrate(D, n, cfg.perplexity, cfg.calibration_tol,
                                           cfg.calibration_max_steps);
    const std::vector<double> P = symmetrize(cal.pcond, n);

    Embedding emb;
    emb.n = n;
    emb.y.resize(n * 2);
    Xoshiro256ss rng(cfg.seed);
    for (std::size_t i = 0; i < n * 2; ++i) emb.y[i] = rng.next_gaussian() * 0.01; // variance 1e-4

    std::vector<double> vel(n * 2, 0.0);
    std::vector<double> grad(n * 2, 0.0);
    std::vector<double> w(n * n, 0.0), q(n * n, 0.0);

    emb.kl_trace.reserve(cfg.iterations);
    for (std::size_t t = 1; t <= cfg.iterations; ++t) {
        detail::compute_q(emb.y, n, w, q);
        const double exag = (t <= cfg.exaggeration_iters) ? cfg.early_exaggeration : 1.0;
        const double momentum =
            (t >= cfg.momentum_switch_iter) ? cfg.momentum_final : cfg.momentum_initial;

        detail::gradient_into(P, exag, w, q, emb.y, n, grad);
        double mean_x = 0.0, mean_y = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            vel[i * 2] = momentum * vel[i * 2] - cfg.learning_rate * grad[i * 2];
            vel[i * 2 + 1] = momentum * vel[i * 2 + 1] - cfg.learning_rate * grad[i * 2 + 1];
            emb.y[i * 2] += vel[i * 2];
            emb.y[i * 2 + 1] += vel[i * 2 + 1];
            mean_x += emb.y[i * 2];
            mean_y += emb.y[i * 2 + 1];
        }
        // re-center so coordinates stay bounded; KL is translation-invariant
        mean_x /= double(n);
        mean_y /= double(n);
        for (std::size_t i = 0; i < n; ++i) {
            emb.y[i * 2] -= mean_x;
            emb.y[i * 2 + 1] -= mean_y;
        }
        detail::compute_q(emb.y, n, w, q);
        emb.kl_trace.push_back(kl_divergence(P, q, n));
    }
    emb.final_kl = emb.kl_trace.back();
    for (double v : emb.y)
        if (!std::isfinite(v)) throw std::runtime_error("tsne: embedding diverged to non-finite values");
    return emb;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline std::string export_embedding_csv(const Embedding& emb, const std::vector<std::string>& sample_ids,
                                        const std::vector<std::string>& labels) {
    if (sample_ids.size() != emb.n || labels.size() != emb.n)
        throw std::invalid_argument("export_embedding: row count mismatch (" + std::to_string(emb.n) +
                                    " points, " + std::to_string(sample_ids.size()) + " ids, " +
                                    std::to_string(labels.size()) + " labels)");
    std::string out = "sample_id,label,x,y\n";
    for (std::size_t i = 0; i < emb.n; ++i) {
        out += csv::join_row({sample_ids[i], labels[i], csv::format_float(emb.y[i * 2]),
                              csv::format_float(emb.y[i * 2 + 1])});
    }
    return out;
}

// Per-class colors for the scatter raster (cycled when classes exceed the list).
inline constexpr std::array<std::array<std::uint8_t, 3>, 11> kScatterPalette{{
    {{31, 119, 180}},
    {{255, 127, 14}},
    {{44, 160, 44}},
    {{214, 39, 40}},
    {{148, 103, 189}},
    {{140, 86, 75}},
    {{227, 119, 194}},
    {{127, 127, 127}},
    {{188, 189, 34}},
    {{23, 190, 207}},
    {{60, 60, 120}},
}};

// White background, one 3x3 dot per point, 20-pixel margin.
inline img::RgbImage scatter_raster(const Embedding& emb, const std::vector<std::size_t>& label_indices,
                                    std::size_t width = 800, std::size_t height = 800) {
    if (label_indices.size() != emb.n)
        throw std::invalid_argument("scatter_raster: label count mismatch");
    img::RgbImage im(width, height);
    std::fill(im.pixels.begin(), im.pixels.end(), std::uint8_t(255));

    double min_x = emb.y[0], max_x = emb.y[0], min_y = emb.y[1], max_y = emb.y[1];
    for (std::size_t i = 0; i < emb.n; ++i) {
        min_x = std::min(min_x, emb.y[i * 2]);
        max_x = std::max(max_x, emb.y[i * 2]);
        min_y = std::min(min_y, emb.y[i * 2 + 1]);
        max_y = std::max(max_y, emb.y[i * 2 + 1]);
    }
    const double margin = 20.0;
    const double span_x = max_x > min_x ? max_x - min_x : 1.0;
    const double span_y = max_y > min_y ? max_y - min_y : 1.0;

    for (std::size_t i = 0; i < emb.n; ++i) {
        const double fx = (emb.y[i * 2] - min_x) / span_x;
        const double fy = (emb.y[i * 2 + 1] - min_y) / span_y;
        const std::ptrdiff_t cx = std::ptrdiff_t(margin + fx * (double(width) - 2.0 * margin));
        const std::ptrdiff_t cy = std::ptrdiff_t(margin + fy * (double(height) - 2.0 * margin));
        const auto& color = kScatterPalette[label_indices[i] % kScatterPalette.size()];
        for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
            for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                const std::ptrdiff_t px = cx + dx, py = cy + dy;
                if (px < 0 || py < 0 || px >= std::ptrdiff_t(width) || py >= std::ptrdiff_t(height))
                    continue;
                const std::size_t at = (std::size_t(py) * width + std::size_t(px)) * 3;
                im.pixels[at] = color[0];
                im.pixels[at + 1] = color[1];
                im.pixels[at + 2] = color[2];
            }
    }
    return im;
}

// ---------------------------------------------------------------------------
// Standalone feature CSV input: sample_id,label,f0..f{d-1}
// ---------------------------------------------------------------------------

struct FeatureTable {
    FeatureMatrix features;
    std::vector<std::string> sample_ids;
    std::vector<std::string> labels;
};

inline FeatureTable parse_feature_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows = csv::parse(text);
    if (rows.size() < 2) throw std::invalid_argument("feature CSV: no data rows");
    const auto& header = rows[0];
    if (header.size() < 3 || header[0] != "sample_id" || header[1] != "label")
        throw std::invalid_argument("feature CSV: header must start with sample_id,label,f0,...");
    FeatureTable t;
    t.features.d = header.size() - 2;
    t.features.n = rows.size() - 1;
    t.features.rows.reserve(t.features.n * t.features.d);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != header.size())
            throw std::invalid_argument("feature CSV: row " + std::to_string(r) + " has " +
                                        std::to_string(rows[r].size()) + " fields, expected " +
                                        std::to_string(header.size()));
        t.sample_ids.push_back(rows[r][0]);
        t.labels.push_back(rows[r][1]);
        for (std::size_t c = 2; c < rows[r].size(); ++c)
            t.features.rows.push_back(std::stod(rows[r][c]));
    }
    validate_features(t.features);
    return t;
}

} // namespace streetctx::tsne
