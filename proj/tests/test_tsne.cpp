#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <streetctx/rng.hpp>
#include <streetctx/tsne.hpp>

#include "helpers.hpp"

using namespace streetctx;

namespace {

tsne::FeatureMatrix random_features(std::size_t n, std::size_t d, std::uint64_t seed,
                                    double scale = 1.0) {
    tsne::FeatureMatrix X;
    X.n = n;
    X.d = d;
    X.rows.resize(n * d);
    Xoshiro256ss rng(seed);
    for (double& v : X.rows) v = rng.next_gaussian() * scale;
    return X;
}

double row_entropy_bits(const std::vector<double>& pcond, std::size_t n, std::size_t i) {
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double p = pcond[i * n + j];
        if (p > 0.0) h -= p * std::log2(p);
    }
    return h;
}

}  // namespace

TEST_CASE("feature matrices are validated before any t-SNE math", "[tsne]") {
    tsne::FeatureMatrix tiny;
    tiny.n = 3;
    tiny.d = 2;
    tiny.rows.assign(6, 0.0);
    REQUIRE_THROWS_WITH(tsne::validate_features(tiny),
                        Catch::Matchers::ContainsSubstring("needs at least 4 points, got 3"));

    tsne::FeatureMatrix flat;
    flat.n = 4;
    flat.d = 0;
    REQUIRE_THROWS_WITH(tsne::validate_features(flat),
                        Catch::Matchers::ContainsSubstring("zero dimensions"));

    tsne::FeatureMatrix ragged;
    ragged.n = 4;
    ragged.d = 2;
    ragged.rows.assign(7, 0.0);
    REQUIRE_THROWS_WITH(tsne::validate_features(ragged),
                        Catch::Matchers::ContainsSubstring("does not match n*d"));

    tsne::FeatureMatrix poisoned = random_features(4, 2, 1);
    poisoned.rows[3] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_WITH(tsne::validate_features(poisoned),
                        Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("standardization z-scores live dimensions and zeroes dead ones", "[tsne]") {
    tsne::FeatureMatrix X;
    X.n = 4;
    X.d = 2;
    X.rows = {1.0, 7.0, 2.0, 7.0, 3.0, 7.0, 4.0, 7.0};
    tsne::standardize_features(X);

    const double sd = std::sqrt(1.25);  // population sd of {1,2,3,4}
    REQUIRE(X.rows[0] == Catch::Approx(-1.5 / sd).margin(1e-12));
    REQUIRE(X.rows[2] == Catch::Approx(-0.5 / sd).margin(1e-12));
    REQUIRE(X.rows[4] == Catch::Approx(0.5 / sd).margin(1e-12));
    REQUIRE(X.rows[6] == Catch::Approx(1.5 / sd).margin(1e-12));
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(X.rows[i * 2 + 1] == 0.0);

    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += X.rows[i * 2];
    mean /= 4.0;
    for (std::size_t i = 0; i < 4; ++i) var += X.rows[i * 2] * X.rows[i * 2];
    var /= 4.0;
    REQUIRE(mean == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(var == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("pairwise squared distances match hand values and a naive loop", "[tsne]") {
    tsne::FeatureMatrix X;
    X.n = 4;
    X.d = 2;
    X.rows = {0.0, 0.0, 3.0, 4.0, 1.0, 1.0, 0.0, 2.0};
    const auto D = tsne::pairwise_sq_dists(X);
    REQUIRE(D[0 * 4 + 1] == 25.0);
    REQUIRE(D[0 * 4 + 2] == 2.0);
    REQUIRE(D[0 * 4 + 3] == 4.0);
    REQUIRE(D[1 * 4 + 2] == 13.0);
    REQUIRE(D[1 * 4 + 3] == 13.0);
    REQUIRE(D[2 * 4 + 3] == 2.0);
    for (std::size_t i = 0; i < 4; ++i) {
        REQUIRE(D[i * 4 + i] == 0.0);
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(D[i * 4 + j] == D[j * 4 + i]);
    }

    const auto Y = random_features(12, 6, 99);
    const auto fast = tsne::pairwise_sq_dists(Y);
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 12; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 6; ++k) {
                const double t = Y.rows[i * 6 + k] - Y.rows[j * 6 + k];
                acc += t * t;
            }
            REQUIRE(std::fabs(fast[i * 12 + j] - acc) < 1e-12);
        }
}

TEST_CASE("equidistant points defeat the entropy search but keep uniform rows", "[tsne]") {
    // Three mutually equidistant points: each conditional row is forced to
    // (1/2, 1/2) for every precision, so entropy is pinned at 1 bit and a
    // 0.5-perplexity target (-1 bit) is unreachable.
    const std::vector<double> D = {0, 1, 1, 1, 0, 1, 1, 1, 0};
    const auto cal = tsne::perplexity_calibrate(D, 3, 0.5);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(cal.flagged[i] == 1);
        for (std::size_t j = 0; j < 3; ++j) {
            const double expected = i == j ? 0.0 : 0.5;
            REQUIRE(cal.pcond[i * 3 + j] == Catch::Approx(expected).margin(1e-12));
        }
    }
}

TEST_CASE("calibrated rows hit the target entropy within 1e-4 bits", "[tsne]") {
    const auto X = random_features(50, 10, 4242);
    const auto D = tsne::pairwise_sq_dists(X);
    const double perplexity = 10.0;
    const auto cal = tsne::perplexity_calibrate(D, 50, perplexity);
    const double target = std::log2(perplexity);
    for (std::size_t i = 0; i < 50; ++i) {
        REQUIRE(cal.flagged[i] == 0);
        REQUIRE(std::fabs(row_entropy_bits(cal.pcond, 50, i) - target) < 1e-4);
        double sum = 0.0;
        for (std::size_t j = 0; j < 50; ++j) sum += cal.pcond[i * 50 + j];
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(cal.pcond[i * 50 + i] == 0.0);
        REQUIRE(cal.beta[i] > 0.0);
    }
}

TEST_CASE("duplicate points do not break the calibration", "[tsne]") {
    auto X = random_features(10, 3, 7);
    for (std::size_t k = 0; k < 3; ++k) X.rows[1 * 3 + k] = X.rows[0 * 3 + k];
    const auto D = tsne::pairwise_sq_dists(X);
    const auto cal = tsne::perplexity_calibrate(D, 10, 2.0);
    for (std::size_t i = 0; i < 10; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 10; ++j) {
            REQUIRE(std::isfinite(cal.pcond[i * 10 + j]));
            REQUIRE(cal.pcond[i * 10 + j] >= 0.0);
            sum += cal.pcond[i * 10 + j];
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("oversized perplexities are rejected", "[tsne]") {
    const auto X = random_features(10, 3, 7);
    const auto D = tsne::pairwise_sq_dists(X);
    REQUIRE_THROWS_WITH(tsne::perplexity_calibrate(D, 10, 4.0),
                        Catch::Matchers::ContainsSubstring("too large for 10 points") &&
                            Catch::Matchers::ContainsSubstring("3*perplexity <= n-1"));
    REQUIRE_THROWS_AS(tsne::perplexity_calibrate(D, 9, 4.0), std::invalid_argument);
}

TEST_CASE("symmetrization averages, floors, and conserves unit mass", "[tsne]") {
    // The equidistant trio: every conditional entry is 1/2, so every joint
    // entry is (1/2 + 1/2) / (2*3) = 1/6 and the mass totals exactly one.
    const std::vector<double> pcond = {0, 0.5, 0.5, 0.5, 0, 0.5, 0.5, 0.5, 0};
    const auto P = tsne::symmetrize(pcond, 3);
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            if (i == j) {
                REQUIRE(P[i * 3 + j] == 0.0);
                continue;
            }
            REQUIRE(P[i * 3 + j] == Catch::Approx(1.0 / 6.0).margin(1e-15));
            REQUIRE(P[i * 3 + j] == P[j * 3 + i]);
            total += P[i * 3 + j];
        }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));

    // All-zero conditionals expose the off-diagonal floor.
    const auto floored = tsne::symmetrize(std::vector<double>(16, 0.0), 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            REQUIRE(floored[i * 4 + j] == (i == j ? 0.0 : tsne::kProbFloor));
        }

    REQUIRE_THROWS_AS(tsne::symmetrize(pcond, 4), std::invalid_argument);
}

TEST_CASE("kl divergence is zero at identity and ln 2 on a halved pair", "[tsne]") {
    const auto X = random_features(8, 3, 31);
    const auto D = tsne::pairwise_sq_dists(X);
    const auto P = tsne::symmetrize(tsne::perplexity_calibrate(D, 8, 2.0).pcond, 8);
    REQUIRE(tsne::kl_divergence(P, P, 8) == 0.0);

    // n=2 toy: P puts 1/2 on each off-diagonal cell, Q puts 1/4.
    const std::vector<double> Ptoy = {0, 0.5, 0.5, 0};
    const std::vector<double> Qtoy = {0, 0.25, 0.25, 0};
    REQUIRE(tsne::kl_divergence(Ptoy, Qtoy, 2) == Catch::Approx(std::log(2.0)).margin(1e-12));

    // Naive-loop oracle on random floored matrices.
    Xoshiro256ss rng(77);
    std::vector<double> A(36, 0.0), B(36, 0.0);
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            if (i == j) continue;
            A[i * 6 + j] = rng.next_double() + 0.01;
            B[i * 6 + j] = rng.next_double() + 0.01;
            sa += A[i * 6 + j];
            sb += B[i * 6 + j];
        }
    for (double& v : A) v /= sa;
    for (double& v : B) v /= sb;
    double naive = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            if (i != j && A[i * 6 + j] > 0.0)
                naive += A[i * 6 + j] * std::log(A[i * 6 + j] / B[i * 6 + j]);
    REQUIRE(std::fabs(tsne::kl_divergence(A, B, 6) - naive) < 1e-12);

    REQUIRE_THROWS_AS(tsne::kl_divergence(A, B, 5), std::invalid_argument);
}

TEST_CASE("the t-SNE gradient matches finite differences on a 6-point toy", "[tsne]") {
    const auto X = random_features(6, 3, 1618);
    const auto D = tsne::pairwise_sq_dists(X);
    const auto P = tsne::symmetrize(tsne::perplexity_calibrate(D, 6, 1.5).pcond, 6);

    Xoshiro256ss rng(271828);
    std::vector<double> y(12);
    for (double& v : y) v = rng.next_gaussian() * 0.5;

    const auto grad = tsne::kl_gradient(P, y, 6);
    const double eps = 1e-5;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double keep = y[k];
        y[k] = keep + eps;
        const double up = tsne::kl_objective(P, y, 6);
        y[k] = keep - eps;
        const double down = tsne::kl_objective(P, y, 6);
        y[k] = keep;
        const double fd = (up - down) / (2.0 * eps);
        REQUIRE(testutil::rel_err(grad[k], fd) < 1e-5);
    }

    REQUIRE_THROWS_AS(tsne::kl_gradient(P, std::vector<double>(10, 0.0), 6),
                      std::invalid_argument);
}

TEST_CASE("the low-dimensional affinities form a symmetric distribution", "[tsne]") {
    Xoshiro256ss rng(55);
    const std::size_t n = 20;
    std::vector<double> y(n * 2);
    for (double& v : y) v = rng.next_gaussian();

    std::vector<double> w(n * n, 0.0), q(n * n, 0.0);
    tsne::detail::compute_q(y, n, w, q);

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        REQUIRE(q[i * n + i] == 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            REQUIRE(q[i * n + j] >= 0.0);
            REQUIRE(q[i * n + j] == q[j * n + i]);
            total += q[i * n + j];
        }
    }
    // The floor can only add mass, and only in 1e-12 sized steps.
    REQUIRE(total == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("auto perplexity caps at 30 and scales down for small sets", "[tsne]") {
    REQUIRE(tsne::auto_perplexity(91) == 30.0);
    REQUIRE(tsne::auto_perplexity(1000) == 30.0);
    REQUIRE(tsne::auto_perplexity(16) == 5.0);
    REQUIRE(tsne::auto_perplexity(10) == 3.0);
}

TEST_CASE("embeddings are deterministic per seed", "[tsne]") {
    const auto X = random_features(12, 4, 2024);
    tsne::TsneConfig cfg;
    cfg.iterations = 60;
    cfg.seed = 5;

    const auto a = tsne::tsne_embed(X, cfg);
    const auto b = tsne::tsne_embed(X, cfg);
    REQUIRE(a.y == b.y);
    REQUIRE(a.kl_trace == b.kl_trace);
    REQUIRE(a.kl_trace.size() == 60u);
    REQUIRE(a.final_kl == a.kl_trace.back());
    for (double v : a.y) REQUIRE(std::isfinite(v));

    cfg.seed = 6;
    const auto c = tsne::tsne_embed(X, cfg);
    REQUIRE_FALSE(a.y == c.y);

    cfg.iterations = 0;
    REQUIRE_THROWS_WITH(tsne::tsne_embed(X, cfg),
                        Catch::Matchers::ContainsSubstring("iterations must be positive"));
}

TEST_CASE("three well-separated gaussians embed with a clean silhouette", "[tsne]") {
    const std::size_t per = 15, n = 3 * per, d = 10;
    tsne::FeatureMatrix X;
    X.n = n;
    X.d = d;
    X.rows.resize(n * d);
    Xoshiro256ss rng(31337);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cluster = i / per;
        labels[i] = cluster;
        for (std::size_t k = 0; k < d; ++k) {
            const double center = (k == cluster) ? 10.0 : 0.0;
            X.rows[i * d + k] = center + rng.next_gaussian() * 0.5;
        }
    }

    tsne::TsneConfig cfg;
    cfg.iterations = 1000;
    cfg.seed = 9;
    const auto emb = tsne::tsne_embed(X, cfg);
    REQUIRE(testutil::silhouette(emb.y, 2, labels) >= 0.6);
}

TEST_CASE("embedding CSV export writes one row per point", "[tsne]") {
    tsne::Embedding emb;
    emb.n = 2;
    emb.y = {1.5, -2.25, 0.0, 3.0};
    const std::string text = tsne::export_embedding_csv(emb, {"a", "b"}, {"X", "Y"});
    REQUIRE(text == "sample_id,label,x,y\na,X,1.5,-2.25\nb,Y,0,3\n");

    REQUIRE_THROWS_WITH(tsne::export_embedding_csv(emb, {"a"}, {"X", "Y"}),
                        Catch::Matchers::ContainsSubstring("row count mismatch"));
}

TEST_CASE("scatter rasters are deterministic dots inside the margin", "[tsne]") {
    tsne::Embedding emb;
    emb.n = 4;
    emb.y = {-1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0};
    const std::vector<std::size_t> labels = {0, 1, 2, 0};

    const auto a = tsne::scatter_raster(emb, labels);
    const auto b = tsne::scatter_raster(emb, labels);
    REQUIRE(a.width == 800u);
    REQUIRE(a.height == 800u);
    REQUIRE(a.pixels == b.pixels);

    std::size_t colored = 0;
    for (std::size_t y = 0; y < a.height; ++y)
        for (std::size_t x = 0; x < a.width; ++x) {
            const std::size_t at = (y * a.width + x) * 3;
            if (a.pixels[at] != 255 || a.pixels[at + 1] != 255 || a.pixels[at + 2] != 255) {
                ++colored;
                REQUIRE(x >= 19u);
                REQUIRE(x <= 781u);
                REQUIRE(y >= 19u);
                REQUIRE(y <= 781u);
            }
        }
    REQUIRE(colored == 4u * 9u);  // four disjoint 3x3 dots

    REQUIRE_THROWS_WITH(tsne::scatter_raster(emb, {0, 1}),
                        Catch::Matchers::ContainsSubstring("label count mismatch"));
}

TEST_CASE("feature CSVs parse into validated matrices", "[tsne]") {
    const std::string text =
        "sample_id,label,f0,f1\n"
        "s0,Park,0.5,-1\n"
        "s1,Alley,1.5,2\n"
        "s2,Park,-0.25,0\n"
        "s3,Alley,3,4\n";
    const auto table = tsne::parse_feature_csv(text);
    REQUIRE(table.features.n == 4u);
    REQUIRE(table.features.d == 2u);
    REQUIRE(table.sample_ids == std::vector<std::string>{"s0", "s1", "s2", "s3"});
    REQUIRE(table.labels == std::vector<std::string>{"Park", "Alley", "Park", "Alley"});
    REQUIRE(table.features.rows[0] == 0.5);
    REQUIRE(table.features.rows[7] == 4.0);

    REQUIRE_THROWS_WITH(tsne::parse_feature_csv("id,label,f0\na,b,1\n"),
                        Catch::Matchers::ContainsSubstring("header must start with"));
    REQUIRE_THROWS_WITH(
        tsne::parse_feature_csv("sample_id,label,f0,f1\ns0,Park,1\ns1,Alley,1,2\ns2,P,1,2\ns3,A,1,2\n"),
        Catch::Matchers::ContainsSubstring("row 1 has 3 fields, expected 4"));
    REQUIRE_THROWS_WITH(tsne::parse_feature_csv("sample_id,label,f0\n"),
                        Catch::Matchers::ContainsSubstring("no data rows"));
}
