#include <doctest.h>

#include <cmath>

#include "faceedit/rng.hpp"
#include "faceedit/tsne.hpp"
#include "helpers.hpp"

using namespace faceedit;
using test_helpers::TempDir;

namespace {

// mean silhouette over two known clusters
double silhouette(const Tensor& y, std::size_t split) {
    std::size_t n = y.rows(), d = y.cols();
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) {
            double diff = y.at2(i, k) - y.at2(j, k);
            s += diff * diff;
        }
        return std::sqrt(s);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        bool first = i < split;
        double a = 0, b = 0;
        std::size_t na = 0, nb = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if ((j < split) == first) {
                a += dist(i, j);
                ++na;
            } else {
                b += dist(i, j);
                ++nb;
            }
        }
        a /= na;
        b /= nb;
        total += (b - a) / std::max(a, b);
    }
    return total / n;
}

}  // namespace

TEST_SUITE("tsne") {

TEST_CASE("identical vectors collapse to one cluster") {
    std::size_t n = 10, d = 32;
    Tensor points({n, d});
    Rng rng(61);
    std::vector<double> proto(d);
    for (auto& v : proto) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) points.at2(i, k) = proto[k];

    TsneConfig cfg;
    cfg.seed = 1;
    cfg.iterations = 200;
    TsneResult r = tsne(points, cfg);
    double max_pair = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 3; ++k) {
                double diff = r.coordinates.at2(i, k) - r.coordinates.at2(j, k);
                s += diff * diff;
            }
            max_pair = std::max(max_pair, std::sqrt(s));
        }
    CHECK(max_pair < 1.0);  // well inside the inter-cluster scale of mixed sets
}

TEST_CASE("two separated blobs in 512-D separate in 3-D") {
    std::size_t per = 15, d = 512;
    Tensor points({2 * per, d});
    Rng rng(62);
    for (std::size_t i = 0; i < 2 * per; ++i) {
        double center = i < per ? 4.0 : -4.0;
        for (std::size_t k = 0; k < d; ++k)
            points.at2(i, k) = (k == 0 ? center : 0.0) + 0.05 * rng.normal();
    }
    TsneConfig cfg;
    cfg.seed = 2;
    cfg.iterations = 400;
    TsneResult r = tsne(points, cfg);
    CHECK(silhouette(r.coordinates, per) > 0.5);
}

TEST_CASE("fixed seed reproduces coordinates exactly") {
    Tensor points({12, 16});
    Rng rng(63);
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = rng.normal();
    TsneConfig cfg;
    cfg.seed = 3;
    cfg.iterations = 150;
    TsneResult a = tsne(points, cfg);
    TsneResult b = tsne(points, cfg);
    for (std::size_t i = 0; i < a.coordinates.size(); ++i)
        CHECK(a.coordinates[i] == b.coordinates[i]);
}

TEST_CASE("too few points is a parameter error") {
    Tensor points({4, 8});
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = 0.1 * (i + 1);
    TsneConfig cfg;  // out_dims 3 needs >= 6 points
    CHECK_THROWS_AS(tsne(points, cfg), Error);
}

TEST_CASE("export writes csv and svg") {
    TempDir dir("tsne");
    Rng rng(64);
    std::vector<IdentityEmbedding> embeddings;
    for (int i = 0; i < 8; ++i) {
        IdentityEmbedding e;
        e.subject_id = "s" + std::to_string(i % 2);
        e.matcher_id = "stub";
        e.detect_ok = true;
        e.vector.resize(32);
        for (auto& v : e.vector) v = rng.normal();
        embeddings.push_back(e);
    }
    TsneConfig cfg;
    cfg.seed = 4;
    cfg.iterations = 100;
    TsneResult r = tsne_export(embeddings, dir.path() / "proj", cfg);
    CHECK(r.coordinates.rows() == 8);
    CHECK(r.coordinates.cols() == 3);
    CHECK(std::filesystem::exists(dir.path() / "proj.csv"));
    CHECK(std::filesystem::exists(dir.path() / "proj.svg"));
}

}  // TEST_SUITE
