#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "faceedit/image.hpp"
#include "faceedit/rng.hpp"
#include "faceedit/tensor.hpp"

namespace test_helpers {

using faceedit::Image;
using faceedit::Rng;
using faceedit::Tensor;

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Independent NT-Xent reference: explicit enumeration of all 2B softmax
// terms, no shared code with the library implementation.
inline double ntxent_oracle(const Tensor& z0, const Tensor& zt, double tau) {
    std::size_t b = z0.rows(), d = z0.cols(), n = 2 * b;
    auto view = [&](std::size_t a, std::size_t j) {
        const Tensor& m = a < b ? z0 : zt;
        std::size_t r = a < b ? a : a - b;
        double nr = 0;
        for (std::size_t k = 0; k < d; ++k) nr += m.at2(r, k) * m.at2(r, k);
        return m.at2(r, j) / std::sqrt(nr);
    };
    auto sim = [&](std::size_t a, std::size_t c) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += view(a, j) * view(c, j);
        return s;
    };
    double total = 0;
    for (std::size_t a = 0; a < n; ++a) {
        std::size_t p = (a + b) % n;
        double denom = 0;
        for (std::size_t c = 0; c < n; ++c)
            if (c != a) denom += std::exp(sim(a, c) / tau);
        total += -std::log(std::exp(sim(a, p) / tau) / denom);
    }
    return total / static_cast<double>(n);
}

// Central finite difference of f along one coordinate of x.
template <typename F>
double central_difference(F&& f, Tensor& x, std::size_t i, double step = 1e-4) {
    double keep = x[i];
    x[i] = keep + step;
    double hi = f();
    x[i] = keep - step;
    double lo = f();
    x[i] = keep;
    return (hi - lo) / (2.0 * step);
}

inline double rel_error(double got, double want) {
    double denom = std::max({std::fabs(got), std::fabs(want), 1e-8});
    return std::fabs(got - want) / denom;
}

// Deterministic synthetic 64x64 "subject" portraits: a smooth per-subject
// color field plus a per-image variation, enough structure for the stub
// matcher to tell subjects apart.
inline Image toy_face(const std::string& subject_id, int variant,
                      std::size_t size = 64) {
    Rng rng(faceedit::fnv1a64(subject_id));
    double base_r = 0.25 + 0.5 * rng.uniform();
    double base_g = 0.25 + 0.5 * rng.uniform();
    double base_b = 0.25 + 0.5 * rng.uniform();
    double fx = 1.0 + rng.uniform() * 3.0;
    double fy = 1.0 + rng.uniform() * 3.0;
    Rng vr(faceedit::fnv1a64(subject_id) ^ static_cast<std::uint64_t>(variant + 1));
    double jitter = 0.04 * vr.uniform();
    Image img(3, size, size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            double u = static_cast<double>(x) / size;
            double v = static_cast<double>(y) / size;
            double wave = 0.15 * std::sin(fx * 6.28318 * u) * std::cos(fy * 6.28318 * v);
            img.at(0, y, x) = std::clamp(base_r + wave + jitter, 0.0, 1.0);
            img.at(1, y, x) = std::clamp(base_g + wave * 0.8 - jitter, 0.0, 1.0);
            img.at(2, y, x) = std::clamp(base_b - wave * 0.6, 0.0, 1.0);
        }
    return img;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("faceedit_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace test_helpers
