#include "faceedit/conditioning.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace faceedit {

const char* conditioning_kind_name(ConditioningKind k) {
    return k == ConditioningKind::depth ? "depth" : "canny_edge";
}

namespace {

// Reflect-at-border sampling.
double pixel_reflect(const Image& g, std::ptrdiff_t y, std::ptrdiff_t x) {
    std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.height);
    std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.width);
    if (y < 0) y = -y;
    if (x < 0) x = -x;
    if (y >= h) y = 2 * h - 2 - y;
    if (x >= w) x = 2 * w - 2 - x;
    return g.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
}

Image gaussian_blur5(const Image& gray, double sigma) {
    std::array<double, 5> k;
    double sum = 0.0;
    for (int i = -2; i <= 2; ++i) {
        k[i + 2] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + 2];
    }
    for (auto& v : k) v /= sum;

    Image tmp(1, gray.height, gray.width);
    for (std::size_t y = 0; y < gray.height; ++y)
        for (std::size_t x = 0; x < gray.width; ++x) {
            double acc = 0.0;
            for (int i = -2; i <= 2; ++i)
                acc += k[i + 2] * pixel_reflect(gray, y, static_cast<std::ptrdiff_t>(x) + i);
            tmp.at(0, y, x) = acc;
        }
    Image out(1, gray.height, gray.width);
    for (std::size_t y = 0; y < gray.height; ++y)
        for (std::size_t x = 0; x < gray.width; ++x) {
            double acc = 0.0;
            for (int i = -2; i <= 2; ++i)
                acc += k[i + 2] * pixel_reflect(tmp, static_cast<std::ptrdiff_t>(y) + i, x);
            out.at(0, y, x) = acc;
        }
    return out;
}

}  // namespace

ConditioningMap canny_edge(const Image& image, double low_threshold,
                           double high_threshold, const std::string& source_image_id) {
    if (low_threshold < 0 || low_threshold >= high_threshold)
        throw Error(ErrorKind::parameter,
                    "canny thresholds must satisfy 0 <= low < high");
    Image gray = image.to_gray();
    if (gray.height < 3 || gray.width < 3)
        throw Error(ErrorKind::parameter, "canny needs at least a 3x3 image");
    Image smooth = gaussian_blur5(gray, 1.4);

    std::size_t h = gray.height, w = gray.width;
    std::vector<double> mag(h * w, 0.0);
    std::vector<int> dir(h * w, 0);  // 0: E-W, 1: NE-SW, 2: N-S, 3: NW-SE
    for (std::size_t y = 1; y + 1 < h; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x) {
            auto p = [&](std::ptrdiff_t dy, std::ptrdiff_t dx) {
                return smooth.at(0, y + dy, x + dx);
            };
            double gx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) -
                        (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            double gy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) -
                        (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            mag[y * w + x] = std::hypot(gx, gy);
            double angle = std::atan2(gy, gx) * 180.0 / M_PI;
            if (angle < 0) angle += 180.0;
            int bin = 0;
            if (angle >= 22.5 && angle < 67.5) bin = 1;
            else if (angle >= 67.5 && angle < 112.5) bin = 2;
            else if (angle >= 112.5 && angle < 157.5) bin = 3;
            dir[y * w + x] = bin;
        }

    // Non-maximum suppression along the gradient direction. Ties are broken
    // asymmetrically (strict against one neighbor) so a perfectly symmetric
    // step keeps a single-pixel line.
    std::vector<std::uint8_t> cls(h * w, 0);  // 0 none, 1 weak, 2 strong
    for (std::size_t y = 1; y + 1 < h; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x) {
            double m = mag[y * w + x];
            if (m < low_threshold) continue;
            double n_strict = 0.0, n_loose = 0.0;
            switch (dir[y * w + x]) {
                case 0:
                    n_strict = mag[y * w + (x - 1)];
                    n_loose = mag[y * w + (x + 1)];
                    break;
                case 1:
                    n_strict = mag[(y + 1) * w + (x - 1)];
                    n_loose = mag[(y - 1) * w + (x + 1)];
                    break;
                case 2:
                    n_strict = mag[(y - 1) * w + x];
                    n_loose = mag[(y + 1) * w + x];
                    break;
                default:
                    n_strict = mag[(y - 1) * w + (x - 1)];
                    n_loose = mag[(y + 1) * w + (x + 1)];
                    break;
            }
            if (m > n_strict && m >= n_loose)
                cls[y * w + x] = m >= high_threshold ? 2 : 1;
        }

    // Hysteresis: weak pixels survive only when 8-connected to a strong one.
    ConditioningMap out;
    out.kind = ConditioningKind::canny_edge;
    out.height = h;
    out.width = w;
    out.grid.assign(h * w, 0.0);
    out.source_image_id = source_image_id;

    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < cls.size(); ++i)
        if (cls[i] == 2) {
            out.grid[i] = 1.0;
            stack.push_back(i);
        }
    while (!stack.empty()) {
        std::size_t i = stack.back();
        stack.pop_back();
        std::size_t y = i / w, x = i % w;
        for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
            for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                if (!dy && !dx) continue;
                std::ptrdiff_t ny = static_cast<std::ptrdiff_t>(y) + dy;
                std::ptrdiff_t nx = static_cast<std::ptrdiff_t>(x) + dx;
                if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) ||
                    nx >= static_cast<std::ptrdiff_t>(w))
                    continue;
                std::size_t j = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                if (cls[j] == 1 && out.grid[j] == 0.0) {
                    out.grid[j] = 1.0;
                    stack.push_back(j);
                }
            }
    }
    return out;
}

ConditioningMap depth_map(const Image& image, DepthModelClient& client,
                          const std::string& source_image_id) {
    std::vector<double> raw;
    try {
        raw = client.estimate(image);
    } catch (const std::exception& e) {
        throw Error(ErrorKind::conditioning_unavailable,
                    std::string("depth client failed: ") + e.what());
    }
    if (raw.size() != image.height * image.width)
        throw Error(ErrorKind::conditioning_unavailable,
                    "depth client returned a grid of the wrong size");

    auto [mn_it, mx_it] = std::minmax_element(raw.begin(), raw.end());
    double mn = *mn_it, mx = *mx_it;
    ConditioningMap out;
    out.kind = ConditioningKind::depth;
    out.height = image.height;
    out.width = image.width;
    out.source_image_id = source_image_id;
    out.grid.resize(raw.size());
    if (mx - mn < 1e-12) {
        std::fill(out.grid.begin(), out.grid.end(), 0.5);
    } else {
        for (std::size_t i = 0; i < raw.size(); ++i)
            out.grid[i] = (raw[i] - mn) / (mx - mn);
    }
    return out;
}

void save_conditioning(const std::filesystem::path& base_path, const ConditioningMap& map) {
    std::filesystem::path png = base_path;
    png += ".png";
    if (map.kind == ConditioningKind::depth) {
        save_png16_gray(png, map.grid, map.height, map.width);
    } else {
        Image img(1, map.height, map.width);
        img.data = map.grid;
        save_png(png, img);
    }
    nlohmann::json sidecar = {
        {"kind", conditioning_kind_name(map.kind)},
        {"source_image_id", map.source_image_id},
        {"normalization", map.kind == ConditioningKind::depth ? "minmax_unit" : "binary"},
    };
    std::filesystem::path js = base_path;
    js += ".json";
    std::ofstream out(js);
    if (!out) throw Error(ErrorKind::io, "cannot write sidecar: " + js.string());
    out << sidecar.dump(2) << "\n";
}

ConditioningMap load_conditioning(const std::filesystem::path& base_path) {
    std::filesystem::path js = base_path;
    js += ".json";
    std::ifstream in(js);
    if (!in) throw Error(ErrorKind::io, "cannot read sidecar: " + js.string());
    nlohmann::json sidecar = nlohmann::json::parse(in);

    ConditioningMap map;
    map.source_image_id = sidecar.value("source_image_id", "");
    std::filesystem::path png = base_path;
    png += ".png";
    if (sidecar.at("kind") == "depth") {
        map.kind = ConditioningKind::depth;
        map.grid = load_png16_gray(png, map.height, map.width);
    } else {
        map.kind = ConditioningKind::canny_edge;
        Image img = load_png(png).to_gray();
        map.height = img.height;
        map.width = img.width;
        map.grid.resize(img.data.size());
        for (std::size_t i = 0; i < img.data.size(); ++i)
            map.grid[i] = img.data[i] >= 0.5 ? 1.0 : 0.0;
    }
    return map;
}

}  // namespace faceedit
