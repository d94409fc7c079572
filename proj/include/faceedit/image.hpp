#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faceedit/errors.hpp"

namespace faceedit {

// Planar float image, values in [0,1], channels-first (c, y, x).
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w)
        : channels(c), height(h), width(w), data(c * h * w, 0.0) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }

    bool same_dims(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    Image to_gray() const;
};

// 8-bit PNG, 1 or 3 channels. Values are clamped to [0,1] and quantized.
void save_png(const std::filesystem::path& path, const Image& img);
Image load_png(const std::filesystem::path& path);

// 16-bit grayscale PNG for depth caches.
void save_png16_gray(const std::filesystem::path& path,
                     const std::vector<double>& grid, std::size_t height,
                     std::size_t width);
std::vector<double> load_png16_gray(const std::filesystem::path& path,
                                    std::size_t& height, std::size_t& width);

}  // namespace faceedit
