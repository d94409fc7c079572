#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "faceedit/errors.hpp"
#include "faceedit/tensor.hpp"

namespace faceedit {

// Foreground/background grid: 1 marks pixels to edit, 0 pixels to preserve.
struct BinaryMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> grid;  // row-major, values strictly {0,1}

    BinaryMask() = default;
    BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0);

    std::uint8_t& at(std::size_t y, std::size_t x) { return grid[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return grid[y * width + x]; }

    bool same_dims(const BinaryMask& o) const {
        return height == o.height && width == o.width;
    }
    std::size_t foreground_count() const;
    bool all_zero() const { return foreground_count() == 0; }
    bool all_one() const { return foreground_count() == grid.size(); }

    void validate() const;  // dims positive, values in {0,1}
};

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_complement(const BinaryMask& a);

// Block-max pooling: any foreground pixel in a block marks the output cell,
// so a downsampled mask never drops requested pixels. Dimensions that do not
// divide the factor are padded with background before pooling.
BinaryMask downsample_mask(const BinaryMask& m, std::size_t factor);

// Optional seam-quality dilation (square structuring element of the given
// radius); radius 0 is the identity.
BinaryMask dilate_mask(const BinaryMask& m, std::size_t radius);

// Per-element selection over channels-first latents [C, H, W]: background
// cells (m = 0) come from z_known bit-identically, foreground from z_unknown.
Tensor blend_latents(const BinaryMask& m_latent, const Tensor& z_known,
                     const Tensor& z_unknown);

// Per-image mapping region-name -> mask (CelebAMaskHQ-style annotations).
class RegionLibrary {
public:
    void add(const std::string& image_id, const std::string& region, BinaryMask mask);
    bool has(const std::string& image_id, const std::string& region) const;
    const BinaryMask& get(const std::string& image_id, const std::string& region) const;
    std::vector<std::string> regions_for(const std::string& image_id) const;

    // Scans dir for <region>.png or <image_id>_<region>.png files.
    static RegionLibrary load_directory(const std::filesystem::path& dir,
                                        const std::string& image_id);

private:
    std::map<std::string, std::map<std::string, BinaryMask>> by_image_;
};

// Pixelwise union of the named region masks for one image.
BinaryMask make_mask(const RegionLibrary& lib, const std::string& image_id,
                     const std::vector<std::string>& regions);

// Single-channel PNG with the 0/255 <-> 0/1 convention.
void save_mask_png(const std::filesystem::path& path, const BinaryMask& m);
BinaryMask load_mask_png(const std::filesystem::path& path);

}  // namespace faceedit
