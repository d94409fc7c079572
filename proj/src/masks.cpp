#include "faceedit/masks.hpp"

#include <algorithm>

#include "faceedit/image.hpp"

namespace faceedit {

BinaryMask::BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill)
    : height(h), width(w), grid(h * w, fill) {
    validate();
}

std::size_t BinaryMask::foreground_count() const {
    return static_cast<std::size_t>(
        std::count(grid.begin(), grid.end(), std::uint8_t{1}));
}

void BinaryMask::validate() const {
    if (height == 0 || width == 0)
        throw Error(ErrorKind::parameter, "mask dimensions must be positive");
    if (grid.size() != height * width)
        throw Error(ErrorKind::dimension_mismatch, "mask grid size mismatch");
    for (auto v : grid)
        if (v > 1)
            throw Error(ErrorKind::parameter, "mask values must be 0 or 1");
}

namespace {

void require_same_dims(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (!a.same_dims(b))
        throw Error(ErrorKind::dimension_mismatch,
                    std::string(what) + ": mask dimensions differ");
}

}  // namespace

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a, b, "mask_union");
    BinaryMask out(a.height, a.width);
    for (std::size_t i = 0; i < out.grid.size(); ++i)
        out.grid[i] = a.grid[i] | b.grid[i];
    return out;
}

BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a, b, "mask_intersect");
    BinaryMask out(a.height, a.width);
    for (std::size_t i = 0; i < out.grid.size(); ++i)
        out.grid[i] = a.grid[i] & b.grid[i];
    return out;
}

BinaryMask mask_complement(const BinaryMask& a) {
    BinaryMask out(a.height, a.width);
    for (std::size_t i = 0; i < out.grid.size(); ++i)
        out.grid[i] = a.grid[i] ? 0 : 1;
    return out;
}

BinaryMask downsample_mask(const BinaryMask& m, std::size_t factor) {
    if (factor == 0)
        throw Error(ErrorKind::parameter, "downsample factor must be positive");
    std::size_t oh = (m.height + factor - 1) / factor;
    std::size_t ow = (m.width + factor - 1) / factor;
    BinaryMask out(oh, ow);
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x)
            if (m.at(y, x)) out.at(y / factor, x / factor) = 1;
    return out;
}

BinaryMask dilate_mask(const BinaryMask& m, std::size_t radius) {
    if (radius == 0) return m;
    BinaryMask out(m.height, m.width);
    std::ptrdiff_t r = static_cast<std::ptrdiff_t>(radius);
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
                for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
                    std::ptrdiff_t ny = static_cast<std::ptrdiff_t>(y) + dy;
                    std::ptrdiff_t nx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (ny >= 0 && nx >= 0 && ny < static_cast<std::ptrdiff_t>(m.height) &&
                        nx < static_cast<std::ptrdiff_t>(m.width))
                        out.at(ny, nx) = 1;
                }
        }
    return out;
}

Tensor blend_latents(const BinaryMask& m_latent, const Tensor& z_known,
                     const Tensor& z_unknown) {
    require_same_shape(z_known, z_unknown, "blend_latents");
    if (z_known.rank() != 3)
        throw Error(ErrorKind::dimension_mismatch,
                    "blend_latents expects [C, H, W] latents");
    std::size_t c = z_known.dim(0), h = z_known.dim(1), w = z_known.dim(2);
    if (m_latent.height != h || m_latent.width != w)
        throw Error(ErrorKind::dimension_mismatch,
                    "blend_latents: mask does not match latent spatial dims");
    Tensor out(z_known.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                std::size_t i = (ch * h + y) * w + x;
                out[i] = m_latent.at(y, x) ? z_unknown[i] : z_known[i];
            }
    return out;
}

void RegionLibrary::add(const std::string& image_id, const std::string& region,
                        BinaryMask mask) {
    mask.validate();
    auto& entry = by_image_[image_id];
    if (!entry.empty() && !entry.begin()->second.same_dims(mask))
        throw Error(ErrorKind::dimension_mismatch,
                    "region masks for '" + image_id + "' must share dimensions");
    entry[region] = std::move(mask);
}

bool RegionLibrary::has(const std::string& image_id, const std::string& region) const {
    auto it = by_image_.find(image_id);
    return it != by_image_.end() && it->second.count(region) > 0;
}

const BinaryMask& RegionLibrary::get(const std::string& image_id,
                                     const std::string& region) const {
    auto it = by_image_.find(image_id);
    if (it != by_image_.end()) {
        auto jt = it->second.find(region);
        if (jt != it->second.end()) return jt->second;
    }
    throw Error(ErrorKind::missing_region,
                "no mask for region '" + region + "' of image '" + image_id + "'");
}

std::vector<std::string> RegionLibrary::regions_for(const std::string& image_id) const {
    std::vector<std::string> names;
    auto it = by_image_.find(image_id);
    if (it != by_image_.end())
        for (const auto& [name, _] : it->second) names.push_back(name);
    return names;
}

RegionLibrary RegionLibrary::load_directory(const std::filesystem::path& dir,
                                            const std::string& image_id) {
    namespace fs = std::filesystem;
    RegionLibrary lib;
    if (!fs::exists(dir))
        throw Error(ErrorKind::io, "region directory not found: " + dir.string());
    const std::string prefix = image_id + "_";
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        std::string stem = entry.path().stem().string();
        std::string region;
        if (stem.rfind(prefix, 0) == 0) region = stem.substr(prefix.size());
        else region = stem;
        lib.add(image_id, region, load_mask_png(entry.path()));
    }
    return lib;
}

BinaryMask make_mask(const RegionLibrary& lib, const std::string& image_id,
                     const std::vector<std::string>& regions) {
    if (regions.empty())
        throw Error(ErrorKind::parameter, "make_mask needs at least one region name");
    for (const auto& r : regions) {
        if (!lib.has(image_id, r)) {
            std::string available;
            for (const auto& name : lib.regions_for(image_id)) {
                if (!available.empty()) available += ", ";
                available += name;
            }
            throw Error(ErrorKind::missing_region,
                        "region '" + r + "' not available for image '" + image_id +
                            "' (available: " + available + ")");
        }
    }
    BinaryMask out = lib.get(image_id, regions.front());
    for (std::size_t i = 1; i < regions.size(); ++i)
        out = mask_union(out, lib.get(image_id, regions[i]));
    return out;
}

void save_mask_png(const std::filesystem::path& path, const BinaryMask& m) {
    Image img(1, m.height, m.width);
    for (std::size_t i = 0; i < m.grid.size(); ++i)
        img.data[i] = m.grid[i] ? 1.0 : 0.0;
    save_png(path, img);
}

BinaryMask load_mask_png(const std::filesystem::path& path) {
    Image img = load_png(path);
    Image gray = img.to_gray();
    BinaryMask m(gray.height, gray.width);
    for (std::size_t i = 0; i < m.grid.size(); ++i)
        m.grid[i] = gray.data[i] >= 0.5 ? 1 : 0;
    return m;
}

}  // namespace faceedit
