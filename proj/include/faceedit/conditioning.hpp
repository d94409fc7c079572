#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "faceedit/image.hpp"

namespace faceedit {

enum class ConditioningKind { depth, canny_edge };

const char* conditioning_kind_name(ConditioningKind k);

// Auxiliary detail-preservation signal for local editing: a normalized depth
// grid or a binary edge grid, at image resolution.
struct ConditioningMap {
    ConditioningKind kind = ConditioningKind::canny_edge;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> grid;  // depth: [0,1]; edge: {0,1}
    std::string source_image_id;

    double at(std::size_t y, std::size_t x) const { return grid[y * width + x]; }
};

// External depth-model interface (DPT-style service or local weights); the
// artifact never trains one. Implementations must be safe to share or pool.
class DepthModelClient {
public:
    virtual ~DepthModelClient() = default;
    // Raw (unnormalized) per-pixel depth, row-major height*width.
    virtual std::vector<double> estimate(const Image& image) = 0;
    virtual std::string client_id() const = 0;
};

// Classic Canny: Gaussian smoothing, Sobel gradients, non-maximum
// suppression, double-threshold hysteresis. Thresholds apply to the Sobel
// gradient magnitude of [0,1] intensities.
ConditioningMap canny_edge(const Image& image, double low_threshold,
                           double high_threshold,
                           const std::string& source_image_id = "");

// Depth via the client, min-max normalized per image; constant maps
// normalize to 0.5. Client failures surface as conditioning-unavailable.
ConditioningMap depth_map(const Image& image, DepthModelClient& client,
                          const std::string& source_image_id = "");

// Cache layout: <base>.png (edge, 8-bit) or <base>.png (depth, 16-bit gray)
// plus <base>.json recording kind, source and normalization.
void save_conditioning(const std::filesystem::path& base_path, const ConditioningMap& map);
ConditioningMap load_conditioning(const std::filesystem::path& base_path);

}  // namespace faceedit
