#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faceedit/biometric.hpp"
#include "faceedit/losses.hpp"

namespace faceedit {

// Strict subset of TOML sufficient for experiment manifests: comments,
// [section] / [section.sub] headers, bare keys, strings, integers, floats,
// booleans, and flat arrays. Anything else is a schema error.
nlohmann::json parse_toml(const std::string& text);
nlohmann::json parse_toml_file(const std::filesystem::path& path);

enum class Method { db_base, db_prop, ti, ti_cs, cn, cn_ti, cn_ip };
const char* method_name(Method m);
std::optional<Method> method_from_name(const std::string& name);
bool method_is_global(Method m);

enum class ClientKind { stub, http };
enum class ThresholdSource { pool, original, both };

struct ExperimentManifest {
    int schema_version = 1;
    Method method = Method::db_prop;
    std::string backbone_id = "toy";
    std::uint64_t seed = 0;
    std::filesystem::path output_root;

    std::vector<std::string> subjects;
    std::vector<std::string> attributes;  // canonical ids
    std::vector<std::string> matchers;
    std::vector<double> fmr_targets = {1e-4, 1e-3};

    struct Data {
        std::filesystem::path images_root;
        std::optional<std::filesystem::path> masks_root;
        std::optional<std::filesystem::path> gallery_root;
        std::optional<std::filesystem::path> probes_root;
        std::optional<std::filesystem::path> regularization_root;
        std::optional<std::filesystem::path> annotations;
    } data;

    struct Clients {
        ClientKind matcher = ClientKind::stub;
        ClientKind vqa = ClientKind::stub;
        ClientKind depth = ClientKind::stub;
    } clients;

    LossWeights loss;

    struct Train {
        int steps = 60;
        double learning_rate = 0.05;
        int batch_size = 2;
        std::string rare_identifier = "sks";
        int reg_per_attribute = 30;
        bool relaxed_reg_counts = false;
        int n_vectors = 1;
    } train;

    struct Edit {
        int steps = 20;
        double guidance_scale = 1.0;
        double controlnet_scale = 1.0;
        double strength = 0.3;
        bool pixel_composite = true;
        std::string conditioning = "depth";  // depth | canny | none
        double canny_low = 0.08;
        double canny_high = 0.2;
        int dilation_radius = 0;
        int generate_steps = 50;
    } edit;

    struct Eval {
        GenuineFusion fusion = GenuineFusion::pairwise;
        AcquisitionPolicy acquisition = AcquisitionPolicy::count_as_nonmatch;
        ThresholdSource threshold_source = ThresholdSource::pool;
        double confidence_floor = 0.5;
        bool tsne = false;
        DegradationThresholds degradation;
    } eval;

    int jobs = 1;

    nlohmann::json to_json() const;
};

// Parses (TOML by .toml extension, JSON otherwise), schema-checks and
// cross-references against the taxonomy; error messages name the offending
// field. Paths are resolved relative to the manifest location and must exist.
ExperimentManifest validate_manifest(const std::filesystem::path& path);
ExperimentManifest manifest_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir);

}  // namespace faceedit
