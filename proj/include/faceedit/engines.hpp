#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faceedit/backbone.hpp"
#include "faceedit/conditioning.hpp"
#include "faceedit/losses.hpp"
#include "faceedit/masks.hpp"
#include "faceedit/taxonomy.hpp"

namespace faceedit {

struct RegularizationEntry {
    std::filesystem::path image;
    std::string caption;
    std::string attribute_id;
};

struct RegularizationSet {
    std::vector<RegularizationEntry> entries;
    std::map<std::string, int> counts_per_attribute;
    nlohmann::json manifest() const;
};

struct RegSetConfig {
    int per_attribute = 30;
    bool relaxed_counts = false;  // toy runs: accept undersupplied directories
    std::string class_noun = "person";
    std::vector<std::string> excluded_subjects;  // enforced subject-disjointness
};

// Scans one directory per attribute id and pairs each image with a caption
// from the attribute prompt grammar (generic class noun, no identifier).
RegularizationSet build_regularization_set(
    const std::map<std::string, std::filesystem::path>& attribute_image_dirs,
    const Taxonomy& taxonomy, const RegSetConfig& config);

// Convenience: root directory containing one subdirectory per attribute id.
RegularizationSet build_regularization_set(const std::filesystem::path& root,
                                           const Taxonomy& taxonomy,
                                           const RegSetConfig& config);

struct SubjectSet {
    std::string subject_id;
    std::vector<std::filesystem::path> images;
};

struct TrainConfig {
    int steps = 60;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    int batch_size = 2;
    std::string rare_identifier = "sks";
    std::string class_noun = "person";
    std::optional<std::filesystem::path> checkpoint_dir;
};

struct TrainRun {
    TrainConfig config;
    LossWeights weights;
    std::vector<nlohmann::json> history;  // one per-term breakdown per step
    std::string jsonl() const;            // training-log lines
};

// DreamBooth-style subject fine-tuning with the composite prior +
// contrastive objective. The text encoder stays frozen; the rare identifier
// must already be registered on the backbone.
TrainRun finetune_global(TrainableBackbone& backbone, const SubjectSet& subject,
                         const RegularizationSet& reg, const LossWeights& weights,
                         const TrainConfig& config);

struct TokenEmbedding {
    std::string token;
    Tensor vectors;  // [n_vectors, embed_dim]
    int n_vectors = 1;

    void save(const std::filesystem::path& path, const std::string& backbone_id,
              const TrainConfig& config) const;
    static TokenEmbedding load(const std::filesystem::path& path);
};

struct TokenTrainResult {
    TokenEmbedding embedding;
    TrainRun run;
};

// Textual inversion: only the new token rows receive gradient updates, the
// denoiser weights are frozen. n_vectors must be 1, 2 or 5.
TokenTrainResult learn_token_embedding(TrainableBackbone& backbone,
                                       const SubjectSet& exemplars, int n_vectors,
                                       const LossWeights& weights,
                                       const TrainConfig& config);

struct GenerateConfig {
    std::uint64_t seed = 0;
    int steps = 50;
    double guidance_scale = 1.0;
    std::size_t height = 64;
    std::size_t width = 64;
};

// Deterministic DDIM sampling in txt2img mode.
Image generate_global(const Backbone& backbone, const std::string& prompt,
                      const GenerateConfig& config);

struct EditLocalConfig {
    std::uint64_t seed = 0;
    int steps = 20;
    double guidance_scale = 1.0;
    double controlnet_scale = 1.0;
    double strength = 0.3;       // how far the foreground is re-noised
    bool pixel_composite = true; // copy background pixels from the input
    std::size_t dilation_radius = 0;
    // When both are known, a prompt/mask region mismatch is reported as a
    // warning (the output then tends toward a reconstruction).
    std::vector<std::string> mask_regions;
    const AttributeSpec* attribute = nullptr;
};

struct EditResult {
    Image image;
    std::vector<std::string> warnings;
    int blend_invocations = 0;
};

// Mask-guided inpainting: every denoising step regenerates the masked
// region and re-injects the noised original latents elsewhere.
EditResult edit_local(const Backbone& backbone, const Image& image,
                      const BinaryMask& mask, const std::string& prompt,
                      const ConditioningMap* conditioning,
                      const EditLocalConfig& config);

enum class ReconstructMode { local, global };

// 'No attribute': local mode runs the empty-mask path, global mode samples
// from the reconstruction prompt.
Image reconstruct(const Backbone& backbone, const Image& image, ReconstructMode mode,
                  const PromptTemplate& tmpl = {},
                  const GenerateConfig& generate_config = {});

}  // namespace faceedit
