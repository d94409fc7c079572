#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faceedit/image.hpp"

namespace faceedit {

enum class EmbeddingSource { original_gallery, probe_generated, probe_original };
const char* embedding_source_name(EmbeddingSource s);

// External face matcher surface: detect + align + embed. Confidence is the
// detector's score, used for gallery quality filtering.
class MatcherClient {
public:
    struct Result {
        bool detect_ok = false;
        std::vector<double> embedding;  // raw (pre-normalization)
        double confidence = 0.0;
    };
    virtual ~MatcherClient() = default;
    virtual Result embed(const Image& image) = 0;
    virtual std::string matcher_id() const = 0;
    virtual std::size_t embedding_dim() const { return 512; }
};

struct IdentityEmbedding {
    std::vector<double> vector;  // unit norm when detect_ok
    std::string subject_id;
    EmbeddingSource source = EmbeddingSource::probe_original;
    std::string matcher_id;
    bool detect_ok = false;
    std::string image_id;

    void save(const std::filesystem::path& base_path) const;  // .f64 + .json sidecar
    static IdentityEmbedding load(const std::filesystem::path& base_path);
};

IdentityEmbedding extract_embedding(MatcherClient& client, const Image& image,
                                    const std::string& subject_id,
                                    EmbeddingSource source,
                                    const std::string& image_id = "");

// Cosine similarity of two unit embeddings from the same matcher.
double similarity(const IdentityEmbedding& a, const IdentityEmbedding& b);

struct ScorePair {
    std::string probe_id;
    std::string gallery_id;
    double score = 0.0;
};

enum class GenuineFusion { pairwise, max_per_subject };

struct ScoreMatrix {
    std::vector<double> genuine_scores;
    std::vector<double> impostor_scores;
    std::vector<ScorePair> genuine_pairs;
    std::vector<ScorePair> impostor_pairs;
    // probes whose face was not detected: their would-be genuine trials
    std::size_t acquisition_failures = 0;
    std::size_t failed_genuine_trials = 0;

    void save_csv(const std::filesystem::path& path) const;
};

ScoreMatrix compute_scores(const std::vector<IdentityEmbedding>& gallery,
                           const std::vector<IdentityEmbedding>& probes,
                           GenuineFusion fusion = GenuineFusion::pairwise);

struct ThresholdResult {
    double threshold = 0.0;
    double achieved_fmr = 0.0;
    bool resolvable = true;      // false: too few impostors to realize the target
    bool sample_size_warning = false;  // impostor count < 10 / target
};

// Smallest threshold (drawn from the observed scores plus +inf) whose
// impostor pass fraction is <= target_fmr, under the rule "match iff
// score >= threshold".
ThresholdResult threshold_at_fmr(const std::vector<double>& impostor_scores,
                                 double target_fmr);

enum class AcquisitionPolicy { count_as_nonmatch, exclude };

struct RateAtTarget {
    double target_fmr = 0.0;
    double threshold = 0.0;
    double achieved_fmr = 0.0;
    double fnmr = 0.0;
    bool resolvable = true;
    bool sample_size_warning = false;
};

struct ErrorRates {
    std::string matcher_id;
    std::vector<RateAtTarget> per_target;  // ordered as requested

    const RateAtTarget& at_target(double target) const;
    nlohmann::json to_json() const;
    static ErrorRates from_json(const nlohmann::json& j);
    // "0.33/0.09" formatting for the two paper targets
    std::string cell(int precision = 2) const;
};

ErrorRates fnmr_at_fmr(const ScoreMatrix& scores, const std::vector<double>& targets,
                       AcquisitionPolicy policy = AcquisitionPolicy::count_as_nonmatch,
                       const std::string& matcher_id = "");

// Cross-condition mode: thresholds calibrated elsewhere (e.g. on original
// probes) applied to this pool's genuine scores.
ErrorRates fnmr_with_thresholds(const ScoreMatrix& scores, const ErrorRates& calibrated,
                                AcquisitionPolicy policy = AcquisitionPolicy::count_as_nonmatch);

struct GalleryFilterResult {
    std::vector<IdentityEmbedding> kept;
    struct Removal {
        std::string image_id;
        std::string reason;
    };
    std::vector<Removal> removed;
};

// Drops gallery entries whose face is undetected or whose detector
// confidence is below the floor.
GalleryFilterResult filter_gallery_by_quality(
    const std::vector<std::pair<std::string, Image>>& gallery_images,
    MatcherClient& client, const std::string& subject_id, double confidence_floor = 0.5);

enum class DegradationFlag { none, red, green };
const char* degradation_flag_name(DegradationFlag f);

struct DegradationThresholds {
    // absolute FNMR worsening at FMR = 0.01% that flags RED
    double arcface = 0.10;
    double adaface = 0.05;
    double fallback = 0.10;
    double for_matcher(const std::string& matcher_id) const;
};

// RED when editing worsens FNMR at the strictest target by at least the
// matcher's threshold.
DegradationFlag flag_degradation(const ErrorRates& original, const ErrorRates& edited,
                                 const std::string& matcher_id,
                                 const DegradationThresholds& thresholds = {});

// GREEN when a mitigation improves on a baseline that was flagged RED.
DegradationFlag flag_mitigation(const ErrorRates& baseline_edited,
                                const ErrorRates& mitigated,
                                DegradationFlag baseline_flag);

}  // namespace faceedit
