#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faceedit/image.hpp"
#include "faceedit/taxonomy.hpp"

namespace faceedit {

// External vision-language model surface (LLaVA/BLIP-style services).
class VQAClient {
public:
    virtual ~VQAClient() = default;
    virtual std::string answer(const Image& image, const std::string& question) = 0;
    virtual std::string client_id() const = 0;
};

enum class Verdict { yes, no, unparseable };
const char* verdict_name(Verdict v);

struct AuditRecord {
    std::string image_id;
    std::string attribute_id;
    std::string question;
    std::string raw_answer;
    Verdict verdict = Verdict::unparseable;
    std::optional<bool> expected;  // ground truth, benchmark mode only
    std::string failure_reason;    // set when the client kept failing

    nlohmann::json to_json() const;
    static AuditRecord from_json(const nlohmann::json& j);
};

// Keywords that identify each attribute in free-text answers; drives the
// open-ended branch of parse_verdict.
const std::vector<std::string>& attribute_keywords(const std::string& attribute_id);

// Case-insensitive, total: a leading yes/no token wins, otherwise keyword
// containment (word-boundary) says yes, otherwise unparseable.
Verdict parse_verdict(const std::string& raw_answer, const AttributeSpec& attr);

struct AuditConfig {
    int retries = 2;  // client retries before recording a failure
};

AuditRecord audit_image(VQAClient& client, const Image& image,
                        const std::string& image_id, const AttributeSpec& attr,
                        const AuditConfig& config = {});

enum class UnparseablePolicy {
    count_as_failure,  // default: conservative reading of the success rule
    exclude,           // strict-exclusion: drop from numerator and denominator
};

struct AttributeRate {
    int n_images = 0;
    int n_success = 0;
    int n_unparseable = 0;
    double rate_percent = 0.0;
};

struct SuccessReport {
    std::map<std::string, AttributeRate> per_attribute;
    UnparseablePolicy policy = UnparseablePolicy::count_as_failure;

    nlohmann::json to_json() const;
    std::string to_markdown() const;
    std::string to_csv() const;
};

SuccessReport success_rate(const std::vector<AuditRecord>& records,
                           UnparseablePolicy policy = UnparseablePolicy::count_as_failure);

// JSON-lines persistence; replaying a persisted set reproduces reports exactly.
void save_records_jsonl(const std::filesystem::path& path,
                        const std::vector<AuditRecord>& records);
std::vector<AuditRecord> load_records_jsonl(const std::filesystem::path& path);

// CelebA-style attribute annotations: header of column names, then one row
// per image with 1/-1 (or 1/0) values. An optional leading count line is
// tolerated.
class AnnotationSet {
public:
    static AnnotationSet load(const std::filesystem::path& path);

    // Ground truth for a taxonomy attribute; empty when the attribute has no
    // matching annotation column.
    std::optional<bool> label(const std::string& image_id,
                              const std::string& attribute_id) const;
    bool covers(const std::string& attribute_id) const;
    std::vector<std::string> image_ids() const;

    // attribute id -> (annotation column, inverted?); female and old are the
    // complements of Male and Young.
    static const std::map<std::string, std::pair<std::string, bool>>& column_map();

private:
    std::vector<std::string> columns_;
    std::map<std::string, std::vector<int>> rows_;  // image id -> +-1 values
};

struct BenchmarkRow {
    std::string attribute_id;
    int n = 0;
    int n_correct = 0;
    double accuracy_percent = 0.0;
};

struct BenchmarkResult {
    std::string client_id;
    std::vector<BenchmarkRow> rows;
    double mean_accuracy_percent = 0.0;
    std::vector<AuditRecord> records;
};

// Accuracy of verdicts against annotated ground truth over the requested
// attributes (all covered attributes when the list is empty).
BenchmarkResult benchmark_predictor(
    VQAClient& client, const AnnotationSet& annotations,
    const std::map<std::string, Image>& images,
    const std::vector<std::string>& attribute_ids = {},
    const AuditConfig& config = {});

// Side-by-side markdown for two benchmarked clients.
std::string benchmark_comparison_markdown(const BenchmarkResult& a,
                                          const BenchmarkResult& b);

}  // namespace faceedit
