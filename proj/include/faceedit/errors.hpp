#pragma once

#include <stdexcept>
#include <string>

namespace faceedit {

// Every failure mode named by an operation contract gets its own kind so
// callers (and tests) can distinguish them without string matching.
enum class ErrorKind {
    dimension_mismatch,
    parameter,
    invalid_template,
    no_question,
    unknown_attribute,
    missing_region,
    degenerate_feature,
    insufficient_batch,
    incomplete_batch,
    insufficient_exemplars,
    tokenization,
    divergence,
    matcher_unavailable,
    conditioning_unavailable,
    incompatible_embedding,
    no_genuine_trials,
    configuration,
    comparison,
    coverage,
    schema,
    client,
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::dimension_mismatch: return "dimension_mismatch";
        case ErrorKind::parameter: return "parameter";
        case ErrorKind::invalid_template: return "invalid_template";
        case ErrorKind::no_question: return "no_question";
        case ErrorKind::unknown_attribute: return "unknown_attribute";
        case ErrorKind::missing_region: return "missing_region";
        case ErrorKind::degenerate_feature: return "degenerate_feature";
        case ErrorKind::insufficient_batch: return "insufficient_batch";
        case ErrorKind::incomplete_batch: return "incomplete_batch";
        case ErrorKind::insufficient_exemplars: return "insufficient_exemplars";
        case ErrorKind::tokenization: return "tokenization";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::matcher_unavailable: return "matcher_unavailable";
        case ErrorKind::conditioning_unavailable: return "conditioning_unavailable";
        case ErrorKind::incompatible_embedding: return "incompatible_embedding";
        case ErrorKind::no_genuine_trials: return "no_genuine_trials";
        case ErrorKind::configuration: return "configuration";
        case ErrorKind::comparison: return "comparison";
        case ErrorKind::coverage: return "coverage";
        case ErrorKind::schema: return "schema";
        case ErrorKind::client: return "client";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace faceedit
