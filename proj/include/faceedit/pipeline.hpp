#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faceedit/manifest.hpp"

namespace faceedit {

struct LedgerEntry {
    std::string kind;       // train | edit | biometric | audit | tsne
    std::string method;
    std::string subject;    // per-subject cells
    std::string attribute;  // "__original__" marks the unedited-probe row
    std::string matcher;    // biometric cells
    std::string status;     // ok | failed | skipped
    nlohmann::json artifacts = nlohmann::json::object();
    nlohmann::json values = nlohmann::json::object();
    std::string error;
    std::uint64_t seed = 0;
    double elapsed_ms = 0.0;

    std::string key() const;
    nlohmann::json to_json() const;
    static LedgerEntry from_json(const nlohmann::json& j);
};

// Append-only JSON-lines ledger; completed cells are skipped on resume.
class RunLedger {
public:
    static RunLedger open(const std::filesystem::path& path);

    bool has_ok(const std::string& key) const;
    // ok or skipped: the cell reached a terminal state and resume passes it by
    bool has_done(const std::string& key) const;
    const LedgerEntry* find(const std::string& key) const;
    void add(LedgerEntry entry);  // appends to file and memory; thread-safe

    const std::vector<LedgerEntry>& entries() const { return entries_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::vector<LedgerEntry> entries_;
    std::map<std::string, std::size_t> by_key_;
    std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

struct RunSummary {
    int attempted = 0;   // cells executed in this invocation
    int reused = 0;      // cells skipped because the ledger already has them
    int completed = 0;   // cumulative ok cells in the ledger
    int failed = 0;
    int skipped = 0;
    nlohmann::json accounting;  // job-count arithmetic

    nlohmann::json to_json() const;
};

// End-to-end: edit -> match -> audit -> report, resumable through the ledger.
// Partial failures are recorded per cell and do not stop the run.
RunSummary run_experiment(const ExperimentManifest& manifest);

// Renders Markdown + CSV tables from ledger cells only; numbers are never
// recomputed here.
void render_report(const RunLedger& ledger, const std::filesystem::path& out_dir,
                   const DegradationThresholds& thresholds = {});

// FNV-1a content hashes for every artifact under the run directory.
void write_checksums(const std::filesystem::path& run_dir);

}  // namespace faceedit
