#include "faceedit/biometric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace faceedit {

const char* embedding_source_name(EmbeddingSource s) {
    switch (s) {
        case EmbeddingSource::original_gallery: return "original_gallery";
        case EmbeddingSource::probe_generated: return "probe_generated";
        case EmbeddingSource::probe_original: return "probe_original";
    }
    return "probe_original";
}

namespace {

EmbeddingSource source_from_name(const std::string& s) {
    if (s == "original_gallery") return EmbeddingSource::original_gallery;
    if (s == "probe_generated") return EmbeddingSource::probe_generated;
    return EmbeddingSource::probe_original;
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

void IdentityEmbedding::save(const std::filesystem::path& base_path) const {
    std::filesystem::path bin = base_path;
    bin += ".f64";
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write embedding: " + bin.string());
    out.write(reinterpret_cast<const char*>(vector.data()),
              static_cast<std::streamsize>(vector.size() * sizeof(double)));

    nlohmann::json sidecar = {
        {"matcher_id", matcher_id},
        {"subject_id", subject_id},
        {"source", embedding_source_name(source)},
        {"detect_ok", detect_ok},
        {"image_id", image_id},
        {"dim", vector.size()},
    };
    std::filesystem::path js = base_path;
    js += ".json";
    std::ofstream meta(js);
    if (!meta) throw Error(ErrorKind::io, "cannot write sidecar: " + js.string());
    meta << sidecar.dump(2) << "\n";
}

IdentityEmbedding IdentityEmbedding::load(const std::filesystem::path& base_path) {
    std::filesystem::path js = base_path;
    js += ".json";
    std::ifstream meta(js);
    if (!meta) throw Error(ErrorKind::io, "cannot read sidecar: " + js.string());
    nlohmann::json sidecar = nlohmann::json::parse(meta);

    IdentityEmbedding e;
    e.matcher_id = sidecar.value("matcher_id", "");
    e.subject_id = sidecar.value("subject_id", "");
    e.source = source_from_name(sidecar.value("source", ""));
    e.detect_ok = sidecar.value("detect_ok", false);
    e.image_id = sidecar.value("image_id", "");
    std::size_t dim = sidecar.value("dim", std::size_t{0});
    e.vector.resize(dim);
    std::filesystem::path bin = base_path;
    bin += ".f64";
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot read embedding: " + bin.string());
    in.read(reinterpret_cast<char*>(e.vector.data()),
            static_cast<std::streamsize>(dim * sizeof(double)));
    if (!in) throw Error(ErrorKind::io, "truncated embedding file: " + bin.string());
    return e;
}

IdentityEmbedding extract_embedding(MatcherClient& client, const Image& image,
                                    const std::string& subject_id,
                                    EmbeddingSource source, const std::string& image_id) {
    MatcherClient::Result res;
    try {
        res = client.embed(image);
    } catch (const std::exception& e) {
        throw Error(ErrorKind::matcher_unavailable,
                    std::string("matcher client failed: ") + e.what());
    }
    IdentityEmbedding out;
    out.subject_id = subject_id;
    out.source = source;
    out.matcher_id = client.matcher_id();
    out.image_id = image_id;
    out.detect_ok = res.detect_ok;
    if (!res.detect_ok) return out;

    double n = l2_norm(res.embedding);
    if (n < 1e-12)
        throw Error(ErrorKind::matcher_unavailable,
                    "matcher returned a zero-norm embedding");
    out.vector = res.embedding;
    for (auto& v : out.vector) v /= n;
    return out;
}

double similarity(const IdentityEmbedding& a, const IdentityEmbedding& b) {
    if (a.matcher_id != b.matcher_id)
        throw Error(ErrorKind::incompatible_embedding,
                    "embeddings come from different matchers: '" + a.matcher_id +
                        "' vs '" + b.matcher_id + "'");
    if (!a.detect_ok || !b.detect_ok)
        throw Error(ErrorKind::parameter, "similarity needs detected faces");
    if (a.vector.size() != b.vector.size())
        throw Error(ErrorKind::incompatible_embedding, "embedding dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.vector.size(); ++i) s += a.vector[i] * b.vector[i];
    return s;
}

void ScoreMatrix::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write scores: " + path.string());
    out << "kind,probe_id,gallery_id,score\n";
    for (const auto& p : genuine_pairs)
        out << "genuine," << p.probe_id << "," << p.gallery_id << "," << p.score << "\n";
    for (const auto& p : impostor_pairs)
        out << "impostor," << p.probe_id << "," << p.gallery_id << "," << p.score << "\n";
}

ScoreMatrix compute_scores(const std::vector<IdentityEmbedding>& gallery,
                           const std::vector<IdentityEmbedding>& probes,
                           GenuineFusion fusion) {
    if (gallery.empty())
        throw Error(ErrorKind::configuration, "empty gallery");
    for (const auto& g : gallery)
        if (g.matcher_id != gallery.front().matcher_id)
            throw Error(ErrorKind::incompatible_embedding,
                        "gallery mixes matcher ids");

    ScoreMatrix out;
    std::map<std::string, std::size_t> gallery_subject_counts;
    for (const auto& g : gallery)
        if (g.detect_ok) ++gallery_subject_counts[g.subject_id];

    for (const auto& probe : probes) {
        if (!probe.detect_ok) {
            ++out.acquisition_failures;
            auto it = gallery_subject_counts.find(probe.subject_id);
            if (it != gallery_subject_counts.end())
                out.failed_genuine_trials +=
                    fusion == GenuineFusion::pairwise ? it->second : 1;
            continue;
        }
        if (fusion == GenuineFusion::pairwise) {
            for (const auto& g : gallery) {
                if (!g.detect_ok) continue;
                double s = similarity(probe, g);
                ScorePair pair{probe.image_id, g.image_id, s};
                if (probe.subject_id == g.subject_id) {
                    out.genuine_scores.push_back(s);
                    out.genuine_pairs.push_back(pair);
                } else {
                    out.impostor_scores.push_back(s);
                    out.impostor_pairs.push_back(pair);
                }
            }
        } else {
            std::map<std::string, double> best;
            for (const auto& g : gallery) {
                if (!g.detect_ok) continue;
                double s = similarity(probe, g);
                auto [it, inserted] = best.emplace(g.subject_id, s);
                if (!inserted) it->second = std::max(it->second, s);
            }
            for (const auto& [subject, s] : best) {
                ScorePair pair{probe.image_id, subject, s};
                if (subject == probe.subject_id) {
                    out.genuine_scores.push_back(s);
                    out.genuine_pairs.push_back(pair);
                } else {
                    out.impostor_scores.push_back(s);
                    out.impostor_pairs.push_back(pair);
                }
            }
        }
    }
    return out;
}

ThresholdResult threshold_at_fmr(const std::vector<double>& impostor_scores,
                                 double target_fmr) {
    if (impostor_scores.empty())
        throw Error(ErrorKind::configuration, "no impostor scores");
    if (target_fmr <= 0.0 || target_fmr >= 1.0)
        throw Error(ErrorKind::parameter, "target FMR must be in (0, 1)");

    std::vector<double> sorted = impostor_scores;
    std::sort(sorted.begin(), sorted.end());
    double n = static_cast<double>(sorted.size());

    ThresholdResult out;
    out.sample_size_warning = n < 10.0 / target_fmr;

    // Candidates are the observed scores in ascending order; the count of
    // impostors >= sorted[i] is n - i, so FMR is non-increasing along the scan.
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0 && sorted[i] == sorted[i - 1]) continue;
        double fmr = (n - static_cast<double>(i)) / n;
        if (fmr <= target_fmr) {
            out.threshold = sorted[i];
            out.achieved_fmr = fmr;
            out.resolvable = true;
            return out;
        }
    }
    // No observed score realizes the target: pick the first representable
    // value above the maximum so every impostor is rejected.
    out.threshold = std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
    out.achieved_fmr = 0.0;
    out.resolvable = false;
    return out;
}

const RateAtTarget& ErrorRates::at_target(double target) const {
    for (const auto& r : per_target)
        if (r.target_fmr == target) return r;
    throw Error(ErrorKind::comparison,
                "no rates computed at target FMR " + std::to_string(target));
}

nlohmann::json ErrorRates::to_json() const {
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& r : per_target)
        targets.push_back({{"target_fmr", r.target_fmr},
                           {"threshold", r.threshold},
                           {"achieved_fmr", r.achieved_fmr},
                           {"fnmr", r.fnmr},
                           {"resolvable", r.resolvable},
                           {"sample_size_warning", r.sample_size_warning}});
    return {{"matcher_id", matcher_id}, {"per_target", targets}};
}

ErrorRates ErrorRates::from_json(const nlohmann::json& j) {
    ErrorRates out;
    out.matcher_id = j.value("matcher_id", "");
    for (const auto& t : j.at("per_target")) {
        RateAtTarget r;
        r.target_fmr = t.at("target_fmr").get<double>();
        r.threshold = t.at("threshold").get<double>();
        r.achieved_fmr = t.at("achieved_fmr").get<double>();
        r.fnmr = t.at("fnmr").get<double>();
        r.resolvable = t.value("resolvable", true);
        r.sample_size_warning = t.value("sample_size_warning", false);
        out.per_target.push_back(r);
    }
    return out;
}

std::string ErrorRates::cell(int precision) const {
    std::ostringstream out;
    for (std::size_t i = 0; i < per_target.size(); ++i) {
        if (i) out << "/";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.*f", precision, per_target[i].fnmr);
        out << buf;
    }
    return out.str();
}

namespace {

double fnmr_for_threshold(const ScoreMatrix& scores, double threshold,
                          AcquisitionPolicy policy) {
    double below = 0.0;
    for (double s : scores.genuine_scores)
        if (s < threshold) below += 1.0;
    double total = static_cast<double>(scores.genuine_scores.size());
    if (policy == AcquisitionPolicy::count_as_nonmatch) {
        below += static_cast<double>(scores.failed_genuine_trials);
        total += static_cast<double>(scores.failed_genuine_trials);
    }
    return total == 0.0 ? 0.0 : below / total;
}

}  // namespace

ErrorRates fnmr_at_fmr(const ScoreMatrix& scores, const std::vector<double>& targets,
                       AcquisitionPolicy policy, const std::string& matcher_id) {
    if (scores.genuine_scores.empty() && scores.failed_genuine_trials == 0)
        throw Error(ErrorKind::no_genuine_trials, "no genuine trials");
    if (scores.impostor_scores.empty())
        throw Error(ErrorKind::configuration, "no impostor scores");
    if (targets.empty())
        throw Error(ErrorKind::parameter, "no FMR targets given");

    ErrorRates out;
    out.matcher_id = matcher_id;
    for (double target : targets) {
        ThresholdResult th = threshold_at_fmr(scores.impostor_scores, target);
        RateAtTarget r;
        r.target_fmr = target;
        r.threshold = th.threshold;
        r.achieved_fmr = th.achieved_fmr;
        r.resolvable = th.resolvable;
        r.sample_size_warning = th.sample_size_warning;
        r.fnmr = fnmr_for_threshold(scores, th.threshold, policy);
        out.per_target.push_back(r);
    }

    // Looser target => lower threshold => FNMR can only drop.
    for (const auto& a : out.per_target)
        for (const auto& b : out.per_target)
            if (a.target_fmr < b.target_fmr && a.fnmr < b.fnmr)
                throw Error(ErrorKind::comparison,
                            "FNMR monotonicity violated; this is a bug");
    return out;
}

ErrorRates fnmr_with_thresholds(const ScoreMatrix& scores, const ErrorRates& calibrated,
                                AcquisitionPolicy policy) {
    if (scores.genuine_scores.empty() && scores.failed_genuine_trials == 0)
        throw Error(ErrorKind::no_genuine_trials, "no genuine trials");
    ErrorRates out;
    out.matcher_id = calibrated.matcher_id;
    for (const auto& cal : calibrated.per_target) {
        RateAtTarget r = cal;
        double passing = 0.0;
        for (double s : scores.impostor_scores)
            if (s >= cal.threshold) passing += 1.0;
        r.achieved_fmr = scores.impostor_scores.empty()
                             ? 0.0
                             : passing / static_cast<double>(scores.impostor_scores.size());
        r.fnmr = fnmr_for_threshold(scores, cal.threshold, policy);
        out.per_target.push_back(r);
    }
    return out;
}

GalleryFilterResult filter_gallery_by_quality(
    const std::vector<std::pair<std::string, Image>>& gallery_images,
    MatcherClient& client, const std::string& subject_id, double confidence_floor) {
    GalleryFilterResult out;
    for (const auto& [image_id, image] : gallery_images) {
        MatcherClient::Result res;
        try {
            res = client.embed(image);
        } catch (const std::exception& e) {
            out.removed.push_back({image_id, std::string("matcher failure: ") + e.what()});
            continue;
        }
        if (!res.detect_ok) {
            out.removed.push_back({image_id, "no-face"});
            continue;
        }
        if (res.confidence < confidence_floor) {
            out.removed.push_back(
                {image_id, "low-confidence (" + std::to_string(res.confidence) + ")"});
            continue;
        }
        IdentityEmbedding e;
        e.subject_id = subject_id;
        e.source = EmbeddingSource::original_gallery;
        e.matcher_id = client.matcher_id();
        e.image_id = image_id;
        e.detect_ok = true;
        double n = l2_norm(res.embedding);
        e.vector = res.embedding;
        for (auto& v : e.vector) v /= n;
        out.kept.push_back(std::move(e));
    }
    return out;
}

const char* degradation_flag_name(DegradationFlag f) {
    switch (f) {
        case DegradationFlag::none: return "none";
        case DegradationFlag::red: return "red";
        case DegradationFlag::green: return "green";
    }
    return "none";
}

double DegradationThresholds::for_matcher(const std::string& matcher_id) const {
    std::string lower;
    for (char c : matcher_id)
        lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower.find("arcface") != std::string::npos) return arcface;
    if (lower.find("adaface") != std::string::npos) return adaface;
    return fallback;
}

namespace {

void require_matching_targets(const ErrorRates& a, const ErrorRates& b) {
    if (a.per_target.size() != b.per_target.size())
        throw Error(ErrorKind::comparison, "FMR target lists differ");
    for (std::size_t i = 0; i < a.per_target.size(); ++i)
        if (a.per_target[i].target_fmr != b.per_target[i].target_fmr)
            throw Error(ErrorKind::comparison, "FMR target lists differ");
}

double strictest_fnmr(const ErrorRates& r) {
    double best_target = std::numeric_limits<double>::infinity();
    double fnmr = 0.0;
    for (const auto& t : r.per_target)
        if (t.target_fmr < best_target) {
            best_target = t.target_fmr;
            fnmr = t.fnmr;
        }
    return fnmr;
}

}  // namespace

DegradationFlag flag_degradation(const ErrorRates& original, const ErrorRates& edited,
                                 const std::string& matcher_id,
                                 const DegradationThresholds& thresholds) {
    require_matching_targets(original, edited);
    double delta = strictest_fnmr(edited) - strictest_fnmr(original);
    return delta >= thresholds.for_matcher(matcher_id) ? DegradationFlag::red
                                                       : DegradationFlag::none;
}

DegradationFlag flag_mitigation(const ErrorRates& baseline_edited,
                                const ErrorRates& mitigated,
                                DegradationFlag baseline_flag) {
    require_matching_targets(baseline_edited, mitigated);
    if (baseline_flag != DegradationFlag::red) return DegradationFlag::none;
    return strictest_fnmr(mitigated) < strictest_fnmr(baseline_edited)
               ? DegradationFlag::green
               : DegradationFlag::none;
}

}  // namespace faceedit
