#include "faceedit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "faceedit/clients.hpp"
#include "faceedit/engines.hpp"
#include "faceedit/rng.hpp"
#include "faceedit/tsne.hpp"

namespace faceedit {

namespace fs = std::filesystem;

std::string LedgerEntry::key() const {
    return kind + "|" + method + "|" + subject + "|" + attribute + "|" + matcher;
}

nlohmann::json LedgerEntry::to_json() const {
    return {{"kind", kind},         {"method", method},   {"subject", subject},
            {"attribute", attribute}, {"matcher", matcher}, {"status", status},
            {"artifacts", artifacts}, {"values", values},   {"error", error},
            {"seed", seed},           {"elapsed_ms", elapsed_ms}};
}

LedgerEntry LedgerEntry::from_json(const nlohmann::json& j) {
    LedgerEntry e;
    e.kind = j.value("kind", "");
    e.method = j.value("method", "");
    e.subject = j.value("subject", "");
    e.attribute = j.value("attribute", "");
    e.matcher = j.value("matcher", "");
    e.status = j.value("status", "");
    e.artifacts = j.value("artifacts", nlohmann::json::object());
    e.values = j.value("values", nlohmann::json::object());
    e.error = j.value("error", "");
    e.seed = j.value("seed", std::uint64_t{0});
    e.elapsed_ms = j.value("elapsed_ms", 0.0);
    return e;
}

RunLedger RunLedger::open(const std::filesystem::path& path) {
    RunLedger ledger;
    ledger.path_ = path;
    if (fs::exists(path)) {
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            LedgerEntry e = LedgerEntry::from_json(nlohmann::json::parse(line));
            ledger.by_key_[e.key()] = ledger.entries_.size();
            ledger.entries_.push_back(std::move(e));
        }
    }
    return ledger;
}

bool RunLedger::has_ok(const std::string& key) const {
    auto it = by_key_.find(key);
    return it != by_key_.end() && entries_[it->second].status == "ok";
}

bool RunLedger::has_done(const std::string& key) const {
    auto it = by_key_.find(key);
    if (it == by_key_.end()) return false;
    const std::string& s = entries_[it->second].status;
    return s == "ok" || s == "skipped";
}

const LedgerEntry* RunLedger::find(const std::string& key) const {
    auto it = by_key_.find(key);
    return it == by_key_.end() ? nullptr : &entries_[it->second];
}

void RunLedger::add(LedgerEntry entry) {
    std::lock_guard<std::mutex> lock(*mutex_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(ErrorKind::io, "cannot append to ledger: " + path_.string());
    out << entry.to_json().dump() << "\n";
    by_key_[entry.key()] = entries_.size();
    entries_.push_back(std::move(entry));
}

nlohmann::json RunSummary::to_json() const {
    return {{"attempted", attempted}, {"reused", reused},   {"completed", completed},
            {"failed", failed},       {"skipped", skipped}, {"accounting", accounting}};
}

namespace {

constexpr const char* kOriginalRow = "__original__";

std::uint64_t cell_seed(const ExperimentManifest& m, const std::string& kind,
                        const std::string& subject, const std::string& attribute) {
    std::uint64_t h = m.seed ^ fnv1a64(method_name(m.method));
    h = fnv1a64(kind, h);
    h = fnv1a64(subject, h);
    h = fnv1a64(attribute, h);
    return h;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

std::unique_ptr<MatcherClient> make_matcher(const ExperimentManifest& m,
                                            const std::string& matcher_id) {
    if (m.clients.matcher == ClientKind::http) {
        std::string url = env_or("FACEEDIT_MATCHER_URL", "");
        if (url.empty())
            throw Error(ErrorKind::client,
                        "clients.matcher = http needs FACEEDIT_MATCHER_URL");
        return std::make_unique<HttpMatcherClient>(url, matcher_id);
    }
    return std::make_unique<StubMatcherClient>(matcher_id);
}

std::unique_ptr<VQAClient> make_vqa(const ExperimentManifest& m) {
    if (m.clients.vqa == ClientKind::http) {
        std::string url = env_or("FACEEDIT_VQA_URL", "");
        if (url.empty())
            throw Error(ErrorKind::client, "clients.vqa = http needs FACEEDIT_VQA_URL");
        return std::make_unique<HttpVqaClient>(url, "http-vqa");
    }
    return std::make_unique<HashVqaClient>();
}

std::unique_ptr<DepthModelClient> make_depth(const ExperimentManifest& m) {
    if (m.clients.depth == ClientKind::http) {
        std::string url = env_or("FACEEDIT_DEPTH_URL", "");
        if (url.empty())
            throw Error(ErrorKind::client, "clients.depth = http needs FACEEDIT_DEPTH_URL");
        return std::make_unique<HttpDepthClient>(url);
    }
    return std::make_unique<StubDepthClient>();
}

// Bounded fan-out with a barrier; jobs == 1 stays strictly sequential.
void run_cells(std::vector<std::function<void()>>& cells, int jobs) {
    if (jobs <= 1) {
        for (auto& c : cells) c();
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            cells[i]();
        }
    };
    std::vector<std::thread> pool;
    int n = std::min<int>(jobs, static_cast<int>(cells.size()));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

struct CellTimer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         start)
            .count();
    }
};

struct RunState {
    const ExperimentManifest& m;
    RunLedger& ledger;
    RunSummary& summary;
    std::mutex summary_mutex;

    void note_reused() {
        std::lock_guard<std::mutex> lock(summary_mutex);
        ++summary.reused;
    }
    void note_attempted() {
        std::lock_guard<std::mutex> lock(summary_mutex);
        ++summary.attempted;
    }
};

void record(RunState& state, LedgerEntry entry) {
    state.note_attempted();
    state.ledger.add(std::move(entry));
}

LossWeights method_weights(const ExperimentManifest& m) {
    LossWeights w = m.loss;
    switch (m.method) {
        case Method::db_base:
            w.lambda_s = 0.0;  // prior loss only
            break;
        case Method::ti:
            w.lambda_sl = 0.0;
            w.lambda_c = 0.0;
            break;
        default:
            break;
    }
    return w;
}

TrainConfig train_config(const ExperimentManifest& m, const std::string& subject) {
    TrainConfig cfg;
    cfg.steps = m.train.steps;
    cfg.learning_rate = m.train.learning_rate;
    cfg.batch_size = m.train.batch_size;
    cfg.rare_identifier = m.train.rare_identifier;
    cfg.seed = cell_seed(m, "train", subject, "");
    return cfg;
}

fs::path cell_dir(const ExperimentManifest& m, const std::string& subject,
                  const std::string& attribute) {
    return m.output_root / method_name(m.method) / subject / attribute;
}

std::string image_id_for(const fs::path& image) { return image.stem().string(); }

// --- editing phase ----------------------------------------------------------

void run_global_subject(RunState& state, const std::string& subject) {
    const ExperimentManifest& m = state.m;
    const Taxonomy& tax = Taxonomy::instance();
    bool is_ti = m.method == Method::ti || m.method == Method::ti_cs;

    SubjectSet subject_set;
    subject_set.subject_id = subject;
    subject_set.images = list_pngs(m.data.images_root / subject);

    fs::path train_dir = m.output_root / method_name(m.method) / subject;
    fs::path checkpoint = train_dir / "checkpoint.json";
    std::string train_key = "train|" + std::string(method_name(m.method)) + "|" +
                            subject + "||";

    ToyBackbone backbone(m.seed ^ fnv1a64("backbone"));
    TrainConfig cfg = train_config(m, subject);
    LossWeights weights = method_weights(m);

    if (state.ledger.has_ok(train_key)) {
        state.note_reused();
        backbone.load_checkpoint(checkpoint);
    } else {
        LedgerEntry entry;
        entry.kind = "train";
        entry.method = method_name(m.method);
        entry.subject = subject;
        entry.seed = cfg.seed;
        CellTimer timer;
        try {
            if (subject_set.images.empty())
                throw Error(ErrorKind::parameter,
                            "no images for subject '" + subject + "' under " +
                                (m.data.images_root / subject).string());
            fs::create_directories(train_dir);
            TrainRun run;
            if (is_ti) {
                TokenTrainResult res = learn_token_embedding(
                    backbone, subject_set, m.train.n_vectors, weights, cfg);
                run = std::move(res.run);
                res.embedding.save(train_dir / "token.json", backbone.backbone_id(), cfg);
                entry.artifacts["token"] = (train_dir / "token.json").string();
            } else {
                backbone.register_identifier(cfg.rare_identifier);
                RegSetConfig reg_cfg;
                reg_cfg.per_attribute = m.train.reg_per_attribute;
                reg_cfg.relaxed_counts = m.train.relaxed_reg_counts;
                reg_cfg.excluded_subjects = m.subjects;
                RegularizationSet reg;
                if (weights.lambda_p > 0) {
                    reg = build_regularization_set(*m.data.regularization_root,
                                                   tax, reg_cfg);
                    std::ofstream mf(train_dir / "regset.json");
                    mf << reg.manifest().dump(2) << "\n";
                    entry.artifacts["regset"] = (train_dir / "regset.json").string();
                }
                run = finetune_global(backbone, subject_set, reg, weights, cfg);
            }
            backbone.save_checkpoint(checkpoint);
            std::ofstream hist(train_dir / "history.jsonl");
            hist << run.jsonl();
            entry.artifacts["checkpoint"] = checkpoint.string();
            entry.artifacts["history"] = (train_dir / "history.jsonl").string();
            entry.values["steps"] = run.history.size();
            if (!run.history.empty()) {
                entry.values["first_loss"] = run.history.front();
                entry.values["final_loss"] = run.history.back();
            }
            entry.status = "ok";
        } catch (const std::exception& e) {
            entry.status = "failed";
            entry.error = e.what();
        }
        entry.elapsed_ms = timer.ms();
        bool failed = entry.status == "failed";
        record(state, std::move(entry));
        if (failed) return;  // no model to generate from
    }

    PromptTemplate tmpl{m.train.rare_identifier, "person"};
    for (const auto& attr_id : m.attributes) {
        std::string edit_key = "edit|" + std::string(method_name(m.method)) + "|" +
                               subject + "|" + attr_id + "|";
        if (state.ledger.has_ok(edit_key)) {
            state.note_reused();
            continue;
        }
        LedgerEntry entry;
        entry.kind = "edit";
        entry.method = method_name(m.method);
        entry.subject = subject;
        entry.attribute = attr_id;
        entry.seed = cell_seed(m, "edit", subject, attr_id);
        CellTimer timer;
        try {
            const AttributeSpec& attr = tax.require(attr_id);
            GenerateConfig gen;
            gen.seed = entry.seed;
            gen.steps = m.edit.generate_steps;
            gen.guidance_scale = m.edit.guidance_scale;
            std::string prompt = build_edit_prompt(tmpl, attr);
            Image out = generate_global(backbone, prompt, gen);
            fs::path dir = cell_dir(m, subject, attr_id);
            fs::create_directories(dir);
            save_png(dir / "edited.png", out);
            entry.artifacts["image"] = (dir / "edited.png").string();
            entry.values["prompt"] = prompt;
            entry.status = "ok";
        } catch (const std::exception& e) {
            entry.status = "failed";
            entry.error = e.what();
        }
        entry.elapsed_ms = timer.ms();
        record(state, std::move(entry));
    }
}

void run_local_subject(RunState& state, const std::string& subject,
                       DepthModelClient& depth_client) {
    const ExperimentManifest& m = state.m;
    const Taxonomy& tax = Taxonomy::instance();

    auto images = list_pngs(m.data.images_root / subject);
    std::string token;
    ToyBackbone backbone(m.seed ^ fnv1a64("backbone"));

    if (m.method == Method::cn_ti) {
        // learn the subject token once, then compose it into edit prompts
        fs::path train_dir = m.output_root / method_name(m.method) / subject;
        fs::path checkpoint = train_dir / "checkpoint.json";
        std::string train_key = "train|" + std::string(method_name(m.method)) + "|" +
                                subject + "||";
        token = m.train.rare_identifier;
        if (state.ledger.has_ok(train_key)) {
            state.note_reused();
            backbone.load_checkpoint(checkpoint);
        } else {
            LedgerEntry entry;
            entry.kind = "train";
            entry.method = method_name(m.method);
            entry.subject = subject;
            TrainConfig cfg = train_config(m, subject);
            entry.seed = cfg.seed;
            CellTimer timer;
            try {
                if (images.empty())
                    throw Error(ErrorKind::parameter,
                                "no images for subject '" + subject + "'");
                SubjectSet set{subject, images};
                TokenTrainResult res = learn_token_embedding(
                    backbone, set, m.train.n_vectors, method_weights(m), cfg);
                fs::create_directories(train_dir);
                res.embedding.save(train_dir / "token.json", backbone.backbone_id(), cfg);
                backbone.save_checkpoint(checkpoint);
                std::ofstream hist(train_dir / "history.jsonl");
                hist << res.run.jsonl();
                entry.artifacts["checkpoint"] = checkpoint.string();
                entry.artifacts["token"] = (train_dir / "token.json").string();
                entry.status = "ok";
            } catch (const std::exception& e) {
                entry.status = "failed";
                entry.error = e.what();
            }
            entry.elapsed_ms = timer.ms();
            bool failed = entry.status == "failed";
            record(state, std::move(entry));
            if (failed) return;
        }
    }

    for (const auto& attr_id : m.attributes) {
        std::string edit_key = "edit|" + std::string(method_name(m.method)) + "|" +
                               subject + "|" + attr_id + "|";
        if (state.ledger.has_ok(edit_key)) {
            state.note_reused();
            continue;
        }
        LedgerEntry entry;
        entry.kind = "edit";
        entry.method = method_name(m.method);
        entry.subject = subject;
        entry.attribute = attr_id;
        entry.seed = cell_seed(m, "edit", subject, attr_id);
        CellTimer timer;
        try {
            if (images.empty())
                throw Error(ErrorKind::parameter,
                            "no images for subject '" + subject + "'");
            const fs::path& input_path = images.front();  // local editing: 1 input
            Image input = load_png(input_path);
            const AttributeSpec& attr = tax.require(attr_id);

            BinaryMask mask(input.height, input.width, 0);
            std::vector<std::string> mask_regions;
            bool reconstruction = attr.is_reconstruction();
            if (!reconstruction) {
                if (m.method == Method::cn) {
                    mask = BinaryMask(input.height, input.width, 1);
                } else {
                    if (attr.regions.empty())
                        throw Error(ErrorKind::parameter,
                                    "attribute '" + attr.id +
                                        "' is global-only; no region mask to edit");
                    if (!m.data.masks_root)
                        throw Error(ErrorKind::configuration,
                                    "local editing needs data.masks_root");
                    RegionLibrary lib = RegionLibrary::load_directory(
                        *m.data.masks_root / image_id_for(input_path),
                        image_id_for(input_path));
                    std::vector<std::string> available;
                    for (const auto& r : attr.regions)
                        if (lib.has(image_id_for(input_path), r)) available.push_back(r);
                    if (available.empty())
                        throw Error(ErrorKind::missing_region,
                                    "none of the regions for '" + attr.id +
                                        "' exist for image " + image_id_for(input_path));
                    mask = make_mask(lib, image_id_for(input_path), available);
                    mask_regions = available;
                }
            }

            std::optional<ConditioningMap> conditioning;
            std::string conditioning_note;
            if (m.edit.conditioning == "depth") {
                try {
                    conditioning = depth_map(input, depth_client, image_id_for(input_path));
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::conditioning_unavailable) throw;
                    conditioning = canny_edge(input, m.edit.canny_low, m.edit.canny_high,
                                              image_id_for(input_path));
                    conditioning_note = "depth unavailable, fell back to canny";
                }
            } else if (m.edit.conditioning == "canny") {
                conditioning = canny_edge(input, m.edit.canny_low, m.edit.canny_high,
                                          image_id_for(input_path));
            }

            std::string prompt;
            if (!reconstruction) {
                if (m.method == Method::cn_ti)
                    prompt = build_edit_prompt(PromptTemplate{token, "person"}, attr);
                else
                    prompt = build_class_caption("person", attr);
            }

            EditLocalConfig cfg;
            cfg.seed = entry.seed;
            cfg.steps = m.edit.steps;
            cfg.guidance_scale = m.edit.guidance_scale;
            cfg.controlnet_scale = m.edit.controlnet_scale;
            cfg.strength = m.edit.strength;
            cfg.pixel_composite = m.edit.pixel_composite;
            cfg.dilation_radius = static_cast<std::size_t>(m.edit.dilation_radius);
            cfg.mask_regions = mask_regions;
            cfg.attribute = reconstruction ? nullptr : &attr;

            EditResult result = edit_local(backbone, input, mask, prompt,
                                           conditioning ? &*conditioning : nullptr, cfg);

            fs::path dir = cell_dir(m, subject, attr_id);
            fs::create_directories(dir);
            save_png(dir / "edited.png", result.image);
            save_mask_png(dir / "mask.png", mask);
            if (conditioning)
                save_conditioning(dir / "conditioning", *conditioning);
            entry.artifacts["image"] = (dir / "edited.png").string();
            entry.artifacts["mask"] = (dir / "mask.png").string();
            entry.values["prompt"] = prompt;
            entry.values["blend_invocations"] = result.blend_invocations;
            if (!result.warnings.empty()) entry.values["warnings"] = result.warnings;
            if (!conditioning_note.empty())
                entry.values["conditioning_note"] = conditioning_note;
            entry.status = "ok";
        } catch (const std::exception& e) {
            entry.status = "failed";
            entry.error = e.what();
        }
        entry.elapsed_ms = timer.ms();
        record(state, std::move(entry));
    }
}

// --- biometric phase --------------------------------------------------------

struct GalleryCache {
    std::vector<IdentityEmbedding> embeddings;
    nlohmann::json removals = nlohmann::json::array();
};

GalleryCache build_gallery(RunState& state, MatcherClient& client,
                           const std::string& matcher_id) {
    const ExperimentManifest& m = state.m;
    GalleryCache cache;
    fs::path root = m.data.gallery_root ? *m.data.gallery_root : m.data.images_root;
    fs::path emb_dir = m.output_root / "embeddings" / matcher_id;
    fs::create_directories(emb_dir);
    for (const auto& subject : m.subjects) {
        std::vector<std::pair<std::string, Image>> images;
        for (const auto& p : list_pngs(root / subject))
            images.emplace_back(subject + "_" + p.stem().string(), load_png(p));
        GalleryFilterResult filtered = filter_gallery_by_quality(
            images, client, subject, m.eval.confidence_floor);
        for (const auto& r : filtered.removed)
            cache.removals.push_back({{"image_id", r.image_id}, {"reason", r.reason}});
        for (auto& e : filtered.kept) {
            e.save(emb_dir / e.image_id);
            cache.embeddings.push_back(std::move(e));
        }
    }
    return cache;
}

std::optional<ErrorRates> original_rates(RunState& state, MatcherClient& client,
                                         const GalleryCache& gallery,
                                         const std::string& matcher_id) {
    const ExperimentManifest& m = state.m;
    if (!m.data.probes_root) return std::nullopt;

    std::string key = "biometric|" + std::string(method_name(m.method)) + "||" +
                      std::string(kOriginalRow) + "|" + matcher_id;
    if (const LedgerEntry* prev = state.ledger.find(key); prev && prev->status == "ok") {
        state.note_reused();
        return ErrorRates::from_json(prev->values.at("rates"));
    }

    LedgerEntry entry;
    entry.kind = "biometric";
    entry.method = method_name(m.method);
    entry.attribute = kOriginalRow;
    entry.matcher = matcher_id;
    CellTimer timer;
    std::optional<ErrorRates> rates;
    try {
        std::vector<IdentityEmbedding> probes;
        for (const auto& subject : m.subjects)
            for (const auto& p : list_pngs(*m.data.probes_root / subject))
                probes.push_back(extract_embedding(client, load_png(p), subject,
                                                   EmbeddingSource::probe_original,
                                                   subject + "_" + p.stem().string()));
        ScoreMatrix scores = compute_scores(gallery.embeddings, probes, m.eval.fusion);
        rates = fnmr_at_fmr(scores, m.fmr_targets, m.eval.acquisition, matcher_id);
        fs::path dir = m.output_root / "biometric" / matcher_id;
        fs::create_directories(dir);
        scores.save_csv(dir / "original_scores.csv");
        entry.artifacts["scores"] = (dir / "original_scores.csv").string();
        entry.values["rates"] = rates->to_json();
        entry.values["n_genuine"] = scores.genuine_scores.size();
        entry.values["n_impostor"] = scores.impostor_scores.size();
        entry.values["acquisition_failures"] = scores.acquisition_failures;
        entry.status = "ok";
    } catch (const std::exception& e) {
        entry.status = "failed";
        entry.error = e.what();
    }
    entry.elapsed_ms = timer.ms();
    record(state, std::move(entry));
    return rates;
}

void run_biometric_attribute(RunState& state, MatcherClient& client,
                             const GalleryCache& gallery, const std::string& matcher_id,
                             const std::string& attr_id,
                             const std::optional<ErrorRates>& original) {
    const ExperimentManifest& m = state.m;
    std::string key = "biometric|" + std::string(method_name(m.method)) + "||" +
                      attr_id + "|" + matcher_id;
    if (state.ledger.has_ok(key)) {
        state.note_reused();
        return;
    }

    LedgerEntry entry;
    entry.kind = "biometric";
    entry.method = method_name(m.method);
    entry.attribute = attr_id;
    entry.matcher = matcher_id;
    CellTimer timer;
    try {
        std::vector<IdentityEmbedding> probes;
        std::size_t missing_edits = 0;
        for (const auto& subject : m.subjects) {
            fs::path img = cell_dir(m, subject, attr_id) / "edited.png";
            if (!fs::exists(img)) {
                ++missing_edits;
                continue;
            }
            probes.push_back(extract_embedding(client, load_png(img), subject,
                                               EmbeddingSource::probe_generated,
                                               subject + "_" + attr_id));
        }
        if (probes.empty())
            throw Error(ErrorKind::no_genuine_trials,
                        "no edited probes available for attribute '" + attr_id + "'");
        ScoreMatrix scores = compute_scores(gallery.embeddings, probes, m.eval.fusion);

        nlohmann::json rates_json;
        ErrorRates pool_rates =
            fnmr_at_fmr(scores, m.fmr_targets, m.eval.acquisition, matcher_id);
        if (m.eval.threshold_source == ThresholdSource::pool) {
            rates_json = pool_rates.to_json();
        } else {
            if (!original)
                throw Error(ErrorKind::configuration,
                            "threshold_source=original needs data.probes_root");
            ErrorRates cal = fnmr_with_thresholds(scores, *original, m.eval.acquisition);
            rates_json = m.eval.threshold_source == ThresholdSource::original
                             ? cal.to_json()
                             : pool_rates.to_json();
            if (m.eval.threshold_source == ThresholdSource::both)
                entry.values["rates_original_thresholds"] = cal.to_json();
        }

        fs::path dir = m.output_root / "biometric" / matcher_id;
        fs::create_directories(dir);
        scores.save_csv(dir / (attr_id + "_scores.csv"));
        entry.artifacts["scores"] = (dir / (attr_id + "_scores.csv")).string();
        entry.values["rates"] = rates_json;
        entry.values["n_genuine"] = scores.genuine_scores.size();
        entry.values["n_impostor"] = scores.impostor_scores.size();
        entry.values["acquisition_failures"] = scores.acquisition_failures;
        entry.values["missing_edits"] = missing_edits;
        entry.status = "ok";
    } catch (const std::exception& e) {
        entry.status = "failed";
        entry.error = e.what();
    }
    entry.elapsed_ms = timer.ms();
    record(state, std::move(entry));
}

// --- audit phase -------------------------------------------------------------

void run_audit_attribute(RunState& state, VQAClient& vqa, const std::string& attr_id) {
    const ExperimentManifest& m = state.m;
    const Taxonomy& tax = Taxonomy::instance();
    const AttributeSpec& attr = tax.require(attr_id);

    std::string key = "audit|" + std::string(method_name(m.method)) + "||" + attr_id + "|";
    if (state.ledger.has_done(key)) {
        state.note_reused();
        return;
    }

    LedgerEntry entry;
    entry.kind = "audit";
    entry.method = method_name(m.method);
    entry.attribute = attr_id;
    CellTimer timer;
    try {
        if (attr.is_reconstruction()) {
            entry.status = "skipped";
            entry.error = "the reconstruction case has no VQA question";
        } else {
            std::vector<AuditRecord> records;
            for (const auto& subject : m.subjects) {
                fs::path img = cell_dir(m, subject, attr_id) / "edited.png";
                if (!fs::exists(img)) continue;
                records.push_back(audit_image(vqa, load_png(img),
                                              subject + "_" + attr_id, attr));
            }
            if (records.empty())
                throw Error(ErrorKind::parameter,
                            "no edited images to audit for '" + attr_id + "'");
            fs::path dir = m.output_root / "audit" / method_name(m.method);
            fs::create_directories(dir);
            save_records_jsonl(dir / (attr_id + ".jsonl"), records);
            SuccessReport report = success_rate(records);
            entry.artifacts["records"] = (dir / (attr_id + ".jsonl")).string();
            entry.values["report"] = report.to_json();
            entry.values["rate_percent"] =
                report.per_attribute.at(attr_id).rate_percent;
            entry.status = "ok";
        }
    } catch (const std::exception& e) {
        entry.status = "failed";
        entry.error = e.what();
    }
    entry.elapsed_ms = timer.ms();
    record(state, std::move(entry));
}

}  // namespace

RunSummary run_experiment(const ExperimentManifest& m) {
    fs::create_directories(m.output_root);
    {
        std::ofstream copy(m.output_root / "manifest.json");
        if (!copy)
            throw Error(ErrorKind::io, "cannot write manifest copy under " +
                                           m.output_root.string());
        copy << m.to_json().dump(2) << "\n";
    }
    RunLedger ledger = RunLedger::open(m.output_root / "ledger.jsonl");
    RunSummary summary;
    RunState state{m, ledger, summary, {}};

    // editing
    {
        auto depth = make_depth(m);
        std::vector<std::function<void()>> cells;
        for (const auto& subject : m.subjects) {
            cells.push_back([&state, subject, &depth, &m] {
                if (method_is_global(m.method))
                    run_global_subject(state, subject);
                else
                    run_local_subject(state, subject, *depth);
            });
        }
        run_cells(cells, m.jobs);
    }

    // biometric: per matcher, sequential gallery build then per-attribute cells
    for (const auto& matcher_id : m.matchers) {
        try {
            auto client = make_matcher(m, matcher_id);
            GalleryCache gallery = build_gallery(state, *client, matcher_id);
            std::optional<ErrorRates> original =
                original_rates(state, *client, gallery, matcher_id);
            std::vector<std::function<void()>> cells;
            for (const auto& attr_id : m.attributes)
                cells.push_back([&state, &m, matcher_id, attr_id, &gallery, &original] {
                    auto cell_client = make_matcher(m, matcher_id);
                    run_biometric_attribute(state, *cell_client, gallery, matcher_id,
                                            attr_id, original);
                });
            run_cells(cells, m.jobs);

            if (m.eval.tsne) {
                std::string key = "tsne|" + std::string(method_name(m.method)) + "|||" +
                                  matcher_id;
                if (!state.ledger.has_ok(key)) {
                    LedgerEntry entry;
                    entry.kind = "tsne";
                    entry.method = method_name(m.method);
                    entry.matcher = matcher_id;
                    CellTimer timer;
                    try {
                        TsneConfig cfg;
                        cfg.seed = m.seed;
                        fs::path base = m.output_root / "biometric" / matcher_id / "tsne";
                        tsne_export(gallery.embeddings, base, cfg);
                        entry.artifacts["csv"] = (base.string() + ".csv");
                        entry.artifacts["svg"] = (base.string() + ".svg");
                        entry.status = "ok";
                    } catch (const std::exception& e) {
                        entry.status = "failed";
                        entry.error = e.what();
                    }
                    entry.elapsed_ms = timer.ms();
                    record(state, std::move(entry));
                } else {
                    state.note_reused();
                }
            }
        } catch (const std::exception& e) {
            // matcher-level failure (e.g. unreachable endpoint): fail every
            // cell of this matcher, editing results stay intact
            for (const auto& attr_id : m.attributes) {
                std::string key = "biometric|" + std::string(method_name(m.method)) +
                                  "||" + attr_id + "|" + matcher_id;
                if (state.ledger.has_ok(key)) continue;
                LedgerEntry entry;
                entry.kind = "biometric";
                entry.method = method_name(m.method);
                entry.attribute = attr_id;
                entry.matcher = matcher_id;
                entry.status = "failed";
                entry.error = e.what();
                record(state, std::move(entry));
            }
        }
    }

    // audit
    {
        auto vqa = make_vqa(m);
        std::vector<std::function<void()>> cells;
        for (const auto& attr_id : m.attributes)
            cells.push_back([&state, &vqa, attr_id] {
                run_audit_attribute(state, *vqa, attr_id);
            });
        run_cells(cells, m.jobs);
    }

    // cumulative accounting from the ledger
    for (const auto& e : ledger.entries()) {
        if (e.status == "ok") ++summary.completed;
        else if (e.status == "failed") ++summary.failed;
        else if (e.status == "skipped") ++summary.skipped;
    }
    summary.accounting = {
        {"subjects", m.subjects.size()},
        {"attributes", m.attributes.size()},
        {"matchers", m.matchers.size()},
        {"methods", 1},
        {"expected_edit_cells", m.subjects.size() * m.attributes.size()},
        {"expected_biometric_cells",
         m.attributes.size() * m.matchers.size() +
             (m.data.probes_root ? m.matchers.size() : 0)},
        {"expected_audit_cells", m.attributes.size()},
    };
    {
        // only cumulative, ledger-derived fields: resume must reproduce the
        // file byte for byte
        nlohmann::json cumulative = {{"completed", summary.completed},
                                     {"failed", summary.failed},
                                     {"skipped", summary.skipped},
                                     {"accounting", summary.accounting}};
        std::ofstream out(m.output_root / "summary.json");
        out << cumulative.dump(2) << "\n";
    }

    render_report(ledger, m.output_root);
    write_checksums(m.output_root);
    return summary;
}

// --- reporting ----------------------------------------------------------------

namespace {

std::vector<std::string> canonical_method_order() {
    return {"db_base", "ti", "ti_cs", "cn", "cn_ti", "db_prop", "cn_ip"};
}

struct BioCell {
    ErrorRates rates;
    std::string status;
};

}  // namespace

void render_report(const RunLedger& ledger, const std::filesystem::path& out_dir,
                   const DegradationThresholds& thresholds) {
    bool has_content = false;
    for (const auto& e : ledger.entries())
        if ((e.kind == "biometric" || e.kind == "audit") && e.status == "ok")
            has_content = true;
    if (!has_content)
        throw Error(ErrorKind::configuration,
                    "nothing to report: no completed biometric or audit cells");

    // matcher -> attribute -> method -> cell
    std::map<std::string, std::map<std::string, std::map<std::string, BioCell>>> bio;
    std::map<std::string, std::map<std::string, double>> audit;  // attr -> method -> rate
    std::set<std::string> methods;
    std::vector<std::string> attr_order;
    auto note_attr = [&attr_order](const std::string& a) {
        if (std::find(attr_order.begin(), attr_order.end(), a) == attr_order.end())
            attr_order.push_back(a);
    };

    for (const auto& e : ledger.entries()) {
        if (e.kind == "biometric" && e.status == "ok") {
            BioCell cell;
            cell.rates = ErrorRates::from_json(e.values.at("rates"));
            cell.status = e.status;
            bio[e.matcher][e.attribute][e.method] = std::move(cell);
            methods.insert(e.method);
            if (e.attribute != kOriginalRow) note_attr(e.attribute);
        } else if (e.kind == "audit" && e.status == "ok") {
            audit[e.attribute][e.method] = e.values.value("rate_percent", 0.0);
            methods.insert(e.method);
            note_attr(e.attribute);
        }
    }

    std::vector<std::string> method_order;
    for (const auto& name : canonical_method_order())
        if (methods.count(name)) method_order.push_back(name);
    for (const auto& name : methods)
        if (std::find(method_order.begin(), method_order.end(), name) ==
            method_order.end())
            method_order.push_back(name);

    std::ostringstream md;
    std::ostringstream csv;
    md << "# Run report\n";
    csv << "table,matcher,attribute,method,value,flag\n";

    for (const auto& [matcher_id, by_attr] : bio) {
        md << "\n## FNMR@FMR=0.01%/0.1% — " << matcher_id << "\n\n";
        md << "| Attribute |";
        for (const auto& meth : method_order) md << " " << meth << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < method_order.size(); ++i) md << "---|";
        md << "\n";

        auto original_it = by_attr.find(kOriginalRow);
        const std::string baseline =
            method_order.empty() ? std::string() : method_order.front();

        auto render_row = [&](const std::string& attr_label,
                              const std::map<std::string, BioCell>& cells) {
            md << "| " << attr_label << " |";
            for (const auto& meth : method_order) {
                auto it = cells.find(meth);
                if (it == cells.end()) {
                    md << " - |";
                    continue;
                }
                std::string flag = "none";
                if (attr_label != "Original" && original_it != by_attr.end()) {
                    auto orig_cell = original_it->second.find(meth);
                    const ErrorRates* orig = nullptr;
                    if (orig_cell != original_it->second.end())
                        orig = &orig_cell->second.rates;
                    else if (!original_it->second.empty())
                        orig = &original_it->second.begin()->second.rates;
                    if (orig) {
                        DegradationFlag f = flag_degradation(*orig, it->second.rates,
                                                             matcher_id, thresholds);
                        if (f == DegradationFlag::red) flag = "red";
                        else if (meth != baseline && cells.count(baseline)) {
                            DegradationFlag base_flag =
                                flag_degradation(*orig, cells.at(baseline).rates,
                                                 matcher_id, thresholds);
                            if (flag_mitigation(cells.at(baseline).rates,
                                                it->second.rates,
                                                base_flag) == DegradationFlag::green)
                                flag = "green";
                        }
                    }
                }
                std::string cell_text = it->second.rates.cell();
                if (flag == "red") md << " **" << cell_text << "** (RED) |";
                else if (flag == "green") md << " *" << cell_text << "* (GREEN) |";
                else md << " " << cell_text << " |";
                csv << "fnmr," << matcher_id << "," << attr_label << "," << meth << ","
                    << cell_text << "," << flag << "\n";
            }
            md << "\n";
        };

        if (original_it != by_attr.end()) render_row("Original", original_it->second);
        for (const auto& attr : attr_order) {
            auto it = by_attr.find(attr);
            if (it != by_attr.end()) render_row(attr, it->second);
        }
    }

    if (!audit.empty()) {
        md << "\n## Attribute prediction success rate (%)\n\n";
        md << "| Attribute |";
        for (const auto& meth : method_order) md << " " << meth << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < method_order.size(); ++i) md << "---|";
        md << "\n";
        for (const auto& attr : attr_order) {
            auto it = audit.find(attr);
            if (it == audit.end()) continue;
            md << "| " << attr << " |";
            for (const auto& meth : method_order) {
                auto jt = it->second.find(meth);
                if (jt == it->second.end()) {
                    md << " - |";
                    continue;
                }
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.1f", jt->second);
                md << " " << buf << " |";
                csv << "audit,," << attr << "," << meth << "," << buf << ",none\n";
            }
            md << "\n";
        }
    }

    // failure appendix
    std::size_t failures = 0;
    for (const auto& e : ledger.entries())
        if (e.status == "failed") ++failures;
    if (failures > 0) {
        md << "\n## Failures (" << failures << ")\n\n";
        for (const auto& e : ledger.entries())
            if (e.status == "failed")
                md << "- `" << e.key() << "`: " << e.error << "\n";
    }

    std::ofstream md_out(out_dir / "report.md");
    if (!md_out) throw Error(ErrorKind::io, "cannot write report.md");
    md_out << md.str();
    std::ofstream csv_out(out_dir / "report.csv");
    if (!csv_out) throw Error(ErrorKind::io, "cannot write report.csv");
    csv_out << csv.str();
}

void write_checksums(const std::filesystem::path& run_dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(run_dir))
        if (e.is_regular_file() && e.path().filename() != "checksums.txt")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::ostringstream body;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        char buf[32];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a64(bytes)));
        body << buf << "  " << fs::relative(f, run_dir).string() << "\n";
    }
    std::ofstream out(run_dir / "checksums.txt");
    if (!out) throw Error(ErrorKind::io, "cannot write checksums.txt");
    out << body.str();
}

}  // namespace faceedit
