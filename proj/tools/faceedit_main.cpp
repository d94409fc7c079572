#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "faceedit/clients.hpp"
#include "faceedit/engines.hpp"
#include "faceedit/manifest.hpp"
#include "faceedit/pipeline.hpp"
#include "faceedit/rng.hpp"
#include "faceedit/tsne.hpp"

namespace fs = std::filesystem;
using namespace faceedit;

namespace {

// exit codes: 0 ok, 1 generic, 2 schema/config, 3 client failure, 4 partial
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitSchema = 2;
constexpr int kExitClient = 3;
constexpr int kExitPartial = 4;

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::schema:
        case ErrorKind::configuration:
        case ErrorKind::unknown_attribute:
        case ErrorKind::parameter:
            return kExitSchema;
        case ErrorKind::client:
        case ErrorKind::matcher_unavailable:
        case ErrorKind::conditioning_unavailable:
            return kExitClient;
        default:
            return kExitError;
    }
}

std::unique_ptr<MatcherClient> matcher_from_flag(const std::string& spec) {
    // "stub:<id>" or "http:<id>" (endpoint from FACEEDIT_MATCHER_URL)
    auto colon = spec.find(':');
    std::string kind = colon == std::string::npos ? "stub" : spec.substr(0, colon);
    std::string id = colon == std::string::npos ? spec : spec.substr(colon + 1);
    if (kind == "http") {
        const char* url = std::getenv("FACEEDIT_MATCHER_URL");
        if (!url || !*url)
            throw Error(ErrorKind::client, "http matcher needs FACEEDIT_MATCHER_URL");
        return std::make_unique<HttpMatcherClient>(url, id);
    }
    if (kind == "stub") return std::make_unique<StubMatcherClient>(id);
    throw Error(ErrorKind::schema, "matcher must be stub:<id> or http:<id>");
}

std::unique_ptr<VQAClient> vqa_from_flag(const std::string& spec) {
    if (spec == "stub") return std::make_unique<HashVqaClient>();
    if (spec == "yes") return std::make_unique<FixedAnswerVqaClient>("Yes");
    if (spec == "http") {
        const char* url = std::getenv("FACEEDIT_VQA_URL");
        if (!url || !*url)
            throw Error(ErrorKind::client, "http VQA needs FACEEDIT_VQA_URL");
        return std::make_unique<HttpVqaClient>(url, "http-vqa");
    }
    throw Error(ErrorKind::schema, "vqa client must be stub, yes or http");
}

std::vector<fs::path> pngs_under(const fs::path& dir) {
    std::vector<fs::path> out;
    if (fs::is_regular_file(dir)) {
        out.push_back(dir);
        return out;
    }
    if (fs::exists(dir))
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png")
                out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

int cmd_attrs_list(const std::string& category, bool as_json) {
    const Taxonomy& tax = Taxonomy::instance();
    std::optional<AttributeCategory> filter;
    if (!category.empty()) {
        filter = category_from_name(category);
        if (!filter) {
            std::cerr << "unknown category '" << category
                      << "' (semantic, demographic, expression, none)\n";
            return kExitSchema;
        }
    }
    if (as_json) {
        std::cout << tax.to_json().dump(2) << "\n";
        return kExitOk;
    }
    for (const auto& s : tax.list_attributes(filter)) {
        std::cout << s.id << "\t" << category_name(s.category) << "\t"
                  << (s.editable_locally ? "local" : "global");
        if (!s.vqa_question.empty()) std::cout << "\t" << s.vqa_question;
        std::cout << "\n";
    }
    return kExitOk;
}

nlohmann::json benchmark_rows_json(const BenchmarkResult& result) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.rows)
        rows.push_back({{"attribute", r.attribute_id},
                        {"n", r.n},
                        {"accuracy_percent", r.accuracy_percent}});
    return {{"client", result.client_id},
            {"mean_accuracy_percent", result.mean_accuracy_percent},
            {"rows", rows}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"identity-preserving facial attribute editing and evaluation"};
    app.require_subcommand(1);

    auto* attrs = app.add_subcommand("attrs", "attribute taxonomy");
    auto* attrs_list = attrs->add_subcommand("list", "list the attribute universe");
    std::string category;
    bool attrs_json = false;
    attrs_list->add_option("--category", category, "semantic|demographic|expression|none");
    attrs_list->add_flag("--json", attrs_json, "emit the versioned JSON document");

    auto* train = app.add_subcommand("train-subject", "DreamBooth-style subject fine-tuning");
    std::string train_images, train_reg, train_out = "train_out";
    std::string train_identifier = "sks";
    int train_steps = 60;
    double train_lr = 0.05;
    std::uint64_t train_seed = 0;
    std::string train_weights_json;
    bool train_relaxed = false;
    train->add_option("--images", train_images, "subject image directory")->required();
    train->add_option("--reg", train_reg, "regularization root (one dir per attribute)");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--identifier", train_identifier, "rare identifier token");
    train->add_option("--steps", train_steps);
    train->add_option("--lr", train_lr);
    train->add_option("--seed", train_seed);
    train->add_option("--loss", train_weights_json, "loss weights as JSON");
    train->add_flag("--relaxed-reg", train_relaxed, "accept undersized reg directories");

    auto* token = app.add_subcommand("learn-token", "textual-inversion token training");
    std::string token_images, token_out = "token_out", token_name = "sks";
    int token_vectors = 1, token_steps = 60;
    double token_lr = 0.05;
    std::uint64_t token_seed = 0;
    token->add_option("--images", token_images, "exemplar image directory")->required();
    token->add_option("--out", token_out);
    token->add_option("--token", token_name);
    token->add_option("--vectors", token_vectors, "1, 2 or 5");
    token->add_option("--steps", token_steps);
    token->add_option("--lr", token_lr);
    token->add_option("--seed", token_seed);

    auto* eg = app.add_subcommand("edit-global", "txt2img generation from a checkpoint");
    std::string eg_checkpoint, eg_attr, eg_out = "edited.png", eg_identifier = "sks";
    int eg_steps = 50;
    double eg_guidance = 1.0;
    std::uint64_t eg_seed = 0;
    eg->add_option("--checkpoint", eg_checkpoint, "trained toy checkpoint")->required();
    eg->add_option("--attribute", eg_attr, "attribute id (or no_attribute)")->required();
    eg->add_option("--out", eg_out);
    eg->add_option("--identifier", eg_identifier);
    eg->add_option("--steps", eg_steps);
    eg->add_option("--guidance", eg_guidance);
    eg->add_option("--seed", eg_seed);

    auto* el = app.add_subcommand("edit-local", "mask-guided inpainting edit");
    std::string el_image, el_attr, el_masks, el_out = "edited.png";
    std::string el_conditioning = "canny";
    std::vector<std::string> el_regions;
    int el_steps = 20;
    double el_guidance = 1.0, el_cscale = 1.0, el_strength = 0.3;
    std::uint64_t el_seed = 0;
    bool el_no_composite = false;
    el->add_option("--image", el_image, "input image")->required();
    el->add_option("--attribute", el_attr, "attribute id")->required();
    el->add_option("--masks", el_masks, "region mask directory for the image");
    el->add_option("--regions", el_regions, "override region names");
    el->add_option("--out", el_out);
    el->add_option("--conditioning", el_conditioning, "depth|canny|none");
    el->add_option("--steps", el_steps);
    el->add_option("--guidance", el_guidance);
    el->add_option("--controlnet-scale", el_cscale);
    el->add_option("--strength", el_strength);
    el->add_option("--seed", el_seed);
    el->add_flag("--no-composite", el_no_composite, "skip the pixel-space composite");

    auto* ev = app.add_subcommand("eval-biometric", "FNMR@FMR scoring");
    std::string ev_gallery, ev_probes, ev_matcher = "stub:stub-arcface", ev_out = "rates.json";
    std::string ev_fmr = "1e-4,1e-3";
    ev->add_option("--gallery", ev_gallery, "gallery root (one dir per subject)")->required();
    ev->add_option("--probes", ev_probes, "probe root (one dir per subject)")->required();
    ev->add_option("--matcher", ev_matcher, "stub:<id> or http:<id>");
    ev->add_option("--fmr", ev_fmr, "comma-separated FMR targets");
    ev->add_option("--out", ev_out);

    auto* au = app.add_subcommand("audit-attributes", "VQA attribute auditing");
    std::string au_images, au_client = "stub", au_out = "audit.jsonl";
    std::vector<std::string> au_attrs;
    bool au_exclude = false;
    au->add_option("--images", au_images, "image file or directory")->required();
    au->add_option("--attrs", au_attrs, "attribute ids")->required();
    au->add_option("--client", au_client, "stub|yes|http");
    au->add_option("--out", au_out);
    au->add_flag("--strict-exclusion", au_exclude, "drop unparseable answers");

    auto* bm = app.add_subcommand("benchmark-vqa", "VQA accuracy against annotations");
    std::string bm_images, bm_annotations, bm_client = "stub", bm_out = "benchmark.json";
    std::vector<std::string> bm_attrs;
    bm->add_option("--images", bm_images, "image directory")->required();
    bm->add_option("--annotations", bm_annotations, "CelebA-style attribute file")->required();
    bm->add_option("--client", bm_client, "stub|yes|http|echo|invert");
    bm->add_option("--attrs", bm_attrs, "attribute subset");
    bm->add_option("--out", bm_out);

    auto* run = app.add_subcommand("run", "execute an experiment manifest");
    std::string run_manifest;
    run->add_option("manifest", run_manifest, "TOML or JSON manifest")->required();

    auto* report = app.add_subcommand("report", "re-render reports from a run ledger");
    std::string report_dir;
    report->add_option("run_dir", report_dir, "experiment output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*attrs_list) return cmd_attrs_list(category, attrs_json);

        if (*train) {
            SubjectSet subject{fs::path(train_images).filename().string(),
                               pngs_under(train_images)};
            LossWeights weights;
            if (!train_weights_json.empty())
                weights = LossWeights::from_json(nlohmann::json::parse(train_weights_json));
            TrainConfig cfg;
            cfg.steps = train_steps;
            cfg.learning_rate = train_lr;
            cfg.seed = train_seed;
            cfg.rare_identifier = train_identifier;
            cfg.checkpoint_dir = fs::path(train_out);
            ToyBackbone backbone(train_seed ^ fnv1a64("backbone"));
            backbone.register_identifier(train_identifier);
            RegularizationSet reg;
            if (weights.lambda_p > 0) {
                if (train_reg.empty())
                    throw Error(ErrorKind::configuration,
                                "lambda_p > 0 needs --reg (or pass --loss with lambda_p=0)");
                RegSetConfig reg_cfg;
                reg_cfg.relaxed_counts = train_relaxed;
                reg = build_regularization_set(fs::path(train_reg),
                                               Taxonomy::instance(), reg_cfg);
            }
            TrainRun result = finetune_global(backbone, subject, reg, weights, cfg);
            fs::create_directories(train_out);
            backbone.save_checkpoint(fs::path(train_out) / "checkpoint.json");
            std::ofstream hist(fs::path(train_out) / "history.jsonl");
            hist << result.jsonl();
            std::cout << "trained " << result.history.size() << " steps; checkpoint at "
                      << (fs::path(train_out) / "checkpoint.json").string() << "\n";
            return kExitOk;
        }

        if (*token) {
            SubjectSet set{fs::path(token_images).filename().string(),
                           pngs_under(token_images)};
            TrainConfig cfg;
            cfg.steps = token_steps;
            cfg.learning_rate = token_lr;
            cfg.seed = token_seed;
            cfg.rare_identifier = token_name;
            ToyBackbone backbone(token_seed ^ fnv1a64("backbone"));
            TokenTrainResult result =
                learn_token_embedding(backbone, set, token_vectors, LossWeights{}, cfg);
            fs::create_directories(token_out);
            result.embedding.save(fs::path(token_out) / "token.json",
                                  backbone.backbone_id(), cfg);
            backbone.save_checkpoint(fs::path(token_out) / "checkpoint.json");
            std::cout << "learned token '" << token_name << "' with " << token_vectors
                      << " vector(s)\n";
            return kExitOk;
        }

        if (*eg) {
            ToyBackbone backbone(0);
            backbone.load_checkpoint(eg_checkpoint);
            const AttributeSpec& attr = Taxonomy::instance().require(eg_attr);
            GenerateConfig cfg;
            cfg.steps = eg_steps;
            cfg.guidance_scale = eg_guidance;
            cfg.seed = eg_seed;
            std::string prompt =
                build_edit_prompt(PromptTemplate{eg_identifier, "person"}, attr);
            Image out = generate_global(backbone, prompt, cfg);
            save_png(eg_out, out);
            std::cout << "wrote " << eg_out << " (prompt: " << prompt << ")\n";
            return kExitOk;
        }

        if (*el) {
            Image input = load_png(el_image);
            const AttributeSpec& attr = Taxonomy::instance().require(el_attr);
            std::vector<std::string> regions =
                el_regions.empty() ? attr.regions : el_regions;
            if (attr.category == AttributeCategory::expression && !regions.empty())
                std::cerr << "warning: expression editing through face masks is "
                             "experimental; inpainting tends to hallucinate facial "
                             "details\n";
            BinaryMask mask(input.height, input.width, 0);
            if (!attr.is_reconstruction()) {
                if (regions.empty())
                    throw Error(ErrorKind::parameter,
                                "attribute '" + attr.id +
                                    "' is global-only; pass --regions to force a mask");
                if (el_masks.empty())
                    throw Error(ErrorKind::configuration, "--masks is required");
                std::string image_id = fs::path(el_image).stem().string();
                RegionLibrary lib = RegionLibrary::load_directory(el_masks, image_id);
                mask = make_mask(lib, image_id, regions);
            }
            std::optional<ConditioningMap> conditioning;
            if (el_conditioning == "depth") {
                StubDepthClient depth;
                conditioning = depth_map(input, depth);
            } else if (el_conditioning == "canny") {
                conditioning = canny_edge(input, 0.08, 0.2);
            } else if (el_conditioning != "none") {
                throw Error(ErrorKind::schema, "--conditioning must be depth|canny|none");
            }
            ToyBackbone backbone(0);
            EditLocalConfig cfg;
            cfg.steps = el_steps;
            cfg.guidance_scale = el_guidance;
            cfg.controlnet_scale = el_cscale;
            cfg.strength = el_strength;
            cfg.seed = el_seed;
            cfg.pixel_composite = !el_no_composite;
            cfg.mask_regions = regions;
            cfg.attribute = attr.is_reconstruction() ? nullptr : &attr;
            std::string prompt = attr.is_reconstruction()
                                     ? ""
                                     : build_class_caption("person", attr);
            EditResult result = edit_local(backbone, input, mask, prompt,
                                           conditioning ? &*conditioning : nullptr, cfg);
            save_png(el_out, result.image);
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "wrote " << el_out << "\n";
            return kExitOk;
        }

        if (*ev) {
            auto client = matcher_from_flag(ev_matcher);
            std::vector<double> targets;
            std::stringstream ss(ev_fmr);
            std::string item;
            while (std::getline(ss, item, ',')) targets.push_back(std::stod(item));

            auto collect = [&](const fs::path& root, EmbeddingSource source) {
                std::vector<IdentityEmbedding> out;
                for (const auto& subject_dir : fs::directory_iterator(root)) {
                    if (!subject_dir.is_directory()) continue;
                    std::string subject = subject_dir.path().filename().string();
                    for (const auto& p : pngs_under(subject_dir.path()))
                        out.push_back(extract_embedding(
                            *client, load_png(p), subject, source,
                            subject + "_" + p.stem().string()));
                }
                return out;
            };
            auto gallery = collect(ev_gallery, EmbeddingSource::original_gallery);
            auto probes = collect(ev_probes, EmbeddingSource::probe_original);
            ScoreMatrix scores = compute_scores(gallery, probes);
            ErrorRates rates =
                fnmr_at_fmr(scores, targets, AcquisitionPolicy::count_as_nonmatch,
                            client->matcher_id());
            std::ofstream out(ev_out);
            out << rates.to_json().dump(2) << "\n";
            std::cout << client->matcher_id() << " FNMR@FMR: " << rates.cell() << " ("
                      << scores.genuine_scores.size() << " genuine, "
                      << scores.impostor_scores.size() << " impostor)\n";
            return kExitOk;
        }

        if (*au) {
            auto client = vqa_from_flag(au_client);
            const Taxonomy& tax = Taxonomy::instance();
            std::vector<AuditRecord> records;
            for (const auto& path : pngs_under(au_images)) {
                Image img = load_png(path);
                for (const auto& attr_name : au_attrs) {
                    const AttributeSpec& attr = tax.require(attr_name);
                    records.push_back(
                        audit_image(*client, img, path.stem().string(), attr));
                }
            }
            if (records.empty())
                throw Error(ErrorKind::parameter, "no images found under " + au_images);
            save_records_jsonl(au_out, records);
            SuccessReport report_out = success_rate(
                records, au_exclude ? UnparseablePolicy::exclude
                                    : UnparseablePolicy::count_as_failure);
            std::cout << report_out.to_markdown();
            return kExitOk;
        }

        if (*bm) {
            AnnotationSet annotations = AnnotationSet::load(bm_annotations);
            std::map<std::string, Image> images;
            for (const auto& p : pngs_under(bm_images))
                images[p.stem().string()] = load_png(p);
            if (bm_client == "echo" || bm_client == "invert") {
                GroundTruthVqaClient gt(annotations,
                                        GroundTruthVqaClient::question_map(),
                                        bm_client == "invert", bm_client + "-stub");
                // the ground-truth stub needs to know which image it is adjudicating
                BenchmarkResult result;
                result.client_id = gt.client_id();
                double acc = 0.0;
                const Taxonomy& tax = Taxonomy::instance();
                std::vector<std::string> attr_ids = bm_attrs;
                if (attr_ids.empty())
                    for (const auto& s : tax.list_attributes())
                        if (!s.is_reconstruction() && annotations.covers(s.id))
                            attr_ids.push_back(s.id);
                for (const auto& id : attr_ids) {
                    const AttributeSpec& attr = tax.require(id);
                    BenchmarkRow row;
                    row.attribute_id = id;
                    for (const auto& [image_id, image] : images) {
                        auto truth = annotations.label(image_id, id);
                        if (!truth) continue;
                        gt.bind_image(image_id);
                        AuditRecord rec = audit_image(gt, image, image_id, attr);
                        ++row.n;
                        if ((rec.verdict == Verdict::yes) == *truth) ++row.n_correct;
                    }
                    row.accuracy_percent = row.n ? 100.0 * row.n_correct / row.n : 0.0;
                    acc += row.accuracy_percent;
                    result.rows.push_back(row);
                }
                result.mean_accuracy_percent =
                    result.rows.empty() ? 0.0 : acc / result.rows.size();
                std::ofstream out(bm_out);
                out << benchmark_rows_json(result).dump(2) << "\n";
                std::cout << result.client_id << " mean accuracy "
                          << result.mean_accuracy_percent << "%\n";
                return kExitOk;
            }
            auto client = vqa_from_flag(bm_client);
            BenchmarkResult result =
                benchmark_predictor(*client, annotations, images, bm_attrs);
            std::ofstream out(bm_out);
            out << benchmark_rows_json(result).dump(2) << "\n";
            std::cout << result.client_id << " mean accuracy "
                      << result.mean_accuracy_percent << "%\n";
            return kExitOk;
        }

        if (*run) {
            ExperimentManifest manifest = validate_manifest(run_manifest);
            RunSummary summary = run_experiment(manifest);
            std::cout << "run complete: " << summary.completed << " ok, "
                      << summary.failed << " failed, " << summary.skipped
                      << " skipped (" << summary.reused << " reused)\n";
            std::cout << "report: " << (manifest.output_root / "report.md").string()
                      << "\n";
            return summary.failed > 0 ? kExitPartial : kExitOk;
        }

        if (*report) {
            RunLedger ledger = RunLedger::open(fs::path(report_dir) / "ledger.jsonl");
            render_report(ledger, report_dir);
            write_checksums(report_dir);
            std::cout << "report: " << (fs::path(report_dir) / "report.md").string()
                      << "\n";
            return kExitOk;
        }
    } catch (const Error& e) {
        std::cerr << "error (" << error_kind_name(e.kind()) << "): " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitOk;
}
