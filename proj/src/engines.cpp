#include "faceedit/engines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "faceedit/rng.hpp"

namespace faceedit {

namespace fs = std::filesystem;

nlohmann::json RegularizationSet::manifest() const {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& e : entries)
        items.push_back({{"image", e.image.string()},
                         {"caption", e.caption},
                         {"attribute_id", e.attribute_id}});
    return {{"total", entries.size()},
            {"counts_per_attribute", counts_per_attribute},
            {"entries", items}};
}

RegularizationSet build_regularization_set(
    const std::map<std::string, std::filesystem::path>& attribute_image_dirs,
    const Taxonomy& taxonomy, const RegSetConfig& config) {
    RegularizationSet out;
    for (const auto& [attr_id, dir] : attribute_image_dirs) {
        const AttributeSpec& attr = taxonomy.require(attr_id);
        if (attr.is_reconstruction())
            throw Error(ErrorKind::parameter,
                        "the reconstruction spec does not belong in a regularization set");
        std::vector<fs::path> files;
        if (fs::exists(dir))
            for (const auto& entry : fs::directory_iterator(dir))
                if (entry.is_regular_file() && entry.path().extension() == ".png")
                    files.push_back(entry.path());
        std::sort(files.begin(), files.end());

        for (const auto& f : files) {
            std::string stem = f.stem().string();
            for (const auto& sid : config.excluded_subjects)
                if (stem == sid || stem.rfind(sid + "_", 0) == 0)
                    throw Error(ErrorKind::parameter,
                                "regularization image " + f.string() +
                                    " belongs to excluded subject '" + sid + "'");
        }

        int want = config.per_attribute;
        if (static_cast<int>(files.size()) < want) {
            if (!config.relaxed_counts)
                throw Error(ErrorKind::insufficient_exemplars,
                            "attribute '" + attr.id + "' has only " +
                                std::to_string(files.size()) + " exemplars, need " +
                                std::to_string(want));
            want = static_cast<int>(files.size());
        }
        std::string caption = build_class_caption(config.class_noun, attr);
        for (int i = 0; i < want; ++i)
            out.entries.push_back({files[i], caption, attr.id});
        out.counts_per_attribute[attr.id] = want;
    }
    return out;
}

RegularizationSet build_regularization_set(const std::filesystem::path& root,
                                           const Taxonomy& taxonomy,
                                           const RegSetConfig& config) {
    if (!fs::exists(root))
        throw Error(ErrorKind::io, "regularization root not found: " + root.string());
    std::map<std::string, fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory())
            dirs[entry.path().filename().string()] = entry.path();
    return build_regularization_set(dirs, taxonomy, config);
}

std::string TrainRun::jsonl() const {
    std::ostringstream out;
    for (const auto& line : history) out << line.dump() << "\n";
    return out.str();
}

namespace {

Tensor sample_noise_like(const std::vector<std::size_t>& shape, Rng& rng) {
    Tensor n(shape);
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = rng.normal();
    return n;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
    auto inner = items.front().shape();
    std::vector<std::size_t> shape = {items.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    Tensor out(shape);
    std::size_t stride = items.front().size();
    for (std::size_t i = 0; i < items.size(); ++i)
        for (std::size_t j = 0; j < stride; ++j) out[i * stride + j] = items[i][j];
    return out;
}

Tensor batch_slice(const Tensor& batch, std::size_t index,
                   const std::vector<std::size_t>& inner) {
    std::size_t stride = Tensor::count_of(inner);
    Tensor out(inner);
    for (std::size_t j = 0; j < stride; ++j) out[j] = batch[index * stride + j];
    return out;
}

struct TrainItem {
    Tensor z0;
    Tensor z_t;
    Tensor eps;
    int t = 0;
    ForwardCache cache;
    Tensor eps_pred;
};

TrainItem make_train_item(const Tensor& z0, const DiffusionSchedule& sched, Rng& rng) {
    TrainItem item;
    item.z0 = z0;
    item.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.timesteps)));
    item.eps = sample_noise_like(z0.shape(), rng);
    double sa = sched.sqrt_alpha_bar(item.t);
    double sb = sched.sqrt_one_minus_alpha_bar(item.t);
    item.z_t = Tensor(z0.shape());
    for (std::size_t i = 0; i < z0.size(); ++i)
        item.z_t[i] = sa * z0[i] + sb * item.eps[i];
    return item;
}

// One-step estimate of the clean latent from the predicted noise.
Tensor denoised_estimate(const TrainItem& item, const DiffusionSchedule& sched) {
    double sa = sched.sqrt_alpha_bar(item.t);
    double sb = sched.sqrt_one_minus_alpha_bar(item.t);
    Tensor z0_hat(item.z0.shape());
    for (std::size_t i = 0; i < z0_hat.size(); ++i)
        z0_hat[i] = (item.z_t[i] - sb * item.eps_pred[i]) / sa;
    return z0_hat;
}

// The last-good checkpoint is written after every finite step, so on
// divergence it holds the parameters that produced the last finite loss.
void save_last_good(const TrainableBackbone& backbone,
                    const std::optional<fs::path>& checkpoint_dir) {
    if (!checkpoint_dir) return;
    fs::create_directories(*checkpoint_dir);
    backbone.save_checkpoint(*checkpoint_dir / "last_good.json");
}

[[noreturn]] void report_divergence(const std::optional<fs::path>& checkpoint_dir,
                                    int step) {
    std::string msg = "training diverged (non-finite loss) at step " + std::to_string(step);
    if (checkpoint_dir && fs::exists(*checkpoint_dir / "last_good.json"))
        msg += "; last-good checkpoint: " + (*checkpoint_dir / "last_good.json").string();
    throw Error(ErrorKind::divergence, msg);
}

std::vector<Tensor> encode_images(const Backbone& backbone,
                                  const std::vector<fs::path>& paths) {
    std::vector<Tensor> latents;
    latents.reserve(paths.size());
    for (const auto& p : paths) latents.push_back(backbone.encode(load_png(p)));
    return latents;
}

}  // namespace

TrainRun finetune_global(TrainableBackbone& backbone, const SubjectSet& subject,
                         const RegularizationSet& reg, const LossWeights& weights,
                         const TrainConfig& config) {
    weights.validate();
    if (subject.images.empty())
        throw Error(ErrorKind::parameter, "subject set has no images");
    if (config.steps <= 0 || config.batch_size <= 0)
        throw Error(ErrorKind::parameter, "steps and batch_size must be positive");
    if (!backbone.has_token(config.rare_identifier))
        throw Error(ErrorKind::tokenization,
                    "rare identifier '" + config.rare_identifier +
                        "' is not registered on the backbone");
    if (weights.lambda_p > 0 && reg.entries.empty())
        throw Error(ErrorKind::incomplete_batch,
                    "lambda_p > 0 requires a regularization set");
    if (weights.lambda_s > 0 && config.batch_size < 2)
        throw Error(ErrorKind::insufficient_batch,
                    "contrastive training needs batch_size >= 2");

    const DiffusionSchedule& sched = backbone.schedule();
    Rng rng(config.seed);

    std::vector<Tensor> subject_latents = encode_images(backbone, subject.images);
    PromptTemplate tmpl{config.rare_identifier, config.class_noun};
    const AttributeSpec& recon = Taxonomy::instance().require("no_attribute");
    Tensor subject_cond = backbone.embed_text(build_edit_prompt(tmpl, recon)).cond;

    // Regularization latents and their caption conditions, cached per entry.
    std::vector<Tensor> reg_latents;
    std::vector<Tensor> reg_conds;
    if (weights.lambda_p > 0) {
        for (const auto& e : reg.entries) {
            reg_latents.push_back(backbone.encode(load_png(e.image)));
            reg_conds.push_back(backbone.embed_text(e.caption).cond);
        }
    }

    TrainRun run;
    run.config = config;
    run.weights = weights;
    std::size_t b = static_cast<std::size_t>(config.batch_size);
    auto latent_shape = subject_latents.front().shape();

    for (int step = 0; step < config.steps; ++step) {
        backbone.zero_grads();

        std::vector<TrainItem> items(b);
        std::vector<Tensor> eps_true, eps_pred;
        for (std::size_t i = 0; i < b; ++i) {
            const Tensor& z0 =
                subject_latents[rng.below(subject_latents.size())];
            items[i] = make_train_item(z0, sched, rng);
            items[i].eps_pred = backbone.predict_noise_train(
                items[i].z_t, items[i].t, subject_cond, nullptr, 1.0, items[i].cache);
            eps_true.push_back(items[i].eps);
            eps_pred.push_back(items[i].eps_pred);
        }

        NoisePredictionBatch batch;
        batch.eps_true = stack_batch(eps_true);
        batch.eps_pred = stack_batch(eps_pred);

        std::vector<TrainItem> prior_items;
        std::vector<std::size_t> prior_entry;
        if (weights.lambda_p > 0) {
            std::vector<Tensor> p_true, p_pred;
            for (std::size_t i = 0; i < b; ++i) {
                std::size_t pick = rng.below(reg_latents.size());
                prior_entry.push_back(pick);
                TrainItem it = make_train_item(reg_latents[pick], sched, rng);
                it.eps_pred = backbone.predict_noise_train(it.z_t, it.t, reg_conds[pick],
                                                           nullptr, 1.0, it.cache);
                p_true.push_back(it.eps);
                p_pred.push_back(it.eps_pred);
                prior_items.push_back(std::move(it));
            }
            batch.prior_eps_true = stack_batch(p_true);
            batch.prior_eps_pred = stack_batch(p_pred);
        }

        if (weights.lambda_s > 0) {
            std::vector<Tensor> z0_rows, zt_rows;
            for (auto& it : items) {
                z0_rows.push_back(it.z0.reshaped({it.z0.size()}));
                zt_rows.push_back(denoised_estimate(it, sched).reshaped({it.z0.size()}));
            }
            batch.z0_feats = stack_batch(z0_rows);
            batch.zt_feats = stack_batch(zt_rows);
        }

        DbPropGrads grads = db_prop_loss_with_grads(batch, weights);
        if (!std::isfinite(grads.value.total))
            report_divergence(config.checkpoint_dir, step);
        save_last_good(backbone, config.checkpoint_dir);

        for (std::size_t i = 0; i < b; ++i) {
            Tensor g = batch_slice(grads.d_eps_pred, i, latent_shape);
            if (grads.d_zt_feats) {
                // chain rule through z0_hat = (z_t - sqrt(1-a)*eps_pred)/sqrt(a)
                Tensor g_feat = batch_slice(*grads.d_zt_feats, i,
                                            {items[i].z0.size()});
                double sa = sched.sqrt_alpha_bar(items[i].t);
                double sb = sched.sqrt_one_minus_alpha_bar(items[i].t);
                double chain = -sb / sa;
                for (std::size_t j = 0; j < g.size(); ++j)
                    g[j] += chain * g_feat[j];
            }
            backbone.backprop(items[i].cache, g, true);
        }
        for (std::size_t i = 0; i < prior_items.size(); ++i) {
            Tensor g = batch_slice(*grads.d_prior_eps_pred, i, latent_shape);
            backbone.backprop(prior_items[i].cache, g, true);
        }
        backbone.sgd_step(config.learning_rate);

        nlohmann::json line = grads.value.to_json();
        line["step"] = step;
        run.history.push_back(std::move(line));
    }
    return run;
}

void TokenEmbedding::save(const std::filesystem::path& path,
                          const std::string& backbone_id,
                          const TrainConfig& config) const {
    nlohmann::json j = {
        {"token", token},
        {"n_vectors", n_vectors},
        {"embed_dim", vectors.dim(1)},
        {"values", std::vector<double>(vectors.data(), vectors.data() + vectors.size())},
        {"backbone_id", backbone_id},
        {"seed", config.seed},
        {"steps", config.steps},
    };
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write embedding: " + path.string());
    out << j.dump(2) << "\n";
}

TokenEmbedding TokenEmbedding::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read embedding: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    TokenEmbedding e;
    e.token = j.at("token").get<std::string>();
    e.n_vectors = j.at("n_vectors").get<int>();
    std::size_t dim = j.at("embed_dim").get<std::size_t>();
    e.vectors = Tensor({static_cast<std::size_t>(e.n_vectors), dim},
                       j.at("values").get<std::vector<double>>());
    return e;
}

TokenTrainResult learn_token_embedding(TrainableBackbone& backbone,
                                       const SubjectSet& exemplars, int n_vectors,
                                       const LossWeights& weights,
                                       const TrainConfig& config) {
    weights.validate();
    if (exemplars.images.empty())
        throw Error(ErrorKind::parameter, "exemplar set has no images");
    if (n_vectors != 1 && n_vectors != 2 && n_vectors != 5)
        throw Error(ErrorKind::parameter, "n_vectors must be one of {1, 2, 5}");
    if (config.steps <= 0 || config.batch_size <= 0)
        throw Error(ErrorKind::parameter, "steps and batch_size must be positive");

    const DiffusionSchedule& sched = backbone.schedule();
    Rng rng(config.seed);
    const std::string& token = config.rare_identifier;
    if (!backbone.has_token(token)) backbone.add_token(token, n_vectors, config.seed);
    Tensor rows = backbone.token_rows(token);
    if (rows.dim(0) != static_cast<std::size_t>(n_vectors))
        throw Error(ErrorKind::parameter,
                    "token '" + token + "' already exists with a different n_vectors");

    PromptTemplate tmpl{token, config.class_noun};
    const AttributeSpec& recon = Taxonomy::instance().require("no_attribute");
    std::string prompt = build_edit_prompt(tmpl, recon);
    std::vector<Tensor> latents = encode_images(backbone, exemplars.images);
    auto latent_shape = latents.front().shape();
    std::size_t b = static_cast<std::size_t>(config.batch_size);

    TrainRun run;
    run.config = config;
    run.weights = weights;

    for (int step = 0; step < config.steps; ++step) {
        TextEmbedding emb = backbone.embed_text(prompt);  // depends on current rows

        std::vector<TrainItem> items(b);
        std::vector<Tensor> eps_true, eps_pred;
        for (std::size_t i = 0; i < b; ++i) {
            const Tensor& z0 = latents[rng.below(latents.size())];
            items[i] = make_train_item(z0, sched, rng);
            items[i].eps_pred = backbone.predict_noise_train(
                items[i].z_t, items[i].t, emb.cond, nullptr, 1.0, items[i].cache);
            eps_true.push_back(items[i].eps);
            eps_pred.push_back(items[i].eps_pred);
        }

        NoisePredictionBatch batch;
        batch.eps_true = stack_batch(eps_true);
        batch.eps_pred = stack_batch(eps_pred);
        TiGrads grads = ti_loss_with_grads(batch, weights);
        if (!std::isfinite(grads.value.total))
            report_divergence(config.checkpoint_dir, step);
        save_last_good(backbone, config.checkpoint_dir);

        // The diffusion weights stay frozen; gradients flow only through the
        // condition into the new token rows (each row contributed
        // 1/total_units of the mean embedding).
        Tensor rows_now = backbone.token_rows(token);
        Tensor row_grads(rows_now.shape());
        for (std::size_t i = 0; i < b; ++i) {
            Tensor g = batch_slice(grads.d_eps_pred, i, latent_shape);
            Tensor d_cond = backbone.backprop(items[i].cache, g, false);
            int units = emb.learned_rows.count(token) ? emb.total_units : 0;
            if (units > 0) {
                for (std::size_t r = 0; r < rows_now.rows(); ++r)
                    for (std::size_t e = 0; e < rows_now.cols(); ++e)
                        row_grads.at2(r, e) += d_cond[e] / static_cast<double>(units);
            }
        }
        for (std::size_t i = 0; i < rows_now.size(); ++i)
            rows_now[i] -= config.learning_rate * row_grads[i];
        backbone.set_token_rows(token, rows_now);

        nlohmann::json line = grads.value.to_json();
        line["step"] = step;
        run.history.push_back(std::move(line));
    }

    TokenTrainResult out;
    out.embedding.token = token;
    out.embedding.vectors = backbone.token_rows(token);
    out.embedding.n_vectors = n_vectors;
    out.run = std::move(run);
    return out;
}

namespace {

// Evenly spaced descending timestep pairs (t, t_prev) covering [t_start, 0].
std::vector<std::pair<int, int>> ddim_timesteps(int t_start, int steps) {
    std::vector<int> ts;
    for (int k = 0; k < steps; ++k) {
        double frac = steps == 1 ? 0.0 : static_cast<double>(k) / (steps - 1);
        ts.push_back(static_cast<int>(std::lround((1.0 - frac) * t_start)));
    }
    std::vector<std::pair<int, int>> pairs;
    for (int k = 0; k < steps; ++k)
        pairs.emplace_back(ts[k], k + 1 < steps ? ts[k + 1] : -1);
    return pairs;
}

Tensor predict_with_guidance(const Backbone& backbone, const Tensor& z, int t,
                             const Tensor& cond, const Tensor& uncond,
                             double guidance, const Tensor* control,
                             double control_scale) {
    Tensor eps_c = backbone.predict_noise(z, t, cond, control, control_scale);
    if (guidance == 1.0) return eps_c;
    Tensor eps_u = backbone.predict_noise(z, t, uncond, control, control_scale);
    Tensor out(eps_c.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = eps_u[i] + guidance * (eps_c[i] - eps_u[i]);
    return out;
}

Tensor ddim_step(const Tensor& z, const Tensor& eps, int t, int t_prev,
                 const DiffusionSchedule& sched, Tensor* z0_hat_out = nullptr) {
    double sa = sched.sqrt_alpha_bar(t);
    double sb = sched.sqrt_one_minus_alpha_bar(t);
    double sa_prev = sched.sqrt_alpha_bar(t_prev);
    double sb_prev = sched.sqrt_one_minus_alpha_bar(t_prev);
    Tensor out(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        double z0_hat = (z[i] - sb * eps[i]) / sa;
        if (z0_hat_out) (*z0_hat_out)[i] = z0_hat;
        out[i] = sa_prev * z0_hat + sb_prev * eps[i];
    }
    return out;
}

// Average-pool a pixel-resolution conditioning grid to latent resolution.
Tensor control_at_latent_res(const ConditioningMap& map, std::size_t factor) {
    std::size_t h = map.height / factor, w = map.width / factor;
    Tensor out({h, w});
    for (std::size_t by = 0; by < h; ++by)
        for (std::size_t bx = 0; bx < w; ++bx) {
            double acc = 0.0;
            for (std::size_t y = 0; y < factor; ++y)
                for (std::size_t x = 0; x < factor; ++x)
                    acc += map.at(by * factor + y, bx * factor + x);
            out[by * w + bx] = acc / static_cast<double>(factor * factor);
        }
    return out;
}

}  // namespace

Image generate_global(const Backbone& backbone, const std::string& prompt,
                      const GenerateConfig& config) {
    if (config.steps <= 0)
        throw Error(ErrorKind::parameter, "steps must be positive");
    const DiffusionSchedule& sched = backbone.schedule();
    Tensor cond = backbone.embed_text(prompt).cond;
    Tensor uncond = backbone.embed_text("").cond;

    std::size_t f = backbone.latent_downsample_factor();
    if (config.height % f != 0 || config.width % f != 0)
        throw Error(ErrorKind::parameter,
                    "output dims must be divisible by the latent downsample factor");
    Rng rng(config.seed);
    Tensor z = Tensor({backbone.latent_channels(), config.height / f, config.width / f});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();

    for (auto [t, t_prev] : ddim_timesteps(sched.timesteps - 1, config.steps)) {
        Tensor eps = predict_with_guidance(backbone, z, t, cond, uncond,
                                           config.guidance_scale, nullptr, 1.0);
        z = ddim_step(z, eps, t, t_prev, sched);
    }
    return backbone.decode(z);
}

EditResult edit_local(const Backbone& backbone, const Image& image,
                      const BinaryMask& mask, const std::string& prompt,
                      const ConditioningMap* conditioning,
                      const EditLocalConfig& config) {
    if (config.steps <= 0)
        throw Error(ErrorKind::parameter, "steps must be positive");
    if (mask.height != image.height || mask.width != image.width)
        throw Error(ErrorKind::dimension_mismatch,
                    "mask dimensions must match the image");
    if (conditioning &&
        (conditioning->height != image.height || conditioning->width != image.width))
        throw Error(ErrorKind::dimension_mismatch,
                    "conditioning dimensions must match the image");
    if (config.strength <= 0.0 || config.strength > 1.0)
        throw Error(ErrorKind::parameter, "strength must be in (0, 1]");

    EditResult result;
    if (mask.all_zero())
        result.warnings.push_back(
            "degenerate mask: nothing to edit, output is a reconstruction");
    if (config.attribute && !config.mask_regions.empty() &&
        !config.attribute->regions.empty()) {
        bool overlap = false;
        for (const auto& r : config.mask_regions)
            for (const auto& ar : config.attribute->regions)
                if (r == ar) overlap = true;
        if (!overlap)
            result.warnings.push_back(
                "prompt/mask mismatch: prompt targets regions {" +
                [&] {
                    std::string s;
                    for (const auto& r : config.attribute->regions)
                        s += (s.empty() ? "" : ", ") + r;
                    return s;
                }() +
                "} but the mask covers none of them; expect a reconstruction");
    }

    const DiffusionSchedule& sched = backbone.schedule();
    std::size_t f = backbone.latent_downsample_factor();
    Tensor z0 = backbone.encode(image);

    BinaryMask pixel_mask = config.dilation_radius > 0
                                ? dilate_mask(mask, config.dilation_radius)
                                : mask;
    BinaryMask latent_mask = downsample_mask(pixel_mask, f);

    Tensor cond = backbone.embed_text(prompt).cond;
    Tensor uncond = backbone.embed_text("").cond;
    std::optional<Tensor> control;
    if (conditioning) control = control_at_latent_res(*conditioning, f);

    Rng rng(config.seed);
    int t_start = static_cast<int>(config.strength * (sched.timesteps - 1));
    Tensor z(z0.shape());
    {
        double sa = sched.sqrt_alpha_bar(t_start);
        double sb = sched.sqrt_one_minus_alpha_bar(t_start);
        for (std::size_t i = 0; i < z.size(); ++i)
            z[i] = sa * z0[i] + sb * rng.normal();
    }

    for (auto [t, t_prev] : ddim_timesteps(t_start, config.steps)) {
        Tensor eps = predict_with_guidance(backbone, z, t, cond, uncond,
                                           config.guidance_scale,
                                           control ? &*control : nullptr,
                                           config.controlnet_scale);
        Tensor z_unknown = ddim_step(z, eps, t, t_prev, sched);

        // known branch: original latents re-noised to the step's level; at
        // the clean endpoint (t_prev = -1) this is exactly z0.
        Tensor z_known(z0.shape());
        double sa_prev = sched.sqrt_alpha_bar(t_prev);
        double sb_prev = sched.sqrt_one_minus_alpha_bar(t_prev);
        for (std::size_t i = 0; i < z_known.size(); ++i)
            z_known[i] = sa_prev * z0[i] + sb_prev * rng.normal();

        z = blend_latents(latent_mask, z_known, z_unknown);
        ++result.blend_invocations;
    }

    Image decoded = backbone.decode(z);
    if (config.pixel_composite) {
        for (std::size_t c = 0; c < decoded.channels; ++c)
            for (std::size_t y = 0; y < decoded.height; ++y)
                for (std::size_t x = 0; x < decoded.width; ++x)
                    if (!mask.at(y, x)) decoded.at(c, y, x) = image.at(c, y, x);
    }
    result.image = std::move(decoded);
    return result;
}

Image reconstruct(const Backbone& backbone, const Image& image, ReconstructMode mode,
                  const PromptTemplate& tmpl, const GenerateConfig& generate_config) {
    if (mode == ReconstructMode::local) {
        BinaryMask empty(image.height, image.width, 0);
        EditLocalConfig cfg;
        cfg.pixel_composite = true;
        return edit_local(backbone, image, empty, "", nullptr, cfg).image;
    }
    const AttributeSpec& recon = Taxonomy::instance().require("no_attribute");
    return generate_global(backbone, build_edit_prompt(tmpl, recon), generate_config);
}

}  // namespace faceedit
