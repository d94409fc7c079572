#include "faceedit/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "faceedit/rng.hpp"
#include "faceedit/taxonomy.hpp"

namespace faceedit {

DiffusionSchedule DiffusionSchedule::linear(int timesteps, double beta_start,
                                            double beta_end) {
    DiffusionSchedule s;
    s.timesteps = timesteps;
    s.alpha_bar.resize(timesteps);
    double prod = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        double beta = beta_start + (beta_end - beta_start) * t / (timesteps - 1);
        prod *= 1.0 - beta;
        s.alpha_bar[t] = prod;
    }
    return s;
}

double DiffusionSchedule::sqrt_alpha_bar(int t) const {
    if (t < 0) return 1.0;  // the clean-image endpoint
    return std::sqrt(alpha_bar.at(t));
}

double DiffusionSchedule::sqrt_one_minus_alpha_bar(int t) const {
    if (t < 0) return 0.0;
    return std::sqrt(1.0 - alpha_bar.at(t));
}

namespace {

// First three columns of the 4x4 normalized Hadamard matrix: orthonormal, so
// decode(encode(x)) is exact on blockwise-constant content.
constexpr double kMix[4][3] = {
    {0.5, 0.5, 0.5},
    {0.5, -0.5, 0.5},
    {0.5, 0.5, -0.5},
    {0.5, -0.5, -0.5},
};

std::vector<std::string> prompt_vocabulary() {
    std::vector<std::string> words = {"photo", "of", "a", "person"};
    auto add_words = [&words](const std::string& text) {
        std::istringstream in(text);
        std::string w;
        while (in >> w) words.push_back(w);
    };
    add_words("with wearing");
    for (const auto& attr : Taxonomy::instance().list_attributes())
        add_words(attr.prompt_fragment);
    return words;
}

std::vector<std::string> tokenize(const std::string& prompt) {
    std::istringstream in(prompt);
    std::vector<std::string> tokens;
    std::string tok;
    while (in >> tok) {
        for (auto& ch : tok)
            ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        tokens.push_back(tok);
    }
    return tokens;
}

std::uint64_t checksum_doubles(std::uint64_t h, const std::vector<double>& v) {
    return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

}  // namespace

ToyBackbone::ToyBackbone(std::uint64_t init_seed)
    : schedule_(DiffusionSchedule::linear()) {
    Rng rng(init_seed);
    auto init = [&rng](std::vector<double>& v, std::size_t n, double scale) {
        v.assign(n, 0.0);
        for (auto& x : v) x = scale * rng.normal();
    };
    init(w1_, kHidden * kInputChannels, 0.3 / std::sqrt(double(kInputChannels)));
    init(b1_, kHidden, 0.0);
    init(w2_, kLatentChannels * kHidden, 0.3 / std::sqrt(double(kHidden)));
    init(b2_, kLatentChannels, 0.0);
    init(cond_proj_, 4 * kEmbedDim, 0.3 / std::sqrt(double(kEmbedDim)));
    zero_grads();
    base_vocab_ = prompt_vocabulary();
}

Tensor ToyBackbone::encode(const Image& image) const {
    if (image.channels != 3 && image.channels != 1)
        throw Error(ErrorKind::parameter, "toy backbone expects 1- or 3-channel images");
    std::size_t f = latent_downsample_factor();
    if (image.height % f != 0 || image.width % f != 0)
        throw Error(ErrorKind::dimension_mismatch,
                    "toy backbone needs image dims divisible by 8");
    std::size_t h = image.height / f, w = image.width / f;
    Tensor z({kLatentChannels, h, w});
    for (std::size_t by = 0; by < h; ++by)
        for (std::size_t bx = 0; bx < w; ++bx) {
            double mean[3] = {0, 0, 0};
            for (std::size_t c = 0; c < 3; ++c) {
                std::size_t src = image.channels == 3 ? c : 0;
                double acc = 0.0;
                for (std::size_t y = 0; y < f; ++y)
                    for (std::size_t x = 0; x < f; ++x)
                        acc += image.at(src, by * f + y, bx * f + x);
                mean[c] = acc / static_cast<double>(f * f);
            }
            for (std::size_t lc = 0; lc < kLatentChannels; ++lc) {
                double v = 0.0;
                for (std::size_t c = 0; c < 3; ++c) v += kMix[lc][c] * mean[c];
                z[(lc * h + by) * w + bx] = v;
            }
        }
    return z;
}

Image ToyBackbone::decode(const Tensor& latent) const {
    if (latent.rank() != 3 || latent.dim(0) != kLatentChannels)
        throw Error(ErrorKind::dimension_mismatch, "toy backbone expects [4, h, w] latents");
    std::size_t f = latent_downsample_factor();
    std::size_t h = latent.dim(1), w = latent.dim(2);
    Image img(3, h * f, w * f);
    for (std::size_t by = 0; by < h; ++by)
        for (std::size_t bx = 0; bx < w; ++bx) {
            double rgb[3];
            for (std::size_t c = 0; c < 3; ++c) {
                double v = 0.0;
                for (std::size_t lc = 0; lc < kLatentChannels; ++lc)
                    v += kMix[lc][c] * latent[(lc * h + by) * w + bx];
                rgb[c] = v;
            }
            for (std::size_t y = 0; y < f; ++y)
                for (std::size_t x = 0; x < f; ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        img.at(c, by * f + y, bx * f + x) =
                            std::clamp(rgb[c], 0.0, 1.0);
        }
    return img;
}

Tensor ToyBackbone::hash_embedding(const std::string& token) const {
    Rng rng(fnv1a64(token) ^ 0x9e3779b97f4a7c15ull);
    Tensor v({kEmbedDim});
    double norm = 0.0;
    for (std::size_t i = 0; i < kEmbedDim; ++i) {
        v[i] = rng.normal();
        norm += v[i] * v[i];
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < kEmbedDim; ++i) v[i] /= norm;
    return v;
}

TextEmbedding ToyBackbone::embed_text(const std::string& prompt) const {
    TextEmbedding out;
    out.cond = Tensor({kEmbedDim});
    auto tokens = tokenize(prompt);
    for (const auto& tok : tokens) {
        auto it = token_table_.find(tok);
        if (it != token_table_.end()) {
            const Tensor& rows = it->second.rows;
            for (std::size_t r = 0; r < rows.rows(); ++r)
                for (std::size_t j = 0; j < kEmbedDim; ++j)
                    out.cond[j] += rows.at2(r, j);
            out.total_units += static_cast<int>(rows.rows());
            if (it->second.trainable)
                out.learned_rows[tok] += static_cast<int>(rows.rows());
            continue;
        }
        bool known = false;
        for (const auto& w : base_vocab_)
            if (w == tok) {
                known = true;
                break;
            }
        if (!known)
            throw Error(ErrorKind::tokenization,
                        "unknown token '" + tok + "' (register identifiers before use)");
        Tensor v = hash_embedding(tok);
        for (std::size_t j = 0; j < kEmbedDim; ++j) out.cond[j] += v[j];
        ++out.total_units;
    }
    if (out.total_units > 0)
        for (std::size_t j = 0; j < kEmbedDim; ++j)
            out.cond[j] /= static_cast<double>(out.total_units);
    return out;
}

Tensor ToyBackbone::forward(const Tensor& z_t, int t, const Tensor& cond,
                            const Tensor* control, double control_scale,
                            ForwardCache& cache) const {
    if (z_t.rank() != 3 || z_t.dim(0) != kLatentChannels)
        throw Error(ErrorKind::dimension_mismatch, "predict_noise expects [4, h, w]");
    if (cond.size() != kEmbedDim)
        throw Error(ErrorKind::dimension_mismatch, "condition must be [embed_dim]");
    std::size_t h = z_t.dim(1), w = z_t.dim(2);
    if (control && (control->rank() != 2 || control->dim(0) != h || control->dim(1) != w))
        throw Error(ErrorKind::dimension_mismatch,
                    "control grid must match latent spatial dims");

    cache.t = t;
    cache.cond = cond;
    cache.inputs = Tensor({kInputChannels, h, w});
    // input layout: 0..3 latent, 4..5 time features, 6..9 projected condition,
    // 10 control
    for (std::size_t c = 0; c < kLatentChannels; ++c)
        for (std::size_t i = 0; i < h * w; ++i)
            cache.inputs[c * h * w + i] = z_t[c * h * w + i];
    double tf0 = std::sin(2.0 * M_PI * t / schedule_.timesteps);
    double tf1 = std::cos(2.0 * M_PI * t / schedule_.timesteps);
    for (std::size_t i = 0; i < h * w; ++i) {
        cache.inputs[4 * h * w + i] = tf0;
        cache.inputs[5 * h * w + i] = tf1;
    }
    double cf[4];
    for (std::size_t j = 0; j < 4; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < kEmbedDim; ++e)
            acc += cond_proj_[j * kEmbedDim + e] * cond[e];
        cf[j] = acc;
    }
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < h * w; ++i)
            cache.inputs[(6 + j) * h * w + i] = cf[j];
    for (std::size_t i = 0; i < h * w; ++i)
        cache.inputs[10 * h * w + i] = control ? control_scale * (*control)[i] : 0.0;

    cache.hidden = Tensor({kHidden, h, w});
    Tensor out({kLatentChannels, h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
        double hid[kHidden];
        for (std::size_t k = 0; k < kHidden; ++k) {
            double acc = b1_[k];
            for (std::size_t c = 0; c < kInputChannels; ++c)
                acc += w1_[k * kInputChannels + c] * cache.inputs[c * h * w + i];
            hid[k] = std::tanh(acc);
            cache.hidden[k * h * w + i] = hid[k];
        }
        for (std::size_t o = 0; o < kLatentChannels; ++o) {
            double acc = b2_[o];
            for (std::size_t k = 0; k < kHidden; ++k) acc += w2_[o * kHidden + k] * hid[k];
            out[o * h * w + i] = acc;
        }
    }
    return out;
}

Tensor ToyBackbone::predict_noise(const Tensor& z_t, int t, const Tensor& cond,
                                  const Tensor* control, double control_scale) const {
    ForwardCache cache;
    return forward(z_t, t, cond, control, control_scale, cache);
}

Tensor ToyBackbone::predict_noise_train(const Tensor& z_t, int t, const Tensor& cond,
                                        const Tensor* control, double control_scale,
                                        ForwardCache& cache) {
    return forward(z_t, t, cond, control, control_scale, cache);
}

Tensor ToyBackbone::backprop(const ForwardCache& cache, const Tensor& grad_eps_pred,
                             bool accumulate_params) {
    std::size_t h = cache.inputs.dim(1), w = cache.inputs.dim(2);
    if (grad_eps_pred.rank() != 3 || grad_eps_pred.dim(1) != h ||
        grad_eps_pred.dim(2) != w)
        throw Error(ErrorKind::dimension_mismatch, "gradient shape mismatch");

    double d_cond_feat[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < h * w; ++i) {
        double dhid[kHidden];
        for (std::size_t k = 0; k < kHidden; ++k) {
            double acc = 0.0;
            for (std::size_t o = 0; o < kLatentChannels; ++o)
                acc += grad_eps_pred[o * h * w + i] * w2_[o * kHidden + k];
            double hk = cache.hidden[k * h * w + i];
            dhid[k] = acc * (1.0 - hk * hk);
        }
        if (accumulate_params) {
            for (std::size_t o = 0; o < kLatentChannels; ++o) {
                double go = grad_eps_pred[o * h * w + i];
                g_b2_[o] += go;
                for (std::size_t k = 0; k < kHidden; ++k)
                    g_w2_[o * kHidden + k] += go * cache.hidden[k * h * w + i];
            }
            for (std::size_t k = 0; k < kHidden; ++k) {
                g_b1_[k] += dhid[k];
                for (std::size_t c = 0; c < kInputChannels; ++c)
                    g_w1_[k * kInputChannels + c] +=
                        dhid[k] * cache.inputs[c * h * w + i];
            }
        }
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kHidden; ++k)
                acc += dhid[k] * w1_[k * kInputChannels + (6 + j)];
            d_cond_feat[j] += acc;
        }
    }

    // cond features were cond_proj * cond broadcast to every cell.
    Tensor d_cond({kEmbedDim});
    for (std::size_t e = 0; e < kEmbedDim; ++e) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 4; ++j)
            acc += d_cond_feat[j] * cond_proj_[j * kEmbedDim + e];
        d_cond[e] = acc;
    }
    if (accumulate_params) {
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t e = 0; e < kEmbedDim; ++e)
                g_cond_proj_[j * kEmbedDim + e] += d_cond_feat[j] * cache.cond[e];
    }
    return d_cond;
}

void ToyBackbone::zero_grads() {
    g_w1_.assign(kHidden * kInputChannels, 0.0);
    g_b1_.assign(kHidden, 0.0);
    g_w2_.assign(kLatentChannels * kHidden, 0.0);
    g_b2_.assign(kLatentChannels, 0.0);
    g_cond_proj_.assign(4 * kEmbedDim, 0.0);
}

void ToyBackbone::sgd_step(double learning_rate) {
    auto apply = [learning_rate](std::vector<double>& p, const std::vector<double>& g) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= learning_rate * g[i];
    };
    apply(w1_, g_w1_);
    apply(b1_, g_b1_);
    apply(w2_, g_w2_);
    apply(b2_, g_b2_);
    apply(cond_proj_, g_cond_proj_);
    zero_grads();
}

void ToyBackbone::register_identifier(const std::string& token) {
    if (token.empty() || token.find_first_of(" \t\n") != std::string::npos)
        throw Error(ErrorKind::tokenization, "identifier must be a single token");
    std::string key = tokenize(token).front();
    if (token_table_.count(key)) return;
    TokenEntry entry;
    entry.rows = hash_embedding(key).reshaped({1, kEmbedDim});
    entry.trainable = false;
    token_table_[key] = std::move(entry);
}

void ToyBackbone::add_token(const std::string& token, int n_vectors, std::uint64_t seed) {
    if (n_vectors < 1)
        throw Error(ErrorKind::parameter, "n_vectors must be >= 1");
    if (token.empty() || token.find_first_of(" \t\n") != std::string::npos)
        throw Error(ErrorKind::tokenization, "token must be a single token");
    std::string key = tokenize(token).front();
    Rng rng(seed ^ fnv1a64(key));
    TokenEntry entry;
    entry.rows = Tensor({static_cast<std::size_t>(n_vectors), kEmbedDim});
    for (std::size_t i = 0; i < entry.rows.size(); ++i) entry.rows[i] = 0.1 * rng.normal();
    entry.trainable = true;
    token_table_[key] = std::move(entry);
}

bool ToyBackbone::has_token(const std::string& token) const {
    auto toks = tokenize(token);
    return !toks.empty() && token_table_.count(toks.front()) > 0;
}

Tensor ToyBackbone::token_rows(const std::string& token) const {
    auto it = token_table_.find(tokenize(token).front());
    if (it == token_table_.end())
        throw Error(ErrorKind::tokenization, "no such token '" + token + "'");
    return it->second.rows;
}

void ToyBackbone::set_token_rows(const std::string& token, const Tensor& rows) {
    auto it = token_table_.find(tokenize(token).front());
    if (it == token_table_.end())
        throw Error(ErrorKind::tokenization, "no such token '" + token + "'");
    require_same_shape(it->second.rows, rows, "set_token_rows");
    it->second.rows = rows;
}

std::vector<std::string> ToyBackbone::token_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : token_table_) names.push_back(name);
    return names;
}

std::uint64_t ToyBackbone::network_checksum() const {
    std::uint64_t h = fnv1a64("toy-network");
    h = checksum_doubles(h, w1_);
    h = checksum_doubles(h, b1_);
    h = checksum_doubles(h, w2_);
    h = checksum_doubles(h, b2_);
    h = checksum_doubles(h, cond_proj_);
    return h;
}

std::uint64_t ToyBackbone::text_encoder_checksum() const {
    std::uint64_t h = fnv1a64("toy-text-encoder");
    for (const auto& [name, entry] : token_table_) {
        h = fnv1a64(name, h);
        h = fnv1a64(entry.rows.data(), entry.rows.size() * sizeof(double), h);
        h = fnv1a64(entry.trainable ? "t" : "f", h);
    }
    return h;
}

void ToyBackbone::save_checkpoint(const std::filesystem::path& path) const {
    nlohmann::json tokens = nlohmann::json::object();
    for (const auto& [name, entry] : token_table_) {
        tokens[name] = {
            {"trainable", entry.trainable},
            {"n_vectors", entry.rows.dim(0)},
            {"values", std::vector<double>(entry.rows.data(),
                                           entry.rows.data() + entry.rows.size())},
        };
    }
    nlohmann::json j = {
        {"backbone_id", backbone_id()},
        {"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_},
        {"cond_proj", cond_proj_},
        {"tokens", tokens},
    };
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write checkpoint: " + path.string());
    out << j.dump(2) << "\n";
}

void ToyBackbone::load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read checkpoint: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("backbone_id", "") != backbone_id())
        throw Error(ErrorKind::schema, "checkpoint is not a toy-backbone checkpoint");
    w1_ = j.at("w1").get<std::vector<double>>();
    b1_ = j.at("b1").get<std::vector<double>>();
    w2_ = j.at("w2").get<std::vector<double>>();
    b2_ = j.at("b2").get<std::vector<double>>();
    cond_proj_ = j.at("cond_proj").get<std::vector<double>>();
    token_table_.clear();
    for (const auto& [name, tok] : j.at("tokens").items()) {
        TokenEntry entry;
        std::size_t n = tok.at("n_vectors").get<std::size_t>();
        auto values = tok.at("values").get<std::vector<double>>();
        entry.rows = Tensor({n, kEmbedDim}, std::move(values));
        entry.trainable = tok.at("trainable").get<bool>();
        token_table_[name] = std::move(entry);
    }
    zero_grads();
}

}  // namespace faceedit
