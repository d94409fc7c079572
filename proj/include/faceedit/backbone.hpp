#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "faceedit/image.hpp"
#include "faceedit/tensor.hpp"

namespace faceedit {

// DDPM-style linear-beta schedule shared by training and sampling.
struct DiffusionSchedule {
    int timesteps = 1000;
    std::vector<double> alpha_bar;  // cumulative products, index 0..timesteps-1

    static DiffusionSchedule linear(int timesteps = 1000, double beta_start = 1e-4,
                                    double beta_end = 0.02);
    double sqrt_alpha_bar(int t) const;
    double sqrt_one_minus_alpha_bar(int t) const;
};

// Text-embedding result. total_units counts the vectors that were averaged;
// learned_rows maps token-table row names to how many units they contributed,
// which is what routes gradients back into trainable token rows.
struct TextEmbedding {
    Tensor cond;  // [embed_dim]
    std::map<std::string, int> learned_rows;
    int total_units = 0;
};

// Opaque per-forward activation cache for the training path.
struct ForwardCache;

// The pluggable denoising backbone. Every engine talks to this surface only;
// real SD-family models plug in behind it, the toy backbone implements it
// deterministically for desk-scale testing.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual std::string backbone_id() const = 0;
    virtual std::size_t latent_channels() const = 0;
    virtual std::size_t latent_downsample_factor() const = 0;
    virtual std::size_t text_embed_dim() const = 0;
    virtual const DiffusionSchedule& schedule() const = 0;

    virtual Tensor encode(const Image& image) const = 0;   // [C, H/f, W/f]
    virtual Image decode(const Tensor& latent) const = 0;

    // Throws tokenization error for tokens outside the vocabulary, the
    // registered identifiers and the learned token table.
    virtual TextEmbedding embed_text(const std::string& prompt) const = 0;

    // control, when present, is a [h, w] conditioning grid at latent
    // resolution, scaled by control_scale before entering the network.
    virtual Tensor predict_noise(const Tensor& z_t, int t, const Tensor& cond,
                                 const Tensor* control = nullptr,
                                 double control_scale = 1.0) const = 0;

    // --- token table (textual-inversion surface) ---
    virtual void register_identifier(const std::string& token) = 0;  // frozen row
    virtual void add_token(const std::string& token, int n_vectors,
                           std::uint64_t seed) = 0;  // trainable rows
    virtual bool has_token(const std::string& token) const = 0;
    virtual Tensor token_rows(const std::string& token) const = 0;   // [n_vectors, D]
    virtual void set_token_rows(const std::string& token, const Tensor& rows) = 0;
    virtual std::vector<std::string> token_names() const = 0;

    // --- contracts / reproducibility ---
    virtual std::uint64_t network_checksum() const = 0;
    virtual std::uint64_t text_encoder_checksum() const = 0;
};

// Training-capable extension: forward with an activation cache, manual
// backprop into accumulated parameter gradients and the text condition.
class TrainableBackbone : public Backbone {
public:
    virtual Tensor predict_noise_train(const Tensor& z_t, int t, const Tensor& cond,
                                       const Tensor* control, double control_scale,
                                       ForwardCache& cache) = 0;
    // Returns dLoss/dcond for this forward. When accumulate_params is false
    // the network weights receive no gradient (frozen-model training).
    virtual Tensor backprop(const ForwardCache& cache, const Tensor& grad_eps_pred,
                            bool accumulate_params) = 0;
    virtual void zero_grads() = 0;
    virtual void sgd_step(double learning_rate) = 0;

    virtual void save_checkpoint(const std::filesystem::path& path) const = 0;
    virtual void load_checkpoint(const std::filesystem::path& path) = 0;
};

struct ForwardCache {
    Tensor inputs;   // [in_ch, h, w]
    Tensor hidden;   // [hidden, h, w] post-activation
    Tensor cond;     // [embed_dim], needed for the projection gradient
    int t = 0;
};

// Deterministic toy backbone: fixed orthonormal channel-mixing encoder over
// 8x8 pixel blocks, 4-channel latents, and a per-pixel two-layer tanh MLP
// denoiser conditioned on time features, the text condition and an optional
// control grid. Small enough to train in milliseconds, deterministic enough
// to assert bit-identical histories.
class ToyBackbone final : public TrainableBackbone {
public:
    explicit ToyBackbone(std::uint64_t init_seed = 17);

    std::string backbone_id() const override { return "toy"; }
    std::size_t latent_channels() const override { return 4; }
    std::size_t latent_downsample_factor() const override { return 8; }
    std::size_t text_embed_dim() const override { return kEmbedDim; }

    Tensor encode(const Image& image) const override;
    Image decode(const Tensor& latent) const override;
    TextEmbedding embed_text(const std::string& prompt) const override;
    Tensor predict_noise(const Tensor& z_t, int t, const Tensor& cond,
                         const Tensor* control, double control_scale) const override;

    void register_identifier(const std::string& token) override;
    void add_token(const std::string& token, int n_vectors, std::uint64_t seed) override;
    bool has_token(const std::string& token) const override;
    Tensor token_rows(const std::string& token) const override;
    void set_token_rows(const std::string& token, const Tensor& rows) override;
    std::vector<std::string> token_names() const override;

    std::uint64_t network_checksum() const override;
    std::uint64_t text_encoder_checksum() const override;

    Tensor predict_noise_train(const Tensor& z_t, int t, const Tensor& cond,
                               const Tensor* control, double control_scale,
                               ForwardCache& cache) override;
    Tensor backprop(const ForwardCache& cache, const Tensor& grad_eps_pred,
                    bool accumulate_params) override;
    void zero_grads() override;
    void sgd_step(double learning_rate) override;

    void save_checkpoint(const std::filesystem::path& path) const override;
    void load_checkpoint(const std::filesystem::path& path) override;

    const DiffusionSchedule& schedule() const override { return schedule_; }

    static constexpr std::size_t kEmbedDim = 8;
    static constexpr std::size_t kHidden = 16;
    static constexpr std::size_t kLatentChannels = 4;
    // latent(4) + time(2) + projected cond(4) + control(1)
    static constexpr std::size_t kInputChannels = 11;

private:
    struct TokenEntry {
        Tensor rows;  // [n_vectors, kEmbedDim]
        bool trainable = false;
    };

    Tensor hash_embedding(const std::string& token) const;
    Tensor forward(const Tensor& z_t, int t, const Tensor& cond,
                   const Tensor* control, double control_scale,
                   ForwardCache& cache) const;

    // Parameters (row-major): w1 [kHidden x kInputChannels], b1, w2
    // [kLatentChannels x kHidden], b2, cond_proj [4 x kEmbedDim].
    std::vector<double> w1_, b1_, w2_, b2_, cond_proj_;
    std::vector<double> g_w1_, g_b1_, g_w2_, g_b2_, g_cond_proj_;

    std::map<std::string, TokenEntry> token_table_;
    std::vector<std::string> base_vocab_;
    DiffusionSchedule schedule_;
};

}  // namespace faceedit
