#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "faceedit/tensor.hpp"

namespace faceedit {

// The paper writes the noise-matching terms as an unspecified norm; the
// default is mean-of-squares, with mean-absolute kept as a sensitivity switch.
enum class NormKind { mse, mean_abs };

const char* norm_kind_name(NormKind k);
NormKind norm_kind_from_name(const std::string& name);

struct LossWeights {
    double lambda_p = 1.0;   // prior-preservation weight
    double lambda_s = 0.1;   // contrastive weight
    double lambda_sl = 0.1;  // smooth-L1 weight
    double lambda_c = 0.1;   // cosine-embedding weight
    double temperature = 0.5;
    double smooth_l1_beta = 1.0;
    NormKind norm = NormKind::mse;

    void validate() const;
    nlohmann::json to_json() const;
    static LossWeights from_json(const nlohmann::json& j);
};

// One training step's worth of model inputs/outputs, shapes [B, C, H, W]
// for noise arrays and [B, D] for the contrastive feature rows.
struct NoisePredictionBatch {
    Tensor eps_true;
    Tensor eps_pred;
    std::optional<Tensor> prior_eps_true;
    std::optional<Tensor> prior_eps_pred;
    std::optional<Tensor> z0_feats;  // clean-latent representations
    std::optional<Tensor> zt_feats;  // denoised-output representations
};

// ---- elementary terms ------------------------------------------------------

double mse_noise_loss(const Tensor& eps_true, const Tensor& eps_pred);
double noise_matching_loss(const Tensor& eps_true, const Tensor& eps_pred, NormKind norm);
// dL/d eps_pred
Tensor noise_matching_grad(const Tensor& eps_true, const Tensor& eps_pred, NormKind norm);

double smooth_l1(const Tensor& a, const Tensor& b, double beta);
// dL/db for L = smooth_l1(a, b, beta)
Tensor smooth_l1_grad(const Tensor& a, const Tensor& b, double beta);

double cosine_embedding_loss(const Tensor& a, const Tensor& b);
struct CosineGrads {
    double value = 0.0;
    Tensor d_a;
    Tensor d_b;
};
CosineGrads cosine_embedding_grads(const Tensor& a, const Tensor& b);

// NT-Xent over the 2B-view batch: (z0_i, zt_i) are the positive pair, every
// other view in the batch is a negative; symmetric average over both
// anchor directions.
double ntxent_contrastive(const Tensor& z0_feats, const Tensor& zt_feats,
                          double temperature);
struct NtxentGrads {
    double value = 0.0;
    Tensor d_z0;
    Tensor d_zt;
};
NtxentGrads ntxent_grads(const Tensor& z0_feats, const Tensor& zt_feats,
                         double temperature);

// ---- composite objectives --------------------------------------------------

// Per-term values are unweighted; terms with zero weight are not computed.
struct DbPropLoss {
    double total = 0.0;
    double mse = 0.0;
    double prior = 0.0;
    double contrastive = 0.0;
    nlohmann::json to_json() const;
};

struct TiLoss {
    double total = 0.0;
    double mse = 0.0;
    double smooth_l1 = 0.0;
    double cosine = 0.0;
    nlohmann::json to_json() const;
};

DbPropLoss db_prop_loss(const NoisePredictionBatch& batch, const LossWeights& w);
TiLoss ti_loss(const NoisePredictionBatch& batch, const LossWeights& w);
double cn_ip_loss(const Tensor& eps_true, const Tensor& eps_pred,
                  NormKind norm = NormKind::mse);

struct DbPropGrads {
    DbPropLoss value;
    Tensor d_eps_pred;
    std::optional<Tensor> d_prior_eps_pred;
    std::optional<Tensor> d_z0_feats;
    std::optional<Tensor> d_zt_feats;
};
DbPropGrads db_prop_loss_with_grads(const NoisePredictionBatch& batch,
                                    const LossWeights& w);

struct TiGrads {
    TiLoss value;
    Tensor d_eps_pred;
};
TiGrads ti_loss_with_grads(const NoisePredictionBatch& batch, const LossWeights& w);

Tensor cn_ip_loss_grad(const Tensor& eps_true, const Tensor& eps_pred,
                       NormKind norm = NormKind::mse);

}  // namespace faceedit
