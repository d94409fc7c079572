#include "faceedit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace faceedit {

namespace {

constexpr double kNormFloor = 1e-12;

double row_norm(const Tensor& m, std::size_t row) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m.at2(row, j) * m.at2(row, j);
    return std::sqrt(s);
}

void require_feature_rows(const Tensor& m, const char* what) {
    m.require_rank(2);
    for (std::size_t i = 0; i < m.rows(); ++i)
        if (row_norm(m, i) < kNormFloor)
            throw Error(ErrorKind::degenerate_feature,
                        std::string(what) + ": zero-norm feature row " + std::to_string(i));
}

// Rows of z0 then rows of zt, each L2-normalized, as one 2B-view list.
std::vector<std::vector<double>> normalized_views(const Tensor& z0, const Tensor& zt) {
    std::size_t b = z0.rows(), d = z0.cols();
    std::vector<std::vector<double>> x(2 * b, std::vector<double>(d));
    for (std::size_t i = 0; i < 2 * b; ++i) {
        const Tensor& src = i < b ? z0 : zt;
        std::size_t r = i < b ? i : i - b;
        double n = row_norm(src, r);
        for (std::size_t j = 0; j < d; ++j) x[i][j] = src.at2(r, j) / n;
    }
    return x;
}

Tensor flatten_rows(const Tensor& t) {
    if (t.rank() < 2)
        throw Error(ErrorKind::dimension_mismatch,
                    "per-sample flattening needs a leading batch dimension");
    std::size_t b = t.dim(0);
    return t.reshaped({b, t.size() / b});
}

}  // namespace

const char* norm_kind_name(NormKind k) {
    return k == NormKind::mse ? "mse" : "mean_abs";
}

NormKind norm_kind_from_name(const std::string& name) {
    if (name == "mse") return NormKind::mse;
    if (name == "mean_abs") return NormKind::mean_abs;
    throw Error(ErrorKind::parameter, "unknown norm kind '" + name + "'");
}

void LossWeights::validate() const {
    if (lambda_p < 0 || lambda_s < 0 || lambda_sl < 0 || lambda_c < 0)
        throw Error(ErrorKind::parameter, "loss weights must be nonnegative");
    if (temperature <= 0)
        throw Error(ErrorKind::parameter, "temperature must be positive");
    if (smooth_l1_beta <= 0)
        throw Error(ErrorKind::parameter, "smooth_l1_beta must be positive");
}

nlohmann::json LossWeights::to_json() const {
    return {{"lambda_p", lambda_p},       {"lambda_s", lambda_s},
            {"lambda_sl", lambda_sl},     {"lambda_c", lambda_c},
            {"temperature", temperature}, {"smooth_l1_beta", smooth_l1_beta},
            {"norm", norm_kind_name(norm)}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
    LossWeights w;
    w.lambda_p = j.value("lambda_p", w.lambda_p);
    w.lambda_s = j.value("lambda_s", w.lambda_s);
    w.lambda_sl = j.value("lambda_sl", w.lambda_sl);
    w.lambda_c = j.value("lambda_c", w.lambda_c);
    w.temperature = j.value("temperature", w.temperature);
    w.smooth_l1_beta = j.value("smooth_l1_beta", w.smooth_l1_beta);
    if (j.contains("norm")) w.norm = norm_kind_from_name(j.at("norm").get<std::string>());
    w.validate();
    return w;
}

double mse_noise_loss(const Tensor& eps_true, const Tensor& eps_pred) {
    return noise_matching_loss(eps_true, eps_pred, NormKind::mse);
}

double noise_matching_loss(const Tensor& eps_true, const Tensor& eps_pred, NormKind norm) {
    require_same_shape(eps_true, eps_pred, "noise_matching_loss");
    if (eps_true.size() == 0)
        throw Error(ErrorKind::dimension_mismatch, "empty noise arrays");
    double acc = 0.0;
    for (std::size_t i = 0; i < eps_true.size(); ++i) {
        double d = eps_true[i] - eps_pred[i];
        acc += norm == NormKind::mse ? d * d : std::fabs(d);
    }
    return acc / static_cast<double>(eps_true.size());
}

Tensor noise_matching_grad(const Tensor& eps_true, const Tensor& eps_pred, NormKind norm) {
    require_same_shape(eps_true, eps_pred, "noise_matching_grad");
    Tensor g(eps_pred.shape());
    double n = static_cast<double>(eps_pred.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        double d = eps_true[i] - eps_pred[i];
        g[i] = norm == NormKind::mse ? -2.0 * d / n
                                     : (d > 0 ? -1.0 : d < 0 ? 1.0 : 0.0) / n;
    }
    return g;
}

double smooth_l1(const Tensor& a, const Tensor& b, double beta) {
    require_same_shape(a, b, "smooth_l1");
    if (beta <= 0) throw Error(ErrorKind::parameter, "smooth_l1 beta must be positive");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = std::fabs(a[i] - b[i]);
        acc += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
    }
    return acc / static_cast<double>(a.size());
}

Tensor smooth_l1_grad(const Tensor& a, const Tensor& b, double beta) {
    require_same_shape(a, b, "smooth_l1_grad");
    if (beta <= 0) throw Error(ErrorKind::parameter, "smooth_l1 beta must be positive");
    Tensor g(b.shape());
    double n = static_cast<double>(b.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        double d = a[i] - b[i];
        double fd = std::fabs(d) < beta ? d / beta : (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0);
        g[i] = -fd / n;
    }
    return g;
}

double cosine_embedding_loss(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "cosine_embedding_loss");
    require_feature_rows(a, "cosine_embedding_loss(a)");
    require_feature_rows(b, "cosine_embedding_loss(b)");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) dot += a.at2(i, j) * b.at2(i, j);
        acc += 1.0 - dot / (row_norm(a, i) * row_norm(b, i));
    }
    return acc / static_cast<double>(a.rows());
}

CosineGrads cosine_embedding_grads(const Tensor& a, const Tensor& b) {
    CosineGrads out;
    out.value = cosine_embedding_loss(a, b);
    out.d_a = Tensor(a.shape());
    out.d_b = Tensor(b.shape());
    double inv_b_rows = 1.0 / static_cast<double>(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double na = row_norm(a, i), nb = row_norm(b, i);
        double dot = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) dot += a.at2(i, j) * b.at2(i, j);
        double cos = dot / (na * nb);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double ah = a.at2(i, j) / na, bh = b.at2(i, j) / nb;
            // d(1 - cos)/da = -(b_hat - cos * a_hat) / ||a||
            out.d_a.at2(i, j) = -inv_b_rows * (bh - cos * ah) / na;
            out.d_b.at2(i, j) = -inv_b_rows * (ah - cos * bh) / nb;
        }
    }
    return out;
}

double ntxent_contrastive(const Tensor& z0_feats, const Tensor& zt_feats,
                          double temperature) {
    return ntxent_grads(z0_feats, zt_feats, temperature).value;
}

NtxentGrads ntxent_grads(const Tensor& z0_feats, const Tensor& zt_feats,
                         double temperature) {
    require_same_shape(z0_feats, zt_feats, "ntxent_contrastive");
    if (temperature <= 0)
        throw Error(ErrorKind::parameter, "temperature must be positive");
    require_feature_rows(z0_feats, "ntxent_contrastive(z0)");
    require_feature_rows(zt_feats, "ntxent_contrastive(zt)");
    std::size_t b = z0_feats.rows();
    if (b < 2)
        throw Error(ErrorKind::insufficient_batch,
                    "contrastive loss needs batch size >= 2");
    std::size_t d = z0_feats.cols();
    std::size_t n = 2 * b;
    auto x = normalized_views(z0_feats, zt_feats);
    auto partner = [b, n](std::size_t a) { return (a + b) % n; };

    // Pairwise cosine similarities scaled by 1/temperature.
    std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += x[i][k] * x[j][k];
            s[i][j] = s[j][i] = dot / temperature;
        }

    double loss = 0.0;
    std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));  // softmax rows
    for (std::size_t a = 0; a < n; ++a) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n; ++c)
            if (c != a) m = std::max(m, s[a][c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < n; ++c)
            if (c != a) denom += std::exp(s[a][c] - m);
        for (std::size_t c = 0; c < n; ++c)
            if (c != a) p[a][c] = std::exp(s[a][c] - m) / denom;
        loss += -(s[a][partner(a)] - m) + std::log(denom);
    }
    loss /= static_cast<double>(n);

    // dL/ds contributions from both anchor directions, then chain through the
    // row normalizations back to the raw feature rows.
    double scale = 1.0 / (static_cast<double>(n) * temperature);
    std::vector<std::vector<double>> dx(n, std::vector<double>(d, 0.0));
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t c = 0; c < n; ++c) {
            if (c == a) continue;
            double w_ac = scale * (p[a][c] - (c == partner(a) ? 1.0 : 0.0));
            for (std::size_t k = 0; k < d; ++k) {
                dx[a][k] += w_ac * x[c][k];
                dx[c][k] += w_ac * x[a][k];
            }
        }

    NtxentGrads out;
    out.value = loss;
    out.d_z0 = Tensor(z0_feats.shape());
    out.d_zt = Tensor(zt_feats.shape());
    for (std::size_t a = 0; a < n; ++a) {
        const Tensor& src = a < b ? z0_feats : zt_feats;
        Tensor& dst = a < b ? out.d_z0 : out.d_zt;
        std::size_t r = a < b ? a : a - b;
        double nr = row_norm(src, r);
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k) proj += dx[a][k] * x[a][k];
        for (std::size_t k = 0; k < d; ++k)
            dst.at2(r, k) = (dx[a][k] - proj * x[a][k]) / nr;
    }
    return out;
}

nlohmann::json DbPropLoss::to_json() const {
    return {{"total", total}, {"mse", mse}, {"prior", prior}, {"contrastive", contrastive}};
}

nlohmann::json TiLoss::to_json() const {
    return {{"total", total}, {"mse", mse}, {"smooth_l1", smooth_l1}, {"cosine", cosine}};
}

namespace {

void require_prior_branch(const NoisePredictionBatch& batch) {
    if (!batch.prior_eps_true || !batch.prior_eps_pred)
        throw Error(ErrorKind::incomplete_batch,
                    "lambda_p > 0 but the prior branch is missing");
}

void require_contrastive_branch(const NoisePredictionBatch& batch) {
    if (!batch.z0_feats || !batch.zt_feats)
        throw Error(ErrorKind::incomplete_batch,
                    "lambda_s > 0 but contrastive features are missing");
}

}  // namespace

DbPropLoss db_prop_loss(const NoisePredictionBatch& batch, const LossWeights& w) {
    w.validate();
    DbPropLoss out;
    out.mse = noise_matching_loss(batch.eps_true, batch.eps_pred, w.norm);
    if (w.lambda_p > 0) {
        require_prior_branch(batch);
        out.prior = noise_matching_loss(*batch.prior_eps_true, *batch.prior_eps_pred, w.norm);
    }
    if (w.lambda_s > 0) {
        require_contrastive_branch(batch);
        out.contrastive = ntxent_contrastive(*batch.z0_feats, *batch.zt_feats, w.temperature);
    }
    out.total = out.mse + w.lambda_p * out.prior + w.lambda_s * out.contrastive;
    return out;
}

DbPropGrads db_prop_loss_with_grads(const NoisePredictionBatch& batch,
                                    const LossWeights& w) {
    w.validate();
    DbPropGrads out;
    out.value.mse = noise_matching_loss(batch.eps_true, batch.eps_pred, w.norm);
    out.d_eps_pred = noise_matching_grad(batch.eps_true, batch.eps_pred, w.norm);
    if (w.lambda_p > 0) {
        require_prior_branch(batch);
        out.value.prior =
            noise_matching_loss(*batch.prior_eps_true, *batch.prior_eps_pred, w.norm);
        Tensor g = noise_matching_grad(*batch.prior_eps_true, *batch.prior_eps_pred, w.norm);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= w.lambda_p;
        out.d_prior_eps_pred = std::move(g);
    }
    if (w.lambda_s > 0) {
        require_contrastive_branch(batch);
        NtxentGrads ng = ntxent_grads(*batch.z0_feats, *batch.zt_feats, w.temperature);
        out.value.contrastive = ng.value;
        for (std::size_t i = 0; i < ng.d_z0.size(); ++i) ng.d_z0[i] *= w.lambda_s;
        for (std::size_t i = 0; i < ng.d_zt.size(); ++i) ng.d_zt[i] *= w.lambda_s;
        out.d_z0_feats = std::move(ng.d_z0);
        out.d_zt_feats = std::move(ng.d_zt);
    }
    out.value.total = out.value.mse + w.lambda_p * out.value.prior +
                      w.lambda_s * out.value.contrastive;
    return out;
}

TiLoss ti_loss(const NoisePredictionBatch& batch, const LossWeights& w) {
    w.validate();
    TiLoss out;
    out.mse = noise_matching_loss(batch.eps_true, batch.eps_pred, w.norm);
    if (w.lambda_sl > 0)
        out.smooth_l1 = smooth_l1(batch.eps_true, batch.eps_pred, w.smooth_l1_beta);
    if (w.lambda_c > 0)
        out.cosine = cosine_embedding_loss(flatten_rows(batch.eps_true),
                                           flatten_rows(batch.eps_pred));
    out.total = out.mse + w.lambda_sl * out.smooth_l1 + w.lambda_c * out.cosine;
    return out;
}

TiGrads ti_loss_with_grads(const NoisePredictionBatch& batch, const LossWeights& w) {
    w.validate();
    TiGrads out;
    out.value.mse = noise_matching_loss(batch.eps_true, batch.eps_pred, w.norm);
    out.d_eps_pred = noise_matching_grad(batch.eps_true, batch.eps_pred, w.norm);
    if (w.lambda_sl > 0) {
        out.value.smooth_l1 = smooth_l1(batch.eps_true, batch.eps_pred, w.smooth_l1_beta);
        Tensor g = smooth_l1_grad(batch.eps_true, batch.eps_pred, w.smooth_l1_beta);
        for (std::size_t i = 0; i < g.size(); ++i)
            out.d_eps_pred[i] += w.lambda_sl * g[i];
    }
    if (w.lambda_c > 0) {
        CosineGrads cg = cosine_embedding_grads(flatten_rows(batch.eps_true),
                                                flatten_rows(batch.eps_pred));
        out.value.cosine = cg.value;
        for (std::size_t i = 0; i < cg.d_b.size(); ++i)
            out.d_eps_pred[i] += w.lambda_c * cg.d_b[i];
    }
    out.value.total = out.value.mse + w.lambda_sl * out.value.smooth_l1 +
                      w.lambda_c * out.value.cosine;
    return out;
}

double cn_ip_loss(const Tensor& eps_true, const Tensor& eps_pred, NormKind norm) {
    return noise_matching_loss(eps_true, eps_pred, norm);
}

Tensor cn_ip_loss_grad(const Tensor& eps_true, const Tensor& eps_pred, NormKind norm) {
    return noise_matching_grad(eps_true, eps_pred, norm);
}

}  // namespace faceedit
