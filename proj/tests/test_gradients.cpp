#include <doctest.h>

#include <cmath>

#include "faceedit/losses.hpp"
#include "faceedit/rng.hpp"
#include "helpers.hpp"

using namespace faceedit;
using test_helpers::central_difference;
using test_helpers::random_tensor;
using test_helpers::rel_error;

namespace {

constexpr double kStep = 1e-4;
constexpr double kTol = 1e-4;

// Checks every coordinate of an analytic gradient against central
// differences of the scalar function f.
template <typename F>
void check_grad(F&& f, Tensor& x, const Tensor& analytic, const char* what) {
    REQUIRE(analytic.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double fd = central_difference(f, x, i, kStep);
        double err = rel_error(analytic[i], fd);
        CHECK_MESSAGE(err < kTol, what << " coord " << i << ": analytic "
                                       << analytic[i] << " vs fd " << fd);
    }
}

}  // namespace

TEST_SUITE("gradients") {

TEST_CASE("primitive gradients match finite differences") {
    Rng rng(31);
    Tensor a = random_tensor({2, 2, 2, 2}, rng);
    Tensor b = random_tensor({2, 2, 2, 2}, rng);

    SUBCASE("mse") {
        Tensor g = noise_matching_grad(a, b, NormKind::mse);
        check_grad([&] { return noise_matching_loss(a, b, NormKind::mse); }, b, g, "mse");
    }
    SUBCASE("mean_abs") {
        Tensor g = noise_matching_grad(a, b, NormKind::mean_abs);
        check_grad([&] { return noise_matching_loss(a, b, NormKind::mean_abs); }, b, g,
                   "mean_abs");
    }
    SUBCASE("smooth_l1") {
        Tensor g = smooth_l1_grad(a, b, 0.7);
        check_grad([&] { return smooth_l1(a, b, 0.7); }, b, g, "smooth_l1");
    }
    SUBCASE("cosine both sides") {
        Tensor x = random_tensor({3, 5}, rng);
        Tensor y = random_tensor({3, 5}, rng);
        CosineGrads cg = cosine_embedding_grads(x, y);
        check_grad([&] { return cosine_embedding_loss(x, y); }, y, cg.d_b, "cosine d_b");
        check_grad([&] { return cosine_embedding_loss(x, y); }, x, cg.d_a, "cosine d_a");
    }
    SUBCASE("ntxent both sides") {
        Tensor z0 = random_tensor({3, 4}, rng);
        Tensor zt = random_tensor({3, 4}, rng);
        NtxentGrads ng = ntxent_grads(z0, zt, 0.5);
        check_grad([&] { return ntxent_contrastive(z0, zt, 0.5); }, z0, ng.d_z0,
                   "ntxent d_z0");
        check_grad([&] { return ntxent_contrastive(z0, zt, 0.5); }, zt, ng.d_zt,
                   "ntxent d_zt");
    }
}

TEST_CASE("composite gradients on 20 random small batches") {
    Rng rng(32);
    for (int rep = 0; rep < 20; ++rep) {
        NoisePredictionBatch batch;
        batch.eps_true = random_tensor({2, 2, 2, 2}, rng);
        batch.eps_pred = random_tensor({2, 2, 2, 2}, rng);
        batch.prior_eps_true = random_tensor({2, 2, 2, 2}, rng);
        batch.prior_eps_pred = random_tensor({2, 2, 2, 2}, rng);
        batch.z0_feats = random_tensor({2, 6}, rng);
        batch.zt_feats = random_tensor({2, 6}, rng);

        LossWeights w;
        w.lambda_p = 0.8;
        w.lambda_s = 0.6;
        w.lambda_sl = 0.5;
        w.lambda_c = 0.4;

        {
            DbPropGrads g = db_prop_loss_with_grads(batch, w);
            check_grad([&] { return db_prop_loss(batch, w).total; }, batch.eps_pred,
                       g.d_eps_pred, "db_prop d_eps_pred");
            check_grad([&] { return db_prop_loss(batch, w).total; },
                       *batch.prior_eps_pred, *g.d_prior_eps_pred,
                       "db_prop d_prior_eps_pred");
            check_grad([&] { return db_prop_loss(batch, w).total; }, *batch.z0_feats,
                       *g.d_z0_feats, "db_prop d_z0_feats");
            check_grad([&] { return db_prop_loss(batch, w).total; }, *batch.zt_feats,
                       *g.d_zt_feats, "db_prop d_zt_feats");
        }
        {
            TiGrads g = ti_loss_with_grads(batch, w);
            check_grad([&] { return ti_loss(batch, w).total; }, batch.eps_pred,
                       g.d_eps_pred, "ti d_eps_pred");
        }
        {
            Tensor g = cn_ip_loss_grad(batch.eps_true, batch.eps_pred);
            check_grad([&] { return cn_ip_loss(batch.eps_true, batch.eps_pred); },
                       batch.eps_pred, g, "cn_ip");
        }
    }
}

}  // TEST_SUITE
