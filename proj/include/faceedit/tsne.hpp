#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "faceedit/biometric.hpp"
#include "faceedit/tensor.hpp"

namespace faceedit {

struct TsneConfig {
    int out_dims = 3;
    std::uint64_t seed = 0;
    double perplexity = 30.0;  // clamped to (n - 1) / 3 for small inputs
    int iterations = 500;
    double learning_rate = 100.0;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 100;
};

struct TsneResult {
    Tensor coordinates;  // [n, out_dims]
    std::vector<std::string> labels;
};

// Exact (dense) t-SNE; deterministic for a fixed seed.
TsneResult tsne(const Tensor& points, const TsneConfig& config,
                std::vector<std::string> labels = {});

// Embedding convenience: rows are the 512-D identity vectors, labels the
// subject ids. Writes <base>.csv and a 2-D projection <base>.svg.
TsneResult tsne_export(const std::vector<IdentityEmbedding>& embeddings,
                       const std::filesystem::path& base_path,
                       const TsneConfig& config = {});

}  // namespace faceedit
