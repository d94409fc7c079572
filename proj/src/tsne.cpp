#include "faceedit/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "faceedit/rng.hpp"

namespace faceedit {

namespace {

// Binary search the Gaussian bandwidth so the row's conditional distribution
// hits the requested perplexity.
void conditional_row(const std::vector<double>& sq_dists, std::size_t n,
                     std::size_t row, double perplexity, std::vector<double>& p_row) {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    double beta = 1.0;
    const double target = std::log(perplexity);

    for (int iter = 0; iter < 64; ++iter) {
        double sum = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == row) {
                p_row[j] = 0.0;
                continue;
            }
            double p = std::exp(-beta * sq_dists[row * n + j]);
            p_row[j] = p;
            sum += p;
            dot += p * sq_dists[row * n + j];
        }
        if (sum <= 0.0) sum = 1e-300;
        double entropy = std::log(sum) + beta * dot / sum;
        double diff = entropy - target;
        if (std::fabs(diff) < 1e-5) break;
        if (diff > 0) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
        } else {
            hi = beta;
            beta = std::isinf(lo) ? beta / 2.0 : 0.5 * (beta + lo);
        }
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += p_row[j];
    if (sum <= 0.0) sum = 1e-300;
    for (std::size_t j = 0; j < n; ++j) p_row[j] /= sum;
}

}  // namespace

TsneResult tsne(const Tensor& points, const TsneConfig& config,
                std::vector<std::string> labels) {
    points.require_rank(2);
    std::size_t n = points.rows(), d = points.cols();
    std::size_t out_d = static_cast<std::size_t>(config.out_dims);
    if (config.out_dims < 1)
        throw Error(ErrorKind::parameter, "out_dims must be positive");
    if (n < 2 * out_d)
        throw Error(ErrorKind::parameter,
                    "t-SNE needs at least 2*out_dims points, got " + std::to_string(n));
    if (!labels.empty() && labels.size() != n)
        throw Error(ErrorKind::parameter, "label count does not match point count");

    double perplexity = std::min(config.perplexity,
                                 std::max(2.0, (static_cast<double>(n) - 1.0) / 3.0));

    // pairwise squared distances in the input space
    std::vector<double> sq(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                double diff = points.at2(i, k) - points.at2(j, k);
                s += diff * diff;
            }
            sq[i * n + j] = sq[j * n + i] = s;
        }

    // symmetrized joint probabilities
    std::vector<double> p(n * n, 0.0);
    {
        std::vector<double> row(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            conditional_row(sq, n, i, perplexity, row);
            for (std::size_t j = 0; j < n; ++j) p[i * n + j] += row[j];
        }
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double v = (p[i * n + j] + p[j * n + i]) / (2.0 * n);
                v = std::max(v, 1e-12);
                p[i * n + j] = p[j * n + i] = v;
                total += 2.0 * v;
            }
        for (auto& v : p) v /= total;  // renormalize after the floor
        for (std::size_t i = 0; i < n; ++i) p[i * n + i] = 0.0;
    }

    Rng rng(config.seed);
    Tensor y({n, out_d});
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1e-4 * rng.normal();
    Tensor y_inc({n, out_d});
    std::vector<double> gains(n * out_d, 1.0);

    // largest attractive row sum bounds the gradient stiffness; capping the
    // step there keeps degenerate inputs (all-identical points) stable
    double max_row_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += p[i * n + j];
        max_row_p = std::max(max_row_p, row);
    }

    std::vector<double> num(n * n, 0.0);
    Tensor grad({n, out_d});
    for (int iter = 0; iter < config.iterations; ++iter) {
        double exaggeration = iter < config.exaggeration_iters
                                  ? config.early_exaggeration
                                  : 1.0;
        double momentum = iter < 250 ? 0.5 : 0.8;
        double stiffness = 4.0 * exaggeration * max_row_p;
        double lr = std::min(config.learning_rate, 0.5 / std::max(stiffness, 1e-12));

        double q_total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < out_d; ++k) {
                    double diff = y.at2(i, k) - y.at2(j, k);
                    s += diff * diff;
                }
                double v = 1.0 / (1.0 + s);
                num[i * n + j] = num[j * n + i] = v;
                q_total += 2.0 * v;
            }

        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < out_d; ++k) {
                double g = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    double q_ij = std::max(num[i * n + j] / q_total, 1e-12);
                    double mult =
                        (exaggeration * p[i * n + j] - q_ij) * num[i * n + j];
                    g += 4.0 * mult * (y.at2(i, k) - y.at2(j, k));
                }
                grad.at2(i, k) = g;
            }
        }
        for (std::size_t i = 0; i < y.size(); ++i) {
            // classic adaptive gains: grow when the gradient opposes the
            // running velocity, shrink otherwise
            if (grad[i] * y_inc[i] < 0.0) gains[i] += 0.2;
            else gains[i] = std::max(0.01, gains[i] * 0.8);
            y_inc[i] = momentum * y_inc[i] - lr * gains[i] * grad[i];
            y[i] += y_inc[i];
        }

        // keep the embedding centered
        for (std::size_t k = 0; k < out_d; ++k) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y.at2(i, k);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y.at2(i, k) -= mean;
        }
    }

    TsneResult result;
    result.coordinates = std::move(y);
    result.labels = std::move(labels);
    return result;
}

namespace {

void write_csv(const std::filesystem::path& path, const TsneResult& r) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write csv: " + path.string());
    std::size_t n = r.coordinates.rows(), d = r.coordinates.cols();
    out << "label";
    for (std::size_t k = 0; k < d; ++k) out << ",dim" << k;
    out << "\n";
    for (std::size_t i = 0; i < n; ++i) {
        out << (i < r.labels.size() ? r.labels[i] : std::to_string(i));
        for (std::size_t k = 0; k < d; ++k) out << "," << r.coordinates.at2(i, k);
        out << "\n";
    }
}

void write_svg(const std::filesystem::path& path, const TsneResult& r) {
    std::size_t n = r.coordinates.rows();
    double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        min_x = std::min(min_x, r.coordinates.at2(i, 0));
        max_x = std::max(max_x, r.coordinates.at2(i, 0));
        min_y = std::min(min_y, r.coordinates.at2(i, 1));
        max_y = std::max(max_y, r.coordinates.at2(i, 1));
    }
    double span_x = std::max(max_x - min_x, 1e-9);
    double span_y = std::max(max_y - min_y, 1e-9);
    const double size = 640.0, margin = 40.0;

    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write svg: " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size
        << "\" height=\"" << size << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < n; ++i) {
        double cx = margin + (r.coordinates.at2(i, 0) - min_x) / span_x * (size - 2 * margin);
        double cy = margin + (r.coordinates.at2(i, 1) - min_y) / span_y * (size - 2 * margin);
        std::uint64_t hue =
            i < r.labels.size() ? fnv1a64(r.labels[i]) % 360 : (i * 47) % 360;
        out << "<circle cx=\"" << cx << "\" cy=\"" << cy
            << "\" r=\"4\" fill=\"hsl(" << hue << ",70%,45%)\"/>\n";
    }
    out << "</svg>\n";
}

}  // namespace

TsneResult tsne_export(const std::vector<IdentityEmbedding>& embeddings,
                       const std::filesystem::path& base_path,
                       const TsneConfig& config) {
    if (embeddings.empty())
        throw Error(ErrorKind::parameter, "no embeddings to project");
    std::size_t d = embeddings.front().vector.size();
    Tensor points({embeddings.size(), d});
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].vector.size() != d)
            throw Error(ErrorKind::incompatible_embedding,
                        "embedding dimensions differ");
        for (std::size_t k = 0; k < d; ++k)
            points.at2(i, k) = embeddings[i].vector[k];
        labels.push_back(embeddings[i].subject_id);
    }
    TsneResult result = tsne(points, config, std::move(labels));

    std::filesystem::path csv = base_path;
    csv += ".csv";
    write_csv(csv, result);
    std::filesystem::path svg = base_path;
    svg += ".svg";
    write_svg(svg, result);
    return result;
}

}  // namespace faceedit
