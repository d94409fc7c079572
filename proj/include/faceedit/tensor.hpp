#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "faceedit/errors.hpp"

namespace faceedit {

// Dense row-major double array with a runtime shape. All loss math and the
// toy backbone run on doubles so training histories are bit-reproducible.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count_of(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count_of(shape_))
            throw Error(ErrorKind::dimension_mismatch,
                        "tensor data size does not match shape");
    }

    static Tensor full(std::vector<std::size_t> shape, double value) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Rows of a [B, D] matrix; throws unless rank == 2.
    std::size_t rows() const {
        require_rank(2);
        return shape_[0];
    }
    std::size_t cols() const {
        require_rank(2);
        return shape_[1];
    }

    void require_rank(std::size_t r) const {
        if (shape_.size() != r)
            throw Error(ErrorKind::dimension_mismatch,
                        "expected rank-" + std::to_string(r) + " tensor, got rank-" +
                            std::to_string(shape_.size()));
    }

    // Reinterpret as [B, size/B] without copying semantics concerns (dense row-major).
    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (count_of(new_shape) != data_.size())
            throw Error(ErrorKind::dimension_mismatch, "reshape changes element count");
        return Tensor(std::move(new_shape), data_);
    }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + "]";
    }

    static std::size_t count_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw Error(ErrorKind::dimension_mismatch,
                    std::string(what) + ": shapes differ, " +
                        Tensor::shape_string(a.shape()) + " vs " +
                        Tensor::shape_string(b.shape()));
}

}  // namespace faceedit
