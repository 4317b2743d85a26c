#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "freqmix/errors.hpp"

namespace freqmix {

/// Dense real n-dimensional array, double precision, row-major, contiguous.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<std::size_t> shape);

    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    /// Throws ShapeError naming `what` if any entry is NaN or infinite.
    void require_finite(const std::string& what) const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

/// C = A·B for 2-D tensors; throws ShapeError (reporting both shapes) on
/// inner-dimension mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// A·Bᵀ for 2-D tensors with matching inner (last) dimensions.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& m);

/// Row-wise softmax of m/√d along the last axis, computed with per-row max
/// subtraction. Rejects non-finite input and d <= 0.
Tensor scaled_softmax_rows(const Tensor& m, double d);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor max_axis(const Tensor& x, std::size_t axis);

enum class Pool { avg, max };

/// Pools x along pool_axis, applies the affine map (w, b), then ReLU.
/// The pooled tensor must be 2-D with inner dimension matching w's rows.
Tensor pooled_projection(const Tensor& x, const Tensor& w, const Tensor& b, Pool pool,
                         std::size_t pool_axis);

}  // namespace freqmix
