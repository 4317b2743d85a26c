#include "freqmix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace freqmix {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw ShapeError("tensor: shape " + freqmix::shape_str(shape_) + " needs " +
                         std::to_string(shape_product(shape_)) + " values, got " +
                         std::to_string(data_.size()));
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& what) const {
    if (!all_finite()) throw ShapeError(what + ": non-finite values");
}

std::string Tensor::shape_str() const { return freqmix::shape_str(shape_); }

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += " x ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " and " +
                         b.shape_str());
    }
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    Tensor c({m, p});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            const double* brow = pb + l * p;
            double* crow = pc + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt: incompatible shapes " + a.shape_str() + " and " +
                         b.shape_str());
    }
    const std::size_t m = a.dim(0), d = a.dim(1), n = b.dim(0);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * d;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * d;
            double s = 0.0;
            for (std::size_t l = 0; l < d; ++l) s += arow[l] * brow[l];
            c(i, j) = s;
        }
    }
    return c;
}

Tensor transpose(const Tensor& m) {
    if (m.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + m.shape_str());
    Tensor t({m.dim(1), m.dim(0)});
    for (std::size_t i = 0; i < m.dim(0); ++i)
        for (std::size_t j = 0; j < m.dim(1); ++j) t(j, i) = m(i, j);
    return t;
}

Tensor scaled_softmax_rows(const Tensor& m, double d) {
    if (d <= 0.0) throw std::invalid_argument("scaled_softmax_rows: d must be positive");
    if (m.rank() == 0 || m.size() == 0) {
        throw ShapeError("scaled_softmax_rows: empty input");
    }
    m.require_finite("scaled_softmax_rows");
    const std::size_t cols = m.dim(m.rank() - 1);
    const std::size_t rows = m.size() / cols;
    const double inv = 1.0 / std::sqrt(d);
    Tensor out(m.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = m.data() + r * cols;
        double* o = out.data() + r * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, in[j] * inv);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] = std::exp(in[j] * inv - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < cols; ++j) o[j] /= sum;
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return out;
}

namespace {

struct AxisView {
    std::size_t outer, len, inner;
};

AxisView axis_view(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + x.shape_str());
    }
    AxisView v{1, x.dim(axis), 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) v.inner *= x.dim(i);
    return v;
}

std::vector<std::size_t> erase_axis(const std::vector<std::size_t>& shape, std::size_t axis) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out.push_back(shape[i]);
    if (out.empty()) out.push_back(1);
    return out;
}

}  // namespace

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view(x, axis);
    Tensor out(erase_axis(x.shape(), axis));
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i)
                out[o * v.inner + i] += x[(o * v.len + l) * v.inner + i];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= static_cast<double>(v.len);
    return out;
}

Tensor max_axis(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view(x, axis);
    Tensor out(erase_axis(x.shape(), axis));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i) {
                double val = x[(o * v.len + l) * v.inner + i];
                double& cur = out[o * v.inner + i];
                if (val > cur) cur = val;
            }
    return out;
}

Tensor pooled_projection(const Tensor& x, const Tensor& w, const Tensor& b, Pool pool,
                         std::size_t pool_axis) {
    Tensor pooled = pool == Pool::avg ? mean_axis(x, pool_axis) : max_axis(x, pool_axis);
    if (pooled.rank() != 2) {
        throw ShapeError("pooled_projection: pooled input must be rank-2, got " +
                         pooled.shape_str());
    }
    if (w.rank() != 2 || w.dim(0) != pooled.dim(1)) {
        throw ShapeError("pooled_projection: weight " + w.shape_str() +
                         " does not match pooled width " + pooled.shape_str());
    }
    if (b.size() != w.dim(1)) {
        throw ShapeError("pooled_projection: bias " + b.shape_str() + " does not match weight " +
                         w.shape_str());
    }
    Tensor out = matmul(pooled, w);
    for (std::size_t i = 0; i < out.dim(0); ++i)
        for (std::size_t j = 0; j < out.dim(1); ++j) {
            double v = out(i, j) + b[j];
            out(i, j) = v > 0.0 ? v : 0.0;
        }
    return out;
}

}  // namespace freqmix
