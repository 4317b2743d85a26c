#include "freqmix/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace freqmix {

namespace {

void axpy(Tensor& dst, const Tensor& src, double a = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

struct AxisView {
    std::size_t outer, len, inner;
};

AxisView axis_view(const std::vector<std::size_t>& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
    }
    AxisView v{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

}  // namespace

Var Tape::emit(Tensor value, std::function<void(Tape&, int)> backprop) {
    Node n;
    n.value = std::move(value);
    n.grad = Tensor(n.value.shape());
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor value) { return emit(std::move(value), nullptr); }

Var Tape::leaf(Parameter& p) {
    Var v = emit(p.value, nullptr);
    nodes_[v.id].param = &p;
    return v;
}

Var Tape::matmul(Var a, Var b) {
    Tensor out = freqmix::matmul(v(a.id), v(b.id));
    return emit(std::move(out), [a, b](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& av = t.v(a.id);
        const Tensor& bv = t.v(b.id);
        // dA += dC·Bᵀ ; dB += Aᵀ·dC
        axpy(t.g(a.id), freqmix::matmul_nt(go, bv));
        const std::size_t m = av.dim(0), k = av.dim(1), p = bv.dim(1);
        Tensor& gb = t.g(b.id);
        for (std::size_t l = 0; l < k; ++l)
            for (std::size_t i = 0; i < m; ++i) {
                const double av_il = av(i, l);
                if (av_il == 0.0) continue;
                for (std::size_t j = 0; j < p; ++j) gb(l, j) += av_il * go[i * p + j];
            }
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    Tensor out = freqmix::matmul_nt(v(a.id), v(b.id));
    return emit(std::move(out), [a, b](Tape& t, int self) {
        const Tensor& go = t.g(self);         // m×n
        const Tensor& av = t.v(a.id);         // m×d
        const Tensor& bv = t.v(b.id);         // n×d
        axpy(t.g(a.id), freqmix::matmul(go, bv));
        const std::size_t m = av.dim(0), d = av.dim(1), n = bv.dim(0);
        Tensor& gb = t.g(b.id);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i) {
                const double go_ij = go[i * n + j];
                if (go_ij == 0.0) continue;
                for (std::size_t l = 0; l < d; ++l) gb(j, l) += go_ij * av(i, l);
            }
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& av = v(a.id);
    const Tensor& bv = v(b.id);
    if (!av.same_shape(bv)) {
        throw ShapeError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor out = av;
    axpy(out, bv);
    return emit(std::move(out), [a, b](Tape& t, int self) {
        axpy(t.g(a.id), t.g(self));
        axpy(t.g(b.id), t.g(self));
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor& av = v(a.id);
    const Tensor& bv = v(b.id);
    if (!av.same_shape(bv)) {
        throw ShapeError("sub: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor out = av;
    axpy(out, bv, -1.0);
    return emit(std::move(out), [a, b](Tape& t, int self) {
        axpy(t.g(a.id), t.g(self));
        axpy(t.g(b.id), t.g(self), -1.0);
    });
}

Var Tape::add_rowvec(Var m, Var vec) {
    const Tensor& mv = v(m.id);
    const Tensor& bv = v(vec.id);
    const std::size_t cols = mv.dim(mv.rank() - 1);
    if (bv.size() != cols) {
        throw ShapeError("add_rowvec: bias " + bv.shape_str() + " vs row width " +
                         std::to_string(cols));
    }
    Tensor out = mv;
    const std::size_t rows = mv.size() / cols;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] += bv[j];
    return emit(std::move(out), [m, vec, rows, cols](Tape& t, int self) {
        const Tensor& go = t.g(self);
        axpy(t.g(m.id), go);
        Tensor& gb = t.g(vec.id);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) gb[j] += go[r * cols + j];
    });
}

Var Tape::scale(Var a, double s) {
    Tensor out = v(a.id);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return emit(std::move(out), [a, s](Tape& t, int self) { axpy(t.g(a.id), t.g(self), s); });
}

Var Tape::relu(Var a) {
    Tensor out = freqmix::relu(v(a.id));
    return emit(std::move(out), [a](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& av = t.v(a.id);
        Tensor& ga = t.g(a.id);
        for (std::size_t i = 0; i < go.size(); ++i)
            if (av[i] > 0.0) ga[i] += go[i];
    });
}

Var Tape::sigmoid(Var a) {
    Tensor out = freqmix::sigmoid(v(a.id));
    return emit(std::move(out), [a](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& ov = t.v(self);
        Tensor& ga = t.g(a.id);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * ov[i] * (1.0 - ov[i]);
    });
}

Var Tape::softmax_rows(Var m, double d) {
    Tensor out = freqmix::scaled_softmax_rows(v(m.id), d);
    const double inv = 1.0 / std::sqrt(d);
    return emit(std::move(out), [m, inv](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& ov = t.v(self);
        Tensor& gm = t.g(m.id);
        const std::size_t cols = ov.dim(ov.rank() - 1);
        const std::size_t rows = ov.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* o = ov.data() + r * cols;
            const double* gy = go.data() + r * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * o[j];
            double* gx = gm.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) gx[j] += inv * o[j] * (gy[j] - dot);
        }
    });
}

Var Tape::mean_axis(Var x, std::size_t axis) {
    Tensor out = freqmix::mean_axis(v(x.id), axis);
    const AxisView av = axis_view(v(x.id).shape(), axis);
    return emit(std::move(out), [x, av](Tape& t, int self) {
        const Tensor& go = t.g(self);
        Tensor& gx = t.g(x.id);
        const double inv = 1.0 / static_cast<double>(av.len);
        for (std::size_t o = 0; o < av.outer; ++o)
            for (std::size_t l = 0; l < av.len; ++l)
                for (std::size_t i = 0; i < av.inner; ++i)
                    gx[(o * av.len + l) * av.inner + i] += inv * go[o * av.inner + i];
    });
}

Var Tape::max_axis(Var x, std::size_t axis) {
    const Tensor& xv = v(x.id);
    const AxisView av = axis_view(xv.shape(), axis);
    Tensor out = freqmix::max_axis(xv, axis);
    // memo: flat index of the (first) argmax per output slot
    std::vector<std::size_t> arg(out.size());
    for (std::size_t o = 0; o < av.outer; ++o)
        for (std::size_t i = 0; i < av.inner; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t bi = 0;
            for (std::size_t l = 0; l < av.len; ++l) {
                const double val = xv[(o * av.len + l) * av.inner + i];
                if (val > best) {
                    best = val;
                    bi = (o * av.len + l) * av.inner + i;
                }
            }
            arg[o * av.inner + i] = bi;
        }
    return emit(std::move(out), [x, arg](Tape& t, int self) {
        const Tensor& go = t.g(self);
        Tensor& gx = t.g(x.id);
        for (std::size_t i = 0; i < go.size(); ++i) gx[arg[i]] += go[i];
    });
}

Var Tape::sum_all(Var x) {
    double s = 0.0;
    for (std::size_t i = 0; i < v(x.id).size(); ++i) s += v(x.id)[i];
    return emit(Tensor({1}, {s}), [x](Tape& t, int self) {
        const double go = t.g(self)[0];
        Tensor& gx = t.g(x.id);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
    });
}

Var Tape::reshape(Var x, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape), std::vector<double>(v(x.id).data(),
                                                     v(x.id).data() + v(x.id).size()));
    return emit(std::move(out), [x](Tape& t, int self) {
        const Tensor& go = t.g(self);
        Tensor& gx = t.g(x.id);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
}

Var Tape::slice_axis(Var x, std::size_t axis, std::size_t lo, std::size_t hi) {
    const Tensor& xv = v(x.id);
    const AxisView av = axis_view(xv.shape(), axis);
    if (lo >= hi || hi > av.len) {
        throw ShapeError("slice_axis: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                         ") invalid for axis length " + std::to_string(av.len));
    }
    std::vector<std::size_t> shape = xv.shape();
    shape[axis] = hi - lo;
    Tensor out(shape);
    const std::size_t w = hi - lo;
    for (std::size_t o = 0; o < av.outer; ++o)
        for (std::size_t l = 0; l < w; ++l)
            for (std::size_t i = 0; i < av.inner; ++i)
                out[(o * w + l) * av.inner + i] = xv[(o * av.len + lo + l) * av.inner + i];
    return emit(std::move(out), [x, av, lo, w](Tape& t, int self) {
        const Tensor& go = t.g(self);
        Tensor& gx = t.g(x.id);
        for (std::size_t o = 0; o < av.outer; ++o)
            for (std::size_t l = 0; l < w; ++l)
                for (std::size_t i = 0; i < av.inner; ++i)
                    gx[(o * av.len + lo + l) * av.inner + i] += go[(o * w + l) * av.inner + i];
    });
}

Var Tape::concat_axis(const std::vector<Var>& xs, std::size_t axis) {
    if (xs.empty()) throw ShapeError("concat_axis: no inputs");
    std::vector<std::size_t> shape = v(xs[0].id).shape();
    std::size_t total = 0;
    for (Var x : xs) total += v(x.id).dim(axis);
    shape[axis] = total;
    Tensor out(shape);
    const AxisView av = axis_view(shape, axis);
    std::size_t off = 0;
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> lens;
    for (Var x : xs) {
        const Tensor& xv = v(x.id);
        const std::size_t l = xv.dim(axis);
        offsets.push_back(off);
        lens.push_back(l);
        for (std::size_t o = 0; o < av.outer; ++o)
            for (std::size_t li = 0; li < l; ++li)
                for (std::size_t i = 0; i < av.inner; ++i)
                    out[(o * av.len + off + li) * av.inner + i] =
                        xv[(o * l + li) * av.inner + i];
        off += l;
    }
    std::vector<Var> parents = xs;
    return emit(std::move(out), [parents, av, offsets, lens](Tape& t, int self) {
        const Tensor& go = t.g(self);
        for (std::size_t p = 0; p < parents.size(); ++p) {
            Tensor& gx = t.g(parents[p].id);
            const std::size_t l = lens[p], off2 = offsets[p];
            for (std::size_t o = 0; o < av.outer; ++o)
                for (std::size_t li = 0; li < l; ++li)
                    for (std::size_t i = 0; i < av.inner; ++i)
                        gx[(o * l + li) * av.inner + i] +=
                            go[(o * av.len + off2 + li) * av.inner + i];
        }
    });
}

namespace {

// out[..., i] = Σ_f M[i][f]·x[..., f]
Tensor map_last(const Tensor& x, const Tensor& m) {
    const std::size_t fin = x.dim(x.rank() - 1);
    if (m.rank() != 2 || m.dim(1) != fin) {
        throw ShapeError("basis_map_last: basis " + m.shape_str() + " vs axis length " +
                         std::to_string(fin));
    }
    const std::size_t fout = m.dim(0);
    std::vector<std::size_t> shape = x.shape();
    shape.back() = fout;
    Tensor out(shape);
    const std::size_t lead = x.size() / fin;
    for (std::size_t l = 0; l < lead; ++l) {
        const double* xi = x.data() + l * fin;
        double* oi = out.data() + l * fout;
        for (std::size_t i = 0; i < fout; ++i) {
            const double* mrow = m.data() + i * fin;
            double s = 0.0;
            for (std::size_t f = 0; f < fin; ++f) s += mrow[f] * xi[f];
            oi[i] = s;
        }
    }
    return out;
}

// out[i, ...] = Σ_f M[i][f]·x[f, ...]
Tensor map_first(const Tensor& x, const Tensor& m) {
    const std::size_t fin = x.dim(0);
    if (m.rank() != 2 || m.dim(1) != fin) {
        throw ShapeError("basis_map_first: basis " + m.shape_str() + " vs axis length " +
                         std::to_string(fin));
    }
    const std::size_t fout = m.dim(0);
    std::vector<std::size_t> shape = x.shape();
    shape[0] = fout;
    Tensor out(shape);
    const std::size_t inner = x.size() / fin;
    for (std::size_t i = 0; i < fout; ++i) {
        double* oi = out.data() + i * inner;
        const double* mrow = m.data() + i * fin;
        for (std::size_t f = 0; f < fin; ++f) {
            const double c = mrow[f];
            if (c == 0.0) continue;
            const double* xf = x.data() + f * inner;
            for (std::size_t k = 0; k < inner; ++k) oi[k] += c * xf[k];
        }
    }
    return out;
}

}  // namespace

Var Tape::basis_map_last(Var x, const Tensor& m) {
    Tensor out = map_last(v(x.id), m);
    Tensor mt = freqmix::transpose(m);
    return emit(std::move(out), [x, mt](Tape& t, int self) {
        axpy(t.g(x.id), map_last(t.g(self), mt));
    });
}

Var Tape::basis_map_first(Var x, const Tensor& m) {
    Tensor out = map_first(v(x.id), m);
    Tensor mt = freqmix::transpose(m);
    return emit(std::move(out), [x, mt](Tape& t, int self) {
        axpy(t.g(x.id), map_first(t.g(self), mt));
    });
}

Var Tape::bin_scale_first(Var x, const std::vector<double>& scales) {
    const Tensor& xv = v(x.id);
    if (xv.dim(0) != scales.size()) {
        throw ShapeError("bin_scale_first: " + std::to_string(scales.size()) +
                         " scales vs leading axis " + std::to_string(xv.dim(0)));
    }
    Tensor out = xv;
    const std::size_t inner = xv.size() / xv.dim(0);
    for (std::size_t f = 0; f < scales.size(); ++f)
        for (std::size_t i = 0; i < inner; ++i) out[f * inner + i] *= scales[f];
    return emit(std::move(out), [x, scales, inner](Tape& t, int self) {
        const Tensor& go = t.g(self);
        Tensor& gx = t.g(x.id);
        for (std::size_t f = 0; f < scales.size(); ++f)
            for (std::size_t i = 0; i < inner; ++i)
                gx[f * inner + i] += scales[f] * go[f * inner + i];
    });
}

Var Tape::bin_linear(Var xbar, Var w, Var b) {
    const Tensor& xv = v(xbar.id);   // J×C'×F
    const Tensor& wv = v(w.id);      // C'×d
    const Tensor& bv = v(b.id);      // d
    if (xv.rank() != 3 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) || bv.size() != wv.dim(1)) {
        throw ShapeError("bin_linear: incompatible " + xv.shape_str() + ", " + wv.shape_str() +
                         ", " + bv.shape_str());
    }
    const std::size_t J = xv.dim(0), C = xv.dim(1), F = xv.dim(2), D = wv.dim(1);
    Tensor out({F, J, D});
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t c = 0; c < C; ++c) {
                const double xval = xv(j, c, f);
                if (xval == 0.0) continue;
                const double* wrow = wv.data() + c * D;
                double* orow = out.data() + (f * J + j) * D;
                for (std::size_t m = 0; m < D; ++m) orow[m] += xval * wrow[m];
            }
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t m = 0; m < D; ++m) out(f, j, m) += bv[m];
    return emit(std::move(out), [xbar, w, b, J, C, F, D](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& xv = t.v(xbar.id);
        const Tensor& wv = t.v(w.id);
        Tensor& gx = t.g(xbar.id);
        Tensor& gw = t.g(w.id);
        Tensor& gb = t.g(b.id);
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t j = 0; j < J; ++j) {
                const double* grow = go.data() + (f * J + j) * D;
                for (std::size_t c = 0; c < C; ++c) {
                    const double* wrow = wv.data() + c * D;
                    const double xval = xv(j, c, f);
                    double s = 0.0;
                    for (std::size_t m = 0; m < D; ++m) {
                        s += grow[m] * wrow[m];
                        gw(c, m) += xval * grow[m];
                    }
                    gx(j, c, f) += s;
                }
                for (std::size_t m = 0; m < D; ++m) gb[m] += grow[m];
            }
    });
}

Var Tape::stack_qk(Var q, Var k) {
    const Tensor& qv = v(q.id);  // F×J×d
    const Tensor& kv = v(k.id);  // F×J×d
    if (!qv.same_shape(kv) || qv.rank() != 3) {
        throw ShapeError("stack_qk: incompatible " + qv.shape_str() + " vs " + kv.shape_str());
    }
    const std::size_t F = qv.dim(0), J = qv.dim(1), D = qv.dim(2);
    Tensor out({F, J, J});
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t a = 0; a < J; ++a) {
            const double* qrow = qv.data() + (f * J + a) * D;
            for (std::size_t b2 = 0; b2 < J; ++b2) {
                const double* krow = kv.data() + (f * J + b2) * D;
                double s = 0.0;
                for (std::size_t m = 0; m < D; ++m) s += qrow[m] * krow[m];
                out(f, a, b2) = s;
            }
        }
    return emit(std::move(out), [q, k, F, J, D](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& qv = t.v(q.id);
        const Tensor& kv = t.v(k.id);
        Tensor& gq = t.g(q.id);
        Tensor& gk = t.g(k.id);
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t a = 0; a < J; ++a)
                for (std::size_t b2 = 0; b2 < J; ++b2) {
                    const double gov = go(f, a, b2);
                    if (gov == 0.0) continue;
                    const double* qrow = qv.data() + (f * J + a) * D;
                    const double* krow = kv.data() + (f * J + b2) * D;
                    double* gqrow = gq.data() + (f * J + a) * D;
                    double* gkrow = gk.data() + (f * J + b2) * D;
                    for (std::size_t m = 0; m < D; ++m) {
                        gqrow[m] += gov * krow[m];
                        gkrow[m] += gov * qrow[m];
                    }
                }
    });
}

Var Tape::broadcast_add_map(Var stack, Var map) {
    const Tensor& sv = v(stack.id);  // F×J×J
    const Tensor& mv = v(map.id);    // J×J
    if (sv.rank() != 3 || mv.rank() != 2 || sv.dim(1) != mv.dim(0) || sv.dim(2) != mv.dim(1)) {
        throw ShapeError("broadcast_add_map: " + sv.shape_str() + " vs " + mv.shape_str());
    }
    Tensor out = sv;
    const std::size_t F = sv.dim(0), JJ = mv.size();
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t i = 0; i < JJ; ++i) out[f * JJ + i] += mv[i];
    return emit(std::move(out), [stack, map, F, JJ](Tape& t, int self) {
        const Tensor& go = t.g(self);
        axpy(t.g(stack.id), go);
        Tensor& gm = t.g(map.id);
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t i = 0; i < JJ; ++i) gm[i] += go[f * JJ + i];
    });
}

Var Tape::apply_stack(Var stack, Var val) {
    const Tensor& sv = v(stack.id);  // F×J×J
    const Tensor& vv = v(val.id);    // J×C'×F
    if (sv.rank() != 3 || vv.rank() != 3 || sv.dim(1) != vv.dim(0) || sv.dim(2) != vv.dim(0) ||
        sv.dim(0) != vv.dim(2)) {
        throw ShapeError("apply_stack: " + sv.shape_str() + " vs " + vv.shape_str());
    }
    const std::size_t F = sv.dim(0), J = vv.dim(0), C = vv.dim(1);
    Tensor out({J, C, F});
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t a = 0; a < J; ++a)
            for (std::size_t b2 = 0; b2 < J; ++b2) {
                const double s = sv(f, a, b2);
                if (s == 0.0) continue;
                for (std::size_t c = 0; c < C; ++c) out(a, c, f) += s * vv(b2, c, f);
            }
    return emit(std::move(out), [stack, val, F, J, C](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& sv = t.v(stack.id);
        const Tensor& vv = t.v(val.id);
        Tensor& gs = t.g(stack.id);
        Tensor& gv = t.g(val.id);
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t a = 0; a < J; ++a)
                for (std::size_t b2 = 0; b2 < J; ++b2) {
                    double acc = 0.0;
                    const double s = sv(f, a, b2);
                    for (std::size_t c = 0; c < C; ++c) {
                        const double g2 = go(a, c, f);
                        acc += g2 * vv(b2, c, f);
                        gv(b2, c, f) += s * g2;
                    }
                    gs(f, a, b2) += acc;
                }
    });
}

Var Tape::apply_map(Var map, Var val) {
    const Tensor& mv = v(map.id);  // J×J
    const Tensor& vv = v(val.id);  // J×C'×F
    if (mv.rank() != 2 || vv.rank() != 3 || mv.dim(0) != vv.dim(0) || mv.dim(1) != vv.dim(0)) {
        throw ShapeError("apply_map: " + mv.shape_str() + " vs " + vv.shape_str());
    }
    const std::size_t J = vv.dim(0), C = vv.dim(1), F = vv.dim(2);
    Tensor out({J, C, F});
    const std::size_t CF = C * F;
    for (std::size_t a = 0; a < J; ++a)
        for (std::size_t b2 = 0; b2 < J; ++b2) {
            const double m = mv(a, b2);
            if (m == 0.0) continue;
            const double* src = vv.data() + b2 * CF;
            double* dst = out.data() + a * CF;
            for (std::size_t i = 0; i < CF; ++i) dst[i] += m * src[i];
        }
    return emit(std::move(out), [map, val, J, CF](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& mv = t.v(map.id);
        const Tensor& vv = t.v(val.id);
        Tensor& gm = t.g(map.id);
        Tensor& gv = t.g(val.id);
        for (std::size_t a = 0; a < J; ++a)
            for (std::size_t b2 = 0; b2 < J; ++b2) {
                const double* grow = go.data() + a * CF;
                const double* vrow = vv.data() + b2 * CF;
                double* gvrow = gv.data() + b2 * CF;
                const double m = mv(a, b2);
                double acc = 0.0;
                for (std::size_t i = 0; i < CF; ++i) {
                    acc += grow[i] * vrow[i];
                    gvrow[i] += m * grow[i];
                }
                gm(a, b2) += acc;
            }
    });
}

Var Tape::channel_mix(Var x, Var w, Var b) {
    Var out = channel_mix(x, w);
    const Tensor& ov = v(out.id);  // J×D×F
    const std::size_t J = ov.dim(0), D = ov.dim(1), F = ov.dim(2);
    const Tensor& bv = v(b.id);
    if (bv.size() != D) {
        throw ShapeError("channel_mix: bias " + bv.shape_str() + " vs channels " +
                         std::to_string(D));
    }
    Tensor sum = ov;
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t d = 0; d < D; ++d)
            for (std::size_t f = 0; f < F; ++f) sum(j, d, f) += bv[d];
    return emit(std::move(sum), [out, b, J, D, F](Tape& t, int self) {
        const Tensor& go = t.g(self);
        axpy(t.g(out.id), go);
        Tensor& gb = t.g(b.id);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t d = 0; d < D; ++d)
                for (std::size_t f = 0; f < F; ++f) gb[d] += go(j, d, f);
    });
}

Var Tape::channel_mix(Var x, Var w) {
    const Tensor& xv = v(x.id);  // J×C×F
    const Tensor& wv = v(w.id);  // C×D
    if (xv.rank() != 3 || wv.rank() != 2 || xv.dim(1) != wv.dim(0)) {
        throw ShapeError("channel_mix: " + xv.shape_str() + " vs " + wv.shape_str());
    }
    const std::size_t J = xv.dim(0), C = xv.dim(1), F = xv.dim(2), D = wv.dim(1);
    Tensor out({J, D, F});
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t c = 0; c < C; ++c) {
            const double* xrow = xv.data() + (j * C + c) * F;
            const double* wrow = wv.data() + c * D;
            for (std::size_t d = 0; d < D; ++d) {
                const double wv2 = wrow[d];
                if (wv2 == 0.0) continue;
                double* orow = out.data() + (j * D + d) * F;
                for (std::size_t f = 0; f < F; ++f) orow[f] += wv2 * xrow[f];
            }
        }
    return emit(std::move(out), [x, w, J, C, F, D](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& xv = t.v(x.id);
        const Tensor& wv = t.v(w.id);
        Tensor& gx = t.g(x.id);
        Tensor& gw = t.g(w.id);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t c = 0; c < C; ++c) {
                const double* xrow = xv.data() + (j * C + c) * F;
                double* gxrow = gx.data() + (j * C + c) * F;
                const double* wrow = wv.data() + c * D;
                double* gwrow = gw.data() + c * D;
                for (std::size_t d = 0; d < D; ++d) {
                    const double* grow = go.data() + (j * D + d) * F;
                    const double wv2 = wrow[d];
                    double acc = 0.0;
                    for (std::size_t f = 0; f < F; ++f) {
                        gxrow[f] += wv2 * grow[f];
                        acc += xrow[f] * grow[f];
                    }
                    gwrow[d] += acc;
                }
            }
    });
}

Var Tape::add_joint_table(Var x, Var p) {
    const Tensor& xv = v(x.id);  // J×C×F
    const Tensor& pv = v(p.id);  // J×C
    if (xv.rank() != 3 || pv.rank() != 2 || pv.dim(0) != xv.dim(0) || pv.dim(1) != xv.dim(1)) {
        throw ShapeError("add_joint_table: " + xv.shape_str() + " vs " + pv.shape_str());
    }
    const std::size_t J = xv.dim(0), C = xv.dim(1), F = xv.dim(2);
    Tensor out = xv;
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t f = 0; f < F; ++f) out(j, c, f) += pv(j, c);
    return emit(std::move(out), [x, p, J, C, F](Tape& t, int self) {
        const Tensor& go = t.g(self);
        axpy(t.g(x.id), go);
        Tensor& gp = t.g(p.id);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t f = 0; f < F; ++f) gp(j, c) += go(j, c, f);
    });
}

Var Tape::add_frame_table(Var x, Var p) {
    const Tensor& xv = v(x.id);  // J×C×F
    const Tensor& pv = v(p.id);  // F×C
    if (xv.rank() != 3 || pv.rank() != 2 || pv.dim(0) != xv.dim(2) || pv.dim(1) != xv.dim(1)) {
        throw ShapeError("add_frame_table: " + xv.shape_str() + " vs " + pv.shape_str());
    }
    const std::size_t J = xv.dim(0), C = xv.dim(1), F = xv.dim(2);
    Tensor out = xv;
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t f = 0; f < F; ++f) out(j, c, f) += pv(f, c);
    return emit(std::move(out), [x, p, J, C, F](Tape& t, int self) {
        const Tensor& go = t.g(self);
        axpy(t.g(x.id), go);
        Tensor& gp = t.g(p.id);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t f = 0; f < F; ++f) gp(f, c) += go(j, c, f);
    });
}

Var Tape::scale_channels(Var x, Var gate) {
    const Tensor& xv = v(x.id);  // J×C×F
    const Tensor& gv = v(gate.id);
    const std::size_t J = xv.dim(0), C = xv.dim(1), F = xv.dim(2);
    if (gv.size() != C) {
        throw ShapeError("scale_channels: gate " + gv.shape_str() + " vs channels " +
                         std::to_string(C));
    }
    Tensor out = xv;
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t f = 0; f < F; ++f) out(j, c, f) *= gv[c];
    return emit(std::move(out), [x, gate, J, C, F](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& xv = t.v(x.id);
        const Tensor& gv = t.v(gate.id);
        Tensor& gx = t.g(x.id);
        Tensor& gg = t.g(gate.id);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t f = 0; f < F; ++f) {
                    gx(j, c, f) += gv[c] * go(j, c, f);
                    gg[c] += xv(j, c, f) * go(j, c, f);
                }
    });
}

Var Tape::dwconv_time(Var x, Var k, std::size_t dilation) {
    const Tensor& xv = v(x.id);  // J×C×F
    const Tensor& kv = v(k.id);  // C×3
    if (xv.rank() != 3 || kv.rank() != 2 || kv.dim(0) != xv.dim(1) || kv.dim(1) != 3) {
        throw ShapeError("dwconv_time: " + xv.shape_str() + " vs kernel " + kv.shape_str());
    }
    const std::size_t J = xv.dim(0), C = xv.dim(1), F = xv.dim(2);
    const std::ptrdiff_t dil = static_cast<std::ptrdiff_t>(dilation);
    const std::ptrdiff_t Fs = static_cast<std::ptrdiff_t>(F);
    Tensor out({J, C, F});
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t c = 0; c < C; ++c)
            for (std::ptrdiff_t f = 0; f < Fs; ++f) {
                double s = 0.0;
                for (int tap = -1; tap <= 1; ++tap) {
                    const std::ptrdiff_t src = f + tap * dil;
                    if (src < 0 || src >= Fs) continue;
                    s += kv(c, static_cast<std::size_t>(tap + 1)) *
                         xv(j, c, static_cast<std::size_t>(src));
                }
                out(j, c, static_cast<std::size_t>(f)) = s;
            }
    return emit(std::move(out), [x, k, J, C, Fs, dil](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& xv = t.v(x.id);
        const Tensor& kv = t.v(k.id);
        Tensor& gx = t.g(x.id);
        Tensor& gk = t.g(k.id);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t c = 0; c < C; ++c)
                for (std::ptrdiff_t f = 0; f < Fs; ++f) {
                    const double gov = go(j, c, static_cast<std::size_t>(f));
                    if (gov == 0.0) continue;
                    for (int tap = -1; tap <= 1; ++tap) {
                        const std::ptrdiff_t src = f + tap * dil;
                        if (src < 0 || src >= Fs) continue;
                        gx(j, c, static_cast<std::size_t>(src)) +=
                            kv(c, static_cast<std::size_t>(tap + 1)) * gov;
                        gk(c, static_cast<std::size_t>(tap + 1)) +=
                            xv(j, c, static_cast<std::size_t>(src)) * gov;
                    }
                }
    });
}

Var Tape::frame_mix(Var sig, Var val) {
    const Tensor& sv = v(sig.id);  // F×F
    const Tensor& vv = v(val.id);  // J×C×F
    if (sv.rank() != 2 || vv.rank() != 3 || sv.dim(0) != vv.dim(2) || sv.dim(1) != vv.dim(2)) {
        throw ShapeError("frame_mix: " + sv.shape_str() + " vs " + vv.shape_str());
    }
    const std::size_t J = vv.dim(0), C = vv.dim(1), F = vv.dim(2);
    Tensor out({J, C, F});
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t c = 0; c < C; ++c) {
            const double* vrow = vv.data() + (j * C + c) * F;
            double* orow = out.data() + (j * C + c) * F;
            for (std::size_t f = 0; f < F; ++f) {
                const double* srow = sv.data() + f * F;
                double s = 0.0;
                for (std::size_t g2 = 0; g2 < F; ++g2) s += srow[g2] * vrow[g2];
                orow[f] = s;
            }
        }
    return emit(std::move(out), [sig, val, J, C, F](Tape& t, int self) {
        const Tensor& go = t.g(self);
        const Tensor& sv = t.v(sig.id);
        const Tensor& vv = t.v(val.id);
        Tensor& gs = t.g(sig.id);
        Tensor& gv = t.g(val.id);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t c = 0; c < C; ++c) {
                const double* vrow = vv.data() + (j * C + c) * F;
                const double* grow = go.data() + (j * C + c) * F;
                double* gvrow = gv.data() + (j * C + c) * F;
                for (std::size_t f = 0; f < F; ++f) {
                    const double gof = grow[f];
                    if (gof == 0.0) continue;
                    const double* srow = sv.data() + f * F;
                    double* gsrow = gs.data() + f * F;
                    for (std::size_t g2 = 0; g2 < F; ++g2) {
                        gsrow[g2] += gof * vrow[g2];
                        gvrow[g2] += srow[g2] * gof;
                    }
                }
            }
    });
}

Var Tape::cross_entropy(Var logits, std::size_t label) {
    const Tensor& lv = v(logits.id);
    const std::size_t k = lv.size();
    if (label >= k) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(k) + " classes");
    }
    double mx = lv[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, lv[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(lv[i] - mx);
    const double loss = mx + std::log(sum) - lv[label];
    return emit(Tensor({1}, {loss}), [logits, label, mx, sum, k](Tape& t, int self) {
        const double go = t.g(self)[0];
        const Tensor& lv = t.v(logits.id);
        Tensor& gl = t.g(logits.id);
        for (std::size_t i = 0; i < k; ++i) {
            const double p = std::exp(lv[i] - mx) / sum;
            gl[i] += go * (p - (i == label ? 1.0 : 0.0));
        }
    });
}

void Tape::backward(Var loss) {
    if (nodes_.empty()) throw std::logic_error("backward: empty tape");
    if (consumed_) throw std::logic_error("backward: tape already consumed; re-record first");
    if (loss.id < 0 || loss.id >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("backward: loss is not a node of this tape");
    }
    if (nodes_[loss.id].value.size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    nodes_[loss.id].value.shape_str());
    }
    consumed_ = true;
    nodes_[loss.id].grad[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        if (nodes_[i].backprop) nodes_[i].backprop(*this, i);
    }
    for (Node& n : nodes_) {
        if (n.param) axpy(n.param->grad, n.grad);
    }
}

}  // namespace freqmix
