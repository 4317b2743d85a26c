#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "freqmix/tensor.hpp"

namespace freqmix {

/// A named trainable value with a gradient buffer of identical shape.
struct Parameter {
    Tensor value;
    Tensor grad;
    std::string name;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : value(std::move(v)), grad(value.shape()), name(std::move(n)) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a node on a tape.
struct Var {
    int id = -1;
};

/// Reverse-mode gradient tape over the primitive set this model needs.
/// Records operations in order; backward() traverses the record once, in
/// reverse, and accumulates ∂loss/∂value into every bound Parameter.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Constant leaf (no gradient is propagated to callers).
    Var input(Tensor value);

    /// Parameter leaf; the value is copied, and backward() adds the node's
    /// gradient into p.grad.
    Var leaf(Parameter& p);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // ---- primitives ------------------------------------------------------
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);               // A·Bᵀ
    Var add(Var a, Var b);                     // same shape
    Var sub(Var a, Var b);
    Var add_rowvec(Var m, Var v);              // broadcast bias over rows
    Var scale(Var a, double s);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var softmax_rows(Var m, double d);         // scaled softmax along last axis
    Var mean_axis(Var x, std::size_t axis);
    Var max_axis(Var x, std::size_t axis);
    Var sum_all(Var x);                        // scalar
    Var reshape(Var x, std::vector<std::size_t> shape);
    Var slice_axis(Var x, std::size_t axis, std::size_t lo, std::size_t hi);
    Var concat_axis(const std::vector<Var>& xs, std::size_t axis);

    /// out[..., i] = Σ_f M[i][f]·x[..., f] (linear map along the last axis).
    Var basis_map_last(Var x, const Tensor& m);
    /// out[i, ...] = Σ_f M[i][f]·x[f, ...] (linear map along the first axis).
    Var basis_map_first(Var x, const Tensor& m);
    /// out[f, ...] = s[f]·x[f, ...].
    Var bin_scale_first(Var x, const std::vector<double>& scales);

    /// X̄: J×C'×F, W: C'×d, b: d  →  F×J×d with out[f] = X̄[:,:,f]·W + b.
    Var bin_linear(Var xbar, Var w, Var b);
    /// Q, K: F×J×d  →  F×J×J with out[f] = Q[f]·K[f]ᵀ.
    Var stack_qk(Var q, Var k);
    /// S: F×J×J, M: J×J  →  out[f] = S[f] + M.
    Var broadcast_add_map(Var stack, Var map);
    /// S: F×J×J, V: J×C'×F  →  out[:,:,f] = S[f]·V[:,:,f].
    Var apply_stack(Var stack, Var v);
    /// M: J×J, V: J×C'×F  →  out[:,:,f] = M·V[:,:,f].
    Var apply_map(Var map, Var v);

    /// x: J×C×F, W: C×D, optional b: D  →  J×D×F (1×1 convolution over channels).
    Var channel_mix(Var x, Var w, Var b);
    Var channel_mix(Var x, Var w);
    /// x: J×C×F, P: J×C  →  x[j,c,f] + P[j,c].
    Var add_joint_table(Var x, Var p);
    /// x: J×C×F, P: F×C  →  x[j,c,f] + P[f,c].
    Var add_frame_table(Var x, Var p);
    /// x: J×C×F, g: C (or 1×C)  →  x[j,c,f]·g[c].
    Var scale_channels(Var x, Var g);
    /// Depthwise temporal convolution, kernel k: C×3, zero padding, given dilation.
    Var dwconv_time(Var x, Var k, std::size_t dilation);
    /// sig: F×F, V: J×C×F  →  out[j,c,f] = Σ_g sig[f,g]·V[j,c,g].
    Var frame_mix(Var sig, Var v);

    /// Cross-entropy of a single logit row (1×K or K) against a class id.
    Var cross_entropy(Var logits, std::size_t label);

    /// Backward pass from a recorded scalar loss. Writes gradients into every
    /// Parameter leaf (accumulating). A second call without re-recording, an
    /// empty tape, or a non-scalar loss is an error.
    void backward(Var loss);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&, int)> backprop;  // adds into parents' grads
        Parameter* param = nullptr;
    };

    Var emit(Tensor value, std::function<void(Tape&, int)> backprop);
    Tensor& g(int id) { return nodes_[id].grad; }
    const Tensor& v(int id) const { return nodes_[id].value; }

    std::vector<Node> nodes_;
    bool consumed_ = false;

    friend struct TapeAccess;
};

/// Runs the backward pass for a recorded scalar loss (spec-level entry point).
inline void record_and_backward(Tape& tape, Var loss) { tape.backward(loss); }

}  // namespace freqmix
