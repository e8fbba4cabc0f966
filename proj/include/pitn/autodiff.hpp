#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation of one forward pass (define-by-run). Values
// are immutable once recorded; backward() walks the nodes once, in reverse
// insertion order, accumulating gradients for nodes that require them.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pitn/tensor.hpp"

namespace pitn::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as its tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    bool requires_grad() const;
    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Receives the output gradient and adds contributions into input gradient
/// buffers. A null buffer means that input does not require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

class Gradients {
public:
    /// Gradient of the loss with respect to v. Zero if v was not reached.
    const Tensor& operator[](const Var& v) const { return at(v.id()); }
    const Tensor& at(std::size_t id) const;

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    // Unreached entries stay empty until first read, then become zeros.
    mutable std::vector<Tensor> grads_;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives gradient contributions.
    Var constant(Tensor value);
    /// Leaf whose gradient is tracked.
    Var variable(Tensor value);

    /// Appends an op node. `op` names the node in diagnostics.
    Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

    /// Accumulates d(loss)/d(node) for every node that requires a gradient.
    /// Throws std::logic_error if loss is not a scalar on this tape.
    Gradients backward(const Var& loss) const;

    std::size_t size() const { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const char* op(std::size_t id) const { return nodes_[id].op; }

private:
    struct Node {
        const char* op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad;
    };

    Var push(Node node);

    std::deque<Node> nodes_;  // stable addresses: values may be referenced while recording
};

// ---------------------------------------------------------------------------
// Differentiable primitives. Unless stated otherwise, binary elementwise ops
// require identical shapes.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
/// a * s where s is rank-0.
Var mul_scalar(const Var& a, const Var& s);

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over the first axis of a matrix: [T x d] -> [d].
Var mean_rows(const Var& a);
Var dot(const Var& a, const Var& b);
/// Numerically stable log(sum(exp(a))) of a vector.
Var logsumexp(const Var& a);

Var matmul(const Var& a, const Var& b);

/// Concatenation of two vectors.
Var concat(const Var& a, const Var& b);
/// Packs rank-0 values into a vector.
Var stack(std::span<const Var> scalars);
/// Element i of a tensor as a rank-0 value.
Var select(const Var& a, std::size_t i);
/// Contiguous sub-vector [begin, end).
Var slice(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);
/// Zero-pads a matrix along its first axis up to `rows` rows.
Var pad_rows(const Var& a, std::size_t rows);
/// Rows [begin, end) of a matrix.
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
/// Copies the value onto the tape as a constant, cutting the gradient path.
Var detach(const Var& a);

/// Row-wise layer normalization of a vector [d] or matrix [T x d].
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

/// Same-padded 2D cross-correlation.
/// x: [H x W x Cin], kernel: [kh x kw x Cin x Cout] with odd kh, kw.
Var conv2d(const Var& x, const Var& kernel);

/// Centers a [k x k x Cin x Cout] kernel inside a zero [size x size x Cin x Cout] one.
Var pad_kernel(const Var& kernel, std::size_t size);

}  // namespace pitn::ad
