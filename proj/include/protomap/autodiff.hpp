#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "protomap/tensor.hpp"

namespace protomap {

// Tape-based reverse-mode differentiation. Every forward pass builds a fresh
// graph of Node objects; backward(loss) seeds the scalar loss with 1 and
// accumulates gradients into the reachable leaves. Leaf gradients persist
// across backward calls until zero_grad, so mini-batch losses may be split.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Reverse pass from a scalar loss. Raises a usage error when the loss is not
// scalar or when no trainable leaf is reachable (backward before forward).
void backward(const Var& loss);

void zero_grad(std::vector<Var>& params);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var affine(const Var& a, double scale, double shift);  // scale * a + shift
Var mul_const(const Var& a, const Tensor& weight);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);  // caller guards positivity (shift by eps when needed)
Var square(const Var& a);
Var abs(const Var& a);

// ---- structure ----
// y = x * W^T + b with x [B x in], w [out x in], b [out] -> [B x out]
Var linear(const Var& x, const Var& w, const Var& b);
Var row_softmax(const Var& x);                      // softmax along each row
Var slice_cols(const Var& x, std::size_t c0, std::size_t c1);  // [c0, c1)
Var concat_cols(const Var& a, const Var& b);
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);
Var rows_norm(const Var& x);  // per-row L2 norm, [B x M] -> [B x 1]

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// Sum_n sum_k w[n,k] * |h_n - p_k|^2 with constant weights w [B x K];
// h [B x M], p [K x M]. Gradients flow to h and p only.
Var weighted_sqdist(const Var& h, const Var& p, const Tensor& w);

}  // namespace protomap
