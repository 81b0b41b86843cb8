#pragma once

// Minimal reverse-mode automatic differentiation over Tensor.
//
// A Tape records every operation applied to its Vars. Nodes whose inputs do
// not require gradients store no backward closure, so inference-only graphs
// cost one forward pass. Tape::backward seeds a scalar root with 1 and walks
// the recorded nodes in reverse creation order.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "xtransfer/tensor.hpp"

namespace xtransfer::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Gradient accumulated by the last backward pass; zeros if none reached it.
  Tensor grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  // Used by op implementations. `fn` is dropped when no parent requires grad.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);

  void backward(Var root);

  const Tensor& value(const Var& v) const { return nodes_[v.id_].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }
  // Lazily zero-initialized gradient buffer of `v`.
  Tensor& grad_buffer(const Var& v);
  Tensor grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// --- elementwise -----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// a * s + c elementwise, s and c constants.
Var affine(Var a, double s, double c);
Var sigmoid(Var a);
Var gelu(Var a);
Var exp(Var a);
// a times a scalar Var of shape [1].
Var mul_scalar(Var a, Var s);

// --- reductions ------------------------------------------------------------
Var sum(Var a);
Var mean(Var a);
// sum of |a|; subgradient 0 at 0.
Var abs_sum(Var a);
// Euclidean norm over all elements.
Var l2_norm(Var a);
// Anisotropic total variation over the trailing two axes: sum of absolute
// forward differences, no wraparound.
Var total_variation(Var a);

// --- shape -----------------------------------------------------------------
Var reshape(Var a, Shape shape);
// x[B, ...] + d[...] broadcast across the leading axis.
Var add_broadcast(Var x, Var d);
// m = sigmoid(mask_logits) [H,W], p = sigmoid(pattern_logits) [C,H,W];
// returns m*p + (1-m)*x for x [B,C,H,W].
Var patch_blend(Var x, Var mask_logits, Var pattern_logits);
// Bilinear resize with corner-aligned sampling over the trailing two axes.
Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w);

// --- linear algebra / nn ---------------------------------------------------
// x [B,C,H,W], w [O,C,K,K], b [O].
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);
// x [B,I], w [O,I], b [O] -> [B,O].
Var linear(Var x, Var w, Var b);
// a [B,D], b [M,D] -> a b^T [B,M].
Var matmul_nt(Var a, Var b);
Var l2_normalize_rows(Var x);
// a, b [B,D] -> [B] rowwise dot products.
Var row_dot(Var a, Var b);
// table [V,E]; ids per row -> [B,E] mean of the looked-up rows.
Var embedding_bag_mean(Var table, const std::vector<std::vector<std::size_t>>& ids);
// Symmetric cross-entropy over a square logit matrix whose diagonal holds the
// matching pairs: -(1/2b)[sum_j log softmax_row(j)_j + sum_k log softmax_col(k)_k].
Var symmetric_cross_entropy(Var logits);

}  // namespace xtransfer::ad
