#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "deari/array.hpp"

namespace deari {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in a define-by-run graph. The graph is rebuilt per step; backward
/// walks the DAG in reverse topological order. grad is allocated lazily and
/// always matches the value shape.
struct Node {
  Array value;
  Array grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Array(value.shape());
  }
  void zero_grad() {
    ensure_grad();
    grad.fill(0);
  }
};

/// Leaf with gradient tracking (parameters, probe inputs).
NodePtr leaf(Array v);
/// Leaf without gradient tracking (data, masks, fixed noise).
NodePtr constant(Array v);

// Elementwise binary ops. Shapes must match, except that the right operand may
// be rank-1 of length K and is then broadcast over the last dimension.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);

/// a * c for a compile-time constant scalar.
NodePtr scale(const NodePtr& a, real c);
/// a + c elementwise.
NodePtr shift(const NodePtr& a, real c);

// Elementwise unary ops.
NodePtr neg(const NodePtr& a);
NodePtr exp_op(const NodePtr& a);
NodePtr log_op(const NodePtr& a);   // domain: a > 0
NodePtr sqrt_op(const NodePtr& a);  // domain: a > 0 for gradients
NodePtr abs_op(const NodePtr& a);   // subgradient 0 at 0
NodePtr relu(const NodePtr& a);     // max(0, a), subgradient 0 at 0
NodePtr sigmoid(const NodePtr& a);
NodePtr tanh_op(const NodePtr& a);
NodePtr softplus(const NodePtr& a);
NodePtr square(const NodePtr& a);

/// [M,K] x [K,N] -> [M,N]; a rank-3 left operand [B,S,K] is folded to
/// [(B*S),K] and the result keeps the leading dims: [B,S,N].
NodePtr matmul(const NodePtr& a, const NodePtr& b);
/// Batched [B,M,K] x [B,K,N] -> [B,M,N].
NodePtr bmm(const NodePtr& a, const NodePtr& b);
/// Batched [B,M,K] x [B,N,K] -> [B,M,N]  (right operand transposed).
NodePtr bmm_nt(const NodePtr& a, const NodePtr& b);
/// Rank-2 transpose.
NodePtr transpose(const NodePtr& a);

// Shape surgery. "axis1" refers to the middle (sequence) axis of [B,S,H].
NodePtr concat_rows(const NodePtr& a, const NodePtr& b);  // [M,K]+[N,K] -> [M+N,K]
NodePtr concat_last(const NodePtr& a, const NodePtr& b);
NodePtr slice_last(const NodePtr& a, int64_t offset, int64_t len);
NodePtr stack_axis1(const std::vector<NodePtr>& steps);  // S x [B,H] -> [B,S,H]
NodePtr concat_axis1(const NodePtr& a, const NodePtr& b);
NodePtr slice_axis1(const NodePtr& a, int64_t offset, int64_t len);
NodePtr mean_axis1(const NodePtr& a);  // [B,S,H] -> [B,H]
/// Repeat a [1,H] row B times -> [B,1,H]; gradient sums over the batch.
NodePtr repeat_rows(const NodePtr& row, int64_t count);

// Reductions to a scalar node of shape [1].
NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);

/// Softmax over the last dimension (max-shifted).
NodePtr softmax_last(const NodePtr& a);
/// Normalize last dimension to mean 0, variance 1 (no affine).
NodePtr layer_norm_last(const NodePtr& a);
/// Rows scaled to unit L2 norm; zero rows pass through unchanged.
NodePtr l2_normalize_rows(const NodePtr& a);
/// Per row i over the last dim: log(1 + sum_j mask[i,j] * exp(a[i,j])),
/// evaluated with a max shift. mask is a plain array of the same shape.
NodePtr log1p_sum_exp_rows(const NodePtr& a, const Array& mask);

/// Reverse-mode sweep from a scalar-valued root. Clears reachable grads,
/// seeds d(root)/d(root) = 1 and propagates; leaf grads are then exact
/// d(root)/d(leaf). Repeated calls reproduce identical gradients.
void backward(const NodePtr& root);

}  // namespace deari
