#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tsynd/tensor.hpp"

namespace tsynd {

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Relu,
  Exp,
  Log,
  Neg,
  Scale,
  Matmul,
  Conv2d,
  TConv2d,
  Softmax,
  Sigmoid,
  LogSoftmax,
  Sum,
  Reshape,
  Concat,
  NegXlogXSum,
  kOpEnumCount_,
};
constexpr int kOpCount = static_cast<int>(Op::kOpEnumCount_);

using ValueId = std::int32_t;

// Define-by-run reverse-mode tape. Nodes are appended in topological order;
// one backward() per tape unless gradients are reset. Values are immutable
// Tensors; gradients live in per-node accumulation buffers.
class Graph {
 public:
  Graph() = default;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  ValueId leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(ValueId id) const { return node(id).value; }
  bool requires_grad(ValueId id) const { return node(id).requires_grad; }
  bool has_grad(ValueId id) const { return node(id).has_grad; }
  Tensor grad(ValueId id) const;
  std::span<const float> grad_span(ValueId id) const;

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int op_count(Op op) const { return op_counts_[static_cast<int>(op)]; }

  // Reverse sweep from a scalar loss. Populates gradients on every node that
  // lies on a path from the loss to a grad-requiring leaf. Calling it again
  // without reset_gradients() is an error.
  void backward(ValueId loss);
  void reset_gradients();
  bool backward_done() const { return backward_done_; }

  void reserve(int n) { nodes_.reserve(static_cast<size_t>(n)); }

 private:
  friend ValueId add(Graph&, ValueId, ValueId);
  friend ValueId sub(Graph&, ValueId, ValueId);
  friend ValueId mul(Graph&, ValueId, ValueId);
  friend ValueId relu(Graph&, ValueId);
  friend ValueId exp(Graph&, ValueId);
  friend ValueId log(Graph&, ValueId);
  friend ValueId neg(Graph&, ValueId);
  friend ValueId scale(Graph&, ValueId, float);
  friend ValueId matmul(Graph&, ValueId, ValueId);
  friend ValueId conv2d(Graph&, ValueId, ValueId, ValueId, int, int);
  friend ValueId transposed_conv2d(Graph&, ValueId, ValueId, ValueId, int, int);
  friend ValueId softmax(Graph&, ValueId);
  friend ValueId sigmoid(Graph&, ValueId);
  friend ValueId log_softmax(Graph&, ValueId);
  friend ValueId sum(Graph&, ValueId);
  friend ValueId reshape(Graph&, ValueId, Dims);
  friend ValueId concat(Graph&, ValueId, ValueId);
  friend ValueId neg_xlogx_sum(Graph&, ValueId);

  struct Node {
    Op op = Op::Leaf;
    std::array<ValueId, 3> in{-1, -1, -1};
    int n_in = 0;
    bool requires_grad = false;
    bool has_grad = false;
    float scalar = 0.f;  // Scale factor
    int stride = 1;      // conv attrs
    int pad = 0;
    Tensor value;
    std::vector<float> grad;
  };

  const Node& node(ValueId id) const;
  Node& node(ValueId id);
  ValueId emplace(Node n);
  static ValueId emplace_unary(Graph& g, Op op, ValueId a, std::vector<float> out,
                               Dims dims, float scalar = 0.f);
  float* grad_buffer(ValueId id);
  void backward_node(ValueId id);

  std::vector<Node> nodes_;
  std::array<int, kOpCount> op_counts_{};
  bool backward_done_ = false;
};

// Elementwise; operands must have equal extents.
ValueId add(Graph& g, ValueId a, ValueId b);
ValueId sub(Graph& g, ValueId a, ValueId b);
ValueId mul(Graph& g, ValueId a, ValueId b);
ValueId relu(Graph& g, ValueId a);
ValueId exp(Graph& g, ValueId a);
// Rejects non-positive inputs.
ValueId log(Graph& g, ValueId a);
ValueId neg(Graph& g, ValueId a);
// Multiply by a compile-time constant (the scalar-operand elementwise form).
ValueId scale(Graph& g, ValueId a, float c);

// a:[m,k] x b:[k,n] -> [m,n]
ValueId matmul(Graph& g, ValueId a, ValueId b);

// input [C,H,W], kernels [F,C,kh,kw], optional bias [F]; cross-correlation,
// output extents (H + 2*pad - kh)/stride + 1 must be positive integers.
ValueId conv2d(Graph& g, ValueId input, ValueId kernels, ValueId bias, int stride,
               int pad);
inline ValueId conv2d(Graph& g, ValueId input, ValueId kernels, int stride, int pad) {
  return conv2d(g, input, kernels, ValueId(-1), stride, pad);
}

// Adjoint of conv2d. input [C,h,w], kernels [C,D,kh,kw], optional bias [D];
// output extents (h-1)*stride - 2*pad + kh.
ValueId transposed_conv2d(Graph& g, ValueId input, ValueId kernels, ValueId bias,
                          int stride, int pad);
inline ValueId transposed_conv2d(Graph& g, ValueId input, ValueId kernels, int stride,
                                 int pad) {
  return transposed_conv2d(g, input, kernels, ValueId(-1), stride, pad);
}

// 1-D probability vector ops; softmax/log_softmax use max-subtraction.
ValueId softmax(Graph& g, ValueId logits);
ValueId log_softmax(Graph& g, ValueId logits);
ValueId sigmoid(Graph& g, ValueId a);  // elementwise

// Scalar reduction with f64 accumulation.
ValueId sum(Graph& g, ValueId a);
// -sum(x * ln x) with 0*ln0 = 0; rejects negative inputs.
ValueId neg_xlogx_sum(Graph& g, ValueId a);

ValueId reshape(Graph& g, ValueId a, Dims new_dims);
// 1-D concatenation.
ValueId concat(Graph& g, ValueId a, ValueId b);

}  // namespace tsynd
