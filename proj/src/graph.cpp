#include "tsynd/graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>

namespace tsynd {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

// Gather conv patches: x [C,H,W] -> cols [C*kh*kw, OH*OW] for the output grid
// implied by (stride, pad). Out-of-image taps read as zero.
void im2col(const float* x, int c_in, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, float* cols) {
  const int patch = kh * kw;
  for (int c = 0; c < c_in; ++c) {
    const float* xc = x + static_cast<std::ptrdiff_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* row = cols + static_cast<std::ptrdiff_t>(c * patch + ki * kw + kj) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * stride - pad + ki;
          if (y < 0 || y >= h) {
            std::memset(row + static_cast<std::ptrdiff_t>(oy) * ow, 0,
                        sizeof(float) * static_cast<size_t>(ow));
            continue;
          }
          const float* xrow = xc + static_cast<std::ptrdiff_t>(y) * w;
          float* dst = row + static_cast<std::ptrdiff_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int xx = ox * stride - pad + kj;
            dst[ox] = (xx >= 0 && xx < w) ? xrow[xx] : 0.f;
          }
        }
      }
    }
  }
}

// Adjoint scatter of im2col; accumulates into x.
void col2im(const float* cols, int c_in, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, float* x) {
  const int patch = kh * kw;
  for (int c = 0; c < c_in; ++c) {
    float* xc = x + static_cast<std::ptrdiff_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* row =
            cols + static_cast<std::ptrdiff_t>(c * patch + ki * kw + kj) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * stride - pad + ki;
          if (y < 0 || y >= h) continue;
          float* xrow = xc + static_cast<std::ptrdiff_t>(y) * w;
          const float* src = row + static_cast<std::ptrdiff_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int xx = ox * stride - pad + kj;
            if (xx >= 0 && xx < w) xrow[xx] += src[ox];
          }
        }
      }
    }
  }
}

int conv_out_extent(int in, int k, int stride, int pad, const char* axis) {
  const int span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0) {
    throw ShapeError(std::string("conv2d: no integral output extent along ") + axis +
                     " (in=" + std::to_string(in) + ", k=" + std::to_string(k) +
                     ", stride=" + std::to_string(stride) +
                     ", pad=" + std::to_string(pad) + ")");
  }
  return span / stride + 1;
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_dims(b)) {
    throw ShapeError(std::string(what) + ": operand extents " +
                     dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  }
}

}  // namespace

const Graph::Node& Graph::node(ValueId id) const {
  if (id < 0 || id >= static_cast<ValueId>(nodes_.size())) {
    throw ValueError("invalid node id " + std::to_string(id));
  }
  return nodes_[static_cast<size_t>(id)];
}

Graph::Node& Graph::node(ValueId id) {
  return const_cast<Node&>(static_cast<const Graph*>(this)->node(id));
}

ValueId Graph::emplace(Node n) {
  op_counts_[static_cast<int>(n.op)] += 1;
  nodes_.push_back(std::move(n));
  return static_cast<ValueId>(nodes_.size() - 1);
}

ValueId Graph::leaf(Tensor value, bool requires_grad) {
  if (value.empty()) throw ValueError("leaf from empty tensor");
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return emplace(std::move(n));
}

Tensor Graph::grad(ValueId id) const {
  const Node& n = node(id);
  if (!n.has_grad) throw ValueError("node has no gradient (backward not run or pruned)");
  return Tensor::from_data_unchecked(n.value.dims(), n.grad);
}

std::span<const float> Graph::grad_span(ValueId id) const {
  const Node& n = node(id);
  if (!n.has_grad) throw ValueError("node has no gradient (backward not run or pruned)");
  return std::span<const float>(n.grad);
}

float* Graph::grad_buffer(ValueId id) {
  Node& n = node(id);
  if (!n.has_grad) {
    n.grad.assign(static_cast<size_t>(n.value.size()), 0.f);
    n.has_grad = true;
  }
  return n.grad.data();
}

void Graph::reset_gradients() {
  for (Node& n : nodes_) {
    n.grad.clear();
    n.has_grad = false;
  }
  backward_done_ = false;
}

void Graph::backward(ValueId loss) {
  const Node& l = node(loss);
  if (l.value.size() != 1) {
    throw ValueError("backward requires a scalar loss, got " +
                     dims_to_string(l.value.dims()));
  }
  if (backward_done_) {
    throw ValueError("backward already run on this graph; reset_gradients() first");
  }
  backward_done_ = true;

  // Reachability from the loss along input edges.
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<ValueId> stack{loss};
  reachable[static_cast<size_t>(loss)] = 1;
  while (!stack.empty()) {
    const Node& n = nodes_[static_cast<size_t>(stack.back())];
    stack.pop_back();
    for (int i = 0; i < n.n_in; ++i) {
      ValueId in = n.in[static_cast<size_t>(i)];
      if (!reachable[static_cast<size_t>(in)]) {
        reachable[static_cast<size_t>(in)] = 1;
        stack.push_back(in);
      }
    }
  }

  grad_buffer(loss)[0] = 1.f;
  for (ValueId id = loss; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!reachable[static_cast<size_t>(id)] || !n.requires_grad || !n.has_grad) continue;
    backward_node(id);
  }
}

void Graph::backward_node(ValueId id) {
  Node& n = node(id);
  const std::span<const float> g(n.grad);
  auto in_val = [&](int i) -> const Tensor& {
    return nodes_[static_cast<size_t>(n.in[static_cast<size_t>(i)])].value;
  };
  auto in_requires = [&](int i) {
    return nodes_[static_cast<size_t>(n.in[static_cast<size_t>(i)])].requires_grad;
  };
  auto in_buf = [&](int i) { return grad_buffer(n.in[static_cast<size_t>(i)]); };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add: {
      for (int s = 0; s < 2; ++s) {
        if (!in_requires(s)) continue;
        float* d = in_buf(s);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      break;
    }
    case Op::Sub: {
      if (in_requires(0)) {
        float* d = in_buf(0);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (in_requires(1)) {
        float* d = in_buf(1);
        for (size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
      }
      break;
    }
    case Op::Mul: {
      auto a = in_val(0).data();
      auto b = in_val(1).data();
      if (in_requires(0)) {
        float* d = in_buf(0);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b[i];
      }
      if (in_requires(1)) {
        float* d = in_buf(1);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a[i];
      }
      break;
    }
    case Op::Relu: {
      auto a = in_val(0).data();
      float* d = in_buf(0);
      for (size_t i = 0; i < g.size(); ++i) {
        if (a[i] > 0.f) d[i] += g[i];
      }
      break;
    }
    case Op::Exp: {
      auto out = n.value.data();
      float* d = in_buf(0);
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * out[i];
      break;
    }
    case Op::Log: {
      auto a = in_val(0).data();
      float* d = in_buf(0);
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] / a[i];
      break;
    }
    case Op::Neg: {
      float* d = in_buf(0);
      for (size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
      break;
    }
    case Op::Scale: {
      float* d = in_buf(0);
      for (size_t i = 0; i < g.size(); ++i) d[i] += n.scalar * g[i];
      break;
    }
    case Op::Matmul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      const int m = a.dims()[0], k = a.dims()[1], nn = b.dims()[1];
      MapConst A(a.data().data(), m, k);
      MapConst B(b.data().data(), k, nn);
      MapConst G(g.data(), m, nn);
      if (in_requires(0)) {
        MapMat dA(in_buf(0), m, k);
        dA.noalias() += G * B.transpose();
      }
      if (in_requires(1)) {
        MapMat dB(in_buf(1), k, nn);
        dB.noalias() += A.transpose() * G;
      }
      break;
    }
    case Op::Conv2d: {
      const Tensor& x = in_val(0);
      const Tensor& kern = in_val(1);
      const int c_in = x.dims()[0], h = x.dims()[1], w = x.dims()[2];
      const int f = kern.dims()[0], kh = kern.dims()[2], kw = kern.dims()[3];
      const int oh = n.value.dims()[1], ow = n.value.dims()[2];
      const int patch = c_in * kh * kw;
      MapConst G(g.data(), f, oh * ow);
      MapConst K(kern.data().data(), f, patch);
      const bool need_x = in_requires(0);
      const bool need_k = in_requires(1);
      if (need_x) {
        std::vector<float> dcols(static_cast<size_t>(patch) * oh * ow);
        MapMat DC(dcols.data(), patch, oh * ow);
        DC.noalias() = K.transpose() * G;
        col2im(dcols.data(), c_in, h, w, kh, kw, n.stride, n.pad, oh, ow, in_buf(0));
      }
      if (need_k) {
        std::vector<float> cols(static_cast<size_t>(patch) * oh * ow);
        im2col(x.data().data(), c_in, h, w, kh, kw, n.stride, n.pad, oh, ow, cols.data());
        MapConst C(cols.data(), patch, oh * ow);
        MapMat DK(in_buf(1), f, patch);
        DK.noalias() += G * C.transpose();
      }
      if (n.n_in == 3 && in_requires(2)) {
        float* db = in_buf(2);
        for (int ff = 0; ff < f; ++ff) {
          double acc = 0.0;
          const float* gf = g.data() + static_cast<std::ptrdiff_t>(ff) * oh * ow;
          for (int i = 0; i < oh * ow; ++i) acc += gf[i];
          db[ff] += static_cast<float>(acc);
        }
      }
      break;
    }
    case Op::TConv2d: {
      const Tensor& x = in_val(0);
      const Tensor& kern = in_val(1);
      const int c_in = x.dims()[0], h = x.dims()[1], w = x.dims()[2];
      const int d_out = kern.dims()[1], kh = kern.dims()[2], kw = kern.dims()[3];
      const int oh = n.value.dims()[1], ow = n.value.dims()[2];
      const int patch = d_out * kh * kw;
      MapConst K(kern.data().data(), c_in, patch);
      // grad flows through the conv view: output grid is (h, w).
      std::vector<float> gcols(static_cast<size_t>(patch) * h * w);
      im2col(g.data(), d_out, oh, ow, kh, kw, n.stride, n.pad, h, w, gcols.data());
      MapConst GC(gcols.data(), patch, h * w);
      if (in_requires(0)) {
        MapMat DX(in_buf(0), c_in, h * w);
        DX.noalias() += K * GC;
      }
      if (in_requires(1)) {
        MapConst X(x.data().data(), c_in, h * w);
        MapMat DK(in_buf(1), c_in, patch);
        DK.noalias() += X * GC.transpose();
      }
      if (n.n_in == 3 && in_requires(2)) {
        float* db = in_buf(2);
        for (int dd = 0; dd < d_out; ++dd) {
          double acc = 0.0;
          const float* gd = g.data() + static_cast<std::ptrdiff_t>(dd) * oh * ow;
          for (int i = 0; i < oh * ow; ++i) acc += gd[i];
          db[dd] += static_cast<float>(acc);
        }
      }
      break;
    }
    case Op::Softmax: {
      auto s = n.value.data();
      float* d = in_buf(0);
      double dot = 0.0;
      for (size_t i = 0; i < g.size(); ++i) dot += static_cast<double>(g[i]) * s[i];
      for (size_t i = 0; i < g.size(); ++i) {
        d[i] += s[i] * (g[i] - static_cast<float>(dot));
      }
      break;
    }
    case Op::Sigmoid: {
      auto s = n.value.data();
      float* d = in_buf(0);
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s[i] * (1.f - s[i]);
      break;
    }
    case Op::LogSoftmax: {
      auto ls = n.value.data();
      float* d = in_buf(0);
      double gsum = 0.0;
      for (float gv : g) gsum += gv;
      for (size_t i = 0; i < g.size(); ++i) {
        d[i] += g[i] - std::exp(ls[i]) * static_cast<float>(gsum);
      }
      break;
    }
    case Op::Sum: {
      float* d = in_buf(0);
      const float gv = g[0];
      const size_t m = static_cast<size_t>(in_val(0).size());
      for (size_t i = 0; i < m; ++i) d[i] += gv;
      break;
    }
    case Op::Reshape: {
      float* d = in_buf(0);
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      break;
    }
    case Op::Concat: {
      const size_t na = static_cast<size_t>(in_val(0).size());
      if (in_requires(0)) {
        float* d = in_buf(0);
        for (size_t i = 0; i < na; ++i) d[i] += g[i];
      }
      if (in_requires(1)) {
        float* d = in_buf(1);
        for (size_t i = na; i < g.size(); ++i) d[i - na] += g[i];
      }
      break;
    }
    case Op::NegXlogXSum: {
      auto a = in_val(0).data();
      float* d = in_buf(0);
      const float gv = g[0];
      for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] > 0.f) d[i] -= gv * (std::log(a[i]) + 1.f);
      }
      break;
    }
    default:
      throw Error("backward: unhandled op");
  }
}

ValueId Graph::emplace_unary(Graph& g, Op op, ValueId a, std::vector<float> out,
                             Dims dims, float scalar) {
  Node n;
  n.op = op;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.requires_grad = g.requires_grad(a);
  n.scalar = scalar;
  n.value = Tensor::from_data_unchecked(std::move(dims), std::move(out));
  return g.emplace(std::move(n));
}

ValueId add(Graph& g, ValueId a, ValueId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  require_same_dims(ta, tb, "add");
  std::vector<float> out(static_cast<size_t>(ta.size()));
  auto pa = ta.data();
  auto pb = tb.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  Graph::Node n;
  n.op = Op::Add;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.requires_grad = g.requires_grad(a) || g.requires_grad(b);
  n.value = Tensor::from_data_unchecked(ta.dims(), std::move(out));
  return g.emplace(std::move(n));
}

ValueId sub(Graph& g, ValueId a, ValueId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  require_same_dims(ta, tb, "sub");
  std::vector<float> out(static_cast<size_t>(ta.size()));
  auto pa = ta.data();
  auto pb = tb.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  Graph::Node n;
  n.op = Op::Sub;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.requires_grad = g.requires_grad(a) || g.requires_grad(b);
  n.value = Tensor::from_data_unchecked(ta.dims(), std::move(out));
  return g.emplace(std::move(n));
}

ValueId mul(Graph& g, ValueId a, ValueId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  require_same_dims(ta, tb, "mul");
  std::vector<float> out(static_cast<size_t>(ta.size()));
  auto pa = ta.data();
  auto pb = tb.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  Graph::Node n;
  n.op = Op::Mul;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.requires_grad = g.requires_grad(a) || g.requires_grad(b);
  n.value = Tensor::from_data_unchecked(ta.dims(), std::move(out));
  return g.emplace(std::move(n));
}

ValueId relu(Graph& g, ValueId a) {
  const Tensor& ta = g.value(a);
  std::vector<float> out(static_cast<size_t>(ta.size()));
  auto pa = ta.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] > 0.f ? pa[i] : 0.f;
  return Graph::emplace_unary(g, Op::Relu, a, std::move(out), ta.dims());
}

ValueId exp(Graph& g, ValueId a) {
  const Tensor& ta = g.value(a);
  std::vector<float> out(static_cast<size_t>(ta.size()));
  auto pa = ta.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(pa[i]);
  return Graph::emplace_unary(g, Op::Exp, a, std::move(out), ta.dims());
}

ValueId log(Graph& g, ValueId a) {
  const Tensor& ta = g.value(a);
  std::vector<float> out(static_cast<size_t>(ta.size()));
  auto pa = ta.data();
  for (size_t i = 0; i < out.size(); ++i) {
    if (!(pa[i] > 0.f)) throw ValueError("log of non-positive value");
    out[i] = std::log(pa[i]);
  }
  return Graph::emplace_unary(g, Op::Log, a, std::move(out), ta.dims());
}

ValueId neg(Graph& g, ValueId a) {
  const Tensor& ta = g.value(a);
  std::vector<float> out(static_cast<size_t>(ta.size()));
  auto pa = ta.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = -pa[i];
  return Graph::emplace_unary(g, Op::Neg, a, std::move(out), ta.dims());
}

ValueId scale(Graph& g, ValueId a, float c) {
  const Tensor& ta = g.value(a);
  std::vector<float> out(static_cast<size_t>(ta.size()));
  auto pa = ta.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * pa[i];
  return Graph::emplace_unary(g, Op::Scale, a, std::move(out), ta.dims(), c);
}

ValueId matmul(Graph& g, ValueId a, ValueId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.dims().size() != 2 || tb.dims().size() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " +
                     dims_to_string(ta.dims()) + " and " + dims_to_string(tb.dims()));
  }
  if (ta.dims()[1] != tb.dims()[0]) {
    throw ShapeError("matmul inner extents differ: " + dims_to_string(ta.dims()) +
                     " x " + dims_to_string(tb.dims()));
  }
  const int m = ta.dims()[0], k = ta.dims()[1], nn = tb.dims()[1];
  std::vector<float> out(static_cast<size_t>(m) * nn);
  MapConst A(ta.data().data(), m, k);
  MapConst B(tb.data().data(), k, nn);
  MapMat C(out.data(), m, nn);
  C.noalias() = A * B;
  Graph::Node n;
  n.op = Op::Matmul;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.requires_grad = g.requires_grad(a) || g.requires_grad(b);
  n.value = Tensor::from_data_unchecked({m, nn}, std::move(out));
  return g.emplace(std::move(n));
}

ValueId conv2d(Graph& g, ValueId input, ValueId kernels, ValueId bias, int stride,
               int pad) {
  const Tensor& x = g.value(input);
  const Tensor& k = g.value(kernels);
  if (x.dims().size() != 3) throw ShapeError("conv2d input must be [C,H,W]");
  if (k.dims().size() != 4) throw ShapeError("conv2d kernels must be [F,C,kh,kw]");
  if (stride < 1) throw ValueError("conv2d stride must be positive");
  if (pad < 0) throw ValueError("conv2d padding must be non-negative");
  const int c_in = x.dims()[0], h = x.dims()[1], w = x.dims()[2];
  const int f = k.dims()[0], kh = k.dims()[2], kw = k.dims()[3];
  if (k.dims()[1] != c_in) {
    throw ShapeError("conv2d channel mismatch: input " + dims_to_string(x.dims()) +
                     " vs kernels " + dims_to_string(k.dims()));
  }
  const int oh = conv_out_extent(h, kh, stride, pad, "H");
  const int ow = conv_out_extent(w, kw, stride, pad, "W");
  const int patch = c_in * kh * kw;

  std::vector<float> cols(static_cast<size_t>(patch) * oh * ow);
  im2col(x.data().data(), c_in, h, w, kh, kw, stride, pad, oh, ow, cols.data());
  std::vector<float> out(static_cast<size_t>(f) * oh * ow);
  MapConst K(k.data().data(), f, patch);
  MapConst C(cols.data(), patch, oh * ow);
  MapMat O(out.data(), f, oh * ow);
  O.noalias() = K * C;

  Graph::Node n;
  n.op = Op::Conv2d;
  n.in = {input, kernels, bias};
  n.n_in = bias >= 0 ? 3 : 2;
  n.stride = stride;
  n.pad = pad;
  n.requires_grad = g.requires_grad(input) || g.requires_grad(kernels);
  if (bias >= 0) {
    const Tensor& b = g.value(bias);
    if (b.dims().size() != 1 || b.dims()[0] != f) {
      throw ShapeError("conv2d bias must be [F]");
    }
    auto pb = b.data();
    for (int ff = 0; ff < f; ++ff) {
      float* of = out.data() + static_cast<std::ptrdiff_t>(ff) * oh * ow;
      for (int i = 0; i < oh * ow; ++i) of[i] += pb[ff];
    }
    n.requires_grad = n.requires_grad || g.requires_grad(bias);
  }
  n.value = Tensor::from_data_unchecked({f, oh, ow}, std::move(out));
  return g.emplace(std::move(n));
}

ValueId transposed_conv2d(Graph& g, ValueId input, ValueId kernels, ValueId bias,
                          int stride, int pad) {
  const Tensor& x = g.value(input);
  const Tensor& k = g.value(kernels);
  if (x.dims().size() != 3) throw ShapeError("transposed_conv2d input must be [C,h,w]");
  if (k.dims().size() != 4) {
    throw ShapeError("transposed_conv2d kernels must be [C,D,kh,kw]");
  }
  if (stride < 1) throw ValueError("transposed_conv2d stride must be positive");
  if (pad < 0) throw ValueError("transposed_conv2d padding must be non-negative");
  const int c_in = x.dims()[0], h = x.dims()[1], w = x.dims()[2];
  const int d_out = k.dims()[1], kh = k.dims()[2], kw = k.dims()[3];
  if (k.dims()[0] != c_in) {
    throw ShapeError("transposed_conv2d channel mismatch: input " +
                     dims_to_string(x.dims()) + " vs kernels " + dims_to_string(k.dims()));
  }
  const int oh = (h - 1) * stride - 2 * pad + kh;
  const int ow = (w - 1) * stride - 2 * pad + kw;
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("transposed_conv2d output extent is non-positive");
  }
  const int patch = d_out * kh * kw;

  std::vector<float> dcols(static_cast<size_t>(patch) * h * w);
  MapConst K(k.data().data(), c_in, patch);
  MapConst X(x.data().data(), c_in, h * w);
  MapMat DC(dcols.data(), patch, h * w);
  DC.noalias() = K.transpose() * X;
  std::vector<float> out(static_cast<size_t>(d_out) * oh * ow, 0.f);
  col2im(dcols.data(), d_out, oh, ow, kh, kw, stride, pad, h, w, out.data());

  Graph::Node n;
  n.op = Op::TConv2d;
  n.in = {input, kernels, bias};
  n.n_in = bias >= 0 ? 3 : 2;
  n.stride = stride;
  n.pad = pad;
  n.requires_grad = g.requires_grad(input) || g.requires_grad(kernels);
  if (bias >= 0) {
    const Tensor& b = g.value(bias);
    if (b.dims().size() != 1 || b.dims()[0] != d_out) {
      throw ShapeError("transposed_conv2d bias must be [D]");
    }
    auto pb = b.data();
    for (int dd = 0; dd < d_out; ++dd) {
      float* od = out.data() + static_cast<std::ptrdiff_t>(dd) * oh * ow;
      for (int i = 0; i < oh * ow; ++i) od[i] += pb[dd];
    }
    n.requires_grad = n.requires_grad || g.requires_grad(bias);
  }
  n.value = Tensor::from_data_unchecked({d_out, oh, ow}, std::move(out));
  return g.emplace(std::move(n));
}

namespace {

void require_vector(const Tensor& t, const char* what) {
  if (t.dims().size() != 1) {
    throw ShapeError(std::string(what) + " expects a rank-1 tensor, got " +
                     dims_to_string(t.dims()));
  }
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw ValueError(std::string(what) + ": non-finite input");
  }
}

}  // namespace

ValueId softmax(Graph& g, ValueId logits) {
  const Tensor& t = g.value(logits);
  require_vector(t, "softmax");
  auto p = t.data();
  float mx = p[0];
  for (float v : p) mx = std::max(mx, v);
  std::vector<float> out(p.size());
  double denom = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    out[i] = std::exp(p[i] - mx);
    denom += out[i];
  }
  const float inv = static_cast<float>(1.0 / denom);
  for (float& v : out) v *= inv;
  return Graph::emplace_unary(g, Op::Softmax, logits, std::move(out), t.dims());
}

ValueId log_softmax(Graph& g, ValueId logits) {
  const Tensor& t = g.value(logits);
  require_vector(t, "log_softmax");
  auto p = t.data();
  float mx = p[0];
  for (float v : p) mx = std::max(mx, v);
  double denom = 0.0;
  for (float v : p) denom += std::exp(static_cast<double>(v) - mx);
  const float lse = mx + static_cast<float>(std::log(denom));
  std::vector<float> out(p.size());
  for (size_t i = 0; i < p.size(); ++i) out[i] = p[i] - lse;
  return Graph::emplace_unary(g, Op::LogSoftmax, logits, std::move(out), t.dims());
}

ValueId sigmoid(Graph& g, ValueId a) {
  const Tensor& t = g.value(a);
  auto p = t.data();
  std::vector<float> out(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    // split by sign for stability
    if (p[i] >= 0.f) {
      out[i] = 1.f / (1.f + std::exp(-p[i]));
    } else {
      const float e = std::exp(p[i]);
      out[i] = e / (1.f + e);
    }
  }
  return Graph::emplace_unary(g, Op::Sigmoid, a, std::move(out), t.dims());
}

ValueId sum(Graph& g, ValueId a) {
  const Tensor& t = g.value(a);
  double acc = 0.0;
  for (float v : t.data()) acc += v;
  return Graph::emplace_unary(g, Op::Sum, a, {static_cast<float>(acc)}, Dims{1});
}

ValueId neg_xlogx_sum(Graph& g, ValueId a) {
  const Tensor& t = g.value(a);
  double acc = 0.0;
  for (float v : t.data()) {
    if (v < 0.f) throw ValueError("neg_xlogx_sum: negative input");
    if (v > 0.f) acc -= static_cast<double>(v) * std::log(static_cast<double>(v));
  }
  return Graph::emplace_unary(g, Op::NegXlogXSum, a, {static_cast<float>(acc)}, Dims{1});
}

ValueId reshape(Graph& g, ValueId a, Dims new_dims) {
  const Tensor& t = g.value(a);
  Tensor reshaped_value = t.reshaped(std::move(new_dims));
  Graph::Node n;
  n.op = Op::Reshape;
  n.in = {a, -1, -1};
  n.n_in = 1;
  n.requires_grad = g.requires_grad(a);
  n.value = std::move(reshaped_value);
  return g.emplace(std::move(n));
}

ValueId concat(Graph& g, ValueId a, ValueId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.dims().size() != 1 || tb.dims().size() != 1) {
    throw ShapeError("concat expects rank-1 tensors");
  }
  std::vector<float> out;
  out.reserve(static_cast<size_t>(ta.size() + tb.size()));
  out.insert(out.end(), ta.data().begin(), ta.data().end());
  out.insert(out.end(), tb.data().begin(), tb.data().end());
  Graph::Node n;
  n.op = Op::Concat;
  n.in = {a, b, -1};
  n.n_in = 2;
  n.requires_grad = g.requires_grad(a) || g.requires_grad(b);
  n.value =
      Tensor::from_data_unchecked({static_cast<int>(ta.size() + tb.size())}, std::move(out));
  return g.emplace(std::move(n));
}

}  // namespace tsynd
