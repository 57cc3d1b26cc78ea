#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "tsynd/gradcheck.hpp"
#include "tsynd/graph.hpp"
#include "tsynd/rng.hpp"
#include "tsynd/tensor.hpp"

using namespace tsynd;

namespace {

Tensor random_tensor(SeededRng& rng, Dims dims, float scale = 1.f) {
  std::vector<float> data(static_cast<size_t>(dims_product(dims)));
  for (float& v : data) v = scale * static_cast<float>(rng.normal());
  return Tensor::from_data(std::move(dims), std::move(data));
}

// Positive entries keep every gradient coordinate of a linear-in-point loss
// bounded away from zero, which the relative-error formula needs in f32.
Tensor positive_tensor(SeededRng& rng, Dims dims, float lo = 0.5f, float hi = 1.5f) {
  std::vector<float> data(static_cast<size_t>(dims_product(dims)));
  for (float& v : data) v = rng.uniform_float(lo, hi);
  return Tensor::from_data(std::move(dims), std::move(data));
}

}  // namespace

TEST_CASE("tensor construction enforces invariants") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({2}, {1.f, NAN}), ValueError);
  CHECK_THROWS_AS(Tensor::from_data({0}, {}), ShapeError);
  CHECK_NOTHROW(Tensor::from_data_unchecked({2}, {1.f, INFINITY}));
  const Tensor t = Tensor::from_data({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.size() == 6);
  CHECK(t.dims() == Dims{2, 3});
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK(t.reshaped({3, 2}).bit_equal(t.reshaped({6}).reshaped({3, 2})));
}

TEST_CASE("tsyd tensor container round-trips exactly and rejects corruption") {
  SeededRng rng(7);
  const Tensor t = random_tensor(rng, {3, 4, 5});
  std::stringstream buf;
  write_tensor(buf, t);
  const Tensor back = read_tensor(buf);
  CHECK(back.bit_equal(t));

  SUBCASE("bad magic") {
    std::string s = buf.str().empty() ? std::string() : std::string();
    std::stringstream out;
    write_tensor(out, t);
    s = out.str();
    s[0] = 'X';
    std::stringstream in(s);
    CHECK_THROWS_AS(read_tensor(in), FormatError);
  }
  SUBCASE("bad version") {
    std::stringstream out;
    write_tensor(out, t);
    std::string s = out.str();
    s[4] = 0x02;
    std::stringstream in(s);
    CHECK_THROWS_AS(read_tensor(in), FormatError);
  }
  SUBCASE("truncated payload") {
    std::stringstream out;
    write_tensor(out, t);
    std::string s = out.str();
    std::stringstream in(s.substr(0, s.size() - 5));
    CHECK_THROWS_AS(read_tensor(in), FormatError);
  }
}

TEST_CASE("seeded rng is deterministic with separable child streams") {
  SeededRng a(123);
  SeededRng b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  SeededRng base(42);
  SeededRng ra = base.child("noise");
  SeededRng rb = base.child("dropout");
  bool differ = false;
  for (int i = 0; i < 16; ++i) differ = differ || (ra.next_u64() != rb.next_u64());
  CHECK(differ);

  SeededRng g1(9);
  SeededRng g2(9);
  CHECK(gaussian_sample(g1, {4, 4}).bit_equal(gaussian_sample(g2, {4, 4})));
}

TEST_CASE("gaussian_sample matches the statistical oracle") {
  SeededRng rng(2024);
  const Tensor t = gaussian_sample(rng, {100000});
  const double mean = mean_f64(t);
  double var = 0.0;
  for (float v : t.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(t.size());
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1.0) < 0.03);
}

TEST_CASE("elementwise ops: definitions and error paths") {
  Graph g;
  const ValueId x = g.leaf(Tensor::from_data({3}, {-1.f, 0.f, 2.f}));
  const Tensor r = g.value(relu(g, x));
  CHECK(r[0] == 0.f);
  CHECK(r[1] == 0.f);
  CHECK(r[2] == 2.f);

  const ValueId y = g.leaf(Tensor::from_data({3}, {1.f, -2.f, 0.5f}));
  const ValueId zeros = g.leaf(Tensor::zeros({3}));
  CHECK(g.value(add(g, y, zeros)).bit_equal(g.value(y)));

  const ValueId pos = g.leaf(Tensor::from_data({2}, {0.5f, 2.0f}));
  const Tensor round_trip = g.value(exp(g, log(g, pos)));
  CHECK(round_trip[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(round_trip[1] == doctest::Approx(2.0).epsilon(1e-6));

  const ValueId bad = g.leaf(Tensor::from_data({2}, {1.f, -1.f}));
  CHECK_THROWS_AS(log(g, bad), ValueError);
  const ValueId two = g.leaf(Tensor::zeros({2}));
  const ValueId three = g.leaf(Tensor::zeros({3}));
  CHECK_THROWS_AS(add(g, two, three), ShapeError);
}

TEST_CASE("matmul: identity, hand arithmetic, shape errors") {
  Graph g;
  const ValueId eye = g.leaf(Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  SeededRng rng(5);
  const Tensor m = random_tensor(rng, {3, 4});
  const ValueId mid = g.leaf(m);
  CHECK(g.value(matmul(g, eye, mid)).bit_equal(m));

  const ValueId a = g.leaf(Tensor::from_data({1, 2}, {1, 2}));
  const ValueId b = g.leaf(Tensor::from_data({2, 1}, {3, 4}));
  CHECK(g.value(matmul(g, a, b))[0] == 11.f);

  CHECK_THROWS_AS(matmul(g, a, a), ShapeError);
}

TEST_CASE("matmul gradient matches central differences") {
  SeededRng rng(11);
  const Tensor a0 = random_tensor(rng, {4, 5});
  const Tensor b0 = random_tensor(rng, {5, 3});
  const Tensor a_pos = positive_tensor(rng, {4, 5});
  const Tensor b_pos = positive_tensor(rng, {5, 3});
  const Tensor w = positive_tensor(rng, {4, 3});

  // check dA with B fixed
  const double err_a = finite_diff_check_graph(
      [&](Graph& g, ValueId x) {
        const ValueId b = g.leaf(b_pos);
        const ValueId ww = g.leaf(w);
        return sum(g, mul(g, matmul(g, x, b), ww));
      },
      a0, 1e-3);
  CHECK(err_a < 1e-3);

  const double err_b = finite_diff_check_graph(
      [&](Graph& g, ValueId x) {
        const ValueId a = g.leaf(a_pos);
        const ValueId ww = g.leaf(w);
        return sum(g, mul(g, matmul(g, a, x), ww));
      },
      b0, 1e-3);
  CHECK(err_b < 1e-3);
}

TEST_CASE("conv2d: identity kernel, hand arithmetic, extent errors") {
  Graph g;
  SeededRng rng(3);
  const Tensor img = random_tensor(rng, {1, 5, 5});
  const ValueId x = g.leaf(img);
  const ValueId k1 = g.leaf(Tensor::from_data({1, 1, 1, 1}, {1.f}));
  CHECK(g.value(conv2d(g, x, k1, 1, 0)).bit_equal(img.reshaped({1, 5, 5})));

  const ValueId small = g.leaf(Tensor::from_data({1, 2, 2}, {1, 2, 3, 4}));
  const ValueId ones = g.leaf(Tensor::full({1, 1, 2, 2}, 1.f));
  const Tensor out = g.value(conv2d(g, small, ones, 1, 0));
  CHECK(out.dims() == Dims{1, 1, 1});
  CHECK(out[0] == 10.f);

  // (5 + 0 - 2) % 2 != 0 -> no integral output extent
  const ValueId k2 = g.leaf(Tensor::full({1, 1, 2, 2}, 1.f));
  CHECK_THROWS_AS(conv2d(g, x, k2, 2, 0), ShapeError);
}

TEST_CASE("conv2d gradients match central differences") {
  SeededRng rng(17);
  const Tensor x0 = random_tensor(rng, {2, 8, 8});
  const Tensor k0 = random_tensor(rng, {3, 2, 3, 3}, 0.5f);
  const Tensor b0 = random_tensor(rng, {3}, 0.5f);
  const Tensor x_pos = positive_tensor(rng, {2, 8, 8});
  const Tensor k_pos = positive_tensor(rng, {3, 2, 3, 3});
  const Tensor w = positive_tensor(rng, {3, 8, 8});  // stride 1 pad 1 keeps extents

  auto build_with = [&](Graph& g, ValueId x, ValueId k, ValueId b) {
    return sum(g, mul(g, conv2d(g, x, k, b, 1, 1), g.leaf(w)));
  };
  const double err_x = finite_diff_check_graph(
      [&](Graph& g, ValueId x) {
        return build_with(g, x, g.leaf(k_pos), g.leaf(b0));
      },
      x0, 1e-3);
  const double err_k = finite_diff_check_graph(
      [&](Graph& g, ValueId k) {
        return build_with(g, g.leaf(x_pos), k, g.leaf(b0));
      },
      k0, 1e-3);
  const double err_b = finite_diff_check_graph(
      [&](Graph& g, ValueId b) {
        return build_with(g, g.leaf(x0), g.leaf(k0), b);
      },
      b0, 1e-3);
  CHECK(err_x < 1e-3);
  CHECK(err_k < 1e-3);
  CHECK(err_b < 1e-3);
}

TEST_CASE("transposed conv: single-tap case and adjoint identity") {
  Graph g;
  const Tensor kern = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  const ValueId z = g.leaf(Tensor::from_data({1, 1, 1}, {1.f}));
  const Tensor out = g.value(transposed_conv2d(g, z, g.leaf(kern), 2, 0));
  CHECK(out.dims() == Dims{1, 2, 2});
  CHECK(out.bit_equal(kern.reshaped({1, 2, 2})));

  // <conv(x,k), y> == <x, tconv(y,k)> on random instances
  SeededRng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor(rng, {2, 6, 6});
    const Tensor k = random_tensor(rng, {3, 2, 3, 3});
    Graph gg;
    const ValueId cx = conv2d(gg, gg.leaf(x), gg.leaf(k), 1, 1);  // -> [3,6,6]
    const Tensor y = random_tensor(rng, gg.value(cx).dims());
    const double lhs =
        static_cast<double>(gg.value(sum(gg, mul(gg, cx, gg.leaf(y))))[0]);
    const ValueId ty = transposed_conv2d(gg, gg.leaf(y), gg.leaf(k), 1, 1);
    const double rhs =
        static_cast<double>(gg.value(sum(gg, mul(gg, ty, gg.leaf(x))))[0]);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
  }
}

TEST_CASE("transposed conv gradients match central differences") {
  SeededRng rng(29);
  const Tensor x0 = random_tensor(rng, {3, 4, 4});
  const Tensor k0 = random_tensor(rng, {3, 2, 4, 4}, 0.5f);
  const Tensor x_pos = positive_tensor(rng, {3, 4, 4});
  const Tensor k_pos = positive_tensor(rng, {3, 2, 4, 4});
  const Tensor w = positive_tensor(rng, {2, 8, 8});  // stride 2 pad 1: 4 -> 8

  const double err_x = finite_diff_check_graph(
      [&](Graph& g, ValueId x) {
        return sum(g, mul(g, transposed_conv2d(g, x, g.leaf(k_pos), 2, 1), g.leaf(w)));
      },
      x0, 1e-3);
  const double err_k = finite_diff_check_graph(
      [&](Graph& g, ValueId k) {
        return sum(g, mul(g, transposed_conv2d(g, g.leaf(x_pos), k, 2, 1), g.leaf(w)));
      },
      k0, 1e-3);
  CHECK(err_x < 1e-3);
  CHECK(err_k < 1e-3);
}

TEST_CASE("softmax and sigmoid closed forms") {
  Graph g;
  const Tensor u = g.value(softmax(g, g.leaf(Tensor::zeros({4}))));
  for (int i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx(0.25).epsilon(1e-7));

  const Tensor s = g.value(sigmoid(g, g.leaf(Tensor::zeros({1}))));
  CHECK(s[0] == 0.5f);

  const Tensor two_third = g.value(
      softmax(g, g.leaf(Tensor::from_data({2}, {std::log(2.f), 0.f}))));
  CHECK(two_third[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(two_third[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("softmax outputs form a distribution on random logits") {
  SeededRng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    const Tensor logits = random_tensor(rng, {6}, 5.f);
    const Tensor p = g.value(softmax(g, g.leaf(logits)));
    double total = 0.0;
    for (float v : p.data()) {
      CHECK(v > 0.f);
      CHECK(v < 1.f);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax and log_softmax gradients match central differences") {
  SeededRng rng(37);
  const Tensor logits = random_tensor(rng, {5});
  // spread weights keep s_i * (w_i - <w, s>) away from zero
  const Tensor w = Tensor::from_data({5}, {0.4f, 0.9f, 1.6f, 2.5f, 3.6f});
  const double err_s = finite_diff_check_graph(
      [&](Graph& g, ValueId x) { return sum(g, mul(g, softmax(g, x), g.leaf(w))); },
      logits, 1e-2);
  const double err_ls = finite_diff_check_graph(
      [&](Graph& g, ValueId x) {
        return sum(g, mul(g, log_softmax(g, x), g.leaf(w)));
      },
      logits, 1e-2);
  const double err_sig = finite_diff_check_graph(
      [&](Graph& g, ValueId x) { return sum(g, mul(g, sigmoid(g, x), g.leaf(w))); },
      logits, 1e-2);
  CHECK(err_s < 1e-3);
  CHECK(err_ls < 1e-3);
  CHECK(err_sig < 1e-3);
}

TEST_CASE("backward: linear and zero cases, usage errors") {
  {
    Graph g;
    const ValueId x = g.leaf(Tensor::from_data({4}, {1, 2, 3, 4}), true);
    g.backward(sum(g, x));
    const Tensor gx = g.grad(x);
    for (int i = 0; i < 4; ++i) CHECK(gx[i] == 1.f);
  }
  {
    Graph g;
    const ValueId x = g.leaf(Tensor::from_data({3}, {1, 2, 3}), true);
    const ValueId zero = scale(g, sum(g, relu(g, x)), 0.f);
    g.backward(zero);
    const Tensor gx = g.grad(x);
    for (int i = 0; i < 3; ++i) CHECK(gx[i] == 0.f);
  }
  {
    Graph g;
    const ValueId x = g.leaf(Tensor::from_data({3}, {1, 2, 3}), true);
    const ValueId y = relu(g, x);
    CHECK_THROWS_AS(g.backward(y), ValueError);  // non-scalar loss
    const ValueId l = sum(g, y);
    g.backward(l);
    CHECK_THROWS_AS(g.backward(l), ValueError);  // double backward
    g.reset_gradients();
    CHECK_NOTHROW(g.backward(l));
  }
}

TEST_CASE("backward populates gradients with matching extents on reachable nodes") {
  SeededRng rng(41);
  Graph g;
  const ValueId x = g.leaf(random_tensor(rng, {2, 3}), true);
  const ValueId w = g.leaf(random_tensor(rng, {3, 2}), true);
  const ValueId h = relu(g, matmul(g, x, w));
  const ValueId l = sum(g, mul(g, h, h));
  g.backward(l);
  for (ValueId id = 0; id <= l; ++id) {
    CHECK(g.has_grad(id));
    CHECK(g.grad(id).dims() == g.value(id).dims());
  }
}

TEST_CASE("composed conv->relu->dense->softmax->cross-entropy gradient check") {
  SeededRng rng(43);
  const Tensor img = positive_tensor(rng, {1, 6, 6}, 0.2f, 1.0f);
  const Tensor k = random_tensor(rng, {2, 1, 3, 3}, 0.3f);
  const Tensor kb = positive_tensor(rng, {2}, 0.4f, 0.8f);  // keeps relu units active
  const Tensor wd = random_tensor(rng, {3, 2 * 6 * 6}, 0.05f);
  const Tensor bd = random_tensor(rng, {3}, 0.1f);
  const Tensor onehot = Tensor::from_data({3}, {0.f, 1.f, 0.f});

  auto net = [&](Graph& g, ValueId xi, ValueId ki, ValueId kbi, ValueId wdi,
                 ValueId bdi) {
    const ValueId c = relu(g, conv2d(g, xi, ki, kbi, 1, 1));
    const ValueId flat = reshape(g, c, {2 * 6 * 6, 1});
    const ValueId logits =
        add(g, reshape(g, matmul(g, wdi, flat), {3}), bdi);
    return neg(g, sum(g, mul(g, log_softmax(g, logits), g.leaf(onehot))));
  };

  struct Case {
    const Tensor* point;
    int which;
  };
  const Case cases[] = {{&img, 0}, {&k, 1}, {&kb, 2}, {&wd, 3}, {&bd, 4}};
  for (const auto& c : cases) {
    const double err = finite_diff_check_graph(
        [&](Graph& g, ValueId p) {
          ValueId xi = c.which == 0 ? p : g.leaf(img);
          ValueId ki = c.which == 1 ? p : g.leaf(k);
          ValueId kbi = c.which == 2 ? p : g.leaf(kb);
          ValueId wdi = c.which == 3 ? p : g.leaf(wd);
          ValueId bdi = c.which == 4 ? p : g.leaf(bd);
          return net(g, xi, ki, kbi, wdi, bdi);
        },
        *c.point, 1e-2);
    CAPTURE(c.which);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("finite_diff_check closed forms") {
  // f(x) = x^2 at x = 3
  auto square = [](const Tensor& t) {
    return static_cast<double>(t[0]) * t[0];
  };
  const Tensor p = Tensor::from_data({1}, {3.f});
  const Tensor analytic = Tensor::from_data({1}, {6.f});
  CHECK(finite_diff_check(square, p, 1e-3, analytic) < 1e-6);

  auto constant = [](const Tensor&) { return 5.0; };
  const Tensor zero_grad = Tensor::zeros({1});
  CHECK(finite_diff_check(constant, p, 1e-3, zero_grad) == 0.0);
}

TEST_CASE("graph computations parameterized by seed are bit-identical") {
  auto run = [](std::uint64_t seed) {
    SeededRng rng(seed);
    Graph g;
    const ValueId x = g.leaf(random_tensor(rng, {2, 7, 7}), true);
    const ValueId k = g.leaf(random_tensor(rng, {4, 2, 3, 3}));
    const ValueId c = relu(g, conv2d(g, x, k, 2, 1));
    const ValueId l = sum(g, mul(g, c, c));
    g.backward(l);
    std::pair<Tensor, Tensor> out{g.value(l), g.grad(x)};
    return out;
  };
  const auto a = run(99);
  const auto b = run(99);
  CHECK(a.first.bit_equal(b.first));
  CHECK(a.second.bit_equal(b.second));
}

TEST_CASE("neg_xlogx_sum handles zero entries and matches entropy") {
  Graph g;
  const ValueId p = g.leaf(Tensor::from_data({3}, {0.5f, 0.5f, 0.f}));
  const float h = g.value(neg_xlogx_sum(g, p))[0];
  CHECK(h == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  SeededRng rng(47);
  const Tensor probs = Tensor::from_data({3}, {0.2f, 0.3f, 0.5f});
  const double err = finite_diff_check_graph(
      [&](Graph& g2, ValueId x) { return neg_xlogx_sum(g2, x); }, probs, 1e-4);
  CHECK(err < 1e-3);
}
