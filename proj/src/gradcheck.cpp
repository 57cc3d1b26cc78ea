#include "tsynd/gradcheck.hpp"

#include <cmath>

namespace tsynd {

double finite_diff_check(const std::function<double(const Tensor&)>& f,
                         const Tensor& point, double h, const Tensor& analytic_grad) {
  if (!point.same_dims(analytic_grad)) {
    throw ShapeError("finite_diff_check: gradient extents " +
                     dims_to_string(analytic_grad.dims()) + " do not match point " +
                     dims_to_string(point.dims()));
  }
  std::vector<float> work(point.data().begin(), point.data().end());
  double max_rel = 0.0;
  for (size_t i = 0; i < work.size(); ++i) {
    const float orig = work[i];
    const float xp = static_cast<float>(static_cast<double>(orig) + h);
    const float xm = static_cast<float>(static_cast<double>(orig) - h);
    work[i] = xp;
    const double fp = f(Tensor::from_data_unchecked(point.dims(), work));
    work[i] = xm;
    const double fm = f(Tensor::from_data_unchecked(point.dims(), work));
    work[i] = orig;
    const double denom = static_cast<double>(xp) - static_cast<double>(xm);
    const double numeric = (fp - fm) / denom;
    const double analytic = analytic_grad[static_cast<std::int64_t>(i)];
    const double rel =
        std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

double finite_diff_check_graph(const std::function<ValueId(Graph&, ValueId)>& build,
                               const Tensor& point, double h) {
  Graph g;
  const ValueId x = g.leaf(point, /*requires_grad=*/true);
  const ValueId loss = build(g, x);
  g.backward(loss);
  // A pruned-away gradient means the loss is constant in x.
  const Tensor analytic =
      g.has_grad(x) ? g.grad(x) : Tensor::zeros(point.dims());
  auto eval = [&](const Tensor& p) {
    Graph fg;
    const ValueId px = fg.leaf(p, /*requires_grad=*/false);
    const ValueId l = build(fg, px);
    return static_cast<double>(fg.value(l)[0]);
  };
  return finite_diff_check(eval, point, h, analytic);
}

}  // namespace tsynd
