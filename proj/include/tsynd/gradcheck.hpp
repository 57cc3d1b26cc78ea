#pragma once

#include <functional>

#include "tsynd/graph.hpp"

namespace tsynd {

// Central-difference gradient check. Returns the max over coordinates of
//   |analytic - numeric| / max(1e-8, |numeric|)
// where numeric = (f(x+h) - f(x-h)) / (x_plus - x_minus) with the perturbed
// coordinates rounded to f32 before evaluation.
double finite_diff_check(const std::function<double(const Tensor&)>& f,
                         const Tensor& point, double h, const Tensor& analytic_grad);

// Convenience for graph-built scalars: `build` maps a leaf id to a loss id.
// The analytic gradient comes from backward(); the numeric side re-runs the
// forward pass at perturbed points.
double finite_diff_check_graph(const std::function<ValueId(Graph&, ValueId)>& build,
                               const Tensor& point, double h);

}  // namespace tsynd
