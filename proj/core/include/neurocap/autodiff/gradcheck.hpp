#pragma once

#include <functional>
#include <vector>

#include "neurocap/autodiff/tensor.hpp"

namespace neurocap {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, for every element of every tensor in `wrt`.
///
/// Relative error per element is |a - n| / max(|a|, |n|, 1e-8). The tensors in
/// `wrt` are perturbed in place and restored; their existing gradients are
/// replaced. Throws NumericError if f produces a non-finite value.
GradCheckResult gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> wrt, double h);

/// Single-input form: f is evaluated on a requires-grad copy of x.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace neurocap
