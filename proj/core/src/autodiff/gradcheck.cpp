#include "neurocap/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "neurocap/error.hpp"

namespace neurocap {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("gradcheck: function produced a non-finite value");
  return v;
}

}  // namespace

GradCheckResult gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> wrt, double h) {
  if (!(h > 0.0)) throw ParameterError("gradcheck: step h must be positive");
  for (Tensor& t : wrt) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  tape::reset();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("gradcheck: function produced a non-finite value");
  backward(loss);

  GradCheckResult result;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor& t = wrt[ti];
    const std::vector<double> analytic = t.grad_or_zero();
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = eval_scalar(f);
      values[i] = saved - h;
      const double down = eval_scalar(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = ti;
        result.worst_index = i;
      }
    }
  }
  return result;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.clone(true);
  return gradcheck([&] { return f(leaf); }, {leaf}, h).max_rel_error;
}

}  // namespace neurocap
