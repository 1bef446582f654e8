#include "neurocap/nn/module.hpp"

#include <cmath>

#include "neurocap/error.hpp"
#include "neurocap/nn/config.hpp"
#include "neurocap/nn/layers.hpp"
#include "neurocap/autodiff/ops.hpp"

namespace neurocap::nn {

void BlockConfig::validate() const {
  if (hidden == 0 || heads == 0 || ff_mult == 0 || layers == 0) {
    throw ParameterError("BlockConfig: every field must be >= 1");
  }
  if (hidden % heads != 0) {
    throw ParameterError("BlockConfig: hidden " + std::to_string(hidden) + " not divisible by heads " +
                         std::to_string(heads));
  }
}

std::vector<NamedTensor> Module::named_parameters(const std::string& prefix) {
  std::vector<NamedTensor> out;
  visit_parameters([&](const std::string& name, Tensor& t) { out.push_back({name, t}); }, prefix);
  return out;
}

std::size_t Module::parameter_count() {
  std::size_t n = 0;
  visit_parameters([&](const std::string&, Tensor& t) { n += t.numel(); }, "");
  return n;
}

void Module::set_trainable(bool trainable) {
  visit_parameters([&](const std::string&, Tensor& t) { t.set_requires_grad(trainable); }, "");
}

void Module::zero_grad() {
  visit_parameters([](const std::string&, Tensor& t) { t.clear_grad(); }, "");
}

namespace init {

Tensor xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace init

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
    : weight_(init::xavier_uniform(rng, in, out)) {
  if (bias) bias_ = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.dim() != 2 || x.cols() != weight_.rows()) {
    throw DimensionError("Linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight_.shape()));
  }
  Tensor y = ops::matmul(x, weight_);
  return bias_.defined() ? ops::add_bias(y, bias_) : y;
}

void Linear::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "weight", weight_);
  if (bias_.defined()) fn(prefix + "bias", bias_);
}

LayerNorm::LayerNorm(std::size_t width, double eps)
    : gamma_(Tensor::full({width}, 1.0, true)), beta_(Tensor::zeros({width}, true)), eps_(eps) {}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layer_norm(x, gamma_, beta_, eps_); }

void LayerNorm::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "gamma", gamma_);
  fn(prefix + "beta", beta_);
}

}  // namespace neurocap::nn
