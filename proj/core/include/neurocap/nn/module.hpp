#pragma once

#include <functional>
#include <string>
#include <vector>

#include "neurocap/autodiff/tensor.hpp"
#include "neurocap/rng.hpp"

namespace neurocap::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;

/// Base for anything that owns parameters. Subclasses enumerate their
/// parameters (and children's, with a dotted prefix) in a fixed order; that
/// order is what checkpoints and optimizers rely on.
class Module {
 public:
  virtual ~Module() = default;

  virtual void visit_parameters(const ParamVisitor& fn, const std::string& prefix) = 0;

  std::vector<NamedTensor> named_parameters(const std::string& prefix = "");
  std::size_t parameter_count();
  /// Sets requires_grad on every parameter.
  void set_trainable(bool trainable);
  void zero_grad();
};

namespace init {

Tensor xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out);
Tensor normal(Rng& rng, Shape shape, double stddev);

}  // namespace init

}  // namespace neurocap::nn
