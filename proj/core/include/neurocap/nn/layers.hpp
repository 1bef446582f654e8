#pragma once

#include "neurocap/nn/module.hpp"

namespace neurocap::nn {

/// y = x W + b with W stored [in x out].
class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  std::size_t in_features() const { return weight_.rows(); }
  std::size_t out_features() const { return weight_.cols(); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width, double eps = 1e-5);

  Tensor forward(const Tensor& x) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

 private:
  Tensor gamma_;
  Tensor beta_;
  double eps_ = 1e-5;
};

}  // namespace neurocap::nn
