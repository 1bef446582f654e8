#include "neurocap/train/optim.hpp"

#include <cmath>

#include "neurocap/error.hpp"

namespace neurocap::train {

void AdamWConfig::validate() const {
  if (!(lr > 0.0)) throw ParameterError("AdamW: lr must be > 0");
  if (weight_decay < 0.0) throw ParameterError("AdamW: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ParameterError("AdamW: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ParameterError("AdamW: eps must be > 0");
}

AdamW::AdamW(std::vector<nn::NamedTensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  for (auto& p : params_) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in '" + p.name + "'");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k].tensor;
    if (!t.requires_grad()) continue;
    auto data = t.mutable_data();
    const bool has_grad = t.has_grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? t.grad()[i] : 0.0;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * data[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

double clip_grad_norm(const std::vector<nn::NamedTensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto p : params) {
      if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace neurocap::train
