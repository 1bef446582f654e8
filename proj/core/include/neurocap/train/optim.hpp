#pragma once

#include <cstdint>
#include <vector>

#include "neurocap/nn/module.hpp"

namespace neurocap::train {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;

  void validate() const;
};

/// Decoupled-weight-decay Adam with bias correction. Parameters whose
/// requires_grad flag is off are skipped entirely: no decay, no state update.
class AdamW {
 public:
  AdamW(std::vector<nn::NamedTensor> params, AdamWConfig cfg);

  /// One update from the gradients currently stored on the parameters. A
  /// trainable parameter without a gradient is treated as having zero
  /// gradient. Throws NumericError naming the parameter on a non-finite grad.
  void step();
  void zero_grad();

  std::int64_t steps_taken() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<nn::NamedTensor>& params() const { return params_; }

  // Moment buffers, parallel to params(); exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps_taken(std::int64_t s) { step_ = s; }

 private:
  std::vector<nn::NamedTensor> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_ = 0;
};

/// Scales all trainable gradients so their global L2 norm is at most
/// max_norm. Returns the norm before scaling.
double clip_grad_norm(const std::vector<nn::NamedTensor>& params, double max_norm);

}  // namespace neurocap::train
