#pragma once

#include "neurocap/nn/config.hpp"
#include "neurocap/nn/layers.hpp"

namespace neurocap::nn {

/// Scaled dot-product attention over a batch of sequences, all heads at once.
///
/// q is [batch*Tq x H]; k and v are [batch*Tk x H]. Head h reads columns
/// [h*d, (h+1)*d) with d = H/heads and the scores are scaled by 1/sqrt(d). In
/// causal mode Tq must equal Tk and query t only sees keys 0..t. Differentiable
/// in q, k and v.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                      std::size_t heads, AttentionMaskMode mode);

/// Multi-head attention with separate Q/K/V/output projections. Serves as
/// self-attention (q_in == kv_in) and cross-attention. The key projection has
/// no bias: a per-query constant shift of the scores cancels in the softmax.
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const BlockConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& q_in, const Tensor& kv_in, std::size_t batch, AttentionMaskMode mode) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  Linear& value_proj() { return wv_; }
  Linear& out_proj() { return wo_; }

 private:
  BlockConfig cfg_;
  Linear wq_, wk_, wv_, wo_;
};

}  // namespace neurocap::nn
