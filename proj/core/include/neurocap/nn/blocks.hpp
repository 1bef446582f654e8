#pragma once

#include <memory>
#include <vector>

#include "neurocap/nn/attention.hpp"

namespace neurocap::nn {

class FeedForward : public Module {
 public:
  FeedForward() = default;
  FeedForward(const BlockConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  Linear& out_proj() { return down_; }

 private:
  Linear up_, down_;
};

/// Pre-norm encoder block: x + MHA(LN(x)), then + FFN(LN(.)).
class EncoderBlock : public Module {
 public:
  EncoderBlock(const BlockConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, std::size_t batch) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  MultiHeadAttention& attention() { return attn_; }
  FeedForward& ffn() { return ffn_; }

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  FeedForward ffn_;
};

/// Pre-norm decoder block: causal self-attention, cross-attention onto
/// `cond`, feed-forward; each sub-layer residual.
class DecoderBlock : public Module {
 public:
  DecoderBlock(const BlockConfig& cfg, Rng& rng);

  /// x is [batch*T x H], cond is [batch*S x H].
  Tensor forward(const Tensor& x, const Tensor& cond, std::size_t batch) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  MultiHeadAttention& self_attention() { return self_attn_; }
  MultiHeadAttention& cross_attention() { return cross_attn_; }

 private:
  LayerNorm ln1_, ln2_, ln3_;
  MultiHeadAttention self_attn_, cross_attn_;
  FeedForward ffn_;
};

/// cfg.layers encoder blocks followed by a final LayerNorm.
class TransformerEncoder : public Module {
 public:
  TransformerEncoder(const BlockConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, std::size_t batch) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  std::size_t depth() const { return blocks_.size(); }
  EncoderBlock& block(std::size_t i) { return *blocks_.at(i); }
  LayerNorm& final_norm() { return norm_; }

 private:
  std::vector<std::unique_ptr<EncoderBlock>> blocks_;
  LayerNorm norm_;
};

/// cfg.layers decoder blocks followed by a final LayerNorm.
class TransformerDecoder : public Module {
 public:
  TransformerDecoder(const BlockConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& cond, std::size_t batch) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  std::size_t depth() const { return blocks_.size(); }
  DecoderBlock& block(std::size_t i) { return *blocks_.at(i); }

 private:
  std::vector<std::unique_ptr<DecoderBlock>> blocks_;
  LayerNorm norm_;
};

}  // namespace neurocap::nn
