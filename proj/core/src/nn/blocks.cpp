#include "neurocap/nn/blocks.hpp"

#include "neurocap/autodiff/ops.hpp"

namespace neurocap::nn {

FeedForward::FeedForward(const BlockConfig& cfg, Rng& rng)
    : up_(cfg.hidden, cfg.hidden * cfg.ff_mult, rng), down_(cfg.hidden * cfg.ff_mult, cfg.hidden, rng) {}

Tensor FeedForward::forward(const Tensor& x) const { return down_.forward(ops::gelu(up_.forward(x))); }

void FeedForward::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  up_.visit_parameters(fn, prefix + "up.");
  down_.visit_parameters(fn, prefix + "down.");
}

EncoderBlock::EncoderBlock(const BlockConfig& cfg, Rng& rng)
    : ln1_(cfg.hidden), ln2_(cfg.hidden), attn_(cfg, rng), ffn_(cfg, rng) {}

Tensor EncoderBlock::forward(const Tensor& x, std::size_t batch) const {
  Tensor h = ln1_.forward(x);
  Tensor y = ops::add(x, attn_.forward(h, h, batch, AttentionMaskMode::kNone));
  return ops::add(y, ffn_.forward(ln2_.forward(y)));
}

void EncoderBlock::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  ln1_.visit_parameters(fn, prefix + "ln1.");
  attn_.visit_parameters(fn, prefix + "attn.");
  ln2_.visit_parameters(fn, prefix + "ln2.");
  ffn_.visit_parameters(fn, prefix + "ffn.");
}

DecoderBlock::DecoderBlock(const BlockConfig& cfg, Rng& rng)
    : ln1_(cfg.hidden),
      ln2_(cfg.hidden),
      ln3_(cfg.hidden),
      self_attn_(cfg, rng),
      cross_attn_(cfg, rng),
      ffn_(cfg, rng) {}

Tensor DecoderBlock::forward(const Tensor& x, const Tensor& cond, std::size_t batch) const {
  Tensor h = ln1_.forward(x);
  Tensor y = ops::add(x, self_attn_.forward(h, h, batch, AttentionMaskMode::kCausal));
  y = ops::add(y, cross_attn_.forward(ln2_.forward(y), cond, batch, AttentionMaskMode::kNone));
  return ops::add(y, ffn_.forward(ln3_.forward(y)));
}

void DecoderBlock::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  ln1_.visit_parameters(fn, prefix + "ln1.");
  self_attn_.visit_parameters(fn, prefix + "self_attn.");
  ln2_.visit_parameters(fn, prefix + "ln2.");
  cross_attn_.visit_parameters(fn, prefix + "cross_attn.");
  ln3_.visit_parameters(fn, prefix + "ln3.");
  ffn_.visit_parameters(fn, prefix + "ffn.");
}

TransformerEncoder::TransformerEncoder(const BlockConfig& cfg, Rng& rng) : norm_(cfg.hidden) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.layers; ++i) blocks_.push_back(std::make_unique<EncoderBlock>(cfg, rng));
}

Tensor TransformerEncoder::forward(const Tensor& x, std::size_t batch) const {
  Tensor h = x;
  for (const auto& b : blocks_) h = b->forward(h, batch);
  return norm_.forward(h);
}

void TransformerEncoder::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i]->visit_parameters(fn, prefix + "blocks." + std::to_string(i) + ".");
  }
  norm_.visit_parameters(fn, prefix + "norm.");
}

TransformerDecoder::TransformerDecoder(const BlockConfig& cfg, Rng& rng) : norm_(cfg.hidden) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.layers; ++i) blocks_.push_back(std::make_unique<DecoderBlock>(cfg, rng));
}

Tensor TransformerDecoder::forward(const Tensor& x, const Tensor& cond, std::size_t batch) const {
  Tensor h = x;
  for (const auto& b : blocks_) h = b->forward(h, cond, batch);
  return norm_.forward(h);
}

void TransformerDecoder::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i]->visit_parameters(fn, prefix + "blocks." + std::to_string(i) + ".");
  }
  norm_.visit_parameters(fn, prefix + "norm.");
}

}  // namespace neurocap::nn
