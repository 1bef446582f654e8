#pragma once

#include <cstddef>

namespace neurocap::nn {

/// Width/depth description of one transformer stack.
struct BlockConfig {
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  std::size_t layers = 2;

  std::size_t head_dim() const { return hidden / heads; }
  /// Throws ParameterError unless every field is >= 1 and heads divides hidden.
  void validate() const;

  bool operator==(const BlockConfig&) const = default;
};

enum class AttentionMaskMode { kNone, kCausal };

}  // namespace neurocap::nn
