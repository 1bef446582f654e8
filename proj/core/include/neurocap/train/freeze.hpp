#pragma once

#include <string>
#include <vector>

#include "neurocap/align/model.hpp"

namespace neurocap::train {

struct FreezePolicy {
  enum class Kind { kFrozenWhole, kFrozenPartly, kNone };

  Kind kind = Kind::kFrozenPartly;
  /// Trainable tail blocks for kFrozenPartly; 0 selects default_tail(depth).
  std::size_t tail = 0;

  static FreezePolicy frozen_whole() { return {Kind::kFrozenWhole, 0}; }
  static FreezePolicy frozen_partly(std::size_t k = 0) { return {Kind::kFrozenPartly, k}; }
  static FreezePolicy none() { return {Kind::kNone, 0}; }

  /// "frozen_whole", "frozen_partly", "frozen_partly:K" or "none".
  static FreezePolicy parse(const std::string& text);
  std::string str() const;

  /// ceil(depth * 10 / 24): the paper's 10-of-24 trainable tail, rescaled.
  static std::size_t default_tail(std::size_t depth);
  std::size_t resolved_tail(std::size_t depth) const;

  bool operator==(const FreezePolicy&) const = default;
};

struct FreezePartition {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
};

/// Sets requires_grad on every model parameter. The projector, brain decoder
/// and temperature always train; the fMRI encoder follows the policy (for
/// kFrozenPartly the last k blocks and the encoder's final norm train).
/// Throws ParameterError when k exceeds the encoder depth.
FreezePartition apply_freeze(align::NeuroCapModel& model, const FreezePolicy& policy);

}  // namespace neurocap::train
