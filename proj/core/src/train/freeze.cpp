#include "neurocap/train/freeze.hpp"

#include "neurocap/error.hpp"

namespace neurocap::train {

FreezePolicy FreezePolicy::parse(const std::string& text) {
  if (text == "frozen_whole") return frozen_whole();
  if (text == "none") return none();
  if (text == "frozen_partly") return frozen_partly();
  const std::string prefix = "frozen_partly:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string num = text.substr(prefix.size());
    if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) {
      throw ParameterError("freeze policy: bad block count in '" + text + "'");
    }
    return frozen_partly(std::stoul(num));
  }
  throw ParameterError("freeze policy: expected frozen_whole, frozen_partly[:K] or none, got '" + text + "'");
}

std::string FreezePolicy::str() const {
  switch (kind) {
    case Kind::kFrozenWhole:
      return "frozen_whole";
    case Kind::kNone:
      return "none";
    case Kind::kFrozenPartly:
      break;
  }
  return tail == 0 ? "frozen_partly" : "frozen_partly:" + std::to_string(tail);
}

std::size_t FreezePolicy::default_tail(std::size_t depth) { return (depth * 10 + 23) / 24; }

std::size_t FreezePolicy::resolved_tail(std::size_t depth) const {
  const std::size_t k = tail == 0 ? default_tail(depth) : tail;
  if (k > depth) {
    throw ParameterError("freeze policy: " + std::to_string(k) + " trainable blocks requested, encoder has " +
                         std::to_string(depth));
  }
  return k;
}

FreezePartition apply_freeze(align::NeuroCapModel& model, const FreezePolicy& policy) {
  auto& enc = model.fmri_encoder();
  const std::size_t depth = enc.depth();
  model.set_trainable(true);
  switch (policy.kind) {
    case FreezePolicy::Kind::kNone:
      break;
    case FreezePolicy::Kind::kFrozenWhole:
      enc.set_trainable(false);
      break;
    case FreezePolicy::Kind::kFrozenPartly: {
      const std::size_t k = policy.resolved_tail(depth);
      enc.set_trainable(false);
      for (std::size_t i = depth - k; i < depth; ++i) enc.transformer().block(i).set_trainable(true);
      if (k > 0) enc.transformer().final_norm().set_trainable(true);
      break;
    }
  }
  FreezePartition out;
  for (auto& p : model.named_parameters()) {
    (p.tensor.requires_grad() ? out.trainable : out.frozen).push_back(p.name);
  }
  return out;
}

}  // namespace neurocap::train
