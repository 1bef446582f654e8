#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neurocap/nn/module.hpp"
#include "neurocap/rng.hpp"
#include "neurocap/train/optim.hpp"

namespace neurocap::train {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointManifest = "manifest.json";
inline constexpr std::string_view kCheckpointBlob = "tensors.bin";

/// Storage type of the blob. f64 keeps training state exact across a resume.
enum class Dtype { kF32, kF64 };
std::string to_string(Dtype d);
Dtype parse_dtype(const std::string& s);

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// In-memory form of a checkpoint directory: manifest.json + tensors.bin.
struct Checkpoint {
  std::string kind;  // "mbm", "align", "qa", ...
  nlohmann::ordered_json config;
  std::size_t step = 0;
  std::optional<std::string> rng_state;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
  std::vector<CheckpointTensor> tensors;

  /// Index of `name` or nullptr.
  const CheckpointTensor* find(std::string_view name) const;

  /// Appends every parameter of `module`, names prefixed.
  void add_module(nn::Module& module, const std::string& prefix = "");
  /// Copies tensors named prefix+param into `module`. Every parameter must
  /// be present with the same shape (FormatError / DimensionError).
  void restore_module(nn::Module& module, const std::string& prefix = "") const;

  /// Optimizer moments as opt.m.<param> / opt.v.<param>, step count in extra.
  void add_optimizer(AdamW& opt);
  void restore_optimizer(AdamW& opt) const;

  void set_rng(const Rng& rng) { rng_state = rng.serialize(); }
  /// Throws FormatError when the checkpoint carries no rng state.
  void restore_rng(Rng& rng) const;
};

/// Writes `dir`/manifest.json and `dir`/tensors.bin, creating `dir`.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck, Dtype dtype = Dtype::kF64);
/// Reads and validates a checkpoint directory: version, offsets, blob size.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace neurocap::train
