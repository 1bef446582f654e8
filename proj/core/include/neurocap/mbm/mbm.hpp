#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "neurocap/nn/blocks.hpp"
#include "neurocap/nn/embed.hpp"
#include "neurocap/train/optim.hpp"

namespace neurocap::mbm {

struct MaskPlan {
  std::size_t num_patches = 0;
  std::vector<std::size_t> masked_ids;  // sorted, unique
  double ratio = 0.0;

  /// One flag per patch, true when masked.
  std::vector<bool> row_mask() const;
};

/// floor(ratio * num_patches) clamped to [1, num_patches - 1].
std::size_t mask_count(std::size_t num_patches, double ratio);
/// Uniform subset without replacement, deterministic in seed.
MaskPlan make_mask(std::size_t num_patches, double ratio, std::uint64_t seed);

/// Zeros the masked rows of a single sample's [P x S] patch matrix.
Tensor apply_mask(const Tensor& patches, const MaskPlan& plan);
/// Same for a batch stacked as [batch*P x S], one plan per sample.
Tensor apply_mask(const Tensor& patches, const std::vector<MaskPlan>& plans);

/// Patchified voxel vector, z-scored over the real (non-padding) voxels.
Tensor target_patches(std::span<const double> voxels, std::size_t patch_size);
Tensor target_patches_batch(const std::vector<std::span<const double>>& samples, std::size_t patch_size);

/// Patch embedding plus transformer encoder; shared by both training stages.
class FmriEncoder : public nn::Module {
 public:
  FmriEncoder(std::size_t n_voxels, std::size_t patch_size, const nn::BlockConfig& cfg, Rng& rng,
              double pos_std = 1.0);

  /// patches: [batch*Np x P] -> tokens [batch*Np x H].
  Tensor forward(const Tensor& patches, std::size_t batch) const;
  /// Patchifies and encodes raw voxel vectors.
  Tensor encode(const std::vector<std::span<const double>>& voxels) const;
  void visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) override;

  std::size_t n_voxels() const { return embed_.num_voxels(); }
  std::size_t patch_size() const { return embed_.patch_size(); }
  std::size_t num_patches() const { return embed_.num_patches(); }
  std::size_t hidden() const { return cfg_.hidden; }
  std::size_t depth() const { return encoder_.depth(); }
  nn::PatchEmbed1d& embed() { return embed_; }
  nn::TransformerEncoder& transformer() { return encoder_; }

 private:
  nn::BlockConfig cfg_;
  nn::PatchEmbed1d embed_;
  nn::TransformerEncoder encoder_;
};

struct MbmConfig {
  std::size_t n_voxels = 512;
  std::size_t patch_size = 16;
  nn::BlockConfig encoder{64, 4, 4, 6};
  nn::BlockConfig decoder{32, 4, 4, 2};
  double mask_ratio = 0.75;
  /// Init scale of both position tables. Masked tokens carry nothing but
  /// their position, so a table at the usual 0.02 scale trains very slowly.
  double pos_std = 1.0;

  void validate() const;
};

/// Masked brain model: encoder, width reduction, a shallow decoder with its own
/// positions, and a head back to patch values.
class MbmModel : public nn::Module {
 public:
  MbmModel(const MbmConfig& cfg, Rng& rng);

  /// masked_patches: [batch*Np x P] -> reconstruction of the same shape.
  Tensor forward(const Tensor& masked_patches, std::size_t batch) const;
  void visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) override;

  const MbmConfig& config() const { return cfg_; }
  FmriEncoder& encoder() { return encoder_; }
  const FmriEncoder& encoder() const { return encoder_; }

 private:
  MbmConfig cfg_;
  FmriEncoder encoder_;
  nn::Linear enc_to_dec_;
  Tensor dec_pos_;
  nn::TransformerEncoder decoder_;
  nn::Linear head_;
};

/// Reconstruction of one voxel vector under `plan`: [Np x P].
Tensor mbm_forward(std::span<const double> voxels, const MaskPlan& plan, const MbmModel& model);

/// MSE over the masked rows only.
Tensor mbm_loss(const Tensor& recon, const Tensor& target, const MaskPlan& plan);
Tensor mbm_loss(const Tensor& recon, const Tensor& target, const std::vector<MaskPlan>& plans);

struct PretrainConfig {
  train::AdamWConfig optim{5e-5, 0.05, 0.9, 0.95, 1e-8};
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

/// Step-at-a-time pretraining loop. Batches and masks are drawn from one
/// seeded generator, so (model, optimizer, rng, step) is the complete state.
class MbmTrainer {
 public:
  MbmTrainer(MbmModel& model, std::vector<std::span<const double>> corpus, const PretrainConfig& cfg);

  /// Runs one optimizer step and returns its loss. Throws NumericError naming
  /// the step when the loss or a gradient is non-finite.
  double step();
  std::size_t steps_done() const { return step_; }

  Rng& rng() { return rng_; }
  train::AdamW& optimizer() { return opt_; }
  void set_steps_done(std::size_t s) { step_ = s; }

 private:
  MbmModel& model_;
  std::vector<std::span<const double>> corpus_;
  PretrainConfig cfg_;
  Rng rng_;
  train::AdamW opt_;
  std::size_t step_ = 0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Runs cfg.steps trainer steps; returns the per-step loss trace.
std::vector<double> pretrain(MbmModel& model, const std::vector<std::span<const double>>& corpus,
                             const PretrainConfig& cfg, const StepCallback& on_step = {});

struct MaskedEval {
  double mse = 0.0;            // mean squared error over masked entries
  double baseline = 0.0;       // mean squared target over the same entries (~1 after z-scoring)
  double mean_baseline = 0.0;  // error of predicting the per-position sample mean
  std::size_t entries = 0;
};

/// Masked-patch reconstruction error on `samples`, one seeded mask per sample.
MaskedEval evaluate_masked(const MbmModel& model, const std::vector<std::span<const double>>& samples,
                           std::uint64_t seed, std::size_t batch_size = 32);

}  // namespace neurocap::mbm
