#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "neurocap/align/model.hpp"
#include "neurocap/data/synthetic.hpp"
#include "neurocap/train/config.hpp"

namespace neurocap::train {

struct AlignStep {
  double total = 0.0;
  std::optional<double> fi;
  double ft = 0.0;
  double cap = 0.0;
};

/// Assembles the batch for `ids`: voxels, image features (tri-modal mode only)
/// and the tokenized primary caption.
align::TriModalBatch make_batch(const data::Dataset& ds, const std::vector<std::size_t>& ids, ModalityMode mode);

/// Stage-2 loop over the dataset's train split. Freezing is applied at
/// construction; (model, optimizer, rng, step) is the complete state.
class AlignTrainer {
 public:
  AlignTrainer(align::NeuroCapModel& model, const data::Dataset& ds, const TrainConfig& cfg);
  /// Trains on an explicit id list instead of the train split.
  AlignTrainer(align::NeuroCapModel& model, const data::Dataset& ds, const TrainConfig& cfg,
               std::vector<std::size_t> ids);

  AlignStep step();
  std::size_t steps_done() const { return step_; }
  const FreezePartition& partition() const { return partition_; }

  Rng& rng() { return rng_; }
  AdamW& optimizer() { return opt_; }
  void set_steps_done(std::size_t s) { step_ = s; }

 private:
  align::NeuroCapModel& model_;
  const data::Dataset& ds_;
  TrainConfig cfg_;
  std::vector<std::size_t> ids_;
  FreezePartition partition_;
  Rng rng_;
  AdamW opt_;
  std::size_t step_ = 0;
};

using AlignCallback = std::function<void(std::size_t step, const AlignStep&)>;

std::vector<AlignStep> align_train(align::NeuroCapModel& model, const data::Dataset& ds, const TrainConfig& cfg,
                                   const AlignCallback& on_step = {});

/// Unit fMRI embeddings [n x E] for the given samples, no gradient.
Tensor fmri_embeddings(const align::NeuroCapModel& model, const data::Dataset& ds, const std::vector<std::size_t>& ids);
/// Frozen text embeddings of the primary captions [n x E].
Tensor text_embeddings(const align::NeuroCapModel& model, const data::Dataset& ds, const std::vector<std::size_t>& ids);

/// Copies every parameter of `src` whose name also exists in `dst` (shape
/// must agree). Returns the number of tensors copied.
std::size_t copy_matching_parameters(nn::Module& src, nn::Module& dst);

}  // namespace neurocap::train
