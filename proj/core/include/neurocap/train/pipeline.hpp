#pragma once

#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "neurocap/align/model.hpp"
#include "neurocap/data/synthetic.hpp"
#include "neurocap/mbm/mbm.hpp"
#include "neurocap/metrics/metrics.hpp"
#include "neurocap/train/align_train.hpp"
#include "neurocap/train/config.hpp"

namespace neurocap::train {

/// Voxel vectors a pretraining corpus draws from: pool + train split (all),
/// pool only (external), nothing (none). Test samples are never included.
std::vector<std::span<const double>> pretrain_corpus(const data::Dataset& ds, PretrainCorpus corpus);

mbm::PretrainConfig pretrain_config(const TrainConfig& cfg);

/// One Table 3-style run: data spec, pretraining stage, alignment stage.
struct ExperimentConfig {
  std::string label;
  std::size_t data_n = 512;
  std::size_t data_pool = 512;
  std::uint64_t data_seed = 0;
  TrainConfig pretrain = TrainConfig::defaults(Stage::kPretrain);
  TrainConfig align = TrainConfig::defaults(Stage::kAlign);

  /// Scales every stage's step count by `factor`, keeping at least one step.
  void scale_steps(double factor);

  nlohmann::ordered_json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// MBM model matching the align config's fMRI encoder.
mbm::MbmModel make_mbm(const TrainConfig& align_cfg, std::uint64_t seed);

/// Greedy captions for `ids` paired with their reference captions.
std::vector<metrics::EvalRecord> caption_records(const align::NeuroCapModel& model, const data::Dataset& ds,
                                                 const std::vector<std::size_t>& ids);

/// Caption metrics plus 2-way identification on the test split.
metrics::MetricReport evaluate_model(const align::NeuroCapModel& model, const data::Dataset& ds,
                                     std::uint64_t seed = 0);

struct ExperimentResult {
  std::string label;
  std::vector<double> pretrain_trace;
  std::vector<AlignStep> align_trace;
  metrics::MetricReport report;
};

using ProgressFn = std::function<void(const std::string& stage, std::size_t step, double loss)>;

/// Pretrain (unless the corpus is none), copy the encoder, align, evaluate.
/// `ds` must match the data fields of `cfg`'s model geometry.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const data::Dataset& ds,
                                const ProgressFn& progress = {});

}  // namespace neurocap::train
