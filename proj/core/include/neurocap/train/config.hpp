#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "neurocap/align/model.hpp"
#include "neurocap/mbm/mbm.hpp"
#include "neurocap/train/freeze.hpp"
#include "neurocap/train/optim.hpp"

namespace neurocap::train {

enum class Stage { kPretrain, kAlign, kFinetuneQa };
enum class ModalityMode { kTriModal, kFmriTextOnly };
/// Which voxel corpus stage 1 sees: the unlabeled pool plus the train split,
/// the pool only, or no pretraining at all.
enum class PretrainCorpus { kAll, kExternal, kNone };

std::string to_string(Stage s);
std::string to_string(ModalityMode m);
std::string to_string(PretrainCorpus c);
Stage parse_stage(const std::string& s);
ModalityMode parse_mode(const std::string& s);
PretrainCorpus parse_corpus(const std::string& s);

/// Everything a training run depends on. JSON keys mirror the field names;
/// absent keys keep the stage defaults.
struct TrainConfig {
  Stage stage = Stage::kAlign;
  double lr = 1e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  std::size_t steps = 600;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  align::LossWeights weights;
  FreezePolicy freeze;
  ModalityMode mode = ModalityMode::kTriModal;
  PretrainCorpus pretrain_corpus = PretrainCorpus::kAll;
  align::ModelConfig model;
  nn::BlockConfig mbm_decoder{32, 4, 4, 2};
  double mask_ratio = 0.75;
  /// finetune_qa only: also train the brain decoder, not just the head.
  bool unfreeze_decoder = false;

  static TrainConfig defaults(Stage stage);

  AdamWConfig optim() const { return {lr, weight_decay, beta1, beta2, 1e-8}; }
  mbm::MbmConfig mbm_config() const;
  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Starts from defaults(stage in j, else `stage`) and applies every key in j.
  /// Unknown keys raise ParameterError.
  static TrainConfig from_json(const nlohmann::json& j, Stage stage = Stage::kAlign);
  static TrainConfig load(const std::filesystem::path& path, Stage stage);
};

nlohmann::ordered_json model_config_to_json(const align::ModelConfig& m);
align::ModelConfig model_config_from_json(const nlohmann::json& j, align::ModelConfig base = {});

}  // namespace neurocap::train
