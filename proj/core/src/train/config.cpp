#include "neurocap/train/config.hpp"

#include <fstream>
#include <set>

#include "neurocap/error.hpp"

namespace neurocap::train {

namespace {

template <typename E, std::size_t N>
std::string enum_name(E v, const std::pair<E, const char*> (&table)[N]) {
  for (const auto& [e, name] : table) {
    if (e == v) return name;
  }
  throw ParameterError("unnamed enum value");
}

template <typename E, std::size_t N>
E enum_parse(const std::string& s, const std::pair<E, const char*> (&table)[N], const char* what) {
  std::string valid;
  for (const auto& [e, name] : table) {
    if (s == name) return e;
    valid += std::string(valid.empty() ? "" : ", ") + name;
  }
  throw ParameterError(std::string("unknown ") + what + " '" + s + "' (expected " + valid + ")");
}

const std::pair<Stage, const char*> kStages[] = {
    {Stage::kPretrain, "pretrain"}, {Stage::kAlign, "align"}, {Stage::kFinetuneQa, "finetune_qa"}};
const std::pair<ModalityMode, const char*> kModes[] = {
    {ModalityMode::kTriModal, "tri_modal"}, {ModalityMode::kFmriTextOnly, "fmri_text_only"}};
const std::pair<PretrainCorpus, const char*> kCorpora[] = {
    {PretrainCorpus::kAll, "all"}, {PretrainCorpus::kExternal, "external"}, {PretrainCorpus::kNone, "none"}};

nlohmann::ordered_json block_to_json(const nn::BlockConfig& b) {
  return {{"hidden", b.hidden}, {"heads", b.heads}, {"ff_mult", b.ff_mult}, {"layers", b.layers}};
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ParameterError(std::string(where) + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ParameterError(std::string(where) + ": unknown key '" + k + "'");
  }
}

nn::BlockConfig block_from_json(const nlohmann::json& j, nn::BlockConfig b) {
  check_keys(j, {"hidden", "heads", "ff_mult", "layers"}, "block config");
  b.hidden = j.value("hidden", b.hidden);
  b.heads = j.value("heads", b.heads);
  b.ff_mult = j.value("ff_mult", b.ff_mult);
  b.layers = j.value("layers", b.layers);
  return b;
}

}  // namespace

std::string to_string(Stage s) { return enum_name(s, kStages); }
std::string to_string(ModalityMode m) { return enum_name(m, kModes); }
std::string to_string(PretrainCorpus c) { return enum_name(c, kCorpora); }
Stage parse_stage(const std::string& s) { return enum_parse(s, kStages, "stage"); }
ModalityMode parse_mode(const std::string& s) { return enum_parse(s, kModes, "mode"); }
PretrainCorpus parse_corpus(const std::string& s) { return enum_parse(s, kCorpora, "pretrain corpus"); }

nlohmann::ordered_json model_config_to_json(const align::ModelConfig& m) {
  nlohmann::ordered_json j;
  j["n_voxels"] = m.n_voxels;
  j["patch_size"] = m.patch_size;
  j["fmri_encoder"] = block_to_json(m.fmri_encoder);
  j["brain_decoder"] = block_to_json(m.brain_decoder);
  j["text_encoder"] = block_to_json(m.text_encoder);
  j["image_dim"] = m.image_dim;
  j["max_len"] = m.max_len;
  j["vocab_size"] = m.resolved_vocab_size();
  j["pos_std"] = m.pos_std;
  j["frozen_seed"] = m.frozen_seed;
  return j;
}

align::ModelConfig model_config_from_json(const nlohmann::json& j, align::ModelConfig m) {
  check_keys(j,
             {"n_voxels", "patch_size", "fmri_encoder", "brain_decoder", "text_encoder", "image_dim", "max_len",
              "vocab_size", "pos_std", "frozen_seed"},
             "model config");
  try {
    m.n_voxels = j.value("n_voxels", m.n_voxels);
    m.patch_size = j.value("patch_size", m.patch_size);
    if (j.contains("fmri_encoder")) m.fmri_encoder = block_from_json(j["fmri_encoder"], m.fmri_encoder);
    if (j.contains("brain_decoder")) m.brain_decoder = block_from_json(j["brain_decoder"], m.brain_decoder);
    if (j.contains("text_encoder")) m.text_encoder = block_from_json(j["text_encoder"], m.text_encoder);
    m.image_dim = j.value("image_dim", m.image_dim);
    m.max_len = j.value("max_len", m.max_len);
    m.vocab_size = j.value("vocab_size", m.vocab_size);
    m.pos_std = j.value("pos_std", m.pos_std);
    m.frozen_seed = j.value("frozen_seed", m.frozen_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("model config: ") + e.what());
  }
  return m;
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::kPretrain:
      c.lr = 5e-5;
      c.weight_decay = 0.05;
      c.steps = 2000;
      c.batch_size = 16;
      break;
    case Stage::kAlign:
      break;
    case Stage::kFinetuneQa:
      c.lr = 1e-6;
      c.weight_decay = 0.1;
      c.steps = 4000;
      c.batch_size = 32;
      break;
  }
  return c;
}

mbm::MbmConfig TrainConfig::mbm_config() const {
  mbm::MbmConfig m;
  m.n_voxels = model.n_voxels;
  m.patch_size = model.patch_size;
  m.encoder = model.fmri_encoder;
  m.decoder = mbm_decoder;
  m.mask_ratio = mask_ratio;
  m.pos_std = model.pos_std;
  return m;
}

void TrainConfig::validate() const {
  optim().validate();
  if (batch_size == 0) throw ParameterError("TrainConfig: batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw ParameterError("TrainConfig: clip_norm must be > 0");
  weights.validate();
  model.validate();
  freeze.resolved_tail(model.fmri_encoder.layers);
  if (stage == Stage::kPretrain) mbm_config().validate();
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = to_string(stage);
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["betas"] = {beta1, beta2};
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["clip_norm"] = clip_norm;
  j["loss_weights"] = {{"fi", weights.fi}, {"ft", weights.ft}, {"cap", weights.cap}};
  j["freeze"] = freeze.str();
  j["mode"] = to_string(mode);
  j["pretrain_corpus"] = to_string(pretrain_corpus);
  j["model"] = model_config_to_json(model);
  j["mbm_decoder"] = block_to_json(mbm_decoder);
  j["mask_ratio"] = mask_ratio;
  j["unfreeze_decoder"] = unfreeze_decoder;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, Stage stage) {
  check_keys(j,
             {"stage", "lr", "weight_decay", "betas", "steps", "batch_size", "seed", "clip_norm", "loss_weights",
              "freeze", "mode", "pretrain_corpus", "model", "mbm_decoder", "mask_ratio", "unfreeze_decoder"},
             "train config");
  try {
    if (j.contains("stage")) stage = parse_stage(j["stage"].get<std::string>());
    TrainConfig c = defaults(stage);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("betas")) {
      const auto b = j["betas"].get<std::vector<double>>();
      if (b.size() != 2) throw ParameterError("train config: betas must have two entries");
      c.beta1 = b[0];
      c.beta2 = b[1];
    }
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    if (j.contains("loss_weights")) {
      const auto& w = j["loss_weights"];
      check_keys(w, {"fi", "ft", "cap"}, "loss_weights");
      c.weights.fi = w.value("fi", c.weights.fi);
      c.weights.ft = w.value("ft", c.weights.ft);
      c.weights.cap = w.value("cap", c.weights.cap);
    }
    if (j.contains("freeze")) c.freeze = FreezePolicy::parse(j["freeze"].get<std::string>());
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("pretrain_corpus")) c.pretrain_corpus = parse_corpus(j["pretrain_corpus"].get<std::string>());
    if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
    if (j.contains("mbm_decoder")) c.mbm_decoder = block_from_json(j["mbm_decoder"], c.mbm_decoder);
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
    c.unfreeze_decoder = j.value("unfreeze_decoder", c.unfreeze_decoder);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("train config: ") + e.what());
  }
}

TrainConfig TrainConfig::load(const std::filesystem::path& path, Stage stage) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return from_json(j, stage);
}

}  // namespace neurocap::train
