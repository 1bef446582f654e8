#include "neurocap/train/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "neurocap/error.hpp"
#include "neurocap/text/generate.hpp"

namespace neurocap::train {

std::vector<std::span<const double>> pretrain_corpus(const data::Dataset& ds, PretrainCorpus corpus) {
  std::vector<std::span<const double>> out;
  if (corpus == PretrainCorpus::kNone) return out;
  for (const auto& v : ds.pool_voxels) out.emplace_back(v);
  if (corpus == PretrainCorpus::kAll) {
    for (std::size_t id : ds.manifest.train_ids) out.emplace_back(ds.sample(id).voxels);
  }
  return out;
}

mbm::PretrainConfig pretrain_config(const TrainConfig& cfg) {
  mbm::PretrainConfig p;
  p.optim = cfg.optim();
  p.steps = cfg.steps;
  p.batch_size = cfg.batch_size;
  p.clip_norm = cfg.clip_norm;
  p.seed = cfg.seed;
  return p;
}

void ExperimentConfig::scale_steps(double factor) {
  if (!(factor > 0.0)) throw ParameterError("scale_steps: factor must be > 0");
  for (TrainConfig* c : {&pretrain, &align}) {
    c->steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(c->steps) * factor)));
  }
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["label"] = label;
  j["data"] = {{"n", data_n}, {"pool", data_pool}, {"seed", data_seed}};
  j["pretrain"] = pretrain.to_json();
  j["align"] = align.to_json();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParameterError("experiment config: expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k != "label" && k != "data" && k != "pretrain" && k != "align") {
      throw ParameterError("experiment config: unknown key '" + k + "'");
    }
  }
  ExperimentConfig c;
  try {
    c.label = j.value("label", c.label);
    if (j.contains("data")) {
      const auto& d = j["data"];
      for (const auto& [k, v] : d.items()) {
        if (k != "n" && k != "pool" && k != "seed") throw ParameterError("experiment data: unknown key '" + k + "'");
      }
      c.data_n = d.value("n", c.data_n);
      c.data_pool = d.value("pool", c.data_pool);
      c.data_seed = d.value("seed", c.data_seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("experiment config: ") + e.what());
  }
  if (j.contains("pretrain")) c.pretrain = TrainConfig::from_json(j["pretrain"], Stage::kPretrain);
  if (j.contains("align")) c.align = TrainConfig::from_json(j["align"], Stage::kAlign);
  if (c.pretrain.stage != Stage::kPretrain || c.align.stage != Stage::kAlign) {
    throw ParameterError("experiment config: stage fields do not match their sections");
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open experiment config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("experiment config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

mbm::MbmModel make_mbm(const TrainConfig& align_cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x696e6974));
  return mbm::MbmModel(align_cfg.mbm_config(), rng);
}

std::vector<metrics::EvalRecord> caption_records(const align::NeuroCapModel& model, const data::Dataset& ds,
                                                 const std::vector<std::size_t>& ids) {
  std::vector<metrics::EvalRecord> out;
  for (std::size_t id : ids) {
    const auto& s = ds.sample(id);
    out.push_back({std::to_string(id), text::generate_caption(model, s.voxels), s.caption_refs});
  }
  return out;
}

metrics::MetricReport evaluate_model(const align::NeuroCapModel& model, const data::Dataset& ds, std::uint64_t seed) {
  const auto& ids = ds.manifest.test_ids;
  metrics::MetricReport rep = metrics::evaluate_captions(caption_records(model, ds, ids));
  if (ids.size() >= 2) {
    rep.clip = metrics::two_way_identification(fmri_embeddings(model, ds, ids), text_embeddings(model, ds, ids), seed);
  }
  return rep;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const data::Dataset& ds, const ProgressFn& progress) {
  cfg.align.validate();
  ExperimentResult res;
  res.label = cfg.label;

  Rng init(cfg.align.seed);
  align::NeuroCapModel model(cfg.align.model, init);

  if (cfg.align.pretrain_corpus != PretrainCorpus::kNone) {
    // Encoder geometry comes from the align stage; optimizer settings, mask
    // ratio and MBM decoder from the pretrain stage.
    TrainConfig pre = cfg.pretrain;
    pre.model = cfg.align.model;
    pre.validate();
    mbm::MbmModel mbm_model = make_mbm(pre, pre.seed);
    const auto corpus = pretrain_corpus(ds, cfg.align.pretrain_corpus);
    res.pretrain_trace = mbm::pretrain(mbm_model, corpus, pretrain_config(pre), [&](std::size_t s, double loss) {
      if (progress) progress("pretrain", s, loss);
    });
    copy_matching_parameters(mbm_model, model);
  }

  res.align_trace = align_train(model, ds, cfg.align, [&](std::size_t s, const AlignStep& st) {
    if (progress) progress("align", s, st.total);
  });
  res.report = evaluate_model(model, ds, cfg.align.seed);
  res.report.config = cfg.to_json();
  return res;
}

}  // namespace neurocap::train
