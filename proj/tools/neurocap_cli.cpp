// neurocap command-line driver: data generation, the two training stages,
// QA fine-tuning, inference and evaluation.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "neurocap/error.hpp"
#include "neurocap/metrics/metrics.hpp"
#include "neurocap/text/generate.hpp"
#include "neurocap/train/checkpoint.hpp"
#include "neurocap/train/pipeline.hpp"

namespace fs = std::filesystem;
using namespace neurocap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool with_config = true) {
  if (with_config) app->add_option("--config", c.config, "TrainConfig JSON (stage defaults when omitted)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Seed override (beats the config file and NEUROCAP_SEED)");
  app->add_option("--steps", c.steps, "Step-count override");
}

// Seed precedence: --seed, then the config file's "seed" key, then
// NEUROCAP_SEED, then 0.
train::TrainConfig resolve_config(const Common& c, train::Stage stage) {
  train::TrainConfig cfg = train::TrainConfig::defaults(stage);
  bool file_seed = false;
  if (!c.config.empty()) {
    std::ifstream is(c.config);
    const auto j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) throw FormatError("config " + c.config + " is not valid JSON");
    file_seed = j.is_object() && j.contains("seed");
    cfg = train::TrainConfig::from_json(j, stage);
    if (cfg.stage != stage) {
      throw ParameterError("config " + c.config + " is for stage '" + train::to_string(cfg.stage) + "', expected '" +
                           train::to_string(stage) + "'");
    }
  }
  if (c.seed) {
    cfg.seed = *c.seed;
  } else if (!file_seed) {
    if (const char* env = std::getenv("NEUROCAP_SEED"); env && *env) {
      try {
        cfg.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw ParameterError(std::string("NEUROCAP_SEED is not an unsigned integer: '") + env + "'");
      }
    }
  }
  if (c.steps) cfg.steps = *c.steps;
  cfg.validate();
  return cfg;
}

void write_trace(const fs::path& path, const std::vector<double>& losses, std::size_t first_step = 0) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) os << first_step + i << ',' << losses[i] << '\n';
}

void write_components(const fs::path& path, const std::vector<train::AlignStep>& trace, std::size_t first_step) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(17);
  os << "step,total,fi,ft,cap\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& s = trace[i];
    os << first_step + i << ',' << s.total << ',';
    if (s.fi) os << *s.fi;
    os << ',' << s.ft << ',' << s.cap << '\n';
  }
}

/// Rebuilds the stage-2 model recorded in an align or qa checkpoint.
std::unique_ptr<align::NeuroCapModel> model_from(const train::Checkpoint& ck, train::TrainConfig* cfg_out = nullptr) {
  if (ck.kind != "align" && ck.kind != "qa") {
    throw FormatError("expected an align or qa checkpoint, got '" + ck.kind + "'");
  }
  const auto cfg = train::TrainConfig::from_json(ck.config, train::Stage::kAlign);
  Rng rng(cfg.seed);
  auto model = std::make_unique<align::NeuroCapModel>(cfg.model, rng);
  ck.restore_module(*model, "model.");
  if (cfg_out) *cfg_out = cfg;
  return model;
}

std::unique_ptr<text::AnswerHead> head_from(const train::Checkpoint& ck, std::size_t hidden) {
  if (ck.kind != "qa") return nullptr;
  auto head = std::make_unique<text::AnswerHead>(hidden, ck.extra.at("answer_classes").get<std::vector<std::string>>());
  ck.restore_module(*head, "head.");
  return head;
}

int cmd_gen_data(const fs::path& out, std::size_t n, std::size_t pool, const Common& c, const data::GeneratorConfig& base) {
  data::GeneratorConfig g = base;
  if (c.seed) {
    g.seed = *c.seed;
  } else if (const char* env = std::getenv("NEUROCAP_SEED"); env && *env) {
    g.seed = std::stoull(env);
  }
  const auto ds = data::generate_dataset(g, n, pool);
  data::write_dataset(ds, out);
  std::cout << "wrote " << n << " samples (" << ds.manifest.train_ids.size() << " train, "
            << ds.manifest.test_ids.size() << " test) and " << pool << " pool vectors to " << out.string() << '\n';
  return kExitOk;
}

int cmd_pretrain(const Common& c, const fs::path& data_dir, const std::string& corpus_flag, const std::string& resume) {
  auto cfg = resolve_config(c, train::Stage::kPretrain);
  if (!corpus_flag.empty()) cfg.pretrain_corpus = train::parse_corpus(corpus_flag);
  if (cfg.pretrain_corpus == train::PretrainCorpus::kNone) throw ParameterError("pretrain: corpus 'none' has nothing to train on");
  const auto ds = data::load_dataset(data_dir);
  auto model = train::make_mbm(cfg, cfg.seed);
  mbm::MbmTrainer trainer(model, train::pretrain_corpus(ds, cfg.pretrain_corpus), train::pretrain_config(cfg));
  std::size_t first = 0;
  if (!resume.empty()) {
    const auto ck = train::load_checkpoint(resume);
    if (ck.kind != "mbm") throw FormatError("--resume expects an mbm checkpoint, got '" + ck.kind + "'");
    ck.restore_module(model);
    ck.restore_optimizer(trainer.optimizer());
    ck.restore_rng(trainer.rng());
    trainer.set_steps_done(ck.step);
    first = ck.step;
  }
  std::vector<double> trace;
  for (std::size_t s = first; s < cfg.steps; ++s) {
    trace.push_back(trainer.step());
    if ((s + 1) % 100 == 0) std::cerr << "pretrain step " << s + 1 << " loss " << trace.back() << '\n';
  }
  train::Checkpoint ck;
  ck.kind = "mbm";
  ck.config = cfg.to_json();
  ck.step = trainer.steps_done();
  ck.set_rng(trainer.rng());
  ck.add_module(model);
  ck.add_optimizer(trainer.optimizer());
  train::save_checkpoint(c.out, ck);
  write_trace(fs::path(c.out) / "trace.csv", trace, first);
  std::cout << "pretrained " << trace.size() << " steps; checkpoint in " << c.out << '\n';
  return kExitOk;
}

int cmd_align(const Common& c, const fs::path& data_dir, const std::string& init, const std::string& resume,
              const std::string& mode_flag, const std::string& freeze_flag) {
  auto cfg = resolve_config(c, train::Stage::kAlign);
  if (!mode_flag.empty()) cfg.mode = train::parse_mode(mode_flag);
  if (!freeze_flag.empty()) cfg.freeze = train::FreezePolicy::parse(freeze_flag);
  const auto ds = data::load_dataset(data_dir);
  Rng rng(cfg.seed);
  align::NeuroCapModel model(cfg.model, rng);
  if (!init.empty()) {
    const auto ck = train::load_checkpoint(init);
    if (ck.kind != "mbm") throw FormatError("--init expects an mbm checkpoint, got '" + ck.kind + "'");
    ck.restore_module(model.fmri_encoder(), "fmri_encoder.");
  }
  train::AlignTrainer trainer(model, ds, cfg);
  std::size_t first = 0;
  if (!resume.empty()) {
    const auto ck = train::load_checkpoint(resume);
    if (ck.kind != "align") throw FormatError("--resume expects an align checkpoint, got '" + ck.kind + "'");
    ck.restore_module(model, "model.");
    ck.restore_optimizer(trainer.optimizer());
    ck.restore_rng(trainer.rng());
    trainer.set_steps_done(ck.step);
    first = ck.step;
  }
  std::vector<train::AlignStep> trace;
  for (std::size_t s = first; s < cfg.steps; ++s) {
    trace.push_back(trainer.step());
    if ((s + 1) % 50 == 0) std::cerr << "align step " << s + 1 << " loss " << trace.back().total << '\n';
  }
  train::Checkpoint ck;
  ck.kind = "align";
  ck.config = cfg.to_json();
  ck.step = trainer.steps_done();
  ck.set_rng(trainer.rng());
  ck.add_module(model, "model.");
  ck.add_optimizer(trainer.optimizer());
  train::save_checkpoint(c.out, ck);
  std::vector<double> totals;
  for (const auto& s : trace) totals.push_back(s.total);
  write_trace(fs::path(c.out) / "trace.csv", totals, first);
  write_components(fs::path(c.out) / "components.csv", trace, first);
  std::cout << "aligned " << trace.size() << " steps; checkpoint in " << c.out << '\n';
  return kExitOk;
}

int cmd_finetune_qa(const Common& c, const fs::path& data_dir, const fs::path& ckpt, bool unfreeze) {
  auto cfg = resolve_config(c, train::Stage::kFinetuneQa);
  if (unfreeze) cfg.unfreeze_decoder = true;
  const auto ds = data::load_dataset(data_dir);
  const auto src = train::load_checkpoint(ckpt);
  train::TrainConfig align_cfg;
  auto model = model_from(src, &align_cfg);
  text::AnswerHead head(model->brain_decoder().width(), data::answer_table());
  const auto train_ex = text::qa_examples(ds, ds.manifest.train_ids);
  const auto trace = text::finetune_qa(*model, head, ds, train_ex, cfg);
  const double acc = text::qa_accuracy(*model, head, ds, text::qa_examples(ds, ds.manifest.test_ids));

  train::Checkpoint ck;
  ck.kind = "qa";
  ck.config = align_cfg.to_json();
  ck.step = trace.size();
  ck.extra["finetune_config"] = cfg.to_json();
  ck.extra["answer_classes"] = head.classes();
  ck.extra["test_accuracy"] = acc;
  ck.add_module(*model, "model.");
  ck.add_module(head, "head.");
  train::save_checkpoint(c.out, ck);
  write_trace(fs::path(c.out) / "trace.csv", trace);
  std::cout << "finetuned " << trace.size() << " steps; held-out QA accuracy " << acc << '\n';
  return kExitOk;
}

int cmd_caption(const fs::path& ckpt, const fs::path& data_dir, const fs::path& out, const std::string& split,
                const text::GenerateOptions& opts) {
  const auto ds = data::load_dataset(data_dir);
  const auto model = model_from(train::load_checkpoint(ckpt));
  const auto& ids = split == "train" ? ds.manifest.train_ids : ds.manifest.test_ids;
  std::ofstream os(out);
  if (!os) throw IoError("cannot write " + out.string());
  for (std::size_t id : ids) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["caption"] = text::generate_caption(*model, ds.sample(id).voxels, opts);
    os << j.dump() << '\n';
  }
  std::cout << "wrote " << ids.size() << " captions to " << out.string() << '\n';
  return kExitOk;
}

int cmd_qa(const fs::path& ckpt, const fs::path& data_dir, std::size_t fmri_id) {
  const auto ds = data::load_dataset(data_dir);
  const auto ck = train::load_checkpoint(ckpt);
  const auto model = model_from(ck);
  const auto head = head_from(ck, model->brain_decoder().width());
  if (fmri_id >= ds.samples.size()) {
    throw IndexError("--fmri-id " + std::to_string(fmri_id) + " outside [0, " + std::to_string(ds.samples.size()) + ")");
  }
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line == ":q" || line == "quit") break;
    const auto a = text::answer_question(*model, ds.sample(fmri_id).voxels, line, head.get());
    std::cout << a.text << '\t' << a.scores[a.cls] << std::endl;
  }
  return kExitOk;
}

int cmd_eval(const fs::path& pred, const fs::path& data_dir, const std::string& ckpt, const std::string& json_out,
             const std::string& label) {
  const auto ds = data::load_dataset(data_dir);
  std::ifstream is(pred);
  if (!is) throw IoError("cannot open " + pred.string());
  std::vector<metrics::EvalRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("caption")) {
      throw FormatError(pred.string() + ":" + std::to_string(lineno) + ": expected {\"id\", \"caption\"}");
    }
    const auto id = j["id"].get<std::size_t>();
    records.push_back({std::to_string(id), j["caption"].get<std::string>(), ds.sample(id).caption_refs});
  }
  auto rep = metrics::evaluate_captions(records);
  if (!ckpt.empty()) {
    const auto model = model_from(train::load_checkpoint(ckpt));
    const auto& ids = ds.manifest.test_ids;
    rep.clip = metrics::two_way_identification(train::fmri_embeddings(*model, ds, ids),
                                               train::text_embeddings(*model, ds, ids), 0);
  }
  std::cout << metrics::MetricReport::table_header() << '\n' << rep.table_row(label) << '\n';
  if (!json_out.empty()) {
    std::ofstream os(json_out);
    if (!os) throw IoError("cannot write " + json_out);
    os << rep.to_json().dump(2) << '\n';
  }
  if (rep.empty_candidates > 0) std::cerr << "warning: " << rep.empty_candidates << " empty candidate captions\n";
  return kExitOk;
}

int cmd_ablate(const fs::path& config, const std::string& data_dir, const std::string& out, double step_scale,
               std::optional<std::uint64_t> seed) {
  auto exp = train::ExperimentConfig::load(config);
  if (step_scale != 1.0) exp.scale_steps(step_scale);
  if (seed) exp.pretrain.seed = exp.align.seed = *seed;
  data::Dataset ds;
  if (data_dir.empty()) {
    data::GeneratorConfig g;
    g.seed = exp.data_seed;
    g.n_voxels = exp.align.model.n_voxels;
    g.image_dim = exp.align.model.image_dim;
    ds = data::generate_dataset(g, exp.data_n, exp.data_pool);
  } else {
    ds = data::load_dataset(data_dir);
  }
  const auto res = train::run_experiment(exp, ds, [](const std::string& stage, std::size_t s, double loss) {
    if ((s + 1) % 100 == 0) std::cerr << stage << " step " << s + 1 << " loss " << loss << '\n';
  });
  std::cout << metrics::MetricReport::table_header() << '\n' << res.report.table_row(exp.label) << '\n';
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw IoError("cannot write " + out);
    auto j = res.report.to_json();
    j["label"] = exp.label;
    os << j.dump(2) << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neurocap: fMRI captioning, alignment and question answering on synthetic data"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  Common common;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  std::size_t gen_n = 512, gen_pool = 512;
  data::GeneratorConfig gen_cfg;
  gen->add_option("--out", common.out, "Output directory")->required();
  gen->add_option("--n", gen_n, "Labeled samples (>= 8)");
  gen->add_option("--pool", gen_pool, "Unlabeled pool vectors for pretraining");
  gen->add_option("--voxels", gen_cfg.n_voxels, "Voxels per sample");
  gen->add_option("--image-dim", gen_cfg.image_dim, "Image feature width");
  gen->add_option("--seed", common.seed, "Generator seed");

  auto* pre = app.add_subcommand("pretrain", "Masked brain modeling on the pretraining corpus");
  std::string data_dir, corpus_flag, resume, init, mode_flag, freeze_flag, ckpt;
  add_common(pre, common);
  pre->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", common.out, "Checkpoint directory")->required();
  pre->add_option("--corpus", corpus_flag, "Pretraining corpus: all | external");
  pre->add_option("--resume", resume, "Continue from this mbm checkpoint")->check(CLI::ExistingDirectory);

  auto* aln = app.add_subcommand("align-train", "Stage-2 contrastive + caption training");
  add_common(aln, common);
  aln->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  aln->add_option("--out", common.out, "Checkpoint directory")->required();
  aln->add_option("--init", init, "mbm checkpoint for the fMRI encoder")->check(CLI::ExistingDirectory);
  aln->add_option("--resume", resume, "Continue from this align checkpoint")->check(CLI::ExistingDirectory);
  aln->add_option("--mode", mode_flag, "tri_modal | fmri_text_only");
  aln->add_option("--freeze", freeze_flag, "frozen_whole | frozen_partly[:K] | none");

  auto* fqa = app.add_subcommand("finetune-qa", "Train the answer classifier on an align checkpoint");
  bool unfreeze = false;
  add_common(fqa, common);
  fqa->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  fqa->add_option("--ckpt", ckpt, "align checkpoint")->required()->check(CLI::ExistingDirectory);
  fqa->add_option("--out", common.out, "Checkpoint directory")->required();
  fqa->add_flag("--unfreeze-decoder", unfreeze, "Also train the brain decoder");

  auto* cap = app.add_subcommand("caption", "Generate captions for a dataset split");
  std::string split = "test", pred_out;
  text::GenerateOptions gen_opts;
  bool sample = false;
  std::uint64_t sample_seed = 0;
  cap->add_option("--ckpt", ckpt, "align or qa checkpoint")->required()->check(CLI::ExistingDirectory);
  cap->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  cap->add_option("--out", pred_out, "JSONL output, one {\"id\",\"caption\"} per sample")->required();
  cap->add_option("--split", split, "test | train")->check(CLI::IsMember({"test", "train"}));
  cap->add_option("--max-len", gen_opts.max_len, "Maximum emitted tokens");
  cap->add_flag("--sample", sample, "Sample instead of greedy decoding");
  cap->add_option("--temperature", gen_opts.temperature, "Sampling temperature");
  cap->add_option("--seed", sample_seed, "Sampling seed");

  auto* qa = app.add_subcommand("qa", "Answer questions about one fMRI sample (reads questions from stdin)");
  std::size_t fmri_id = 0;
  qa->add_option("--ckpt", ckpt, "qa checkpoint")->required()->check(CLI::ExistingDirectory);
  qa->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  qa->add_option("--fmri-id", fmri_id, "Sample id")->required();

  auto* ev = app.add_subcommand("eval", "Score predicted captions against the references");
  std::string pred, json_out, label;
  ev->add_option("--pred", pred, "Prediction JSONL from `caption`")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--ckpt", ckpt, "Checkpoint for the 2-way identification column")->check(CLI::ExistingDirectory);
  ev->add_option("--json", json_out, "Also write the full report as JSON");
  ev->add_option("--label", label, "Row label");

  auto* abl = app.add_subcommand("ablate", "Run one experiment config end to end and print its metric row");
  std::string exp_config, abl_out;
  double step_scale = 1.0;
  abl->add_option("--config", exp_config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  abl->add_option("--data", data_dir, "Dataset directory (generated from the config when omitted)");
  abl->add_option("--out", abl_out, "Report JSON");
  abl->add_option("--step-scale", step_scale, "Multiply every stage's step count")->check(CLI::PositiveNumber);
  abl->add_option("--seed", common.seed, "Seed for both training stages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const auto subs = app.get_subcommands();
    std::cerr << '\n' << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common.out, gen_n, gen_pool, common, gen_cfg);
    if (*pre) return cmd_pretrain(common, data_dir, corpus_flag, resume);
    if (*aln) return cmd_align(common, data_dir, init, resume, mode_flag, freeze_flag);
    if (*fqa) return cmd_finetune_qa(common, data_dir, ckpt, unfreeze);
    if (*cap) {
      gen_opts.mode = sample ? text::DecodeMode::kSample : text::DecodeMode::kGreedy;
      gen_opts.seed = sample_seed;
      return cmd_caption(ckpt, data_dir, pred_out, split, gen_opts);
    }
    if (*qa) return cmd_qa(ckpt, data_dir, fmri_id);
    if (*ev) return cmd_eval(pred, data_dir, ckpt, json_out, label);
    if (*abl) return cmd_ablate(exp_config, data_dir, abl_out, step_scale, common.seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
