#include "neurocap/train/align_train.hpp"

#include <algorithm>
#include <map>

#include "neurocap/error.hpp"

namespace neurocap::train {

align::TriModalBatch make_batch(const data::Dataset& ds, const std::vector<std::size_t>& ids, ModalityMode mode) {
  align::TriModalBatch b;
  std::vector<std::span<const double>> feats;
  for (std::size_t id : ids) {
    const auto& s = ds.sample(id);
    b.fmri.emplace_back(s.voxels);
    feats.emplace_back(s.image_feats);
    b.tokens.push_back(text::tokenize(s.caption_refs.at(0)));
  }
  if (mode == ModalityMode::kTriModal) b.image_feats = std::move(feats);
  return b;
}

AlignTrainer::AlignTrainer(align::NeuroCapModel& model, const data::Dataset& ds, const TrainConfig& cfg)
    : AlignTrainer(model, ds, cfg, ds.manifest.train_ids) {}

namespace {

FreezePartition freeze_then_validate(align::NeuroCapModel& model, const TrainConfig& cfg) {
  cfg.validate();
  return apply_freeze(model, cfg.freeze);
}

}  // namespace

AlignTrainer::AlignTrainer(align::NeuroCapModel& model, const data::Dataset& ds, const TrainConfig& cfg,
                           std::vector<std::size_t> ids)
    : model_(model),
      ds_(ds),
      cfg_(cfg),
      ids_(std::move(ids)),
      partition_(freeze_then_validate(model, cfg)),
      rng_(mix_seed(cfg.seed, 0x616c6e)),
      opt_(model.named_parameters(), cfg.optim()) {
  if (ids_.empty()) throw ParameterError("align_train: no training samples");
  if (ds.manifest.n_voxels != model.config().n_voxels || ds.manifest.image_dim != model.config().image_dim) {
    throw DimensionError("align_train: dataset geometry (" + std::to_string(ds.manifest.n_voxels) + " voxels, " +
                         std::to_string(ds.manifest.image_dim) + " image dims) does not match the model");
  }
}

AlignStep AlignTrainer::step() {
  // Distinct samples per batch: a partial Fisher-Yates draw.
  const std::size_t n = std::min(cfg_.batch_size, ids_.size());
  std::vector<std::size_t> pool = ids_;
  for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng_.below(pool.size() - i)]);
  pool.resize(n);

  const std::size_t this_step = step_;
  try {
    align::LossBreakdown lb = align::total_loss(model_, make_batch(ds_, pool, cfg_.mode), cfg_.weights);
    opt_.zero_grad();
    backward(lb.total);
    clip_grad_norm(opt_.params(), cfg_.clip_norm);
    opt_.step();
    ++step_;
    return {lb.total.item(), lb.fi, lb.ft, lb.cap};
  } catch (const NumericError& e) {
    tape::reset();
    throw NumericError("align_train diverged at step " + std::to_string(this_step) + ": " + e.what());
  }
}

std::vector<AlignStep> align_train(align::NeuroCapModel& model, const data::Dataset& ds, const TrainConfig& cfg,
                                   const AlignCallback& on_step) {
  AlignTrainer trainer(model, ds, cfg);
  std::vector<AlignStep> trace;
  trace.reserve(cfg.steps);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    trace.push_back(trainer.step());
    if (on_step) on_step(s, trace.back());
  }
  return trace;
}

Tensor fmri_embeddings(const align::NeuroCapModel& model, const data::Dataset& ds, const std::vector<std::size_t>& ids) {
  if (ids.empty()) throw DimensionError("fmri_embeddings: no samples");
  NoGradGuard guard;
  std::vector<double> flat;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < ids.size(); start += kChunk) {
    std::vector<std::span<const double>> vox;
    for (std::size_t i = start; i < std::min(ids.size(), start + kChunk); ++i) vox.emplace_back(ds.sample(ids[i]).voxels);
    Tensor e = align::encode_fmri(model, vox).embedding;
    flat.insert(flat.end(), e.data().begin(), e.data().end());
  }
  return Tensor::from({ids.size(), model.config().embed_dim()}, std::move(flat));
}

Tensor text_embeddings(const align::NeuroCapModel& model, const data::Dataset& ds, const std::vector<std::size_t>& ids) {
  std::vector<text::TokenSequence> seqs;
  for (std::size_t id : ids) seqs.push_back(text::tokenize(ds.sample(id).caption_refs.at(0)));
  return model.text_encoder().encode(seqs);
}

std::size_t copy_matching_parameters(nn::Module& src, nn::Module& dst) {
  std::map<std::string, Tensor> by_name;
  for (auto& p : src.named_parameters()) by_name.emplace(p.name, p.tensor);
  std::size_t copied = 0;
  for (auto& p : dst.named_parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) continue;
    if (it->second.shape() != p.tensor.shape()) {
      throw DimensionError("parameter '" + p.name + "' has shape " + shape_str(it->second.shape()) + " in source and " +
                           shape_str(p.tensor.shape()) + " in destination");
    }
    std::ranges::copy(it->second.data(), p.tensor.mutable_data().begin());
    ++copied;
  }
  return copied;
}

}  // namespace neurocap::train
