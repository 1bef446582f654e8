#include "neurocap/align/model.hpp"

#include <cmath>
#include <numeric>

#include "neurocap/autodiff/ops.hpp"
#include "neurocap/error.hpp"

namespace neurocap::align {

std::size_t ModelConfig::resolved_vocab_size() const {
  return vocab_size == 0 ? text::Vocab::standard().size() : vocab_size;
}

void ModelConfig::validate() const {
  fmri_encoder.validate();
  brain_decoder.validate();
  text_encoder.validate();
  if (fmri_encoder.hidden != brain_decoder.hidden) {
    throw ParameterError("ModelConfig: brain decoder width must equal the fMRI encoder width");
  }
  if (patch_size == 0 || n_voxels < 2 * patch_size) throw ParameterError("ModelConfig: need at least two patches");
  if (image_dim == 0) throw ParameterError("ModelConfig: image_dim must be >= 1");
  if (max_len < 2) throw ParameterError("ModelConfig: max_len must be >= 2");
  if (resolved_vocab_size() <= static_cast<std::size_t>(text::kUnk)) {
    throw ParameterError("ModelConfig: vocabulary must extend past the reserved ids");
  }
}

FrozenImageEncoder::FrozenImageEncoder(std::size_t image_dim, std::size_t embed_dim, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x696d67));
  weight_ = nn::init::normal(rng, {image_dim, embed_dim}, 1.0 / std::sqrt(static_cast<double>(image_dim)));
  weight_.set_requires_grad(false);
}

Tensor FrozenImageEncoder::encode(const std::vector<std::span<const double>>& rows) const {
  ++calls_;
  if (rows.empty()) throw DimensionError("FrozenImageEncoder: empty batch");
  const std::size_t d = weight_.rows();
  std::vector<double> flat;
  flat.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.size() != d) {
      throw DimensionError("FrozenImageEncoder: expected " + std::to_string(d) + " features, got " +
                           std::to_string(r.size()));
    }
    flat.insert(flat.end(), r.begin(), r.end());
  }
  NoGradGuard guard;
  Tensor x = Tensor::from({rows.size(), d}, std::move(flat));
  return ops::l2_normalize_rows(ops::tanh(ops::matmul(x, weight_)));
}

FrozenTextEncoder::FrozenTextEncoder(const nn::BlockConfig& cfg, std::size_t vocab_size, std::size_t max_len,
                                     std::uint64_t seed)
    : cfg_(cfg) {
  Rng rng(mix_seed(seed, 0x747874));
  tok_ = nn::init::normal(rng, {vocab_size, cfg.hidden}, 1.0);
  pos_ = nn::init::normal(rng, {max_len, cfg.hidden}, 0.1);
  encoder_ = std::make_unique<nn::TransformerEncoder>(cfg, rng);
  tok_.set_requires_grad(false);
  pos_.set_requires_grad(false);
  encoder_->set_trainable(false);
}

std::vector<double> FrozenTextEncoder::encode_one(const text::TokenSequence& seq) const {
  if (auto it = cache_.find(seq.ids); it != cache_.end()) return it->second;
  std::vector<std::size_t> ids;
  for (text::TokenId id : seq.ids) {
    if (id == text::kPad) break;
    if (id < 0 || static_cast<std::size_t>(id) >= tok_.rows()) throw IndexError("FrozenTextEncoder: token id out of range");
    ids.push_back(static_cast<std::size_t>(id));
  }
  if (ids.empty()) throw ContractError("FrozenTextEncoder: sequence has no tokens");
  NoGradGuard guard;
  Tensor x = nn::add_positions(ops::gather_rows(tok_, ids), pos_, 1);
  Tensor h = encoder_->forward(x, 1);
  Tensor pooled = ops::l2_normalize_rows(ops::scale(ops::matmul(Tensor::full({1, ids.size()}, 1.0), h),
                                                    1.0 / static_cast<double>(ids.size())));
  std::vector<double> out(pooled.data().begin(), pooled.data().end());
  cache_.emplace(seq.ids, out);
  return out;
}

Tensor FrozenTextEncoder::encode(const std::vector<text::TokenSequence>& seqs) const {
  if (seqs.empty()) throw DimensionError("FrozenTextEncoder: empty batch");
  std::vector<double> flat;
  for (const auto& s : seqs) {
    auto e = encode_one(s);
    flat.insert(flat.end(), e.begin(), e.end());
  }
  return Tensor::from({seqs.size(), cfg_.hidden}, std::move(flat));
}

Projector::Projector(const nn::BlockConfig& fmri_cfg, std::size_t embed_dim, Rng& rng)
    : pooler_(fmri_cfg, 1, rng), proj_(fmri_cfg.hidden, embed_dim, rng) {}

Tensor Projector::forward(const Tensor& tokens, std::size_t batch) const {
  return ops::l2_normalize_rows(proj_.forward(pooler_.forward(tokens, batch)));
}

void Projector::visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) {
  pooler_.visit_parameters(fn, prefix + "pooler.");
  proj_.visit_parameters(fn, prefix + "proj.");
}

BrainDecoder::BrainDecoder(const nn::BlockConfig& cfg, std::size_t vocab_size, std::size_t max_len, Rng& rng)
    : tok_(nn::init::normal(rng, {vocab_size, cfg.hidden}, 0.02)),
      pos_(nn::init::normal(rng, {max_len, cfg.hidden}, 0.02)),
      decoder_(cfg, rng),
      lm_head_(cfg.hidden, vocab_size, rng) {}

Tensor BrainDecoder::hidden(std::span<const text::TokenId> ids, std::size_t batch, const Tensor& cond) const {
  if (batch == 0 || ids.empty() || ids.size() % batch != 0) {
    throw DimensionError("BrainDecoder: " + std::to_string(ids.size()) + " ids do not split into " +
                         std::to_string(batch) + " sequences");
  }
  if (ids.size() / batch > max_len()) {
    throw DimensionError("BrainDecoder: sequence length " + std::to_string(ids.size() / batch) + " exceeds max_len " +
                         std::to_string(max_len()));
  }
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (text::TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
      throw IndexError("BrainDecoder: token id " + std::to_string(id) + " out of range");
    }
    rows.push_back(static_cast<std::size_t>(id));
  }
  Tensor x = nn::add_positions(ops::gather_rows(tok_, rows), pos_, batch);
  return decoder_.forward(x, cond, batch);
}

void BrainDecoder::visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "tok", tok_);
  fn(prefix + "pos", pos_);
  decoder_.visit_parameters(fn, prefix + "decoder.");
  lm_head_.visit_parameters(fn, prefix + "lm_head.");
}

namespace {

const ModelConfig& validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

NeuroCapModel::NeuroCapModel(const ModelConfig& cfg, Rng& rng)
    : cfg_(validated(cfg)),
      fmri_encoder_(cfg.n_voxels, cfg.patch_size, cfg.fmri_encoder, rng, cfg.pos_std),
      projector_(cfg.fmri_encoder, cfg.embed_dim(), rng),
      brain_decoder_(cfg.brain_decoder, cfg.resolved_vocab_size(), cfg.max_len, rng),
      log_temp_(Tensor::scalar(std::log(0.07), true)),
      image_encoder_(cfg.image_dim, cfg.embed_dim(), cfg.frozen_seed),
      text_encoder_(cfg.text_encoder, cfg.resolved_vocab_size(), cfg.max_len, cfg.frozen_seed) {}

void NeuroCapModel::visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) {
  fmri_encoder_.visit_parameters(fn, prefix + "fmri_encoder.");
  projector_.visit_parameters(fn, prefix + "projector.");
  brain_decoder_.visit_parameters(fn, prefix + "brain_decoder.");
  fn(prefix + "log_temp", log_temp_);
}

double NeuroCapModel::temperature() const { return std::exp(log_temp_.item()); }

FmriEncoding encode_fmri(const NeuroCapModel& model, const std::vector<std::span<const double>>& voxels) {
  if (voxels.empty()) throw DimensionError("encode_fmri: empty batch");
  FmriEncoding out;
  out.tokens = model.fmri_encoder().encode(voxels);
  out.embedding = model.projector().forward(out.tokens, voxels.size());
  return out;
}

void TriModalBatch::validate() const {
  if (fmri.empty()) throw DimensionError("TriModalBatch: empty batch");
  if (tokens.size() != fmri.size()) throw DimensionError("TriModalBatch: token and fMRI counts differ");
  if (image_feats && image_feats->size() != fmri.size()) {
    throw DimensionError("TriModalBatch: image-feature and fMRI counts differ");
  }
}

void LossWeights::validate() const {
  if (fi < 0.0 || ft < 0.0 || cap < 0.0) throw ParameterError("LossWeights: weights must be nonnegative");
  if (fi == 0.0 && ft == 0.0 && cap == 0.0) throw ParameterError("LossWeights: at least one weight must be > 0");
}

Tensor contrastive_loss(const Tensor& a, const Tensor& b, const Tensor& log_temp) {
  if (a.dim() != 2 || b.dim() != 2 || a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("contrastive_loss: embeddings " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not pair up");
  }
  if (log_temp.numel() != 1) throw DimensionError("contrastive_loss: log_temp must be a scalar");
  const std::size_t n = a.rows();
  std::vector<std::int64_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  Tensor logits = ops::mul_scalar(ops::matmul(a, ops::transpose(b)), ops::exp(ops::scale(log_temp, -1.0)));
  return ops::add(ops::cross_entropy(logits, diag), ops::cross_entropy(ops::transpose(logits), diag));
}

Tensor caption_loss(const Tensor& logits, std::span<const text::TokenId> targets) {
  if (logits.dim() != 2 || logits.rows() != targets.size()) {
    throw DimensionError("caption_loss: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  return ops::cross_entropy(logits, targets, text::kPad);
}

std::vector<text::TokenId> pad_batch(const std::vector<text::TokenSequence>& seqs, std::size_t& length) {
  length = 0;
  for (const auto& s : seqs) length = std::max(length, s.size());
  std::vector<text::TokenId> out(seqs.size() * length, text::kPad);
  for (std::size_t b = 0; b < seqs.size(); ++b) std::ranges::copy(seqs[b].ids, out.begin() + b * length);
  return out;
}

TeacherForcing teacher_forcing(const std::vector<text::TokenSequence>& seqs) {
  std::size_t len = 0;
  for (const auto& s : seqs) len = std::max(len, s.size());
  if (len < 2) throw ContractError("teacher_forcing: sequences need at least two tokens");
  TeacherForcing tf;
  tf.steps = len - 1;
  tf.inputs.assign(seqs.size() * tf.steps, text::kPad);
  tf.targets.assign(seqs.size() * tf.steps, text::kPad);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto& ids = seqs[b].ids;
    for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
      tf.inputs[b * tf.steps + t] = ids[t];
      tf.targets[b * tf.steps + t] = ids[t + 1];
    }
  }
  return tf;
}

LossBreakdown total_loss(const NeuroCapModel& model, const TriModalBatch& batch, const LossWeights& weights) {
  weights.validate();
  batch.validate();
  const std::size_t n = batch.size();
  FmriEncoding enc = encode_fmri(model, batch.fmri);

  TeacherForcing tf = teacher_forcing(batch.tokens);
  const BrainDecoder& dec = model.brain_decoder();
  Tensor cap = caption_loss(dec.logits(dec.hidden(tf.inputs, n, enc.tokens)), tf.targets);
  Tensor ft = contrastive_loss(enc.embedding, model.text_encoder().encode(batch.tokens), model.log_temp());

  LossBreakdown out;
  out.ft = ft.item();
  out.cap = cap.item();
  Tensor weighted_ft = ops::scale(ft, weights.ft);
  Tensor weighted_cap = ops::scale(cap, weights.cap);
  if (batch.image_feats) {
    Tensor fi = contrastive_loss(enc.embedding, model.image_encoder().encode(*batch.image_feats), model.log_temp());
    out.fi = fi.item();
    out.total = ops::add(ops::add(ops::scale(fi, weights.fi), weighted_ft), weighted_cap);
  } else {
    out.total = ops::add(weighted_ft, weighted_cap);
  }
  return out;
}

}  // namespace neurocap::align
