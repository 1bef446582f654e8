#include "neurocap/mbm/mbm.hpp"

#include <algorithm>
#include <cmath>

#include "neurocap/autodiff/ops.hpp"
#include "neurocap/error.hpp"

namespace neurocap::mbm {

std::vector<bool> MaskPlan::row_mask() const {
  std::vector<bool> m(num_patches, false);
  for (std::size_t i : masked_ids) m.at(i) = true;
  return m;
}

std::size_t mask_count(std::size_t num_patches, double ratio) {
  if (num_patches < 2) throw ParameterError("make_mask: need at least 2 patches");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ParameterError("make_mask: ratio must lie in (0, 1)");
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_patches)));
  return std::clamp<std::size_t>(k, 1, num_patches - 1);
}

MaskPlan make_mask(std::size_t num_patches, double ratio, std::uint64_t seed) {
  MaskPlan plan;
  plan.num_patches = num_patches;
  plan.ratio = ratio;
  const std::size_t k = mask_count(num_patches, ratio);
  std::vector<std::size_t> ids(num_patches);
  for (std::size_t i = 0; i < num_patches; ++i) ids[i] = i;
  Rng rng(seed);
  rng.shuffle(ids);
  plan.masked_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
  std::ranges::sort(plan.masked_ids);
  return plan;
}

Tensor apply_mask(const Tensor& patches, const MaskPlan& plan) {
  if (patches.dim() != 2 || patches.rows() != plan.num_patches) {
    throw DimensionError("apply_mask: plan covers " + std::to_string(plan.num_patches) + " patches, input is " +
                         shape_str(patches.shape()));
  }
  return ops::mask_rows(patches, plan.row_mask());
}

namespace {

std::vector<bool> stacked_mask(const std::vector<MaskPlan>& plans, std::size_t rows) {
  std::vector<bool> mask;
  mask.reserve(rows);
  for (const auto& p : plans) {
    auto m = p.row_mask();
    mask.insert(mask.end(), m.begin(), m.end());
  }
  if (mask.size() != rows) {
    throw DimensionError("mask plans cover " + std::to_string(mask.size()) + " patches, input has " +
                         std::to_string(rows));
  }
  return mask;
}

void zscore_in_place(std::span<double> padded, std::size_t n_real) {
  double mu = 0.0;
  for (std::size_t i = 0; i < n_real; ++i) mu += padded[i];
  mu /= static_cast<double>(n_real);
  double var = 0.0;
  for (std::size_t i = 0; i < n_real; ++i) var += (padded[i] - mu) * (padded[i] - mu);
  const double sd = std::sqrt(var / static_cast<double>(n_real));
  const double inv = sd > 0.0 ? 1.0 / sd : 0.0;
  for (std::size_t i = 0; i < n_real; ++i) padded[i] = (padded[i] - mu) * inv;
}

}  // namespace

Tensor apply_mask(const Tensor& patches, const std::vector<MaskPlan>& plans) {
  return ops::mask_rows(patches, stacked_mask(plans, patches.rows()));
}

Tensor target_patches(std::span<const double> voxels, std::size_t patch_size) {
  return target_patches_batch({voxels}, patch_size);
}

Tensor target_patches_batch(const std::vector<std::span<const double>>& samples, std::size_t patch_size) {
  Tensor t = nn::patchify_batch(samples, patch_size);
  const std::size_t per = t.numel() / samples.size();
  auto data = t.mutable_data();
  for (std::size_t b = 0; b < samples.size(); ++b) zscore_in_place(data.subspan(b * per, per), samples[b].size());
  return t;
}

FmriEncoder::FmriEncoder(std::size_t n_voxels, std::size_t patch_size, const nn::BlockConfig& cfg, Rng& rng,
                         double pos_std)
    : cfg_(cfg), embed_(n_voxels, patch_size, cfg.hidden, rng, pos_std), encoder_(cfg, rng) {}

Tensor FmriEncoder::forward(const Tensor& patches, std::size_t batch) const {
  return encoder_.forward(embed_.forward(patches, batch), batch);
}

Tensor FmriEncoder::encode(const std::vector<std::span<const double>>& voxels) const {
  for (const auto& v : voxels) {
    if (v.size() != n_voxels()) {
      throw DimensionError("FmriEncoder: expected " + std::to_string(n_voxels()) + " voxels, got " +
                           std::to_string(v.size()));
    }
  }
  return forward(target_patches_batch(voxels, patch_size()), voxels.size());
}

void FmriEncoder::visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) {
  embed_.visit_parameters(fn, prefix + "embed.");
  encoder_.visit_parameters(fn, prefix + "encoder.");
}

void MbmConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (decoder.layers >= encoder.layers) throw ParameterError("MbmConfig: decoder must be shallower than encoder");
  if (patch_size == 0 || n_voxels < patch_size * 2) throw ParameterError("MbmConfig: need at least two patches");
  if (!(pos_std > 0.0)) throw ParameterError("MbmConfig: pos_std must be > 0");
  mask_count(nn::patch_count(n_voxels, patch_size), mask_ratio);
}

namespace {

const MbmConfig& validated(const MbmConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

MbmModel::MbmModel(const MbmConfig& cfg, Rng& rng)
    : cfg_(validated(cfg)),
      encoder_(cfg.n_voxels, cfg.patch_size, cfg.encoder, rng, cfg.pos_std),
      enc_to_dec_(cfg.encoder.hidden, cfg.decoder.hidden, rng),
      dec_pos_(nn::init::normal(rng, {encoder_.num_patches(), cfg.decoder.hidden}, cfg.pos_std)),
      decoder_(cfg.decoder, rng),
      head_(cfg.decoder.hidden, cfg.patch_size, rng) {}

Tensor MbmModel::forward(const Tensor& masked_patches, std::size_t batch) const {
  Tensor h = encoder_.forward(masked_patches, batch);
  Tensor d = nn::add_positions(enc_to_dec_.forward(h), dec_pos_, batch);
  return head_.forward(decoder_.forward(d, batch));
}

void MbmModel::visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) {
  encoder_.visit_parameters(fn, prefix + "fmri_encoder.");
  enc_to_dec_.visit_parameters(fn, prefix + "mbm.enc_to_dec.");
  fn(prefix + "mbm.dec_pos", dec_pos_);
  decoder_.visit_parameters(fn, prefix + "mbm.decoder.");
  head_.visit_parameters(fn, prefix + "mbm.head.");
}

Tensor mbm_forward(std::span<const double> voxels, const MaskPlan& plan, const MbmModel& model) {
  if (voxels.size() != model.config().n_voxels) {
    throw DimensionError("mbm_forward: model expects " + std::to_string(model.config().n_voxels) +
                         " voxels, got " + std::to_string(voxels.size()));
  }
  Tensor patches = target_patches(voxels, model.config().patch_size);
  return model.forward(apply_mask(patches, plan), 1);
}

Tensor mbm_loss(const Tensor& recon, const Tensor& target, const MaskPlan& plan) {
  return mbm_loss(recon, target, std::vector<MaskPlan>{plan});
}

Tensor mbm_loss(const Tensor& recon, const Tensor& target, const std::vector<MaskPlan>& plans) {
  return ops::mse_masked(recon, target, stacked_mask(plans, recon.rows()));
}

MbmTrainer::MbmTrainer(MbmModel& model, std::vector<std::span<const double>> corpus, const PretrainConfig& cfg)
    : model_(model),
      corpus_(std::move(corpus)),
      cfg_(cfg),
      rng_(mix_seed(cfg.seed, 0x6d626d)),
      opt_(model.named_parameters(), cfg.optim) {
  if (corpus_.empty()) throw ParameterError("pretrain: corpus is empty");
  if (cfg_.batch_size == 0) throw ParameterError("pretrain: batch_size must be >= 1");
}

double MbmTrainer::step() {
  const std::size_t np = model_.encoder().num_patches();
  std::vector<std::span<const double>> batch;
  std::vector<MaskPlan> plans;
  for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
    batch.push_back(corpus_[rng_.below(corpus_.size())]);
    plans.push_back(make_mask(np, model_.config().mask_ratio, rng_.next_u64()));
  }
  const std::size_t this_step = step_;
  try {
    Tensor target = target_patches_batch(batch, model_.config().patch_size);
    Tensor recon = model_.forward(apply_mask(target, plans), batch.size());
    Tensor loss = mbm_loss(recon, target, plans);
    opt_.zero_grad();
    backward(loss);
    train::clip_grad_norm(opt_.params(), cfg_.clip_norm);
    opt_.step();
    ++step_;
    return loss.item();
  } catch (const NumericError& e) {
    tape::reset();
    throw NumericError("pretrain diverged at step " + std::to_string(this_step) + ": " + e.what());
  }
}

std::vector<double> pretrain(MbmModel& model, const std::vector<std::span<const double>>& corpus,
                             const PretrainConfig& cfg, const StepCallback& on_step) {
  std::vector<double> trace;
  if (cfg.steps == 0) return trace;
  MbmTrainer trainer(model, corpus, cfg);
  trace.reserve(cfg.steps);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    trace.push_back(trainer.step());
    if (on_step) on_step(s, trace.back());
  }
  return trace;
}

MaskedEval evaluate_masked(const MbmModel& model, const std::vector<std::span<const double>>& samples,
                           std::uint64_t seed, std::size_t batch_size) {
  if (samples.empty()) throw ParameterError("evaluate_masked: no samples");
  NoGradGuard guard;
  const std::size_t np = model.encoder().num_patches();
  const std::size_t p = model.config().patch_size;
  const std::size_t width = np * p;

  // Per-position mean over the evaluated samples; the baseline predicts it everywhere.
  std::vector<double> mu(width, 0.0);
  for (const auto& s : samples) {
    Tensor t = target_patches(s, p);
    for (std::size_t i = 0; i < width; ++i) mu[i] += t.data()[i];
  }
  for (double& m : mu) m /= static_cast<double>(samples.size());

  MaskedEval out;
  double err = 0.0, base = 0.0, mean_base = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<std::span<const double>> batch(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                               samples.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<MaskPlan> plans;
    for (std::size_t i = start; i < end; ++i) {
      plans.push_back(make_mask(np, model.config().mask_ratio, mix_seed(seed, i)));
    }
    Tensor target = target_patches_batch(batch, p);
    Tensor recon = model.forward(apply_mask(target, plans), batch.size());
    const auto mask = stacked_mask(plans, target.rows());
    for (std::size_t r = 0; r < mask.size(); ++r) {
      if (!mask[r]) continue;
      for (std::size_t c = 0; c < p; ++c) {
        const std::size_t i = r * p + c;
        const double t = target.data()[i];
        const double d = recon.data()[i] - t;
        const double b = t - mu[i % width];
        err += d * d;
        base += t * t;
        mean_base += b * b;
        ++out.entries;
      }
    }
  }
  out.mse = err / static_cast<double>(out.entries);
  out.baseline = base / static_cast<double>(out.entries);
  out.mean_baseline = mean_base / static_cast<double>(out.entries);
  return out;
}

}  // namespace neurocap::mbm
