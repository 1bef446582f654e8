#include "neurocap/nn/embed.hpp"

#include <algorithm>

#include "neurocap/autodiff/ops.hpp"
#include "neurocap/error.hpp"

namespace neurocap::nn {

std::size_t patch_count(std::size_t num_voxels, std::size_t patch_size) {
  if (num_voxels == 0 || patch_size == 0) throw ParameterError("patch_count: voxels and patch size must be >= 1");
  return (num_voxels + patch_size - 1) / patch_size;
}

Tensor patchify(std::span<const double> voxels, std::size_t patch_size) {
  const std::size_t n = patch_count(voxels.size(), patch_size);
  std::vector<double> padded(n * patch_size, 0.0);
  std::copy(voxels.begin(), voxels.end(), padded.begin());
  return Tensor::from({n, patch_size}, std::move(padded));
}

Tensor patchify_batch(const std::vector<std::span<const double>>& samples, std::size_t patch_size) {
  if (samples.empty()) throw DimensionError("patchify_batch: empty batch");
  const std::size_t v = samples.front().size();
  const std::size_t n = patch_count(v, patch_size);
  std::vector<double> out(samples.size() * n * patch_size, 0.0);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    if (samples[b].size() != v) throw DimensionError("patchify_batch: samples differ in voxel count");
    std::copy(samples[b].begin(), samples[b].end(), out.begin() + b * n * patch_size);
  }
  return Tensor::from({samples.size() * n, patch_size}, std::move(out));
}

PatchEmbed1d::PatchEmbed1d(std::size_t num_voxels, std::size_t patch_size, std::size_t hidden, Rng& rng,
                           double pos_std)
    : num_voxels_(num_voxels),
      patch_size_(patch_size),
      num_patches_(patch_count(num_voxels, patch_size)),
      proj_(patch_size, hidden, rng),
      pos_(init::normal(rng, {num_patches_, hidden}, pos_std)) {}

Tensor PatchEmbed1d::forward(const Tensor& patches, std::size_t batch) const {
  if (patches.dim() != 2 || patches.cols() != patch_size_ || patches.rows() != batch * num_patches_) {
    throw DimensionError("PatchEmbed1d: expected [" + std::to_string(batch * num_patches_) + "x" +
                         std::to_string(patch_size_) + "] patches, got " + shape_str(patches.shape()));
  }
  return add_positions(proj_.forward(patches), pos_, batch);
}

void PatchEmbed1d::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  proj_.visit_parameters(fn, prefix + "proj.");
  fn(prefix + "pos", pos_);
}

Tensor add_positions(const Tensor& x, const Tensor& table, std::size_t batch) {
  if (batch == 0 || x.rows() % batch != 0) throw DimensionError("add_positions: rows not divisible by batch");
  const std::size_t t = x.rows() / batch;
  if (t > table.rows()) {
    throw DimensionError("add_positions: sequence length " + std::to_string(t) + " exceeds table size " +
                         std::to_string(table.rows()));
  }
  Tensor pos = t == table.rows() ? table : ops::slice_rows(table, 0, t);
  return ops::add(x, batch == 1 ? pos : ops::tile_rows(pos, batch));
}

AttentionalPooler::AttentionalPooler(const BlockConfig& cfg, std::size_t n_queries, Rng& rng)
    : queries_(init::normal(rng, {n_queries, cfg.hidden}, 0.02)),
      ln_kv_(cfg.hidden),
      ln_out_(cfg.hidden),
      attn_(cfg, rng) {
  if (n_queries == 0) throw ParameterError("AttentionalPooler: need at least one query");
}

Tensor AttentionalPooler::forward(const Tensor& tokens, std::size_t batch) const {
  Tensor q = batch == 1 ? queries_ : ops::tile_rows(queries_, batch);
  return ln_out_.forward(attn_.forward(q, ln_kv_.forward(tokens), batch, AttentionMaskMode::kNone));
}

void AttentionalPooler::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "queries", queries_);
  ln_kv_.visit_parameters(fn, prefix + "ln_kv.");
  attn_.visit_parameters(fn, prefix + "attn.");
  ln_out_.visit_parameters(fn, prefix + "ln_out.");
}

}  // namespace neurocap::nn
