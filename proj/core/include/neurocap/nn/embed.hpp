#pragma once

#include <span>
#include <vector>

#include "neurocap/nn/attention.hpp"

namespace neurocap::nn {

std::size_t patch_count(std::size_t num_voxels, std::size_t patch_size);

/// Zero-pads a voxel vector to a multiple of `patch_size` and reshapes it to
/// [ceil(V/P) x P]. The result is a constant (no gradient).
Tensor patchify(std::span<const double> voxels, std::size_t patch_size);

/// Stacks patchify() of several samples into [batch*Np x P].
Tensor patchify_batch(const std::vector<std::span<const double>>& samples, std::size_t patch_size);

/// Linear projection of voxel patches to the model width plus a learned
/// absolute position embedding per patch.
class PatchEmbed1d : public Module {
 public:
  PatchEmbed1d(std::size_t num_voxels, std::size_t patch_size, std::size_t hidden, Rng& rng,
               double pos_std = 0.02);

  /// patches: [batch*Np x P] -> [batch*Np x H], positions included.
  Tensor forward(const Tensor& patches, std::size_t batch) const;
  /// Projection only, no positional term.
  Tensor project(const Tensor& patches) const { return proj_.forward(patches); }
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  std::size_t num_patches() const { return num_patches_; }
  std::size_t patch_size() const { return patch_size_; }
  std::size_t num_voxels() const { return num_voxels_; }
  Linear& projection() { return proj_; }
  Tensor& positions() { return pos_; }

 private:
  std::size_t num_voxels_, patch_size_, num_patches_;
  Linear proj_;
  Tensor pos_;
};

/// Adds rows [0, T) of `table` to every length-T sequence in x ([batch*T x H]).
Tensor add_positions(const Tensor& x, const Tensor& table, std::size_t batch);

/// Learned-query cross-attention pooling: Q query vectors attend over a token
/// sequence and come out as Q pooled vectors per sample.
class AttentionalPooler : public Module {
 public:
  AttentionalPooler(const BlockConfig& cfg, std::size_t n_queries, Rng& rng);

  /// tokens: [batch*T x H] -> [batch*Q x H].
  Tensor forward(const Tensor& tokens, std::size_t batch) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix) override;

  std::size_t n_queries() const { return queries_.rows(); }

 private:
  Tensor queries_;
  LayerNorm ln_kv_, ln_out_;
  MultiHeadAttention attn_;
};

}  // namespace neurocap::nn
