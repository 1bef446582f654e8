#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "neurocap/mbm/mbm.hpp"
#include "neurocap/nn/blocks.hpp"
#include "neurocap/text/vocab.hpp"

namespace neurocap::align {

/// Widths and depths of every stage-2 component.
struct ModelConfig {
  std::size_t n_voxels = 512;
  std::size_t patch_size = 16;
  nn::BlockConfig fmri_encoder{64, 4, 4, 6};
  nn::BlockConfig brain_decoder{64, 4, 4, 2};
  /// Frozen text encoder; its hidden width is the shared embedding width.
  nn::BlockConfig text_encoder{64, 4, 4, 2};
  std::size_t image_dim = 32;
  std::size_t max_len = text::kDefaultMaxLen;
  std::size_t vocab_size = 0;  // 0 -> size of the standard vocabulary
  double pos_std = 1.0;        // fMRI patch positions, as in MbmConfig
  std::uint64_t frozen_seed = 0x5eed;

  std::size_t embed_dim() const { return text_encoder.hidden; }
  std::size_t resolved_vocab_size() const;
  void validate() const;
};

/// Fixed random linear map + tanh over image-feature vectors, L2-normalized.
class FrozenImageEncoder {
 public:
  FrozenImageEncoder(std::size_t image_dim, std::size_t embed_dim, std::uint64_t seed);

  /// rows: [N x image_dim] -> [N x E] unit rows, no gradient.
  Tensor encode(const std::vector<std::span<const double>>& rows) const;
  std::size_t calls() const { return calls_; }

 private:
  Tensor weight_;
  mutable std::size_t calls_ = 0;
};

/// Fixed random transformer encoder over tokens, mean-pooled over non-pad
/// positions, L2-normalized. Results are cached per token sequence.
class FrozenTextEncoder {
 public:
  FrozenTextEncoder(const nn::BlockConfig& cfg, std::size_t vocab_size, std::size_t max_len, std::uint64_t seed);

  Tensor encode(const std::vector<text::TokenSequence>& seqs) const;
  std::vector<double> encode_one(const text::TokenSequence& seq) const;

 private:
  nn::BlockConfig cfg_;
  Tensor tok_, pos_;
  std::unique_ptr<nn::TransformerEncoder> encoder_;
  mutable std::map<std::vector<text::TokenId>, std::vector<double>> cache_;
};

/// Attentional pooler (one query) -> linear to E -> L2 normalization.
class Projector : public nn::Module {
 public:
  Projector(const nn::BlockConfig& fmri_cfg, std::size_t embed_dim, Rng& rng);

  /// tokens [batch*Np x H] -> [batch x E] unit rows.
  Tensor forward(const Tensor& tokens, std::size_t batch) const;
  void visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) override;

 private:
  nn::AttentionalPooler pooler_;
  nn::Linear proj_;
};

/// Causal transformer decoder over text tokens with cross-attention onto the
/// fMRI token sequence.
class BrainDecoder : public nn::Module {
 public:
  BrainDecoder(const nn::BlockConfig& cfg, std::size_t vocab_size, std::size_t max_len, Rng& rng);

  /// ids: batch sequences of equal length T, flattened. Returns the final
  /// normalized hidden states [batch*T x H].
  Tensor hidden(std::span<const text::TokenId> ids, std::size_t batch, const Tensor& cond) const;
  Tensor logits(const Tensor& hidden) const { return lm_head_.forward(hidden); }
  void visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) override;

  std::size_t max_len() const { return pos_.rows(); }
  std::size_t vocab_size() const { return tok_.rows(); }
  std::size_t width() const { return tok_.cols(); }
  nn::Linear& lm_head() { return lm_head_; }

 private:
  Tensor tok_, pos_;
  nn::TransformerDecoder decoder_;
  nn::Linear lm_head_;
};

/// Every stage-2 component. Trainable parameters: fmri_encoder.*,
/// projector.*, brain_decoder.*, log_temp. The frozen encoders are rebuilt
/// from config.frozen_seed and are not parameters.
class NeuroCapModel : public nn::Module {
 public:
  NeuroCapModel(const ModelConfig& cfg, Rng& rng);

  void visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) override;

  const ModelConfig& config() const { return cfg_; }
  mbm::FmriEncoder& fmri_encoder() { return fmri_encoder_; }
  const mbm::FmriEncoder& fmri_encoder() const { return fmri_encoder_; }
  Projector& projector() { return projector_; }
  const Projector& projector() const { return projector_; }
  BrainDecoder& brain_decoder() { return brain_decoder_; }
  const BrainDecoder& brain_decoder() const { return brain_decoder_; }
  Tensor& log_temp() { return log_temp_; }
  const Tensor& log_temp() const { return log_temp_; }
  double temperature() const;
  const FrozenImageEncoder& image_encoder() const { return image_encoder_; }
  const FrozenTextEncoder& text_encoder() const { return text_encoder_; }

 private:
  ModelConfig cfg_;
  mbm::FmriEncoder fmri_encoder_;
  Projector projector_;
  BrainDecoder brain_decoder_;
  Tensor log_temp_;
  FrozenImageEncoder image_encoder_;
  FrozenTextEncoder text_encoder_;
};

struct FmriEncoding {
  Tensor tokens;     // [batch*Np x H], cross-attention condition
  Tensor embedding;  // [batch x E], unit rows
};

FmriEncoding encode_fmri(const NeuroCapModel& model, const std::vector<std::span<const double>>& voxels);

struct TriModalBatch {
  std::vector<std::span<const double>> fmri;
  /// Absent in fMRI-text-only mode.
  std::optional<std::vector<std::span<const double>>> image_feats;
  std::vector<text::TokenSequence> tokens;

  std::size_t size() const { return fmri.size(); }
  void validate() const;
};

struct LossWeights {
  double fi = 1.0;
  double ft = 1.0;
  double cap = 20.0;

  void validate() const;
};

/// Symmetric InfoNCE over S = a b^T / exp(log_temp), rows matched by index.
Tensor contrastive_loss(const Tensor& a, const Tensor& b, const Tensor& log_temp);

/// Mean next-token NLL over non-pad targets.
Tensor caption_loss(const Tensor& logits, std::span<const text::TokenId> targets);

/// Right-pads sequences with PAD to a common length.
std::vector<text::TokenId> pad_batch(const std::vector<text::TokenSequence>& seqs, std::size_t& length);

struct TeacherForcing {
  std::vector<text::TokenId> inputs;   // batch x (T-1), flattened
  std::vector<text::TokenId> targets;  // batch x (T-1), flattened
  std::size_t steps = 0;               // T-1
};
TeacherForcing teacher_forcing(const std::vector<text::TokenSequence>& seqs);

struct LossBreakdown {
  Tensor total;
  std::optional<double> fi;  // absent in fMRI-text-only mode
  double ft = 0.0;
  double cap = 0.0;
};

/// lambda_fi*L_fi + lambda_ft*L_ft + lambda_cap*L_cap; the fi term (and the
/// image encoder call) is skipped entirely when the batch has no image features.
LossBreakdown total_loss(const NeuroCapModel& model, const TriModalBatch& batch, const LossWeights& weights);

}  // namespace neurocap::align
