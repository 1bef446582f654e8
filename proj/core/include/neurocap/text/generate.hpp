#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "neurocap/align/model.hpp"
#include "neurocap/data/synthetic.hpp"
#include "neurocap/nn/layers.hpp"
#include "neurocap/train/config.hpp"

namespace neurocap::text {

enum class DecodeMode { kGreedy, kSample };

struct GenerateOptions {
  /// Emitted tokens, EOS included; also capped by the decoder's position table.
  std::size_t max_len = kDefaultMaxLen;
  DecodeMode mode = DecodeMode::kGreedy;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

/// Emitted ids after BOS, ending with EOS unless the length cap was hit.
/// Every step re-runs the decoder over the full prefix.
std::vector<TokenId> generate_ids(const align::NeuroCapModel& model, std::span<const double> voxels,
                                  const GenerateOptions& opts = {});
std::string generate_caption(const align::NeuroCapModel& model, std::span<const double> voxels,
                             const GenerateOptions& opts = {});

/// Linear classifier over the decoder's hidden state at the last prompt
/// position. Features pass through a fixed whitening transform (identity
/// until fit_whitening) before a zero-initialized linear map.
class AnswerHead : public nn::Module {
 public:
  AnswerHead(std::size_t hidden, std::vector<std::string> classes);

  /// [N x H] -> [N x classes] logits.
  Tensor forward(const Tensor& hidden) const;
  void visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) override;
  /// ZCA whitening from the column mean and covariance of `features` [N x H].
  /// Eigenvalues below `floor` times the largest are clamped to it.
  void fit_whitening(const Tensor& features, double floor = 1e-3);

  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t num_classes() const { return classes_.size(); }
  nn::Linear& linear() { return linear_; }

 private:
  std::vector<std::string> classes_;
  Tensor shift_;   // [1 x H], never trained
  Tensor whiten_;  // [H x H], never trained
  nn::Linear linear_;
};

/// Decoder hidden state at the final position of build_prompt(question_i),
/// cross-attending to voxels_i. [N x H].
Tensor prompt_hidden(const align::NeuroCapModel& model, const std::vector<std::span<const double>>& voxels,
                     const std::vector<std::string>& questions);

struct Answer {
  std::string text;
  std::size_t cls = 0;
  std::vector<double> scores;  // raw head logits, one per class
};

/// Throws ContractError when `head` is null.
Answer answer_question(const align::NeuroCapModel& model, std::span<const double> voxels, const std::string& question,
                       const AnswerHead* head);

struct QaExample {
  std::size_t sample_id = 0;
  std::string question;
  std::size_t answer = 0;  // class index
};

/// Every (question, answer) pair of the given samples, answers mapped
/// through data::answer_class.
std::vector<QaExample> qa_examples(const data::Dataset& ds, const std::vector<std::size_t>& ids);

using QaCallback = std::function<void(std::size_t step, double loss)>;

/// Cross-entropy over answer classes with AdamW (cfg.lr, cfg.weight_decay,
/// cfg.batch_size, cfg.steps, cfg.seed). Head-only unless
/// cfg.unfreeze_decoder, which also trains the brain decoder. Returns the
/// loss trace.
std::vector<double> finetune_qa(align::NeuroCapModel& model, AnswerHead& head, const data::Dataset& ds,
                                const std::vector<QaExample>& examples, const train::TrainConfig& cfg,
                                const QaCallback& on_step = {});

/// Fraction of examples whose argmax class equals the answer.
double qa_accuracy(const align::NeuroCapModel& model, const AnswerHead& head, const data::Dataset& ds,
                   const std::vector<QaExample>& examples);

}  // namespace neurocap::text
