#include "neurocap/text/generate.hpp"

#include <algorithm>
#include <cmath>
#include <Eigen/Dense>
#include <set>

#include "neurocap/autodiff/ops.hpp"
#include "neurocap/error.hpp"
#include "neurocap/train/optim.hpp"

namespace neurocap::text {

std::vector<TokenId> generate_ids(const align::NeuroCapModel& model, std::span<const double> voxels,
                                  const GenerateOptions& opts) {
  if (opts.max_len < 1) throw ParameterError("generate_caption: max_len must be >= 1");
  if (opts.mode == DecodeMode::kSample && !(opts.temperature > 0.0)) {
    throw ParameterError("generate_caption: temperature must be > 0");
  }
  const align::BrainDecoder& dec = model.brain_decoder();
  const std::size_t limit = std::min(opts.max_len, dec.max_len() - 1);

  NoGradGuard guard;
  const Tensor cond = align::encode_fmri(model, {voxels}).tokens;
  Rng rng(opts.seed);
  std::vector<TokenId> prefix{kBos};
  std::vector<TokenId> out;
  while (out.size() < limit) {
    const Tensor logits = dec.logits(dec.hidden(prefix, 1, cond));
    const std::size_t v = logits.cols();
    const auto last = logits.data().subspan((prefix.size() - 1) * v, v);
    std::size_t next = 0;
    if (opts.mode == DecodeMode::kGreedy) {
      next = static_cast<std::size_t>(std::ranges::max_element(last) - last.begin());
    } else {
      const double top = *std::ranges::max_element(last);
      std::vector<double> w(v);
      double total = 0.0;
      for (std::size_t i = 0; i < v; ++i) total += w[i] = std::exp((last[i] - top) / opts.temperature);
      double u = rng.uniform() * total;
      next = v - 1;
      for (std::size_t i = 0; i < v; ++i) {
        if ((u -= w[i]) < 0.0) {
          next = i;
          break;
        }
      }
    }
    const auto id = static_cast<TokenId>(next);
    out.push_back(id);
    if (id == kEos) break;
    prefix.push_back(id);
  }
  return out;
}

std::string generate_caption(const align::NeuroCapModel& model, std::span<const double> voxels,
                             const GenerateOptions& opts) {
  return detokenize(generate_ids(model, voxels, opts));
}

AnswerHead::AnswerHead(std::size_t hidden, std::vector<std::string> classes) : classes_(std::move(classes)) {
  if (classes_.empty()) throw ParameterError("AnswerHead: empty class table");
  std::set<std::string> seen;
  for (const auto& c : classes_) {
    if (!seen.insert(c).second) throw ParameterError("AnswerHead: duplicate answer '" + c + "'");
  }
  Rng unused(0);
  linear_ = nn::Linear(hidden, classes_.size(), unused);
  std::ranges::fill(linear_.weight().mutable_data(), 0.0);
  shift_ = Tensor::zeros({1, hidden});
  whiten_ = Tensor::eye(hidden);
}

Tensor AnswerHead::forward(const Tensor& hidden) const {
  const std::size_t n = hidden.dim() == 2 ? hidden.rows() : 0;
  return linear_.forward(ops::matmul(ops::sub(hidden, ops::tile_rows(shift_, n)), whiten_));
}

void AnswerHead::fit_whitening(const Tensor& features, double floor) {
  const std::size_t h = shift_.cols();
  if (features.dim() != 2 || features.cols() != h || features.rows() < 2) {
    throw DimensionError("AnswerHead: cannot fit whitening on " + shape_str(features.shape()));
  }
  if (!(floor > 0.0 && floor <= 1.0)) throw ParameterError("AnswerHead: whitening floor must lie in (0, 1]");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Mat x = Eigen::Map<const Mat>(features.data().data(), static_cast<Eigen::Index>(features.rows()),
                                      static_cast<Eigen::Index>(h));
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Mat centered = x.rowwise() - mean;
  const Mat cov = centered.transpose() * centered / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(floor * eig.eigenvalues().maxCoeff()).cwiseMax(1e-300);
  const Mat w = eig.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  std::ranges::copy(std::span<const double>(mean.data(), h), shift_.mutable_data().begin());
  std::ranges::copy(std::span<const double>(w.data(), h * h), whiten_.mutable_data().begin());
}

void AnswerHead::visit_parameters(const nn::ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "shift", shift_);
  fn(prefix + "whiten", whiten_);
  linear_.visit_parameters(fn, prefix + "linear.");
}

Tensor prompt_hidden(const align::NeuroCapModel& model, const std::vector<std::span<const double>>& voxels,
                     const std::vector<std::string>& questions) {
  if (voxels.size() != questions.size()) {
    throw DimensionError("prompt_hidden: " + std::to_string(voxels.size()) + " fMRI samples for " +
                         std::to_string(questions.size()) + " questions");
  }
  std::vector<TokenSequence> prompts;
  std::vector<std::size_t> last;
  for (const auto& q : questions) prompts.push_back(build_prompt(q));
  std::size_t len = 0;
  const std::vector<TokenId> ids = align::pad_batch(prompts, len);
  // Right padding is harmless: the decoder is causal, so the last real
  // position never sees the pads after it.
  for (std::size_t b = 0; b < prompts.size(); ++b) last.push_back(b * len + prompts[b].size() - 1);
  const Tensor cond = align::encode_fmri(model, voxels).tokens;
  const Tensor h = model.brain_decoder().hidden(ids, prompts.size(), cond);
  return ops::gather_rows(h, last);
}

Answer answer_question(const align::NeuroCapModel& model, std::span<const double> voxels, const std::string& question,
                       const AnswerHead* head) {
  if (head == nullptr) throw ContractError("answer_question: no answer head loaded");
  NoGradGuard guard;
  const Tensor logits = head->forward(prompt_hidden(model, {voxels}, {question}));
  Answer a;
  a.scores.assign(logits.data().begin(), logits.data().end());
  a.cls = static_cast<std::size_t>(std::ranges::max_element(a.scores) - a.scores.begin());
  a.text = head->classes()[a.cls];
  return a;
}

std::vector<QaExample> qa_examples(const data::Dataset& ds, const std::vector<std::size_t>& ids) {
  std::vector<QaExample> out;
  for (std::size_t id : ids) {
    for (const auto& qa : ds.sample(id).qa) out.push_back({id, qa.question, data::answer_class(qa.answer)});
  }
  return out;
}

namespace {

Tensor hidden_for(const align::NeuroCapModel& model, const data::Dataset& ds, const std::vector<QaExample>& ex,
                  const std::vector<std::size_t>& rows) {
  std::vector<std::span<const double>> vox;
  std::vector<std::string> qs;
  for (std::size_t r : rows) {
    vox.emplace_back(ds.sample(ex[r].sample_id).voxels);
    qs.push_back(ex[r].question);
  }
  return prompt_hidden(model, vox, qs);
}

Tensor all_hidden(const align::NeuroCapModel& model, const data::Dataset& ds, const std::vector<QaExample>& ex) {
  NoGradGuard guard;
  constexpr std::size_t kChunk = 64;
  std::vector<Tensor> parts;
  for (std::size_t start = 0; start < ex.size(); start += kChunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(ex.size(), start + kChunk); ++i) rows.push_back(i);
    parts.push_back(hidden_for(model, ds, ex, rows));
  }
  return ops::concat_rows(parts);
}

}  // namespace

std::vector<double> finetune_qa(align::NeuroCapModel& model, AnswerHead& head, const data::Dataset& ds,
                                const std::vector<QaExample>& examples, const train::TrainConfig& cfg,
                                const QaCallback& on_step) {
  cfg.optim().validate();
  if (cfg.batch_size == 0) throw ParameterError("finetune_qa: batch_size must be >= 1");
  if (examples.empty()) throw ParameterError("finetune_qa: no examples");
  if (head.linear().in_features() != model.brain_decoder().width()) {
    throw DimensionError("finetune_qa: head expects width " + std::to_string(head.linear().in_features()) +
                         ", decoder has " + std::to_string(model.brain_decoder().width()));
  }
  for (const auto& e : examples) {
    if (e.answer >= head.num_classes()) {
      throw IndexError("finetune_qa: answer class " + std::to_string(e.answer) + " outside [0, " +
                       std::to_string(head.num_classes()) + ")");
    }
  }
  std::vector<double> trace;
  if (cfg.steps == 0) return trace;

  std::vector<nn::NamedTensor> params = head.named_parameters("head.");
  if (cfg.unfreeze_decoder) {
    model.set_trainable(false);
    model.brain_decoder().set_trainable(true);
    for (auto& p : model.brain_decoder().named_parameters("brain_decoder.")) params.push_back(p);
  }
  train::AdamW opt(params, cfg.optim());
  Rng rng(mix_seed(cfg.seed, 0x667161));

  // Head-only training never changes the features, so they are computed once.
  const Tensor initial = all_hidden(model, ds, examples);
  head.fit_whitening(initial);
  const Tensor cached = cfg.unfreeze_decoder ? Tensor() : initial;

  const std::size_t n = std::min(cfg.batch_size, examples.size());
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  trace.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
    std::vector<std::size_t> rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<std::int64_t> targets;
    for (std::size_t r : rows) targets.push_back(static_cast<std::int64_t>(examples[r].answer));
    try {
      const Tensor h = cfg.unfreeze_decoder ? hidden_for(model, ds, examples, rows) : ops::gather_rows(cached, rows);
      Tensor loss = ops::cross_entropy(head.forward(h), targets);
      opt.zero_grad();
      backward(loss);
      train::clip_grad_norm(opt.params(), cfg.clip_norm);
      opt.step();
      trace.push_back(loss.item());
    } catch (const NumericError& e) {
      tape::reset();
      throw NumericError("finetune_qa diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (on_step) on_step(step, trace.back());
  }
  return trace;
}

double qa_accuracy(const align::NeuroCapModel& model, const AnswerHead& head, const data::Dataset& ds,
                   const std::vector<QaExample>& examples) {
  if (examples.empty()) throw ParameterError("qa_accuracy: no examples");
  NoGradGuard guard;
  const Tensor logits = head.forward(all_hidden(model, ds, examples));
  const std::size_t c = logits.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto row = logits.data().subspan(i * c, c);
    const auto arg = static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
    correct += arg == examples[i].answer ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace neurocap::text
