#pragma once

#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "neurocap/autodiff/tensor.hpp"

namespace neurocap::metrics {

struct EvalRecord {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;  // at least one
};

using Tokens = std::vector<std::string>;

/// Tokenizer normalization: lowercase, punctuation split.
Tokens normalize_tokens(const std::string& text);

struct BleuResult {
  std::array<double, 4> score{};           // B@1..B@4 (entries past max_n stay 0)
  std::array<std::size_t, 4> matched{};    // clipped n-gram matches, pooled
  std::array<std::size_t, 4> total{};      // candidate n-grams, pooled
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;        // sum of closest reference lengths
  double brevity_penalty = 0.0;
  std::size_t empty_candidates = 0;        // flagged; they add zero counts
};

/// Corpus BLEU from pooled clipped counts; max_n in [1, 4].
BleuResult bleu(const std::vector<EvalRecord>& records, std::size_t max_n = 4);

/// Unigram-overlap F1 against one reference.
double rouge_1_f1(const Tokens& candidate, const Tokens& reference);
/// LCS F1 (beta = 1) against one reference.
double rouge_l_f1(const Tokens& candidate, const Tokens& reference);
std::size_t lcs_length(const Tokens& a, const Tokens& b);
/// Mean over records of the best score over references.
double rouge_1(const std::vector<EvalRecord>& records);
double rouge_l(const std::vector<EvalRecord>& records);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
/// Exact-match unigram alignment with the most matches, and among those the
/// fewest chunks. References longer than 64 tokens raise ParameterError.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);
/// F_mean (alpha 0.9) times (1 - 0.5 (chunks/matches)^3).
double meteor_sentence(const Tokens& candidate, const Tokens& reference);
double meteor(const std::vector<EvalRecord>& records);

/// CIDEr (no length penalty) per record, x10 scale; IDF over the reference
/// sets of the whole corpus. Needs at least 2 records.
std::vector<double> cider_per_sample(const std::vector<EvalRecord>& records);
double cider(const std::vector<EvalRecord>& records);

/// Percent of rows i whose own text embedding beats a seeded random
/// distractor in cosine similarity; ties fail. `all_pairs` compares against
/// every j != i instead of one draw.
double two_way_identification(const Tensor& fmri, const Tensor& text, std::uint64_t seed, bool all_pairs = false);

double vqa_accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold);

struct SampleScores {
  std::string id;
  double meteor = 0.0;
  double rouge_1 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
};

struct MetricReport {
  std::array<double, 4> bleu{};
  double meteor = 0.0;
  double rouge_1 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::optional<double> clip;  // 2-way identification, percent
  std::size_t empty_candidates = 0;
  std::vector<SampleScores> samples;
  nlohmann::ordered_json config;

  nlohmann::ordered_json to_json() const;
  /// Column header and one fixed-width row in the B@1..CLIP order.
  static std::string table_header();
  std::string table_row(const std::string& label = "") const;
};

MetricReport evaluate_captions(const std::vector<EvalRecord>& records);

}  // namespace neurocap::metrics
