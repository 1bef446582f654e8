#include "neurocap/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <tuple>
#include <set>

#include "neurocap/error.hpp"
#include "neurocap/rng.hpp"
#include "neurocap/text/vocab.hpp"

namespace neurocap::metrics {

namespace {

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}

void check_records(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ParameterError("metrics: no records");
  for (const auto& r : records) {
    if (r.references.empty()) throw ParameterError("metrics: record '" + r.id + "' has no references");
  }
}

std::vector<Tokens> tokenize_all(const std::vector<std::string>& texts) {
  std::vector<Tokens> out;
  for (const auto& t : texts) out.push_back(normalize_tokens(t));
  return out;
}

template <typename F>
double best_over_refs(const EvalRecord& r, F score) {
  const Tokens c = normalize_tokens(r.candidate);
  double best = 0.0;
  for (const auto& ref : r.references) best = std::max(best, score(c, normalize_tokens(ref)));
  return best;
}

template <typename F>
double corpus_mean(const std::vector<EvalRecord>& records, F score) {
  check_records(records);
  double acc = 0.0;
  for (const auto& r : records) acc += best_over_refs(r, score);
  return acc / static_cast<double>(records.size());
}

double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

Tokens normalize_tokens(const std::string& text) { return text::split_words(text); }

BleuResult bleu(const std::vector<EvalRecord>& records, std::size_t max_n) {
  if (max_n < 1 || max_n > 4) throw ParameterError("bleu: max_n must lie in [1, 4]");
  check_records(records);
  BleuResult out;
  for (const auto& r : records) {
    const Tokens c = normalize_tokens(r.candidate);
    const auto refs = tokenize_all(r.references);
    if (c.empty()) {
      ++out.empty_candidates;
      continue;
    }
    out.candidate_length += c.size();
    // Closest reference length; ties go to the shorter reference.
    std::size_t best = refs[0].size();
    for (const auto& ref : refs) {
      const auto d = [&](std::size_t len) { return len > c.size() ? len - c.size() : c.size() - len; };
      if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
    }
    out.reference_length += best;
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto cand = ngrams(c, n);
      NgramCounts max_ref;
      for (const auto& ref : refs) {
        for (const auto& [g, k] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], k);
      }
      for (const auto& [g, k] : cand) {
        auto it = max_ref.find(g);
        out.matched[n - 1] += std::min(k, it == max_ref.end() ? std::size_t{0} : it->second);
        out.total[n - 1] += k;
      }
    }
  }
  if (out.candidate_length == 0) return out;
  const double c = static_cast<double>(out.candidate_length);
  const double rl = static_cast<double>(out.reference_length);
  out.brevity_penalty = c > rl ? 1.0 : std::exp(1.0 - rl / c);
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (out.matched[n - 1] == 0 || out.total[n - 1] == 0) break;
    log_sum += std::log(static_cast<double>(out.matched[n - 1]) / static_cast<double>(out.total[n - 1]));
    out.score[n - 1] = out.brevity_penalty * std::exp(log_sum / static_cast<double>(n));
  }
  return out;
}

double rouge_1_f1(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::map<std::string, std::size_t> rc;
  for (const auto& w : reference) ++rc[w];
  std::size_t overlap = 0;
  for (const auto& w : candidate) {
    auto it = rc.find(w);
    if (it != rc.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return f1(static_cast<double>(overlap) / static_cast<double>(candidate.size()),
            static_cast<double>(overlap) / static_cast<double>(reference.size()));
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_f1(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double l = static_cast<double>(lcs_length(candidate, reference));
  return f1(l / static_cast<double>(candidate.size()), l / static_cast<double>(reference.size()));
}

double rouge_1(const std::vector<EvalRecord>& records) { return corpus_mean(records, rouge_1_f1); }
double rouge_l(const std::vector<EvalRecord>& records) { return corpus_mean(records, rouge_l_f1); }

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  if (reference.size() > 64) throw ParameterError("meteor: references longer than 64 tokens are not supported");
  // Maximize matches, then minimize chunks. State: candidate position, used
  // reference mask, reference position of the previous match (or none).
  struct Best {
    std::size_t matches = 0;
    std::size_t chunks = 0;
    bool better_than(const Best& o) const {
      return matches != o.matches ? matches > o.matches : chunks < o.chunks;
    }
  };
  const std::size_t none = reference.size();
  std::map<std::tuple<std::size_t, std::uint64_t, std::size_t>, Best> memo;
  std::function<Best(std::size_t, std::uint64_t, std::size_t)> go = [&](std::size_t i, std::uint64_t used,
                                                                         std::size_t prev) -> Best {
    if (i == candidate.size()) return {};
    const auto key = std::make_tuple(i, used, prev);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    Best best = go(i + 1, used, none);
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if ((used >> j) & 1U || reference[j] != candidate[i]) continue;
      Best sub = go(i + 1, used | (std::uint64_t{1} << j), j);
      sub.matches += 1;
      if (prev == none || j != prev + 1) sub.chunks += 1;
      if (sub.better_than(best)) best = sub;
    }
    memo.emplace(key, best);
    return best;
  };
  const Best b = go(0, 0, none);
  return {b.matches, b.chunks};
}

double meteor_sentence(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const MeteorAlignment a = meteor_align(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  constexpr double kAlpha = 0.9, kBeta = 3.0, kGamma = 0.5;
  const double fmean = p * r / (kAlpha * p + (1.0 - kAlpha) * r);
  const double penalty = kGamma * std::pow(static_cast<double>(a.chunks) / m, kBeta);
  return fmean * (1.0 - penalty);
}

double meteor(const std::vector<EvalRecord>& records) { return corpus_mean(records, meteor_sentence); }

std::vector<double> cider_per_sample(const std::vector<EvalRecord>& records) {
  check_records(records);
  if (records.size() < 2) throw ParameterError("cider: the IDF needs a corpus of at least 2 records");
  constexpr std::size_t kMaxN = 4;
  const double log_n = std::log(static_cast<double>(records.size()));

  std::vector<std::vector<Tokens>> refs;
  std::array<std::map<Tokens, std::size_t>, kMaxN> df;
  for (const auto& r : records) {
    refs.push_back(tokenize_all(r.references));
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::set<Tokens> seen;
      for (const auto& ref : refs.back()) {
        for (const auto& [g, k] : ngrams(ref, n)) seen.insert(g);
      }
      for (const auto& g : seen) ++df[n - 1][g];
    }
  }

  auto tfidf = [&](const Tokens& t, std::size_t n) {
    std::map<Tokens, double> v;
    for (const auto& [g, k] : ngrams(t, n)) {
      auto it = df[n - 1].find(g);
      const double d = it == df[n - 1].end() ? 1.0 : static_cast<double>(it->second);
      v[g] = static_cast<double>(k) * (log_n - std::log(d));
    }
    return v;
  };
  auto cosine = [](const std::map<Tokens, double>& a, const std::map<Tokens, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, x] : a) {
      na += x * x;
      auto it = b.find(g);
      if (it != b.end()) dot += x * it->second;
    }
    for (const auto& [g, y] : b) nb += y * y;
    return na > 0.0 && nb > 0.0 ? dot / (std::sqrt(na) * std::sqrt(nb)) : 0.0;
  };

  std::vector<double> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Tokens c = normalize_tokens(records[i].candidate);
    double acc = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto vc = tfidf(c, n);
      double per_n = 0.0;
      for (const auto& ref : refs[i]) per_n += cosine(vc, tfidf(ref, n));
      acc += per_n / static_cast<double>(refs[i].size());
    }
    out.push_back(10.0 * acc / static_cast<double>(kMaxN));
  }
  return out;
}

double cider(const std::vector<EvalRecord>& records) {
  const auto per = cider_per_sample(records);
  double acc = 0.0;
  for (double v : per) acc += v;
  return acc / static_cast<double>(per.size());
}

double two_way_identification(const Tensor& fmri, const Tensor& text, std::uint64_t seed, bool all_pairs) {
  if (fmri.dim() != 2 || text.dim() != 2 || fmri.rows() != text.rows() || fmri.cols() != text.cols()) {
    throw DimensionError("two_way_identification: embeddings " + shape_str(fmri.shape()) + " and " +
                         shape_str(text.shape()) + " do not pair up");
  }
  const std::size_t n = fmri.rows();
  const std::size_t d = fmri.cols();
  if (n < 2) throw ParameterError("two_way_identification: need at least 2 samples");
  auto cos = [&](std::size_t i, std::size_t j) {
    double dot = 0.0, a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double x = fmri.data()[i * d + k];
      const double y = text.data()[j * d + k];
      dot += x * y;
      a += x * x;
      b += y * y;
    }
    return dot / (std::sqrt(a) * std::sqrt(b));
  };
  Rng rng(seed);
  double wins = 0.0, trials = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double own = cos(i, i);
    if (all_pairs) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        wins += own > cos(i, j) ? 1.0 : 0.0;
        trials += 1.0;
      }
    } else {
      std::size_t j = rng.below(n - 1);
      if (j >= i) ++j;
      wins += own > cos(i, j) ? 1.0 : 0.0;
      trials += 1.0;
    }
  }
  return 100.0 * wins / trials;
}

double vqa_accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold) {
  if (predicted.size() != gold.size()) {
    throw DimensionError("vqa_accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(gold.size()) + " answers");
  }
  if (gold.empty()) throw ParameterError("vqa_accuracy: no answers");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["bleu_1"] = bleu[0];
  j["bleu_2"] = bleu[1];
  j["bleu_3"] = bleu[2];
  j["bleu_4"] = bleu[3];
  j["meteor"] = meteor;
  j["rouge_1"] = rouge_1;
  j["rouge_l"] = rouge_l;
  j["cider"] = cider;
  j["clip"] = clip ? nlohmann::ordered_json(*clip) : nlohmann::ordered_json(nullptr);
  j["empty_candidates"] = empty_candidates;
  j["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : samples) {
    j["samples"].push_back(
        {{"id", s.id}, {"meteor", s.meteor}, {"rouge_1", s.rouge_1}, {"rouge_l", s.rouge_l}, {"cider", s.cider}});
  }
  j["config"] = config;
  return j;
}

std::string MetricReport::table_header() {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %7s %7s %7s %7s %7s %7s %7s %7s %8s", "setting", "B@1", "B@2", "B@3", "B@4",
                "M", "R-1", "R-L", "CIDEr", "CLIP");
  return buf;
}

std::string MetricReport::table_row(const std::string& label) const {
  char clip_buf[16];
  if (clip) {
    std::snprintf(clip_buf, sizeof clip_buf, "%8.3f", *clip);
  } else {
    std::snprintf(clip_buf, sizeof clip_buf, "%8s", "-");
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-24s %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f %s", label.c_str(), bleu[0],
                bleu[1], bleu[2], bleu[3], meteor, rouge_1, rouge_l, cider, clip_buf);
  return buf;
}

MetricReport evaluate_captions(const std::vector<EvalRecord>& records) {
  check_records(records);
  MetricReport rep;
  const BleuResult b = bleu(records, 4);
  rep.bleu = b.score;
  rep.empty_candidates = b.empty_candidates;
  const auto cid = records.size() >= 2 ? cider_per_sample(records) : std::vector<double>(records.size(), 0.0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    SampleScores s;
    s.id = records[i].id;
    s.meteor = best_over_refs(records[i], meteor_sentence);
    s.rouge_1 = best_over_refs(records[i], rouge_1_f1);
    s.rouge_l = best_over_refs(records[i], rouge_l_f1);
    s.cider = cid[i];
    rep.meteor += s.meteor;
    rep.rouge_1 += s.rouge_1;
    rep.rouge_l += s.rouge_l;
    rep.cider += s.cider;
    rep.samples.push_back(std::move(s));
  }
  const double n = static_cast<double>(records.size());
  rep.meteor /= n;
  rep.rouge_1 /= n;
  rep.rouge_l /= n;
  rep.cider /= n;
  return rep;
}

}  // namespace neurocap::metrics
