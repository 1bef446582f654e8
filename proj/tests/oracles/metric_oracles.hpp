#pragma once

// Naive reference implementations of the caption metrics. Deliberately
// written differently from core: string-keyed n-grams counted by linear
// scans, LCS by subsequence enumeration, METEOR by enumerating every
// alignment. Only suitable for short sentences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Words = std::vector<std::string>;

inline std::string key(const Words& w, std::size_t at, std::size_t n) {
  std::string k;
  for (std::size_t i = 0; i < n; ++i) k += w[at + i] + '\x1f';
  return k;
}

inline std::vector<std::string> grams(const Words& w, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) out.push_back(key(w, i, n));
  return out;
}

inline std::size_t occurrences(const std::vector<std::string>& list, const std::string& g) {
  std::size_t c = 0;
  for (const auto& x : list) c += x == g ? 1 : 0;
  return c;
}

struct Record {
  Words cand;
  std::vector<Words> refs;
};

struct Bleu {
  double score[4] = {0, 0, 0, 0};
  std::size_t matched[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  std::size_t c = 0, r = 0;
};

inline Bleu bleu(const std::vector<Record>& recs, std::size_t max_n) {
  Bleu b;
  for (const auto& rec : recs) {
    if (rec.cand.empty()) continue;
    b.c += rec.cand.size();
    std::vector<std::size_t> lens;
    for (const auto& r : rec.refs) lens.push_back(r.size());
    std::sort(lens.begin(), lens.end(), [&](std::size_t x, std::size_t y) {
      const long dx = std::labs(static_cast<long>(x) - static_cast<long>(rec.cand.size()));
      const long dy = std::labs(static_cast<long>(y) - static_cast<long>(rec.cand.size()));
      return dx != dy ? dx < dy : x < y;
    });
    b.r += lens.front();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto cg = grams(rec.cand, n);
      std::set<std::string> distinct(cg.begin(), cg.end());
      b.total[n - 1] += cg.size();
      for (const auto& g : distinct) {
        std::size_t best = 0;
        for (const auto& r : rec.refs) best = std::max(best, occurrences(grams(r, n), g));
        b.matched[n - 1] += std::min(occurrences(cg, g), best);
      }
    }
  }
  if (b.c == 0) return b;
  const double bp = b.c < b.r ? std::exp(1.0 - static_cast<double>(b.r) / static_cast<double>(b.c)) : 1.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double logs = 0.0;
    bool zero = false;
    for (std::size_t k = 0; k < n; ++k) {
      if (b.matched[k] == 0) zero = true;
      else logs += std::log(static_cast<double>(b.matched[k]) / static_cast<double>(b.total[k]));
    }
    b.score[n - 1] = zero ? 0.0 : bp * std::exp(logs / static_cast<double>(n));
  }
  return b;
}

inline double f1(double overlap, std::size_t c, std::size_t r) {
  if (overlap == 0.0) return 0.0;
  const double p = overlap / static_cast<double>(c), rc = overlap / static_cast<double>(r);
  return 2 * p * rc / (p + rc);
}

inline double rouge1(const Words& c, const Words& r) {
  if (c.empty() || r.empty()) return 0.0;
  std::set<std::string> vocab(c.begin(), c.end());
  double overlap = 0.0;
  for (const auto& w : vocab) {
    overlap += static_cast<double>(std::min(std::count(c.begin(), c.end(), w), std::count(r.begin(), r.end(), w)));
  }
  return f1(overlap, c.size(), r.size());
}

inline bool is_subsequence(const Words& sub, const Words& of) {
  std::size_t j = 0;
  for (const auto& w : of) {
    if (j < sub.size() && sub[j] == w) ++j;
  }
  return j == sub.size();
}

// Longest common subsequence by trying every subsequence of the shorter text.
inline std::size_t lcs(const Words& a, const Words& b) {
  const Words& s = a.size() <= b.size() ? a : b;
  const Words& l = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1U << s.size()); ++mask) {
    const auto bits = static_cast<std::size_t>(__builtin_popcount(mask));
    if (bits <= best) continue;
    Words sub;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (mask & (1U << i)) sub.push_back(s[i]);
    }
    if (is_subsequence(sub, l)) best = bits;
  }
  return best;
}

inline double rouge_l(const Words& c, const Words& r) {
  if (c.empty() || r.empty()) return 0.0;
  return f1(static_cast<double>(lcs(c, r)), c.size(), r.size());
}

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// Every partial injective map from candidate positions to equal reference
// words; keep most matches, then fewest chunks.
inline Alignment meteor_align(const Words& c, const Words& r) {
  Alignment best;
  std::vector<long> map(c.size(), -1);
  std::vector<bool> used(r.size(), false);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == c.size()) {
      Alignment a;
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (map[k] < 0) continue;
        ++a.matches;
        if (k == 0 || map[k - 1] < 0 || map[k - 1] + 1 != map[k]) ++a.chunks;
      }
      if (a.matches > best.matches || (a.matches == best.matches && a.chunks < best.chunks)) best = a;
      return;
    }
    map[i] = -1;
    rec(i + 1);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (used[j] || r[j] != c[i]) continue;
      used[j] = true;
      map[i] = static_cast<long>(j);
      rec(i + 1);
      used[j] = false;
      map[i] = -1;
    }
  };
  rec(0);
  return best;
}

inline double meteor(const Words& c, const Words& r) {
  if (c.empty() || r.empty()) return 0.0;
  const Alignment a = meteor_align(c, r);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(c.size()), rc = m / static_cast<double>(r.size());
  const double fmean = 10.0 * p * rc / (rc + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

inline std::vector<double> cider(const std::vector<Record>& recs) {
  const double n_docs = static_cast<double>(recs.size());
  std::vector<double> out;
  for (const auto& rec : recs) {
    double sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      auto vec = [&](const Words& w) {
        std::map<std::string, double> v;
        const auto g = grams(w, n);
        for (const auto& x : std::set<std::string>(g.begin(), g.end())) {
          std::size_t df = 0;
          for (const auto& other : recs) {
            bool has = false;
            for (const auto& ref : other.refs) has = has || occurrences(grams(ref, n), x) > 0;
            df += has ? 1 : 0;
          }
          v[x] = static_cast<double>(occurrences(g, x)) * std::log(n_docs / static_cast<double>(std::max<std::size_t>(df, 1)));
        }
        return v;
      };
      const auto vc = vec(rec.cand);
      double per_ref = 0.0;
      for (const auto& ref : rec.refs) {
        const auto vr = vec(ref);
        double dot = 0.0, a = 0.0, b = 0.0;
        for (const auto& [g, x] : vc) {
          a += x * x;
          if (vr.count(g)) dot += x * vr.at(g);
        }
        for (const auto& [g, y] : vr) b += y * y;
        per_ref += (a > 0 && b > 0) ? dot / std::sqrt(a * b) : 0.0;
      }
      sum += per_ref / static_cast<double>(rec.refs.size());
    }
    out.push_back(10.0 * sum / 4.0);
  }
  return out;
}

}  // namespace oracle
