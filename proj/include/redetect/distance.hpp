#pragma once
// Distances between texts: the learned pseudo-distance (absolute difference of
// length-normalized log-likelihoods under the scorer), a fixed token-level
// edit distance, and the K-averaged reconstruction error built on either.

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "redetect/corpus.hpp"
#include "redetect/rewrite.hpp"
#include "redetect/scorer.hpp"

namespace redetect {

// |avg_log_prob(x1) - avg_log_prob(x2)|: symmetric, non-negative, triangle
// inequality by |a-c| <= |a-b| + |b-c|; zero for distinct texts with equal
// per-token likelihood (a pseudo-metric, not a metric).
inline double learned_distance(const ScorerEval& eval, const TokenSeq& x1, const TokenSeq& x2) {
  return std::abs(eval.avg_log_prob(x1) - eval.avg_log_prob(x2));
}

inline double learned_distance(const ScorerParams& params, const TokenSeq& x1,
                               const TokenSeq& x2) {
  return learned_distance(ScorerEval(params), x1, x2);
}

// Levenshtein distance over token ids (BOS excluded), normalized by the longer
// length; 0 for two empty sequences.
inline double fixed_edit_distance(const TokenSeq& x1, const TokenSeq& x2) {
  if (x1.vocab_hash != x2.vocab_hash)
    throw ValidationError("edit distance: sequences use different vocabularies");
  const std::size_t n1 = x1.ids.size() - 1;
  const std::size_t n2 = x2.ids.size() - 1;
  if (n1 == 0 && n2 == 0) return 0.0;
  std::vector<int> prev(n2 + 1), cur(n2 + 1);
  for (std::size_t j = 0; j <= n2; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n1; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= n2; ++j) {
      int sub = prev[j - 1] + (x1.ids[i] == x2.ids[j] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[n2]) / static_cast<double>(std::max(n1, n2));
}

// String form: whitespace-split words compared case-insensitively, no vocab.
inline double fixed_edit_distance(const std::string& t1, const std::string& t2) {
  auto w1 = split_whitespace(t1);
  auto w2 = split_whitespace(t2);
  if (w1.empty() && w2.empty()) return 0.0;
  std::vector<int> prev(w2.size() + 1), cur(w2.size() + 1);
  for (std::size_t j = 0; j <= w2.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= w1.size(); ++i) {
    cur[0] = static_cast<int>(i);
    const std::string a = lowercase_ascii(w1[i - 1]);
    for (std::size_t j = 1; j <= w2.size(); ++j) {
      int sub = prev[j - 1] + (a == lowercase_ascii(w2[j - 1]) ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[w2.size()]) /
         static_cast<double>(std::max(w1.size(), w2.size()));
}

// ---------------------------------------------------------------------------
// TextDistance: a closed-over distance kind usable by detectors and reports.
// The learned kind snapshots the scorer's softmax table at construction.
// ---------------------------------------------------------------------------

class TextDistance {
 public:
  enum class Kind { learned, fixed_edit };

  static TextDistance learned(const ScorerParams& params) {
    TextDistance d;
    d.kind_ = Kind::learned;
    d.eval_ = std::make_shared<ScorerEval>(params);
    return d;
  }

  static TextDistance fixed_edit() {
    TextDistance d;
    d.kind_ = Kind::fixed_edit;
    return d;
  }

  Kind kind() const { return kind_; }
  const ScorerEval& eval() const {
    if (!eval_) throw ValidationError("fixed-edit distance has no scorer");
    return *eval_;
  }

  double operator()(const TokenSeq& x1, const TokenSeq& x2) const {
    if (kind_ == Kind::learned) {
      if (x1.vocab_hash != x2.vocab_hash)
        throw ValidationError("learned distance: sequences use different vocabularies");
      return learned_distance(*eval_, x1, x2);
    }
    return fixed_edit_distance(x1, x2);
  }

 private:
  Kind kind_ = Kind::fixed_edit;
  std::shared_ptr<const ScorerEval> eval_;
};

// Mean distance between a document and its K reconstructions.
inline double reconstruction_error(const TextDistance& d, const TokenSeq& parent,
                                   const std::vector<TokenSeq>& rewrites) {
  if (rewrites.empty()) throw ValidationError("reconstruction error needs at least one rewrite");
  double sum = 0.0;
  for (const auto& r : rewrites) sum += d(parent, r);
  return sum / static_cast<double>(rewrites.size());
}

inline double reconstruction_error(const TextDistance& d, const Document& doc,
                                   const RewriteSet& set, const Vocab& vocab) {
  if (set.rewrites.empty()) throw ValidationError("reconstruction error needs at least one rewrite");
  TokenSeq parent = tokenize(doc.text, vocab);
  std::vector<TokenSeq> rewrites;
  rewrites.reserve(set.rewrites.size());
  for (const auto& r : set.rewrites) rewrites.push_back(tokenize(r, vocab));
  return reconstruction_error(d, parent, rewrites);
}

}  // namespace redetect
