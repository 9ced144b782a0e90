#pragma once
// Detector zoo: rewrite-based detectors (learned distance, fixed distances)
// and logits-based zero-shot baselines, each a scalar statistic with a
// declared orientation, plus the strict-threshold classifier.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "redetect/distance.hpp"
#include "redetect/scorer.hpp"

namespace redetect {

enum class Orientation { human_high, human_low };

inline std::string to_string(Orientation o) {
  return o == Orientation::human_high ? "human_high" : "human_low";
}
inline Orientation orientation_from_string(const std::string& s) {
  if (s == "human_high") return Orientation::human_high;
  if (s == "human_low") return Orientation::human_low;
  throw ParseError("unknown orientation: '" + s + "'");
}

struct DetectorSpec {
  std::string name;
  bool needs_rewrites = false;
  Orientation orientation = Orientation::human_high;  // declared, never inferred from data
};

struct DetectionResult {
  std::string doc_id;
  std::string detector;
  double statistic = 0.0;
  Label label_true = Label::human;
  int rewrites_used = 0;
};

// Registered detectors. "rewrite_learned" is the proposal; the others are
// ablations/baseline analogs for comparison columns.
inline const std::vector<DetectorSpec>& detector_zoo() {
  static const std::vector<DetectorSpec> zoo = {
      {"rewrite_learned", true, Orientation::human_high},
      {"rewrite_fd", true, Orientation::human_high},
      {"rewrite_edit", true, Orientation::human_high},
      {"likelihood", false, Orientation::human_low},
      {"lrr", false, Orientation::human_high},
      {"curvature", false, Orientation::human_low},
  };
  return zoo;
}

inline const DetectorSpec& detector_spec(const std::string& name) {
  for (const auto& spec : detector_zoo())
    if (spec.name == name) return spec;
  throw ConfigError("unknown detector: '" + name + "'");
}

// ---------------------------------------------------------------------------
// Statistics.
// ---------------------------------------------------------------------------

// Reconstruction error of a document against its rewrites (human_high).
inline double score_rewrite_detector(const TextDistance& d, const TokenSeq& parent,
                                     const std::vector<TokenSeq>& rewrites) {
  if (rewrites.empty()) throw ValidationError("rewrite detector needs rewrites");
  return reconstruction_error(d, parent, rewrites);
}

// Average log-probability under the *base* table only; the adapter is ignored
// by construction so this stays a zero-shot statistic (human_low).
inline double score_likelihood(const ScorerParams& params, const TokenSeq& seq) {
  return ScorerEval(params, /*base_only=*/true).avg_log_prob(seq);
}

// Log-rank ratio analog: sum of negative token log-probs over sum of log
// ranks. Positions whose whole next-token distribution is one exact tie carry
// no rank information and are skipped (human_high as registered).
inline double score_lrr(const ScorerParams& params, const TokenSeq& seq) {
  ScorerEval eval(params);
  eval.check_seq(seq);
  auto stats = token_logp_stats(params, seq);
  double neg_logp = 0.0, log_rank = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < stats.size(); ++t) {
    const int c = seq.ids[t];
    const auto row = eval.log_table().row(c);
    if (row.maxCoeff() == row.minCoeff()) continue;  // all-tied position
    neg_logp -= stats[t].logp_observed;
    log_rank += std::log(static_cast<double>(stats[t].rank));
    ++used;
  }
  if (used == 0) throw DegenerateInputError("lrr: every position is fully tied");
  if (log_rank == 0.0)
    throw DegenerateInputError("lrr: all observed tokens are rank 1 (denominator 0)");
  return neg_logp / log_rank;
}

// Standardized log-prob curvature analog: mean over positions of
// (logp_observed - mean_logp) / sd_logp, with the sampling expectation
// computed exactly under the bigram model (human_low).
inline double score_curvature(const ScorerParams& params, const TokenSeq& seq) {
  auto stats = token_logp_stats(params, seq);
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& st : stats) {
    if (st.var_logp <= 0.0) continue;
    sum += (st.logp_observed - st.mean_logp) / std::sqrt(st.var_logp);
    ++used;
  }
  if (used == 0)
    throw DegenerateInputError("curvature: no position has positive log-prob variance");
  return sum / static_cast<double>(used);
}

// ---------------------------------------------------------------------------
// Decision rule: strict inequality, so a statistic exactly at the threshold is
// classified human under either orientation.
// ---------------------------------------------------------------------------

inline Label classify(double statistic, double threshold, Orientation orientation) {
  const bool machine = orientation == Orientation::human_high ? statistic < threshold
                                                              : statistic > threshold;
  return machine ? Label::machine : Label::human;
}

// Linear-interpolation quantile of a sample (the common "type 7" estimator).
inline double quantile_type7(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  if (q < 0.0 || q > 1.0) throw ValidationError("quantile level must be in [0,1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// Threshold from training-side human statistics: the q-quantile under
// human_high (machine expected below), the (1-q)-quantile under human_low.
inline double default_threshold(const std::vector<double>& human_stats, Orientation orientation,
                                double q = 0.05) {
  if (human_stats.size() < 20)
    throw ValidationError("default_threshold needs at least 20 human statistics");
  return quantile_type7(human_stats, orientation == Orientation::human_high ? q : 1.0 - q);
}

// ---------------------------------------------------------------------------
// Results table (doc_id, detector, statistic, label_true, rewrites_used).
// ---------------------------------------------------------------------------

inline void save_results_tsv(const std::string& path,
                             const std::vector<DetectionResult>& results) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "doc_id\tdetector\tstatistic\tlabel_true\trewrites_used\n";
  for (const auto& r : results) {
    if (!std::isfinite(r.statistic))
      throw ValidationError("non-finite statistic for doc " + r.doc_id);
    out << r.doc_id << '\t' << r.detector << '\t' << fmt_double(r.statistic) << '\t'
        << to_string(r.label_true) << '\t' << r.rewrites_used << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<DetectionResult> load_results_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<DetectionResult> results;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;  // header
    std::istringstream ss(line);
    DetectionResult r;
    std::string stat, label;
    if (!std::getline(ss, r.doc_id, '\t') || !std::getline(ss, r.detector, '\t') ||
        !std::getline(ss, stat, '\t') || !std::getline(ss, label, '\t') ||
        !(ss >> r.rewrites_used))
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed results row");
    try {
      r.statistic = std::stod(stat);
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": bad statistic '" + stat + "'");
    }
    r.label_true = label_from_string(label);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace redetect
