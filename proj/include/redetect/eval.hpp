#pragma once
// Evaluation: orientation-aware AUC (exact Mann-Whitney with midranks),
// absolute/relative gain formulas, the machine reconstruction-error ratio
// diagnostic, histogram export, and the full detector-suite report.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "redetect/attack.hpp"
#include "redetect/detect.hpp"
#include "redetect/distance.hpp"
#include "redetect/train.hpp"

namespace redetect {

// ---------------------------------------------------------------------------
// AUC: mean over all (human, machine) pairs of [oriented human beats machine],
// ties counting 0.5 — computed in O(n log n) via midranks.
// ---------------------------------------------------------------------------

inline double auc(const std::vector<double>& human, const std::vector<double>& machine,
                  Orientation orientation) {
  if (human.empty() || machine.empty())
    throw ValidationError("auc needs non-empty statistics for both labels");
  struct Item {
    double v;
    bool is_human;
  };
  std::vector<Item> items;
  items.reserve(human.size() + machine.size());
  for (double v : human) items.push_back({v, true});
  for (double v : machine) items.push_back({v, false});
  for (const auto& it : items)
    if (!std::isfinite(it.v)) throw ValidationError("auc: non-finite statistic");
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.v < b.v; });
  double human_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].v == items[i].v) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t)
      if (items[t].is_human) human_rank_sum += midrank;
    i = j;
  }
  const double nh = static_cast<double>(human.size());
  const double nm = static_cast<double>(machine.size());
  const double u = human_rank_sum - nh * (nh + 1.0) / 2.0;
  const double a = u / (nh * nm);
  return orientation == Orientation::human_high ? a : 1.0 - a;
}

// ---------------------------------------------------------------------------
// Gains of an AUC y over a baseline AUC x: absolute (y-x)*100% and relative
// (y-x)/(1-x)*100%. A perfect baseline leaves the relative gain undefined.
// ---------------------------------------------------------------------------

struct Gains {
  double absolute_pct = 0.0;
  double relative_pct = 0.0;
  bool relative_defined = true;
};

inline Gains gains(double baseline_auc, double ours_auc) {
  if (baseline_auc < 0.0 || baseline_auc > 1.0 || ours_auc < 0.0 || ours_auc > 1.0)
    throw ValidationError("gains: AUC values must lie in [0,1]");
  Gains g;
  g.absolute_pct = 100.0 * (ours_auc - baseline_auc);
  if (baseline_auc == 1.0) {
    g.relative_defined = false;
    g.relative_pct = std::numeric_limits<double>::quiet_NaN();
  } else {
    g.relative_pct = 100.0 * (ours_auc - baseline_auc) / (1.0 - baseline_auc);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Ratio diagnostic: mean reconstruction error over machine docs divided by the
// maximum pairwise distance over the whole collection (parents and rewrites).
// ---------------------------------------------------------------------------

inline double ratio_table(const Corpus& machine_corpus,
                          const std::map<std::string, RewriteSet>& rewrites,
                          const TextDistance& d, const Vocab& vocab) {
  if (machine_corpus.empty()) throw ValidationError("ratio_table: empty corpus");
  std::vector<TokenSeq> collection;
  double err_sum = 0.0;
  for (const auto& doc : machine_corpus) {
    if (doc.label != Label::machine)
      throw ValidationError("ratio_table expects machine-labeled docs, got " + doc.id);
    auto it = rewrites.find(doc.id);
    if (it == rewrites.end()) throw ValidationError("ratio_table: no rewrites for doc " + doc.id);
    TokenSeq parent = tokenize(doc.text, vocab);
    std::vector<TokenSeq> rws;
    for (const auto& r : it->second.rewrites) rws.push_back(tokenize(r, vocab));
    err_sum += reconstruction_error(d, parent, rws);
    collection.push_back(std::move(parent));
    for (auto& r : rws) collection.push_back(std::move(r));
  }
  const double mean_err = err_sum / static_cast<double>(machine_corpus.size());
  double max_pairwise = 0.0;
  if (d.kind() == TextDistance::Kind::learned) {
    // |avg1 - avg2| is maximized by the extreme per-sequence averages.
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : collection) {
      const double a = d.eval().avg_log_prob(s);
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
    max_pairwise = hi - lo;
  } else {
    for (std::size_t a = 0; a < collection.size(); ++a)
      for (std::size_t b = a + 1; b < collection.size(); ++b)
        max_pairwise = std::max(max_pairwise, d(collection[a], collection[b]));
  }
  if (max_pairwise == 0.0)
    throw DegenerateInputError("ratio_table: maximum pairwise distance is 0");
  return mean_err / max_pairwise;
}

// ---------------------------------------------------------------------------
// Histogram export: shared equal-width bins across labels; all-equal inputs
// collapse into the first bin.
// ---------------------------------------------------------------------------

struct HistogramRow {
  std::string label;
  double bin_left = 0.0;
  double bin_right = 0.0;
  std::size_t count = 0;
};

inline std::vector<HistogramRow> histogram_export(
    const std::map<std::string, std::vector<double>>& stats_by_label, int bins) {
  if (bins < 2) throw ValidationError("histogram needs at least 2 bins");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t total = 0;
  for (const auto& [label, stats] : stats_by_label)
    for (double v : stats) {
      if (!std::isfinite(v)) throw ValidationError("histogram: non-finite statistic");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      ++total;
    }
  if (total == 0) throw ValidationError("histogram: no statistics supplied");
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramRow> rows;
  for (const auto& [label, stats] : stats_by_label) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double v : stats) {
      std::size_t b = 0;
      if (width > 0.0) {
        b = static_cast<std::size_t>((v - lo) / width);
        if (b >= counts.size()) b = counts.size() - 1;  // right edge inclusive
      }
      ++counts[b];
    }
    for (int b = 0; b < bins; ++b)
      rows.push_back({label, lo + width * b, lo + width * (b + 1),
                      counts[static_cast<std::size_t>(b)]});
  }
  return rows;
}

inline void save_histogram_tsv(const std::string& path, const std::vector<HistogramRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "label\tbin_left\tbin_right\tcount\n";
  for (const auto& r : rows)
    out << r.label << '\t' << fmt_double(r.bin_left) << '\t' << fmt_double(r.bin_right) << '\t'
        << r.count << '\n';
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Suite evaluation.
// ---------------------------------------------------------------------------

// Baseline analogs follow the cited methods' formulas, not this project's own
// contributions; reports tag them so the columns are not over-read.
inline bool is_analog_detector(const std::string& name) {
  return name == "likelihood" || name == "lrr" || name == "curvature" || name == "rewrite_edit";
}

struct ScoringContext {
  const ScorerParams* trained = nullptr;  // rewrite_learned
  const ScorerParams* initial = nullptr;  // rewrite_fd + zero-shot baselines
  const Vocab* vocab = nullptr;
};

// Score one corpus with a detector list; results ordered by (doc, detector).
inline std::vector<DetectionResult> score_corpus(const std::vector<std::string>& detectors,
                                                 const Corpus& corpus,
                                                 const std::map<std::string, RewriteSet>& rewrites,
                                                 const ScoringContext& ctx, int jobs = 1) {
  if (ctx.trained == nullptr || ctx.initial == nullptr || ctx.vocab == nullptr)
    throw ValidationError("scoring context is incomplete");
  std::vector<const DetectorSpec*> specs;
  bool any_needy = false;
  for (const auto& name : detectors) {
    specs.push_back(&detector_spec(name));
    any_needy = any_needy || specs.back()->needs_rewrites;
  }
  if (any_needy)
    for (const auto& doc : corpus)
      if (!rewrites.count(doc.id)) {
        for (const auto* s : specs)
          if (s->needs_rewrites)
            throw ConfigError("detector '" + s->name + "' requires rewrites, none cached for doc " +
                              doc.id);
      }

  const TextDistance d_learned = TextDistance::learned(*ctx.trained);
  const TextDistance d_fd = TextDistance::learned(*ctx.initial);
  const TextDistance d_edit = TextDistance::fixed_edit();

  std::vector<DetectionResult> results(corpus.size() * specs.size());
  std::vector<std::exception_ptr> errors(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    try {
      const Document& doc = corpus[i];
      TokenSeq parent = tokenize(doc.text, *ctx.vocab);
      std::vector<TokenSeq> rws;
      if (any_needy) {
        auto it = rewrites.find(doc.id);
        if (it != rewrites.end())
          for (const auto& r : it->second.rewrites) rws.push_back(tokenize(r, *ctx.vocab));
      }
      for (std::size_t s = 0; s < specs.size(); ++s) {
        const DetectorSpec& spec = *specs[s];
        double stat = 0.0;
        if (spec.name == "rewrite_learned")
          stat = score_rewrite_detector(d_learned, parent, rws);
        else if (spec.name == "rewrite_fd")
          stat = score_rewrite_detector(d_fd, parent, rws);
        else if (spec.name == "rewrite_edit")
          stat = score_rewrite_detector(d_edit, parent, rws);
        else if (spec.name == "likelihood")
          stat = score_likelihood(*ctx.initial, parent);
        else if (spec.name == "lrr")
          stat = score_lrr(*ctx.initial, parent);
        else if (spec.name == "curvature")
          stat = score_curvature(*ctx.initial, parent);
        else
          throw ConfigError("unknown detector: '" + spec.name + "'");
        results[i * specs.size() + s] = {doc.id, spec.name, stat, doc.label,
                                         spec.needs_rewrites ? static_cast<int>(rws.size()) : 0};
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

struct DetectorReport {
  std::string name;
  Orientation orientation = Orientation::human_high;
  bool needs_rewrites = false;
  bool analog = false;
  double auc_clean = 0.0;
  std::map<std::string, double> auc_attacked;  // attack tag -> AUC
};

struct Report {
  std::vector<DetectorReport> detectors;
  std::string proposal;
  std::string best_baseline;
  double proposal_auc = 0.0;
  double best_baseline_auc = 0.0;
  Gains gains_vs_best;
  std::map<std::string, Gains> pair_gains;  // proposal vs each other detector
  bool ratio_defined = false;
  double ratio_learned = 0.0;  // machine reconstruction error / max pairwise, learned distance
  std::size_t n_test_human = 0;
  std::size_t n_test_machine = 0;
  int k_rewrites = 0;
  // Run provenance, filled by the pipeline.
  std::uint64_t seed = 0;
  std::string config_fingerprint;
  std::string train_corpus_hash;
  std::string test_corpus_hash;
  std::string initial_checkpoint_hash;
  std::string trained_checkpoint_hash;
};

struct AttackedCorpus {
  std::string tag;  // e.g. "decoherence"
  Corpus corpus;
  std::map<std::string, RewriteSet> rewrites;
};

struct SuiteInputs {
  std::vector<std::string> detectors;
  Corpus test;
  std::map<std::string, RewriteSet> rewrites;
  std::vector<AttackedCorpus> attacked;
  ScoringContext ctx;
  int histogram_bins = 20;
  int jobs = 1;
};

struct SuiteOutput {
  Report report;
  std::vector<DetectionResult> clean_results;
  std::vector<HistogramRow> histogram;  // proposal statistics by label
};

namespace detail {
inline std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> stats_by_detector(
    const std::vector<DetectionResult>& results) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> out;
  for (const auto& r : results) {
    auto& slot = out[r.detector];
    (r.label_true == Label::human ? slot.first : slot.second).push_back(r.statistic);
  }
  return out;
}
}  // namespace detail

inline SuiteOutput evaluate_suite(const SuiteInputs& in) {
  if (in.detectors.empty()) throw ValidationError("evaluate_suite needs at least one detector");
  SuiteOutput out;
  out.clean_results = score_corpus(in.detectors, in.test, in.rewrites, in.ctx, in.jobs);
  auto clean_stats = detail::stats_by_detector(out.clean_results);

  for (const auto& name : in.detectors) {
    const DetectorSpec& spec = detector_spec(name);
    DetectorReport dr;
    dr.name = name;
    dr.orientation = spec.orientation;
    dr.needs_rewrites = spec.needs_rewrites;
    dr.analog = is_analog_detector(name);
    const auto& [h, m] = clean_stats.at(name);
    dr.auc_clean = auc(h, m, spec.orientation);
    out.report.detectors.push_back(std::move(dr));
  }
  for (const auto& attacked : in.attacked) {
    auto results = score_corpus(in.detectors, attacked.corpus, attacked.rewrites, in.ctx, in.jobs);
    auto stats = detail::stats_by_detector(results);
    for (auto& dr : out.report.detectors) {
      const auto& [h, m] = stats.at(dr.name);
      dr.auc_attacked[attacked.tag] = auc(h, m, detector_spec(dr.name).orientation);
    }
  }

  // Gains of the proposal over every other detector; the strongest other
  // detector is singled out as "best baseline".
  const std::string proposal = "rewrite_learned";
  out.report.proposal =
      std::count(in.detectors.begin(), in.detectors.end(), proposal) ? proposal : in.detectors[0];
  double proposal_auc = 0.0;
  for (const auto& dr : out.report.detectors)
    if (dr.name == out.report.proposal) proposal_auc = dr.auc_clean;
  out.report.proposal_auc = proposal_auc;
  std::string best;
  double best_auc = -1.0;
  for (const auto& dr : out.report.detectors) {
    if (dr.name == out.report.proposal) continue;
    out.report.pair_gains[dr.name] = gains(dr.auc_clean, proposal_auc);
    if (dr.auc_clean > best_auc) {
      best_auc = dr.auc_clean;
      best = dr.name;
    }
  }
  if (best.empty()) {  // the proposal is the only detector: gains vs itself
    best = out.report.proposal;
    best_auc = proposal_auc;
  }
  out.report.best_baseline = best;
  out.report.best_baseline_auc = best_auc;
  out.report.gains_vs_best = gains(best_auc, proposal_auc);

  for (const auto& doc : in.test)
    (doc.label == Label::human ? out.report.n_test_human : out.report.n_test_machine) += 1;
  for (const auto& [id, set] : in.rewrites) {
    out.report.k_rewrites = static_cast<int>(set.rewrites.size());
    break;
  }

  // Ratio diagnostic under the trained distance, over the clean machine docs.
  Corpus machine_docs;
  for (const auto& doc : in.test)
    if (doc.label == Label::machine) machine_docs.push_back(doc);
  bool have_all = !machine_docs.empty();
  for (const auto& doc : machine_docs)
    if (!in.rewrites.count(doc.id)) have_all = false;
  if (have_all) {
    out.report.ratio_learned = ratio_table(machine_docs, in.rewrites,
                                           TextDistance::learned(*in.ctx.trained), *in.ctx.vocab);
    out.report.ratio_defined = true;
  }

  // Histogram of the proposal's statistics (the separation picture).
  std::map<std::string, std::vector<double>> by_label;
  for (const auto& r : out.clean_results)
    if (r.detector == out.report.proposal) by_label[to_string(r.label_true)].push_back(r.statistic);
  if (!by_label.empty()) out.histogram = histogram_export(by_label, in.histogram_bins);
  return out;
}

// ---------------------------------------------------------------------------
// Report serialization: one JSON document plus flat TSV tables.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json gains_to_json(const Gains& g) {
  nlohmann::ordered_json j;
  j["absolute_pct"] = g.absolute_pct;
  if (g.relative_defined)
    j["relative_pct"] = g.relative_pct;
  else
    j["relative_pct"] = nullptr;
  return j;
}

inline nlohmann::ordered_json report_to_json(const Report& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["config_fingerprint"] = r.config_fingerprint;
  j["n_test_human"] = r.n_test_human;
  j["n_test_machine"] = r.n_test_machine;
  j["k_rewrites"] = r.k_rewrites;
  j["train_corpus_hash"] = r.train_corpus_hash;
  j["test_corpus_hash"] = r.test_corpus_hash;
  j["initial_checkpoint_hash"] = r.initial_checkpoint_hash;
  j["trained_checkpoint_hash"] = r.trained_checkpoint_hash;
  nlohmann::ordered_json dets = nlohmann::ordered_json::array();
  for (const auto& d : r.detectors) {
    nlohmann::ordered_json jd;
    jd["name"] = d.name;
    jd["orientation"] = to_string(d.orientation);
    jd["needs_rewrites"] = d.needs_rewrites;
    jd["analog"] = d.analog;
    jd["auc_clean"] = d.auc_clean;
    if (!d.auc_attacked.empty()) {
      nlohmann::ordered_json ja;
      for (const auto& [tag, a] : d.auc_attacked) ja[tag] = a;
      jd["auc_attacked"] = std::move(ja);
    }
    dets.push_back(std::move(jd));
  }
  j["detectors"] = std::move(dets);
  j["proposal"] = r.proposal;
  j["proposal_auc"] = r.proposal_auc;
  j["best_baseline"] = r.best_baseline;
  j["best_baseline_auc"] = r.best_baseline_auc;
  j["gains_vs_best"] = gains_to_json(r.gains_vs_best);
  nlohmann::ordered_json jp;
  for (const auto& [name, g] : r.pair_gains) jp[name] = gains_to_json(g);
  j["pair_gains"] = std::move(jp);
  if (r.ratio_defined)
    j["ratio_learned"] = r.ratio_learned;
  else
    j["ratio_learned"] = nullptr;
  return j;
}

inline void save_report_json(const std::string& path, const Report& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << report_to_json(r).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline void save_auc_tsv(const std::string& path, const Report& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  std::vector<std::string> tags;
  if (!r.detectors.empty())
    for (const auto& [tag, a] : r.detectors.front().auc_attacked) tags.push_back(tag);
  out << "detector\tauc_clean";
  for (const auto& t : tags) out << "\tauc_" << t;
  out << '\n';
  for (const auto& d : r.detectors) {
    out << d.name << '\t' << fmt_double(d.auc_clean);
    for (const auto& t : tags) out << '\t' << fmt_double(d.auc_attacked.at(t));
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline void save_gains_tsv(const std::string& path, const Report& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "pair\tabsolute_pct\trelative_pct\n";
  for (const auto& [name, g] : r.pair_gains)
    out << r.proposal << "_vs_" << name << '\t' << fmt_double(g.absolute_pct) << '\t'
        << (g.relative_defined ? fmt_double(g.relative_pct) : "undefined") << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace redetect
