#pragma once
// Gap-objective training: maximize
//   mean reconstruction error over human docs - mean over machine docs
// with respect to the scorer's low-rank adapter, by minibatch gradient ascent
// (Adam or SGD). Rewrites are frozen inputs; nothing is resampled mid-run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "redetect/distance.hpp"
#include "redetect/rewrite.hpp"
#include "redetect/scorer.hpp"

namespace redetect {

// One training instance: a tokenized parent with its K tokenized rewrites.
struct RewritePair {
  TokenSeq parent;
  std::vector<TokenSeq> rewrites;
};
using PairList = std::vector<RewritePair>;

struct TrainData {
  PairList human;
  PairList machine;
  PairList val_human;   // optional validation split
  PairList val_machine;
  bool has_validation() const { return !val_human.empty() && !val_machine.empty(); }
};

// Join corpus docs of one label with their cached rewrites and tokenize.
inline PairList make_pairs(const Corpus& corpus, const std::map<std::string, RewriteSet>& cache,
                           const Vocab& vocab, Label label) {
  PairList out;
  for (const auto& doc : corpus) {
    if (doc.label != label) continue;
    auto it = cache.find(doc.id);
    if (it == cache.end()) throw ValidationError("no rewrites cached for doc " + doc.id);
    if (it->second.rewrites.empty())
      throw ValidationError("empty rewrite set for doc " + doc.id);
    RewritePair pair;
    pair.parent = tokenize(doc.text, vocab);
    for (const auto& r : it->second.rewrites) pair.rewrites.push_back(tokenize(r, vocab));
    out.push_back(std::move(pair));
  }
  return out;
}

// Mean learned distance between a parent and its rewrites.
inline double pair_error(const ScorerEval& eval, const RewritePair& pair) {
  if (pair.rewrites.empty()) throw ValidationError("pair has no rewrites");
  double parent_avg = eval.avg_log_prob(pair.parent);
  double sum = 0.0;
  for (const auto& r : pair.rewrites) sum += std::abs(parent_avg - eval.avg_log_prob(r));
  return sum / static_cast<double>(pair.rewrites.size());
}

namespace detail {
struct GapValueGrad {
  double objective = 0.0;
  double mean_human_err = 0.0;
  double mean_machine_err = 0.0;
  Eigen::MatrixXd logit_grad;  // empty unless want_grad
};

// Shared evaluation for objective and (sub)gradient. Each |u| term uses
// d|u|/du = sign(u) with sign(0) = 0.
inline GapValueGrad gap_eval(const ScorerEval& eval,
                             const std::vector<const RewritePair*>& human,
                             const std::vector<const RewritePair*>& machine, bool want_grad) {
  if (human.empty() || machine.empty())
    throw ValidationError("gap objective needs both human and machine pairs");
  GapValueGrad out;
  if (want_grad) out.logit_grad = Eigen::MatrixXd::Zero(eval.vocab_size(), eval.vocab_size());
  auto accumulate_side = [&](const std::vector<const RewritePair*>& side, double side_weight,
                             double& mean_err) {
    for (const RewritePair* pair : side) {
      if (pair->rewrites.empty()) throw ValidationError("pair has no rewrites");
      const double k_inv = 1.0 / static_cast<double>(pair->rewrites.size());
      const double parent_avg = eval.avg_log_prob(pair->parent);
      double err = 0.0;
      double parent_coef = 0.0;
      for (const auto& r : pair->rewrites) {
        const double u = parent_avg - eval.avg_log_prob(r);
        err += std::abs(u) * k_inv;
        if (want_grad && u != 0.0) {
          const double s = u > 0.0 ? 1.0 : -1.0;
          parent_coef += side_weight * s * k_inv;
          accumulate_logit_grad(eval, r, -side_weight * s * k_inv, out.logit_grad);
        }
      }
      if (want_grad && parent_coef != 0.0)
        accumulate_logit_grad(eval, pair->parent, parent_coef, out.logit_grad);
      mean_err += err / static_cast<double>(side.size());
    }
  };
  accumulate_side(human, 1.0 / static_cast<double>(human.size()), out.mean_human_err);
  accumulate_side(machine, -1.0 / static_cast<double>(machine.size()), out.mean_machine_err);
  out.objective = out.mean_human_err - out.mean_machine_err;
  return out;
}

inline std::vector<const RewritePair*> all_ptrs(const PairList& list) {
  std::vector<const RewritePair*> out;
  out.reserve(list.size());
  for (const auto& p : list) out.push_back(&p);
  return out;
}
}  // namespace detail

inline double gap_objective(const ScorerParams& params, const PairList& human,
                            const PairList& machine) {
  ScorerEval eval(params);
  return detail::gap_eval(eval, detail::all_ptrs(human), detail::all_ptrs(machine), false)
      .objective;
}

inline AdapterGrad grad_gap_objective(const ScorerParams& params, const PairList& human,
                                      const PairList& machine) {
  ScorerEval eval(params);
  auto r = detail::gap_eval(eval, detail::all_ptrs(human), detail::all_ptrs(machine), true);
  return adapter_grad_from_logit_grad(params, r.logit_grad);
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-2;  // >= 0 (0 is a legal no-op)
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 1;
  enum class Optimizer { adam, sgd };
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;    // epochs between periodic checkpoints; 0 = off
  std::string checkpoint_dir;  // required when checkpoint_every > 0

  void validate() const {
    if (learning_rate < 0.0) throw ValidationError("learning_rate must be >= 0");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
    if (checkpoint_every > 0 && checkpoint_dir.empty())
      throw ConfigError("checkpoint_every > 0 requires checkpoint_dir");
  }
};

struct TrainHistory {
  std::vector<double> objective;          // per completed epoch, on training data
  std::vector<double> mean_human_err;
  std::vector<double> mean_machine_err;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ScorerParams params;
  TrainHistory history;
};

inline void save_history_tsv(const std::string& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "epoch\tobjective\tmean_human_err\tmean_machine_err\n";
  for (std::size_t e = 0; e < h.objective.size(); ++e)
    out << (e + 1) << '\t' << fmt_double(h.objective[e]) << '\t'
        << fmt_double(h.mean_human_err[e]) << '\t' << fmt_double(h.mean_machine_err[e]) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline TrainResult train_distance(const ScorerParams& init, const TrainData& data,
                                  const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  if (data.human.empty() || data.machine.empty())
    throw ValidationError("training needs both human and machine pairs");
  if (init.adapter_is_zero())
    throw ConfigError(
        "adapter is exactly zero (a stationary point of the bilinear parameterization); "
        "seed it with reset_adapter() before training");

  const auto t0 = std::chrono::steady_clock::now();
  ScorerParams params = init;
  ScorerParams best = params;
  double best_val = -std::numeric_limits<double>::infinity();

  Eigen::MatrixXd m_a = Eigen::MatrixXd::Zero(params.adapter_a.rows(), params.adapter_a.cols());
  Eigen::MatrixXd v_a = m_a, m_b = Eigen::MatrixXd::Zero(params.adapter_b.rows(),
                                                         params.adapter_b.cols());
  Eigen::MatrixXd v_b = m_b;
  long adam_t = 0;

  const std::size_t nh = data.human.size(), nm = data.machine.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps =
      std::max((nh + bs - 1) / bs, (nm + bs - 1) / bs);

  TrainHistory history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> perm_h(nh), perm_m(nm);
    for (std::size_t i = 0; i < nh; ++i) perm_h[i] = i;
    for (std::size_t i = 0; i < nm; ++i) perm_m[i] = i;
    auto rng_h = make_rng(mix_seed(cfg.seed, fnv1a64("epoch-human"), static_cast<std::uint64_t>(epoch)));
    auto rng_m = make_rng(mix_seed(cfg.seed, fnv1a64("epoch-machine"), static_cast<std::uint64_t>(epoch)));
    std::shuffle(perm_h.begin(), perm_h.end(), rng_h);
    std::shuffle(perm_m.begin(), perm_m.end(), rng_m);

    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<const RewritePair*> bh, bm;
      bh.reserve(bs);
      bm.reserve(bs);
      for (std::size_t j = 0; j < bs; ++j) {
        bh.push_back(&data.human[perm_h[(step * bs + j) % nh]]);
        bm.push_back(&data.machine[perm_m[(step * bs + j) % nm]]);
      }
      ScorerEval eval(params);
      auto r = detail::gap_eval(eval, bh, bm, true);
      AdapterGrad grad = adapter_grad_from_logit_grad(params, r.logit_grad);
      if (!std::isfinite(r.objective) || !grad.a.allFinite() || !grad.b.allFinite())
        throw TrainingAborted("non-finite objective or gradient at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(step + 1));
      if (cfg.optimizer == TrainConfig::Optimizer::adam) {
        ++adam_t;
        const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
        m_a = b1 * m_a + (1.0 - b1) * grad.a;
        v_a = (b2 * v_a.array() + (1.0 - b2) * grad.a.array().square()).matrix();
        m_b = b1 * m_b + (1.0 - b1) * grad.b;
        v_b = (b2 * v_b.array() + (1.0 - b2) * grad.b.array().square()).matrix();
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t));
        params.adapter_a.array() +=
            cfg.learning_rate * (m_a.array() / c1) / ((v_a.array() / c2).sqrt() + cfg.adam_eps);
        params.adapter_b.array() +=
            cfg.learning_rate * (m_b.array() / c1) / ((v_b.array() / c2).sqrt() + cfg.adam_eps);
      } else {
        params.adapter_a += cfg.learning_rate * grad.a;
        params.adapter_b += cfg.learning_rate * grad.b;
      }
      if (!params.adapter_a.allFinite() || !params.adapter_b.allFinite())
        throw TrainingAborted("adapter diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step + 1));
    }

    ScorerEval eval(params);
    auto full = detail::gap_eval(eval, detail::all_ptrs(data.human),
                                 detail::all_ptrs(data.machine), false);
    if (!std::isfinite(full.objective))
      throw TrainingAborted("non-finite objective after epoch " + std::to_string(epoch));
    history.objective.push_back(full.objective);
    history.mean_human_err.push_back(full.mean_human_err);
    history.mean_machine_err.push_back(full.mean_machine_err);

    if (data.has_validation()) {
      auto val = detail::gap_eval(eval, detail::all_ptrs(data.val_human),
                                  detail::all_ptrs(data.val_machine), false);
      if (val.objective > best_val) {
        best_val = val.objective;
        best = params;
      }
    }
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof(name), "/checkpoint_epoch_%04d.json", epoch);
      save_checkpoint(cfg.checkpoint_dir + name, params);
    }
  }

  TrainResult result;
  result.params = data.has_validation() ? best : params;
  result.history = std::move(history);
  result.history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace redetect
