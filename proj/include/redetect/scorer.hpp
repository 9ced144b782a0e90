#pragma once
// Bigram neural scorer: a frozen base logit table W0 (V x V) plus a trainable
// low-rank adapter, giving effective logits W = W0 + (alpha/rank) * A * B.
// Row c of softmax(W) is the next-token distribution after context token c.

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "redetect/common.hpp"
#include "redetect/corpus.hpp"

namespace redetect {

struct ScorerParams {
  int vocab_size = 0;
  int rank = 0;
  double alpha = 32.0;
  Eigen::MatrixXd base_logits;  // V x V, frozen
  Eigen::MatrixXd adapter_a;    // V x rank, trainable
  Eigen::MatrixXd adapter_b;    // rank x V, trainable
  std::uint64_t vocab_hash = 0;
  std::string tag;  // free-form provenance of the base table

  double adapter_scale() const { return alpha / static_cast<double>(rank); }

  Eigen::MatrixXd effective_logits() const {
    return base_logits + adapter_scale() * (adapter_a * adapter_b);
  }

  void validate() const {
    if (vocab_size < 4) throw ValidationError("scorer vocab_size must be >= 4");
    if (rank < 1 || rank > vocab_size) throw ValidationError("scorer rank must be in [1, vocab_size]");
    if (!(alpha > 0.0)) throw ValidationError("scorer alpha must be > 0");
    if (base_logits.rows() != vocab_size || base_logits.cols() != vocab_size)
      throw ValidationError("base_logits must be vocab_size x vocab_size");
    if (adapter_a.rows() != vocab_size || adapter_a.cols() != rank)
      throw ValidationError("adapter_a must be vocab_size x rank");
    if (adapter_b.rows() != rank || adapter_b.cols() != vocab_size)
      throw ValidationError("adapter_b must be rank x vocab_size");
    if (!base_logits.allFinite() || !adapter_a.allFinite() || !adapter_b.allFinite())
      throw ValidationError("scorer parameters must be finite");
  }

  void zero_adapter() {
    adapter_a.setZero();
    adapter_b.setZero();
  }

  bool adapter_is_zero() const {
    return adapter_a.isZero(0.0) && adapter_b.isZero(0.0);
  }

  // Seeded re-init that keeps W = W0 exactly (B = 0) but breaks the bilinear
  // saddle at A = B = 0 so gradient ascent can move.
  void reset_adapter(std::uint64_t seed) {
    auto rng = make_rng(mix_seed(seed, fnv1a64("adapter-init")));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(rank));
    for (int i = 0; i < adapter_a.rows(); ++i)
      for (int j = 0; j < adapter_a.cols(); ++j) adapter_a(i, j) = gauss(rng) * scale;
    adapter_b.setZero();
  }

  // Base table = log of the uniform distribution; adapter zeroed.
  static ScorerParams uniform(int vocab_size, int rank, double alpha, std::uint64_t vocab_hash) {
    ScorerParams p;
    p.vocab_size = vocab_size;
    p.rank = rank;
    p.alpha = alpha;
    p.vocab_hash = vocab_hash;
    p.tag = "uniform";
    p.base_logits = Eigen::MatrixXd::Constant(vocab_size, vocab_size,
                                              -std::log(static_cast<double>(vocab_size)));
    p.adapter_a = Eigen::MatrixXd::Zero(vocab_size, rank);
    p.adapter_b = Eigen::MatrixXd::Zero(rank, vocab_size);
    p.validate();
    return p;
  }

  // Base table = log of the chain smoothed with the uniform distribution:
  //   P(j | i) = (1 - smoothing) * chain(j | i) + smoothing / V.
  // Chain rows cover content tokens; reserved context ids reuse the start row,
  // so every row is a proper distribution and every target has mass.
  static ScorerParams from_chain(const MarkovChain& chain, const Vocab& vocab, int rank,
                                 double alpha, double smoothing) {
    chain.validate();
    vocab.validate();
    if (chain.content_size != vocab.content_size())
      throw ValidationError("chain size does not match vocab content size");
    if (smoothing < 0.0 || smoothing > 1.0) throw ValidationError("smoothing must be in [0,1]");
    if (smoothing == 0.0)
      for (const auto& row : chain.rows)
        for (double p : row)
          if (p == 0.0)
            throw ValidationError("smoothing = 0 requires a strictly positive chain");
    const int V = vocab.size();
    ScorerParams p;
    p.vocab_size = V;
    p.rank = rank;
    p.alpha = alpha;
    p.vocab_hash = vocab.hash();
    p.tag = "chain";
    p.base_logits.resize(V, V);
    for (int ctx = 0; ctx < V; ++ctx) {
      int prev = ctx >= Vocab::kReserved ? ctx - Vocab::kReserved : -1;
      const auto& row = chain.row(prev);
      for (int tgt = 0; tgt < V; ++tgt) {
        double chain_p =
            tgt >= Vocab::kReserved ? row[static_cast<std::size_t>(tgt - Vocab::kReserved)] : 0.0;
        p.base_logits(ctx, tgt) =
            std::log((1.0 - smoothing) * chain_p + smoothing / static_cast<double>(V));
      }
    }
    p.adapter_a = Eigen::MatrixXd::Zero(V, rank);
    p.adapter_b = Eigen::MatrixXd::Zero(rank, V);
    p.validate();
    return p;
  }
};

// ---------------------------------------------------------------------------
// ScorerEval: materialized log-softmax (and softmax) rows of the effective
// logits. Build once, score many sequences.
// ---------------------------------------------------------------------------

class ScorerEval {
 public:
  explicit ScorerEval(const ScorerParams& params, bool base_only = false)
      : vocab_size_(params.vocab_size), vocab_hash_(params.vocab_hash) {
    params.validate();
    Eigen::MatrixXd w = base_only ? params.base_logits : params.effective_logits();
    log_table_.resize(vocab_size_, vocab_size_);
    prob_table_.resize(vocab_size_, vocab_size_);
    for (int i = 0; i < vocab_size_; ++i) {
      double m = w.row(i).maxCoeff();
      double lse = std::log((w.row(i).array() - m).exp().sum()) + m;
      log_table_.row(i) = w.row(i).array() - lse;
      prob_table_.row(i) = log_table_.row(i).array().exp();
    }
  }

  int vocab_size() const { return vocab_size_; }
  std::uint64_t vocab_hash() const { return vocab_hash_; }
  const Eigen::MatrixXd& log_table() const { return log_table_; }
  const Eigen::MatrixXd& prob_table() const { return prob_table_; }

  void check_seq(const TokenSeq& seq) const {
    if (seq.vocab_hash != vocab_hash_) throw ValidationError("sequence/scorer vocab mismatch");
    if (seq.ids.empty() || seq.ids[0] != Vocab::kBos)
      throw ValidationError("token sequence must start with BOS");
    if (seq.length() < 1) throw EmptyInputError("cannot score an empty sequence");
    for (int id : seq.ids)
      if (id < 0 || id >= vocab_size_) throw ValidationError("token id out of scorer range");
  }

  // Sum over transitions of log P(token | previous token); always <= 0.
  double log_prob(const TokenSeq& seq) const {
    check_seq(seq);
    double sum = 0.0;
    for (std::size_t t = 1; t < seq.ids.size(); ++t)
      sum += log_table_(seq.ids[t - 1], seq.ids[t]);
    return sum;
  }

  // Length-normalized log probability (length excludes BOS).
  double avg_log_prob(const TokenSeq& seq) const {
    return log_prob(seq) / static_cast<double>(seq.length());
  }

 private:
  int vocab_size_;
  std::uint64_t vocab_hash_;
  Eigen::MatrixXd log_table_;   // row i = log softmax of effective logits row i
  Eigen::MatrixXd prob_table_;  // exp(log_table_)
};

inline double log_prob(const ScorerParams& params, const TokenSeq& seq) {
  return ScorerEval(params).log_prob(seq);
}
inline double avg_log_prob(const ScorerParams& params, const TokenSeq& seq) {
  return ScorerEval(params).avg_log_prob(seq);
}

// ---------------------------------------------------------------------------
// Gradients of avg_log_prob. The logit-space gradient G = d avg_log_prob / dW
// is nonzero only in rows whose context token occurs in the sequence; adapter
// gradients follow by the chain rule through W = W0 + (alpha/rank) A B.
// ---------------------------------------------------------------------------

struct AdapterGrad {
  Eigen::MatrixXd a;  // same shape as adapter_a
  Eigen::MatrixXd b;  // same shape as adapter_b
};

// G += coef * d avg_log_prob(seq) / dW, using the supplied evaluator's softmax.
inline void accumulate_logit_grad(const ScorerEval& eval, const TokenSeq& seq, double coef,
                                  Eigen::MatrixXd& grad) {
  eval.check_seq(seq);
  const double w = coef / static_cast<double>(seq.length());
  for (std::size_t t = 1; t < seq.ids.size(); ++t) {
    const int c = seq.ids[t - 1];
    grad.row(c) -= w * eval.prob_table().row(c);
    grad(c, seq.ids[t]) += w;
  }
}

inline Eigen::MatrixXd logit_grad_avg_log_prob(const ScorerParams& params, const TokenSeq& seq) {
  ScorerEval eval(params);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(params.vocab_size, params.vocab_size);
  accumulate_logit_grad(eval, seq, 1.0, grad);
  return grad;
}

inline AdapterGrad adapter_grad_from_logit_grad(const ScorerParams& params,
                                                const Eigen::MatrixXd& logit_grad) {
  const double s = params.adapter_scale();
  return {s * logit_grad * params.adapter_b.transpose(),
          s * params.adapter_a.transpose() * logit_grad};
}

inline AdapterGrad grad_avg_log_prob(const ScorerParams& params, const TokenSeq& seq) {
  return adapter_grad_from_logit_grad(params, logit_grad_avg_log_prob(params, seq));
}

// ---------------------------------------------------------------------------
// Per-token diagnostics for the zero-shot baselines: observed log-prob, the
// model's mean/variance of log-prob at that position, and the observed
// token's rank (1 = most likely; exact probability ties break by token id).
// ---------------------------------------------------------------------------

struct TokenStats {
  double logp_observed = 0.0;
  double mean_logp = 0.0;
  double var_logp = 0.0;
  int rank = 0;
};

inline std::vector<TokenStats> token_logp_stats(const ScorerParams& params, const TokenSeq& seq) {
  ScorerEval eval(params);
  eval.check_seq(seq);
  std::vector<TokenStats> out;
  out.reserve(static_cast<std::size_t>(seq.length()));
  for (std::size_t t = 1; t < seq.ids.size(); ++t) {
    const int c = seq.ids[t - 1];
    const int x = seq.ids[t];
    const auto lp = eval.log_table().row(c);
    const auto pr = eval.prob_table().row(c);
    TokenStats st;
    st.logp_observed = lp(x);
    st.mean_logp = (pr.array() * lp.array()).sum();
    double ex2 = (pr.array() * lp.array() * lp.array()).sum();
    st.var_logp = std::max(0.0, ex2 - st.mean_logp * st.mean_logp);
    int rank = 1;
    for (int j = 0; j < eval.vocab_size(); ++j) {
      if (lp(j) > st.logp_observed) ++rank;
      else if (lp(j) == st.logp_observed && j < x) ++rank;
    }
    st.rank = rank;
    out.push_back(st);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence (versioned JSON; doubles round-trip exactly).
// ---------------------------------------------------------------------------

namespace detail {
inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols,
                                        const char* name) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    throw ParseError(std::string("checkpoint field has wrong shape: ") + name);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw ParseError(std::string("checkpoint field has wrong shape: ") + name);
    for (int c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}
}  // namespace detail

inline constexpr const char* kCheckpointFormat = "redetect.scorer";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ScorerParams& params) {
  params.validate();
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["vocab_size"] = params.vocab_size;
  j["rank"] = params.rank;
  j["alpha"] = params.alpha;
  j["vocab_hash"] = to_hex(params.vocab_hash);
  j["tag"] = params.tag;
  j["base_logits"] = detail::matrix_to_json(params.base_logits);
  j["adapter_a"] = detail::matrix_to_json(params.adapter_a);
  j["adapter_b"] = detail::matrix_to_json(params.adapter_b);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline ScorerParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw ParseError(path + ": not a scorer checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ParseError(path + ": unsupported checkpoint version");
    ScorerParams p;
    p.vocab_size = j.at("vocab_size").get<int>();
    p.rank = j.at("rank").get<int>();
    p.alpha = j.at("alpha").get<double>();
    p.vocab_hash = std::stoull(j.at("vocab_hash").get<std::string>(), nullptr, 16);
    p.tag = j.at("tag").get<std::string>();
    p.base_logits = detail::matrix_from_json(j.at("base_logits"), p.vocab_size, p.vocab_size,
                                             "base_logits");
    p.adapter_a = detail::matrix_from_json(j.at("adapter_a"), p.vocab_size, p.rank, "adapter_a");
    p.adapter_b = detail::matrix_from_json(j.at("adapter_b"), p.rank, p.vocab_size, "adapter_b");
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline ScorerParams load_checkpoint(const std::string& path, std::uint64_t expected_vocab_hash) {
  ScorerParams p = load_checkpoint(path);
  if (p.vocab_hash != expected_vocab_hash)
    throw ValidationError(path + ": checkpoint was built for a different vocabulary");
  return p;
}

}  // namespace redetect
