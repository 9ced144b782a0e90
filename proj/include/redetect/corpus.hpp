#pragma once
// Documents, vocabularies, token sequences, and the synthetic two-chain world
// used to manufacture labelled human/machine corpora deterministically.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "redetect/common.hpp"

namespace redetect {

enum class Label { human, machine };
enum class PromptType { none, rewrite, polish, expand };

inline std::string to_string(Label l) { return l == Label::human ? "human" : "machine"; }
inline Label label_from_string(const std::string& s) {
  if (s == "human") return Label::human;
  if (s == "machine") return Label::machine;
  throw ParseError("unknown label: '" + s + "'");
}

inline std::string to_string(PromptType p) {
  switch (p) {
    case PromptType::none: return "none";
    case PromptType::rewrite: return "rewrite";
    case PromptType::polish: return "polish";
    case PromptType::expand: return "expand";
  }
  throw ValidationError("invalid prompt_type enum value");
}
inline PromptType prompt_type_from_string(const std::string& s) {
  if (s == "none") return PromptType::none;
  if (s == "rewrite") return PromptType::rewrite;
  if (s == "polish") return PromptType::polish;
  if (s == "expand") return PromptType::expand;
  throw ParseError("unknown prompt_type: '" + s + "'");
}

struct Document {
  std::string id;
  std::string text;
  Label label = Label::human;
  std::string source;                         // domain/dataset tag
  PromptType prompt_type = PromptType::none;  // how the text was elicited
};

using Corpus = std::vector<Document>;

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocab: ids 0..2 are reserved (BOS/EOS/UNK), content tokens start at id 3.
// ---------------------------------------------------------------------------

class Vocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kReserved = 3;

  Vocab() = default;

  static Vocab make(const std::vector<std::string>& content_tokens) {
    Vocab v;
    v.tokens_ = {"<bos>", "<eos>", "<unk>"};
    v.tokens_.insert(v.tokens_.end(), content_tokens.begin(), content_tokens.end());
    v.build_index();
    v.validate();
    return v;
  }

  // Deterministic synthetic vocabulary of the requested total size; the last
  // content token is "." so generated text has sentence boundaries.
  static Vocab synthetic(int vocab_size) {
    if (vocab_size < 4) throw ValidationError("vocab_size must be >= 4");
    static const std::string consonants = "bcdfghjklmnprstvwz";
    static const std::string vowels = "aeiou";
    auto syllable = [&](int i) {
      std::string s;
      s += consonants[static_cast<std::size_t>(i) / vowels.size()];
      s += vowels[static_cast<std::size_t>(i) % vowels.size()];
      return s;
    };
    const int n_syll = static_cast<int>(consonants.size() * vowels.size());
    std::vector<std::string> content;
    int n_words = vocab_size - kReserved - 1;  // all but the trailing "."
    for (int i = 0; i < n_words; ++i) {
      if (i < n_syll)
        content.push_back(syllable(i));
      else
        content.push_back(syllable((i - n_syll) / n_syll) + syllable((i - n_syll) % n_syll));
    }
    content.push_back(".");
    return make(content);
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int content_size() const { return size() - kReserved; }
  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw ValidationError("token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Case-insensitive lookup; unknown words map to UNK.
  int lookup(std::string_view word) const {
    auto it = index_.find(lowercase_ascii(word));
    return it == index_.end() ? kUnk : it->second;
  }

  std::uint64_t hash() const {
    std::string joined;
    for (const auto& t : tokens_) {
      joined += t;
      joined += '\n';
    }
    return fnv1a64(joined);
  }

  void validate() const {
    if (size() < 4) throw ValidationError("vocab must have at least 4 tokens (3 reserved + content)");
    if (tokens_[0] != "<bos>" || tokens_[1] != "<eos>" || tokens_[2] != "<unk>")
      throw ValidationError("vocab reserved tokens must be <bos>, <eos>, <unk>");
    std::set<std::string> seen;
    for (const auto& t : tokens_) {
      if (t.empty()) throw ValidationError("vocab token must be non-empty");
      if (!seen.insert(t).second) throw ValidationError("duplicate vocab token: '" + t + "'");
      for (char c : t)
        if (std::isspace(static_cast<unsigned char>(c)))
          throw ValidationError("vocab token contains whitespace: '" + t + "'");
    }
  }

 private:
  void build_index() {
    index_.clear();
    for (int i = 0; i < size(); ++i) index_.emplace(tokens_[static_cast<std::size_t>(i)], i);
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// A tokenized document: ids[0] is always BOS; length() counts scored tokens.
struct TokenSeq {
  std::vector<int> ids;
  std::uint64_t vocab_hash = 0;
  int length() const { return static_cast<int>(ids.size()) - 1; }
};

inline TokenSeq tokenize(const std::string& text, const Vocab& vocab) {
  auto words = split_whitespace(text);
  if (words.empty()) throw EmptyInputError("tokenize: text has no tokens");
  TokenSeq seq;
  seq.vocab_hash = vocab.hash();
  seq.ids.reserve(words.size() + 1);
  seq.ids.push_back(Vocab::kBos);
  for (const auto& w : words) seq.ids.push_back(vocab.lookup(w));
  return seq;
}

inline std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  if (seq.vocab_hash != vocab.hash()) throw ValidationError("detokenize: vocab mismatch");
  std::string out;
  for (std::size_t i = 1; i < seq.ids.size(); ++i) {
    if (i > 1) out += ' ';
    out += vocab.token(seq.ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bigram Markov chain over content tokens. rows has content_size+1 rows of
// content_size entries each; row 0 is the start distribution (context BOS),
// row i+1 conditions on content token i. Rows are probability vectors.
// ---------------------------------------------------------------------------

struct MarkovChain {
  int content_size = 0;
  std::vector<std::vector<double>> rows;

  void validate() const {
    if (content_size < 1) throw ValidationError("chain needs at least one content token");
    if (rows.size() != static_cast<std::size_t>(content_size) + 1)
      throw ValidationError("chain must have content_size+1 rows");
    for (const auto& row : rows) {
      if (row.size() != static_cast<std::size_t>(content_size))
        throw ValidationError("chain row has wrong width");
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw ValidationError("chain probabilities must be non-negative");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("chain row does not sum to 1");
    }
  }

  // prev_content == -1 means "start of document".
  const std::vector<double>& row(int prev_content) const {
    if (prev_content < -1 || prev_content >= content_size)
      throw ValidationError("chain context out of range");
    return rows[static_cast<std::size_t>(prev_content + 1)];
  }

  double prob(int prev_content, int next_content) const {
    const auto& r = row(prev_content);
    if (next_content < 0 || next_content >= content_size)
      throw ValidationError("chain token out of range");
    return r[static_cast<std::size_t>(next_content)];
  }

  int sample(int prev_content, std::mt19937_64& rng) const {
    const auto& r = row(prev_content);
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (int j = 0; j < content_size; ++j) {
      acc += r[static_cast<std::size_t>(j)];
      if (u < acc) return j;
    }
    return content_size - 1;  // guard against rounding at u ~ 1
  }
};

// Temperature-sharpened chain: each row is p^T renormalized. T = 1 returns the
// input unchanged (bit-exact); T > 1 concentrates mass on likely tokens.
inline MarkovChain sharpen(const MarkovChain& chain, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
  if (temperature == 1.0) return chain;
  MarkovChain out = chain;
  for (auto& row : out.rows) {
    double sum = 0.0;
    for (double& p : row) {
      p = std::pow(p, temperature);
      sum += p;
    }
    if (!(sum > 0.0) || !std::isfinite(sum))
      throw ValidationError("sharpen produced a degenerate row");
    for (double& p : row) p /= sum;
  }
  return out;
}

// Random chain: rows are Dirichlet(concentration) draws. When punct_prob > 0,
// the last content token is treated as sentence punctuation: every word row
// gives it exactly punct_prob, and neither the start row nor the punctuation
// row can emit it (no leading or doubled punctuation).
inline MarkovChain make_random_chain(int content_size, std::uint64_t seed,
                                     double concentration = 0.4, double punct_prob = 0.0) {
  if (content_size < 1) throw ValidationError("content_size must be >= 1");
  if (!(concentration > 0.0)) throw ValidationError("concentration must be > 0");
  if (punct_prob < 0.0 || punct_prob >= 1.0) throw ValidationError("punct_prob must be in [0,1)");
  if (punct_prob > 0.0 && content_size < 2)
    throw ValidationError("punct_prob > 0 needs at least two content tokens");
  auto rng = make_rng(mix_seed(seed, fnv1a64("chain")));
  std::gamma_distribution<double> gamma(concentration, 1.0);
  MarkovChain chain;
  chain.content_size = content_size;
  chain.rows.resize(static_cast<std::size_t>(content_size) + 1);
  const int punct = punct_prob > 0.0 ? content_size - 1 : -1;
  for (int r = 0; r <= content_size; ++r) {
    auto& row = chain.rows[static_cast<std::size_t>(r)];
    row.assign(static_cast<std::size_t>(content_size), 0.0);
    const bool word_context = punct >= 0 && r >= 1 && r != content_size;
    const int n_free = punct >= 0 ? content_size - 1 : content_size;
    double sum = 0.0;
    for (int j = 0; j < n_free; ++j) {
      double g = gamma(rng) + 1e-12;
      row[static_cast<std::size_t>(j)] = g;
      sum += g;
    }
    const double word_mass = word_context ? 1.0 - punct_prob : 1.0;
    for (int j = 0; j < n_free; ++j) row[static_cast<std::size_t>(j)] *= word_mass / sum;
    if (word_context) row[static_cast<std::size_t>(punct)] = punct_prob;
  }
  chain.validate();
  return chain;
}

// ---------------------------------------------------------------------------
// Synthetic world: human docs from human_chain, machine docs from the
// temperature-sharpened chain. Generation is deterministic in (config, count).
// ---------------------------------------------------------------------------

struct SynthWorldConfig {
  Vocab vocab;
  MarkovChain human_chain;           // over vocab content tokens
  double machine_temperature = 3.0;  // > 0
  int len_min = 60;                  // document length bounds, in tokens
  int len_max = 200;
  std::vector<std::string> sources = {"synthetic"};  // round-robin domain tags
  std::uint64_t seed = 1;

  void validate() const {
    vocab.validate();
    human_chain.validate();
    if (human_chain.content_size != vocab.content_size())
      throw ValidationError("chain size does not match vocab content size");
    if (!(machine_temperature > 0.0)) throw ValidationError("machine_temperature must be > 0");
    if (len_min < 5) throw ValidationError("len_min must be >= 5");
    if (len_max < len_min) throw ValidationError("len_max must be >= len_min");
    if (sources.empty()) throw ValidationError("at least one source tag required");
  }
};

// Convenience builder for the default world shape.
inline SynthWorldConfig make_default_world(int vocab_size, std::uint64_t seed,
                                           double machine_temperature = 3.0,
                                           double concentration = 0.4,
                                           double punct_prob = 0.03) {
  SynthWorldConfig cfg;
  cfg.vocab = Vocab::synthetic(vocab_size);
  cfg.human_chain = make_random_chain(cfg.vocab.content_size(), seed, concentration, punct_prob);
  cfg.machine_temperature = machine_temperature;
  cfg.seed = seed;
  return cfg;
}

namespace detail {
inline Document generate_doc(const SynthWorldConfig& cfg, const MarkovChain& chain, Label label,
                             int index, const std::string& id) {
  std::uint64_t salt = label == Label::human ? 0x68756d616eULL : 0x6d616368ULL;
  auto rng = make_rng(mix_seed(cfg.seed, salt, static_cast<std::uint64_t>(index)));
  int len = cfg.len_min == cfg.len_max
                ? cfg.len_min
                : static_cast<int>(std::uniform_int_distribution<int>(cfg.len_min, cfg.len_max)(rng));
  std::string text;
  int prev = -1;
  for (int t = 0; t < len; ++t) {
    int tok = chain.sample(prev, rng);
    if (t > 0) text += ' ';
    text += cfg.vocab.token(Vocab::kReserved + tok);
    prev = tok;
  }
  Document doc;
  doc.id = id;
  doc.text = text;
  doc.label = label;
  doc.source = cfg.sources[static_cast<std::size_t>(index) % cfg.sources.size()];
  doc.prompt_type = PromptType::none;
  return doc;
}
}  // namespace detail

inline Corpus synth_generate(const SynthWorldConfig& cfg, int n_human, int n_machine) {
  cfg.validate();
  if (n_human < 0 || n_machine < 0) throw ValidationError("document counts must be >= 0");
  MarkovChain machine_chain = sharpen(cfg.human_chain, cfg.machine_temperature);
  Corpus corpus;
  corpus.reserve(static_cast<std::size_t>(n_human + n_machine));
  char buf[32];
  for (int i = 0; i < n_human; ++i) {
    std::snprintf(buf, sizeof(buf), "h%06d", i + 1);
    corpus.push_back(detail::generate_doc(cfg, cfg.human_chain, Label::human, i, buf));
  }
  for (int i = 0; i < n_machine; ++i) {
    std::snprintf(buf, sizeof(buf), "m%06d", i + 1);
    corpus.push_back(detail::generate_doc(cfg, machine_chain, Label::machine, i, buf));
  }
  return corpus;
}

// Partition by source tag: documents whose source is in held_out become the
// evaluation side. Both sides must end up non-empty.
inline std::pair<Corpus, Corpus> split_cross_fit(const Corpus& corpus,
                                                 const std::set<std::string>& held_out) {
  std::set<std::string> present;
  for (const auto& d : corpus) present.insert(d.source);
  for (const auto& s : held_out)
    if (!present.count(s)) throw ValidationError("held-out source not present in corpus: '" + s + "'");
  Corpus fit, eval;
  for (const auto& d : corpus) (held_out.count(d.source) ? eval : fit).push_back(d);
  if (fit.empty() || eval.empty())
    throw ValidationError("cross-fit split left one side empty");
  return {std::move(fit), std::move(eval)};
}

// ---------------------------------------------------------------------------
// JSONL persistence. One object per line; field order is fixed so identical
// corpora serialize to identical bytes.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json document_to_json(const Document& d) {
  nlohmann::ordered_json j;
  j["id"] = d.id;
  j["text"] = d.text;
  j["label"] = to_string(d.label);
  j["source"] = d.source;
  j["prompt_type"] = to_string(d.prompt_type);
  return j;
}

inline Document document_from_json(const nlohmann::json& j) {
  Document d;
  try {
    d.id = j.at("id").get<std::string>();
    d.text = j.at("text").get<std::string>();
    d.label = label_from_string(j.at("label").get<std::string>());
    d.source = j.at("source").get<std::string>();
    d.prompt_type = prompt_type_from_string(j.at("prompt_type").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad document record: ") + e.what());
  }
  return d;
}

inline void save_corpus_jsonl(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& d : corpus) out << document_to_json(d).dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline Corpus load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  Corpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      corpus.push_back(document_from_json(j));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

// Stable fingerprint of a corpus (used in run reports and stage logs).
inline std::uint64_t corpus_hash(const Corpus& corpus) {
  std::string blob;
  for (const auto& d : corpus) {
    blob += document_to_json(d).dump();
    blob += '\n';
  }
  return fnv1a64(blob);
}

}  // namespace redetect
