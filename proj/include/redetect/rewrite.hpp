#pragma once
// The K-reconstruction step: a seeded synthetic rewriter for desk-scale runs
// plus the wiring for an HTTP chat-completions rewriter (transport injected,
// see rewrite_http.hpp for the real client). Prompt presets live here too.

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "redetect/common.hpp"
#include "redetect/corpus.hpp"

namespace redetect {

// System prompt used when asking a model to reconstruct a document.
inline constexpr const char* kRewriteSystemPrompt =
    "You are a professional rewriting expert and you can rewrite the context without missing "
    "the original details. Please keep the length of the rewritten text similar to the original "
    "text. Original text:";

// Selectable alternatives for eliciting machine text under other task framings.
inline constexpr const char* kPolishSystemPrompt =
    "You are a professional polishing expert and you can help polish this paragraph.";
inline constexpr const char* kExpandSystemPrompt =
    "You are a professional writing expert and you can help expand this paragraph.";

// Some chat models pad replies with commentary; this suffix keeps them terse.
inline constexpr const char* kStrictOutputSuffix =
    "Return ONLY the rewritten/polished/expanded version. Do not explain changes, do not give "
    "multiple options, and do not add commentary.";

struct RewriterConfig {
  enum class Kind { synthetic, http };
  Kind kind = Kind::synthetic;
  int k = 4;                     // reconstructions per document
  double retain_fraction = 0.7;  // synthetic only: probability a token survives
  std::string endpoint_url;      // http only
  std::string model_name;
  std::string api_key_env_var;
  double temperature = 0.8;  // http only
  double timeout_seconds = 30.0;
  int max_retries = 3;      // total attempts per request
  int max_concurrency = 4;  // bounded in-flight requests per document
  PromptType prompt_preset = PromptType::rewrite;
  bool strict_output = false;  // append kStrictOutputSuffix to the system prompt
  std::string rewriter_tag = "synthetic";
  std::uint64_t seed = 1;

  void validate() const {
    if (k < 1) throw ValidationError("rewriter K must be >= 1");
    if (retain_fraction < 0.0 || retain_fraction > 1.0)
      throw ValidationError("retain_fraction must be in [0,1]");
    if (!(temperature > 0.0)) throw ValidationError("rewriter temperature must be > 0");
    if (max_retries < 1) throw ValidationError("max_retries must be >= 1");
    if (max_concurrency < 1) throw ValidationError("max_concurrency must be >= 1");
    if (timeout_seconds <= 0.0) throw ValidationError("timeout_seconds must be > 0");
    if (prompt_preset == PromptType::none)
      throw ValidationError("prompt_preset must be rewrite, polish, or expand");
    if (kind == Kind::http && endpoint_url.empty())
      throw ConfigError("http rewriter requires endpoint_url");
  }
};

inline std::string system_prompt_for(const RewriterConfig& cfg) {
  std::string prompt;
  switch (cfg.prompt_preset) {
    case PromptType::rewrite: prompt = kRewriteSystemPrompt; break;
    case PromptType::polish: prompt = kPolishSystemPrompt; break;
    case PromptType::expand: prompt = kExpandSystemPrompt; break;
    default: throw ValidationError("prompt_preset must be rewrite, polish, or expand");
  }
  if (cfg.strict_output) {
    prompt += ' ';
    prompt += kStrictOutputSuffix;
  }
  return prompt;
}

// Requested generation ceiling: 1.2x the parent's token count.
inline int max_tokens_for(const std::string& parent_text) {
  auto n = static_cast<double>(split_whitespace(parent_text).size());
  return static_cast<int>(std::ceil(1.2 * n));
}

struct RewriteSet {
  std::string parent_id;
  std::vector<std::string> rewrites;  // exactly K entries
  std::string rewriter_tag;
  std::uint64_t seed = 0;
  PromptType prompt_type = PromptType::rewrite;
};

// ---------------------------------------------------------------------------
// Synthetic rewriter: every position is kept with probability retain_fraction,
// otherwise resampled from the machine chain conditioned on the previous
// *output* token. Output length equals parent length. Retained tokens play the
// role of the projection; resampled ones are the perturbation.
// ---------------------------------------------------------------------------

inline TokenSeq synthetic_rewrite(const MarkovChain& chain, const TokenSeq& parent,
                                  double retain_fraction, std::uint64_t seed,
                                  int* kept_count = nullptr) {
  if (retain_fraction < 0.0 || retain_fraction > 1.0)
    throw ValidationError("retain_fraction must be in [0,1]");
  if (parent.length() < 1) throw EmptyInputError("cannot rewrite an empty sequence");
  auto rng = make_rng(mix_seed(seed, fnv1a64("synthetic-rewrite")));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TokenSeq out;
  out.vocab_hash = parent.vocab_hash;
  out.ids.reserve(parent.ids.size());
  out.ids.push_back(Vocab::kBos);
  int kept = 0;
  for (std::size_t t = 1; t < parent.ids.size(); ++t) {
    if (unit(rng) < retain_fraction) {
      out.ids.push_back(parent.ids[t]);
      ++kept;
    } else {
      int prev = out.ids.back() - Vocab::kReserved;  // reserved ids fall back to the start row
      if (prev < 0 || prev >= chain.content_size) prev = -1;
      out.ids.push_back(Vocab::kReserved + chain.sample(prev, rng));
    }
  }
  if (kept_count) *kept_count = kept;
  return out;
}

// Pluggable HTTP call: returns the completion text for one rewrite request.
using RewriteTransport = std::function<std::string(const RewriterConfig&, const Document&)>;

// ---------------------------------------------------------------------------
// rewrite_k: K reconstructions of one document. The synthetic path is a pure
// function of (cfg, doc, chain); the http path issues one request per rewrite
// with at most max_concurrency in flight, results ordered by rewrite index.
// ---------------------------------------------------------------------------

inline RewriteSet rewrite_k(const RewriterConfig& cfg, const Document& doc,
                            const MarkovChain* machine_chain, const Vocab* vocab,
                            const RewriteTransport& transport = {}) {
  cfg.validate();
  RewriteSet set;
  set.parent_id = doc.id;
  set.rewriter_tag = cfg.rewriter_tag;
  set.seed = cfg.seed;
  set.prompt_type = cfg.prompt_preset;
  set.rewrites.resize(static_cast<std::size_t>(cfg.k));
  if (cfg.kind == RewriterConfig::Kind::synthetic) {
    if (machine_chain == nullptr || vocab == nullptr)
      throw ValidationError("synthetic rewriting requires a machine chain and vocab");
    TokenSeq parent = tokenize(doc.text, *vocab);
    for (int k = 0; k < cfg.k; ++k) {
      std::uint64_t seed_k = mix_seed(cfg.seed, fnv1a64(doc.id), static_cast<std::uint64_t>(k));
      TokenSeq rw = synthetic_rewrite(*machine_chain, parent, cfg.retain_fraction, seed_k);
      set.rewrites[static_cast<std::size_t>(k)] = detokenize(rw, *vocab);
    }
  } else {
    if (!transport)
      throw ConfigError(
          "http rewriting needs a transport; pass http_transport() from rewrite_http.hpp");
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.k));
    parallel_for(static_cast<std::size_t>(cfg.k), std::min(cfg.max_concurrency, cfg.k),
                 [&](std::size_t k) {
                   try {
                     set.rewrites[k] = transport(cfg, doc);
                   } catch (...) {
                     errors[k] = std::current_exception();
                   }
                 });
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (const auto& r : set.rewrites)
    if (r.empty()) throw RewriteFailure("rewriter produced an empty rewrite for doc " + doc.id);
  return set;
}

// Rewrite a whole corpus; deterministic per document (seeds mix in doc ids, so
// the result does not depend on corpus order or on jobs).
inline std::vector<RewriteSet> rewrite_corpus(const RewriterConfig& cfg, const Corpus& corpus,
                                              const MarkovChain* machine_chain, const Vocab* vocab,
                                              const RewriteTransport& transport = {},
                                              int jobs = 1) {
  std::vector<RewriteSet> out(corpus.size());
  std::vector<std::exception_ptr> errors(corpus.size());
  int workers = cfg.kind == RewriterConfig::Kind::synthetic ? jobs : 1;
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    try {
      out[i] = rewrite_k(cfg, corpus[i], machine_chain, vocab, transport);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Rewrite cache: corpus-format JSONL with parent_id / rewrite_index extras,
// keyed by (parent_id, rewriter_tag, rewrite_index). Detection never
// re-queries a rewriter when a cache file is present.
// ---------------------------------------------------------------------------

inline void save_rewrites_jsonl(const std::string& path, const std::vector<RewriteSet>& sets) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& set : sets) {
    for (std::size_t k = 0; k < set.rewrites.size(); ++k) {
      nlohmann::ordered_json j;
      j["id"] = set.parent_id + "#r" + std::to_string(k);
      j["text"] = set.rewrites[k];
      j["label"] = to_string(Label::machine);
      j["source"] = set.rewriter_tag;
      j["prompt_type"] = to_string(set.prompt_type);
      j["parent_id"] = set.parent_id;
      j["rewrite_index"] = k;
      out << j.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::map<std::string, RewriteSet> load_rewrites_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::map<std::string, std::map<int, std::string>> texts;
  std::map<std::string, RewriteSet> sets;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      std::string parent = j.at("parent_id").get<std::string>();
      int index = j.at("rewrite_index").get<int>();
      std::string text = j.at("text").get<std::string>();
      if (index < 0) throw ParseError("negative rewrite_index");
      if (!texts[parent].emplace(index, std::move(text)).second)
        throw ParseError("duplicate rewrite_index " + std::to_string(index) + " for " + parent);
      auto& set = sets[parent];
      set.parent_id = parent;
      set.rewriter_tag = j.at("source").get<std::string>();
      set.prompt_type = prompt_type_from_string(j.at("prompt_type").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (auto& [parent, by_index] : texts) {
    auto& set = sets[parent];
    int expect = 0;
    for (auto& [index, text] : by_index) {
      if (index != expect++)
        throw ParseError(path + ": non-contiguous rewrite_index for " + parent);
      set.rewrites.push_back(std::move(text));
    }
  }
  return sets;
}

}  // namespace redetect
