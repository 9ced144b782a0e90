#pragma once
// Adversarial perturbations applied to machine text before detection: the
// decoherence attack (one adjacent word swap per long-enough sentence) and a
// rewriter-routed rephrase attack.

#include <string>
#include <vector>

#include "redetect/corpus.hpp"
#include "redetect/rewrite.hpp"

namespace redetect {

struct AttackConfig {
  enum class Kind { decoherence, rephrase };
  Kind kind = Kind::decoherence;
  std::uint64_t seed = 1;
  int min_sentence_words = 20;     // strict: only sentences with > this many words are touched
  double rephrase_retain = 0.5;    // synthetic rephrase retention
  RewriterConfig rephrase_rewriter;  // rephrase only; retain_fraction overridden

  void validate() const {
    if (min_sentence_words < 2) throw ValidationError("min_sentence_words must be >= 2");
    if (rephrase_retain < 0.0 || rephrase_retain > 1.0)
      throw ValidationError("rephrase_retain must be in [0,1]");
  }
};

inline std::string to_string(AttackConfig::Kind k) {
  return k == AttackConfig::Kind::decoherence ? "decoherence" : "rephrase";
}
inline AttackConfig::Kind attack_kind_from_string(const std::string& s) {
  if (s == "decoherence") return AttackConfig::Kind::decoherence;
  if (s == "rephrase") return AttackConfig::Kind::rephrase;
  throw ParseError("unknown attack kind: '" + s + "'");
}

namespace detail {
// Chunks between sentence delimiters {. ! ?}; each chunk keeps its trailing
// delimiter (empty for a trailing fragment) so the text reassembles exactly.
struct SentenceChunk {
  std::string body;
  std::string delim;
};

inline std::vector<SentenceChunk> split_sentences(const std::string& text) {
  std::vector<SentenceChunk> chunks;
  std::string body;
  for (char c : text) {
    if (c == '.' || c == '!' || c == '?') {
      chunks.push_back({body, std::string(1, c)});
      body.clear();
    } else {
      body += c;
    }
  }
  if (!body.empty()) chunks.push_back({body, ""});
  return chunks;
}
}  // namespace detail

// Decoherence attack: in every sentence with strictly more than
// min_sentence_words words, swap one uniformly chosen adjacent word pair.
// Word multisets per sentence are preserved; shorter sentences pass through
// verbatim. Deterministic in (doc id, seed).
inline Document decoherence(const Document& doc, const AttackConfig& cfg) {
  cfg.validate();
  if (doc.label != Label::machine)
    throw ValidationError("decoherence targets machine-labeled documents");
  auto rng = make_rng(mix_seed(cfg.seed, fnv1a64(doc.id), fnv1a64("decoherence")));
  auto chunks = detail::split_sentences(doc.text);
  std::string rebuilt;
  for (const auto& chunk : chunks) {
    auto words = split_whitespace(chunk.body);
    if (static_cast<int>(words.size()) > cfg.min_sentence_words) {
      const auto j = std::uniform_int_distribution<std::size_t>(0, words.size() - 2)(rng);
      std::swap(words[j], words[j + 1]);
      std::string joined;
      for (std::size_t w = 0; w < words.size(); ++w) {
        if (w > 0) joined += ' ';
        joined += words[w];
      }
      rebuilt += joined;
    } else {
      rebuilt += chunk.body;
    }
    rebuilt += chunk.delim;
  }
  Document out = doc;
  out.text = rebuilt;
  out.source = doc.source + "+decoherence";
  return out;
}

// Rephrase attack: one rewriter pass over the document (synthetic with the
// configured retention, or HTTP via the supplied transport).
inline Document rephrase_attack(const Document& doc, const AttackConfig& cfg,
                                const MarkovChain* machine_chain, const Vocab* vocab,
                                const RewriteTransport& transport = {}) {
  cfg.validate();
  if (doc.label != Label::machine)
    throw ValidationError("rephrase attack targets machine-labeled documents");
  RewriterConfig rw = cfg.rephrase_rewriter;
  rw.k = 1;
  rw.retain_fraction = cfg.rephrase_retain;
  rw.seed = mix_seed(cfg.seed, fnv1a64("rephrase"));
  rw.rewriter_tag = "rephrase-attack";
  RewriteSet set = rewrite_k(rw, doc, machine_chain, vocab, transport);
  Document out = doc;
  out.text = set.rewrites.front();
  out.source = doc.source + "+rephrase";
  return out;
}

// Attack every machine document in a corpus; human docs pass through
// untouched (only machine text is perturbed).
inline Corpus attack_corpus(const Corpus& corpus, const AttackConfig& cfg,
                            const MarkovChain* machine_chain = nullptr,
                            const Vocab* vocab = nullptr,
                            const RewriteTransport& transport = {}) {
  Corpus out;
  out.reserve(corpus.size());
  for (const auto& doc : corpus) {
    if (doc.label != Label::machine) {
      out.push_back(doc);
    } else if (cfg.kind == AttackConfig::Kind::decoherence) {
      out.push_back(decoherence(doc, cfg));
    } else {
      out.push_back(rephrase_attack(doc, cfg, machine_chain, vocab, transport));
    }
  }
  return out;
}

}  // namespace redetect
