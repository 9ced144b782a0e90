#pragma once
// Run configuration: a single JSON tree with documented defaults, deep-merged
// with a config file and then with --key=value overrides. Stage fingerprints
// hash the resolved sections a stage depends on, so artifact names change
// exactly when an input that matters to them changes.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "redetect/attack.hpp"
#include "redetect/common.hpp"
#include "redetect/corpus.hpp"
#include "redetect/detect.hpp"
#include "redetect/rewrite.hpp"
#include "redetect/train.hpp"

namespace redetect {

using Json = nlohmann::ordered_json;

struct WorldSection {
  int vocab_size = 32;
  double machine_temperature = 3.0;
  double concentration = 0.4;  // Dirichlet concentration of the human chain
  double punct_prob = 0.03;
  int len_min = 60;
  int len_max = 200;
  int train_human = 500;
  int train_machine = 500;
  int test_human = 200;
  int test_machine = 200;
  std::vector<std::string> train_sources = {"alpha", "beta"};
  std::vector<std::string> test_sources = {"gamma"};
  std::uint64_t seed = 1;  // resolved: section value, else the global seed
};

struct TrainSection {
  int rank = 8;
  double alpha = 32.0;
  std::string base_model = "surrogate";  // chain behind the frozen base logits:
                                         // machine | human | pooled | surrogate | uniform
  double base_smoothing = 0.3;         // uniform mixture for the frozen base logits
  double learning_rate = 0.01;
  int epochs = 20;
  int batch_size = 16;
  std::string optimizer = "adam";
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;
  std::uint64_t seed = 1;
};

struct AttackSection {
  std::vector<std::string> kinds;  // subset of {"decoherence", "rephrase"}
  int min_sentence_words = 20;
  double rephrase_retain = 0.5;
  std::uint64_t seed = 1;
};

struct EvalSection {
  std::vector<std::string> detectors = {"rewrite_learned", "rewrite_fd", "rewrite_edit",
                                        "likelihood",      "lrr",        "curvature"};
  int histogram_bins = 20;
};

struct GeometrySection {
  int n = 8;
  int d_m = 3;
  double noise_radius = 0.1;
  double shift_scale = 1.0;
  double m_cap = 1.0;
  std::uint64_t n_samples = 10000;
  int tube_n = 2;
  int tube_d_m = 1;
  std::vector<double> tube_eps = {0.01, 0.02, 0.05, 0.1, 0.2};
  std::uint64_t tube_samples = 200000;
  double tube_tolerance = 0.2;  // allowed |fitted - codim| in the pass check
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  int jobs = 1;
  WorldSection world;
  RewriterConfig rewriter;  // seed resolved like the other sections
  TrainSection train;
  AttackSection attack;
  EvalSection eval;
  GeometrySection geometry;

  void validate() const {
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
    if (world.vocab_size < 4) throw ConfigError("world.vocab_size must be >= 4");
    if (world.len_min < 5 || world.len_max < world.len_min)
      throw ConfigError("world length bounds invalid");
    if (world.train_human < 0 || world.train_machine < 0 || world.test_human < 0 ||
        world.test_machine < 0)
      throw ConfigError("corpus counts must be >= 0");
    if (world.train_sources.empty() || world.test_sources.empty())
      throw ConfigError("world needs at least one train and one test source tag");
    for (const auto& s : world.train_sources)
      for (const auto& t : world.test_sources)
        if (s == t) throw ConfigError("train and test sources must not overlap: '" + s + "'");
    rewriter.validate();
    if (train.rank < 1) throw ConfigError("train.rank must be >= 1");
    if (train.alpha <= 0.0) throw ConfigError("train.alpha must be > 0");
    if (train.base_smoothing < 0.0 || train.base_smoothing > 1.0)
      throw ConfigError("train.base_smoothing must be in [0,1]");
    if (train.base_model != "machine" && train.base_model != "human" &&
        train.base_model != "pooled" && train.base_model != "surrogate" &&
        train.base_model != "uniform")
      throw ConfigError(
          "train.base_model must be machine, human, pooled, surrogate, or uniform");
    if (train.optimizer != "adam" && train.optimizer != "sgd")
      throw ConfigError("train.optimizer must be 'adam' or 'sgd'");
    to_train_config().validate();
    for (const auto& k : attack.kinds) attack_kind_from_string(k);
    if (eval.detectors.empty()) throw ConfigError("eval.detectors must not be empty");
    for (const auto& d : eval.detectors) detector_spec(d);
    if (eval.histogram_bins < 2) throw ConfigError("eval.histogram_bins must be >= 2");
    if (geometry.d_m < 1 || geometry.d_m >= geometry.n)
      throw ConfigError("geometry requires 1 <= d_m < n");
    if (geometry.tube_d_m < 1 || geometry.tube_d_m >= geometry.tube_n)
      throw ConfigError("geometry tube world requires 1 <= tube_d_m < tube_n");
  }

  TrainConfig to_train_config() const {
    TrainConfig c;
    c.learning_rate = train.learning_rate;
    c.epochs = train.epochs;
    c.batch_size = train.batch_size;
    c.seed = train.seed;
    c.optimizer =
        train.optimizer == "sgd" ? TrainConfig::Optimizer::sgd : TrainConfig::Optimizer::adam;
    c.adam_beta1 = train.adam_beta1;
    c.adam_beta2 = train.adam_beta2;
    c.adam_eps = train.adam_eps;
    c.checkpoint_every = train.checkpoint_every;
    c.checkpoint_dir = train.checkpoint_every > 0 ? out_dir : std::string();
    return c;
  }

  AttackConfig to_attack_config(const std::string& kind) const {
    AttackConfig c;
    c.kind = attack_kind_from_string(kind);
    c.seed = attack.seed;
    c.min_sentence_words = attack.min_sentence_words;
    c.rephrase_retain = attack.rephrase_retain;
    c.rephrase_rewriter = rewriter;
    c.rephrase_rewriter.seed = attack.seed;
    return c;
  }
};

// ---------------------------------------------------------------------------
// JSON schema round-trip.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const Json& j, const std::string& scope,
                       const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + scope + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown config key '" + (scope.empty() ? key : scope + "." + key) + "'");
}

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline Json config_to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["jobs"] = c.jobs;
  Json w;
  w["vocab_size"] = c.world.vocab_size;
  w["machine_temperature"] = c.world.machine_temperature;
  w["concentration"] = c.world.concentration;
  w["punct_prob"] = c.world.punct_prob;
  w["len_min"] = c.world.len_min;
  w["len_max"] = c.world.len_max;
  w["train_human"] = c.world.train_human;
  w["train_machine"] = c.world.train_machine;
  w["test_human"] = c.world.test_human;
  w["test_machine"] = c.world.test_machine;
  w["train_sources"] = c.world.train_sources;
  w["test_sources"] = c.world.test_sources;
  w["seed"] = c.world.seed;
  j["world"] = std::move(w);
  Json r;
  r["kind"] = c.rewriter.kind == RewriterConfig::Kind::http ? "http" : "synthetic";
  r["k"] = c.rewriter.k;
  r["retain_fraction"] = c.rewriter.retain_fraction;
  r["endpoint_url"] = c.rewriter.endpoint_url;
  r["model_name"] = c.rewriter.model_name;
  r["api_key_env_var"] = c.rewriter.api_key_env_var;
  r["temperature"] = c.rewriter.temperature;
  r["timeout_seconds"] = c.rewriter.timeout_seconds;
  r["max_retries"] = c.rewriter.max_retries;
  r["max_concurrency"] = c.rewriter.max_concurrency;
  r["prompt_preset"] = to_string(c.rewriter.prompt_preset);
  r["strict_output"] = c.rewriter.strict_output;
  r["rewriter_tag"] = c.rewriter.rewriter_tag;
  r["seed"] = c.rewriter.seed;
  j["rewriter"] = std::move(r);
  Json t;
  t["rank"] = c.train.rank;
  t["alpha"] = c.train.alpha;
  t["base_model"] = c.train.base_model;
  t["base_smoothing"] = c.train.base_smoothing;
  t["learning_rate"] = c.train.learning_rate;
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["optimizer"] = c.train.optimizer;
  t["adam_beta1"] = c.train.adam_beta1;
  t["adam_beta2"] = c.train.adam_beta2;
  t["adam_eps"] = c.train.adam_eps;
  t["checkpoint_every"] = c.train.checkpoint_every;
  t["seed"] = c.train.seed;
  j["train"] = std::move(t);
  Json a;
  a["kinds"] = c.attack.kinds;
  a["min_sentence_words"] = c.attack.min_sentence_words;
  a["rephrase_retain"] = c.attack.rephrase_retain;
  a["seed"] = c.attack.seed;
  j["attack"] = std::move(a);
  Json e;
  e["detectors"] = c.eval.detectors;
  e["histogram_bins"] = c.eval.histogram_bins;
  j["eval"] = std::move(e);
  Json g;
  g["n"] = c.geometry.n;
  g["d_m"] = c.geometry.d_m;
  g["noise_radius"] = c.geometry.noise_radius;
  g["shift_scale"] = c.geometry.shift_scale;
  g["m_cap"] = c.geometry.m_cap;
  g["n_samples"] = c.geometry.n_samples;
  g["tube_n"] = c.geometry.tube_n;
  g["tube_d_m"] = c.geometry.tube_d_m;
  g["tube_eps"] = c.geometry.tube_eps;
  g["tube_samples"] = c.geometry.tube_samples;
  g["tube_tolerance"] = c.geometry.tube_tolerance;
  g["seed"] = c.geometry.seed;
  j["geometry"] = std::move(g);
  return j;
}

inline RunConfig config_from_json(const Json& j) {
  using detail::check_keys;
  using detail::read_field;
  check_keys(j, "", {"seed", "out_dir", "jobs", "world", "rewriter", "train", "attack", "eval",
                     "geometry"});
  RunConfig c;
  read_field(j, "seed", c.seed);
  read_field(j, "out_dir", c.out_dir);
  read_field(j, "jobs", c.jobs);

  // Sub-config seeds default to the global seed unless the section sets one.
  c.world.seed = c.rewriter.seed = c.train.seed = c.attack.seed = c.geometry.seed = c.seed;

  if (j.contains("world")) {
    const Json& w = j.at("world");
    check_keys(w, "world",
               {"vocab_size", "machine_temperature", "concentration", "punct_prob", "len_min",
                "len_max", "train_human", "train_machine", "test_human", "test_machine",
                "train_sources", "test_sources", "seed"});
    read_field(w, "vocab_size", c.world.vocab_size);
    read_field(w, "machine_temperature", c.world.machine_temperature);
    read_field(w, "concentration", c.world.concentration);
    read_field(w, "punct_prob", c.world.punct_prob);
    read_field(w, "len_min", c.world.len_min);
    read_field(w, "len_max", c.world.len_max);
    read_field(w, "train_human", c.world.train_human);
    read_field(w, "train_machine", c.world.train_machine);
    read_field(w, "test_human", c.world.test_human);
    read_field(w, "test_machine", c.world.test_machine);
    read_field(w, "train_sources", c.world.train_sources);
    read_field(w, "test_sources", c.world.test_sources);
    read_field(w, "seed", c.world.seed);
  }
  if (j.contains("rewriter")) {
    const Json& r = j.at("rewriter");
    check_keys(r, "rewriter",
               {"kind", "k", "retain_fraction", "endpoint_url", "model_name", "api_key_env_var",
                "temperature", "timeout_seconds", "max_retries", "max_concurrency",
                "prompt_preset", "strict_output", "rewriter_tag", "seed"});
    std::string kind = "synthetic";
    read_field(r, "kind", kind);
    if (kind == "synthetic")
      c.rewriter.kind = RewriterConfig::Kind::synthetic;
    else if (kind == "http")
      c.rewriter.kind = RewriterConfig::Kind::http;
    else
      throw ConfigError("rewriter.kind must be 'synthetic' or 'http'");
    read_field(r, "k", c.rewriter.k);
    read_field(r, "retain_fraction", c.rewriter.retain_fraction);
    read_field(r, "endpoint_url", c.rewriter.endpoint_url);
    read_field(r, "model_name", c.rewriter.model_name);
    read_field(r, "api_key_env_var", c.rewriter.api_key_env_var);
    read_field(r, "temperature", c.rewriter.temperature);
    read_field(r, "timeout_seconds", c.rewriter.timeout_seconds);
    read_field(r, "max_retries", c.rewriter.max_retries);
    read_field(r, "max_concurrency", c.rewriter.max_concurrency);
    if (r.contains("prompt_preset"))
      c.rewriter.prompt_preset = prompt_type_from_string(r.at("prompt_preset").get<std::string>());
    read_field(r, "strict_output", c.rewriter.strict_output);
    read_field(r, "rewriter_tag", c.rewriter.rewriter_tag);
    read_field(r, "seed", c.rewriter.seed);
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    check_keys(t, "train",
               {"rank", "alpha", "base_model", "base_smoothing", "learning_rate", "epochs",
                "batch_size", "optimizer", "adam_beta1", "adam_beta2", "adam_eps",
                "checkpoint_every", "seed"});
    read_field(t, "rank", c.train.rank);
    read_field(t, "alpha", c.train.alpha);
    read_field(t, "base_model", c.train.base_model);
    read_field(t, "base_smoothing", c.train.base_smoothing);
    read_field(t, "learning_rate", c.train.learning_rate);
    read_field(t, "epochs", c.train.epochs);
    read_field(t, "batch_size", c.train.batch_size);
    read_field(t, "optimizer", c.train.optimizer);
    read_field(t, "adam_beta1", c.train.adam_beta1);
    read_field(t, "adam_beta2", c.train.adam_beta2);
    read_field(t, "adam_eps", c.train.adam_eps);
    read_field(t, "checkpoint_every", c.train.checkpoint_every);
    read_field(t, "seed", c.train.seed);
  }
  if (j.contains("attack")) {
    const Json& a = j.at("attack");
    check_keys(a, "attack", {"kinds", "min_sentence_words", "rephrase_retain", "seed"});
    read_field(a, "kinds", c.attack.kinds);
    read_field(a, "min_sentence_words", c.attack.min_sentence_words);
    read_field(a, "rephrase_retain", c.attack.rephrase_retain);
    read_field(a, "seed", c.attack.seed);
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    check_keys(e, "eval", {"detectors", "histogram_bins"});
    read_field(e, "detectors", c.eval.detectors);
    read_field(e, "histogram_bins", c.eval.histogram_bins);
  }
  if (j.contains("geometry")) {
    const Json& g = j.at("geometry");
    check_keys(g, "geometry",
               {"n", "d_m", "noise_radius", "shift_scale", "m_cap", "n_samples", "tube_n",
                "tube_d_m", "tube_eps", "tube_samples", "tube_tolerance", "seed"});
    read_field(g, "n", c.geometry.n);
    read_field(g, "d_m", c.geometry.d_m);
    read_field(g, "noise_radius", c.geometry.noise_radius);
    read_field(g, "shift_scale", c.geometry.shift_scale);
    read_field(g, "m_cap", c.geometry.m_cap);
    read_field(g, "n_samples", c.geometry.n_samples);
    read_field(g, "tube_n", c.geometry.tube_n);
    read_field(g, "tube_d_m", c.geometry.tube_d_m);
    read_field(g, "tube_eps", c.geometry.tube_eps);
    read_field(g, "tube_samples", c.geometry.tube_samples);
    read_field(g, "tube_tolerance", c.geometry.tube_tolerance);
    read_field(g, "seed", c.geometry.seed);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// File loading and --key=value overrides (dotted paths into the JSON tree).
// ---------------------------------------------------------------------------

inline void apply_override(Json& tree, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw ConfigError("empty override key");
  Json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("bad override key '" + dotted_key + "'");
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      // Unparseable values are taken as plain strings (e.g. --rewriter.kind=http).
      (*node)[part] = parsed.is_discarded() ? Json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::pair<std::string, std::string>>& overrides =
                                     {}) {
  Json tree = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    try {
      in >> tree;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("config file " + path + ": " + e.what());
    }
  }
  for (const auto& [key, value] : overrides) apply_override(tree, key, value);
  return config_from_json(tree);
}

// ---------------------------------------------------------------------------
// Stage fingerprints: 8 hex chars over the resolved sections a stage reads.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fp8(const Json& j) {
  return to_hex(fnv1a64(j.dump()) & 0xffffffffULL, 8);
}
}  // namespace detail

inline std::string fp_gen(const RunConfig& c) {
  return detail::fp8(config_to_json(c).at("world"));
}
inline std::string fp_rewrite(const RunConfig& c) {
  const Json j = config_to_json(c);
  return detail::fp8(Json::array({j.at("world"), j.at("rewriter")}));
}
inline std::string fp_train(const RunConfig& c) {
  const Json j = config_to_json(c);
  return detail::fp8(Json::array({j.at("world"), j.at("rewriter"), j.at("train")}));
}
inline std::string fp_attack(const RunConfig& c) {
  const Json j = config_to_json(c);
  return detail::fp8(Json::array({j.at("world"), j.at("rewriter"), j.at("attack")}));
}
inline std::string fp_eval(const RunConfig& c) {
  const Json j = config_to_json(c);
  return detail::fp8(Json::array(
      {j.at("world"), j.at("rewriter"), j.at("train"), j.at("attack"), j.at("eval")}));
}
inline std::string fp_geometry(const RunConfig& c) {
  return detail::fp8(config_to_json(c).at("geometry"));
}

}  // namespace redetect
