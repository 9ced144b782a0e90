#pragma once
// File-based pipeline stages. Every stage reads and writes artifacts under
// out_dir whose names carry a fingerprint of the config sections they depend
// on; a stage whose outputs already exist is skipped, which makes reruns cheap
// and stale mixtures impossible.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "redetect/config.hpp"
#include "redetect/eval.hpp"
#include "redetect/geometry.hpp"

namespace redetect {

struct ArtifactPaths {
  std::string corpus_train;
  std::string corpus_test;
  std::string rewrites_train;
  std::string rewrites_test;
  std::string checkpoint_init;
  std::string checkpoint_trained;
  std::string history;
  std::vector<std::pair<std::string, std::string>> attacked;          // kind -> corpus path
  std::vector<std::pair<std::string, std::string>> attacked_rewrites; // kind -> rewrites path
  std::string results;
  std::string report;
  std::string auc_table;
  std::string gains_table;
  std::string histogram;
  std::string geometry_report;
  std::string fractions;
};

inline ArtifactPaths artifact_paths(const RunConfig& c) {
  const std::string d = c.out_dir + "/";
  ArtifactPaths p;
  p.corpus_train = d + "corpus_train_" + fp_gen(c) + ".jsonl";
  p.corpus_test = d + "corpus_test_" + fp_gen(c) + ".jsonl";
  p.rewrites_train = d + "rewrites_train_" + fp_rewrite(c) + ".jsonl";
  p.rewrites_test = d + "rewrites_test_" + fp_rewrite(c) + ".jsonl";
  p.checkpoint_init = d + "checkpoint_init_" + fp_train(c) + ".json";
  p.checkpoint_trained = d + "checkpoint_trained_" + fp_train(c) + ".json";
  p.history = d + "history_" + fp_train(c) + ".tsv";
  for (const auto& kind : c.attack.kinds) {
    p.attacked.emplace_back(kind, d + "corpus_test_" + kind + "_" + fp_attack(c) + ".jsonl");
    p.attacked_rewrites.emplace_back(kind,
                                     d + "rewrites_test_" + kind + "_" + fp_attack(c) + ".jsonl");
  }
  p.results = d + "results_" + fp_eval(c) + ".tsv";
  p.report = d + "report_" + fp_eval(c) + ".json";
  p.auc_table = d + "auc_" + fp_eval(c) + ".tsv";
  p.gains_table = d + "gains_" + fp_eval(c) + ".tsv";
  p.histogram = d + "histogram_" + fp_eval(c) + ".tsv";
  p.geometry_report = d + "geometry_" + fp_geometry(c) + ".json";
  p.fractions = d + "fractions_" + fp_geometry(c) + ".tsv";
  return p;
}

namespace detail {

inline bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

inline void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

inline std::uint64_t file_fnv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read artifact: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

inline void require_artifact(const std::string& path, const std::string& producer) {
  if (!file_exists(path))
    throw ConfigError("missing artifact '" + path + "'; run the '" + producer + "' stage first");
}

}  // namespace detail

// Shared deterministic world pieces derived from the config alone.
struct PipelineWorld {
  Vocab vocab;
  MarkovChain human_chain;
  MarkovChain machine_chain;
  MarkovChain surrogate_chain;  // frozen scoring model, independent of both
  SynthWorldConfig train_world;
  SynthWorldConfig test_world;
};

inline PipelineWorld make_pipeline_world(const RunConfig& c) {
  PipelineWorld w;
  w.vocab = Vocab::synthetic(c.world.vocab_size);
  w.human_chain = make_random_chain(w.vocab.content_size(), c.world.seed, c.world.concentration,
                                    c.world.punct_prob);
  w.machine_chain = sharpen(w.human_chain, c.world.machine_temperature);
  // The frozen scorer plays the role of an off-the-shelf scoring model: a
  // different draw from the same prior, deliberately mismatched with both the
  // human and the machine chain.
  w.surrogate_chain =
      make_random_chain(w.vocab.content_size(), mix_seed(c.world.seed, fnv1a64("surrogate")),
                        c.world.concentration, c.world.punct_prob);
  SynthWorldConfig base;
  base.vocab = w.vocab;
  base.human_chain = w.human_chain;
  base.machine_temperature = c.world.machine_temperature;
  base.len_min = c.world.len_min;
  base.len_max = c.world.len_max;
  w.train_world = base;
  w.train_world.sources = c.world.train_sources;
  w.train_world.seed = mix_seed(c.world.seed, fnv1a64("train-corpus"));
  w.test_world = base;
  w.test_world.sources = c.world.test_sources;
  w.test_world.seed = mix_seed(c.world.seed, fnv1a64("test-corpus"));
  return w;
}

inline ScorerParams base_scorer(const RunConfig& c, const PipelineWorld& w) {
  ScorerParams p;
  if (c.train.base_model == "uniform") {
    p = ScorerParams::uniform(static_cast<int>(w.vocab.size()), c.train.rank, c.train.alpha,
                              w.vocab.hash());
  } else if (c.train.base_model == "pooled") {
    // Stand-in for a scorer fit on mixed text: average of the two chains.
    MarkovChain pooled = w.human_chain;
    for (std::size_t r = 0; r < pooled.rows.size(); ++r)
      for (std::size_t t = 0; t < pooled.rows[r].size(); ++t)
        pooled.rows[r][t] = 0.5 * (w.human_chain.rows[r][t] + w.machine_chain.rows[r][t]);
    p = ScorerParams::from_chain(pooled, w.vocab, c.train.rank, c.train.alpha,
                                 c.train.base_smoothing);
  } else {
    const MarkovChain& chain = c.train.base_model == "machine"  ? w.machine_chain
                               : c.train.base_model == "human"  ? w.human_chain
                                                                : w.surrogate_chain;
    p = ScorerParams::from_chain(chain, w.vocab, c.train.rank, c.train.alpha,
                                 c.train.base_smoothing);
  }
  p.tag = "init";
  return p;
}

// ---------------------------------------------------------------------------
// gen: write train and test corpora.
// ---------------------------------------------------------------------------

inline void cmd_gen(const RunConfig& c) {
  detail::ensure_out_dir(c.out_dir);
  const ArtifactPaths paths = artifact_paths(c);
  PipelineWorld w = make_pipeline_world(c);
  auto emit = [&](const std::string& path, const SynthWorldConfig& world, int n_h, int n_m,
                  const char* prefix, const char* name) {
    Corpus corpus;
    if (detail::file_exists(path)) {
      corpus = load_corpus_jsonl(path);
      std::cout << "[gen] " << name << ": cached " << corpus.size() << " docs (hash "
                << to_hex(corpus_hash(corpus)) << ") " << path << "\n";
      return;
    }
    corpus = synth_generate(world, n_h, n_m);
    for (auto& doc : corpus) doc.id = prefix + doc.id;
    save_corpus_jsonl(path, corpus);
    std::cout << "[gen] " << name << ": " << corpus.size() << " docs (hash "
              << to_hex(corpus_hash(corpus)) << ") " << path << "\n";
  };
  emit(paths.corpus_train, w.train_world, c.world.train_human, c.world.train_machine, "tr-",
       "train");
  emit(paths.corpus_test, w.test_world, c.world.test_human, c.world.test_machine, "te-", "test");
}

// ---------------------------------------------------------------------------
// rewrite: produce the K-rewrite cache for both corpora.
// ---------------------------------------------------------------------------

inline void cmd_rewrite(const RunConfig& c, const RewriteTransport& transport = {}) {
  detail::ensure_out_dir(c.out_dir);
  const ArtifactPaths paths = artifact_paths(c);
  detail::require_artifact(paths.corpus_train, "gen");
  detail::require_artifact(paths.corpus_test, "gen");
  PipelineWorld w = make_pipeline_world(c);
  auto emit = [&](const std::string& corpus_path, const std::string& out_path, const char* name) {
    if (detail::file_exists(out_path)) {
      std::cout << "[rewrite] " << name << ": cache present, skipped " << out_path << "\n";
      return;
    }
    Corpus corpus = load_corpus_jsonl(corpus_path);
    std::vector<RewriteSet> sets =
        rewrite_corpus(c.rewriter, corpus, &w.machine_chain, &w.vocab, transport, c.jobs);
    save_rewrites_jsonl(out_path, sets);
    std::cout << "[rewrite] " << name << ": " << sets.size() << " docs x " << c.rewriter.k
              << " rewrites " << out_path << "\n";
  };
  emit(paths.corpus_train, paths.rewrites_train, "train");
  emit(paths.corpus_test, paths.rewrites_test, "test");
}

// ---------------------------------------------------------------------------
// train: frozen base from the surrogate chain, adapter trained to widen the
// human-machine reconstruction gap on the train split (last train source held
// out as validation when there is more than one).
// ---------------------------------------------------------------------------

inline void cmd_train(const RunConfig& c) {
  detail::ensure_out_dir(c.out_dir);
  const ArtifactPaths paths = artifact_paths(c);
  if (detail::file_exists(paths.checkpoint_init) && detail::file_exists(paths.checkpoint_trained)) {
    std::cout << "[train] checkpoints present, skipped " << paths.checkpoint_trained << "\n";
    return;
  }
  detail::require_artifact(paths.corpus_train, "gen");
  detail::require_artifact(paths.rewrites_train, "rewrite");
  PipelineWorld w = make_pipeline_world(c);
  Corpus corpus = load_corpus_jsonl(paths.corpus_train);
  auto cache = load_rewrites_jsonl(paths.rewrites_train);

  ScorerParams init = base_scorer(c, w);
  save_checkpoint(paths.checkpoint_init, init);

  Corpus fit = corpus;
  Corpus val;
  if (c.world.train_sources.size() > 1) {
    auto split = split_cross_fit(corpus, {c.world.train_sources.back()});
    fit = std::move(split.first);
    val = std::move(split.second);
  }
  TrainData data;
  data.human = make_pairs(fit, cache, w.vocab, Label::human);
  data.machine = make_pairs(fit, cache, w.vocab, Label::machine);
  if (!val.empty()) {
    data.val_human = make_pairs(val, cache, w.vocab, Label::human);
    data.val_machine = make_pairs(val, cache, w.vocab, Label::machine);
  }

  ScorerParams start = init;
  start.reset_adapter(mix_seed(c.train.seed, fnv1a64("adapter-init")));
  TrainResult result = train_distance(start, data, c.to_train_config());
  result.params.tag = "trained";
  save_checkpoint(paths.checkpoint_trained, result.params);
  save_history_tsv(paths.history, result.history);
  const std::size_t last = result.history.objective.size() - 1;
  std::cout << "[train] " << result.history.objective.size() << " epochs, objective "
            << fmt_double(result.history.objective[last]) << " (human "
            << fmt_double(result.history.mean_human_err[last]) << ", machine "
            << fmt_double(result.history.mean_machine_err[last]) << ") "
            << paths.checkpoint_trained << "\n";
}

// ---------------------------------------------------------------------------
// attack: perturb machine docs of the test corpus, then rewrite the attacked
// corpora so the rewrite detectors can score them.
// ---------------------------------------------------------------------------

inline void cmd_attack(const RunConfig& c, const RewriteTransport& transport = {}) {
  detail::ensure_out_dir(c.out_dir);
  const ArtifactPaths paths = artifact_paths(c);
  if (c.attack.kinds.empty()) {
    std::cout << "[attack] no attack kinds configured, nothing to do\n";
    return;
  }
  detail::require_artifact(paths.corpus_test, "gen");
  PipelineWorld w = make_pipeline_world(c);
  Corpus test = load_corpus_jsonl(paths.corpus_test);
  for (std::size_t i = 0; i < c.attack.kinds.size(); ++i) {
    const std::string& kind = c.attack.kinds[i];
    const std::string& corpus_path = paths.attacked[i].second;
    const std::string& rewrites_path = paths.attacked_rewrites[i].second;
    Corpus attacked;
    if (detail::file_exists(corpus_path)) {
      attacked = load_corpus_jsonl(corpus_path);
      std::cout << "[attack] " << kind << ": cached " << corpus_path << "\n";
    } else {
      attacked = attack_corpus(test, c.to_attack_config(kind), &w.machine_chain, &w.vocab,
                               transport);
      save_corpus_jsonl(corpus_path, attacked);
      std::cout << "[attack] " << kind << ": " << attacked.size() << " docs " << corpus_path
                << "\n";
    }
    if (detail::file_exists(rewrites_path)) {
      std::cout << "[attack] " << kind << ": rewrite cache present, skipped\n";
    } else {
      auto sets = rewrite_corpus(c.rewriter, attacked, &w.machine_chain, &w.vocab, transport,
                                 c.jobs);
      save_rewrites_jsonl(rewrites_path, sets);
      std::cout << "[attack] " << kind << ": rewrites " << rewrites_path << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// detect: per-document statistics for every configured detector, clean corpus
// plus any attacked corpora whose artifacts are present.
// ---------------------------------------------------------------------------

inline void cmd_detect(const RunConfig& c) {
  detail::ensure_out_dir(c.out_dir);
  const ArtifactPaths paths = artifact_paths(c);
  detail::require_artifact(paths.corpus_test, "gen");
  detail::require_artifact(paths.rewrites_test, "rewrite");
  detail::require_artifact(paths.checkpoint_init, "train");
  detail::require_artifact(paths.checkpoint_trained, "train");
  PipelineWorld w = make_pipeline_world(c);
  Corpus test = load_corpus_jsonl(paths.corpus_test);
  auto cache = load_rewrites_jsonl(paths.rewrites_test);
  ScorerParams init = load_checkpoint(paths.checkpoint_init, w.vocab.hash());
  ScorerParams trained = load_checkpoint(paths.checkpoint_trained, w.vocab.hash());
  ScoringContext ctx{&trained, &init, &w.vocab};
  auto results = score_corpus(c.eval.detectors, test, cache, ctx, c.jobs);
  save_results_tsv(paths.results, results);
  std::cout << "[detect] " << results.size() << " statistics (" << c.eval.detectors.size()
            << " detectors x " << test.size() << " docs) " << paths.results << "\n";
}

// ---------------------------------------------------------------------------
// eval: assemble the report from artifacts.
// ---------------------------------------------------------------------------

inline Report cmd_eval(const RunConfig& c) {
  detail::ensure_out_dir(c.out_dir);
  const ArtifactPaths paths = artifact_paths(c);
  detail::require_artifact(paths.corpus_test, "gen");
  detail::require_artifact(paths.rewrites_test, "rewrite");
  detail::require_artifact(paths.checkpoint_init, "train");
  detail::require_artifact(paths.checkpoint_trained, "train");
  PipelineWorld w = make_pipeline_world(c);
  ScorerParams init = load_checkpoint(paths.checkpoint_init, w.vocab.hash());
  ScorerParams trained = load_checkpoint(paths.checkpoint_trained, w.vocab.hash());

  SuiteInputs in;
  in.detectors = c.eval.detectors;
  in.test = load_corpus_jsonl(paths.corpus_test);
  in.rewrites = load_rewrites_jsonl(paths.rewrites_test);
  for (std::size_t i = 0; i < paths.attacked.size(); ++i) {
    const auto& [kind, corpus_path] = paths.attacked[i];
    const auto& rewrites_path = paths.attacked_rewrites[i].second;
    detail::require_artifact(corpus_path, "attack");
    detail::require_artifact(rewrites_path, "attack");
    AttackedCorpus a;
    a.tag = kind;
    a.corpus = load_corpus_jsonl(corpus_path);
    a.rewrites = load_rewrites_jsonl(rewrites_path);
    in.attacked.push_back(std::move(a));
  }
  in.ctx = ScoringContext{&trained, &init, &w.vocab};
  in.histogram_bins = c.eval.histogram_bins;
  in.jobs = c.jobs;

  SuiteOutput out = evaluate_suite(in);
  out.report.seed = c.seed;
  out.report.config_fingerprint = fp_eval(c);
  out.report.train_corpus_hash = detail::file_exists(paths.corpus_train)
                                     ? to_hex(corpus_hash(load_corpus_jsonl(paths.corpus_train)))
                                     : "absent";
  out.report.test_corpus_hash = to_hex(corpus_hash(in.test));
  out.report.initial_checkpoint_hash = to_hex(detail::file_fnv(paths.checkpoint_init));
  out.report.trained_checkpoint_hash = to_hex(detail::file_fnv(paths.checkpoint_trained));

  save_report_json(paths.report, out.report);
  save_auc_tsv(paths.auc_table, out.report);
  save_gains_tsv(paths.gains_table, out.report);
  if (!out.histogram.empty()) save_histogram_tsv(paths.histogram, out.histogram);
  std::cout << "[eval] " << out.report.proposal << " AUC "
            << fmt_double(out.report.proposal_auc) << " vs best baseline "
            << out.report.best_baseline << " AUC " << fmt_double(out.report.best_baseline_auc)
            << " " << paths.report << "\n";
  return out.report;
}

// ---------------------------------------------------------------------------
// pipeline: gen -> rewrite -> train -> attack -> detect -> eval.
// ---------------------------------------------------------------------------

inline Report cmd_pipeline(const RunConfig& c, const RewriteTransport& transport = {}) {
  struct Stage {
    const char* name;
    std::function<void()> run;
  };
  Report report;
  const std::vector<Stage> stages = {
      {"gen", [&] { cmd_gen(c); }},
      {"rewrite", [&] { cmd_rewrite(c, transport); }},
      {"train", [&] { cmd_train(c); }},
      {"attack", [&] { cmd_attack(c, transport); }},
      {"detect", [&] { cmd_detect(c); }},
      {"eval", [&] { report = cmd_eval(c); }},
  };
  for (const auto& stage : stages) {
    try {
      stage.run();
    } catch (const Error&) {
      std::cerr << "[pipeline] stage '" << stage.name << "' failed; partial artifacts kept in "
                << c.out_dir << "\n";
      throw;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// geometry: run the verification suite, write the report, fail on violated
// assertions (report is written first).
// ---------------------------------------------------------------------------

struct GeometryReport {
  Prop1Result prop1;
  Prop1Result prop1_equality;  // p supported on M
  Prop2Result prop2;
  Prop3Result prop3;
  TubeResult tube;
  double tube_expected = 0.0;
  bool tube_passed = false;
  bool all_passed = false;
};

inline nlohmann::ordered_json geometry_report_to_json(const GeometryReport& g) {
  nlohmann::ordered_json j;
  j["prop1"] = {{"mean_human_err", g.prop1.mean_human_err},
                {"mean_machine_err", g.prop1.mean_machine_err},
                {"margin", g.prop1.margin},
                {"pooled_se", g.prop1.pooled_se},
                {"passed", g.prop1.passed}};
  j["prop1_equality"] = {{"margin", g.prop1_equality.margin},
                         {"pooled_se", g.prop1_equality.pooled_se},
                         {"passed", g.prop1_equality.passed}};
  j["prop2"] = {{"gap", g.prop2.gap},
                {"lower_bound", g.prop2.lower_bound},
                {"slack", g.prop2.slack},
                {"se", g.prop2.se},
                {"passed", g.prop2.passed}};
  j["prop3"] = {{"gap_opt", g.prop3.gap_opt},
                {"gap_euclid", g.prop3.gap_euclid},
                {"m_cap", g.prop3.m_cap},
                {"passed", g.prop3.passed}};
  j["tube"] = {{"epsilon", g.tube.eps},
               {"fraction", g.tube.fractions},
               {"fitted_exponent", g.tube.fitted_exponent},
               {"expected_exponent", g.tube_expected},
               {"passed", g.tube_passed}};
  j["all_passed"] = g.all_passed;
  return j;
}

inline GeometryReport cmd_geometry(const RunConfig& c) {
  detail::ensure_out_dir(c.out_dir);
  const ArtifactPaths paths = artifact_paths(c);
  const GeometrySection& g = c.geometry;
  GeometryReport rep;

  GeometryWorld world =
      make_random_world(g.n, g.d_m, g.noise_radius, g.seed, g.shift_scale);
  rep.prop1 = verify_prop1(world, g.n_samples);
  GeometryWorld eq = make_supported_world(g.n, g.d_m, g.noise_radius,
                                          mix_seed(g.seed, fnv1a64("equality")));
  rep.prop1_equality = verify_prop1(eq, g.n_samples);
  rep.prop1_equality.passed = std::abs(rep.prop1_equality.margin) < 3.0 * rep.prop1_equality.pooled_se;
  rep.prop2 = verify_prop2(world, g.n_samples);
  rep.prop3 = verify_prop3(world, g.m_cap, g.n_samples);

  GeometryWorld tube_world = make_random_world(g.tube_n, g.tube_d_m, 0.0,
                                               mix_seed(g.seed, fnv1a64("tube-world")));
  // The tube exponent argument needs a standard Gaussian off-manifold law.
  tube_world.human_mean.setZero();
  tube_world.human_factor.setIdentity();
  rep.tube = tube_fraction(tube_world, g.tube_eps, g.tube_samples);
  rep.tube_expected = static_cast<double>(g.tube_n - g.tube_d_m);
  rep.tube_passed = std::abs(rep.tube.fitted_exponent - rep.tube_expected) <= g.tube_tolerance;
  rep.all_passed = rep.prop1.passed && rep.prop1_equality.passed && rep.prop2.passed &&
                   rep.prop3.passed && rep.tube_passed;

  save_fractions_tsv(paths.fractions, rep.tube);
  std::ofstream out(paths.geometry_report);
  if (!out) throw IoError("cannot open for writing: " + paths.geometry_report);
  out << geometry_report_to_json(rep).dump(2) << '\n';
  out.close();

  auto line = [](const char* name, bool ok, const std::string& detail) {
    std::cout << "[geometry] " << name << ": " << (ok ? "pass" : "FAIL") << " (" << detail
              << ")\n";
  };
  line("separation (claim 1)", rep.prop1.passed,
       "margin " + fmt_double(rep.prop1.margin) + ", 3se " +
           fmt_double(3.0 * rep.prop1.pooled_se));
  line("equality case", rep.prop1_equality.passed,
       "margin " + fmt_double(rep.prop1_equality.margin) + ", 3se " +
           fmt_double(3.0 * rep.prop1_equality.pooled_se));
  line("prompted gap (claim 2)", rep.prop2.passed,
       "gap " + fmt_double(rep.prop2.gap) + ", bound " + fmt_double(rep.prop2.lower_bound));
  line("optimal distance (claim 3)", rep.prop3.passed,
       "gap " + fmt_double(rep.prop3.gap_opt) + " vs euclid " + fmt_double(rep.prop3.gap_euclid));
  line("tube exponent", rep.tube_passed,
       "fitted " + fmt_double(rep.tube.fitted_exponent) + ", expected " +
           fmt_double(rep.tube_expected));
  if (!rep.all_passed)
    throw CheckFailure("geometry verification failed; see " + paths.geometry_report);
  return rep;
}

}  // namespace redetect
