// Gap-objective training: analytic adapter gradients vs finite differences,
// the subgradient convention at ties, optimizer stepping, validation-based
// model selection, checkpointing, and history persistence.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "redetect/train.hpp"

using namespace redetect;

namespace {

std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "redetect_train_tests" / name;
  std::filesystem::create_directories(dir);
  return dir.string();
}

ScorerParams random_params(int v, int rank, std::uint64_t seed, std::uint64_t vocab_hash = 42) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ScorerParams p;
  p.vocab_size = v;
  p.rank = rank;
  p.alpha = 32.0;
  p.vocab_hash = vocab_hash;
  p.tag = "test";
  p.base_logits.resize(v, v);
  p.adapter_a.resize(v, rank);
  p.adapter_b.resize(rank, v);
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < v; ++j) p.base_logits(i, j) = gauss(rng);
  for (int i = 0; i < v; ++i)
    for (int r = 0; r < rank; ++r) p.adapter_a(i, r) = 0.3 * gauss(rng);
  for (int r = 0; r < rank; ++r)
    for (int j = 0; j < v; ++j) p.adapter_b(r, j) = 0.3 * gauss(rng);
  return p;
}

TokenSeq random_seq(int v, int len, std::mt19937_64& rng, std::uint64_t vocab_hash = 42) {
  std::uniform_int_distribution<int> tok(Vocab::kReserved, v - 1);
  TokenSeq s;
  s.vocab_hash = vocab_hash;
  s.ids.push_back(Vocab::kBos);
  for (int i = 0; i < len; ++i) s.ids.push_back(tok(rng));
  return s;
}

PairList random_pairs(int v, int count, int k, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::uniform_int_distribution<int> len(8, 15);
  PairList out;
  for (int i = 0; i < count; ++i) {
    RewritePair pair;
    pair.parent = random_seq(v, len(rng), rng);
    for (int j = 0; j < k; ++j) pair.rewrites.push_back(random_seq(v, len(rng), rng));
    out.push_back(std::move(pair));
  }
  return out;
}

// Smallest |parent_avg - rewrite_avg| across all pairs: the audit must stay
// away from the kinks of the absolute value.
double min_abs_margin(const ScorerParams& p, const PairList& human, const PairList& machine) {
  ScorerEval eval(p);
  double lo = std::numeric_limits<double>::infinity();
  for (const PairList* side : {&human, &machine})
    for (const auto& pair : *side) {
      const double pa = eval.avg_log_prob(pair.parent);
      for (const auto& r : pair.rewrites)
        lo = std::min(lo, std::abs(pa - eval.avg_log_prob(r)));
    }
  return lo;
}

// Small trainable setup: synthetic corpus, cached rewrites, independent-chain
// base scorer with a freshly seeded adapter.
struct TrainFixture {
  SynthWorldConfig world;
  Corpus corpus;
  TrainData data;
  ScorerParams init;

  explicit TrainFixture(std::uint64_t seed, int n_per_label = 30) {
    world = make_default_world(16, seed);
    world.len_min = 20;
    world.len_max = 40;
    corpus = synth_generate(world, n_per_label, n_per_label);
    MarkovChain machine = sharpen(world.human_chain, world.machine_temperature);
    RewriterConfig rw;
    rw.k = 2;
    rw.seed = seed;
    auto sets = rewrite_corpus(rw, corpus, &machine, &world.vocab, {}, 2);
    std::map<std::string, RewriteSet> cache;
    for (auto& s : sets) cache[s.parent_id] = s;
    data.human = make_pairs(corpus, cache, world.vocab, Label::human);
    data.machine = make_pairs(corpus, cache, world.vocab, Label::machine);

    MarkovChain independent = make_random_chain(world.vocab.content_size(),
                                                mix_seed(seed, fnv1a64("surrogate")), 0.4, 0.03);
    init = ScorerParams::from_chain(independent, world.vocab, 8, 32.0, 0.3);
    init.reset_adapter(mix_seed(seed, fnv1a64("adapter-init")));
  }
};

}  // namespace

TEST_CASE("adapter gradient of the gap objective matches finite differences") {
  const int v = 8;
  ScorerParams p = random_params(v, 3, 31);
  PairList human = random_pairs(v, 3, 2, 32);
  PairList machine = random_pairs(v, 3, 2, 33);
  REQUIRE(min_abs_margin(p, human, machine) > 1e-3);

  AdapterGrad g = grad_gap_objective(p, human, machine);
  const double h = 1e-5;
  double max_err = 0.0, scale = 0.0;
  auto probe = [&](Eigen::MatrixXd& param, const Eigen::MatrixXd& grad) {
    for (int i = 0; i < param.rows(); ++i)
      for (int j = 0; j < param.cols(); ++j) {
        const double keep = param(i, j);
        param(i, j) = keep + h;
        const double up = gap_objective(p, human, machine);
        param(i, j) = keep - h;
        const double dn = gap_objective(p, human, machine);
        param(i, j) = keep;
        const double fd = (up - dn) / (2.0 * h);
        max_err = std::max(max_err, std::abs(fd - grad(i, j)));
        scale = std::max(scale, std::abs(fd));
      }
  };
  probe(p.adapter_a, g.a);
  probe(p.adapter_b, g.b);
  REQUIRE(scale > 0.0);
  CHECK(max_err / scale < 1e-4);

  // The gradient is an ascent direction.
  const double before = gap_objective(p, human, machine);
  p.adapter_a += 1e-4 * g.a;
  p.adapter_b += 1e-4 * g.b;
  CHECK(gap_objective(p, human, machine) > before);
}

TEST_CASE("ties contribute zero subgradient") {
  const int v = 8;
  ScorerParams p = random_params(v, 3, 34);
  auto rng = make_rng(35);
  PairList human, machine;
  for (int i = 0; i < 2; ++i) {
    RewritePair pair;
    pair.parent = random_seq(v, 10, rng);
    pair.rewrites = {pair.parent, pair.parent};  // u = 0 everywhere
    human.push_back(pair);
    machine.push_back(pair);
  }
  CHECK(gap_objective(p, human, machine) == 0.0);
  AdapterGrad g = grad_gap_objective(p, human, machine);
  CHECK(g.a.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a uniform scorer has zero gap objective") {
  ScorerParams u = ScorerParams::uniform(8, 2, 32.0, 42);
  PairList human = random_pairs(8, 3, 2, 36);
  PairList machine = random_pairs(8, 3, 2, 37);
  CHECK(gap_objective(u, human, machine) == Catch::Approx(0.0).margin(1e-12));
  CHECK_THROWS_AS(gap_objective(u, {}, machine), ValidationError);
  CHECK_THROWS_AS(gap_objective(u, human, {}), ValidationError);
}

TEST_CASE("pair_error is the mean learned distance to the rewrites") {
  ScorerParams p = random_params(8, 3, 38);
  ScorerEval eval(p);
  PairList pairs = random_pairs(8, 1, 3, 39);
  const auto& pr = pairs[0];
  double expect = 0.0;
  for (const auto& r : pr.rewrites)
    expect += std::abs(eval.avg_log_prob(pr.parent) - eval.avg_log_prob(r)) / 3.0;
  CHECK(pair_error(eval, pr) == Catch::Approx(expect).margin(1e-15));
  RewritePair empty;
  empty.parent = pr.parent;
  CHECK_THROWS_AS(pair_error(eval, empty), ValidationError);
}

TEST_CASE("make_pairs joins docs with cached rewrites by label") {
  TrainFixture fx(41, 4);
  CHECK(fx.data.human.size() == 4);
  CHECK(fx.data.machine.size() == 4);
  CHECK(fx.data.human[0].rewrites.size() == 2);
  CHECK_FALSE(fx.data.has_validation());

  std::map<std::string, RewriteSet> empty_cache;
  CHECK_THROWS_WITH(make_pairs(fx.corpus, empty_cache, fx.world.vocab, Label::human),
                    Catch::Matchers::ContainsSubstring("no rewrites cached"));
  std::map<std::string, RewriteSet> bad_cache;
  for (const auto& d : fx.corpus) bad_cache[d.id] = RewriteSet{d.id, {}, "synthetic", 0,
                                                               PromptType::rewrite};
  CHECK_THROWS_WITH(make_pairs(fx.corpus, bad_cache, fx.world.vocab, Label::machine),
                    Catch::Matchers::ContainsSubstring("empty rewrite set"));
}

TEST_CASE("zero learning rate leaves the adapter untouched") {
  TrainFixture fx(43, 6);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  TrainResult r = train_distance(fx.init, fx.data, cfg);
  CHECK((r.params.adapter_a - fx.init.adapter_a).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.params.adapter_b - fx.init.adapter_b).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(r.history.objective.size() == 1);
  CHECK(r.history.objective[0] ==
        Catch::Approx(gap_objective(fx.init, fx.data.human, fx.data.machine)).margin(1e-12));
  CHECK(r.history.objective[0] ==
        Catch::Approx(r.history.mean_human_err[0] - r.history.mean_machine_err[0]).margin(1e-12));
  CHECK(r.history.wall_seconds > 0.0);
}

TEST_CASE("training refuses an exactly-zero adapter") {
  TrainFixture fx(44, 4);
  ScorerParams zeroed = fx.init;
  zeroed.zero_adapter();
  TrainConfig cfg;
  CHECK_THROWS_WITH(train_distance(zeroed, fx.data, cfg),
                    Catch::Matchers::ContainsSubstring("reset_adapter"));
  CHECK_THROWS_AS(train_distance(fx.init, TrainData{}, cfg), ValidationError);
}

TEST_CASE("gradient ascent widens the human-machine gap") {
  TrainFixture fx(45);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.seed = 45;
  TrainResult r = train_distance(fx.init, fx.data, cfg);
  REQUIRE(r.history.objective.size() == 4);
  const double j0 = gap_objective(fx.init, fx.data.human, fx.data.machine);
  const double j1 = gap_objective(r.params, fx.data.human, fx.data.machine);
  CHECK(j1 > j0);
  CHECK(r.history.objective.back() == Catch::Approx(j1).margin(1e-12));

  // Same seed, same data: the run is reproducible.
  TrainResult again = train_distance(fx.init, fx.data, cfg);
  CHECK((again.params.adapter_a - r.params.adapter_a).cwiseAbs().maxCoeff() == 0.0);
  CHECK(again.history.objective == r.history.objective);

  // SGD also trains.
  TrainConfig sgd = cfg;
  sgd.optimizer = TrainConfig::Optimizer::sgd;
  sgd.learning_rate = 0.5;
  TrainResult rs = train_distance(fx.init, fx.data, sgd);
  CHECK(gap_objective(rs.params, fx.data.human, fx.data.machine) > j0);
}

TEST_CASE("an exploding step aborts with a training error") {
  TrainFixture fx(46, 8);
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.epochs = 1;
  // Two steps: the first inflates only factor B (A has zero gradient while
  // B = 0), the second inflates A, overflowing the product to non-finite.
  cfg.batch_size = 4;
  CHECK_THROWS_AS(train_distance(fx.init, fx.data, cfg), TrainingAborted);
}

TEST_CASE("validation picks the epoch with the best held-out gap") {
  TrainFixture fx(47);
  // Carve a held-out quarter off each side.
  TrainData with_val = fx.data;
  auto carve = [](PairList& list, PairList& val) {
    const std::size_t keep = list.size() * 3 / 4;
    val.assign(list.begin() + static_cast<std::ptrdiff_t>(keep), list.end());
    list.resize(keep);
  };
  carve(with_val.human, with_val.val_human);
  carve(with_val.machine, with_val.val_machine);
  REQUIRE(with_val.has_validation());
  TrainData no_val = with_val;
  no_val.val_human.clear();
  no_val.val_machine.clear();

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.seed = 47;
  TrainResult rv = train_distance(fx.init, with_val, cfg);
  TrainResult rn = train_distance(fx.init, no_val, cfg);
  // Validation must not perturb the trajectory itself...
  CHECK(rv.history.objective == rn.history.objective);
  // ...and the selected snapshot is at least as good on held-out data as the
  // final epoch (which is one of the candidates).
  const double val_selected = gap_objective(rv.params, with_val.val_human, with_val.val_machine);
  const double val_final = gap_objective(rn.params, with_val.val_human, with_val.val_machine);
  CHECK(val_selected >= val_final - 1e-12);
}

TEST_CASE("periodic checkpoints land in the configured directory") {
  TrainFixture fx(48, 6);
  const std::string dir = temp_dir("ckpts");
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir;
  train_distance(fx.init, fx.data, cfg);
  CHECK(std::filesystem::exists(dir + "/checkpoint_epoch_0002.json"));
  CHECK(std::filesystem::exists(dir + "/checkpoint_epoch_0004.json"));
  CHECK_FALSE(std::filesystem::exists(dir + "/checkpoint_epoch_0001.json"));
  ScorerParams mid = load_checkpoint(dir + "/checkpoint_epoch_0002.json");
  CHECK(mid.vocab_hash == fx.init.vocab_hash);

  TrainConfig bad;
  bad.checkpoint_every = 2;  // no directory
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train config validation rejects bad values") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.checkpoint_every = -1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("history TSV round-trips through text") {
  TrainHistory h;
  h.objective = {0.1, 0.25};
  h.mean_human_err = {0.5, 0.625};
  h.mean_machine_err = {0.4, 0.375};
  const std::string path = temp_dir("hist") + "/history.tsv";
  save_history_tsv(path, h);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch\tobjective\tmean_human_err\tmean_machine_err");
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int epoch = 0;
    std::string obj, he, me;
    ss >> epoch >> obj >> he >> me;
    REQUIRE(rows < 2);
    CHECK(epoch == rows + 1);
    CHECK(std::stod(obj) == h.objective[static_cast<std::size_t>(rows)]);
    CHECK(std::stod(he) == h.mean_human_err[static_cast<std::size_t>(rows)]);
    CHECK(std::stod(me) == h.mean_machine_err[static_cast<std::size_t>(rows)]);
    ++rows;
  }
  CHECK(rows == 2);
  CHECK_THROWS_AS(save_history_tsv("/nonexistent-dir/x.tsv", h), IoError);
}
