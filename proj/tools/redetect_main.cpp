// Command-line entry point: config file + --section.key=value overrides,
// one subcommand per pipeline stage.
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime failure,
// 3 failed verification assertion.

#include <cstdint>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "redetect/pipeline.hpp"
#include "redetect/rewrite_http.hpp"

namespace {

std::pair<std::string, std::string> parse_override(const std::string& arg) {
  if (arg.rfind("--", 0) != 0)
    throw redetect::ConfigError("unexpected argument '" + arg +
                                "' (overrides look like --section.key=value)");
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq <= 2)
    throw redetect::ConfigError("override '" + arg + "' must look like --section.key=value");
  return {arg.substr(2, eq - 2), arg.substr(eq + 1)};
}

int run(const std::string& command, const redetect::RunConfig& cfg) {
  using namespace redetect;
  RewriteTransport transport;
  if (cfg.rewriter.kind == RewriterConfig::Kind::http) transport = http_transport();
  if (command == "gen")
    cmd_gen(cfg);
  else if (command == "rewrite")
    cmd_rewrite(cfg, transport);
  else if (command == "train")
    cmd_train(cfg);
  else if (command == "detect")
    cmd_detect(cfg);
  else if (command == "attack")
    cmd_attack(cfg, transport);
  else if (command == "eval")
    cmd_eval(cfg);
  else if (command == "pipeline")
    cmd_pipeline(cfg, transport);
  else if (command == "geometry")
    cmd_geometry(cfg);
  else
    throw ConfigError("unknown command '" + command + "'");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rewrite-reconstruction detection toolkit"};
  app.fallthrough(true);
  app.allow_extras(true);
  app.require_subcommand(0, 1);

  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON config file (defaults apply when omitted)");
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "global seed (propagates to every stage)");
  std::string out_dir;
  auto* out_opt = app.add_option("--out-dir", out_dir, "artifact directory");
  int jobs = 0;
  auto* jobs_opt = app.add_option("--jobs", jobs, "worker thread bound");
  std::vector<std::string> attack_kinds;
  auto* attack_opt =
      app.add_option("--attack", attack_kinds, "attack kind(s): decoherence, rephrase");
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print the resolved config and exit");

  const char* commands[][2] = {
      {"gen", "generate the synthetic train/test corpora"},
      {"rewrite", "produce the K-rewrite cache for both corpora"},
      {"train", "fit the adapter of the learned distance on the train split"},
      {"detect", "score the test corpus with every configured detector"},
      {"attack", "perturb machine test docs and rewrite the attacked corpora"},
      {"eval", "assemble AUC/gain/ratio report from artifacts"},
      {"pipeline", "run gen, rewrite, train, attack, detect, eval in order"},
      {"geometry", "run the geometric verification suite"},
  };
  for (const auto& c : commands) app.add_subcommand(c[0], c[1])->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& extra : app.remaining(true)) overrides.push_back(parse_override(extra));
    if (seed_opt->count()) overrides.emplace_back("seed", std::to_string(seed));
    if (out_opt->count()) overrides.emplace_back("out_dir", out_dir);
    if (jobs_opt->count()) overrides.emplace_back("jobs", std::to_string(jobs));
    if (attack_opt->count()) {
      redetect::Json kinds = redetect::Json::array();
      for (const auto& k : attack_kinds) kinds.push_back(k);
      overrides.emplace_back("attack.kinds", kinds.dump());
    }
    const redetect::RunConfig cfg = redetect::load_run_config(config_path, overrides);
    if (print_config) {
      std::cout << redetect::config_to_json(cfg).dump(2) << "\n";
      return 0;
    }
    const auto subs = app.get_subcommands();
    if (subs.empty()) {
      std::cerr << app.help() << "\n";
      return 1;
    }
    return run(subs.front()->get_name(), cfg);
  } catch (const redetect::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const redetect::CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return 3;
  } catch (const redetect::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
