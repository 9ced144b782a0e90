// Rewriters and attacks: the seeded synthetic rewriter, the HTTP client against
// a local mock endpoint, the rewrite cache format, and the two attacks.

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <thread>

#include "redetect/attack.hpp"
#include "redetect/distance.hpp"
#include "redetect/rewrite.hpp"
#include "redetect/rewrite_http.hpp"

using namespace redetect;

namespace {

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "redetect_rewrite_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// Deterministic two-token chain: start -> a, a -> b, b -> a.
MarkovChain flip_flop_chain() {
  MarkovChain c;
  c.content_size = 2;
  c.rows = {{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}};
  c.validate();
  return c;
}

TokenSeq seq_of(std::vector<int> ids, std::uint64_t vocab_hash = 42) {
  TokenSeq s;
  s.ids = std::move(ids);
  s.vocab_hash = vocab_hash;
  return s;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> numbered_words(int n, const std::string& prefix) {
  std::vector<std::string> w;
  for (int i = 1; i <= n; ++i) w.push_back(prefix + std::to_string(i));
  return w;
}

std::multiset<std::string> word_multiset(const std::string& text) {
  auto words = split_whitespace(text);
  return {words.begin(), words.end()};
}

// Local chat-completions mock. handler(body_json, request_count) -> (status, response_body).
class MockEndpoint {
 public:
  using Handler = std::function<std::pair<int, std::string>(const nlohmann::json&, int)>;

  explicit MockEndpoint(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      last_body = nlohmann::json::parse(req.body);
      last_auth = req.get_header_value("Authorization");
      auto [status, body] = handler_(last_body, ++count_);
      res.status = status;
      res.set_content(body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int requests() const { return count_; }

  nlohmann::json last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  Handler handler_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> count_{0};
};

std::string completion_json(const std::string& content) {
  nlohmann::json message;
  message["role"] = "assistant";
  message["content"] = content;
  nlohmann::json choice;
  choice["message"] = message;
  nlohmann::json j;
  j["choices"] = nlohmann::json::array({choice});
  return j.dump();
}

RewriterConfig http_config(const std::string& url) {
  RewriterConfig cfg;
  cfg.kind = RewriterConfig::Kind::http;
  cfg.endpoint_url = url;
  cfg.model_name = "mock-model";
  cfg.temperature = 0.8;
  cfg.max_retries = 3;
  cfg.timeout_seconds = 5.0;
  cfg.k = 2;
  return cfg;
}

}  // namespace

TEST_CASE("system prompts match the published wording") {
  CHECK(std::string(kRewriteSystemPrompt) ==
        "You are a professional rewriting expert and you can rewrite the context without missing "
        "the original details. Please keep the length of the rewritten text similar to the "
        "original text. Original text:");
  CHECK(std::string(kPolishSystemPrompt) ==
        "You are a professional polishing expert and you can help polish this paragraph.");
  CHECK(std::string(kExpandSystemPrompt) ==
        "You are a professional writing expert and you can help expand this paragraph.");

  RewriterConfig cfg;
  cfg.prompt_preset = PromptType::polish;
  CHECK(system_prompt_for(cfg) == kPolishSystemPrompt);
  cfg.strict_output = true;
  CHECK(system_prompt_for(cfg) == std::string(kPolishSystemPrompt) + " " + kStrictOutputSuffix);
}

TEST_CASE("generation ceiling is 1.2x the parent word count, rounded up") {
  CHECK(max_tokens_for("a b c d e") == 6);
  CHECK(max_tokens_for(join_words(numbered_words(10, "w"))) == 12);
  CHECK(max_tokens_for("one") == 2);
}

TEST_CASE("synthetic rewrite keeps or resamples each position") {
  MarkovChain chain = flip_flop_chain();
  TokenSeq parent = seq_of({Vocab::kBos, 4, 4, 3, 4, 3});

  int kept = -1;
  TokenSeq keep_all = synthetic_rewrite(chain, parent, 1.0, 9, &kept);
  CHECK(keep_all.ids == parent.ids);
  CHECK(kept == 5);

  TokenSeq none = synthetic_rewrite(chain, parent, 0.0, 9, &kept);
  CHECK(kept == 0);
  // Fully resampled output walks the deterministic chain from its start row.
  CHECK(none.ids == std::vector<int>{Vocab::kBos, 3, 4, 3, 4, 3});

  TokenSeq mid = synthetic_rewrite(chain, parent, 0.5, 9);
  CHECK(mid.ids.size() == parent.ids.size());
  CHECK(mid.vocab_hash == parent.vocab_hash);
  CHECK(synthetic_rewrite(chain, parent, 0.5, 9).ids == mid.ids);

  CHECK_THROWS_AS(synthetic_rewrite(chain, parent, 1.5, 9), ValidationError);
  CHECK_THROWS_AS(synthetic_rewrite(chain, seq_of({Vocab::kBos}), 0.5, 9), EmptyInputError);
}

TEST_CASE("retention frequency tracks the configured fraction") {
  MarkovChain chain = make_random_chain(12, 5, 0.4, 0.0);
  auto rng = make_rng(77);
  std::uniform_int_distribution<int> tok(Vocab::kReserved, 14);
  TokenSeq parent;
  parent.vocab_hash = 42;
  parent.ids.push_back(Vocab::kBos);
  for (int i = 0; i < 400; ++i) parent.ids.push_back(tok(rng));

  const double rho = 0.7;
  int total_kept = 0;
  const int reps = 5;
  for (int r = 0; r < reps; ++r) {
    int kept = 0;
    synthetic_rewrite(chain, parent, rho, 1000 + static_cast<std::uint64_t>(r), &kept);
    total_kept += kept;
  }
  const double n = 400.0 * reps;
  const double z = (total_kept - rho * n) / std::sqrt(n * rho * (1.0 - rho));
  CHECK(std::abs(z) < 3.0);
}

TEST_CASE("machine parents sit closer to their reconstructions than human parents") {
  // High retention, machine-chain resampling: reconstructions of machine text
  // barely move, reconstructions of human text drift. Checked on 500 documents
  // for both the learned distance (independent-chain scorer) and edit distance.
  SynthWorldConfig w = make_default_world(32, 7);
  Corpus corpus = synth_generate(w, 250, 250);
  MarkovChain machine = sharpen(w.human_chain, w.machine_temperature);
  MarkovChain independent =
      make_random_chain(w.vocab.content_size(), mix_seed(7, fnv1a64("surrogate")), 0.4, 0.03);

  RewriterConfig rw;
  rw.k = 4;
  rw.retain_fraction = 0.95;
  rw.seed = 7;
  auto sets = rewrite_corpus(rw, corpus, &machine, &w.vocab, {}, 2);

  TextDistance learned =
      TextDistance::learned(ScorerParams::from_chain(independent, w.vocab, 8, 32.0, 0.3));
  TextDistance edit = TextDistance::fixed_edit();
  double lh = 0, lm = 0, eh = 0, em = 0;
  int nh = 0, nm = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const double le = reconstruction_error(learned, corpus[i], sets[i], w.vocab);
    const double ee = reconstruction_error(edit, corpus[i], sets[i], w.vocab);
    if (corpus[i].label == Label::human) {
      lh += le;
      eh += ee;
      ++nh;
    } else {
      lm += le;
      em += ee;
      ++nm;
    }
  }
  REQUIRE(nh == 250);
  REQUIRE(nm == 250);
  CHECK(lm / nm < lh / nh);
  CHECK(em / nm < eh / nh);
}

TEST_CASE("rewrite_k returns K reconstructions with metadata") {
  SynthWorldConfig w = make_default_world(16, 3);
  w.len_min = 20;
  w.len_max = 30;
  Corpus corpus = synth_generate(w, 1, 1);
  MarkovChain machine = sharpen(w.human_chain, w.machine_temperature);

  RewriterConfig cfg;
  cfg.k = 3;
  cfg.retain_fraction = 0.7;
  cfg.seed = 5;
  cfg.rewriter_tag = "synthetic";
  RewriteSet set = rewrite_k(cfg, corpus[0], &machine, &w.vocab);
  CHECK(set.parent_id == corpus[0].id);
  CHECK(set.rewrites.size() == 3);
  CHECK(set.rewriter_tag == "synthetic");
  CHECK(set.seed == 5);
  CHECK(set.prompt_type == PromptType::rewrite);
  // Same parent length, and the K draws are distinct with overwhelming odds.
  for (const auto& r : set.rewrites)
    CHECK(split_whitespace(r).size() == split_whitespace(corpus[0].text).size());
  CHECK(set.rewrites[0] != set.rewrites[1]);

  CHECK_THROWS_AS(rewrite_k(cfg, corpus[0], nullptr, &w.vocab), ValidationError);
  CHECK_THROWS_AS(rewrite_k(cfg, corpus[0], &machine, nullptr), ValidationError);
  RewriterConfig bad = cfg;
  bad.k = 0;
  CHECK_THROWS_AS(rewrite_k(bad, corpus[0], &machine, &w.vocab), ValidationError);

  RewriterConfig http = cfg;
  http.kind = RewriterConfig::Kind::http;
  http.endpoint_url = "http://unused:1/v1";
  CHECK_THROWS_WITH(rewrite_k(http, corpus[0], &machine, &w.vocab),
                    Catch::Matchers::ContainsSubstring("http_transport"));
}

TEST_CASE("corpus rewriting is order- and jobs-invariant") {
  SynthWorldConfig w = make_default_world(16, 4);
  w.len_min = 15;
  w.len_max = 25;
  Corpus corpus = synth_generate(w, 3, 3);
  MarkovChain machine = sharpen(w.human_chain, w.machine_temperature);
  RewriterConfig cfg;
  cfg.k = 2;
  cfg.seed = 9;

  auto one = rewrite_corpus(cfg, corpus, &machine, &w.vocab, {}, 1);
  auto many = rewrite_corpus(cfg, corpus, &machine, &w.vocab, {}, 4);
  REQUIRE(one.size() == corpus.size());
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i].rewrites == many[i].rewrites);

  Corpus reversed(corpus.rbegin(), corpus.rend());
  auto rev = rewrite_corpus(cfg, reversed, &machine, &w.vocab, {}, 1);
  for (std::size_t i = 0; i < rev.size(); ++i)
    CHECK(rev[i].rewrites == one[one.size() - 1 - i].rewrites);
}

TEST_CASE("rewrite cache round-trips and rejects broken indexing") {
  RewriteSet a{"h000001", {"alpha text", "beta text"}, "synthetic", 5, PromptType::rewrite};
  RewriteSet b{"m000001", {"gamma text", "delta text"}, "synthetic", 5, PromptType::polish};
  const std::string path = temp_path("rewrites.jsonl");
  save_rewrites_jsonl(path, {a, b});

  auto loaded = load_rewrites_jsonl(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("h000001").rewrites == a.rewrites);
  CHECK(loaded.at("m000001").rewrites == b.rewrites);
  CHECK(loaded.at("h000001").rewriter_tag == "synthetic");
  CHECK(loaded.at("m000001").prompt_type == PromptType::polish);

  auto write_lines = [&](const std::string& file, const std::vector<int>& indices) {
    std::ofstream out(file);
    for (int idx : indices) {
      nlohmann::json j;
      j["id"] = "p#r" + std::to_string(idx);
      j["text"] = "t";
      j["label"] = "machine";
      j["source"] = "synthetic";
      j["prompt_type"] = "rewrite";
      j["parent_id"] = "p";
      j["rewrite_index"] = idx;
      out << j.dump() << '\n';
    }
  };
  write_lines(temp_path("gap.jsonl"), {0, 2});
  CHECK_THROWS_WITH(load_rewrites_jsonl(temp_path("gap.jsonl")),
                    Catch::Matchers::ContainsSubstring("non-contiguous"));
  write_lines(temp_path("dup.jsonl"), {0, 0});
  CHECK_THROWS_WITH(load_rewrites_jsonl(temp_path("dup.jsonl")),
                    Catch::Matchers::ContainsSubstring("duplicate"));
  CHECK_THROWS_AS(load_rewrites_jsonl(temp_path("missing.jsonl")), IoError);

  std::ofstream bad(temp_path("badline.jsonl"));
  bad << "not json\n";
  bad.close();
  CHECK_THROWS_AS(load_rewrites_jsonl(temp_path("badline.jsonl")), ParseError);
}

TEST_CASE("http rewriting round-trips through a mock endpoint") {
  Document doc{"d1", "one two three four five", Label::machine, "alpha", PromptType::none};
  MockEndpoint mock([](const nlohmann::json& body, int) {
    return std::make_pair(200,
                          completion_json(body["messages"][1]["content"].get<std::string>()));
  });
  RewriterConfig cfg = http_config(mock.url());

  std::vector<HttpAttempt> log;
  std::string text = http_rewrite(cfg, doc, &log);
  CHECK(text == doc.text);  // echo mock returns the user content verbatim
  REQUIRE(log.size() == 1);
  CHECK(log[0].status == 200);

  // Wire shape: model, [system, user] messages, temperature, max_tokens.
  const auto& body = mock.last_body;
  CHECK(body.at("model") == "mock-model");
  REQUIRE(body.at("messages").size() == 2);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][0]["content"] == kRewriteSystemPrompt);
  CHECK(body["messages"][1]["role"] == "user");
  CHECK(body["messages"][1]["content"] == doc.text);
  CHECK(body.at("temperature").get<double>() == 0.8);
  CHECK(body.at("max_tokens").get<int>() == max_tokens_for(doc.text));
  CHECK(mock.last_auth.empty());
}

TEST_CASE("http rewriting retries failures up to max_retries") {
  Document doc{"d1", "some machine text here", Label::machine, "alpha", PromptType::none};

  SECTION("two 500s then success") {
    MockEndpoint mock([](const nlohmann::json&, int n) {
      if (n <= 2) return std::make_pair(500, std::string("{\"error\":\"busy\"}"));
      return std::make_pair(200, completion_json("recovered"));
    });
    std::vector<HttpAttempt> log;
    CHECK(http_rewrite(http_config(mock.url()), doc, &log) == "recovered");
    REQUIRE(log.size() == 3);
    CHECK(log[0].status == 500);
    CHECK(log[1].status == 500);
    CHECK(log[2].status == 200);
  }

  SECTION("persistent 500 exhausts the attempt budget") {
    MockEndpoint mock([](const nlohmann::json&, int) {
      return std::make_pair(500, std::string("{\"error\":\"down\"}"));
    });
    std::vector<HttpAttempt> log;
    CHECK_THROWS_AS(http_rewrite(http_config(mock.url()), doc, &log), EndpointError);
    CHECK(log.size() == 3);  // max_retries = total attempts
    CHECK(mock.requests() == 3);
  }

  SECTION("empty completion is a rewrite failure") {
    MockEndpoint mock(
        [](const nlohmann::json&, int) { return std::make_pair(200, completion_json("")); });
    CHECK_THROWS_AS(http_rewrite(http_config(mock.url()), doc), RewriteFailure);
  }

  SECTION("malformed and shape-violating responses are endpoint errors") {
    MockEndpoint mock(
        [](const nlohmann::json&, int) { return std::make_pair(200, std::string("not json")); });
    CHECK_THROWS_AS(http_rewrite(http_config(mock.url()), doc), EndpointError);
    MockEndpoint shape([](const nlohmann::json&, int) {
      return std::make_pair(200, std::string("{\"choices\": []}"));
    });
    CHECK_THROWS_AS(http_rewrite(http_config(shape.url()), doc), EndpointError);
  }
}

TEST_CASE("http auth comes from the configured environment variable") {
  Document doc{"d1", "text to rewrite now", Label::machine, "alpha", PromptType::none};
  MockEndpoint mock(
      [](const nlohmann::json&, int) { return std::make_pair(200, completion_json("ok")); });

  RewriterConfig cfg = http_config(mock.url());
  cfg.api_key_env_var = "REDETECT_TEST_MISSING_KEY";
  ::unsetenv("REDETECT_TEST_MISSING_KEY");
  CHECK_THROWS_AS(http_rewrite(cfg, doc), ConfigError);
  CHECK(mock.requests() == 0);  // refused before any request

  ::setenv("REDETECT_TEST_MISSING_KEY", "sk-secret", 1);
  CHECK(http_rewrite(cfg, doc) == "ok");
  CHECK(mock.last_auth == "Bearer sk-secret");
  ::unsetenv("REDETECT_TEST_MISSING_KEY");
}

TEST_CASE("endpoint urls split into client base and path prefix") {
  CHECK(detail::split_endpoint("http://host:8000/v1") ==
        std::make_pair(std::string("http://host:8000"), std::string("/v1")));
  CHECK(detail::split_endpoint("http://host:8000/v1/") ==
        std::make_pair(std::string("http://host:8000"), std::string("/v1")));
  CHECK(detail::split_endpoint("https://api.example.com") ==
        std::make_pair(std::string("https://api.example.com"), std::string("")));
  CHECK_THROWS_AS(detail::split_endpoint("api.example.com/v1"), ConfigError);
}

TEST_CASE("http rewriting via rewrite_k produces K ordered completions") {
  Document doc{"d1", "machine text for the endpoint", Label::machine, "alpha", PromptType::none};
  std::atomic<int> serial{0};
  MockEndpoint mock([&serial](const nlohmann::json&, int) {
    return std::make_pair(200, completion_json("rw-" + std::to_string(++serial)));
  });
  RewriterConfig cfg = http_config(mock.url());
  cfg.k = 3;
  RewriteSet set = rewrite_k(cfg, doc, nullptr, nullptr, http_transport());
  CHECK(set.rewrites.size() == 3);
  for (const auto& r : set.rewrites) CHECK(r.substr(0, 3) == "rw-");
  CHECK(mock.requests() == 3);
}

TEST_CASE("decoherence swaps one adjacent pair per long sentence") {
  AttackConfig cfg;
  cfg.seed = 11;
  cfg.min_sentence_words = 20;

  auto words21 = numbered_words(21, "w");
  Document doc{"m1", join_words(words21) + ".", Label::machine, "alpha", PromptType::none};
  Document hit = decoherence(doc, cfg);
  CHECK(hit.source == "alpha+decoherence");
  CHECK(hit.id == doc.id);
  CHECK(hit.text.back() == '.');

  auto out = split_whitespace(hit.text);
  REQUIRE(out.size() == words21.size());
  std::vector<std::size_t> diff;
  for (std::size_t i = 0; i < out.size(); ++i) {
    // the final word carries the reattached '.'
    std::string cleaned = out[i];
    if (!cleaned.empty() && cleaned.back() == '.') cleaned.pop_back();
    if (cleaned != words21[i]) diff.push_back(i);
  }
  REQUIRE(diff.size() == 2);
  CHECK(diff[1] == diff[0] + 1);
  CHECK(word_multiset(hit.text) == word_multiset(doc.text));
  CHECK(decoherence(doc, cfg).text == hit.text);  // deterministic
  AttackConfig other = cfg;
  other.seed = 12;
  CHECK(decoherence(doc, other).text != hit.text);

  // Exactly min_sentence_words is not strictly more: untouched.
  Document at_limit{"m2", join_words(numbered_words(20, "w")) + ".", Label::machine, "alpha",
                    PromptType::none};
  CHECK(decoherence(at_limit, cfg).text == at_limit.text);

  Document human{"h1", doc.text, Label::human, "alpha", PromptType::none};
  CHECK_THROWS_AS(decoherence(human, cfg), ValidationError);
  AttackConfig bad = cfg;
  bad.min_sentence_words = 1;
  CHECK_THROWS_AS(decoherence(doc, bad), ValidationError);
}

TEST_CASE("decoherence preserves short sentences and delimiters") {
  AttackConfig cfg;
  cfg.seed = 3;
  cfg.min_sentence_words = 20;
  const std::string long1 = join_words(numbered_words(25, "a"));
  const std::string short1 = "just a few words";
  const std::string frag = join_words(numbered_words(22, "b"));
  Document doc{"m1", long1 + "! " + short1 + "? " + frag, Label::machine, "alpha",
               PromptType::none};
  Document hit = decoherence(doc, cfg);

  auto chunks = detail::split_sentences(hit.text);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].delim == "!");
  CHECK(chunks[1].delim == "?");
  CHECK(chunks[2].delim == "");
  CHECK(chunks[1].body == " " + short1);  // below the limit: byte-identical
  CHECK(word_multiset(chunks[0].body) == word_multiset(long1));
  CHECK(word_multiset(chunks[2].body) == word_multiset(frag));
  CHECK(chunks[0].body != long1);  // 25 distinct words: the swap must show
}

TEST_CASE("attack_corpus perturbs machine documents only") {
  SynthWorldConfig w = make_default_world(24, 6);
  w.len_min = 60;
  w.len_max = 120;
  Corpus corpus = synth_generate(w, 5, 5);
  AttackConfig cfg;
  cfg.seed = 2;
  Corpus attacked = attack_corpus(corpus, cfg);
  REQUIRE(attacked.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].label == Label::human) {
      CHECK(attacked[i].text == corpus[i].text);
      CHECK(attacked[i].source == corpus[i].source);
    } else {
      CHECK(attacked[i].source == corpus[i].source + "+decoherence");
      // per-sentence word multisets preserved
      auto before = detail::split_sentences(corpus[i].text);
      auto after = detail::split_sentences(attacked[i].text);
      REQUIRE(before.size() == after.size());
      for (std::size_t s = 0; s < before.size(); ++s) {
        CHECK(word_multiset(before[s].body) == word_multiset(after[s].body));
        CHECK(before[s].delim == after[s].delim);
      }
    }
  }
}

TEST_CASE("rephrase attack routes one rewriter pass over machine text") {
  SynthWorldConfig w = make_default_world(16, 8);
  w.len_min = 30;
  w.len_max = 40;
  Corpus corpus = synth_generate(w, 1, 1);
  MarkovChain machine = sharpen(w.human_chain, w.machine_temperature);

  AttackConfig cfg;
  cfg.kind = AttackConfig::Kind::rephrase;
  cfg.seed = 4;
  cfg.rephrase_retain = 0.5;
  const Document& parent = corpus[1];
  REQUIRE(parent.label == Label::machine);
  Document out = rephrase_attack(parent, cfg, &machine, &w.vocab);
  CHECK(out.source == parent.source + "+rephrase");
  CHECK(out.text != parent.text);
  CHECK(split_whitespace(out.text).size() == split_whitespace(parent.text).size());
  CHECK(rephrase_attack(parent, cfg, &machine, &w.vocab).text == out.text);
  CHECK_THROWS_AS(rephrase_attack(corpus[0], cfg, &machine, &w.vocab), ValidationError);

  Corpus attacked = attack_corpus(corpus, cfg, &machine, &w.vocab);
  CHECK(attacked[0].text == corpus[0].text);
  CHECK(attacked[1].text == out.text);
}
