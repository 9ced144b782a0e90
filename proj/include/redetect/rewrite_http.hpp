#pragma once
// HTTP chat-completions client for real rewriter models. Kept separate from
// rewrite.hpp so the detection/training path never pulls in a socket library.

#ifdef REDETECT_HAVE_OPENSSL
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#endif

#include <cstdlib>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "redetect/rewrite.hpp"

namespace redetect {

struct HttpAttempt {
  int status = 0;      // 0 = transport-level failure (no HTTP status)
  std::string detail;  // error string or response snippet
};

namespace detail {
// Split "http://host:port/prefix" into client base and path prefix.
inline std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("endpoint_url must include a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}
}  // namespace detail

// One rewrite request: POST {endpoint_url}/chat/completions with the preset
// system prompt and the document text, retrying transport failures and non-2xx
// statuses up to cfg.max_retries total attempts.
inline std::string http_rewrite(const RewriterConfig& cfg, const Document& doc,
                                std::vector<HttpAttempt>* attempt_log = nullptr) {
  cfg.validate();
  if (cfg.kind != RewriterConfig::Kind::http)
    throw ValidationError("http_rewrite requires kind=http");
  httplib::Headers headers;
  if (!cfg.api_key_env_var.empty()) {
    const char* key = std::getenv(cfg.api_key_env_var.c_str());
    if (key == nullptr || *key == '\0')
      throw ConfigError("environment variable not set: " + cfg.api_key_env_var);
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  nlohmann::ordered_json body;
  body["model"] = cfg.model_name;
  body["messages"] = nlohmann::json::array({
      nlohmann::ordered_json{{"role", "system"}, {"content", system_prompt_for(cfg)}},
      nlohmann::ordered_json{{"role", "user"}, {"content", doc.text}},
  });
  body["temperature"] = cfg.temperature;
  body["max_tokens"] = max_tokens_for(doc.text);
  const std::string payload = body.dump();

  auto [base, prefix] = detail::split_endpoint(cfg.endpoint_url);
  httplib::Client client(base);
  const auto secs = static_cast<time_t>(cfg.timeout_seconds);
  const auto usecs = static_cast<time_t>((cfg.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  const std::string path = prefix + "/chat/completions";

  std::vector<HttpAttempt> local_log;
  auto& log = attempt_log ? *attempt_log : local_log;
  for (int attempt = 1; attempt <= cfg.max_retries; ++attempt) {
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      log.push_back({0, httplib::to_string(res.error())});
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      log.push_back({res->status, res->body.substr(0, 200)});
      continue;
    }
    log.push_back({res->status, ""});
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw EndpointError("malformed completion response: " + std::string(e.what()));
    }
    std::string content;
    try {
      content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw EndpointError("completion response missing choices[0].message.content");
    }
    if (content.empty()) throw RewriteFailure("endpoint returned an empty completion");
    return content;
  }
  std::string msg = "rewrite request failed after " + std::to_string(log.size()) + " attempts:";
  for (const auto& a : log)
    msg += " [status " + std::to_string(a.status) + (a.detail.empty() ? "" : " " + a.detail) + "]";
  throw EndpointError(msg);
}

// Adapter for rewrite_k / rewrite_corpus.
inline RewriteTransport http_transport() {
  return [](const RewriterConfig& cfg, const Document& doc) { return http_rewrite(cfg, doc); };
}

}  // namespace redetect
