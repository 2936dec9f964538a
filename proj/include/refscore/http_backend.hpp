#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "refscore/gateway.hpp"

namespace refscore {

struct HttpBackendConfig {
  std::string endpoint;  // full URL, e.g. http://host:8080/v1/chat/completions
  std::string api_key_env = "LLM_API_KEY";
  std::int64_t timeout_ms = 30000;
  bool require_api_key = true;
};

/// Chat-completion client for OpenAI-compatible endpoints. The credential is
/// read from the environment only; it never appears in config files or logs.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    auto scheme_end = cfg_.endpoint.find("://");
    if (scheme_end == std::string::npos)
      throw Error("http backend: endpoint must be a full URL: " + cfg_.endpoint);
    auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base_ = cfg_.endpoint;
      path_ = "/v1/chat/completions";
    } else {
      base_ = cfg_.endpoint.substr(0, path_start);
      path_ = cfg_.endpoint.substr(path_start);
    }
    if (cfg_.require_api_key) {
      const char* key = std::getenv(cfg_.api_key_env.c_str());
      if (!key || !*key)
        throw Error("http backend: environment variable " + cfg_.api_key_env + " is not set");
      api_key_ = key;
    }
  }

  std::string id() const override { return "http:" + base_ + path_; }

  BackendResult complete(const ChatRequest& req) override {
    nlohmann::json body = {
        {"model", req.model},
        {"messages",
         {{{"role", "system"}, {"content", req.system_prompt}},
          {{"role", "user"}, {"content", req.user_prompt}}}},
        {"temperature", req.temperature},
        {"max_tokens", req.max_tokens}};

    httplib::Client client(base_);
    client.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
    client.set_write_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res)
      return BackendResult::fail(BackendResult::Status::Transient,
                                 "connection error: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403)
      return BackendResult::fail(BackendResult::Status::Auth,
                                 "HTTP " + std::to_string(res->status));
    if (res->status == 429 || res->status >= 500)
      return BackendResult::fail(BackendResult::Status::Transient,
                                 "HTTP " + std::to_string(res->status));
    if (res->status != 200)
      return BackendResult::fail(BackendResult::Status::Malformed,
                                 "HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
      nlohmann::json j = nlohmann::json::parse(res->body);
      return BackendResult::ok(
          j.at("choices").at(0).at("message").at("content").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      return BackendResult::fail(BackendResult::Status::Malformed,
                                 std::string("unexpected response shape: ") + e.what());
    }
  }

 private:
  HttpBackendConfig cfg_;
  std::string base_;
  std::string path_;
  std::string api_key_;
};

}  // namespace refscore
