#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "refscore/detail/sha256.hpp"
#include "refscore/detail/text.hpp"
#include "refscore/rubric.hpp"

namespace refscore {

inline constexpr int kCacheSchemaVersion = 1;

/// Offline-only request metadata. Deterministic backends use it to answer
/// without natural-language understanding; network backends ignore it. It is
/// derived from the same inputs as the prompts and is not part of cache keys.
struct RequestContext {
  enum class Kind { None, HolisticScore, NodeQuestion };
  Kind kind = Kind::None;
  std::string reflection_text;
  std::string node_id;  // NodeQuestion only
};

struct ChatRequest {
  std::string model;
  std::string system_prompt;
  std::string user_prompt;
  double temperature = 0.0;
  int max_tokens = 512;
  RequestContext context;

  void validate() const {
    if (system_prompt.empty() || user_prompt.empty())
      throw Error("chat request: prompts must be nonempty");
    if (temperature < 0.0) throw Error("chat request: temperature must be >= 0");
  }
};

struct ChatResponse {
  std::string text;
  std::string backend_id;
  bool cached = false;
  std::int64_t latency_ms = 0;
};

/// Outcome of a single backend attempt. Transient failures are retried by the
/// gateway; the rest abort immediately.
struct BackendResult {
  enum class Status { Ok, Transient, Auth, Malformed };
  Status status = Status::Ok;
  std::string text;    // Ok only
  std::string detail;  // failure description

  static BackendResult ok(std::string t) { return {Status::Ok, std::move(t), {}}; }
  static BackendResult fail(Status s, std::string d) { return {s, {}, std::move(d)}; }
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual BackendResult complete(const ChatRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

namespace detail_gateway {

inline std::optional<std::size_t> find_token(const std::string& text, const std::string& token) {
  const std::string lower = detail::to_lower(text);
  auto pos = lower.find(detail::to_lower(token));
  if (pos == std::string::npos) return std::nullopt;
  return pos + token.size();
}

}  // namespace detail_gateway

/// Extracts the score from a reply of the form "... SCORE: <n>". The token is
/// matched case-insensitively at its first occurrence; the integer after it
/// must be a single digit in 0..3. Word forms ("three") do not parse.
inline std::optional<ScoreLevel> parse_score(const std::string& text) {
  auto after = detail_gateway::find_token(text, "SCORE:");
  if (!after) return std::nullopt;
  std::size_t i = *after;
  while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
  if (i >= text.size() || !std::isdigit(static_cast<unsigned char>(text[i]))) return std::nullopt;
  std::size_t j = i;
  while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
  if (j - i != 1) return std::nullopt;  // 0..3 are single digits; "12" is not a level
  int v = text[i] - '0';
  if (v < ScoreLevel::kMin || v > ScoreLevel::kMax) return std::nullopt;
  return ScoreLevel(v);
}

/// Extracts the yes/no decision from a reply of the form "... ANSWER: YES|NO"
/// (case-insensitive, word-bounded).
inline std::optional<bool> parse_yes_no(const std::string& text) {
  auto after = detail_gateway::find_token(text, "ANSWER:");
  if (!after) return std::nullopt;
  std::size_t i = *after;
  while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  std::size_t j = i;
  while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
  const std::string word = detail::to_lower(text.substr(i, j - i));
  if (word == "yes") return true;
  if (word == "no") return false;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Deterministic mock backend
// ---------------------------------------------------------------------------

/// Deterministic level for a reflection text. Empty or near-empty text is
/// level 0; otherwise the level grows with the number of distinct words.
inline ScoreLevel mock_level(const std::string& text) {
  if (detail::trim(text).empty() || detail::alnum_char_count(text) < 5) return ScoreLevel(0);
  const std::size_t words = detail::distinct_word_count(text);
  if (words < 15) return ScoreLevel(1);
  if (words < 40) return ScoreLevel(2);
  return ScoreLevel(3);
}

namespace detail_gateway {

// Length of the shortest path from `edge` down to a leaf scored `level`, or
// nullopt if that subtree has no such leaf.
inline std::optional<int> depth_to_level(const DecisionTree& tree, const RubricEdge& edge,
                                         int level) {
  if (edge_is_leaf(edge))
    return std::get<ScoreLevel>(edge).value() == level ? std::optional<int>(0) : std::nullopt;
  const RubricNode& n = tree.node(std::get<std::string>(edge));
  auto yes = depth_to_level(tree, n.yes_edge, level);
  auto no = depth_to_level(tree, n.no_edge, level);
  if (!yes && !no) return std::nullopt;
  int best = std::min(yes.value_or(1 << 20), no.value_or(1 << 20));
  return best + 1;
}

}  // namespace detail_gateway

/// Yes/no answer a rater targeting `level` gives at `node_id`: enter whichever
/// subtree contains a leaf with that score (shortest path wins ties, yes-side
/// preferred). Sequential traversal driven by these answers always ends at a
/// leaf scored `level` on any valid tree.
inline bool mock_node_answer(const DecisionTree& tree, const std::string& node_id, int level) {
  const RubricNode& n = tree.node(node_id);
  auto yes = detail_gateway::depth_to_level(tree, n.yes_edge, level);
  auto no = detail_gateway::depth_to_level(tree, n.no_edge, level);
  if (yes && no) return *yes <= *no;
  return yes.has_value();
}

/// Offline rule-based scorer. Same input always yields a byte-identical reply,
/// and single-evaluator scores agree with criterion-tree traversal answers on
/// the configured tree, so orchestration bugs are observable without network
/// variance.
class MockBackend : public Backend {
 public:
  explicit MockBackend(DecisionTree tree = default_decision_tree()) : tree_(std::move(tree)) {}

  std::string id() const override { return "mock"; }

  BackendResult complete(const ChatRequest& req) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    const RequestContext& ctx = req.context;
    switch (ctx.kind) {
      case RequestContext::Kind::NodeQuestion: {
        const int level = mock_level(ctx.reflection_text).value();
        const bool yes = mock_node_answer(tree_, ctx.node_id, level);
        return BackendResult::ok(std::string("Considered the criterion against the reflection.\n") +
                                 "ANSWER: " + (yes ? "YES" : "NO"));
      }
      case RequestContext::Kind::HolisticScore:
      case RequestContext::Kind::None: {
        const std::string& text = ctx.kind == RequestContext::Kind::None && ctx.reflection_text.empty()
                                      ? req.user_prompt
                                      : ctx.reflection_text;
        const int level = mock_level(text).value();
        return BackendResult::ok("Assessed the reflection against the level descriptions.\nSCORE: " +
                                 std::to_string(level));
      }
    }
    return BackendResult::fail(BackendResult::Status::Malformed, "unreachable");
  }

  std::int64_t calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  DecisionTree tree_;
  std::atomic<std::int64_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Persistent response cache
// ---------------------------------------------------------------------------

/// Stable digest of everything that determines a backend reply.
inline std::string cache_key(const std::string& backend_id, const ChatRequest& req) {
  char temp[32];
  std::snprintf(temp, sizeof(temp), "%.17g", req.temperature);
  std::string material;
  const char sep = '\x1f';
  material += backend_id;
  material += sep;
  material += req.model;
  material += sep;
  material += req.system_prompt;
  material += sep;
  material += req.user_prompt;
  material += sep;
  material += temp;
  return detail::Sha256::hex(material);
}

/// Append-only (key, response) store backed by a JSON Lines file, so batch
/// runs are resumable and replayable. The first line is a version header;
/// duplicate keys resolve last-wins. Safe for concurrent use.
class ResponseCache {
 public:
  ResponseCache() = default;  // in-memory only

  explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (in) {
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
          throw Error("cache file " + path_.string() + ": line " + std::to_string(line_no) +
                      ": " + e.what());
        }
        const std::string kind = j.value("kind", "");
        if (kind == "header") {
          if (j.value("schema_version", -1) != kCacheSchemaVersion)
            throw Error("cache file " + path_.string() + ": unsupported schema_version");
          header_seen_ = true;
        } else if (kind == "entry") {
          Entry e;
          e.text = j.at("text").get<std::string>();
          e.latency_ms = j.value("latency_ms", std::int64_t{0});
          entries_[j.at("key").get<std::string>()] = std::move(e);
        } else {
          throw Error("cache file " + path_.string() + ": line " + std::to_string(line_no) +
                      ": unknown record kind");
        }
      }
    }
  }

  std::optional<std::string> lookup(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second.text;
  }

  void store(const std::string& key, const std::string& backend_id, const std::string& model,
             const std::string& text, std::int64_t latency_ms) {
    std::lock_guard lock(mu_);
    entries_[key] = {text, latency_ms};
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to cache file: " + path_.string());
    if (!header_seen_) {
      out << nlohmann::json{{"kind", "header"}, {"schema_version", kCacheSchemaVersion}}.dump()
          << "\n";
      header_seen_ = true;
    }
    nlohmann::json j = {{"kind", "entry"},       {"key", key},
                        {"backend_id", backend_id}, {"model", model},
                        {"created_at", now_iso()},  {"text", text},
                        {"latency_ms", latency_ms}};
    out << j.dump() << "\n";
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  struct Entry {
    std::string text;
    std::int64_t latency_ms = 0;
  };

  static std::string now_iso() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
  bool header_seen_ = false;
};

// ---------------------------------------------------------------------------
// Gateway client: cache + retry policy around a backend
// ---------------------------------------------------------------------------

struct GatewayOptions {
  int max_attempts = 5;
  std::int64_t backoff_base_ms = 250;  // doubles per attempt, no jitter
  std::int64_t attempt_timeout_ms = 30000;
  bool cache_enabled = true;
};

struct GatewayStats {
  std::atomic<std::int64_t> backend_calls{0};
  std::atomic<std::int64_t> cache_hits{0};
  std::atomic<std::int64_t> retries{0};
};

class GatewayError : public Error {
 public:
  using Error::Error;
};

/// Entry point for all completions: consults the cache, then calls the backend
/// with exponential backoff on transient failures. Total wall time is bounded
/// by max_attempts x attempt_timeout plus backoff. Safe for concurrent use.
class GatewayClient {
 public:
  GatewayClient(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache,
                GatewayOptions options = {})
      : backend_(std::move(backend)), cache_(std::move(cache)), options_(options) {
    if (options_.max_attempts < 1) throw Error("gateway: max_attempts must be >= 1");
  }

  ChatResponse complete(const ChatRequest& req) {
    req.validate();
    const std::string key = cache_key(backend_->id(), req);
    if (options_.cache_enabled && cache_) {
      if (auto hit = cache_->lookup(key)) {
        stats_.cache_hits.fetch_add(1, std::memory_order_relaxed);
        return ChatResponse{*hit, backend_->id(), true, 0};
      }
    }
    std::string last_detail;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
      const auto start = std::chrono::steady_clock::now();
      stats_.backend_calls.fetch_add(1, std::memory_order_relaxed);
      BackendResult res = backend_->complete(req);
      const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - start)
                               .count();
      switch (res.status) {
        case BackendResult::Status::Ok: {
          if (options_.cache_enabled && cache_)
            cache_->store(key, backend_->id(), req.model, res.text, latency);
          return ChatResponse{res.text, backend_->id(), false, latency};
        }
        case BackendResult::Status::Auth:
          throw GatewayError("authentication failure: " + res.detail);
        case BackendResult::Status::Malformed:
          throw GatewayError("malformed backend reply: " + res.detail);
        case BackendResult::Status::Transient:
          last_detail = res.detail;
          if (attempt < options_.max_attempts) {
            stats_.retries.fetch_add(1, std::memory_order_relaxed);
            std::this_thread::sleep_for(std::chrono::milliseconds(
                options_.backoff_base_ms * (std::int64_t{1} << (attempt - 1))));
          }
          break;
      }
    }
    throw GatewayError("exhausted " + std::to_string(options_.max_attempts) +
                       " attempts; last failure: " + last_detail);
  }

  const GatewayStats& stats() const { return stats_; }
  const GatewayOptions& options() const { return options_; }
  Backend& backend() { return *backend_; }

 private:
  std::shared_ptr<Backend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  GatewayOptions options_;
  GatewayStats stats_;
};

}  // namespace refscore
