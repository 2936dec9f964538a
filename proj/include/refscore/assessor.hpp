#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "refscore/corpus.hpp"
#include "refscore/gateway.hpp"
#include "refscore/rubric.hpp"

namespace refscore {

inline constexpr int kResultsSchemaVersion = 1;
inline constexpr int kTemplatesSchemaVersion = 1;

enum class Strategy { SingleAgent, MultiAgent };
enum class Prompting { ZeroShot, FewShot };

inline std::string_view strategy_name(Strategy s) {
  return s == Strategy::SingleAgent ? "single" : "multi";
}
inline std::string_view prompting_name(Prompting p) {
  return p == Prompting::ZeroShot ? "zero" : "few";
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "single") return Strategy::SingleAgent;
  if (s == "multi") return Strategy::MultiAgent;
  throw Error("unknown strategy `" + s + "` (expected single|multi)");
}
inline Prompting prompting_from_name(const std::string& s) {
  if (s == "zero") return Prompting::ZeroShot;
  if (s == "few") return Prompting::FewShot;
  throw Error("unknown prompting `" + s + "` (expected zero|few)");
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

/// All prompt text lives here (or in a template file), not in code, so scoring
/// experiments stay reproducible across template edits. Placeholders use
/// {{name}} syntax.
struct PromptTemplates {
  std::string single_system;
  std::string single_user;
  std::string single_exemplar;
  std::string criteria_line;
  std::string node_system;
  std::string node_user;
  std::string node_exemplar;
  std::string strict_score_retry;
  std::string strict_answer_retry;

  bool operator==(const PromptTemplates&) const = default;
};

inline PromptTemplates default_templates() {
  PromptTemplates t;
  t.criteria_line = "Level {{level}} ({{label}}): {{description}}";
  t.single_system =
      "You are an assessment assistant grading one student reflection.\n"
      "Use the level descriptions below to choose a score from 0 to 3.\n"
      "\n"
      "Level descriptions:\n"
      "{{criteria}}"
      "{{exemplars}}";
  t.single_exemplar =
      "\n"
      "Reflection:\n"
      "\"\"\"\n"
      "{{text}}\n"
      "\"\"\"\n"
      "SCORE: {{score}}\n";
  t.single_user =
      "Reflection:\n"
      "\"\"\"\n"
      "{{reflection}}\n"
      "\"\"\"\n"
      "\n"
      "Assess the reflection against the level descriptions. Explain briefly, then end with a "
      "final line of exactly:\n"
      "SCORE: <0|1|2|3>";
  t.node_system =
      "You are evaluating one criterion of a grading rubric against a student reflection.\n"
      "Answer the criterion question with YES or NO.\n"
      "\n"
      "Criterion: {{criterion}}"
      "{{exemplars}}";
  t.node_exemplar =
      "\n"
      "Reflection:\n"
      "\"\"\"\n"
      "{{text}}\n"
      "\"\"\"\n"
      "ANSWER: {{answer}}\n";
  t.node_user =
      "Reflection:\n"
      "\"\"\"\n"
      "{{reflection}}\n"
      "\"\"\"\n"
      "\n"
      "Does the reflection satisfy the criterion? Explain briefly, then end with a final line "
      "of exactly:\n"
      "ANSWER: <YES|NO>";
  t.strict_score_retry =
      "\n\nYour previous reply could not be parsed. Respond with exactly one line in the form "
      "`SCORE: <n>` where <n> is 0, 1, 2, or 3. No other text.";
  t.strict_answer_retry =
      "\n\nYour previous reply could not be parsed. Respond with exactly one line: "
      "`ANSWER: YES` or `ANSWER: NO`. No other text.";
  return t;
}

inline PromptTemplates templates_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema_version", -1) != kTemplatesSchemaVersion)
    throw Error("templates: missing or unsupported schema_version");
  const auto& t = j.at("templates");
  PromptTemplates out;
  out.single_system = t.at("single_system").get<std::string>();
  out.single_user = t.at("single_user").get<std::string>();
  out.single_exemplar = t.at("single_exemplar").get<std::string>();
  out.criteria_line = t.at("criteria_line").get<std::string>();
  out.node_system = t.at("node_system").get<std::string>();
  out.node_user = t.at("node_user").get<std::string>();
  out.node_exemplar = t.at("node_exemplar").get<std::string>();
  out.strict_score_retry = t.at("strict_score_retry").get<std::string>();
  out.strict_answer_retry = t.at("strict_answer_retry").get<std::string>();
  return out;
}

inline nlohmann::json templates_to_json(const PromptTemplates& t) {
  return nlohmann::json{{"schema_version", kTemplatesSchemaVersion},
                        {"templates",
                         {{"single_system", t.single_system},
                          {"single_user", t.single_user},
                          {"single_exemplar", t.single_exemplar},
                          {"criteria_line", t.criteria_line},
                          {"node_system", t.node_system},
                          {"node_user", t.node_user},
                          {"node_exemplar", t.node_exemplar},
                          {"strict_score_retry", t.strict_score_retry},
                          {"strict_answer_retry", t.strict_answer_retry}}}};
}

inline PromptTemplates load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open templates file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("templates file " + path.string() + ": " + e.what());
  }
  return templates_from_json(j);
}

// ---------------------------------------------------------------------------
// Assessment configuration
// ---------------------------------------------------------------------------

struct AssessmentConfig {
  Strategy strategy = Strategy::SingleAgent;
  Prompting prompting = Prompting::ZeroShot;
  DecisionTree rubric = default_decision_tree();
  ScoringCriteria criteria = default_criteria();
  std::optional<ExemplarSet> exemplars;  // single-agent few-shot
  PromptTemplates templates = default_templates();
  std::string model = "mock";
  double temperature = 0.0;
  int max_tokens = 512;
  int parallelism = 4;
  double failure_rate_threshold = 0.01;

  void validate() const {
    criteria.validate();
    validate_tree(rubric);
    if (prompting == Prompting::FewShot) {
      if (strategy == Strategy::SingleAgent) {
        if (!exemplars) throw Error("few-shot single-agent assessment requires an exemplar set");
        exemplars->validate();
      } else {
        for (const auto& [id, node] : rubric.nodes)
          if (node.exemplars.empty())
            throw Error("few-shot multi-agent assessment requires exemplars on every rubric "
                        "node; node `" + id + "` has none");
      }
    }
    if (parallelism < 1) throw Error("parallelism must be >= 1");
    if (failure_rate_threshold < 0.0 || failure_rate_threshold > 1.0)
      throw Error("failure_rate_threshold must be in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// Prompt building
// ---------------------------------------------------------------------------

struct RenderedPrompt {
  std::string system;
  std::string user;
};

/// Holistic prompt. The system prompt carries all four level descriptions
/// verbatim; few-shot appends exactly one scored exemplar per level, ascending.
/// The user prompt ends with the SCORE-token instruction.
inline RenderedPrompt build_single_prompt(const ScoringCriteria& criteria,
                                          const std::optional<ExemplarSet>& exemplars,
                                          Prompting prompting, const std::string& reflection_text,
                                          const PromptTemplates& t = default_templates()) {
  criteria.validate();
  std::string criteria_block;
  for (const auto& lvl : all_score_levels()) {
    criteria_block += detail::render_placeholders(
        t.criteria_line, {{"level", std::to_string(lvl.value())},
                          {"label", std::string(lvl.label())},
                          {"description", criteria.description(lvl)}});
    criteria_block += "\n";
  }
  std::string exemplar_block;
  if (prompting == Prompting::FewShot) {
    if (!exemplars) throw Error("few-shot single-agent assessment requires an exemplar set");
    exemplars->validate();
    exemplar_block += "\nExample assessments:\n";
    for (const auto& lvl : all_score_levels()) {
      exemplar_block += detail::render_placeholders(
          t.single_exemplar,
          {{"text", exemplars->texts.at(lvl.value())}, {"score", std::to_string(lvl.value())}});
    }
  }
  RenderedPrompt out;
  out.system = detail::render_placeholders(
      t.single_system, {{"criteria", criteria_block}, {"exemplars", exemplar_block}});
  out.user = detail::render_placeholders(t.single_user, {{"reflection", reflection_text}});
  return out;
}

/// Per-node prompt for one criterion agent. Few-shot includes that node's
/// exemplar decisions only; other nodes' exemplars never leak in.
inline RenderedPrompt build_node_prompt(const RubricNode& node, Prompting prompting,
                                        const std::string& reflection_text,
                                        const PromptTemplates& t = default_templates()) {
  std::string exemplar_block;
  if (prompting == Prompting::FewShot) {
    if (node.exemplars.empty())
      throw Error("few-shot multi-agent assessment requires exemplars on node `" + node.node_id +
                  "`");
    exemplar_block += "\nExample decisions:\n";
    for (const auto& ex : node.exemplars) {
      exemplar_block += detail::render_placeholders(
          t.node_exemplar, {{"text", ex.text}, {"answer", ex.answer ? "YES" : "NO"}});
    }
  }
  RenderedPrompt out;
  out.system = detail::render_placeholders(
      t.node_system, {{"criterion", node.criterion_text}, {"exemplars", exemplar_block}});
  out.user = detail::render_placeholders(t.node_user, {{"reflection", reflection_text}});
  return out;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

/// One gateway interaction: which node (or "holistic"), what was sent, what
/// came back, and the decision parsed from it.
struct TraceStep {
  std::string node_id;
  std::string system_prompt;
  std::string user_prompt;
  std::string raw_response;
  std::string decision;  // "yes"/"no" for nodes, "0".."3" for holistic
  int retries = 0;

  bool operator==(const TraceStep&) const = default;
};

struct AssessmentResult {
  CellKey key;
  ScoreLevel score{0};
  Strategy strategy = Strategy::SingleAgent;
  Prompting prompting = Prompting::ZeroShot;
  std::vector<TraceStep> trace;
  std::int64_t wall_time_ms = 0;  // in-memory diagnostic; not serialized

  bool operator==(const AssessmentResult&) const = default;
};

/// A cell whose assessment could not produce a parseable decision. Failed
/// cells are excluded from agreement denominators and imputed as level 0 for
/// prediction; both counts are surfaced in reports.
struct FailureRecord {
  CellKey key;
  std::string stage;  // node id or "holistic"
  std::string reason;
  std::string raw_response;
};

using AssessOutcome = std::variant<AssessmentResult, FailureRecord>;

namespace detail_assessor {

struct GatewayCall {
  std::string raw;
  int retries = 0;
};

// One completion plus at most one stricter-reformulation retry on parse
// failure. Replies that still fail the grammar are reported, never guessed.
template <typename Parse>
std::optional<std::pair<typename std::invoke_result_t<Parse, const std::string&>::value_type,
                        GatewayCall>>
complete_and_parse(GatewayClient& gateway, ChatRequest req, const std::string& strict_suffix,
                   Parse parse, std::string* failure_raw) {
  ChatResponse resp = gateway.complete(req);
  if (auto v = parse(resp.text)) return std::make_pair(*v, GatewayCall{resp.text, 0});
  req.user_prompt += strict_suffix;
  ChatResponse retry = gateway.complete(req);
  if (auto v = parse(retry.text)) return std::make_pair(*v, GatewayCall{retry.text, 1});
  if (failure_raw) *failure_raw = retry.text;
  return std::nullopt;
}

}  // namespace detail_assessor

/// Single-evaluator assessment: one holistic gateway call (plus at most one
/// parse retry); the score is parsed from the reply.
inline AssessOutcome assess_single(const Reflection& reflection, const AssessmentConfig& cfg,
                                   GatewayClient& gateway) {
  const auto start = std::chrono::steady_clock::now();
  RenderedPrompt prompt =
      build_single_prompt(cfg.criteria, cfg.exemplars, cfg.prompting, reflection.text,
                          cfg.templates);
  ChatRequest req;
  req.model = cfg.model;
  req.system_prompt = prompt.system;
  req.user_prompt = prompt.user;
  req.temperature = cfg.temperature;
  req.max_tokens = cfg.max_tokens;
  req.context = {RequestContext::Kind::HolisticScore, reflection.text, ""};

  std::string failure_raw;
  std::optional<std::pair<ScoreLevel, detail_assessor::GatewayCall>> parsed;
  try {
    parsed = detail_assessor::complete_and_parse(
        gateway, req, cfg.templates.strict_score_retry,
        [](const std::string& text) { return parse_score(text); }, &failure_raw);
  } catch (const GatewayError& e) {
    return FailureRecord{reflection.key, "holistic", e.what(), ""};
  }
  if (!parsed)
    return FailureRecord{reflection.key, "holistic", "unparseable score after strict retry",
                         failure_raw};

  AssessmentResult result;
  result.key = reflection.key;
  result.score = parsed->first;
  result.strategy = Strategy::SingleAgent;
  result.prompting = cfg.prompting;
  result.trace.push_back(TraceStep{"holistic", prompt.system, prompt.user, parsed->second.raw,
                                   std::to_string(parsed->first.value()),
                                   parsed->second.retries});
  result.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  return result;
}

/// Criterion-tree assessment: one agent per node, queried sequentially from
/// the root; the final score is the tree traversal over the collected answers,
/// re-checked against the walk on every result.
inline AssessOutcome assess_multi(const Reflection& reflection, const AssessmentConfig& cfg,
                                  GatewayClient& gateway) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<TraceStep> trace;
  std::vector<bool> answers;
  const RubricNode* node = &cfg.rubric.node(cfg.rubric.root);
  for (;;) {
    RenderedPrompt prompt = build_node_prompt(*node, cfg.prompting, reflection.text, cfg.templates);
    ChatRequest req;
    req.model = cfg.model;
    req.system_prompt = prompt.system;
    req.user_prompt = prompt.user;
    req.temperature = cfg.temperature;
    req.max_tokens = cfg.max_tokens;
    req.context = {RequestContext::Kind::NodeQuestion, reflection.text, node->node_id};

    std::string failure_raw;
    std::optional<std::pair<bool, detail_assessor::GatewayCall>> parsed;
    try {
      parsed = detail_assessor::complete_and_parse(
          gateway, req, cfg.templates.strict_answer_retry,
          [](const std::string& text) { return parse_yes_no(text); }, &failure_raw);
    } catch (const GatewayError& e) {
      return FailureRecord{reflection.key, node->node_id, e.what(), ""};
    }
    if (!parsed)
      return FailureRecord{reflection.key, node->node_id,
                           "unparseable yes/no answer after strict retry", failure_raw};

    const bool answer = parsed->first;
    answers.push_back(answer);
    trace.push_back(TraceStep{node->node_id, prompt.system, prompt.user, parsed->second.raw,
                              answer ? "yes" : "no", parsed->second.retries});
    const RubricEdge& edge = answer ? node->yes_edge : node->no_edge;
    if (edge_is_leaf(edge)) {
      AssessmentResult result;
      result.key = reflection.key;
      result.score = std::get<ScoreLevel>(edge);
      result.strategy = Strategy::MultiAgent;
      result.prompting = cfg.prompting;
      result.trace = std::move(trace);
      if (traverse(cfg.rubric, answers) != result.score)
        throw Error("internal: traversal disagrees with walked path for cell " +
                    reflection.key.to_string());
      result.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - start)
                                .count();
      return result;
    }
    node = &cfg.rubric.node(std::get<std::string>(edge));
  }
}

inline AssessOutcome assess_reflection(const Reflection& reflection, const AssessmentConfig& cfg,
                                       GatewayClient& gateway) {
  return cfg.strategy == Strategy::SingleAgent ? assess_single(reflection, cfg, gateway)
                                               : assess_multi(reflection, cfg, gateway);
}

// ---------------------------------------------------------------------------
// Batch assessment
// ---------------------------------------------------------------------------

struct BatchOutcome {
  std::vector<AssessmentResult> results;   // sorted by cell key
  std::vector<FailureRecord> failures;     // sorted by cell key
  std::size_t total = 0;

  double failure_rate() const {
    return total == 0 ? 0.0 : static_cast<double>(failures.size()) / static_cast<double>(total);
  }
};

/// Assesses every reflection in the dataset under cfg. Cells run concurrently
/// up to cfg.parallelism in-flight assessments; output order is sorted by cell
/// key, independent of completion order. Reruns against a warm cache replay
/// without backend calls.
inline BatchOutcome assess_batch(const Dataset& dataset, const AssessmentConfig& cfg,
                                 GatewayClient& gateway) {
  cfg.validate();
  const std::size_t n = dataset.reflections.size();
  std::vector<std::optional<AssessOutcome>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;

  const int workers = std::max(1, std::min<int>(cfg.parallelism, static_cast<int>(n)));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          slots[i] = assess_reflection(dataset.reflections[i], cfg, gateway);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  BatchOutcome out;
  out.total = n;
  for (auto& slot : slots) {
    if (auto* r = std::get_if<AssessmentResult>(&*slot))
      out.results.push_back(std::move(*r));
    else
      out.failures.push_back(std::move(std::get<FailureRecord>(*slot)));
  }
  std::sort(out.results.begin(), out.results.end(),
            [](const AssessmentResult& a, const AssessmentResult& b) { return a.key < b.key; });
  std::sort(out.failures.begin(), out.failures.end(),
            [](const FailureRecord& a, const FailureRecord& b) { return a.key < b.key; });
  return out;
}

// ---------------------------------------------------------------------------
// Results file I/O (JSON Lines, versioned)
// ---------------------------------------------------------------------------

namespace detail_assessor {

inline nlohmann::json key_to_json(const CellKey& k) {
  return {{"student_id", k.student_id},
          {"term", k.term},
          {"week", k.week},
          {"question_id", k.question_id}};
}

inline CellKey key_from_json(const nlohmann::json& j) {
  return CellKey{j.at("student_id").get<std::string>(), j.at("term").get<int>(),
                 j.at("week").get<int>(), j.at("question_id").get<std::string>()};
}

}  // namespace detail_assessor

/// Persisted result schema: cell key, score, condition, trace. Volatile fields
/// (timings, cache flags) stay out so a replayed run is byte-identical.
inline void write_results(const BatchOutcome& batch, Strategy strategy, Prompting prompting,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write results file: " + path.string());
  out << nlohmann::json{{"kind", "header"},
                        {"schema_version", kResultsSchemaVersion},
                        {"strategy", std::string(strategy_name(strategy))},
                        {"prompting", std::string(prompting_name(prompting))}}
             .dump()
      << "\n";
  for (const auto& r : batch.results) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.trace)
      steps.push_back({{"node_id", s.node_id},
                       {"system_prompt", s.system_prompt},
                       {"user_prompt", s.user_prompt},
                       {"raw_response", s.raw_response},
                       {"decision", s.decision},
                       {"retries", s.retries}});
    nlohmann::json j = detail_assessor::key_to_json(r.key);
    j["kind"] = "result";
    j["score"] = r.score.value();
    j["trace"] = steps;
    out << j.dump() << "\n";
  }
}

inline void write_failure_report(const BatchOutcome& batch, const std::filesystem::path& path) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : batch.failures) {
    nlohmann::json j = detail_assessor::key_to_json(f.key);
    j["stage"] = f.stage;
    j["reason"] = f.reason;
    j["raw_response"] = f.raw_response;
    failures.push_back(j);
  }
  nlohmann::json report = {{"schema_version", kResultsSchemaVersion},
                           {"total_cells", batch.total},
                           {"assessed", batch.results.size()},
                           {"failed", batch.failures.size()},
                           {"failures", failures}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write failure report: " + path.string());
  out << report.dump(2) << "\n";
}

struct LoadedResults {
  Strategy strategy = Strategy::SingleAgent;
  Prompting prompting = Prompting::ZeroShot;
  std::vector<AssessmentResult> results;

  std::map<CellKey, ScoreLevel> score_map() const {
    std::map<CellKey, ScoreLevel> out;
    for (const auto& r : results) out.emplace(r.key, r.score);
    return out;
  }
};

inline LoadedResults load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open results file: " + path.string());
  LoadedResults out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("results file " + path.string() + ": line " + std::to_string(line_no) + ": " +
                  e.what());
    }
    const std::string kind = j.value("kind", "");
    if (kind == "header") {
      if (j.value("schema_version", -1) != kResultsSchemaVersion)
        throw Error("results file " + path.string() + ": unsupported schema_version");
      out.strategy = strategy_from_name(j.at("strategy").get<std::string>());
      out.prompting = prompting_from_name(j.at("prompting").get<std::string>());
      header_seen = true;
    } else if (kind == "result") {
      AssessmentResult r;
      r.key = detail_assessor::key_from_json(j);
      r.score = ScoreLevel(j.at("score").get<int>());
      r.strategy = out.strategy;
      r.prompting = out.prompting;
      for (const auto& js : j.at("trace"))
        r.trace.push_back(TraceStep{js.at("node_id").get<std::string>(),
                                    js.at("system_prompt").get<std::string>(),
                                    js.at("user_prompt").get<std::string>(),
                                    js.at("raw_response").get<std::string>(),
                                    js.at("decision").get<std::string>(),
                                    js.value("retries", 0)});
      out.results.push_back(std::move(r));
    } else {
      throw Error("results file " + path.string() + ": line " + std::to_string(line_no) +
                  ": unknown record kind");
    }
  }
  if (!header_seen) throw Error("results file " + path.string() + ": missing header record");
  return out;
}

}  // namespace refscore
