#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "refscore/corpus.hpp"

namespace refscore {

inline constexpr int kRubricSchemaVersion = 1;
inline constexpr int kCriteriaSchemaVersion = 1;

/// Holistic per-level descriptions used by the single-evaluator strategy.
struct ScoringCriteria {
  std::map<int, std::string> descriptions;  // level value -> description

  bool operator==(const ScoringCriteria&) const = default;

  void validate() const {
    for (const auto& lvl : all_score_levels()) {
      auto it = descriptions.find(lvl.value());
      if (it == descriptions.end() || it->second.empty())
        throw Error("scoring criteria: missing or empty description for level " +
                    std::to_string(lvl.value()));
    }
    if (descriptions.size() != 4) throw Error("scoring criteria: exactly four levels expected");
  }

  const std::string& description(ScoreLevel lvl) const { return descriptions.at(lvl.value()); }
};

/// One example decision attached to a rubric node: a reflection text and the
/// yes/no answer a careful rater would give at that node.
struct NodeExemplar {
  std::string text;
  bool answer = false;

  bool operator==(const NodeExemplar&) const = default;
};

/// Either a pointer to another node or a terminal score.
using RubricEdge = std::variant<std::string, ScoreLevel>;

inline bool edge_is_leaf(const RubricEdge& e) { return std::holds_alternative<ScoreLevel>(e); }

struct RubricNode {
  std::string node_id;
  std::string criterion_text;  // a yes/no question
  RubricEdge yes_edge{ScoreLevel(0)};
  RubricEdge no_edge{ScoreLevel(0)};
  std::vector<NodeExemplar> exemplars;  // optional, used by few-shot prompting

  bool operator==(const RubricNode&) const = default;
};

/// A binary criterion tree whose leaves are scores. Valid trees are acyclic,
/// fully reachable from the root, and their leaf scores cover {0,1,2,3} exactly.
struct DecisionTree {
  std::string root;
  std::map<std::string, RubricNode> nodes;

  bool operator==(const DecisionTree&) const = default;

  const RubricNode& node(const std::string& id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw Error("rubric: unknown node `" + id + "`");
    return it->second;
  }
};

/// Exactly one exemplar reflection per score level, for single-evaluator
/// few-shot prompts.
struct ExemplarSet {
  std::map<int, std::string> texts;  // level value -> reflection text

  bool operator==(const ExemplarSet&) const = default;

  void validate() const {
    if (texts.size() != 4) throw Error("exemplar set: exactly four exemplars expected");
    std::set<std::string> distinct;
    for (const auto& lvl : all_score_levels()) {
      auto it = texts.find(lvl.value());
      if (it == texts.end())
        throw Error("exemplar set: missing exemplar for level " + std::to_string(lvl.value()));
      distinct.insert(it->second);
    }
    if (distinct.size() != 4) throw Error("exemplar set: exemplar texts must be distinct");
  }
};

// ---------------------------------------------------------------------------
// Tree validation and traversal
// ---------------------------------------------------------------------------

namespace detail_rubric {

inline void walk_validate(const DecisionTree& tree, const std::string& id,
                          std::set<std::string>& on_path, std::set<std::string>& visited,
                          std::set<int>& leaf_scores) {
  if (on_path.count(id)) throw Error("rubric: cycle detected through node `" + id + "`");
  const RubricNode& n = tree.node(id);
  if (n.criterion_text.empty()) throw Error("rubric: node `" + id + "` has empty criterion text");
  on_path.insert(id);
  visited.insert(id);
  for (const RubricEdge* e : {&n.yes_edge, &n.no_edge}) {
    if (edge_is_leaf(*e)) {
      leaf_scores.insert(std::get<ScoreLevel>(*e).value());
    } else {
      walk_validate(tree, std::get<std::string>(*e), on_path, visited, leaf_scores);
    }
  }
  on_path.erase(id);
}

}  // namespace detail_rubric

/// Checks the tree invariants; throws on cycles, unreachable nodes, dangling
/// edges and leaf coverage violations.
inline void validate_tree(const DecisionTree& tree) {
  if (tree.nodes.empty()) throw Error("rubric: tree has no nodes");
  std::set<std::string> on_path, visited;
  std::set<int> leaf_scores;
  detail_rubric::walk_validate(tree, tree.root, on_path, visited, leaf_scores);
  if (visited.size() != tree.nodes.size()) {
    for (const auto& [id, n] : tree.nodes) {
      (void)n;
      if (!visited.count(id)) throw Error("rubric: node `" + id + "` unreachable from root");
    }
  }
  std::set<int> expected = {0, 1, 2, 3};
  if (leaf_scores != expected)
    throw Error("rubric: leaf scores must cover {0,1,2,3} exactly");
}

/// Walks from the root consuming one yes/no answer per node until a leaf.
/// Throws if answers run out before a leaf or if any answers are left over.
inline ScoreLevel traverse(const DecisionTree& tree, const std::vector<bool>& answers) {
  const RubricNode* n = &tree.node(tree.root);
  std::size_t i = 0;
  for (;;) {
    if (i >= answers.size()) throw Error("rubric: answer list exhausted before reaching a leaf");
    const RubricEdge& e = answers[i] ? n->yes_edge : n->no_edge;
    ++i;
    if (edge_is_leaf(e)) {
      if (i != answers.size())
        throw Error("rubric: surplus answers after reaching a leaf");
      return std::get<ScoreLevel>(e);
    }
    n = &tree.node(std::get<std::string>(e));
  }
}

struct RubricPath {
  std::vector<bool> answers;       // root-to-leaf, one entry per node
  std::vector<std::string> nodes;  // node ids along the path
  ScoreLevel score{0};
};

/// Exhaustive list of every root-to-leaf path (no-edge first, then yes-edge).
/// Serves as the traversal oracle: traverse(tree, p.answers) == p.score for
/// every enumerated path.
inline std::vector<RubricPath> enumerate_paths(const DecisionTree& tree) {
  std::vector<RubricPath> out;
  std::vector<bool> answers;
  std::vector<std::string> trail;
  auto walk = [&](auto&& self, const std::string& id) -> void {
    const RubricNode& n = tree.node(id);
    trail.push_back(id);
    for (bool answer : {false, true}) {
      const RubricEdge& e = answer ? n.yes_edge : n.no_edge;
      answers.push_back(answer);
      if (edge_is_leaf(e)) {
        out.push_back({answers, trail, std::get<ScoreLevel>(e)});
      } else {
        self(self, std::get<std::string>(e));
      }
      answers.pop_back();
    }
    trail.pop_back();
  };
  walk(walk, tree.root);
  return out;
}

inline int tree_depth(const DecisionTree& tree) {
  int depth = 0;
  for (const auto& p : enumerate_paths(tree))
    depth = std::max(depth, static_cast<int>(p.answers.size()));
  return depth;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace detail_rubric {

inline nlohmann::json edge_to_json(const RubricEdge& e) {
  if (edge_is_leaf(e)) return nlohmann::json{{"leaf", std::get<ScoreLevel>(e).value()}};
  return nlohmann::json{{"node", std::get<std::string>(e)}};
}

inline RubricEdge edge_from_json(const nlohmann::json& j) {
  if (j.contains("leaf") == j.contains("node"))
    throw Error("rubric: edge must have exactly one of `leaf` or `node`");
  if (j.contains("leaf")) return ScoreLevel(j.at("leaf").get<int>());
  return j.at("node").get<std::string>();
}

}  // namespace detail_rubric

inline nlohmann::json tree_to_json(const DecisionTree& tree) {
  nlohmann::json nodes = nlohmann::json::object();
  for (const auto& [id, n] : tree.nodes) {
    nlohmann::json jn = {{"criterion", n.criterion_text},
                         {"yes", detail_rubric::edge_to_json(n.yes_edge)},
                         {"no", detail_rubric::edge_to_json(n.no_edge)}};
    if (!n.exemplars.empty()) {
      nlohmann::json ex = nlohmann::json::array();
      for (const auto& e : n.exemplars) ex.push_back({{"text", e.text}, {"answer", e.answer}});
      jn["exemplars"] = ex;
    }
    nodes[id] = jn;
  }
  return nlohmann::json{{"schema_version", kRubricSchemaVersion},
                        {"root", tree.root},
                        {"nodes", nodes}};
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw Error("rubric: missing schema_version");
  if (j.at("schema_version").get<int>() != kRubricSchemaVersion)
    throw Error("rubric: unsupported schema_version");
  DecisionTree tree;
  tree.root = j.at("root").get<std::string>();
  for (const auto& [id, jn] : j.at("nodes").items()) {
    RubricNode n;
    n.node_id = id;
    n.criterion_text = jn.at("criterion").get<std::string>();
    n.yes_edge = detail_rubric::edge_from_json(jn.at("yes"));
    n.no_edge = detail_rubric::edge_from_json(jn.at("no"));
    if (jn.contains("exemplars")) {
      for (const auto& je : jn.at("exemplars"))
        n.exemplars.push_back({je.at("text").get<std::string>(), je.at("answer").get<bool>()});
    }
    tree.nodes.emplace(id, std::move(n));
  }
  validate_tree(tree);
  return tree;
}

/// Loads and validates a rubric tree file.
inline DecisionTree load_rubric(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open rubric file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("rubric file " + path.string() + ": " + e.what());
  }
  return tree_from_json(j);
}

inline void save_rubric(const DecisionTree& tree, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write rubric file: " + path.string());
  out << tree_to_json(tree).dump(2) << "\n";
}

inline nlohmann::json criteria_to_json(const ScoringCriteria& c, const ExemplarSet* exemplars) {
  nlohmann::json levels = nlohmann::json::object();
  for (const auto& lvl : all_score_levels())
    levels[std::to_string(lvl.value())] = {{"label", std::string(lvl.label())},
                                           {"description", c.description(lvl)}};
  nlohmann::json j = {{"schema_version", kCriteriaSchemaVersion}, {"levels", levels}};
  if (exemplars) {
    nlohmann::json ex = nlohmann::json::object();
    for (const auto& [lvl, text] : exemplars->texts) ex[std::to_string(lvl)] = text;
    j["exemplars"] = ex;
  }
  return j;
}

struct CriteriaFile {
  ScoringCriteria criteria;
  std::optional<ExemplarSet> exemplars;
};

inline CriteriaFile criteria_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw Error("criteria: missing schema_version");
  if (j.at("schema_version").get<int>() != kCriteriaSchemaVersion)
    throw Error("criteria: unsupported schema_version");
  CriteriaFile out;
  for (const auto& [k, v] : j.at("levels").items())
    out.criteria.descriptions[std::stoi(k)] = v.at("description").get<std::string>();
  out.criteria.validate();
  if (j.contains("exemplars")) {
    ExemplarSet ex;
    for (const auto& [k, v] : j.at("exemplars").items()) ex.texts[std::stoi(k)] = v.get<std::string>();
    ex.validate();
    out.exemplars = std::move(ex);
  }
  return out;
}

inline CriteriaFile load_criteria(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open criteria file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("criteria file " + path.string() + ": " + e.what());
  }
  return criteria_from_json(j);
}

inline void save_criteria(const ScoringCriteria& c, const ExemplarSet* exemplars,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write criteria file: " + path.string());
  out << criteria_to_json(c, exemplars).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Shipped defaults
// ---------------------------------------------------------------------------

/// Default holistic criteria for the four levels.
inline ScoringCriteria default_criteria() {
  ScoringCriteria c;
  c.descriptions[0] =
      "No reflection was provided, or the content is irrelevant or unrelated to the course.";
  c.descriptions[1] =
      "The reflection mentions only broad concepts, with little or no explanation.";
  c.descriptions[2] =
      "The reflection goes beyond broad statements of concepts but lacks depth or specific "
      "detail.";
  c.descriptions[3] =
      "The reflection is specific and highly detailed, showing deep understanding of the "
      "material and strong engagement.";
  return c;
}

/// Default single-evaluator exemplars, one per level. Synthetic fixtures:
/// each text is written so the offline rule-based backend assesses it at its
/// own level (kept in sync by tests).
inline ExemplarSet default_exemplars() {
  ExemplarSet ex;
  ex.texts[0] = "idk";
  ex.texts[1] = "I learned about sorting algorithms today.";
  ex.texts[2] =
      "Today I learned how quicksort partitions an array around a pivot element. Choosing a "
      "poor pivot can degrade performance, so implementations often pick it randomly.";
  ex.texts[3] =
      "Today's lecture on hash tables clarified how collision resolution strategies differ. "
      "Chaining keeps a bucket list per slot, while open addressing probes alternative "
      "positions inside the array itself. I implemented both after class and measured lookup "
      "latency under increasing load factors; chaining degraded gracefully, whereas linear "
      "probing slowed sharply past 0.7 because clusters kept growing. I can now justify "
      "resizing thresholds quantitatively instead of guessing.";
  return ex;
}

/// Default criterion tree: three chained questions separating adjacent levels.
/// Per-node exemplars reuse the level exemplars with the answer a careful
/// rater would give at that node.
inline DecisionTree default_decision_tree() {
  const ExemplarSet ex = default_exemplars();
  DecisionTree tree;
  tree.root = "relevant";

  RubricNode relevant;
  relevant.node_id = "relevant";
  relevant.criterion_text =
      "Is the reflection present, relevant, and related to the course content?";
  relevant.yes_edge = std::string("beyond_broad");
  relevant.no_edge = ScoreLevel(0);
  relevant.exemplars = {{ex.texts.at(1), true}, {ex.texts.at(0), false}};

  RubricNode beyond;
  beyond.node_id = "beyond_broad";
  beyond.criterion_text =
      "Does the reflection go beyond broad concept statements, for example by including "
      "explanation or application?";
  beyond.yes_edge = std::string("specific_detail");
  beyond.no_edge = ScoreLevel(1);
  beyond.exemplars = {{ex.texts.at(2), true}, {ex.texts.at(1), false}};

  RubricNode specific;
  specific.node_id = "specific_detail";
  specific.criterion_text =
      "Is the reflection specific and highly detailed, demonstrating deep understanding?";
  specific.yes_edge = ScoreLevel(3);
  specific.no_edge = ScoreLevel(2);
  specific.exemplars = {{ex.texts.at(3), true}, {ex.texts.at(2), false}};

  tree.nodes.emplace(relevant.node_id, std::move(relevant));
  tree.nodes.emplace(beyond.node_id, std::move(beyond));
  tree.nodes.emplace(specific.node_id, std::move(specific));
  validate_tree(tree);
  return tree;
}

}  // namespace refscore
