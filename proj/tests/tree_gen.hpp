#pragma once

// Random valid rubric trees for property tests: binary, depth-bounded, leaf
// scores covering {0,1,2,3}.

#include "refscore/detail/rng.hpp"
#include "refscore/rubric.hpp"

namespace testgen {

inline refscore::DecisionTree random_tree(refscore::detail::Rng& rng, int max_depth) {
  using namespace refscore;
  for (;;) {
    DecisionTree tree;
    int counter = 0;
    struct Pending {
      std::string id;
      int depth;
    };
    std::vector<Pending> stack;
    tree.root = "n0";
    stack.push_back({"n0", 1});
    ++counter;
    std::vector<std::pair<std::string, bool>> leaf_edges;  // (node, is_yes)
    while (!stack.empty()) {
      Pending cur = stack.back();
      stack.pop_back();
      RubricNode node;
      node.node_id = cur.id;
      node.criterion_text = "criterion " + cur.id;
      for (bool yes : {false, true}) {
        const bool make_child = cur.depth < max_depth && rng.bernoulli(0.45);
        if (make_child) {
          std::string child = "n" + std::to_string(counter++);
          (yes ? node.yes_edge : node.no_edge) = child;
          stack.push_back({child, cur.depth + 1});
        } else {
          (yes ? node.yes_edge : node.no_edge) = ScoreLevel(0);  // placeholder
          leaf_edges.emplace_back(cur.id, yes);
        }
      }
      tree.nodes.emplace(cur.id, std::move(node));
    }
    if (leaf_edges.size() < 4) continue;
    std::vector<int> scores = {0, 1, 2, 3};
    while (scores.size() < leaf_edges.size())
      scores.push_back(static_cast<int>(rng.below(4)));
    rng.shuffle(scores);
    for (std::size_t i = 0; i < leaf_edges.size(); ++i) {
      auto& node = tree.nodes.at(leaf_edges[i].first);
      (leaf_edges[i].second ? node.yes_edge : node.no_edge) = ScoreLevel(scores[i]);
    }
    try {
      validate_tree(tree);
      return tree;
    } catch (const Error&) {
      continue;  // coverage may fail for tiny trees; retry
    }
  }
}

}  // namespace testgen
