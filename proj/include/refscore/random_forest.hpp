#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "refscore/corpus.hpp"
#include "refscore/detail/rng.hpp"

namespace refscore {

inline constexpr int kForestModelSchemaVersion = 1;

struct RfHyper {
  int n_trees = 200;
  int max_depth = 0;  // 0 = unbounded
  int mtry = 0;       // features tried per split; 0 = ceil(sqrt(d))
  int min_leaf = 1;   // always a row count, also under class weighting
  bool inverse_class_weights = false;  // weight classes by N/(K * n_c)
  std::uint64_t seed = 0;
};

struct LabeledRow {
  std::string id;  // bootstrap draws index the rows sorted by this id
  std::vector<double> features;
  std::string label;
};

/// CART ensemble over Gini impurity. Trees are grown on bootstrap samples
/// drawn as index draws from the rows sorted by id, so training is invariant
/// to input row order under a fixed seed. Each split searches a fresh random
/// feature subset of size mtry.
class RandomForestModel {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;   // x[feature] < threshold
    int right = -1;  // x[feature] >= threshold
    int leaf_class = -1;
  };
  using Tree = std::vector<Node>;

  static RandomForestModel train(std::vector<LabeledRow> rows, const RfHyper& hyper) {
    if (rows.empty()) throw Error("random forest: empty training set");
    if (hyper.n_trees < 1) throw Error("random forest: n_trees must be >= 1");
    RandomForestModel model;
    model.hyper_ = hyper;
    model.dim_ = static_cast<int>(rows.front().features.size());
    for (const auto& r : rows)
      if (static_cast<int>(r.features.size()) != model.dim_)
        throw Error("random forest: inconsistent feature dimension");

    std::sort(rows.begin(), rows.end(),
              [](const LabeledRow& a, const LabeledRow& b) { return a.id < b.id; });

    std::set<std::string> class_set;
    for (const auto& r : rows) class_set.insert(r.label);
    if (class_set.size() < 2) throw Error("random forest: training set has a single class");
    model.classes_.assign(class_set.begin(), class_set.end());
    std::map<std::string, int> class_index;
    for (std::size_t i = 0; i < model.classes_.size(); ++i)
      class_index[model.classes_[i]] = static_cast<int>(i);
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (const auto& r : rows) labels.push_back(class_index.at(r.label));

    std::vector<double> class_weight(model.classes_.size(), 1.0);
    if (hyper.inverse_class_weights) {
      std::vector<double> counts(model.classes_.size(), 0.0);
      for (int l : labels) counts[static_cast<std::size_t>(l)] += 1.0;
      for (std::size_t c = 0; c < counts.size(); ++c)
        class_weight[c] = static_cast<double>(labels.size()) /
                          (static_cast<double>(counts.size()) * counts[c]);
    }

    const int mtry = hyper.mtry > 0
                         ? std::min(hyper.mtry, model.dim_)
                         : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(model.dim_))));
    const std::size_t n = rows.size();
    model.trees_.reserve(static_cast<std::size_t>(hyper.n_trees));
    for (int t = 0; t < hyper.n_trees; ++t) {
      detail::Rng rng(detail::mix_seed(hyper.seed, static_cast<std::uint64_t>(t)));
      std::vector<std::size_t> sample(n);
      for (auto& idx : sample) idx = static_cast<std::size_t>(rng.below(n));
      Tree tree;
      Builder builder{rows,           labels, static_cast<int>(model.classes_.size()),
                      mtry,           hyper.min_leaf, hyper.max_depth,
                      rng,            tree,   model.dim_,
                      class_weight};
      builder.build(sample, 1);
      model.trees_.push_back(std::move(tree));
    }
    return model;
  }

  /// Majority vote across trees; ties break toward the lexicographically
  /// smallest class label.
  std::string predict(const std::vector<double>& x) const {
    const auto votes = vote_histogram(x);
    int best = 0;
    for (std::size_t c = 1; c < votes.size(); ++c)
      if (votes[c] > votes[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    return classes_[static_cast<std::size_t>(best)];
  }

  /// Per-class vote counts, indexed like classes().
  std::vector<int> vote_histogram(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != dim_)
      throw Error("random forest: feature dimension mismatch (" + std::to_string(x.size()) +
                  " vs " + std::to_string(dim_) + ")");
    std::vector<int> votes(classes_.size(), 0);
    for (const auto& tree : trees_) {
      int i = 0;
      while (tree[static_cast<std::size_t>(i)].feature >= 0) {
        const Node& nd = tree[static_cast<std::size_t>(i)];
        i = x[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
      }
      votes[static_cast<std::size_t>(tree[static_cast<std::size_t>(i)].leaf_class)] += 1;
    }
    return votes;
  }

  std::vector<std::string> predict_batch(const std::vector<std::vector<double>>& xs) const {
    std::vector<std::string> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(predict(x));
    return out;
  }

  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t tree_count() const { return trees_.size(); }
  int feature_dim() const { return dim_; }

  nlohmann::json to_json() const {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& tree : trees_) {
      nlohmann::json jt = nlohmann::json::array();
      for (const auto& nd : tree)
        jt.push_back({{"f", nd.feature},
                      {"t", nd.threshold},
                      {"l", nd.left},
                      {"r", nd.right},
                      {"c", nd.leaf_class}});
      trees.push_back(jt);
    }
    return nlohmann::json{{"schema_version", kForestModelSchemaVersion},
                          {"kind", "random_forest"},
                          {"classes", classes_},
                          {"feature_dim", dim_},
                          {"hyper",
                           {{"n_trees", hyper_.n_trees},
                            {"max_depth", hyper_.max_depth},
                            {"mtry", hyper_.mtry},
                            {"min_leaf", hyper_.min_leaf},
                            {"inverse_class_weights", hyper_.inverse_class_weights},
                            {"seed", hyper_.seed}}},
                          {"trees", trees}};
  }

  static RandomForestModel from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "random_forest" ||
        j.value("schema_version", -1) != kForestModelSchemaVersion)
      throw Error("random forest: not a supported model file");
    RandomForestModel model;
    model.classes_ = j.at("classes").get<std::vector<std::string>>();
    model.dim_ = j.at("feature_dim").get<int>();
    const auto& h = j.at("hyper");
    model.hyper_ = {h.at("n_trees").get<int>(),  h.at("max_depth").get<int>(),
                    h.at("mtry").get<int>(),     h.at("min_leaf").get<int>(),
                    h.value("inverse_class_weights", false), h.at("seed").get<std::uint64_t>()};
    for (const auto& jt : j.at("trees")) {
      Tree tree;
      for (const auto& jn : jt)
        tree.push_back({jn.at("f").get<int>(), jn.at("t").get<double>(), jn.at("l").get<int>(),
                        jn.at("r").get<int>(), jn.at("c").get<int>()});
      model.trees_.push_back(std::move(tree));
    }
    return model;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write model file: " + path.string());
    out << to_json().dump() << "\n";
  }

  static RandomForestModel load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model file: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("model file " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  struct Builder {
    const std::vector<LabeledRow>& rows;
    const std::vector<int>& labels;
    int n_classes;
    int mtry;
    int min_leaf;
    int max_depth;
    detail::Rng& rng;
    Tree& tree;
    int dim;
    const std::vector<double>& class_weight;

    int majority(const std::vector<std::size_t>& idx) const {
      std::vector<double> mass(static_cast<std::size_t>(n_classes), 0.0);
      for (auto i : idx)
        mass[static_cast<std::size_t>(labels[i])] += class_weight[static_cast<std::size_t>(labels[i])];
      int best = 0;
      for (int c = 1; c < n_classes; ++c)
        if (mass[static_cast<std::size_t>(c)] > mass[static_cast<std::size_t>(best)]) best = c;
      return best;
    }

    int make_leaf(const std::vector<std::size_t>& idx) {
      tree.push_back(Node{-1, 0.0, -1, -1, majority(idx)});
      return static_cast<int>(tree.size()) - 1;
    }

    // Random subset of feature indices, mtry of dim.
    std::vector<int> feature_subset() {
      if (mtry >= dim) {
        std::vector<int> all(static_cast<std::size_t>(dim));
        std::iota(all.begin(), all.end(), 0);
        return all;
      }
      std::vector<int> pool(static_cast<std::size_t>(dim));
      std::iota(pool.begin(), pool.end(), 0);
      rng.shuffle(pool);
      pool.resize(static_cast<std::size_t>(mtry));
      std::sort(pool.begin(), pool.end());  // deterministic search order
      return pool;
    }

    struct Split {
      bool found = false;
      int feature = -1;
      double threshold = 0.0;
      double impurity = std::numeric_limits<double>::infinity();
    };

    Split best_split(const std::vector<std::size_t>& idx) {
      Split best;
      for (int f : feature_subset()) {
        std::vector<std::pair<double, int>> ordered;
        ordered.reserve(idx.size());
        for (auto i : idx)
          ordered.emplace_back(rows[i].features[static_cast<std::size_t>(f)], labels[i]);
        std::sort(ordered.begin(), ordered.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        // Gini over class masses (rows x class weight); min_leaf stays a row count.
        std::vector<double> left(static_cast<std::size_t>(n_classes), 0.0);
        std::vector<double> right(static_cast<std::size_t>(n_classes), 0.0);
        double ml = 0, mr = 0;
        for (const auto& [v, c] : ordered) {
          (void)v;
          right[static_cast<std::size_t>(c)] += class_weight[static_cast<std::size_t>(c)];
          mr += class_weight[static_cast<std::size_t>(c)];
        }
        const double m_total = mr;
        std::size_t nl = 0;
        for (std::size_t k = 0; k + 1 < ordered.size(); ++k) {
          const double w = class_weight[static_cast<std::size_t>(ordered[k].second)];
          left[static_cast<std::size_t>(ordered[k].second)] += w;
          right[static_cast<std::size_t>(ordered[k].second)] -= w;
          ml += w;
          mr -= w;
          ++nl;
          if (ordered[k].first == ordered[k + 1].first) continue;  // not a boundary
          const std::size_t nr = ordered.size() - nl;
          if (nl < static_cast<std::size_t>(min_leaf) || nr < static_cast<std::size_t>(min_leaf))
            continue;
          double gl = 1.0, gr = 1.0;
          for (int c = 0; c < n_classes; ++c) {
            const double pl = left[static_cast<std::size_t>(c)] / ml;
            const double pr = right[static_cast<std::size_t>(c)] / mr;
            gl -= pl * pl;
            gr -= pr * pr;
          }
          const double weighted = (ml * gl + mr * gr) / m_total;
          const double threshold = ordered[k].first + (ordered[k + 1].first - ordered[k].first) / 2.0;
          if (weighted + 1e-12 < best.impurity) {
            best = {true, f, threshold, weighted};
          }
        }
      }
      return best;
    }

    int build(const std::vector<std::size_t>& idx, int depth) {
      bool pure = true;
      for (std::size_t k = 1; k < idx.size(); ++k)
        if (labels[idx[k]] != labels[idx[0]]) {
          pure = false;
          break;
        }
      if (pure || static_cast<int>(idx.size()) < 2 * min_leaf ||
          (max_depth > 0 && depth > max_depth))
        return make_leaf(idx);

      Split split = best_split(idx);
      if (!split.found) return make_leaf(idx);

      std::vector<std::size_t> left_idx, right_idx;
      for (auto i : idx) {
        if (rows[i].features[static_cast<std::size_t>(split.feature)] < split.threshold)
          left_idx.push_back(i);
        else
          right_idx.push_back(i);
      }
      const int self = static_cast<int>(tree.size());
      tree.push_back(Node{split.feature, split.threshold, -1, -1, -1});
      const int left = build(left_idx, depth + 1);
      const int right = build(right_idx, depth + 1);
      tree[static_cast<std::size_t>(self)].left = left;
      tree[static_cast<std::size_t>(self)].right = right;
      return self;
    }
  };

  RfHyper hyper_;
  int dim_ = 0;
  std::vector<std::string> classes_;
  std::vector<Tree> trees_;
};

}  // namespace refscore
