#include <catch2/catch.hpp>

#include "oracles.hpp"
#include "refscore/detail/rng.hpp"
#include "refscore/random_forest.hpp"
#include "test_util.hpp"

using namespace refscore;

namespace {

// One feature, classes perfectly separated at 0.5.
std::vector<LabeledRow> separable_rows(int n_per_class) {
  std::vector<LabeledRow> rows;
  refscore::detail::Rng rng(88);
  for (int i = 0; i < n_per_class; ++i) {
    rows.push_back({"lo" + std::to_string(i), {rng.uniform(0.0, 0.4)}, "low"});
    rows.push_back({"hi" + std::to_string(i), {rng.uniform(0.6, 1.0)}, "high"});
  }
  return rows;
}

std::vector<LabeledRow> random_rows(refscore::detail::Rng& rng, int n, int d,
                                    const std::vector<std::string>& classes) {
  std::vector<LabeledRow> rows;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x;
    for (int j = 0; j < d; ++j) x.push_back(rng.uniform(0.0, 1.0));
    rows.push_back({"s" + std::to_string(i), x, classes[rng.below(classes.size())]});
  }
  return rows;
}

nlohmann::json stub_model_json(const std::vector<std::string>& leaf_classes,
                               const std::vector<std::string>& classes) {
  // Hand-built forest whose trees are single leaves, to pin the vote rule.
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& c : leaf_classes) {
    int idx = -1;
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == c) idx = static_cast<int>(i);
    trees.push_back(nlohmann::json::array(
        {{{"f", -1}, {"t", 0.0}, {"l", -1}, {"r", -1}, {"c", idx}}}));
  }
  return nlohmann::json{{"schema_version", 1},
                        {"kind", "random_forest"},
                        {"classes", classes},
                        {"feature_dim", 1},
                        {"hyper",
                         {{"n_trees", static_cast<int>(leaf_classes.size())},
                          {"max_depth", 0},
                          {"mtry", 0},
                          {"min_leaf", 1},
                          {"seed", 0}}},
                        {"trees", trees}};
}

}  // namespace

TEST_CASE("separable one-feature data trains to 100% training accuracy", "[random_forest]") {
  auto rows = separable_rows(20);
  RfHyper hyper;
  hyper.n_trees = 10;
  hyper.seed = 1;
  RandomForestModel model = RandomForestModel::train(rows, hyper);
  for (const auto& row : rows) CHECK(model.predict(row.features) == row.label);
}

TEST_CASE("forest training is deterministic under a fixed seed", "[random_forest]") {
  refscore::detail::Rng rng(5);
  auto rows = random_rows(rng, 60, 4, {"a", "b", "c"});
  RfHyper hyper;
  hyper.n_trees = 25;
  hyper.seed = 9;
  RandomForestModel m1 = RandomForestModel::train(rows, hyper);
  RandomForestModel m2 = RandomForestModel::train(rows, hyper);
  for (int i = 0; i < 30; ++i) {
    std::vector<double> x = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1),
                             rng.uniform(0, 1)};
    CHECK(m1.predict(x) == m2.predict(x));
    CHECK(m1.vote_histogram(x) == m2.vote_histogram(x));
  }
  CHECK(m1.to_json() == m2.to_json());
}

TEST_CASE("row order does not affect the trained forest", "[random_forest]") {
  refscore::detail::Rng rng(6);
  auto rows = random_rows(rng, 50, 3, {"a", "b"});
  RfHyper hyper;
  hyper.n_trees = 15;
  hyper.seed = 4;
  RandomForestModel base = RandomForestModel::train(rows, hyper);
  auto shuffled = rows;
  rng.shuffle(shuffled);
  RandomForestModel permuted = RandomForestModel::train(shuffled, hyper);
  CHECK(base.to_json() == permuted.to_json());
}

TEST_CASE("vote rule: majority with ties toward the smallest label", "[random_forest]") {
  const std::vector<std::string> classes = {"A", "B"};
  SECTION("3 trees voting A,A,B give A") {
    auto model = RandomForestModel::from_json(stub_model_json({"A", "A", "B"}, classes));
    CHECK(model.predict({0.0}) == "A");
    CHECK(model.vote_histogram({0.0}) == std::vector<int>{2, 1});
  }
  SECTION("2 trees voting A,B tie toward A") {
    auto model = RandomForestModel::from_json(stub_model_json({"B", "A"}, classes));
    CHECK(model.predict({0.0}) == "A");
  }
  SECTION("tie goes to lexicographically smallest even when listed later") {
    auto model =
        RandomForestModel::from_json(stub_model_json({"B", "B", "A", "A"}, {"A", "B"}));
    CHECK(model.predict({0.0}) == "A");
  }
}

TEST_CASE("vote histogram matches a brute-force tally oracle", "[random_forest]") {
  refscore::detail::Rng rng(86);
  auto rows = random_rows(rng, 40, 3, {"x", "y", "z"});
  RfHyper hyper;
  hyper.n_trees = 21;
  hyper.seed = 3;
  RandomForestModel model = RandomForestModel::train(rows, hyper);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> x = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    const auto votes = model.vote_histogram(x);
    // reconstruct per-tree votes as label strings and tally independently
    std::vector<std::string> expanded;
    for (std::size_t c = 0; c < votes.size(); ++c)
      for (int k = 0; k < votes[c]; ++k) expanded.push_back(model.classes()[c]);
    REQUIRE(expanded.size() == model.tree_count());
    CHECK(model.predict(x) == oracle::majority_vote(expanded));
  }
}

TEST_CASE("feature-column permutation with mtry == d preserves predictions", "[random_forest]") {
  // Features are strictly monotone views of one latent value, so every split
  // candidate induces the same row partition in any column order and the only
  // remaining cross-column variation is tie-breaking between equivalent
  // splits. Predictions must then be identical under column permutation.
  refscore::detail::Rng rng(7);
  const int d = 3;
  auto latent_features = [](double u) {
    return std::vector<double>{u, 2.0 * u + 1.0, u * u};
  };
  std::vector<LabeledRow> rows;
  std::vector<double> latents;
  for (int i = 0; i < 60; ++i) {
    const double u = rng.uniform(0.0, 1.0);
    latents.push_back(u);
    const double noisy = u + rng.uniform(-0.05, 0.05);
    rows.push_back({"s" + std::to_string(i), latent_features(u), noisy > 0.5 ? "a" : "b"});
  }
  RfHyper hyper;
  hyper.n_trees = 12;
  hyper.seed = 11;
  hyper.mtry = d;  // no feature subsampling
  RandomForestModel base = RandomForestModel::train(rows, hyper);

  const std::vector<std::size_t> perm = {2, 0, 1};
  auto permuted_rows = rows;
  for (auto& r : permuted_rows) {
    std::vector<double> x(d);
    for (int j = 0; j < d; ++j)
      x[static_cast<std::size_t>(j)] = r.features[perm[static_cast<std::size_t>(j)]];
    r.features = x;
  }
  RandomForestModel permuted = RandomForestModel::train(permuted_rows, hyper);

  for (int i = 0; i < 40; ++i) {
    const std::vector<double> x = latent_features(rng.uniform(0.0, 1.0));
    std::vector<double> px(d);
    for (int j = 0; j < d; ++j)
      px[static_cast<std::size_t>(j)] = x[perm[static_cast<std::size_t>(j)]];
    CHECK(base.predict(x) == permuted.predict(px));
  }
}

TEST_CASE("forest model files reload to bit-identical predictions", "[random_forest]") {
  testutil::TempDir dir("rf_model");
  refscore::detail::Rng rng(17);
  auto rows = random_rows(rng, 50, 4, {"a", "b", "c"});
  RfHyper hyper;
  hyper.n_trees = 10;
  hyper.seed = 2;
  RandomForestModel model = RandomForestModel::train(rows, hyper);
  model.save(dir / "rf.json");
  RandomForestModel loaded = RandomForestModel::load(dir / "rf.json");
  CHECK(loaded.to_json() == model.to_json());
  for (int i = 0; i < 25; ++i) {
    std::vector<double> x = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1),
                             rng.uniform(0, 1)};
    CHECK(loaded.predict(x) == model.predict(x));
    CHECK(loaded.vote_histogram(x) == model.vote_histogram(x));
  }
}

TEST_CASE("inverse class weights shift mixed leaves toward the minority", "[random_forest]") {
  // 20 majority rows below 0.5, then an overlap region holding 3 majority and
  // 2 minority rows. A depth-1 tree splits at 0.5; unweighted the right leaf
  // stays majority, inverse-weighted the minority mass wins it.
  std::vector<LabeledRow> rows;
  for (int i = 0; i < 20; ++i)
    rows.push_back({"a" + std::to_string(i), {0.01 * i}, "common"});
  rows.push_back({"m1", {0.6}, "common"});
  rows.push_back({"m2", {0.7}, "common"});
  rows.push_back({"m3", {0.8}, "common"});
  rows.push_back({"r1", {0.65}, "rare"});
  rows.push_back({"r2", {0.75}, "rare"});

  RfHyper hyper;
  hyper.n_trees = 1;
  hyper.max_depth = 1;
  hyper.min_leaf = 5;
  hyper.mtry = 1;
  hyper.seed = 3;
  RandomForestModel plain = RandomForestModel::train(rows, hyper);
  CHECK(plain.predict({0.7}) == "common");

  hyper.inverse_class_weights = true;
  RandomForestModel weighted = RandomForestModel::train(rows, hyper);
  CHECK(weighted.predict({0.7}) == "rare");
  CHECK(weighted.predict({0.1}) == "common");

  SECTION("balanced classes make weighting a no-op") {
    refscore::detail::Rng rng(12);
    auto balanced = random_rows(rng, 40, 2, {"x", "y"});
    // force exact balance
    for (std::size_t i = 0; i < balanced.size(); ++i) balanced[i].label = i % 2 ? "x" : "y";
    RfHyper h2;
    h2.n_trees = 7;
    h2.seed = 5;
    RandomForestModel off = RandomForestModel::train(balanced, h2);
    h2.inverse_class_weights = true;
    RandomForestModel on = RandomForestModel::train(balanced, h2);
    auto off_json = off.to_json();
    auto on_json = on.to_json();
    off_json.erase("hyper");
    on_json.erase("hyper");
    CHECK(off_json == on_json);
  }
}

TEST_CASE("training rejects degenerate inputs", "[random_forest]") {
  RfHyper hyper;
  CHECK_THROWS_WITH(RandomForestModel::train({}, hyper), Catch::Matchers::Contains("empty"));
  std::vector<LabeledRow> one_class = {{"a", {0.1}, "x"}, {"b", {0.2}, "x"}};
  CHECK_THROWS_WITH(RandomForestModel::train(one_class, hyper),
                    Catch::Matchers::Contains("single class"));
  std::vector<LabeledRow> ok = {{"a", {0.1}, "x"}, {"b", {0.9}, "y"}};
  hyper.n_trees = 3;
  RandomForestModel model = RandomForestModel::train(ok, hyper);
  CHECK_THROWS_WITH(model.predict({0.1, 0.2}), Catch::Matchers::Contains("dimension"));
}
