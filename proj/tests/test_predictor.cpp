#include <catch2/catch.hpp>

#include "oracles.hpp"
#include "refscore/detail/rng.hpp"
#include "refscore/predictor.hpp"
#include "test_util.hpp"

using namespace refscore;

namespace {

Dataset table2_shaped_dataset() {
  // Cohorts of 107 / 174 / 96 students, one question, grades cycling A..E.
  Dataset ds;
  ds.sessions_per_term = 14;
  const std::array<int, 3> cohort = {107, 174, 96};
  const std::string grades = "ABCDE";
  for (int term = 1; term <= 3; ++term) {
    for (int s = 0; s < cohort[static_cast<std::size_t>(term - 1)]; ++s) {
      const std::string id = "t" + std::to_string(term) + "s" + std::to_string(s);
      for (int w = 1; w <= 14; ++w) ds.reflections.push_back({{id, term, w, "q1"}, "text"});
      ds.grades.emplace(id, GradeLabel(grades[static_cast<std::size_t>(s % 5)]));
    }
  }
  return ds;
}

std::map<CellKey, ScoreLevel> constant_scores(const Dataset& ds, int level) {
  std::map<CellKey, ScoreLevel> scores;
  for (const auto& r : ds.reflections) scores.emplace(r.key, ScoreLevel(level));
  return scores;
}

}  // namespace

TEST_CASE("build_sequences produces one sequence per graded student", "[predictor]") {
  Dataset ds;
  ds.sessions_per_term = 14;
  for (int w = 1; w <= 14; ++w) ds.reflections.push_back({{"s1", 1, w, "q1"}, "text"});
  ds.grades.emplace("s1", GradeLabel('B'));

  SECTION("all cells scored 2 give [2] x 14") {
    auto seqs = build_sequences(constant_scores(ds, 2), ds);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].scores == std::vector<int>(14, 2));
    CHECK(seqs[0].term == 1);
    CHECK_FALSE(seqs[0].flagged_no_reflections);
  }

  SECTION("missing week 7 is imputed as level 0") {
    auto scores = constant_scores(ds, 2);
    scores.erase(CellKey{"s1", 1, 7, "q1"});
    auto seqs = build_sequences(scores, ds);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].scores[6] == 0);
    CHECK(seqs[0].scores[0] == 2);
  }

  SECTION("two questions scored 2 and 3 average to 3 (round half-up)") {
    Dataset two_q = ds;
    for (int w = 1; w <= 14; ++w) two_q.reflections.push_back({{"s1", 1, w, "q2"}, "text"});
    std::map<CellKey, ScoreLevel> scores;
    for (int w = 1; w <= 14; ++w) {
      scores.emplace(CellKey{"s1", 1, w, "q1"}, ScoreLevel(2));
      scores.emplace(CellKey{"s1", 1, w, "q2"}, ScoreLevel(3));
    }
    auto seqs = build_sequences(scores, two_q);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].scores == std::vector<int>(14, 3));
  }

  SECTION("graded student with no reflections gets all zeros, flagged") {
    ds.grades.emplace("ghost", GradeLabel('E'));
    auto seqs = build_sequences(constant_scores(ds, 1), ds);
    REQUIRE(seqs.size() == 2);
    const auto& ghost = seqs[0].student_id == "ghost" ? seqs[0] : seqs[1];
    CHECK(ghost.flagged_no_reflections);
    CHECK(ghost.scores == std::vector<int>(14, 0));
  }
}

TEST_CASE("featurize on the all-zeros sequence", "[predictor]") {
  ScoreSequence seq;
  seq.student_id = "s";
  seq.term = 1;
  seq.scores.assign(14, 0);
  FeatureVector f = featurize(seq);
  CHECK(f.mean == 0.0);
  CHECK(f.stddev == 0.0);
  CHECK(f.slope == 0.0);
  CHECK(f.level_counts == std::array<double, 4>{14, 0, 0, 0});
  CHECK(f.longest_zero_run == 14);
  CHECK(f.last4_mean == 0.0);
  CHECK(f.values().size() == 9);
}

TEST_CASE("featurize trend slope", "[predictor]") {
  SECTION("repeating ramp has positive slope") {
    ScoreSequence seq;
    seq.scores = {0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
    CHECK(featurize(seq).slope > 0.0);
  }
  SECTION("[3]x7 + [0]x7 matches the closed-form least-squares oracle") {
    ScoreSequence seq;
    seq.scores.assign(7, 3);
    seq.scores.insert(seq.scores.end(), 7, 0);
    const double expected =
        oracle::least_squares_slope(std::vector<double>(seq.scores.begin(), seq.scores.end()));
    const FeatureVector f = featurize(seq);
    CHECK(f.slope < 0.0);
    CHECK(f.slope == Approx(expected).margin(1e-12));
    CHECK(f.slope == Approx(-21.0 / 65.0).margin(1e-12));  // hand-computed
  }
}

TEST_CASE("featurize invariants on random sequences", "[predictor]") {
  refscore::detail::Rng rng(4242);
  for (int trial = 0; trial < 50; ++trial) {
    ScoreSequence seq;
    const int t = 2 + static_cast<int>(rng.below(19));  // slope needs >= 2 points
    for (int i = 0; i < t; ++i) seq.scores.push_back(static_cast<int>(rng.below(4)));
    const FeatureVector f = featurize(seq);
    double count_sum = 0;
    for (double c : f.level_counts) count_sum += c;
    CHECK(count_sum == static_cast<double>(t));
    for (double v : f.values()) CHECK(std::isfinite(v));
    CHECK(f.slope == Approx(oracle::least_squares_slope(
                         std::vector<double>(seq.scores.begin(), seq.scores.end())))
                         .margin(1e-12));
  }
}

TEST_CASE("split_by_term on a table-2-shaped dataset yields 281/96", "[predictor]") {
  Dataset ds = table2_shaped_dataset();
  TermSplit split = split_by_term(ds, {1, 2}, 3);
  CHECK(split.train_students.size() == 281);
  CHECK(split.test_students.size() == 96);

  std::set<std::string> train(split.train_students.begin(), split.train_students.end());
  for (const auto& s : split.test_students) CHECK_FALSE(train.count(s));

  // union of splits covers exactly the graded students of the selected terms
  std::set<std::string> both(split.train_students.begin(), split.train_students.end());
  both.insert(split.test_students.begin(), split.test_students.end());
  CHECK(both.size() == ds.grades.size());
}

TEST_CASE("split_by_term input validation", "[predictor]") {
  Dataset ds = table2_shaped_dataset();
  CHECK_THROWS_WITH(split_by_term(ds, {1, 3}, 3), Catch::Matchers::Contains("also appears"));
  CHECK_THROWS_WITH(split_by_term(ds, {}, 3), Catch::Matchers::Contains("no train terms"));
  CHECK_THROWS_WITH(split_by_term(ds, {1, 2}, 9), Catch::Matchers::Contains("empty test"));
  // a student spanning both sides violates the cohort invariant
  Dataset bad = ds;
  bad.reflections.push_back({{"t1s0", 3, 1, "q1"}, "x"});
  CHECK_THROWS_WITH(split_by_term(bad, {1, 2}, 3), Catch::Matchers::Contains("both"));
}

TEST_CASE("assemble_task_data aligns sequences, features and labels", "[predictor]") {
  Dataset ds = table2_shaped_dataset();
  auto seqs = build_sequences(constant_scores(ds, 2), ds);
  TermSplit split = split_by_term(ds, {1, 2}, 3);
  TaskData data = assemble_task_data(seqs, ds, split.test_students);
  REQUIRE(data.students.size() == 96);
  CHECK(data.sequences.size() == 96);
  CHECK(data.feature_rows.size() == 96);
  CHECK(data.risk_labels.size() == 96);
  CHECK(data.grade_labels.size() == 96);
  // 96 students cycling A..E: 20 A + 19 B -> 39 NoRisk, 57 AtRisk
  int at_risk = 0;
  for (const auto& l : data.risk_labels)
    if (l == "AtRisk") ++at_risk;
  CHECK(at_risk == 57);
  auto rows = data.rows_for(PredictionTask::Grade);
  CHECK(rows[0].label == data.grade_labels[0]);
}

TEST_CASE("majority baseline accuracy", "[predictor]") {
  CHECK(majority_class_baseline_accuracy({"A", "A", "B"}) == Approx(100.0 * 2 / 3));
  std::vector<std::string> gold(42, "AtRisk");
  gold.insert(gold.end(), 54, "NoRisk");
  CHECK(majority_class_baseline_accuracy(gold) == Approx(56.25));
}
