#include <catch2/catch.hpp>

#include "refscore/agreement.hpp"
#include "refscore/simulate.hpp"
#include "test_util.hpp"

using namespace refscore;

TEST_CASE("table-2-shaped spec generates 5278 reflections over 377 students", "[simulate]") {
  SyntheticSpec spec;  // defaults: 107/174/96 students, 14 weeks, 1 question
  spec.seed = 7;
  SyntheticResult result = simulate(spec);
  CHECK(result.dataset.reflections.size() == 5278);
  CHECK(result.dataset.grades.size() == 377);
  ValidationReport rep = validate_dataset(result.dataset);
  CHECK(rep.grid_complete());
  CHECK(rep.dangling_labels.empty());
  CHECK(rep.graded_without_reflections.empty());
  CHECK(rep.notes.empty());  // cohorts disjoint
  CHECK(rep.per_term.at(1).students == 107);
  CHECK(rep.per_term.at(2).students == 174);
  CHECK(rep.per_term.at(3).students == 96);
}

TEST_CASE("generated texts assess at their intended level under the mock", "[simulate]") {
  SyntheticSpec spec;
  spec.students_per_term = {20};
  spec.sessions_per_term = 8;
  spec.noise = 0.3;
  spec.seed = 21;
  SyntheticResult result = simulate(spec);
  for (const auto& r : result.dataset.reflections)
    CHECK(mock_level(r.text).value() == result.observed_levels.at(r.key));
}

TEST_CASE("a fixed seed reproduces byte-identical files", "[simulate]") {
  testutil::TempDir dir("simulate_bytes");
  SyntheticSpec spec;
  spec.students_per_term = {6, 5};
  spec.sessions_per_term = 4;
  spec.raters = 2;
  spec.rater_noise = 0.2;
  spec.noise = 0.2;
  spec.seed = 99;
  for (int run = 1; run <= 2; ++run) {
    SyntheticResult result = simulate(spec);
    write_synthetic(result, dir / ("r" + std::to_string(run) + ".jsonl"),
                    dir / ("g" + std::to_string(run) + ".csv"),
                    dir / ("l" + std::to_string(run) + ".csv"));
  }
  CHECK(testutil::read_file(dir / "r1.jsonl") == testutil::read_file(dir / "r2.jsonl"));
  CHECK(testutil::read_file(dir / "g1.csv") == testutil::read_file(dir / "g2.csv"));
  CHECK(testutil::read_file(dir / "l1.csv") == testutil::read_file(dir / "l2.csv"));
  CHECK_FALSE(testutil::read_file(dir / "r1.jsonl").empty());
}

TEST_CASE("noiseless generation maps sequence means exactly through the grade rule",
          "[simulate]") {
  SyntheticSpec spec;
  spec.students_per_term = {40};
  spec.sessions_per_term = 10;
  spec.noise = 0.0;
  spec.seed = 5;
  SyntheticResult result = simulate(spec);

  std::map<std::string, double> observed_mean;
  std::map<std::string, int> counts;
  for (const auto& r : result.dataset.reflections) {
    observed_mean[r.key.student_id] += result.observed_levels.at(r.key);
    counts[r.key.student_id] += 1;
  }
  for (auto& [student, sum] : observed_mean) sum /= counts.at(student);

  for (const auto& [student, grade] : result.dataset.grades) {
    const double mean = observed_mean.at(student);
    // with zero noise the observed mean equals the latent mean
    CHECK(mean == Approx(result.latent_means.at(student)));
    CHECK(spec.grade_for(mean) == grade);
    // the B threshold at 1.5 realizes "mean >= 1.5 <=> no risk"
    CHECK((grade_to_risk(grade) == RiskStatus::NoRisk) == (mean >= 1.5));
  }
}

TEST_CASE("planted disagreement moves consensus off the machine score exactly", "[simulate]") {
  SyntheticSpec spec;
  spec.students_per_term = {10};
  spec.sessions_per_term = 8;  // 80 labeled cells
  spec.raters = 3;
  spec.rater_disagreement = 0.25;
  spec.seed = 17;
  SyntheticResult result = simulate(spec);

  std::map<CellKey, ScoreLevel> machine;
  for (const auto& [key, level] : result.observed_levels) machine.emplace(key, ScoreLevel(level));
  const auto gold = consensus_gold(result.dataset.human_labels);
  REQUIRE(gold.size() == 80);
  const double em = exact_match_rate(machine, gold);
  CHECK(em == Approx(75.0));  // 0.25 * 80 planted cells is integral

  // raters agree with each other perfectly, so alpha is 1
  const double alpha =
      krippendorff_alpha(RatingsMatrix::from_labels(result.dataset.human_labels),
                         AlphaMetric::Nominal);
  CHECK(alpha == Approx(1.0));
}

TEST_CASE("rater noise lowers inter-rater agreement below 1", "[simulate]") {
  SyntheticSpec spec;
  spec.students_per_term = {12};
  spec.sessions_per_term = 6;
  spec.raters = 3;
  spec.rater_noise = 0.3;
  spec.seed = 23;
  SyntheticResult result = simulate(spec);
  const double alpha =
      krippendorff_alpha(RatingsMatrix::from_labels(result.dataset.human_labels),
                         AlphaMetric::Nominal);
  CHECK(alpha < 1.0);
  CHECK(alpha > 0.0);  // noise is mild; raters still mostly agree
}

TEST_CASE("multi-question generation fills the full grid", "[simulate]") {
  SyntheticSpec spec;
  spec.students_per_term = {5, 4};
  spec.sessions_per_term = 3;
  spec.questions = 2;
  spec.seed = 77;
  SyntheticResult result = simulate(spec);
  CHECK(result.dataset.reflections.size() == 9u * 3u * 2u);
  CHECK(result.dataset.question_ids() == std::set<std::string>{"q1", "q2"});
  CHECK(validate_dataset(result.dataset).grid_complete());
}

TEST_CASE("synthetic spec validation", "[simulate]") {
  SyntheticSpec spec;
  spec.grade_thresholds = {0.5, 0.5, 1.5, 2.5};
  CHECK_THROWS_WITH(spec.validate(), Catch::Matchers::Contains("strictly increasing"));
  spec = SyntheticSpec{};
  spec.students_per_term = {};
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = SyntheticSpec{};
  spec.noise = 1.5;
  CHECK_THROWS_AS(spec.validate(), Error);
}
