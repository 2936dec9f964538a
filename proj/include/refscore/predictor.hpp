#pragma once

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "refscore/assessor.hpp"
#include "refscore/corpus.hpp"
#include "refscore/metrics.hpp"
#include "refscore/random_forest.hpp"
#include "refscore/recurrent.hpp"

namespace refscore {

/// Per-student ordered scores over the term's sessions. Multiple questions in
/// a week are averaged then rounded half-up; absent or failed cells count as
/// level 0 (the level that covers "nothing was submitted").
struct ScoreSequence {
  std::string student_id;
  int term = -1;  // -1 when the student has a grade but no reflections
  std::vector<int> scores;
  bool flagged_no_reflections = false;

  bool operator==(const ScoreSequence&) const = default;
};

inline std::vector<ScoreSequence> build_sequences(const std::map<CellKey, ScoreLevel>& scores,
                                                  const Dataset& dataset) {
  const auto questions = dataset.question_ids();
  std::map<std::string, int> term_of;
  for (const auto& r : dataset.reflections) term_of.emplace(r.key.student_id, r.key.term);

  std::vector<ScoreSequence> out;
  for (const auto& [student, grade] : dataset.grades) {
    (void)grade;
    ScoreSequence seq;
    seq.student_id = student;
    auto it = term_of.find(student);
    if (it == term_of.end()) {
      seq.flagged_no_reflections = true;
      seq.scores.assign(static_cast<std::size_t>(dataset.sessions_per_term), 0);
      out.push_back(std::move(seq));
      continue;
    }
    seq.term = it->second;
    for (int week = 1; week <= dataset.sessions_per_term; ++week) {
      double sum = 0;
      for (const auto& q : questions) {
        auto sit = scores.find(CellKey{student, seq.term, week, q});
        sum += sit == scores.end() ? 0.0 : static_cast<double>(sit->second.value());
      }
      const double mean = sum / static_cast<double>(questions.empty() ? 1 : questions.size());
      seq.scores.push_back(static_cast<int>(std::floor(mean + 0.5)));  // round half-up
    }
    out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Nine aggregate features per sequence: mean, std (population), least-squares
/// trend slope over weeks, count per level (4), longest zero run, mean of the
/// last four weeks.
struct FeatureVector {
  double mean = 0;
  double stddev = 0;
  double slope = 0;
  std::array<double, 4> level_counts{};
  double longest_zero_run = 0;
  double last4_mean = 0;

  std::vector<double> values() const {
    return {mean,          stddev,         slope,           level_counts[0],
            level_counts[1], level_counts[2], level_counts[3], longest_zero_run,
            last4_mean};
  }
};

inline FeatureVector featurize(const ScoreSequence& seq) {
  if (seq.scores.empty()) throw Error("featurize: empty sequence");
  FeatureVector f;
  const double n = static_cast<double>(seq.scores.size());
  for (int v : seq.scores) {
    f.mean += v;
    f.level_counts[static_cast<std::size_t>(v)] += 1;
  }
  f.mean /= n;
  double ss = 0;
  for (int v : seq.scores) ss += (v - f.mean) * (v - f.mean);
  f.stddev = std::sqrt(ss / n);

  const double xbar = (n + 1.0) / 2.0;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < seq.scores.size(); ++i) {
    const double dx = static_cast<double>(i + 1) - xbar;
    num += dx * (seq.scores[i] - f.mean);
    den += dx * dx;
  }
  f.slope = den > 0 ? num / den : 0.0;

  int run = 0, best = 0;
  for (int v : seq.scores) {
    run = v == 0 ? run + 1 : 0;
    best = std::max(best, run);
  }
  f.longest_zero_run = best;

  const std::size_t tail = std::min<std::size_t>(4, seq.scores.size());
  double tail_sum = 0;
  for (std::size_t i = seq.scores.size() - tail; i < seq.scores.size(); ++i)
    tail_sum += seq.scores[i];
  f.last4_mean = tail_sum / static_cast<double>(tail);
  return f;
}

// ---------------------------------------------------------------------------
// Term-based holdout
// ---------------------------------------------------------------------------

struct TermSplit {
  std::vector<std::string> train_students;
  std::vector<std::string> test_students;
};

/// Splits graded students by cohort: training terms vs one holdout term.
/// Guarantees the two sides are student-disjoint.
inline TermSplit split_by_term(const Dataset& dataset, const std::set<int>& train_terms,
                               int test_term) {
  if (train_terms.count(test_term))
    throw Error("split: test term " + std::to_string(test_term) + " also appears in train terms");
  if (train_terms.empty()) throw Error("split: no train terms given");

  std::map<std::string, std::set<int>> terms_of;
  for (const auto& r : dataset.reflections) terms_of[r.key.student_id].insert(r.key.term);

  TermSplit split;
  for (const auto& [student, grade] : dataset.grades) {
    (void)grade;
    auto it = terms_of.find(student);
    if (it == terms_of.end()) continue;  // no reflections: cannot be placed
    bool in_train = false, in_test = false;
    for (int t : it->second) {
      if (train_terms.count(t)) in_train = true;
      if (t == test_term) in_test = true;
    }
    if (in_train && in_test)
      throw Error("split: student " + student + " appears in both train and test terms");
    if (in_train) split.train_students.push_back(student);
    if (in_test) split.test_students.push_back(student);
  }
  if (split.train_students.empty()) throw Error("split: empty training split");
  if (split.test_students.empty()) throw Error("split: empty test split");
  return split;
}

// ---------------------------------------------------------------------------
// Task assembly
// ---------------------------------------------------------------------------

inline std::string risk_class(GradeLabel g) { return std::string(risk_label(grade_to_risk(g))); }

enum class PredictionTask { AtRisk, Grade };

inline std::string_view task_name(PredictionTask t) {
  return t == PredictionTask::AtRisk ? "at_risk" : "grade";
}

/// Aligned per-student modeling inputs for one student subset.
struct TaskData {
  std::vector<std::string> students;
  std::vector<std::vector<int>> sequences;       // recurrent input
  std::vector<LabeledRow> feature_rows;          // forest input (label set per task)
  std::vector<std::string> risk_labels;
  std::vector<std::string> grade_labels;

  std::vector<std::vector<double>> feature_matrix() const {
    std::vector<std::vector<double>> out;
    out.reserve(feature_rows.size());
    for (const auto& r : feature_rows) out.push_back(r.features);
    return out;
  }

  const std::vector<std::string>& labels(PredictionTask task) const {
    return task == PredictionTask::AtRisk ? risk_labels : grade_labels;
  }

  std::vector<LabeledRow> rows_for(PredictionTask task) const {
    std::vector<LabeledRow> rows = feature_rows;
    const auto& l = labels(task);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].label = l[i];
    return rows;
  }
};

inline TaskData assemble_task_data(const std::vector<ScoreSequence>& sequences,
                                   const Dataset& dataset,
                                   const std::vector<std::string>& students) {
  std::map<std::string, const ScoreSequence*> by_student;
  for (const auto& s : sequences) by_student[s.student_id] = &s;
  TaskData data;
  for (const auto& student : students) {
    auto it = by_student.find(student);
    if (it == by_student.end())
      throw Error("task data: no sequence for student " + student);
    auto git = dataset.grades.find(student);
    if (git == dataset.grades.end())
      throw Error("task data: no grade for student " + student);
    data.students.push_back(student);
    data.sequences.push_back(it->second->scores);
    data.feature_rows.push_back(LabeledRow{student, featurize(*it->second).values(), ""});
    data.risk_labels.push_back(risk_class(git->second));
    data.grade_labels.push_back(git->second.str());
  }
  return data;
}

/// Most frequent gold label; the floor any useful model must beat.
inline double majority_class_baseline_accuracy(const std::vector<std::string>& gold) {
  if (gold.empty()) throw Error("baseline: empty gold labels");
  std::map<std::string, int> counts;
  for (const auto& g : gold) counts[g]++;
  int best = 0;
  for (const auto& [label, count] : counts) best = std::max(best, count);
  return 100.0 * static_cast<double>(best) / static_cast<double>(gold.size());
}

}  // namespace refscore
