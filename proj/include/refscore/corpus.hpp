#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "refscore/detail/text.hpp"

namespace refscore {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// One of the four assessment levels: 0=None, 1=Vague, 2=General, 3=Specific.
/// The only representable values are 0..3; construction validates.
class ScoreLevel {
 public:
  static constexpr int kMin = 0;
  static constexpr int kMax = 3;

  explicit ScoreLevel(int value) : value_(value) {
    if (value < kMin || value > kMax)
      throw Error("score level out of range: " + std::to_string(value));
  }

  int value() const { return value_; }

  std::string_view label() const {
    switch (value_) {
      case 0: return "None";
      case 1: return "Vague";
      case 2: return "General";
      default: return "Specific";
    }
  }

  auto operator<=>(const ScoreLevel&) const = default;

 private:
  int value_;
};

inline const std::vector<ScoreLevel>& all_score_levels() {
  static const std::vector<ScoreLevel> levels = {ScoreLevel(0), ScoreLevel(1),
                                                 ScoreLevel(2), ScoreLevel(3)};
  return levels;
}

/// Identifies one assessable cell: a student's answer to one question in one week.
struct CellKey {
  std::string student_id;
  int term = 0;
  int week = 0;
  std::string question_id;

  auto operator<=>(const CellKey&) const = default;

  std::string to_string() const {
    std::ostringstream os;
    os << student_id << "/t" << term << "/w" << week << "/" << question_id;
    return os.str();
  }
};

struct Reflection {
  CellKey key;
  std::string text;  // opaque UTF-8; empty is a valid (level 0) reflection

  bool operator==(const Reflection&) const = default;
};

/// Final course grade, one of A..E.
class GradeLabel {
 public:
  explicit GradeLabel(char symbol) : symbol_(symbol) {
    if (symbol < 'A' || symbol > 'E') throw Error(std::string("unknown grade: ") + symbol);
  }

  char symbol() const { return symbol_; }
  std::string str() const { return std::string(1, symbol_); }

  auto operator<=>(const GradeLabel&) const = default;

 private:
  char symbol_;
};

enum class RiskStatus { NoRisk, AtRisk };

inline std::string_view risk_label(RiskStatus r) {
  return r == RiskStatus::NoRisk ? "NoRisk" : "AtRisk";
}

/// Grades A and B map to NoRisk; C, D and E map to AtRisk.
inline RiskStatus grade_to_risk(GradeLabel g) {
  return (g.symbol() == 'A' || g.symbol() == 'B') ? RiskStatus::NoRisk : RiskStatus::AtRisk;
}

struct LabelKey {
  CellKey cell;
  std::string rater_id;

  auto operator<=>(const LabelKey&) const = default;
};

struct Dataset {
  int sessions_per_term = 14;  // T
  std::vector<Reflection> reflections;
  std::map<std::string, GradeLabel> grades;
  std::map<LabelKey, ScoreLevel> human_labels;

  bool operator==(const Dataset&) const = default;

  /// Distinct question ids across the dataset (M).
  std::set<std::string> question_ids() const {
    std::set<std::string> out;
    for (const auto& r : reflections) out.insert(r.key.question_id);
    return out;
  }

  std::set<int> terms() const {
    std::set<int> out;
    for (const auto& r : reflections) out.insert(r.key.term);
    return out;
  }

  /// Term of a student, from their reflections. Students never span terms.
  std::optional<int> term_of(const std::string& student_id) const {
    for (const auto& r : reflections)
      if (r.key.student_id == student_id) return r.key.term;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail_corpus {

inline Error line_error(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
  return Error(path.string() + ": line " + std::to_string(line) + ": " + msg);
}

}  // namespace detail_corpus

/// Reads a JSON Lines reflections file. Each line must be an object with keys
/// exactly {student_id, term, week, question_id, text}. Duplicate cell keys,
/// unknown keys and weeks outside [1, sessions_per_term] are errors, reported
/// with their line number.
inline Dataset parse_reflections(const std::filesystem::path& path, int sessions_per_term = 14) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw Error("cannot open reflections file: " + path.string());
  Dataset ds;
  ds.sessions_per_term = sessions_per_term;
  std::set<CellKey> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw detail_corpus::line_error(path, line_no, std::string("malformed record: ") + e.what());
    }
    if (!j.is_object())
      throw detail_corpus::line_error(path, line_no, "malformed record: not an object");
    static const std::set<std::string> kKeys = {"student_id", "term", "week", "question_id", "text"};
    for (const auto& [k, v] : j.items()) {
      (void)v;
      if (!kKeys.count(k))
        throw detail_corpus::line_error(path, line_no, "unknown field `" + k + "`");
    }
    for (const auto& k : kKeys) {
      if (!j.contains(k))
        throw detail_corpus::line_error(path, line_no, "missing field `" + k + "`");
    }
    Reflection r;
    try {
      r.key.student_id = j.at("student_id").get<std::string>();
      r.key.term = j.at("term").get<int>();
      r.key.week = j.at("week").get<int>();
      r.key.question_id = j.at("question_id").get<std::string>();
      r.text = j.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw detail_corpus::line_error(path, line_no, std::string("malformed record: ") + e.what());
    }
    if (r.key.student_id.empty())
      throw detail_corpus::line_error(path, line_no, "empty student_id");
    if (r.key.question_id.empty())
      throw detail_corpus::line_error(path, line_no, "empty question_id");
    if (r.key.term < 1)
      throw detail_corpus::line_error(path, line_no, "term must be >= 1");
    if (r.key.week < 1 || r.key.week > ds.sessions_per_term)
      throw detail_corpus::line_error(
          path, line_no,
          "week " + std::to_string(r.key.week) + " out of range [1, " +
              std::to_string(ds.sessions_per_term) + "]");
    if (!seen.insert(r.key).second)
      throw detail_corpus::line_error(path, line_no, "duplicate cell key " + r.key.to_string());
    ds.reflections.push_back(std::move(r));
  }
  return ds;
}

/// Writes reflections as JSON Lines, sorted by cell key. Inverse of
/// parse_reflections for any valid dataset.
inline void serialize_reflections(const Dataset& ds, const std::filesystem::path& path) {
  using nlohmann::json;
  std::vector<const Reflection*> sorted;
  sorted.reserve(ds.reflections.size());
  for (const auto& r : ds.reflections) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const Reflection* a, const Reflection* b) { return a->key < b->key; });
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write reflections file: " + path.string());
  for (const Reflection* r : sorted) {
    json j = {{"student_id", r->key.student_id},
              {"term", r->key.term},
              {"week", r->key.week},
              {"question_id", r->key.question_id},
              {"text", r->text}};
    out << j.dump() << "\n";
  }
}

/// Reads a grades CSV with header `student_id,grade`.
inline std::map<std::string, GradeLabel> parse_grades(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open grades file: " + path.string());
  std::map<std::string, GradeLabel> grades;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "student_id,grade")
        throw detail_corpus::line_error(path, line_no, "expected header `student_id,grade`");
      continue;
    }
    auto fields = detail::split(line, ',');
    if (fields.size() != 2)
      throw detail_corpus::line_error(path, line_no, "expected 2 fields");
    const std::string& id = fields[0];
    const std::string& g = fields[1];
    if (id.empty()) throw detail_corpus::line_error(path, line_no, "empty student_id");
    if (g.size() != 1)
      throw detail_corpus::line_error(path, line_no, "unknown grade `" + g + "`");
    GradeLabel grade = [&] {
      try {
        return GradeLabel(g[0]);
      } catch (const Error&) {
        throw detail_corpus::line_error(path, line_no, "unknown grade `" + g + "`");
      }
    }();
    if (!grades.emplace(id, grade).second)
      throw detail_corpus::line_error(path, line_no, "duplicate student `" + id + "`");
  }
  return grades;
}

inline void serialize_grades(const std::map<std::string, GradeLabel>& grades,
                             const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write grades file: " + path.string());
  out << "student_id,grade\n";
  for (const auto& [id, g] : grades) out << id << "," << g.symbol() << "\n";
}

/// Reads a human-labels CSV with header
/// `student_id,term,week,question_id,rater_id,score`.
inline std::map<LabelKey, ScoreLevel> parse_human_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open labels file: " + path.string());
  std::map<LabelKey, ScoreLevel> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "student_id,term,week,question_id,rater_id,score")
        throw detail_corpus::line_error(
            path, line_no, "expected header `student_id,term,week,question_id,rater_id,score`");
      continue;
    }
    auto fields = detail::split(line, ',');
    if (fields.size() != 6)
      throw detail_corpus::line_error(path, line_no, "expected 6 fields");
    LabelKey key;
    key.cell.student_id = fields[0];
    key.cell.question_id = fields[3];
    key.rater_id = fields[4];
    try {
      key.cell.term = std::stoi(fields[1]);
      key.cell.week = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw detail_corpus::line_error(path, line_no, "non-numeric term/week");
    }
    int score = -1;
    try {
      score = std::stoi(fields[5]);
    } catch (const std::exception&) {
      throw detail_corpus::line_error(path, line_no, "non-numeric score `" + fields[5] + "`");
    }
    if (score < ScoreLevel::kMin || score > ScoreLevel::kMax)
      throw detail_corpus::line_error(path, line_no, "score out of range: " + fields[5]);
    if (key.rater_id.empty())
      throw detail_corpus::line_error(path, line_no, "empty rater_id");
    if (!labels.emplace(key, ScoreLevel(score)).second)
      throw detail_corpus::line_error(path, line_no, "duplicate label for cell/rater");
  }
  return labels;
}

inline void serialize_human_labels(const std::map<LabelKey, ScoreLevel>& labels,
                                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write labels file: " + path.string());
  out << "student_id,term,week,question_id,rater_id,score\n";
  for (const auto& [k, v] : labels) {
    out << k.cell.student_id << "," << k.cell.term << "," << k.cell.week << ","
        << k.cell.question_id << "," << k.rater_id << "," << v.value() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct TermStats {
  int students = 0;
  int reflections = 0;
  std::map<int, int> reflections_per_week;
  int labeled_cells = 0;
};

/// Integrity report: never fails, never mutates. Missing cells are listed
/// against the full grid (per-term students) x (weeks 1..T) x (all question ids).
struct ValidationReport {
  std::map<int, TermStats> per_term;
  std::vector<CellKey> missing_cells;
  std::vector<LabelKey> dangling_labels;             // labels with no matching reflection
  std::vector<std::string> graded_without_reflections;
  std::vector<std::string> ungraded_students;
  std::vector<std::string> notes;                    // other invariant violations
  std::set<std::string> raters;

  bool grid_complete() const { return missing_cells.empty(); }

  std::string summary() const {
    std::ostringstream os;
    for (const auto& [term, st] : per_term)
      os << "term " << term << ": " << st.students << " students, " << st.reflections
         << " reflections, " << st.labeled_cells << " labeled cells\n";
    os << "missing cells: " << missing_cells.size() << "\n";
    os << "dangling labels: " << dangling_labels.size() << "\n";
    os << "graded students without reflections: " << graded_without_reflections.size() << "\n";
    for (const auto& n : notes) os << "note: " << n << "\n";
    return os.str();
  }
};

inline ValidationReport validate_dataset(const Dataset& ds) {
  ValidationReport rep;
  std::set<CellKey> present;
  std::map<int, std::set<std::string>> students_by_term;
  std::map<std::string, std::set<int>> terms_by_student;
  for (const auto& r : ds.reflections) {
    present.insert(r.key);
    students_by_term[r.key.term].insert(r.key.student_id);
    terms_by_student[r.key.student_id].insert(r.key.term);
    auto& st = rep.per_term[r.key.term];
    st.reflections += 1;
    st.reflections_per_week[r.key.week] += 1;
  }
  for (const auto& [term, students] : students_by_term)
    rep.per_term[term].students = static_cast<int>(students.size());

  for (const auto& [student, terms] : terms_by_student)
    if (terms.size() > 1)
      rep.notes.push_back("student " + student + " appears in multiple terms");

  const auto questions = ds.question_ids();
  for (const auto& [term, students] : students_by_term) {
    for (const auto& student : students) {
      for (int week = 1; week <= ds.sessions_per_term; ++week) {
        for (const auto& q : questions) {
          CellKey k{student, term, week, q};
          if (!present.count(k)) rep.missing_cells.push_back(k);
        }
      }
    }
  }

  for (const auto& [key, level] : ds.human_labels) {
    (void)level;
    rep.raters.insert(key.rater_id);
    if (!present.count(key.cell)) {
      rep.dangling_labels.push_back(key);
    } else {
      rep.per_term[key.cell.term].labeled_cells += 1;
    }
  }

  for (const auto& [student, grade] : ds.grades) {
    (void)grade;
    if (!terms_by_student.count(student)) rep.graded_without_reflections.push_back(student);
  }
  for (const auto& [student, terms] : terms_by_student) {
    (void)terms;
    if (!ds.grades.count(student)) rep.ungraded_students.push_back(student);
  }
  return rep;
}

}  // namespace refscore
