#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "refscore/corpus.hpp"
#include "refscore/detail/rng.hpp"
#include "refscore/gateway.hpp"

namespace refscore {

/// Parameters for the synthetic dataset generator. Students carry a latent
/// engagement in [0,1]; weekly latent levels follow it with a small wobble;
/// the grade comes from a monotone threshold rule on the mean latent level, so
/// risk status is exactly "mean latent level >= the B threshold". Observed
/// (written) levels optionally add level noise; texts are generated so the
/// deterministic mock backend assesses them at exactly the observed level.
struct SyntheticSpec {
  std::vector<int> students_per_term = {107, 174, 96};
  int sessions_per_term = 14;
  int questions = 1;
  double noise = 0.0;                                     // P(observed level shifts +-1)
  std::vector<double> grade_thresholds = {0.5, 1.0, 1.5, 2.5};  // E|D, D|C, C|B, B|A
  int raters = 0;                                         // 0 = no human labels
  double rater_disagreement = 0.0;  // fraction of labeled cells planted to differ from machine
  double rater_noise = 0.0;         // P(an individual rater drifts +-1 on a cell)
  std::set<int> labeled_terms = {1};
  std::uint64_t seed = 0;

  void validate() const {
    if (students_per_term.empty()) throw Error("synthetic: students_per_term empty");
    for (int n : students_per_term)
      if (n < 1) throw Error("synthetic: students_per_term entries must be >= 1");
    if (sessions_per_term < 1) throw Error("synthetic: sessions_per_term must be >= 1");
    if (questions < 1) throw Error("synthetic: questions must be >= 1");
    if (noise < 0 || noise > 1) throw Error("synthetic: noise must be in [0,1]");
    if (grade_thresholds.size() != 4) throw Error("synthetic: need 4 grade thresholds");
    for (std::size_t i = 1; i < grade_thresholds.size(); ++i)
      if (grade_thresholds[i] <= grade_thresholds[i - 1])
        throw Error("synthetic: grade thresholds must be strictly increasing");
    if (rater_disagreement < 0 || rater_disagreement > 1)
      throw Error("synthetic: rater_disagreement must be in [0,1]");
    if (rater_noise < 0 || rater_noise > 1)
      throw Error("synthetic: rater_noise must be in [0,1]");
  }

  GradeLabel grade_for(double mean_latent) const {
    if (mean_latent >= grade_thresholds[3]) return GradeLabel('A');
    if (mean_latent >= grade_thresholds[2]) return GradeLabel('B');
    if (mean_latent >= grade_thresholds[1]) return GradeLabel('C');
    if (mean_latent >= grade_thresholds[0]) return GradeLabel('D');
    return GradeLabel('E');
  }
};

struct SyntheticResult {
  Dataset dataset;
  std::map<CellKey, int> observed_levels;      // what the mock will score each cell
  std::map<std::string, double> latent_means;  // per-student mean latent level
};

namespace detail_simulate {

// Clean lowercase word bank for generated reflections; all tokens distinct.
inline const std::vector<std::string>& word_bank() {
  static const std::vector<std::string> bank = {
      "lecture",  "concept",   "algorithm", "example",  "practice", "problem",  "solution",
      "method",   "function",  "variable",  "loop",     "array",    "table",    "graph",
      "tree",     "node",      "edge",      "search",   "sort",     "merge",    "split",
      "index",    "query",     "data",      "model",    "layer",    "network",  "weight",
      "error",    "gradient",  "learning",  "measure",  "metric",   "sample",   "test",
      "train",    "review",    "summary",   "insight",  "question", "answer",   "idea",
      "topic",    "detail",    "structure", "memory",   "pointer",  "stack",    "queue",
      "hash",     "bucket",    "collision", "probe",    "balance",  "rotation", "depth",
      "breadth",  "traversal", "recursion", "iteration","base",     "case",     "proof",
      "induction","complexity","bound",     "linear",   "constant", "quadratic","log",
      "time",     "space",     "tradeoff",  "cache",    "storage",  "record",   "field",
      "schema",   "relation",  "join",      "filter",   "reduce",   "map",      "stream",
      "thread",   "process",   "signal",    "event",    "state",    "machine",  "language",
      "grammar",  "parser",    "token",     "symbol",   "scope",    "binding",  "closure",
      "module",   "interface", "contract",  "library",  "system",   "design",   "pattern",
      "builder",  "factory",   "adapter",   "observer", "strategy", "command",  "visitor"};
  return bank;
}

// Text with exactly n distinct words, assessed by the mock at the level the
// distinct-word rules imply.
inline std::string text_with_distinct_words(std::size_t n, detail::Rng& rng) {
  const auto& bank = word_bank();
  if (n > bank.size()) throw Error("synthetic: word bank too small");
  std::vector<std::size_t> order(bank.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.empty()) out += " ";
    out += bank[order[i]];
  }
  out += ".";
  return out;
}

inline std::string text_for_level(int level, detail::Rng& rng) {
  switch (level) {
    case 0: return "";
    case 1: return text_with_distinct_words(6 + rng.below(8), rng);    // 6..13 < 15
    case 2: return text_with_distinct_words(17 + rng.below(20), rng);  // 17..36 < 40
    default: return text_with_distinct_words(42 + rng.below(15), rng); // 42..56 >= 40
  }
}

inline int clamp_level(int v) { return std::max(0, std::min(3, v)); }

inline int shifted_level(int level, detail::Rng& rng) {
  // forced change: +-1, clamped away from no-ops
  if (level == 0) return 1;
  if (level == 3) return 2;
  return rng.bernoulli(0.5) ? level + 1 : level - 1;
}

}  // namespace detail_simulate

/// Deterministic under spec.seed. Every generated text is re-assessed with the
/// mock rules before being accepted; a mismatch aborts generation.
inline SyntheticResult simulate(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticResult out;
  out.dataset.sessions_per_term = spec.sessions_per_term;
  detail::Rng rng(detail::mix_seed(spec.seed, 0x51c2ULL));

  for (std::size_t term_idx = 0; term_idx < spec.students_per_term.size(); ++term_idx) {
    const int term = static_cast<int>(term_idx) + 1;
    for (int s = 0; s < spec.students_per_term[term_idx]; ++s) {
      char id_buf[32];
      std::snprintf(id_buf, sizeof(id_buf), "t%ds%04d", term, s);
      const std::string student_id = id_buf;
      const double engagement = rng.uniform01();

      double latent_sum = 0;
      for (int week = 1; week <= spec.sessions_per_term; ++week) {
        const double wobble = rng.uniform(-0.75, 0.75);
        const int latent =
            detail_simulate::clamp_level(static_cast<int>(std::floor(engagement * 3.0 + wobble + 0.5)));
        latent_sum += latent;
        for (int q = 1; q <= spec.questions; ++q) {
          int observed = latent;
          if (spec.noise > 0 && rng.bernoulli(spec.noise))
            observed = detail_simulate::clamp_level(observed + (rng.bernoulli(0.5) ? 1 : -1));
          const std::string text = detail_simulate::text_for_level(observed, rng);
          if (mock_level(text).value() != observed)
            throw Error("synthetic: generated text violates the mock level rules");
          CellKey key{student_id, term, week, "q" + std::to_string(q)};
          out.dataset.reflections.push_back({key, text});
          out.observed_levels.emplace(key, observed);
        }
      }
      const double latent_mean = latent_sum / static_cast<double>(spec.sessions_per_term);
      out.latent_means.emplace(student_id, latent_mean);
      out.dataset.grades.emplace(student_id, spec.grade_for(latent_mean));
    }
  }

  if (spec.raters > 0) {
    // Cells of the labeled terms, in key order for determinism.
    std::vector<CellKey> cells;
    for (const auto& r : out.dataset.reflections)
      if (spec.labeled_terms.count(r.key.term)) cells.push_back(r.key);
    std::sort(cells.begin(), cells.end());

    // Cells planted to disagree with the machine-visible level, shared by all
    // raters so the consensus differs from the machine on exactly these cells.
    std::set<CellKey> planted;
    if (spec.rater_disagreement > 0) {
      std::vector<std::size_t> order(cells.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      const auto planted_count = static_cast<std::size_t>(
          std::llround(spec.rater_disagreement * static_cast<double>(cells.size())));
      for (std::size_t i = 0; i < planted_count && i < order.size(); ++i)
        planted.insert(cells[order[i]]);
    }
    std::map<CellKey, int> planted_score;
    for (const auto& key : planted)
      planted_score[key] = detail_simulate::shifted_level(out.observed_levels.at(key), rng);

    for (int r = 1; r <= spec.raters; ++r) {
      const std::string rater_id = "r" + std::to_string(r);
      for (const auto& key : cells) {
        int score = out.observed_levels.at(key);
        auto pit = planted_score.find(key);
        if (pit != planted_score.end()) score = pit->second;
        if (spec.rater_noise > 0 && r > 1 && rng.bernoulli(spec.rater_noise))
          score = detail_simulate::clamp_level(score + (rng.bernoulli(0.5) ? 1 : -1));
        out.dataset.human_labels.emplace(LabelKey{key, rater_id}, ScoreLevel(score));
      }
    }
  }
  return out;
}

/// Writes the three dataset files. Byte-identical for a fixed seed.
inline void write_synthetic(const SyntheticResult& result,
                            const std::filesystem::path& reflections_path,
                            const std::filesystem::path& grades_path,
                            const std::filesystem::path& labels_path) {
  serialize_reflections(result.dataset, reflections_path);
  serialize_grades(result.dataset.grades, grades_path);
  if (!result.dataset.human_labels.empty())
    serialize_human_labels(result.dataset.human_labels, labels_path);
}

}  // namespace refscore
