#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "refscore/corpus.hpp"

namespace refscore {

inline constexpr int kAgreementSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Exact match
// ---------------------------------------------------------------------------

/// Percentage of cells, over the key intersection, where both maps agree.
inline double exact_match_rate(const std::map<CellKey, ScoreLevel>& pred,
                               const std::map<CellKey, ScoreLevel>& gold) {
  std::size_t compared = 0, matched = 0;
  for (const auto& [key, p] : pred) {
    auto it = gold.find(key);
    if (it == gold.end()) continue;
    ++compared;
    if (p == it->second) ++matched;
  }
  if (compared == 0) throw Error("exact match: no overlapping cells to compare");
  return 100.0 * static_cast<double>(matched) / static_cast<double>(compared);
}

struct WeeklyEm {
  std::map<int, double> per_week;  // week -> EM percentage
  double mean = 0.0;
  double stddev = 0.0;             // sample (n-1) estimator over weekly values
  std::vector<int> skipped_weeks;  // weeks with zero compared cells
};

/// EM per week plus mean and sample standard deviation across the weekly
/// values. Weeks with no compared cells are omitted from the statistics and
/// flagged.
inline WeeklyEm per_week_em(const std::map<CellKey, ScoreLevel>& pred,
                            const std::map<CellKey, ScoreLevel>& gold, int sessions_per_term) {
  WeeklyEm out;
  for (int week = 1; week <= sessions_per_term; ++week) {
    std::size_t compared = 0, matched = 0;
    for (const auto& [key, p] : pred) {
      if (key.week != week) continue;
      auto it = gold.find(key);
      if (it == gold.end()) continue;
      ++compared;
      if (p == it->second) ++matched;
    }
    if (compared == 0) {
      out.skipped_weeks.push_back(week);
      continue;
    }
    out.per_week[week] = 100.0 * static_cast<double>(matched) / static_cast<double>(compared);
  }
  if (out.per_week.empty()) throw Error("per-week exact match: no overlapping cells");
  double sum = 0;
  for (const auto& [w, em] : out.per_week) sum += em;
  const double n = static_cast<double>(out.per_week.size());
  out.mean = sum / n;
  if (out.per_week.size() > 1) {
    double ss = 0;
    for (const auto& [w, em] : out.per_week) ss += (em - out.mean) * (em - out.mean);
    out.stddev = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Krippendorff's alpha
// ---------------------------------------------------------------------------

enum class AlphaMetric { Nominal, Ordinal, Interval };

inline std::string_view alpha_metric_name(AlphaMetric m) {
  switch (m) {
    case AlphaMetric::Nominal: return "nominal";
    case AlphaMetric::Ordinal: return "ordinal";
    default: return "interval";
  }
}

inline AlphaMetric alpha_metric_from_name(const std::string& s) {
  if (s == "nominal") return AlphaMetric::Nominal;
  if (s == "ordinal") return AlphaMetric::Ordinal;
  if (s == "interval") return AlphaMetric::Interval;
  throw Error("unknown alpha metric `" + s + "`");
}

/// Sparse unit x rater score matrix.
class RatingsMatrix {
 public:
  void add(const std::string& unit, const std::string& rater, ScoreLevel value) {
    values_[unit][rater] = value.value();
    raters_.insert(rater);
  }

  static RatingsMatrix from_labels(const std::map<LabelKey, ScoreLevel>& labels) {
    RatingsMatrix m;
    for (const auto& [key, level] : labels) m.add(key.cell.to_string(), key.rater_id, level);
    return m;
  }

  const std::map<std::string, std::map<std::string, int>>& units() const { return values_; }
  std::size_t rater_count() const { return raters_.size(); }

 private:
  std::map<std::string, std::map<std::string, int>> values_;
  std::set<std::string> raters_;
};

struct AlphaResult {
  double value = 1.0;
  bool degenerate = false;   // all pairable ratings identical
  std::size_t pairable_units = 0;
  std::size_t pairable_values = 0;
};

/// alpha = 1 - D_o/D_e over the coincidence matrix:
///   o_ck   = sum_u (cnt_c(u) * cnt_k(u) - [c==k] cnt_c(u)) / (m_u - 1)
///   alpha  = 1 - (n-1) * sum_{c<k} o_ck d(c,k) / sum_{c<k} n_c n_k d(c,k)
/// with the difference function d per metric: nominal 1[c!=k], interval
/// (c-k)^2, ordinal squared cumulative-margin distance.
inline AlphaResult krippendorff_alpha_detailed(const RatingsMatrix& m, AlphaMetric metric) {
  if (m.rater_count() < 2) throw Error("alpha: at least two raters required");

  std::map<int, std::map<int, double>> o;  // coincidence matrix
  std::map<int, double> marginal;
  AlphaResult res;
  for (const auto& [unit, ratings] : m.units()) {
    if (ratings.size() < 2) continue;
    res.pairable_units += 1;
    res.pairable_values += ratings.size();
    const double mu = static_cast<double>(ratings.size());
    std::map<int, double> counts;
    for (const auto& [rater, v] : ratings) counts[v] += 1;
    for (const auto& [c, nc] : counts)
      for (const auto& [k, nk] : counts) {
        const double pairs = c == k ? nc * (nk - 1.0) : nc * nk;
        if (pairs > 0) o[c][k] += pairs / (mu - 1.0);
      }
  }
  if (res.pairable_units == 0) throw Error("alpha: no unit has two or more ratings");
  double n = 0;
  for (const auto& [c, row] : o)
    for (const auto& [k, v] : row) {
      marginal[c] += v;
      n += v;
    }

  auto delta = [&](int a, int b) -> double {
    switch (metric) {
      case AlphaMetric::Nominal:
        return a == b ? 0.0 : 1.0;
      case AlphaMetric::Interval: {
        const double d = static_cast<double>(a) - static_cast<double>(b);
        return d * d;
      }
      case AlphaMetric::Ordinal: {
        if (a == b) return 0.0;
        double sum = 0;
        for (const auto& [v, cnt] : marginal)
          if (v >= std::min(a, b) && v <= std::max(a, b)) sum += cnt;
        sum -= (marginal.at(std::min(a, b)) + marginal.at(std::max(a, b))) / 2.0;
        return sum * sum;
      }
    }
    return 0.0;
  };

  double observed = 0, expected = 0;
  for (auto ci = marginal.begin(); ci != marginal.end(); ++ci)
    for (auto ki = std::next(ci); ki != marginal.end(); ++ki) {
      const int c = ci->first, k = ki->first;
      const double d = delta(c, k);
      auto row = o.find(c);
      if (row != o.end()) {
        auto cell = row->second.find(k);
        if (cell != row->second.end()) observed += cell->second * d;
      }
      expected += ci->second * ki->second * d;
    }

  if (expected == 0.0) {
    res.value = 1.0;
    res.degenerate = true;
    return res;
  }
  res.value = 1.0 - (n - 1.0) * observed / expected;
  return res;
}

inline double krippendorff_alpha(const RatingsMatrix& m, AlphaMetric metric) {
  return krippendorff_alpha_detailed(m, metric).value;
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

using ScoreConfusion = std::array<std::array<std::int64_t, 4>, 4>;  // [gold][pred]

inline ScoreConfusion confusion_matrix(const std::map<CellKey, ScoreLevel>& pred,
                                       const std::map<CellKey, ScoreLevel>& gold) {
  ScoreConfusion conf{};
  std::size_t compared = 0;
  for (const auto& [key, p] : pred) {
    auto it = gold.find(key);
    if (it == gold.end()) continue;
    conf[static_cast<std::size_t>(it->second.value())][static_cast<std::size_t>(p.value())] += 1;
    ++compared;
  }
  if (compared == 0) throw Error("confusion matrix: no overlapping cells");
  return conf;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct AgreementReport {
  double em_overall = 0.0;
  WeeklyEm weekly;
  std::optional<AlphaResult> alpha;  // among human raters; absent with < 2 raters
  AlphaMetric alpha_metric = AlphaMetric::Nominal;
  ScoreConfusion confusion{};
  std::size_t compared_cells = 0;
  std::size_t machine_cells = 0;   // machine scores available
  std::size_t gold_cells = 0;      // consensus gold labels available
  std::size_t failed_cells = 0;    // cells excluded because assessment failed
};

/// Per-cell consensus across raters: majority vote, ties toward the lower
/// score.
inline std::map<CellKey, ScoreLevel> consensus_gold(const std::map<LabelKey, ScoreLevel>& labels) {
  std::map<CellKey, std::array<int, 4>> tallies;
  for (const auto& [key, level] : labels) {
    auto [it, inserted] = tallies.try_emplace(key.cell, std::array<int, 4>{});
    (void)inserted;
    it->second[static_cast<std::size_t>(level.value())] += 1;
  }
  std::map<CellKey, ScoreLevel> out;
  for (const auto& [cell, tally] : tallies) {
    int best = 0;
    for (int v = 1; v <= 3; ++v)
      if (tally[static_cast<std::size_t>(v)] > tally[static_cast<std::size_t>(best)]) best = v;
    out.emplace(cell, ScoreLevel(best));
  }
  return out;
}

inline AgreementReport build_agreement_report(const std::map<CellKey, ScoreLevel>& machine,
                                              const std::map<LabelKey, ScoreLevel>& labels,
                                              int sessions_per_term,
                                              AlphaMetric metric = AlphaMetric::Nominal,
                                              std::size_t failed_cells = 0) {
  AgreementReport rep;
  rep.alpha_metric = metric;
  rep.failed_cells = failed_cells;
  rep.machine_cells = machine.size();
  const auto gold = consensus_gold(labels);
  rep.gold_cells = gold.size();
  rep.em_overall = exact_match_rate(machine, gold);
  rep.weekly = per_week_em(machine, gold, sessions_per_term);
  rep.confusion = confusion_matrix(machine, gold);
  for (const auto& row : rep.confusion)
    for (std::int64_t v : row) rep.compared_cells += static_cast<std::size_t>(v);
  RatingsMatrix ratings = RatingsMatrix::from_labels(labels);
  if (ratings.rater_count() >= 2) rep.alpha = krippendorff_alpha_detailed(ratings, metric);
  return rep;
}

inline nlohmann::json agreement_report_to_json(const AgreementReport& rep) {
  nlohmann::json per_week = nlohmann::json::object();
  for (const auto& [week, em] : rep.weekly.per_week) per_week[std::to_string(week)] = em;
  nlohmann::json conf = nlohmann::json::array();
  for (const auto& row : rep.confusion) conf.push_back(row);
  nlohmann::json j = {{"schema_version", kAgreementSchemaVersion},
                      {"em_overall", rep.em_overall},
                      {"em_per_week", per_week},
                      {"em_mean", rep.weekly.mean},
                      {"em_std", rep.weekly.stddev},
                      {"skipped_weeks", rep.weekly.skipped_weeks},
                      {"alpha_metric", std::string(alpha_metric_name(rep.alpha_metric))},
                      {"confusion", conf},
                      {"compared_cells", rep.compared_cells},
                      {"machine_cells", rep.machine_cells},
                      {"gold_cells", rep.gold_cells},
                      {"failed_cells", rep.failed_cells}};
  if (rep.alpha) {
    j["alpha"] = rep.alpha->value;
    j["alpha_degenerate"] = rep.alpha->degenerate;
  }
  return j;
}

/// Flat per-week CSV for plotting: exactly sessions_per_term rows; weeks with
/// no compared cells have an empty value.
inline void write_per_week_csv(const WeeklyEm& weekly, int sessions_per_term,
                               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write per-week CSV: " + path.string());
  out << "week,em\n";
  for (int week = 1; week <= sessions_per_term; ++week) {
    auto it = weekly.per_week.find(week);
    out << week << ",";
    if (it != weekly.per_week.end()) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", it->second);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace refscore
