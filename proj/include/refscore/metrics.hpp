#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "refscore/corpus.hpp"

namespace refscore {

inline constexpr int kEvalSchemaVersion = 1;

struct ClassMetrics {
  std::string label;
  std::int64_t support = 0;  // gold count
  double precision = 0.0;    // percentages
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::string task;  // "at_risk" or "grade"
  double accuracy = 0.0;
  double precision = 0.0;  // weighted by gold-class support
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::string> classes;                   // sorted
  std::vector<std::vector<std::int64_t>> confusion;   // [gold][pred]
  std::int64_t total = 0;
};

/// Accuracy plus per-class precision/recall/F1 and their support-weighted
/// averages, all as percentages. A class with no predicted (or gold) instances
/// contributes zero to the affected metric. Weighted recall equals accuracy by
/// construction; that identity is asserted on every report.
inline EvalReport evaluate(const std::vector<std::string>& preds,
                           const std::vector<std::string>& gold, const std::string& task) {
  if (preds.size() != gold.size())
    throw Error("evaluate: prediction/gold length mismatch (" + std::to_string(preds.size()) +
                " vs " + std::to_string(gold.size()) + ")");
  if (preds.empty()) throw Error("evaluate: empty inputs");

  EvalReport rep;
  rep.task = task;
  rep.total = static_cast<std::int64_t>(preds.size());
  std::set<std::string> class_set(gold.begin(), gold.end());
  class_set.insert(preds.begin(), preds.end());
  rep.classes.assign(class_set.begin(), class_set.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < rep.classes.size(); ++i) index[rep.classes[i]] = i;

  const std::size_t k = rep.classes.size();
  rep.confusion.assign(k, std::vector<std::int64_t>(k, 0));
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    rep.confusion[index.at(gold[i])][index.at(preds[i])] += 1;
    if (preds[i] == gold[i]) ++correct;
  }
  rep.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(rep.total);

  double wp = 0, wr = 0, wf = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t tp = rep.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += rep.confusion[o][c];
      fn += rep.confusion[c][o];
    }
    ClassMetrics cm;
    cm.label = rep.classes[c];
    cm.support = tp + fn;
    const double p = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double r = cm.support > 0 ? static_cast<double>(tp) / static_cast<double>(cm.support) : 0.0;
    const double f = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    cm.precision = 100.0 * p;
    cm.recall = 100.0 * r;
    cm.f1 = 100.0 * f;
    rep.per_class.push_back(cm);
    const double w = static_cast<double>(cm.support) / static_cast<double>(rep.total);
    wp += w * cm.precision;
    wr += w * cm.recall;
    wf += w * cm.f1;
  }
  rep.precision = wp;
  rep.recall = wr;
  rep.f1 = wf;

  if (std::abs(rep.recall - rep.accuracy) > 1e-9)
    throw Error("internal: weighted recall must equal accuracy");
  return rep;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : rep.per_class)
    per_class.push_back({{"label", c.label},
                         {"support", c.support},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1}});
  return nlohmann::json{{"schema_version", kEvalSchemaVersion},
                        {"task", rep.task},
                        {"accuracy", rep.accuracy},
                        {"precision", rep.precision},
                        {"recall", rep.recall},
                        {"f1", rep.f1},
                        {"classes", rep.classes},
                        {"per_class", per_class},
                        {"confusion", rep.confusion},
                        {"total", rep.total}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport rep;
  rep.task = j.at("task").get<std::string>();
  rep.accuracy = j.at("accuracy").get<double>();
  rep.precision = j.at("precision").get<double>();
  rep.recall = j.at("recall").get<double>();
  rep.f1 = j.at("f1").get<double>();
  rep.classes = j.at("classes").get<std::vector<std::string>>();
  rep.confusion = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
  rep.total = j.at("total").get<std::int64_t>();
  for (const auto& c : j.at("per_class"))
    rep.per_class.push_back({c.at("label").get<std::string>(), c.at("support").get<std::int64_t>(),
                             c.at("precision").get<double>(), c.at("recall").get<double>(),
                             c.at("f1").get<double>()});
  return rep;
}

/// Confusion matrix as CSV, gold rows by predicted columns.
inline void write_confusion_csv(const EvalReport& rep, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write confusion CSV: " + path.string());
  out << "gold\\pred";
  for (const auto& c : rep.classes) out << "," << c;
  out << "\n";
  for (std::size_t g = 0; g < rep.classes.size(); ++g) {
    out << rep.classes[g];
    for (std::size_t p = 0; p < rep.classes.size(); ++p) out << "," << rep.confusion[g][p];
    out << "\n";
  }
}

}  // namespace refscore
