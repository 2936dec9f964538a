#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "refscore/agreement.hpp"
#include "refscore/assessor.hpp"
#include "refscore/corpus.hpp"
#include "refscore/gateway.hpp"
#include "refscore/http_backend.hpp"
#include "refscore/predictor.hpp"
#include "refscore/rubric.hpp"
#include "refscore/simulate.hpp"

namespace refscore {

inline constexpr int kConfigSchemaVersion = 1;

/// Configuration problem: exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Data or threshold problem: exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  // paths
  std::filesystem::path reflections;
  std::filesystem::path grades;
  std::filesystem::path labels;
  std::filesystem::path rubric;     // empty = built-in default tree
  std::filesystem::path criteria;   // empty = built-in criteria + exemplars
  std::filesystem::path templates;  // empty = built-in templates
  std::filesystem::path cache = "refscore_cache.jsonl";
  std::filesystem::path out = "out";

  // assessment condition
  Strategy strategy = Strategy::SingleAgent;
  Prompting prompting = Prompting::FewShot;
  int parallelism = 4;
  double failure_rate_threshold = 0.01;

  // backend
  std::string backend_kind = "mock";  // mock | http
  std::string endpoint;
  std::string model = "gpt-4o";
  double temperature = 0.0;
  int max_tokens = 512;
  int max_attempts = 5;
  std::int64_t backoff_ms = 250;
  std::int64_t timeout_ms = 30000;
  bool cache_enabled = true;

  // dataset + protocol
  int sessions_per_term = 14;
  std::set<int> train_terms = {1, 2};
  int test_term = 3;
  AlphaMetric alpha_metric = AlphaMetric::Nominal;

  // learners
  RfHyper forest;
  RecurrentHyper recurrent;

  std::uint64_t seed = 42;
  SyntheticSpec synthetic;

  std::string condition_name() const {
    return std::string(strategy_name(strategy)) + "_" + std::string(prompting_name(prompting));
  }
};

// ---------------------------------------------------------------------------
// Config file I/O
// ---------------------------------------------------------------------------

namespace detail_pipeline {

inline void expect_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                        const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (!allowed.count(k))
      throw ConfigError("config: unknown field `" + k + "` in " + where);
  }
}

}  // namespace detail_pipeline

inline nlohmann::json config_to_json(const RunConfig& c) {
  return nlohmann::json{
      {"schema_version", kConfigSchemaVersion},
      {"seed", c.seed},
      {"paths",
       {{"reflections", c.reflections.string()},
        {"grades", c.grades.string()},
        {"labels", c.labels.string()},
        {"rubric", c.rubric.string()},
        {"criteria", c.criteria.string()},
        {"templates", c.templates.string()},
        {"cache", c.cache.string()},
        {"out", c.out.string()}}},
      {"dataset", {{"sessions_per_term", c.sessions_per_term}}},
      {"assessment",
       {{"strategy", std::string(strategy_name(c.strategy))},
        {"prompting", std::string(prompting_name(c.prompting))},
        {"parallelism", c.parallelism},
        {"failure_rate_threshold", c.failure_rate_threshold}}},
      {"backend",
       {{"kind", c.backend_kind},
        {"endpoint", c.endpoint},
        {"model", c.model},
        {"temperature", c.temperature},
        {"max_tokens", c.max_tokens},
        {"max_attempts", c.max_attempts},
        {"backoff_ms", c.backoff_ms},
        {"timeout_ms", c.timeout_ms},
        {"cache_enabled", c.cache_enabled}}},
      {"agreement", {{"alpha_metric", std::string(alpha_metric_name(c.alpha_metric))}}},
      {"prediction",
       {{"train_terms", std::vector<int>(c.train_terms.begin(), c.train_terms.end())},
        {"test_term", c.test_term},
        {"class_weights", c.forest.inverse_class_weights ? "inverse" : "none"},
        {"forest",
         {{"n_trees", c.forest.n_trees},
          {"max_depth", c.forest.max_depth},
          {"mtry", c.forest.mtry},
          {"min_leaf", c.forest.min_leaf}}},
        {"recurrent",
         {{"hidden", c.recurrent.hidden},
          {"epochs", c.recurrent.epochs},
          {"learning_rate", c.recurrent.learning_rate}}}}},
      {"synthetic",
       {{"students_per_term", c.synthetic.students_per_term},
        {"sessions_per_term", c.synthetic.sessions_per_term},
        {"questions", c.synthetic.questions},
        {"noise", c.synthetic.noise},
        {"grade_thresholds", c.synthetic.grade_thresholds},
        {"raters", c.synthetic.raters},
        {"rater_disagreement", c.synthetic.rater_disagreement},
        {"rater_noise", c.synthetic.rater_noise},
        {"labeled_terms",
         std::vector<int>(c.synthetic.labeled_terms.begin(), c.synthetic.labeled_terms.end())}}}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: root must be an object");
  detail_pipeline::expect_keys(j,
                               {"schema_version", "seed", "paths", "dataset", "assessment",
                                "backend", "agreement", "prediction", "synthetic"},
                               "root");
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != kConfigSchemaVersion)
    throw ConfigError("config: unsupported schema_version");
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      detail_pipeline::expect_keys(p,
                                   {"reflections", "grades", "labels", "rubric", "criteria",
                                    "templates", "cache", "out"},
                                   "paths");
      c.reflections = p.value("reflections", std::string());
      c.grades = p.value("grades", std::string());
      c.labels = p.value("labels", std::string());
      c.rubric = p.value("rubric", std::string());
      c.criteria = p.value("criteria", std::string());
      c.templates = p.value("templates", std::string());
      c.cache = p.value("cache", c.cache.string());
      c.out = p.value("out", c.out.string());
    }
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      detail_pipeline::expect_keys(d, {"sessions_per_term"}, "dataset");
      c.sessions_per_term = d.value("sessions_per_term", c.sessions_per_term);
    }
    if (j.contains("assessment")) {
      const auto& a = j.at("assessment");
      detail_pipeline::expect_keys(
          a, {"strategy", "prompting", "parallelism", "failure_rate_threshold"}, "assessment");
      if (a.contains("strategy")) c.strategy = strategy_from_name(a.at("strategy"));
      if (a.contains("prompting")) c.prompting = prompting_from_name(a.at("prompting"));
      c.parallelism = a.value("parallelism", c.parallelism);
      c.failure_rate_threshold = a.value("failure_rate_threshold", c.failure_rate_threshold);
    }
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      detail_pipeline::expect_keys(b,
                                   {"kind", "endpoint", "model", "temperature", "max_tokens",
                                    "max_attempts", "backoff_ms", "timeout_ms", "cache_enabled"},
                                   "backend");
      c.backend_kind = b.value("kind", c.backend_kind);
      c.endpoint = b.value("endpoint", c.endpoint);
      c.model = b.value("model", c.model);
      c.temperature = b.value("temperature", c.temperature);
      c.max_tokens = b.value("max_tokens", c.max_tokens);
      c.max_attempts = b.value("max_attempts", c.max_attempts);
      c.backoff_ms = b.value("backoff_ms", c.backoff_ms);
      c.timeout_ms = b.value("timeout_ms", c.timeout_ms);
      c.cache_enabled = b.value("cache_enabled", c.cache_enabled);
    }
    if (j.contains("agreement")) {
      const auto& a = j.at("agreement");
      detail_pipeline::expect_keys(a, {"alpha_metric"}, "agreement");
      if (a.contains("alpha_metric")) c.alpha_metric = alpha_metric_from_name(a.at("alpha_metric"));
    }
    if (j.contains("prediction")) {
      const auto& p = j.at("prediction");
      detail_pipeline::expect_keys(
          p, {"train_terms", "test_term", "class_weights", "forest", "recurrent"}, "prediction");
      if (p.contains("class_weights")) {
        const std::string cw = p.at("class_weights").get<std::string>();
        if (cw != "none" && cw != "inverse")
          throw ConfigError("config: class_weights must be none or inverse");
        c.forest.inverse_class_weights = cw == "inverse";
        c.recurrent.inverse_class_weights = cw == "inverse";
      }
      if (p.contains("train_terms")) {
        c.train_terms.clear();
        for (int t : p.at("train_terms").get<std::vector<int>>()) c.train_terms.insert(t);
      }
      c.test_term = p.value("test_term", c.test_term);
      if (p.contains("forest")) {
        const auto& f = p.at("forest");
        detail_pipeline::expect_keys(f, {"n_trees", "max_depth", "mtry", "min_leaf"}, "forest");
        c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
        c.forest.max_depth = f.value("max_depth", c.forest.max_depth);
        c.forest.mtry = f.value("mtry", c.forest.mtry);
        c.forest.min_leaf = f.value("min_leaf", c.forest.min_leaf);
      }
      if (p.contains("recurrent")) {
        const auto& r = p.at("recurrent");
        detail_pipeline::expect_keys(r, {"hidden", "epochs", "learning_rate"}, "recurrent");
        c.recurrent.hidden = r.value("hidden", c.recurrent.hidden);
        c.recurrent.epochs = r.value("epochs", c.recurrent.epochs);
        c.recurrent.learning_rate = r.value("learning_rate", c.recurrent.learning_rate);
      }
    }
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      detail_pipeline::expect_keys(s,
                                   {"students_per_term", "sessions_per_term", "questions",
                                    "noise", "grade_thresholds", "raters", "rater_disagreement",
                                    "rater_noise", "labeled_terms"},
                                   "synthetic");
      c.synthetic.students_per_term =
          s.value("students_per_term", c.synthetic.students_per_term);
      c.synthetic.sessions_per_term =
          s.value("sessions_per_term", c.synthetic.sessions_per_term);
      c.synthetic.questions = s.value("questions", c.synthetic.questions);
      c.synthetic.noise = s.value("noise", c.synthetic.noise);
      c.synthetic.grade_thresholds = s.value("grade_thresholds", c.synthetic.grade_thresholds);
      c.synthetic.raters = s.value("raters", c.synthetic.raters);
      c.synthetic.rater_disagreement =
          s.value("rater_disagreement", c.synthetic.rater_disagreement);
      c.synthetic.rater_noise = s.value("rater_noise", c.synthetic.rater_noise);
      if (s.contains("labeled_terms")) {
        c.synthetic.labeled_terms.clear();
        for (int t : s.at("labeled_terms").get<std::vector<int>>())
          c.synthetic.labeled_terms.insert(t);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Shared command plumbing
// ---------------------------------------------------------------------------

namespace detail_pipeline {

inline void require_path(const std::filesystem::path& p, const std::string& field) {
  if (p.empty()) throw ConfigError("config: required path `" + field + "` is not set");
  if (!std::filesystem::exists(p))
    throw ConfigError("config: `" + field + "` does not exist: " + p.string());
}

inline void ensure_out_dirs(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out / "assessments");
  std::filesystem::create_directories(cfg.out / "agreement");
  std::filesystem::create_directories(cfg.out / "models");
  std::filesystem::create_directories(cfg.out / "reports");
}

inline void echo_config(const RunConfig& cfg) {
  std::ofstream out(cfg.out / "effective_config.json", std::ios::trunc);
  if (!out) throw Error("cannot write effective config");
  out << config_to_json(cfg).dump(2) << "\n";
}

inline AssessmentConfig assessment_config(const RunConfig& cfg) {
  AssessmentConfig a;
  a.strategy = cfg.strategy;
  a.prompting = cfg.prompting;
  a.rubric = cfg.rubric.empty() ? default_decision_tree() : load_rubric(cfg.rubric);
  if (cfg.criteria.empty()) {
    a.criteria = default_criteria();
    a.exemplars = default_exemplars();
  } else {
    CriteriaFile cf = load_criteria(cfg.criteria);
    a.criteria = cf.criteria;
    a.exemplars = cf.exemplars;
  }
  a.templates = cfg.templates.empty() ? default_templates() : load_templates(cfg.templates);
  a.model = cfg.model;
  a.temperature = cfg.temperature;
  a.max_tokens = cfg.max_tokens;
  a.parallelism = cfg.parallelism;
  a.failure_rate_threshold = cfg.failure_rate_threshold;
  a.validate();
  return a;
}

inline std::shared_ptr<Backend> make_backend(const RunConfig& cfg, const AssessmentConfig& a) {
  if (cfg.backend_kind == "mock") return std::make_shared<MockBackend>(a.rubric);
  if (cfg.backend_kind == "http") {
    if (cfg.endpoint.empty())
      throw ConfigError("config: backend.endpoint required for the http backend");
    HttpBackendConfig hc;
    hc.endpoint = cfg.endpoint;
    hc.timeout_ms = cfg.timeout_ms;
    try {
      return std::make_shared<HttpBackend>(hc);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  throw ConfigError("config: unknown backend kind `" + cfg.backend_kind + "` (mock|http)");
}

inline Dataset load_dataset(const RunConfig& cfg, bool need_grades, bool need_labels) {
  require_path(cfg.reflections, "reflections");
  Dataset ds;
  try {
    ds = parse_reflections(cfg.reflections, cfg.sessions_per_term);
    if (need_grades) {
      require_path(cfg.grades, "grades");
      ds.grades = parse_grades(cfg.grades);
    }
    if (need_labels) {
      require_path(cfg.labels, "labels");
      ds.human_labels = parse_human_labels(cfg.labels);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw DataError(e.what());
  }
  return ds;
}

inline std::filesystem::path results_path(const RunConfig& cfg) {
  return cfg.out / "assessments" / (cfg.condition_name() + ".jsonl");
}

inline std::filesystem::path failures_path(const RunConfig& cfg) {
  return cfg.out / "assessments" / (cfg.condition_name() + ".failures.json");
}

inline std::size_t failed_cell_count(const RunConfig& cfg) {
  const auto path = failures_path(cfg);
  if (!std::filesystem::exists(path)) return 0;
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  return j.value("failed", std::size_t{0});
}

inline std::string model_file_name(const std::string& model, PredictionTask task,
                                   const std::string& condition) {
  return model + "_" + std::string(task_name(task)) + "_" + condition + ".json";
}

}  // namespace detail_pipeline

/// Maps thrown errors onto the stable exit-code contract:
/// 0 success, 2 configuration/usage error, 3 data/threshold error.
template <typename Fn>
int run_command(Fn&& fn, std::ostream& err = std::cerr) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// simulate: generate reflections/grades/labels files at the configured paths.
inline int cmd_simulate(RunConfig cfg, std::ostream& log = std::cout) {
  return run_command([&] {
    if (cfg.reflections.empty() || cfg.grades.empty())
      throw ConfigError("config: simulate requires `reflections` and `grades` output paths");
    cfg.synthetic.seed = cfg.seed;
    SyntheticResult result = simulate(cfg.synthetic);
    ValidationReport rep = validate_dataset(result.dataset);
    if (!rep.grid_complete())
      throw Error("internal: synthetic dataset grid incomplete");
    if (cfg.synthetic.raters > 0 && cfg.labels.empty())
      throw ConfigError("config: simulate with raters requires a `labels` output path");
    detail_pipeline::ensure_out_dirs(cfg);
    detail_pipeline::echo_config(cfg);
    write_synthetic(result, cfg.reflections, cfg.grades,
                    cfg.labels.empty() ? cfg.grades.parent_path() / "labels.csv" : cfg.labels);
    log << "simulate: students=" << result.dataset.grades.size()
        << " reflections=" << result.dataset.reflections.size()
        << " labels=" << result.dataset.human_labels.size() << " seed=" << cfg.seed << "\n";
  }, log);
}

/// assess: run the configured condition over every reflection and persist
/// results + failure report under out/assessments/.
inline int cmd_assess(const RunConfig& cfg, std::ostream& log = std::cout) {
  return run_command([&] {
    AssessmentConfig a = [&] {
      try {
        return detail_pipeline::assessment_config(cfg);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }();
    Dataset ds = detail_pipeline::load_dataset(cfg, false, false);
    auto backend = detail_pipeline::make_backend(cfg, a);
    auto cache = cfg.cache_enabled && !cfg.cache.empty()
                     ? std::make_shared<ResponseCache>(cfg.cache)
                     : std::make_shared<ResponseCache>();
    GatewayOptions opts;
    opts.max_attempts = cfg.max_attempts;
    opts.backoff_base_ms = cfg.backoff_ms;
    opts.attempt_timeout_ms = cfg.timeout_ms;
    opts.cache_enabled = cfg.cache_enabled;
    GatewayClient gateway(backend, cache, opts);

    BatchOutcome batch = assess_batch(ds, a, gateway);
    detail_pipeline::ensure_out_dirs(cfg);
    detail_pipeline::echo_config(cfg);
    write_results(batch, a.strategy, a.prompting, detail_pipeline::results_path(cfg));
    write_failure_report(batch, detail_pipeline::failures_path(cfg));
    log << "assess: condition=" << cfg.condition_name() << " cells=" << batch.total
        << " assessed=" << batch.results.size() << " failed=" << batch.failures.size()
        << " backend_calls=" << gateway.stats().backend_calls.load()
        << " cache_hits=" << gateway.stats().cache_hits.load()
        << " retries=" << gateway.stats().retries.load() << "\n";
    if (batch.failure_rate() > cfg.failure_rate_threshold)
      throw DataError("failure rate " + std::to_string(batch.failure_rate()) +
                      " exceeds threshold " + std::to_string(cfg.failure_rate_threshold));
  }, log);
}

/// validate: compare persisted machine scores against human labels.
inline int cmd_validate(const RunConfig& cfg, std::ostream& log = std::cout) {
  return run_command([&] {
    detail_pipeline::require_path(cfg.labels, "labels");
    const auto results_file = detail_pipeline::results_path(cfg);
    if (!std::filesystem::exists(results_file))
      throw ConfigError("no assessments found at " + results_file.string() +
                        "; run `assess` first");
    LoadedResults results = load_results(results_file);
    std::map<LabelKey, ScoreLevel> labels;
    try {
      labels = parse_human_labels(cfg.labels);
    } catch (const Error& e) {
      throw DataError(e.what());
    }
    AgreementReport rep;
    try {
      rep = build_agreement_report(results.score_map(), labels, cfg.sessions_per_term,
                                   cfg.alpha_metric, detail_pipeline::failed_cell_count(cfg));
    } catch (const Error& e) {
      throw DataError(e.what());  // e.g. no overlapping labeled cells
    }
    detail_pipeline::ensure_out_dirs(cfg);
    detail_pipeline::echo_config(cfg);
    const std::string cond = cfg.condition_name();
    {
      std::ofstream out(cfg.out / "agreement" / (cond + "_report.json"), std::ios::trunc);
      out << agreement_report_to_json(rep).dump(2) << "\n";
    }
    write_per_week_csv(rep.weekly, cfg.sessions_per_term,
                       cfg.out / "agreement" / (cond + "_per_week_em.csv"));
    log << "validate: condition=" << cond << " compared=" << rep.compared_cells
        << " em_overall=" << rep.em_overall << " em_mean=" << rep.weekly.mean
        << " em_std=" << rep.weekly.stddev;
    if (rep.alpha) log << " alpha=" << rep.alpha->value;
    log << "\n";
  }, log);
}

/// train: fit forest + recurrent models for both tasks on the training terms.
inline int cmd_train(const RunConfig& cfg, std::ostream& log = std::cout) {
  return run_command([&] {
    Dataset ds = detail_pipeline::load_dataset(cfg, true, false);
    const auto results_file = detail_pipeline::results_path(cfg);
    if (!std::filesystem::exists(results_file))
      throw ConfigError("no assessments found at " + results_file.string() +
                        "; run `assess` first");
    LoadedResults results = load_results(results_file);
    auto sequences = build_sequences(results.score_map(), ds);
    TermSplit split;
    try {
      split = split_by_term(ds, cfg.train_terms, cfg.test_term);
    } catch (const Error& e) {
      throw DataError(e.what());
    }
    TaskData train = assemble_task_data(sequences, ds, split.train_students);

    detail_pipeline::ensure_out_dirs(cfg);
    detail_pipeline::echo_config(cfg);
    const std::string cond = cfg.condition_name();
    int trained = 0;
    for (PredictionTask task : {PredictionTask::AtRisk, PredictionTask::Grade}) {
      RfHyper rf_hyper = cfg.forest;
      rf_hyper.seed = detail::mix_seed(cfg.seed, task == PredictionTask::AtRisk ? 1 : 2);
      RandomForestModel forest = RandomForestModel::train(train.rows_for(task), rf_hyper);
      forest.save(cfg.out / "models" / detail_pipeline::model_file_name("forest", task, cond));

      RecurrentHyper rnn_hyper = cfg.recurrent;
      rnn_hyper.seed = detail::mix_seed(cfg.seed, task == PredictionTask::AtRisk ? 3 : 4);
      TrainingCurve curve;
      RecurrentClassifier rnn =
          RecurrentClassifier::train(train.sequences, train.labels(task), rnn_hyper, &curve);
      rnn.save(cfg.out / "models" / detail_pipeline::model_file_name("recurrent", task, cond));
      trained += 2;
      log << "train: task=" << task_name(task) << " students=" << train.students.size()
          << " final_loss=" << (curve.losses.empty() ? 0.0 : curve.losses.back())
          << " loss_warnings=" << curve.monotonicity_warnings.size() << "\n";
    }
    log << "train: condition=" << cond << " models=" << trained << "\n";
  }, log);
}

/// evaluate: score the holdout term with the trained models and emit
/// per-model/per-task reports.
inline int cmd_evaluate(const RunConfig& cfg, std::ostream& log = std::cout) {
  return run_command([&] {
    Dataset ds = detail_pipeline::load_dataset(cfg, true, false);
    const auto results_file = detail_pipeline::results_path(cfg);
    if (!std::filesystem::exists(results_file))
      throw ConfigError("no assessments found at " + results_file.string() +
                        "; run `assess` first");
    LoadedResults results = load_results(results_file);
    auto sequences = build_sequences(results.score_map(), ds);
    TermSplit split;
    try {
      split = split_by_term(ds, cfg.train_terms, cfg.test_term);
    } catch (const Error& e) {
      throw DataError(e.what());
    }
    TaskData test = assemble_task_data(sequences, ds, split.test_students);

    const std::string cond = cfg.condition_name();
    nlohmann::json evaluation = {{"schema_version", kEvalSchemaVersion},
                                 {"condition", cond},
                                 {"models", nlohmann::json::object()}};
    for (const std::string& model_name : {std::string("forest"), std::string("recurrent")}) {
      nlohmann::json per_task = nlohmann::json::object();
      for (PredictionTask task : {PredictionTask::AtRisk, PredictionTask::Grade}) {
        const auto model_path =
            cfg.out / "models" / detail_pipeline::model_file_name(model_name, task, cond);
        if (!std::filesystem::exists(model_path))
          throw ConfigError("missing model file " + model_path.string() + "; run `train` first");
        std::vector<std::string> preds;
        if (model_name == "forest") {
          RandomForestModel model = RandomForestModel::load(model_path);
          preds = model.predict_batch(test.feature_matrix());
        } else {
          RecurrentClassifier model = RecurrentClassifier::load(model_path);
          preds = model.predict_batch(test.sequences);
        }
        EvalReport rep = evaluate(preds, test.labels(task), std::string(task_name(task)));
        per_task[std::string(task_name(task))] = eval_report_to_json(rep);
        write_confusion_csv(rep, cfg.out / "reports" /
                                     ("confusion_" + model_name + "_" +
                                      std::string(task_name(task)) + "_" + cond + ".csv"));
        log << "evaluate: model=" << model_name << " task=" << task_name(task)
            << " accuracy=" << rep.accuracy << " f1=" << rep.f1 << "\n";
      }
      evaluation["models"][model_name] = per_task;
    }
    evaluation["baseline"] = {
        {"at_risk_majority_accuracy",
         majority_class_baseline_accuracy(test.labels(PredictionTask::AtRisk))},
        {"grade_majority_accuracy",
         majority_class_baseline_accuracy(test.labels(PredictionTask::Grade))}};
    detail_pipeline::ensure_out_dirs(cfg);
    detail_pipeline::echo_config(cfg);
    std::ofstream out(cfg.out / "reports" / ("evaluation_" + cond + ".json"), std::ios::trunc);
    out << evaluation.dump(2) << "\n";
    log << "evaluate: condition=" << cond << " test_students=" << test.students.size() << "\n";
  }, log);
}

/// report: render everything present under out/ into summary.md and
/// performance.csv (one row per model x condition).
inline int cmd_report(const RunConfig& cfg, std::ostream& log = std::cout) {
  return run_command([&] {
    detail_pipeline::ensure_out_dirs(cfg);
    detail_pipeline::echo_config(cfg);

    std::ostringstream md;
    md << "# Reflection scoring report\n";

    // agreement sections, one per condition found
    std::vector<std::filesystem::path> agreement_files;
    for (const auto& entry : std::filesystem::directory_iterator(cfg.out / "agreement"))
      if (entry.path().extension() == ".json") agreement_files.push_back(entry.path());
    std::sort(agreement_files.begin(), agreement_files.end());

    md << "\n## Agreement with human labels\n\n";
    if (agreement_files.empty()) {
      md << "not run\n";
    } else {
      for (const auto& path : agreement_files) {
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        std::string cond = path.stem().string();
        const std::string suffix = "_report";
        if (cond.size() > suffix.size() && cond.ends_with(suffix))
          cond = cond.substr(0, cond.size() - suffix.size());
        md << "### Condition `" << cond << "`\n\n";
        md << "- exact match overall: " << j.at("em_overall").get<double>() << "%\n";
        md << "- weekly mean : std: " << j.at("em_mean").get<double>() << " : "
           << j.at("em_std").get<double>() << "\n";
        if (j.contains("alpha"))
          md << "- Krippendorff alpha (" << j.at("alpha_metric").get<std::string>()
             << "): " << j.at("alpha").get<double>() << "\n";
        md << "- compared cells: " << j.at("compared_cells").get<std::int64_t>()
           << " (failed assessments excluded: " << j.value("failed_cells", 0) << ")\n";
        md << "\n| week | EM (%) |\n|---|---|\n";
        const auto& per_week = j.at("em_per_week");
        for (int week = 1; week <= cfg.sessions_per_term; ++week) {
          const std::string key = std::to_string(week);
          if (per_week.contains(key))
            md << "| " << week << " | " << per_week.at(key).get<double>() << " |\n";
        }
        md << "\nConfusion (gold rows, predicted columns):\n\n";
        md << "| gold\\pred | 0 | 1 | 2 | 3 |\n|---|---|---|---|---|\n";
        const auto conf = j.at("confusion");
        for (int g = 0; g < 4; ++g) {
          md << "| " << g << " |";
          for (int p = 0; p < 4; ++p) md << " " << conf.at(g).at(p).get<std::int64_t>() << " |";
          md << "\n";
        }
        md << "\n";
      }
    }

    // performance table across evaluation files
    std::vector<std::filesystem::path> eval_files;
    for (const auto& entry : std::filesystem::directory_iterator(cfg.out / "reports"))
      if (entry.path().filename().string().starts_with("evaluation_") &&
          entry.path().extension() == ".json")
        eval_files.push_back(entry.path());
    std::sort(eval_files.begin(), eval_files.end());

    md << "\n## Prediction performance\n\n";
    std::ostringstream csv;
    csv << "model,condition,at_risk_accuracy,at_risk_precision,at_risk_recall,at_risk_f1,"
           "grade_accuracy,grade_precision,grade_recall,grade_f1\n";
    if (eval_files.empty()) {
      md << "not run\n";
    } else {
      md << "| model | condition | at-risk acc | prec | recall | F1 | grade acc | prec | "
            "recall | F1 |\n";
      md << "|---|---|---|---|---|---|---|---|---|---|\n";
      for (const auto& path : eval_files) {
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        const std::string cond = j.at("condition").get<std::string>();
        for (const auto& [model_name, tasks] : j.at("models").items()) {
          const auto& risk = tasks.at("at_risk");
          const auto& grade = tasks.at("grade");
          md << "| " << model_name << " | " << cond;
          csv << model_name << "," << cond;
          for (const auto* task : {&risk, &grade}) {
            for (const char* metric : {"accuracy", "precision", "recall", "f1"}) {
              md << " | " << task->at(metric).get<double>();
              csv << "," << task->at(metric).get<double>();
            }
          }
          md << " |\n";
          csv << "\n";
        }
      }
    }

    std::vector<std::string> missing;
    if (agreement_files.empty()) missing.push_back("agreement (run `validate`)");
    if (eval_files.empty()) missing.push_back("evaluation (run `evaluate`)");
    if (!missing.empty()) {
      md << "\n## Missing inputs\n\n";
      for (const auto& m : missing) md << "- " << m << "\n";
    }

    {
      std::ofstream out(cfg.out / "reports" / "summary.md", std::ios::trunc);
      out << md.str();
    }
    {
      std::ofstream out(cfg.out / "reports" / "performance.csv", std::ios::trunc);
      out << csv.str();
    }
    log << "report: wrote " << (cfg.out / "reports" / "summary.md").string() << " and "
        << (cfg.out / "reports" / "performance.csv").string() << "\n";
  }, log);
}

}  // namespace refscore
