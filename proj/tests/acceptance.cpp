// Acceptance suite: one end-to-end check per release criterion, fully offline
// against the deterministic mock backend. Prints one PASS/FAIL line per
// criterion and exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "refscore/pipeline.hpp"
#include "tree_gen.hpp"

using namespace refscore;

namespace {

struct Criterion {
  int number;
  std::string description;
  bool passed = true;
  std::ostringstream detail;
  double seconds = 0;
};

std::vector<Criterion> g_results;

class Check {
 public:
  Check(int number, std::string description)
      : start_(std::chrono::steady_clock::now()) {
    criterion_.number = number;
    criterion_.description = std::move(description);
  }

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      criterion_.passed = false;
      criterion_.detail << "    failed: " << what << "\n";
    }
  }

  void expect_near(double actual, double expected, double tol, const std::string& what) {
    expect(std::abs(actual - expected) <= tol,
           what + " (got " + std::to_string(actual) + ", want " + std::to_string(expected) + ")");
  }

  ~Check() {
    criterion_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
                             .count();
    g_results.push_back(std::move(criterion_));
  }

 private:
  Criterion criterion_;
  std::chrono::steady_clock::time_point start_;
};

std::filesystem::path scratch_dir(const std::string& leaf) {
  auto dir = std::filesystem::current_path() / "acceptance_tmp" / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------

void criterion_1_rubric_oracle() {
  Check c(1, "traverse agrees with exhaustive path enumeration on 51 trees");
  auto check_tree = [&](const DecisionTree& tree) {
    const auto paths = enumerate_paths(tree);
    std::set<int> scores;
    for (const auto& p : paths) {
      c.expect(traverse(tree, p.answers) == p.score, "traverse mismatch on an enumerated path");
      scores.insert(p.score.value());
    }
    c.expect(scores == std::set<int>{0, 1, 2, 3}, "leaf coverage violated");
  };
  check_tree(default_decision_tree());
  refscore::detail::Rng rng(20240801);
  for (int i = 0; i < 50; ++i) {
    DecisionTree tree = testgen::random_tree(rng, 6);
    c.expect(tree_depth(tree) <= 6, "generated tree exceeds depth 6");
    check_tree(tree);
  }
}

void criterion_2_orchestration_consistency() {
  Check c(2, "single and multi mock scores equal the generator level on 1008 cells");
  SyntheticSpec spec;
  spec.students_per_term = {72};
  spec.sessions_per_term = 14;
  spec.noise = 0.25;
  spec.seed = 424242;
  SyntheticResult data = simulate(spec);
  c.expect(data.dataset.reflections.size() == 1008, "corpus size");

  auto gateway_for = [](Strategy, Prompting) {
    return GatewayClient(std::make_shared<MockBackend>(), nullptr);
  };
  std::size_t mismatches = 0;
  for (Strategy strategy : {Strategy::SingleAgent, Strategy::MultiAgent}) {
    AssessmentConfig cfg;
    cfg.strategy = strategy;
    cfg.prompting = Prompting::FewShot;
    cfg.exemplars = default_exemplars();
    cfg.parallelism = 4;
    GatewayClient gateway = gateway_for(strategy, cfg.prompting);
    BatchOutcome batch = assess_batch(data.dataset, cfg, gateway);
    c.expect(batch.failures.empty(), "mock assessment failures");
    c.expect(batch.results.size() == data.dataset.reflections.size(), "result count");
    for (const auto& r : batch.results)
      if (r.score.value() != data.observed_levels.at(r.key)) ++mismatches;
  }
  c.expect(mismatches == 0,
           "strategy/generator disagreement on " + std::to_string(mismatches) + " cells");
}

void criterion_3_agreement_oracles() {
  Check c(3, "EM fixtures exact; alpha matches the brute-force oracle on 11 fixtures");
  // EM hand fixtures
  auto cell = [](int i) { return CellKey{"s" + std::to_string(i), 1, 1, "q"}; };
  auto as_map = [&](const std::vector<int>& v) {
    std::map<CellKey, ScoreLevel> m;
    for (std::size_t i = 0; i < v.size(); ++i) m.emplace(cell(static_cast<int>(i)), ScoreLevel(v[i]));
    return m;
  };
  c.expect_near(exact_match_rate(as_map({0, 1, 2, 3}), as_map({0, 1, 2, 0})), 75.0, 1e-9,
                "EM 3/4 fixture");
  c.expect_near(exact_match_rate(as_map({2, 2}), as_map({2, 2})), 100.0, 1e-9, "EM perfect");
  c.expect_near(exact_match_rate(as_map({0, 0, 0, 0, 1, 1, 1, 1}), as_map({0, 0, 0, 0, 0, 0, 0, 1})),
                62.5, 1e-9, "EM 5/8 fixture");

  const std::vector<std::vector<std::vector<int>>> fixtures = {
      {{1, 1}, {2, 2}, {3, 3}, {3, 2}},
      {{0, 0}, {1, 1}, {2, 2}, {3, 3}},              // perfect agreement
      {{1, 1}, {1, 2}, {1, 1}, {1, 2}},              // alpha <= 0 region
      {{0, 3}, {3, 0}, {0, 3}, {3, 0}},
      {{0, 0, 0}, {1, 1, 2}, {2, 2, 2}, {3, 3, 1}},
      {{0, 1}, {1, 2}, {2, 3}, {3, 3}, {0, 0}},
      {{2, 2}, {2, 2}, {2, 3}},
      {{0, 0}, {0, 0}, {3, 3}, {3, 3}, {3, 0}},
      {{1, 2, 3}, {0, 1, 2}, {3, 3, 3}},
      {{0, 1, 0, 1}, {2, 3, 2, 3}, {1, 1, 1, 1}},
      {{3, 2}, {2, 3}, {1, 0}, {0, 1}, {2, 2}, {1, 1}},
  };
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    RatingsMatrix m;
    for (std::size_t u = 0; u < fixtures[i].size(); ++u)
      for (std::size_t r = 0; r < fixtures[i][u].size(); ++r)
        m.add("u" + std::to_string(u), "r" + std::to_string(r), ScoreLevel(fixtures[i][u][r]));
    for (auto metric : {AlphaMetric::Nominal, AlphaMetric::Interval}) {
      const auto om = metric == AlphaMetric::Nominal ? oracle::AlphaMetric::Nominal
                                                     : oracle::AlphaMetric::Interval;
      c.expect_near(krippendorff_alpha(m, metric),
                    oracle::krippendorff_alpha_bruteforce(fixtures[i], om), 1e-9,
                    "alpha fixture " + std::to_string(i));
    }
  }
  // anchor values frozen from the oracle
  RatingsMatrix perfect;
  for (int u = 0; u < 4; ++u)
    for (int r = 0; r < 2; ++r) perfect.add("u" + std::to_string(u), "r" + std::to_string(r), ScoreLevel(u));
  c.expect_near(krippendorff_alpha(perfect, AlphaMetric::Nominal), 1.0, 1e-9, "perfect -> 1.0");
  RatingsMatrix alternating;
  for (int u = 0; u < 4; ++u) {
    alternating.add("u" + std::to_string(u), "r0", ScoreLevel(1));
    alternating.add("u" + std::to_string(u), "r1", ScoreLevel(u % 2 == 0 ? 1 : 2));
  }
  c.expect(krippendorff_alpha(alternating, AlphaMetric::Nominal) <= 0.0,
           "constant-vs-alternating must land in the <= 0 region");
}

void criterion_4_gradient_check() {
  Check c(4, "BPTT gradients match finite differences; softmax normalized on 1000 inputs");
  GruNet net(4, 3, 20240802);
  const std::vector<std::vector<double>> xs = {
      {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0}, {1.0, 1.0, 0.0},
      {2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 0.0}, {0.0}};
  const std::vector<int> ys = {0, 1, 2, 1};
  std::vector<double> grad;
  net.loss_and_grad(xs, ys, &grad);
  const double eps = 1e-5;
  double max_rel = 0;
  auto& params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = net.loss_and_grad(xs, ys, nullptr);
    params[i] = saved - eps;
    const double down = net.loss_and_grad(xs, ys, nullptr);
    params[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    max_rel = std::max(max_rel,
                       std::abs(numeric - grad[i]) /
                           std::max({std::abs(numeric), std::abs(grad[i]), 1.0}));
  }
  c.expect(max_rel < 1e-4, "max relative gradient error " + std::to_string(max_rel));

  refscore::detail::Rng rng(7);
  GruNet wide(6, 4, 3);
  for (auto& p : wide.params()) p = rng.uniform(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> seq;
    const std::size_t len = 1 + rng.below(14);
    for (std::size_t t = 0; t < len; ++t) seq.push_back(rng.uniform(0.0, 1.0));
    const auto probs = wide.forward_probs(seq);
    double sum = 0;
    for (double p : probs) sum += p;
    if (std::abs(sum - 1.0) >= 1e-9) {
      c.expect(false, "softmax sum deviates: " + std::to_string(sum));
      return;
    }
  }
}

struct LearnerRun {
  double forest_acc = 0;
  double recurrent_acc = 0;
  double baseline_acc = 0;
};

LearnerRun run_learners(double noise, std::uint64_t seed, int rnn_epochs) {
  SyntheticSpec spec;
  spec.students_per_term =
      noise == 0.0 ? std::vector<int>{300, 200, 100} : std::vector<int>{40, 40, 30};
  spec.sessions_per_term = 14;
  spec.noise = noise;
  spec.seed = seed;
  SyntheticResult data = simulate(spec);

  std::map<CellKey, ScoreLevel> scores;
  for (const auto& [key, lvl] : data.observed_levels) scores.emplace(key, ScoreLevel(lvl));
  auto sequences = build_sequences(scores, data.dataset);
  TermSplit split = split_by_term(data.dataset, {1, 2}, 3);
  TaskData train = assemble_task_data(sequences, data.dataset, split.train_students);
  TaskData test = assemble_task_data(sequences, data.dataset, split.test_students);

  RfHyper rf;
  rf.seed = refscore::detail::mix_seed(seed, 1);
  RandomForestModel forest = RandomForestModel::train(train.rows_for(PredictionTask::AtRisk), rf);
  RecurrentHyper rh;
  rh.seed = refscore::detail::mix_seed(seed, 2);
  rh.epochs = rnn_epochs;
  RecurrentClassifier rnn =
      RecurrentClassifier::train(train.sequences, train.risk_labels, rh);

  LearnerRun out;
  const auto& gold = test.risk_labels;
  const auto forest_preds = forest.predict_batch(test.feature_matrix());
  const auto rnn_preds = rnn.predict_batch(test.sequences);
  out.forest_acc = evaluate(forest_preds, gold, "at_risk").accuracy;
  out.recurrent_acc = evaluate(rnn_preds, gold, "at_risk").accuracy;
  out.baseline_acc = majority_class_baseline_accuracy(gold);
  return out;
}

void criterion_5_learner_sanity() {
  Check c(5, "planted rule learned >=99%; noisy runs beat the majority baseline over 20 seeds");
  LearnerRun clean = run_learners(0.0, 99001, 600);
  c.expect(clean.forest_acc >= 99.0,
           "noiseless forest at-risk accuracy " + std::to_string(clean.forest_acc));
  c.expect(clean.recurrent_acc >= 99.0,
           "noiseless recurrent at-risk accuracy " + std::to_string(clean.recurrent_acc));

  double forest_sum = 0, rnn_sum = 0, baseline_sum = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    LearnerRun run = run_learners(0.3, 5000 + static_cast<std::uint64_t>(s), 200);
    forest_sum += run.forest_acc;
    rnn_sum += run.recurrent_acc;
    baseline_sum += run.baseline_acc;
  }
  const double forest_mean = forest_sum / seeds;
  const double rnn_mean = rnn_sum / seeds;
  const double baseline_mean = baseline_sum / seeds;
  c.expect(forest_mean > baseline_mean,
           "forest mean " + std::to_string(forest_mean) + " vs baseline " +
               std::to_string(baseline_mean));
  c.expect(rnn_mean > baseline_mean,
           "recurrent mean " + std::to_string(rnn_mean) + " vs baseline " +
               std::to_string(baseline_mean));
}

void criterion_6_protocol_fidelity() {
  Check c(6, "281/96 term split; evaluate() matches hand-computed metrics to 1e-9");
  Dataset ds;
  ds.sessions_per_term = 14;
  const std::array<int, 3> cohort = {107, 174, 96};
  for (int term = 1; term <= 3; ++term)
    for (int s = 0; s < cohort[static_cast<std::size_t>(term - 1)]; ++s) {
      const std::string id = "t" + std::to_string(term) + "s" + std::to_string(s);
      ds.reflections.push_back({{id, term, 1, "q1"}, "x"});
      ds.grades.emplace(id, GradeLabel("ABCDE"[s % 5]));
    }
  TermSplit split = split_by_term(ds, {1, 2}, 3);
  c.expect(split.train_students.size() == 281, "train size");
  c.expect(split.test_students.size() == 96, "test size");
  std::set<std::string> train_set(split.train_students.begin(), split.train_students.end());
  bool overlap = false;
  for (const auto& s : split.test_students) overlap |= train_set.count(s) > 0;
  c.expect(!overlap, "split overlap");

  EvalReport fixture = evaluate({"AtRisk", "AtRisk", "NoRisk", "NoRisk"},
                                {"AtRisk", "NoRisk", "NoRisk", "NoRisk"}, "at_risk");
  c.expect_near(fixture.accuracy, 75.0, 1e-9, "fixture accuracy");
  c.expect_near(fixture.precision, 87.5, 1e-9, "fixture weighted precision");
  c.expect_near(fixture.recall, 75.0, 1e-9, "fixture weighted recall");
  c.expect_near(fixture.f1, 100.0 * (1.0 * (2.0 / 3.0) + 3.0 * 0.8) / 4.0, 1e-9,
                "fixture weighted F1");

  std::vector<std::string> gold(42, "AtRisk");
  gold.insert(gold.end(), 54, "NoRisk");
  EvalReport constant = evaluate(std::vector<std::string>(96, "AtRisk"), gold, "at_risk");
  c.expect_near(constant.accuracy, 43.75, 1e-9, "constant-predictor accuracy");

  // weighted recall == accuracy on every report, including random ones
  refscore::detail::Rng rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::string> p, g;
    const int n = 1 + static_cast<int>(rng.below(100));
    for (int i = 0; i < n; ++i) {
      p.push_back(std::string(1, "ABCDE"[rng.below(5)]));
      g.push_back(std::string(1, "ABCDE"[rng.below(5)]));
    }
    EvalReport rep = evaluate(p, g, "grade");
    c.expect(std::abs(rep.recall - rep.accuracy) <= 1e-9, "weighted recall != accuracy");
  }
}

struct CliRun {
  int exit_code = -1;
  std::string output;
};

CliRun run_cli(const std::string& args) {
  CliRun run;
  const std::string cmd = std::string(REFSCORE_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return run;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) run.output.append(buf, n);
  const int status = pclose(pipe);
  run.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return run;
}

void criterion_7_determinism_replay() {
  Check c(7, "two seeded CLI pipeline runs are byte-identical with zero backend calls on replay");
  const auto dir = scratch_dir("cli_pipeline");
  RunConfig cfg;
  cfg.reflections = dir / "reflections.jsonl";
  cfg.grades = dir / "grades.csv";
  cfg.labels = dir / "labels.csv";
  cfg.cache = dir / "cache.jsonl";
  cfg.out = dir / "out";
  cfg.seed = 20240803;
  cfg.sessions_per_term = 6;
  cfg.synthetic.students_per_term = {8, 8, 8};
  cfg.synthetic.sessions_per_term = 6;
  cfg.synthetic.raters = 3;
  cfg.forest.n_trees = 30;
  cfg.recurrent.hidden = 6;
  cfg.recurrent.epochs = 40;
  const auto config_path = dir / "config.json";
  {
    std::ofstream out(config_path);
    out << config_to_json(cfg).dump(2) << "\n";
  }
  const std::string base = "--config " + config_path.string();
  auto run_stage = [&](const std::string& stage) {
    CliRun run = run_cli(stage + " " + base);
    c.expect(run.exit_code == 0, stage + " exited " + std::to_string(run.exit_code) + "\n" +
                                     run.output);
    return run;
  };

  std::map<std::string, std::string> first_tree;
  std::string second_assess_output;
  for (int pass = 1; pass <= 2; ++pass) {
    run_stage("simulate");
    CliRun assess = run_stage("assess");
    if (pass == 2) second_assess_output = assess.output;
    run_stage("validate");
    run_stage("train");
    run_stage("evaluate");
    run_stage("report");
    if (pass == 1) {
      for (const auto& entry : std::filesystem::recursive_directory_iterator(cfg.out))
        if (entry.is_regular_file())
          first_tree[entry.path().string()] = read_file(entry.path());
      c.expect(!first_tree.empty(), "first run produced no outputs");
    }
  }
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(cfg.out))
    if (entry.is_regular_file()) {
      ++files;
      auto it = first_tree.find(entry.path().string());
      if (it == first_tree.end()) {
        c.expect(false, "new file appeared on rerun: " + entry.path().string());
      } else if (read_file(entry.path()) != it->second) {
        c.expect(false, "file differs between runs: " + entry.path().string());
      }
    }
  c.expect(files == first_tree.size(), "file count differs between runs");
  c.expect(second_assess_output.find("backend_calls=0") != std::string::npos,
           "replay made backend calls: " + second_assess_output);
}

void criterion_8_few_shot_contract() {
  Check c(8, "few-shot prompts carry exactly the right exemplars; zero-shot carries none");
  const ScoringCriteria criteria = default_criteria();
  const ExemplarSet exemplars = default_exemplars();
  auto count = [](const std::string& hay, const std::string& needle) {
    std::size_t n = 0, pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string::npos) {
      ++n;
      pos += needle.size();
    }
    return n;
  };

  RenderedPrompt few = build_single_prompt(criteria, exemplars, Prompting::FewShot, "text");
  c.expect(count(few.system, "\nSCORE:") == 4, "single few-shot exemplar count");
  std::size_t prev = 0;
  for (int lvl = 0; lvl <= 3; ++lvl) {
    const auto pos = few.system.find("SCORE: " + std::to_string(lvl));
    c.expect(pos != std::string::npos, "exemplar for level " + std::to_string(lvl) + " present");
    c.expect(pos > prev || lvl == 0, "exemplars ascending by level");
    prev = pos;
  }
  RenderedPrompt zero = build_single_prompt(criteria, exemplars, Prompting::ZeroShot, "text");
  c.expect(count(zero.system, "\nSCORE:") == 0, "zero-shot must carry no exemplars");

  const DecisionTree tree = default_decision_tree();
  for (const auto& [id, node] : tree.nodes) {
    RenderedPrompt p = build_node_prompt(node, Prompting::FewShot, "text");
    for (const auto& ex : node.exemplars)
      c.expect(p.system.find(ex.text) != std::string::npos,
               "node " + id + " missing its own exemplar");
    for (const auto& [other_id, other] : tree.nodes) {
      if (other_id == id) continue;
      for (const auto& ex : other.exemplars) {
        bool shared = false;  // exemplars may legitimately appear on two adjacent nodes
        for (const auto& own : node.exemplars) shared |= own.text == ex.text;
        if (!shared)
          c.expect(p.system.find(ex.text) == std::string::npos,
                   "node " + id + " leaked an exemplar from " + other_id);
      }
    }
    RenderedPrompt z = build_node_prompt(node, Prompting::ZeroShot, "text");
    c.expect(count(z.system, "\nANSWER:") == 0, "zero-shot node prompt must carry no exemplars");
  }
}

}  // namespace

int main() {
  criterion_1_rubric_oracle();
  criterion_2_orchestration_consistency();
  criterion_3_agreement_oracles();
  criterion_4_gradient_check();
  criterion_5_learner_sanity();
  criterion_6_protocol_fidelity();
  criterion_7_determinism_replay();
  criterion_8_few_shot_contract();

  int failures = 0;
  for (const auto& r : g_results) {
    std::printf("[%s] criterion %d: %s (%.2fs)\n", r.passed ? "PASS" : "FAIL", r.number,
                r.description.c_str(), r.seconds);
    if (!r.passed) {
      ++failures;
      std::fputs(r.detail.str().c_str(), stdout);
    }
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(g_results.size()) - failures,
              g_results.size());
  return failures == 0 ? 0 : 1;
}
