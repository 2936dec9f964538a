// refscore command-line tool: score student reflections with LLM backends,
// validate against human labels, and predict at-risk status / final grades
// from the score sequences.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "refscore/pipeline.hpp"

namespace {

struct GlobalFlags {
  std::string config_path;
  std::string seed;
  std::string backend;
  std::string strategy;
  std::string prompting;
  std::string out;
};

void add_global_flags(CLI::App* cmd, GlobalFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Path to a JSON config file");
  cmd->add_option("--seed", flags.seed, "Run-level seed (overrides config)");
  cmd->add_option("--backend", flags.backend, "Backend kind: http or mock")
      ->check(CLI::IsMember({"http", "mock"}));
  cmd->add_option("--strategy", flags.strategy, "Assessment strategy: single or multi")
      ->check(CLI::IsMember({"single", "multi"}));
  cmd->add_option("--prompting", flags.prompting, "Prompting: zero or few")
      ->check(CLI::IsMember({"zero", "few"}));
  cmd->add_option("--out", flags.out, "Output directory (overrides config)");
}

// Config file first, then flag overrides on top.
refscore::RunConfig resolve_config(const GlobalFlags& flags) {
  refscore::RunConfig cfg;
  if (!flags.config_path.empty()) cfg = refscore::load_config(flags.config_path);
  if (!flags.seed.empty()) cfg.seed = std::stoull(flags.seed);
  if (!flags.backend.empty()) cfg.backend_kind = flags.backend;
  if (!flags.strategy.empty()) cfg.strategy = refscore::strategy_from_name(flags.strategy);
  if (!flags.prompting.empty()) cfg.prompting = refscore::prompting_from_name(flags.prompting);
  if (!flags.out.empty()) cfg.out = flags.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Student reflection scoring and performance prediction pipeline"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* cmd;
    GlobalFlags flags;
    int (*run)(refscore::RunConfig, std::ostream&);
  };

  std::vector<Sub> subs;
  subs.reserve(8);  // CLI11 keeps pointers into each Sub's flags
  auto add = [&](const std::string& name, const std::string& help,
                 int (*run)(refscore::RunConfig, std::ostream&)) {
    subs.push_back(Sub{app.add_subcommand(name, help), {}, run});
    add_global_flags(subs.back().cmd, subs.back().flags);
  };

  add("simulate", "Generate a synthetic dataset (reflections, grades, labels)",
      [](refscore::RunConfig cfg, std::ostream& log) { return refscore::cmd_simulate(cfg, log); });
  add("assess", "Score every reflection under the configured condition",
      [](refscore::RunConfig cfg, std::ostream& log) { return refscore::cmd_assess(cfg, log); });
  add("validate", "Compare machine scores against human labels",
      [](refscore::RunConfig cfg, std::ostream& log) { return refscore::cmd_validate(cfg, log); });
  add("train", "Train forest and recurrent models on the training terms",
      [](refscore::RunConfig cfg, std::ostream& log) { return refscore::cmd_train(cfg, log); });
  add("evaluate", "Evaluate trained models on the holdout term",
      [](refscore::RunConfig cfg, std::ostream& log) { return refscore::cmd_evaluate(cfg, log); });
  add("report", "Render agreement and performance summaries",
      [](refscore::RunConfig cfg, std::ostream& log) { return refscore::cmd_report(cfg, log); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems map to the config-error exit code
  }

  for (const auto& sub : subs) {
    if (!sub.cmd->parsed()) continue;
    refscore::RunConfig cfg;
    try {
      cfg = resolve_config(sub.flags);
    } catch (const refscore::Error& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
    return sub.run(cfg, std::cout);
  }
  return 2;
}
