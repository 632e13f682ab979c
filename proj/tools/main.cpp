// Command-line front end for the conflict-resolution pipeline.
//
// Subcommands mirror the pipeline stages (train, strategize, plan, simulate),
// plus `pipeline` to run several stages in sequence, `plots` to emit
// plot-ready CSV series from a trace, and `check` to validate an artifact
// against its module invariants.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "confres/io.hpp"

namespace {

struct CommonArgs {
  std::string scenario;
  std::string out = ".";
  std::string config;
  std::string weights;
  std::int64_t seed = -1;  // -1: use the scenario seed
};

void add_common(CLI::App* cmd, CommonArgs& args, bool scenario_required) {
  auto* s = cmd->add_option("--scenario", args.scenario,
                            "Scenario file (JSON)");
  if (scenario_required) s->required();
  cmd->add_option("--out", args.out, "Output directory for artifacts");
  cmd->add_option("--seed", args.seed,
                  "Override the scenario RNG seed (>= 0)");
  cmd->add_option("--config", args.config,
                  "JSON file overriding train/solver/mpc parameters");
  cmd->add_option("--weights", args.weights,
                  "Pre-trained policy weights (skips the train stage)");
}

confres::RunManifest make_manifest(const CommonArgs& args) {
  confres::RunManifest m;
  m.scenario_path = args.scenario;
  m.weights_path = args.weights;
  m.out_dir = args.out;
  if (args.seed >= 0) {
    m.seed = static_cast<std::uint64_t>(args.seed);
    m.seed_set = true;
  }
  if (!args.config.empty())
    confres::apply_config_overrides(confres::ioutil::parse_json(args.config),
                                    m.train_config, m.solver_config,
                                    m.mpc_config);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed multi-vehicle conflict resolution"};
  app.require_subcommand(1);

  CommonArgs train_args, strat_args, plan_args, sim_args, pipe_args;
  auto* cmd_train = app.add_subcommand("train", "Train the grid policy");
  add_common(cmd_train, train_args, true);
  auto* cmd_strat =
      app.add_subcommand("strategize", "Roll out the policy into strategies");
  add_common(cmd_strat, strat_args, true);
  auto* cmd_plan =
      app.add_subcommand("plan", "Plan reference trajectories");
  add_common(cmd_plan, plan_args, true);
  auto* cmd_sim =
      app.add_subcommand("simulate", "Run the distributed closed loop");
  add_common(cmd_sim, sim_args, true);
  auto* cmd_pipe =
      app.add_subcommand("pipeline", "Run stages in sequence");
  add_common(cmd_pipe, pipe_args, true);
  bool skip_train = false;
  cmd_pipe->add_flag("--skip-train", skip_train,
                     "Reuse existing weights instead of training");

  std::string plots_trace, plots_out = ".";
  auto* cmd_plots =
      app.add_subcommand("plots", "Emit plot-data CSVs from a trace");
  cmd_plots->add_option("--trace", plots_trace, "Trace CSV file")->required();
  cmd_plots->add_option("--out", plots_out, "Output directory");

  std::string check_path, check_scenario;
  auto* cmd_check =
      app.add_subcommand("check", "Validate an artifact's invariants");
  cmd_check->add_option("artifact", check_path, "Artifact file")->required();
  cmd_check->add_option("--scenario", check_scenario,
                        "Scenario for geometry-dependent checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      auto m = make_manifest(train_args);
      m.train = true;
      confres::run_pipeline(m);
    } else if (cmd_strat->parsed()) {
      auto m = make_manifest(strat_args);
      m.strategize = true;
      confres::run_pipeline(m);
    } else if (cmd_plan->parsed()) {
      auto m = make_manifest(plan_args);
      m.plan = true;
      confres::run_pipeline(m);
    } else if (cmd_sim->parsed()) {
      auto m = make_manifest(sim_args);
      m.simulate = true;
      confres::run_pipeline(m);
    } else if (cmd_pipe->parsed()) {
      auto m = make_manifest(pipe_args);
      m.train = !skip_train && m.weights_path.empty();
      m.strategize = m.plan = m.simulate = true;
      confres::run_pipeline(m);
      const auto summary = confres::ioutil::parse_json(
          (std::filesystem::path(m.out_dir) / "summary.json").string());
      std::cout << "all_arrived=" << summary["all_arrived"].dump()
                << " rounds=" << summary["rounds"].dump()
                << " solve_ms_median=" << summary["solve_ms_median"].dump()
                << " solve_ms_p98=" << summary["solve_ms_p98"].dump() << "\n";
    } else if (cmd_plots->parsed()) {
      confres::emit_plots(plots_trace, plots_out);
    } else if (cmd_check->parsed()) {
      const auto problems =
          confres::check_artifact(check_path, check_scenario);
      for (const auto& p : problems) std::cout << "FAIL " << p << "\n";
      if (!problems.empty()) return 1;
      std::cout << "OK " << check_path << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
