#include <CLI11.hpp>

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "aif/pipeline.hpp"

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

aif::RunConfig resolve_config(const GlobalOptions& options) {
  aif::RunConfig config;
  if (!options.config_path.empty()) config = aif::load_run_config(options.config_path);
  if (options.seed) config.seed = *options.seed;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active inference agent on mountain car"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions options;
  app.add_option("--config", options.config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", options.seed, "Override the run seed");
  app.add_option("--out", options.out, "Run directory")->capture_default_str();

  std::string mode = "demos";
  std::optional<int> threshold;
  std::string plan_mode = "demos";

  auto* collect = app.add_subcommand("collect", "Random-agent episodes");
  auto* record = app.add_subcommand("record-expert", "Scripted expert demonstrations");
  auto* train_model = app.add_subcommand("train-model", "Fit the world model");
  auto* build_prior = app.add_subcommand("build-prior", "Preferred-state prior");
  build_prior->add_option("--mode", mode, "demos|reward|flat")
      ->check(CLI::IsMember({"demos", "reward", "flat"}))
      ->capture_default_str();
  build_prior->add_option("--threshold", threshold, "First active timestep of the reward prior");
  auto* plan_eval = app.add_subcommand("plan-eval", "Score imagined candidates from a valley start");
  plan_eval->add_option("--mode", plan_mode, "Prior to plan against")
      ->check(CLI::IsMember({"demos", "reward", "flat"}))
      ->capture_default_str();
  auto* train_policy = app.add_subcommand("train-policy", "Fit the habit policy");
  auto* evaluate = app.add_subcommand("evaluate", "Closed-loop policy evaluation");
  auto* export_plots = app.add_subcommand("export-plots", "Plot-data series");
  auto* reproduce = app.add_subcommand("reproduce", "Every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const aif::RunConfig config = resolve_config(options);
    const std::filesystem::path dir = options.out;
    if (collect->parsed()) aif::cmd_collect(config, dir);
    else if (record->parsed()) aif::cmd_record_expert(config, dir);
    else if (train_model->parsed()) aif::cmd_train_model(config, dir);
    else if (build_prior->parsed()) aif::cmd_build_prior(config, dir, aif::prior_mode_from_string(mode), threshold);
    else if (plan_eval->parsed()) aif::cmd_plan_eval(config, dir, aif::prior_mode_from_string(plan_mode));
    else if (train_policy->parsed()) aif::cmd_train_policy(config, dir);
    else if (evaluate->parsed()) aif::cmd_evaluate(config, dir);
    else if (export_plots->parsed()) aif::cmd_export_plots(config, dir);
    else if (reproduce->parsed()) aif::cmd_reproduce(config, dir);
  } catch (const std::exception& e) {
    std::cerr << "aif: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
