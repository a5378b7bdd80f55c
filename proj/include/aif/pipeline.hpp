#pragma once

// End-to-end experiment stages. Every stage reads its inputs from a run
// directory, writes versioned outputs next to them, and records a text
// report that embeds the configuration it ran with.
//
//   collect        random.aiftraj
//   record-expert  expert.aiftraj
//   train-model    models.aifnet, train_model.report
//   build-prior    prior_<mode>.aifprior, build_prior_<mode>.report
//   plan-eval      candidates_<mode>.csv, plan_eval_<mode>.report
//   train-policy   policy.aifnet, train_policy.report
//   evaluate       evaluation.csv, evaluate.report
//   export-plots   plots/*.csv

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aif/habit_policy.hpp"
#include "aif/mountain_car.hpp"
#include "aif/planner.hpp"
#include "aif/preferred_prior.hpp"
#include "aif/world_model.hpp"

namespace aif {

struct PlanEvalConfig {
  /// The planning belief is the posterior of a scripted-expert run from
  /// `start`, taken at trajectory index `belief_index`.
  double start = -0.5;
  int belief_index = 0;
  int num_candidates = 2000;
  int horizon = 120;
  /// Closed-loop planning episodes from `start` (0 disables them).
  int control_episodes = 0;
};

struct EvaluationConfig {
  int episodes = 10;
  double start_min = -1.1;
  double start_max = 0.3;
  /// Episodes of the always-right baseline from start -0.5.
  int greedy_episodes = 10;
};

struct RunConfig {
  std::uint64_t seed = 1;
  EnvConfig env;
  int random_episodes = 100;
  int expert_episodes = 5;
  double expert_start_min = -0.6;
  double expert_start_max = -0.4;
  TrainConfig model;
  int prior_horizon = 200;
  int reward_threshold = 100;
  PlannerConfig planner;
  PlanEvalConfig plan_eval;
  PriorMode policy_prior = PriorMode::demos;
  PolicyTrainConfig policy;
  EvaluationConfig evaluation;

  /// Stage seeds are derived from `seed`; the per-module seed fields are
  /// overwritten when a stage runs.
  std::uint64_t stage_seed(const std::string& stage) const;
};

nlohmann::ordered_json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::ordered_json& json);
RunConfig load_run_config(const std::filesystem::path& path);

/// Text report: "AIFREPORT v1", "stage <name>", "config <json>", then
/// "key,value" scalar lines and optional tables ("table <name>", a column
/// header line, records, and a blank line).
struct Report {
  std::string stage;
  std::string config_json;
  std::vector<std::pair<std::string, std::string>> values;
  struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
  };
  std::vector<Table> tables;

  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  const Table& table(const std::string& name) const;
};

void write_report(std::ostream& out, const Report& report);
Report read_report(std::istream& in);
void save_report(const std::filesystem::path& path, const Report& report);
Report load_report(const std::filesystem::path& path);

namespace files {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kRandom = "random.aiftraj";
inline constexpr const char* kExpert = "expert.aiftraj";
inline constexpr const char* kModels = "models.aifnet";
inline constexpr const char* kTrainReport = "train_model.report";
inline constexpr const char* kPolicy = "policy.aifnet";
inline constexpr const char* kPolicyReport = "train_policy.report";
inline constexpr const char* kEvaluation = "evaluation.csv";
inline constexpr const char* kEvaluateReport = "evaluate.report";
inline constexpr const char* kPlots = "plots";
std::string prior(PriorMode mode);
std::string prior_report(PriorMode mode);
std::string candidates(PriorMode mode);
std::string plan_report(PriorMode mode);
}  // namespace files

/// Seeds of the random-agent episodes and the expert starts, as used by the stages.
std::vector<Trajectory> collect_random(const RunConfig& config);
std::vector<Trajectory> record_expert(const RunConfig& config);
/// Evenly spaced expert starts, endpoints included.
std::vector<double> expert_starts(const RunConfig& config);
/// Starts and seeds of the policy evaluation episodes.
std::pair<std::vector<double>, std::vector<std::uint64_t>> evaluation_episodes(const RunConfig& config);

void cmd_collect(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_record_expert(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_train_model(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_build_prior(const RunConfig& config, const std::filesystem::path& run_dir, PriorMode mode,
                     std::optional<int> threshold = std::nullopt);
void cmd_plan_eval(const RunConfig& config, const std::filesystem::path& run_dir, PriorMode mode);
void cmd_train_policy(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_evaluate(const RunConfig& config, const std::filesystem::path& run_dir);
void cmd_export_plots(const RunConfig& config, const std::filesystem::path& run_dir);
/// Every stage in order with both demo and reward priors.
void cmd_reproduce(const RunConfig& config, const std::filesystem::path& run_dir);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> x, std::span<const double> y);
/// One-sided permutation p-value for a positive correlation:
/// (1 + #{perm: rho_perm >= rho}) / (1 + permutations).
double spearman_permutation_p(std::span<const double> x, std::span<const double> y, int permutations, Rng& rng);

}  // namespace aif
