#include "aif/habit_policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <string>

#include "aif/error.hpp"
#include "aif/planner.hpp"
#include "aif/text_format.hpp"

namespace aif {

namespace {

constexpr const char* kEvalMagic = "AIFEVAL v1";
constexpr const char* kEvalColumns = "start,seed,success,steps";

}  // namespace

std::string to_string(PolicyMode mode) {
  return mode == PolicyMode::deterministic ? "deterministic" : "stochastic";
}

PolicyMode policy_mode_from_string(const std::string& name) {
  if (name == "deterministic") return PolicyMode::deterministic;
  if (name == "stochastic") return PolicyMode::stochastic;
  throw ContractViolation("unknown policy mode '" + name + "'");
}

HabitPolicy HabitPolicy::initialize(int state_dim, const std::vector<int>& hidden, std::uint64_t seed,
                                    PolicyMode mode) {
  require(state_dim >= 1, "HabitPolicy: state_dim must be positive");
  NetworkShape shape{state_dim, kActionDim, hidden, Activation::tanh};
  return HabitPolicy{NetworkParams::initialize(shape, seed), mode};
}

Checkpoint HabitPolicy::to_checkpoint() const {
  Checkpoint cp;
  cp.kind = "habit_policy";
  cp.metadata["mode"] = to_string(mode);
  cp.metadata["state_dim"] = std::to_string(state_dim());
  cp.networks = {{"policy", net}};
  return cp;
}

HabitPolicy HabitPolicy::from_checkpoint(const Checkpoint& cp) {
  if (cp.kind != "habit_policy") throw FormatError("AIFNET: expected kind 'habit_policy', found '" + cp.kind + "'");
  HabitPolicy p{cp.network("policy"), policy_mode_from_string(cp.meta("mode"))};
  if (p.net.output_dim() != kActionDim || p.state_dim() != std::stoi(cp.meta("state_dim"))) {
    throw FormatError("AIFNET: policy network shape inconsistent with its manifest");
  }
  return p;
}

void save_policy(const std::filesystem::path& path, const HabitPolicy& policy) {
  save_checkpoint(path, policy.to_checkpoint());
}

HabitPolicy load_policy(const std::filesystem::path& path) {
  return HabitPolicy::from_checkpoint(load_checkpoint(path));
}

double policy_action(const HabitPolicy& policy, std::span<const double> s, Rng& rng) {
  if (static_cast<int>(s.size()) != policy.state_dim()) {
    throw ContractViolation("policy_action: state has dimension " + std::to_string(s.size()) + ", policy expects " +
                            std::to_string(policy.state_dim()));
  }
  const DiagonalGaussian g = policy.net.evaluate(s);
  if (policy.mode == PolicyMode::deterministic) return std::tanh(g.mean()[0]);
  std::normal_distribution<double> normal;
  const double eps = normal(rng);
  return std::tanh(reparam_sample(g, std::span<const double>(&eps, 1))[0]);
}

std::vector<StartState> start_states_from_dataset(const ModelSet& models, const std::vector<Trajectory>& dataset,
                                                  int max_index) {
  std::vector<StartState> out;
  for (const Trajectory& traj : dataset) {
    const std::vector<DiagonalGaussian> beliefs = encode_trajectory(models, traj);
    std::size_t end = beliefs.size();
    if (max_index >= 0) end = std::min(end, static_cast<std::size_t>(max_index) + 1);
    for (std::size_t t = 0; t < end; ++t) out.push_back(StartState{beliefs[t].mean(), t + 1});
  }
  return out;
}

RolloutNoise draw_rollout_noise(std::size_t batch, int state_dim, int horizon, bool sample_states, Rng& rng) {
  std::normal_distribution<double> normal;
  const auto rows = static_cast<Eigen::Index>(batch);
  RolloutNoise noise;
  for (int k = 0; k < horizon; ++k) {
    Matrix a(rows, 1);
    for (Eigen::Index i = 0; i < rows; ++i) a(i, 0) = normal(rng);
    Matrix s(rows, state_dim);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (int j = 0; j < state_dim; ++j) s(i, j) = normal(rng);
    }
    noise.action.push_back(std::move(a));
    if (sample_states) noise.state.push_back(std::move(s));
  }
  return noise;
}

ad::Var policy_free_energy_graph(ad::Tape& tape, const BoundNetwork& policy, const ModelVars& models,
                                 const Matrix& starts, std::span<const std::size_t> offsets,
                                 const PreferredPrior& prior, const RolloutNoise& noise) {
  const auto rows = starts.rows();
  const auto d = starts.cols();
  require(rows >= 1, "policy_free_energy_graph: no start states");
  require(static_cast<std::size_t>(rows) == offsets.size(), "policy_free_energy_graph: one offset per start required");
  require(!noise.action.empty() && (noise.state.empty() || noise.action.size() == noise.state.size()),
          "policy_free_energy_graph: malformed noise");
  require(prior.state_dim == d, "policy_free_energy_graph: prior and state dimensions differ");

  ad::Var state = tape.constant(starts);
  ad::Var total;
  for (std::size_t k = 0; k < noise.action.size(); ++k) {
    const ad::GaussianVar pi = forward_gaussian(tape, policy, state);
    const ad::Var action = ad::tanh(tape, ad::reparam_sample(tape, pi, noise.action[k]));
    const ad::Var joint[] = {state, action};
    const ad::GaussianVar predicted = forward_gaussian(tape, models.transition, ad::concat_cols(tape, joint));

    Matrix prior_mean(rows, d), prior_var(rows, d), mask(rows, 1);
    bool any_active = false;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const PriorEntry& entry =
          prior.at(prior_index(prior, offsets[static_cast<std::size_t>(i)], k, PriorAlignment::clamp));
      for (Eigen::Index j = 0; j < d; ++j) {
        prior_mean(i, j) = entry.gaussian.mean()[static_cast<std::size_t>(j)];
        prior_var(i, j) = entry.gaussian.variance()[static_cast<std::size_t>(j)];
      }
      mask(i, 0) = entry.active ? 1.0 : 0.0;
      any_active = any_active || entry.active;
    }

    state = noise.state.empty() ? predicted.mean : ad::reparam_sample(tape, predicted, noise.state[k]);
    ad::Var step = ad::entropy(tape, forward_gaussian(tape, models.likelihood, state));
    if (any_active) {
      const ad::GaussianVar target{tape.constant(std::move(prior_mean)), tape.constant(std::move(prior_var))};
      const ad::Var kl = ad::mul(tape, ad::kl_divergence(tape, predicted, target), tape.constant(std::move(mask)));
      step = ad::add(tape, step, kl);
    }
    total = total.valid() ? ad::add(tape, total, step) : step;
  }
  return ad::mean(tape, total);
}

PolicyTrainingResult train_policy(const ModelSet& models, const PreferredPrior& prior,
                                  const std::vector<Trajectory>& dataset, const PolicyTrainConfig& config) {
  require(config.horizon >= 1 && config.iterations >= 0 && config.batch_size >= 1,
          "train_policy: horizon and batch size must be positive");
  require(prior.length() >= 1, "train_policy: empty prior");
  const std::vector<StartState> pool = start_states_from_dataset(models, dataset, config.max_start_index);
  if (pool.empty()) throw DataError("train_policy: dataset has no observations");

  PolicyTrainingResult result{HabitPolicy::initialize(models.state_dim, config.hidden, config.seed,
                                                      PolicyMode::stochastic),
                              {}};
  OptimizerState optimizer = OptimizerState::for_network(result.policy.net, config.adam);
  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int it = 0; it < config.iterations; ++it) {
    Matrix starts(static_cast<Eigen::Index>(batch), models.state_dim);
    std::vector<std::size_t> offsets(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const StartState& s = pool[pick(rng)];
      for (int j = 0; j < models.state_dim; ++j) starts(static_cast<Eigen::Index>(b), j) = s.state[static_cast<std::size_t>(j)];
      offsets[b] = s.prior_offset;
    }
    const RolloutNoise noise = draw_rollout_noise(batch, models.state_dim, config.horizon, config.sample_states, rng);

    ad::Tape tape;
    const BoundNetwork policy = bind(tape, result.policy.net);
    const ModelVars frozen = bind(tape, models, false);
    const ad::Var g = policy_free_energy_graph(tape, policy, frozen, starts, offsets, prior, noise);
    tape.backward(g);
    result.g_curve.push_back(tape.scalar(g));
    adam_step(result.policy.net, gradients(tape, policy), optimizer);
  }
  return result;
}

PolicyEvaluation evaluate_source(const ActionSource& source, const EnvConfig& env, std::span<const double> starts,
                                 std::span<const std::uint64_t> seeds) {
  require(starts.size() == seeds.size(), "evaluate: one seed per start required");
  PolicyEvaluation out;
  int successes = 0;
  double steps_sum = 0.0;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    Trajectory traj = run_episode(source, env, seeds[i], starts[i], static_cast<int>(i));
    EpisodeOutcome e{starts[i], seeds[i], traj.reached_goal(), static_cast<int>(traj.steps.size())};
    if (e.success) {
      ++successes;
      steps_sum += e.steps;
    }
    out.episodes.push_back(e);
    out.trajectories.push_back(std::move(traj));
  }
  if (!starts.empty()) out.success_rate = static_cast<double>(successes) / static_cast<double>(starts.size());
  if (successes > 0) out.mean_steps_to_goal = steps_sum / successes;
  return out;
}

PolicyEvaluation evaluate_policy(const HabitPolicy& policy, const ModelSet& models, const EnvConfig& env,
                                 std::span<const double> starts, std::span<const std::uint64_t> seeds) {
  require(policy.state_dim() == models.state_dim, "evaluate_policy: policy and model state dimensions differ");
  HabitPolicy greedy = policy;
  greedy.mode = PolicyMode::deterministic;
  auto belief = std::make_shared<std::vector<double>>();
  ActionSource source = [&models, greedy, belief](const StepContext& ctx) {
    if (ctx.t == 0) belief->assign(static_cast<std::size_t>(models.state_dim), 0.0);
    *belief = posterior_infer(models, *belief, ctx.previous_action.value_or(0.0), ctx.last_observation).mean();
    return policy_action(greedy, *belief, ctx.rng);
  };
  return evaluate_source(source, env, starts, seeds);
}

void write_evaluation(std::ostream& out, const PolicyEvaluation& evaluation) {
  out << kEvalMagic << '\n' << kEvalColumns << '\n';
  for (const EpisodeOutcome& e : evaluation.episodes) {
    out << format_double(e.start) << ',' << e.seed << ',' << (e.success ? 1 : 0) << ',' << e.steps << '\n';
  }
}

PolicyEvaluation read_evaluation(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kEvalMagic) {
    throw FormatError("AIFEVAL: expected header '" + std::string(kEvalMagic) + "', found '" + line + "'");
  }
  if (!std::getline(in, line) || line != kEvalColumns) throw FormatError("AIFEVAL: missing column header");
  PolicyEvaluation out;
  int successes = 0;
  double steps_sum = 0.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw FormatError("AIFEVAL: expected 4 fields in '" + line + "'");
    EpisodeOutcome e{parse_double(f[0]), parse_unsigned(f[1]), parse_integer(f[2]) != 0,
                     static_cast<int>(parse_integer(f[3]))};
    if (e.success) {
      ++successes;
      steps_sum += e.steps;
    }
    out.episodes.push_back(e);
  }
  if (!out.episodes.empty()) out.success_rate = static_cast<double>(successes) / static_cast<double>(out.episodes.size());
  if (successes > 0) out.mean_steps_to_goal = steps_sum / successes;
  return out;
}

}  // namespace aif
