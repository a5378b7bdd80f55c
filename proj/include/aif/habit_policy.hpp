#pragma once

// Amortized action selection. A network maps a latent state to a Gaussian
// over the pre-squash action u; the emitted action is tanh(u). Training rolls
// the policy through the frozen transition model and minimizes expected free
// energy summed over the imagined steps.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "aif/adam.hpp"
#include "aif/autodiff.hpp"
#include "aif/checkpoint.hpp"
#include "aif/mountain_car.hpp"
#include "aif/network.hpp"
#include "aif/preferred_prior.hpp"
#include "aif/world_model.hpp"

namespace aif {

enum class PolicyMode { deterministic, stochastic };

std::string to_string(PolicyMode mode);
PolicyMode policy_mode_from_string(const std::string& name);

struct HabitPolicy {
  NetworkParams net;
  PolicyMode mode = PolicyMode::deterministic;

  static HabitPolicy initialize(int state_dim, const std::vector<int>& hidden, std::uint64_t seed,
                                PolicyMode mode = PolicyMode::deterministic);
  int state_dim() const { return net.input_dim(); }

  Checkpoint to_checkpoint() const;
  static HabitPolicy from_checkpoint(const Checkpoint& checkpoint);

  friend bool operator==(const HabitPolicy&, const HabitPolicy&) = default;
};

void save_policy(const std::filesystem::path& path, const HabitPolicy& policy);
HabitPolicy load_policy(const std::filesystem::path& path);

/// tanh(mean) in deterministic mode, tanh(mean + std * eps) otherwise.
double policy_action(const HabitPolicy& policy, std::span<const double> s, Rng& rng);

struct PolicyTrainConfig {
  int horizon = 30;
  int iterations = 2000;
  int batch_size = 16;
  std::vector<int> hidden = {64, 64};
  AdamConfig adam;
  /// Propagate sampled states instead of the transition mean.
  bool sample_states = false;
  /// Start states come from trajectory indices <= this value; negative means
  /// every index.
  int max_start_index = -1;
  std::uint64_t seed = 1;
};

/// A latent start state together with the prior index it occupies.
struct StartState {
  std::vector<double> state;
  std::size_t prior_offset = 0;
};

/// Posterior means of every indexed observation in the dataset. The entry for
/// trajectory index t has prior_offset t + 1, the index of the first imagined
/// state.
std::vector<StartState> start_states_from_dataset(const ModelSet& models, const std::vector<Trajectory>& dataset,
                                                  int max_index = -1);

/// Noise for one imagined rollout: per step, action noise (B x 1) and state
/// noise (B x state_dim). Without state noise the rollout follows the
/// transition mean.
struct RolloutNoise {
  std::vector<Matrix> action;
  std::vector<Matrix> state;
};
RolloutNoise draw_rollout_noise(std::size_t batch, int state_dim, int horizon, bool sample_states, Rng& rng);

/// Records the batch-mean expected free energy of policy rollouts on the tape.
/// Rows of `starts` are start latents; offsets[b] is the prior index of row b's
/// first imagined state. The ambiguity term is evaluated at the propagated state.
ad::Var policy_free_energy_graph(ad::Tape& tape, const BoundNetwork& policy, const ModelVars& models,
                                 const Matrix& starts, std::span<const std::size_t> offsets,
                                 const PreferredPrior& prior, const RolloutNoise& noise);

struct PolicyTrainingResult {
  HabitPolicy policy;
  /// Batch-mean G per iteration.
  std::vector<double> g_curve;
};

PolicyTrainingResult train_policy(const ModelSet& models, const PreferredPrior& prior,
                                  const std::vector<Trajectory>& dataset, const PolicyTrainConfig& config);

struct EpisodeOutcome {
  double start = 0.0;
  std::uint64_t seed = 0;
  bool success = false;
  /// Steps until the goal, or the episode length on failure.
  int steps = 0;
};

struct PolicyEvaluation {
  std::vector<EpisodeOutcome> episodes;
  std::vector<Trajectory> trajectories;
  double success_rate = 0.0;
  /// Mean over successful episodes; 0 if none succeeded.
  double mean_steps_to_goal = 0.0;
};

/// Closed loop: the belief is filtered with posterior_infer and the action is
/// the deterministic policy action at the posterior mean.
PolicyEvaluation evaluate_policy(const HabitPolicy& policy, const ModelSet& models, const EnvConfig& env,
                                 std::span<const double> starts, std::span<const std::uint64_t> seeds);

/// Same bookkeeping for an arbitrary action source (baselines).
PolicyEvaluation evaluate_source(const ActionSource& source, const EnvConfig& env, std::span<const double> starts,
                                 std::span<const std::uint64_t> seeds);

// "AIFEVAL v1" header, column header "start,seed,success,steps", one record
// per episode.
void write_evaluation(std::ostream& out, const PolicyEvaluation& evaluation);
PolicyEvaluation read_evaluation(std::istream& in);

}  // namespace aif
