#pragma once

// Action selection by expected free energy.
//
// For each candidate action sequence the transition model imagines future
// latent states; every imagined step tau costs
//
//   G(tau) = KL(Q(s_tau) || P(s_tau)) + E_Q[ H(p(o_tau | s_tau)) ]
//
// where P(s_tau) is the preferred-state prior (no KL on inactive steps) and
// the expectation is a small Monte-Carlo average. Candidates are weighted by
// softmax(-gamma * G); the default picks the first action of the lowest-G
// candidate.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "aif/gaussian.hpp"
#include "aif/mountain_car.hpp"
#include "aif/preferred_prior.hpp"
#include "aif/world_model.hpp"

namespace aif {

/// How imagined steps past the end of the prior are handled.
enum class PriorAlignment {
  strict,  // error
  clamp,   // reuse the final prior entry
};

struct PlannerConfig {
  int num_candidates = 500;
  int horizon = 50;
  double gamma = 10.0;
  int cem_iterations = 0;
  double cem_elite_fraction = 0.1;
  int ambiguity_samples = 3;
  std::uint64_t seed = 1;
  /// Sample the executed candidate from the policy belief instead of argmin G.
  bool stochastic_selection = false;
  /// In act_in_env: execute a whole plan before re-planning.
  bool open_loop = false;
};

struct GEvaluation {
  double g_value = 0.0;
  std::vector<double> per_step_g;
};

/// Prior index used for imagined step k (0-based) of a rollout whose first
/// state sits at prior index `offset`.
std::size_t prior_index(const PreferredPrior& prior, std::size_t offset, std::size_t k, PriorAlignment alignment);

/// `ambiguity_samples[k]` holds the latent samples whose decoded entropies
/// are averaged for step k.
GEvaluation expected_free_energy(std::span<const DiagonalGaussian> states,
                                 std::span<const std::vector<std::vector<double>>> ambiguity_samples,
                                 const PreferredPrior& prior, const ModelSet& models, std::size_t offset,
                                 PriorAlignment alignment = PriorAlignment::strict);

/// Draws `samples_per_step` reparameterized samples from each state Gaussian,
/// evaluates G, and stores it on the rollout.
GEvaluation expected_free_energy(ImaginedRollout& rollout, const PreferredPrior& prior, const ModelSet& models,
                                 std::size_t offset, int samples_per_step, Rng& rng,
                                 PriorAlignment alignment = PriorAlignment::strict);

/// num_candidates sequences of `horizon` actions from the random agent's
/// repeat-or-resample scheme.
std::vector<std::vector<double>> sample_action_sequences(const PlannerConfig& config, Rng& rng);

PolicyBelief policy_belief(std::span<const double> g_values, double gamma);

struct CandidateRecord {
  int candidate_id = 0;
  double g_value = 0.0;
  double decoded_final_position = 0.0;
  bool reached_goal = false;
  std::vector<double> actions;
  std::vector<double> per_step_g;
  /// Decoded mean observation at every imagined step (mean latent path).
  std::vector<double> decoded_positions;
};

struct PlanResult {
  double action = 0.0;
  /// First action sequence of the selected candidate.
  std::vector<double> selected_actions;
  int selected = 0;
  /// Candidates of the last evaluated population.
  std::vector<CandidateRecord> candidates;
  PolicyBelief belief;
  /// Lowest G seen after each round (round 0 = initial random shooting).
  std::vector<double> best_g_per_round;
};

/// Evaluates explicit action sequences from `belief_state` (the starting
/// latent is reparameterization-sampled per candidate).
std::vector<CandidateRecord> evaluate_candidates(const ModelSet& models, const DiagonalGaussian& belief_state,
                                                 const PreferredPrior& prior, std::size_t offset,
                                                 const std::vector<std::vector<double>>& sequences,
                                                 const PlannerConfig& config, Rng& rng,
                                                 PriorAlignment alignment = PriorAlignment::clamp);

/// `offset` is the prior index of the first imagined state.
PlanResult plan(const ModelSet& models, const DiagonalGaussian& belief_state, const PreferredPrior& prior,
                std::size_t offset, const PlannerConfig& config, Rng& rng);

/// Closed-loop control: filter the belief with each observation, plan,
/// execute the chosen action.
Trajectory act_in_env(const ModelSet& models, const PreferredPrior& prior, const PlannerConfig& config,
                      const EnvConfig& env, std::uint64_t env_seed, std::optional<double> start = std::nullopt);

/// candidate_id,g_value,decoded_final_position,reached_goal under an
/// "AIFDIAG v1" header line and a column header line.
void write_diagnostics(std::ostream& out, const std::vector<CandidateRecord>& candidates);
std::vector<CandidateRecord> read_diagnostics(std::istream& in);

}  // namespace aif
