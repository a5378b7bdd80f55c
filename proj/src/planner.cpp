#include "aif/planner.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>

#include "aif/error.hpp"
#include "aif/text_format.hpp"

namespace aif {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr const char* kDiagnosticsMagic = "AIFDIAG v1";
constexpr const char* kDiagnosticsColumns = "candidate_id,g_value,decoded_final_position,reached_goal";
constexpr double kCemMinStd = 0.05;

void validate(const PlannerConfig& c, const PreferredPrior& prior) {
  require(c.num_candidates >= 1, "planner: num_candidates must be at least 1");
  require(c.horizon >= 1, "planner: horizon must be at least 1");
  require(c.gamma > 0.0, "planner: gamma must be positive");
  require(c.cem_iterations >= 0, "planner: cem_iterations must be nonnegative");
  require(c.cem_elite_fraction > 0.0 && c.cem_elite_fraction < 1.0, "planner: cem_elite_fraction must be in (0, 1)");
  require(c.ambiguity_samples >= 1, "planner: ambiguity_samples must be at least 1");
  require(static_cast<std::size_t>(c.horizon) <= prior.length(), "planner: horizon exceeds prior length");
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

std::size_t argmin_g(const std::vector<CandidateRecord>& cands) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < cands.size(); ++i) {
    if (cands[i].g_value < cands[best].g_value) best = i;
  }
  return best;
}

}  // namespace

std::size_t prior_index(const PreferredPrior& prior, std::size_t offset, std::size_t k, PriorAlignment alignment) {
  require(prior.length() >= 1, "prior_index: empty prior");
  const std::size_t index = offset + k;
  if (index < prior.length()) return index;
  if (alignment == PriorAlignment::clamp) return prior.length() - 1;
  throw ContractViolation("expected_free_energy: imagined step " + std::to_string(index) +
                          " overflows prior length " + std::to_string(prior.length()));
}

GEvaluation expected_free_energy(std::span<const DiagonalGaussian> states,
                                 std::span<const std::vector<std::vector<double>>> ambiguity_samples,
                                 const PreferredPrior& prior, const ModelSet& models, std::size_t offset,
                                 PriorAlignment alignment) {
  require(!states.empty(), "expected_free_energy: empty rollout");
  require(ambiguity_samples.size() == states.size(), "expected_free_energy: one sample set per step required");
  if (alignment == PriorAlignment::strict) {
    require(offset + states.size() <= prior.length(), "expected_free_energy: rollout overflows prior length");
  }
  GEvaluation out;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const PriorEntry& entry = prior.at(prior_index(prior, offset, k, alignment));
    const double kl = entry.active ? kl_divergence(states[k], entry.gaussian) : 0.0;
    require(!ambiguity_samples[k].empty(), "expected_free_energy: no ambiguity samples at a step");
    double ambiguity = 0.0;
    for (const auto& s : ambiguity_samples[k]) ambiguity += entropy(likelihood_decode(models, s));
    ambiguity /= static_cast<double>(ambiguity_samples[k].size());
    out.per_step_g.push_back(kl + ambiguity);
    out.g_value += kl + ambiguity;
  }
  return out;
}

GEvaluation expected_free_energy(ImaginedRollout& rollout, const PreferredPrior& prior, const ModelSet& models,
                                 std::size_t offset, int samples_per_step, Rng& rng, PriorAlignment alignment) {
  require(samples_per_step >= 1, "expected_free_energy: need at least one ambiguity sample");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<std::vector<double>>> samples;
  for (const DiagonalGaussian& g : rollout.state_gaussians) {
    std::vector<std::vector<double>> at_step;
    std::vector<double> noise(g.dim());
    for (int k = 0; k < samples_per_step; ++k) {
      for (double& n : noise) n = normal(rng);
      at_step.push_back(reparam_sample(g, noise));
    }
    samples.push_back(std::move(at_step));
  }
  GEvaluation e = expected_free_energy(rollout.state_gaussians, samples, prior, models, offset, alignment);
  rollout.g_value = e.g_value;
  rollout.per_step_g = e.per_step_g;
  return e;
}

std::vector<std::vector<double>> sample_action_sequences(const PlannerConfig& config, Rng& rng) {
  require(config.num_candidates >= 1, "sample_action_sequences: num_candidates must be at least 1");
  require(config.horizon >= 1, "sample_action_sequences: horizon must be at least 1");
  std::vector<std::vector<double>> out(static_cast<std::size_t>(config.num_candidates));
  for (auto& seq : out) {
    std::optional<double> previous;
    for (int k = 0; k < config.horizon; ++k) {
      const double a = std::clamp(random_agent_action(previous, rng), -1.0, 1.0);
      seq.push_back(a);
      previous = a;
    }
  }
  return out;
}

PolicyBelief policy_belief(std::span<const double> g_values, double gamma) { return policy_softmax(g_values, gamma); }

// Random draws, in order: starting-state noise (N x d); then per step the
// ambiguity noise (K*N x d, sample-major) and the propagation noise (N x d).
std::vector<CandidateRecord> evaluate_candidates(const ModelSet& models, const DiagonalGaussian& belief_state,
                                                 const PreferredPrior& prior, std::size_t offset,
                                                 const std::vector<std::vector<double>>& sequences,
                                                 const PlannerConfig& config, Rng& rng, PriorAlignment alignment) {
  require(!sequences.empty(), "evaluate_candidates: no candidates");
  require(static_cast<int>(belief_state.dim()) == models.state_dim,
          "evaluate_candidates: belief dimension differs from state_dim");
  require(prior.state_dim == models.state_dim, "evaluate_candidates: prior dimension differs from state_dim");
  require(config.ambiguity_samples >= 1, "evaluate_candidates: ambiguity_samples must be at least 1");
  const std::size_t horizon = sequences.front().size();
  require(horizon >= 1, "evaluate_candidates: empty action sequence");
  for (const auto& s : sequences) require(s.size() == horizon, "evaluate_candidates: sequences differ in length");
  if (alignment == PriorAlignment::strict) {
    require(offset + horizon <= prior.length(), "evaluate_candidates: rollout overflows prior length");
  }

  const auto n = static_cast<Eigen::Index>(sequences.size());
  const Eigen::Index d = models.state_dim;
  const Eigen::Index k_samples = config.ambiguity_samples;

  Eigen::RowVectorXd bmean(d), bstd(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    bmean(i) = belief_state.mean()[static_cast<std::size_t>(i)];
    bstd(i) = std::sqrt(belief_state.variance()[static_cast<std::size_t>(i)]);
  }
  Matrix state = standard_normal(n, d, rng);
  state = (state.array().rowwise() * bstd.array()).rowwise() + bmean.array();

  std::vector<CandidateRecord> out(sequences.size());
  for (std::size_t c = 0; c < sequences.size(); ++c) {
    out[c].candidate_id = static_cast<int>(c);
    out[c].actions = sequences[c];
  }

  Matrix actions(n, 1);
  for (std::size_t k = 0; k < horizon; ++k) {
    for (Eigen::Index r = 0; r < n; ++r) actions(r, 0) = sequences[static_cast<std::size_t>(r)][k];
    auto [mean, variance] = transition_batch(models, state, actions);
    const Matrix stddev = variance.array().sqrt();

    const PriorEntry& entry = prior.at(prior_index(prior, offset, k, alignment));
    Eigen::VectorXd kl = Eigen::VectorXd::Zero(n);
    if (entry.active) {
      for (Eigen::Index i = 0; i < d; ++i) {
        const double pm = entry.gaussian.mean()[static_cast<std::size_t>(i)];
        const double pv = entry.gaussian.variance()[static_cast<std::size_t>(i)];
        const Eigen::ArrayXd vq = variance.col(i).array();
        const Eigen::ArrayXd diff = mean.col(i).array() - pm;
        kl.array() += (pv / vq).log() + (vq + diff.square()) / pv - 1.0;
      }
      kl *= 0.5;
    }

    Matrix samples = standard_normal(n * k_samples, d, rng);
    for (Eigen::Index s = 0; s < k_samples; ++s) {
      auto block = samples.middleRows(s * n, n);
      block = (block.array() * stddev.array() + mean.array()).matrix();
    }
    const Matrix lik_var = likelihood_batch(models, samples).second;
    Eigen::VectorXd ambiguity = Eigen::VectorXd::Zero(n);
    for (Eigen::Index s = 0; s < k_samples; ++s) {
      ambiguity += (0.5 * (1.0 + kLog2Pi + lik_var.middleRows(s * n, n).array().log())).rowwise().sum().matrix();
    }
    ambiguity /= static_cast<double>(k_samples);

    const Matrix decoded = likelihood_batch(models, mean).first;
    const Matrix noise = standard_normal(n, d, rng);
    state = (mean.array() + stddev.array() * noise.array()).matrix();

    for (Eigen::Index r = 0; r < n; ++r) {
      CandidateRecord& rec = out[static_cast<std::size_t>(r)];
      const double g = (entry.active ? std::max(0.0, kl(r)) : 0.0) + ambiguity(r);
      rec.per_step_g.push_back(g);
      rec.g_value += g;
      rec.decoded_positions.push_back(decoded(r, 0));
    }
  }
  for (CandidateRecord& rec : out) {
    rec.decoded_final_position = rec.decoded_positions.back();
    rec.reached_goal = rec.decoded_final_position >= car::kGoalPosition;
  }
  return out;
}

PlanResult plan(const ModelSet& models, const DiagonalGaussian& belief_state, const PreferredPrior& prior,
                std::size_t offset, const PlannerConfig& config, Rng& rng) {
  validate(config, prior);
  PlanResult result;
  std::vector<CandidateRecord> population =
      evaluate_candidates(models, belief_state, prior, offset, sample_action_sequences(config, rng), config, rng);
  CandidateRecord best = population[argmin_g(population)];
  result.best_g_per_round.push_back(best.g_value);

  const auto n = static_cast<std::size_t>(config.num_candidates);
  const auto horizon = static_cast<std::size_t>(config.horizon);
  for (int round = 1; round <= config.cem_iterations && n > 1; ++round) {
    std::vector<std::size_t> order(population.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return population[a].g_value < population[b].g_value; });
    const std::size_t elites = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(config.cem_elite_fraction * static_cast<double>(population.size()))));
    std::vector<double> mu(horizon, 0.0), sd(horizon, 0.0);
    for (std::size_t k = 0; k < horizon; ++k) {
      for (std::size_t e = 0; e < elites; ++e) mu[k] += population[order[e]].actions[k];
      mu[k] /= static_cast<double>(elites);
      for (std::size_t e = 0; e < elites; ++e) {
        const double diff = population[order[e]].actions[k] - mu[k];
        sd[k] += diff * diff;
      }
      sd[k] = std::max(kCemMinStd, std::sqrt(sd[k] / static_cast<double>(elites)));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> sequences(n - 1, std::vector<double>(horizon));
    for (auto& seq : sequences) {
      for (std::size_t k = 0; k < horizon; ++k) seq[k] = std::clamp(mu[k] + sd[k] * normal(rng), -1.0, 1.0);
    }
    population = evaluate_candidates(models, belief_state, prior, offset, sequences, config, rng);
    // The best sequence so far survives with its recorded G.
    population.push_back(best);
    for (std::size_t i = 0; i < population.size(); ++i) population[i].candidate_id = static_cast<int>(i);
    best = population[argmin_g(population)];
    result.best_g_per_round.push_back(best.g_value);
  }

  std::vector<double> g_values;
  for (const CandidateRecord& c : population) g_values.push_back(c.g_value);
  result.belief = policy_belief(g_values, config.gamma);
  if (config.stochastic_selection) {
    std::discrete_distribution<std::size_t> pick(result.belief.probabilities.begin(),
                                                 result.belief.probabilities.end());
    result.selected = static_cast<int>(pick(rng));
  } else {
    result.selected = static_cast<int>(argmin_g(population));
  }
  result.selected_actions = population[static_cast<std::size_t>(result.selected)].actions;
  result.action = result.selected_actions.front();
  result.candidates = std::move(population);
  return result;
}

Trajectory act_in_env(const ModelSet& models, const PreferredPrior& prior, const PlannerConfig& config,
                      const EnvConfig& env, std::uint64_t env_seed, std::optional<double> start) {
  validate(config, prior);
  struct AgentState {
    std::vector<double> belief_mean;
    std::optional<DiagonalGaussian> belief;
    Rng rng;
    std::vector<double> queued;  // open-loop remainder
  };
  auto agent = std::make_shared<AgentState>();
  agent->belief_mean.assign(static_cast<std::size_t>(models.state_dim), 0.0);
  agent->rng.seed(config.seed * 1000003ull + env_seed);

  ActionSource source = [&models, &prior, config, agent](const StepContext& ctx) {
    const double previous = ctx.previous_action.value_or(0.0);
    agent->belief = posterior_infer(models, agent->belief_mean, previous, ctx.last_observation);
    agent->belief_mean = agent->belief->mean();
    if (config.open_loop && !agent->queued.empty()) {
      const double a = agent->queued.front();
      agent->queued.erase(agent->queued.begin());
      return a;
    }
    // Imagined steps past the prior's end reuse its final entry.
    const std::size_t offset = static_cast<std::size_t>(ctx.t) + 1;
    PlanResult r = plan(models, *agent->belief, prior, offset, config, agent->rng);
    if (config.open_loop) agent->queued.assign(r.selected_actions.begin() + 1, r.selected_actions.end());
    return r.action;
  };
  return run_episode(source, env, env_seed, start);
}

void write_diagnostics(std::ostream& out, const std::vector<CandidateRecord>& candidates) {
  out << kDiagnosticsMagic << '\n' << kDiagnosticsColumns << '\n';
  for (const CandidateRecord& c : candidates) {
    out << c.candidate_id << ',' << format_double(c.g_value) << ',' << format_double(c.decoded_final_position) << ','
        << (c.reached_goal ? 1 : 0) << '\n';
  }
}

std::vector<CandidateRecord> read_diagnostics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kDiagnosticsMagic) {
    throw FormatError("AIFDIAG: expected header '" + std::string(kDiagnosticsMagic) + "', found '" + line + "'");
  }
  if (!std::getline(in, line) || line != kDiagnosticsColumns) throw FormatError("AIFDIAG: missing column header");
  std::vector<CandidateRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw FormatError("AIFDIAG: expected 4 fields in '" + line + "'");
    CandidateRecord c;
    c.candidate_id = static_cast<int>(parse_integer(f[0]));
    c.g_value = parse_double(f[1]);
    c.decoded_final_position = parse_double(f[2]);
    c.reached_goal = parse_integer(f[3]) != 0;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace aif
