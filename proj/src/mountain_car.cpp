#include "aif/mountain_car.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "aif/error.hpp"

namespace aif {

namespace {

// Keeps the agent's random stream apart from the environment's.
constexpr std::uint64_t kAgentStreamOffset = 0x9E3779B97F4A7C15ull;

}  // namespace

CarState transition(const CarState& state, double action) {
  if (!std::isfinite(action)) throw ContractViolation("mountain car: non-finite action");
  const double force = std::clamp(action, -1.0, 1.0);
  double velocity = state.velocity + force * car::kPower - car::kGravity * std::cos(3.0 * state.position);
  velocity = std::clamp(velocity, -car::kMaxSpeed, car::kMaxSpeed);
  double position = std::clamp(state.position + velocity, car::kMinPosition, car::kMaxPosition);
  if (position <= car::kMinPosition && velocity < 0.0) velocity = 0.0;
  return CarState{position, velocity};
}

bool at_goal(const CarState& state) { return state.position >= car::kGoalPosition; }

MountainCar::MountainCar(EnvConfig config, std::uint64_t seed) : config_(config), rng_(seed) {
  require(config_.observation_noise_std >= 0.0, "MountainCar: observation noise must be nonnegative");
  require(config_.max_steps >= 1, "MountainCar: max_steps must be at least 1");
}

double MountainCar::reset(std::optional<double> start) {
  if (start) {
    if (!(*start >= car::kMinPosition && *start <= car::kMaxPosition)) {
      throw ContractViolation("mountain car: start position " + std::to_string(*start) + " outside [-1.2, 0.6]");
    }
    state_ = CarState{*start, 0.0};
  } else {
    std::uniform_real_distribution<double> dist(-0.6, -0.4);
    state_ = CarState{dist(rng_), 0.0};
  }
  return observe();
}

MountainCar::StepResult MountainCar::step(double action) {
  state_ = transition(state_, action);
  const bool done = at_goal(state_);
  return StepResult{state_, observe(), done ? 1.0 : 0.0, done};
}

double MountainCar::observe() {
  if (config_.observation_noise_std == 0.0) return state_.position;
  std::normal_distribution<double> noise(0.0, config_.observation_noise_std);
  return state_.position + noise(rng_);
}

double random_agent_action(std::optional<double> previous, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  if (previous && u < 0.9) return *previous;
  std::uniform_real_distribution<double> action(-1.0, 1.0);
  return action(rng);
}

double scripted_expert_action(const CarState& state) {
  if (std::abs(state.velocity) > 1e-4) return state.velocity > 0.0 ? 1.0 : -1.0;
  return 1.0;
}

ActionSource random_agent() {
  return [](const StepContext& ctx) { return random_agent_action(ctx.previous_action, ctx.rng); };
}

ActionSource scripted_expert() {
  return [](const StepContext& ctx) { return scripted_expert_action(ctx.state); };
}

ActionSource constant_action(double action) {
  return [action](const StepContext&) { return action; };
}

Trajectory run_episode(const ActionSource& source, const EnvConfig& config, std::uint64_t seed,
                       std::optional<double> start, int episode_id) {
  require(config.max_steps >= 1, "run_episode: max_steps must be at least 1");
  MountainCar env(config, seed);
  Rng agent_rng(seed + kAgentStreamOffset);

  Trajectory traj;
  traj.episode_id = episode_id;
  traj.seed = seed;
  traj.initial_observation = env.reset(start);
  traj.start_position = env.state().position;
  traj.true_positions.push_back(env.state().position);

  std::optional<double> previous;
  double last_observation = traj.initial_observation;
  for (int t = 0; t < config.max_steps; ++t) {
    StepContext ctx{t, env.state(), last_observation, previous, agent_rng};
    const double action = std::clamp(source(ctx), -1.0, 1.0);
    const MountainCar::StepResult r = env.step(action);
    traj.steps.push_back(Step{action, r.observation, r.reward, r.done});
    traj.true_positions.push_back(r.state.position);
    previous = action;
    last_observation = r.observation;
    if (r.done) break;
  }
  return traj;
}

}  // namespace aif
