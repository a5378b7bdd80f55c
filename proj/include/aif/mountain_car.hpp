#pragma once

// Continuous mountain car with position-only noisy observations and a
// sparse +1 reward on reaching the goal. The true state is hidden from
// learning agents; only the scripted expert reads it.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace aif {

using Rng = std::mt19937_64;

namespace car {
inline constexpr double kMinPosition = -1.2;
inline constexpr double kMaxPosition = 0.6;
inline constexpr double kMaxSpeed = 0.07;
inline constexpr double kGoalPosition = 0.45;
inline constexpr double kPower = 0.0015;
inline constexpr double kGravity = 0.0025;
}  // namespace car

struct CarState {
  double position = -0.5;
  double velocity = 0.0;

  friend bool operator==(const CarState&, const CarState&) = default;
};

struct EnvConfig {
  double observation_noise_std = 0.05;
  int max_steps = 200;
};

/// One environment transition. `action` is the command that produced this
/// step; `observation` is the noisy position after it.
struct Step {
  double action = 0.0;
  double observation = 0.0;
  double reward = 0.0;
  bool done = false;

  friend bool operator==(const Step&, const Step&) = default;
};

struct Trajectory {
  int episode_id = 0;
  double start_position = 0.0;
  std::uint64_t seed = 0;
  /// Observation emitted by reset(), before any action.
  double initial_observation = 0.0;
  std::vector<Step> steps;
  /// True positions (index 0 is the start). Kept in memory only, never written to disk.
  std::vector<double> true_positions;

  std::size_t size() const { return steps.size(); }
  bool reached_goal() const { return !steps.empty() && steps.back().reward > 0.0; }

  /// Observation at trajectory index t, where index 0 is the reset observation.
  double observation_at(std::size_t t) const { return t == 0 ? initial_observation : steps[t - 1].observation; }
  /// Action that led into index t; the reset observation gets the null action 0.
  double action_at(std::size_t t) const { return t == 0 ? 0.0 : steps[t - 1].action; }
  /// Number of indexed observations (steps + 1).
  std::size_t observation_count() const { return steps.size() + 1; }
};

/// Deterministic dynamics. The action is clamped to [-1, 1]; non-finite
/// actions raise ContractViolation.
CarState transition(const CarState& state, double action);
bool at_goal(const CarState& state);

class MountainCar {
 public:
  explicit MountainCar(EnvConfig config = {}, std::uint64_t seed = 0);

  struct StepResult {
    CarState state;
    double observation = 0.0;
    double reward = 0.0;
    bool done = false;
  };

  /// Velocity 0; position `start` if given (must lie in [-1.2, 0.6]),
  /// otherwise uniform in [-0.6, -0.4]. Returns the first observation.
  double reset(std::optional<double> start = std::nullopt);
  StepResult step(double action);

  const CarState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }

 private:
  double observe();

  EnvConfig config_;
  Rng rng_;
  CarState state_;
};

/// 90% chance of repeating `previous` (when present), else uniform in [-1, 1].
double random_agent_action(std::optional<double> previous, Rng& rng);

/// Energy pumping: full power in the direction of motion, +1 when nearly still.
double scripted_expert_action(const CarState& state);

/// What an action source sees before choosing the next action.
struct StepContext {
  int t = 0;  // steps taken so far
  const CarState& state;
  double last_observation = 0.0;
  std::optional<double> previous_action;
  Rng& rng;
};

using ActionSource = std::function<double(const StepContext&)>;

ActionSource random_agent();
ActionSource scripted_expert();
/// Always pushes with the same command.
ActionSource constant_action(double action);

/// reset + repeated step until done or max_steps. Environment noise and the
/// agent's random stream are both derived from `seed`.
Trajectory run_episode(const ActionSource& source, const EnvConfig& config, std::uint64_t seed,
                       std::optional<double> start = std::nullopt, int episode_id = 0);

}  // namespace aif
