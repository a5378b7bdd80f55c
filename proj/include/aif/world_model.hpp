#pragma once

// Learned densities of the agent's generative model:
//
//   posterior   q(s_t | s_{t-1}, a_t, o_t)
//   transition  p(s_t | s_{t-1}, a_t)
//   likelihood  p(o_t | s_t)
//
// trained jointly by minimizing variational free energy
//
//   F = sum_t  -log p(o_t | s_t) + KL(q(s_t | ...) || p(s_t | s_{t-1}, a_t)),
//
// with s_t drawn from the posterior by reparameterization.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "aif/adam.hpp"
#include "aif/autodiff.hpp"
#include "aif/checkpoint.hpp"
#include "aif/gaussian.hpp"
#include "aif/mountain_car.hpp"
#include "aif/network.hpp"

namespace aif {

inline constexpr int kActionDim = 1;
inline constexpr int kObservationDim = 1;

struct ModelConfig {
  int state_dim = 8;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::tanh;
  std::uint64_t seed = 1;
};

struct ModelSet {
  NetworkParams posterior;
  NetworkParams transition;
  NetworkParams likelihood;
  int state_dim = 0;
  std::uint64_t seed = 0;
  std::uint64_t training_steps = 0;

  static ModelSet initialize(const ModelConfig& config);

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;

  Checkpoint to_checkpoint() const;
  static ModelSet from_checkpoint(const Checkpoint& checkpoint);

  friend bool operator==(const ModelSet&, const ModelSet&) = default;
};

void save_models(const std::filesystem::path& path, const ModelSet& models);
ModelSet load_models(const std::filesystem::path& path);

DiagonalGaussian posterior_infer(const ModelSet& models, std::span<const double> s_prev, double action,
                                 double observation);
DiagonalGaussian transition_predict(const ModelSet& models, std::span<const double> s_prev, double action);
DiagonalGaussian likelihood_decode(const ModelSet& models, std::span<const double> s);

/// Batched variants: each row is one independent query. Return (mean, variance).
std::pair<Matrix, Matrix> posterior_batch(const ModelSet& models, const Matrix& s_prev, const Matrix& actions,
                                          const Matrix& observations);
std::pair<Matrix, Matrix> transition_batch(const ModelSet& models, const Matrix& s_prev, const Matrix& actions);
std::pair<Matrix, Matrix> likelihood_batch(const ModelSet& models, const Matrix& states);

/// Posterior filtering along a trajectory from s_0 = 0, feeding each
/// posterior mean forward. Entry t is the belief at trajectory index t.
std::vector<DiagonalGaussian> encode_trajectory(const ModelSet& models, const Trajectory& trajectory);

/// One contiguous stretch of a trajectory. actions[0] is always the null
/// action, since the window's first state is inferred from s_0 = 0.
struct Window {
  std::vector<double> actions;
  std::vector<double> observations;
};

struct TrainingBatch {
  std::vector<Window> windows;

  std::size_t length() const { return windows.empty() ? 0 : windows.front().observations.size(); }
};

/// Window of `length` indexed observations starting at trajectory index `start`.
Window make_window(const Trajectory& trajectory, std::size_t start, std::size_t length);

/// Standard-normal reparameterization noise, one B x state_dim matrix per step.
std::vector<Matrix> draw_window_noise(const TrainingBatch& batch, int state_dim, Rng& rng);

struct ModelVars {
  BoundNetwork posterior;
  BoundNetwork transition;
  BoundNetwork likelihood;
};
ModelVars bind(ad::Tape& tape, const ModelSet& models, bool trainable = true);

struct FreeEnergyTerms {
  ad::Var total;
  ad::Var nll;
  ad::Var kl;
};

/// Records the batch-mean free energy on the tape: mean over windows and
/// steps of -log p(o_t | s_t) + kl_weight * KL(q_t || p_t).
FreeEnergyTerms free_energy_graph(ad::Tape& tape, const ModelVars& vars, const TrainingBatch& batch,
                                  std::span<const Matrix> noise, double kl_weight = 1.0);

struct ModelGradients {
  NetworkParams posterior;
  NetworkParams transition;
  NetworkParams likelihood;

  std::vector<const Matrix*> tensors() const;
};

struct FreeEnergyResult {
  double loss = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  ModelGradients gradients;
};

FreeEnergyResult free_energy_loss(const ModelSet& models, const TrainingBatch& batch, Rng& rng,
                                  double kl_weight = 1.0);

struct TrainConfig {
  ModelConfig model;
  int window = 32;
  int batch_size = 32;
  int epochs = 200;
  double kl_weight = 1.0;
  AdamConfig adam;
  /// Learning rate decays geometrically from adam.learning_rate to this
  /// value over the epochs. Equal to adam.learning_rate means constant.
  double final_learning_rate = 1e-4;
  std::uint64_t seed = 1;
};

struct EpochReport {
  int epoch = 0;
  double free_energy = 0.0;
  double nll = 0.0;
  double kl = 0.0;
};

struct TrainingReport {
  std::vector<EpochReport> epochs;
  /// Not part of any persisted report; differs between runs.
  double wall_clock_seconds = 0.0;
};

std::pair<ModelSet, TrainingReport> train_models(const std::vector<Trajectory>& dataset, const TrainConfig& config);

/// Predicted latent trajectory under a fixed action sequence, never
/// looking at observations.
struct ImaginedRollout {
  std::vector<double> actions;
  std::vector<DiagonalGaussian> state_gaussians;
  std::vector<std::vector<double>> sampled_states;
  double g_value = 0.0;
  std::vector<double> per_step_g;
};

ImaginedRollout imagine_rollout(const ModelSet& models, std::span<const double> s0, std::span<const double> actions,
                                Rng& rng);

struct PredictionPoint {
  std::size_t t = 0;
  double truth = 0.0;
  double predicted_mean = 0.0;
  double predicted_std = 0.0;
};

/// Encodes the first observation, then rolls the transition model's mean
/// forward under the recorded actions for up to `max_steps` steps and decodes.
std::vector<PredictionPoint> open_loop_prediction(const ModelSet& models, const Trajectory& trajectory,
                                                  std::size_t max_steps = 50);

/// RMS of open_loop_prediction against the recorded observations.
double open_loop_prediction_error(const ModelSet& models, const Trajectory& trajectory, std::size_t max_steps = 50);

}  // namespace aif
