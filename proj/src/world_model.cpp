#include "aif/world_model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "aif/error.hpp"

namespace aif {

namespace {

std::vector<double> row_vector(const Matrix& m, Eigen::Index row) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(row, c);
  return out;
}

Matrix as_row(std::span<const double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

DiagonalGaussian first_row(const std::pair<Matrix, Matrix>& mv) {
  return DiagonalGaussian(row_vector(mv.first, 0), row_vector(mv.second, 0));
}

void require_state(const ModelSet& models, std::size_t dim, const char* op) {
  if (static_cast<int>(dim) != models.state_dim) {
    throw ContractViolation(std::string(op) + ": state has dimension " + std::to_string(dim) + ", models expect " +
                            std::to_string(models.state_dim));
  }
}

Matrix concat(std::initializer_list<const Matrix*> parts) {
  Eigen::Index cols = 0;
  const Eigen::Index rows = (*parts.begin())->rows();
  for (const Matrix* p : parts) {
    require(p->rows() == rows, "world model: batched inputs have different row counts");
    cols += p->cols();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Matrix* p : parts) {
    out.middleCols(off, p->cols()) = *p;
    off += p->cols();
  }
  return out;
}

}  // namespace

ModelSet ModelSet::initialize(const ModelConfig& config) {
  require(config.state_dim >= 1, "ModelSet: state_dim must be positive");
  const int d = config.state_dim;
  auto shape = [&](int in, int out) { return NetworkShape{in, out, config.hidden, config.activation}; };
  ModelSet m;
  m.posterior = NetworkParams::initialize(shape(d + kActionDim + kObservationDim, d), config.seed * 3 + 0);
  m.transition = NetworkParams::initialize(shape(d + kActionDim, d), config.seed * 3 + 1);
  m.likelihood = NetworkParams::initialize(shape(d, kObservationDim), config.seed * 3 + 2);
  m.state_dim = d;
  m.seed = config.seed;
  return m;
}

std::vector<Matrix*> ModelSet::tensors() {
  std::vector<Matrix*> out;
  for (NetworkParams* n : {&posterior, &transition, &likelihood}) {
    for (Matrix* t : n->tensors()) out.push_back(t);
  }
  return out;
}

std::vector<const Matrix*> ModelSet::tensors() const {
  std::vector<const Matrix*> out;
  for (const NetworkParams* n : {&posterior, &transition, &likelihood}) {
    for (const Matrix* t : n->tensors()) out.push_back(t);
  }
  return out;
}

Checkpoint ModelSet::to_checkpoint() const {
  Checkpoint cp;
  cp.kind = "model_set";
  cp.metadata["state_dim"] = std::to_string(state_dim);
  cp.metadata["seed"] = std::to_string(seed);
  cp.metadata["step"] = std::to_string(training_steps);
  cp.networks = {{"posterior", posterior}, {"transition", transition}, {"likelihood", likelihood}};
  return cp;
}

ModelSet ModelSet::from_checkpoint(const Checkpoint& cp) {
  if (cp.kind != "model_set") throw FormatError("AIFNET: expected kind 'model_set', found '" + cp.kind + "'");
  ModelSet m;
  m.posterior = cp.network("posterior");
  m.transition = cp.network("transition");
  m.likelihood = cp.network("likelihood");
  m.state_dim = std::stoi(cp.meta("state_dim"));
  m.seed = std::stoull(cp.meta("seed"));
  m.training_steps = std::stoull(cp.meta("step"));
  const int d = m.state_dim;
  if (m.posterior.input_dim() != d + kActionDim + kObservationDim || m.posterior.output_dim() != d ||
      m.transition.input_dim() != d + kActionDim || m.transition.output_dim() != d || m.likelihood.input_dim() != d ||
      m.likelihood.output_dim() != kObservationDim) {
    throw FormatError("AIFNET: network shapes inconsistent with state_dim " + std::to_string(d));
  }
  return m;
}

void save_models(const std::filesystem::path& path, const ModelSet& models) {
  save_checkpoint(path, models.to_checkpoint());
}

ModelSet load_models(const std::filesystem::path& path) { return ModelSet::from_checkpoint(load_checkpoint(path)); }

std::pair<Matrix, Matrix> posterior_batch(const ModelSet& models, const Matrix& s_prev, const Matrix& actions,
                                          const Matrix& observations) {
  require_state(models, static_cast<std::size_t>(s_prev.cols()), "posterior_infer");
  return models.posterior.forward(concat({&s_prev, &actions, &observations}));
}

std::pair<Matrix, Matrix> transition_batch(const ModelSet& models, const Matrix& s_prev, const Matrix& actions) {
  require_state(models, static_cast<std::size_t>(s_prev.cols()), "transition_predict");
  return models.transition.forward(concat({&s_prev, &actions}));
}

std::pair<Matrix, Matrix> likelihood_batch(const ModelSet& models, const Matrix& states) {
  require_state(models, static_cast<std::size_t>(states.cols()), "likelihood_decode");
  return models.likelihood.forward(states);
}

DiagonalGaussian posterior_infer(const ModelSet& models, std::span<const double> s_prev, double action,
                                 double observation) {
  return first_row(posterior_batch(models, as_row(s_prev), Matrix::Constant(1, 1, action),
                                   Matrix::Constant(1, 1, observation)));
}

DiagonalGaussian transition_predict(const ModelSet& models, std::span<const double> s_prev, double action) {
  return first_row(transition_batch(models, as_row(s_prev), Matrix::Constant(1, 1, action)));
}

DiagonalGaussian likelihood_decode(const ModelSet& models, std::span<const double> s) {
  return first_row(likelihood_batch(models, as_row(s)));
}

std::vector<DiagonalGaussian> encode_trajectory(const ModelSet& models, const Trajectory& trajectory) {
  std::vector<DiagonalGaussian> beliefs;
  beliefs.reserve(trajectory.observation_count());
  std::vector<double> s(static_cast<std::size_t>(models.state_dim), 0.0);
  for (std::size_t t = 0; t < trajectory.observation_count(); ++t) {
    beliefs.push_back(posterior_infer(models, s, trajectory.action_at(t), trajectory.observation_at(t)));
    s = beliefs.back().mean();
  }
  return beliefs;
}

Window make_window(const Trajectory& trajectory, std::size_t start, std::size_t length) {
  require(length >= 1, "make_window: length must be positive");
  require(start + length <= trajectory.observation_count(), "make_window: window runs past the trajectory");
  Window w;
  for (std::size_t t = start; t < start + length; ++t) {
    w.actions.push_back(t == start ? 0.0 : trajectory.action_at(t));
    w.observations.push_back(trajectory.observation_at(t));
  }
  return w;
}

std::vector<Matrix> draw_window_noise(const TrainingBatch& batch, int state_dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto rows = static_cast<Eigen::Index>(batch.windows.size());
  std::vector<Matrix> noise;
  for (std::size_t t = 0; t < batch.length(); ++t) {
    Matrix n(rows, state_dim);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < state_dim; ++c) n(r, c) = normal(rng);
    }
    noise.push_back(std::move(n));
  }
  return noise;
}

ModelVars bind(ad::Tape& tape, const ModelSet& models, bool trainable) {
  return ModelVars{bind(tape, models.posterior, trainable), bind(tape, models.transition, trainable),
                   bind(tape, models.likelihood, trainable)};
}

FreeEnergyTerms free_energy_graph(ad::Tape& tape, const ModelVars& vars, const TrainingBatch& batch,
                                  std::span<const Matrix> noise, double kl_weight) {
  require(!batch.windows.empty(), "free_energy_loss: batch has no windows");
  const std::size_t length = batch.length();
  require(length >= 1, "free_energy_loss: windows are empty");
  for (const Window& w : batch.windows) {
    require(w.observations.size() == length && w.actions.size() == length,
            "free_energy_loss: windows differ in length");
  }
  require(noise.size() == length, "free_energy_loss: noise does not cover every step");

  const auto rows = static_cast<Eigen::Index>(batch.windows.size());
  const int d = vars.transition.params->output_dim();
  ad::Var state = tape.constant(Matrix::Zero(rows, d));
  std::vector<ad::Var> nll_terms;
  std::vector<ad::Var> kl_terms;
  for (std::size_t t = 0; t < length; ++t) {
    Matrix a(rows, 1);
    Matrix o(rows, 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
      a(r, 0) = batch.windows[static_cast<std::size_t>(r)].actions[t];
      o(r, 0) = batch.windows[static_cast<std::size_t>(r)].observations[t];
    }
    const ad::Var action = tape.constant(std::move(a));
    const ad::Var observation = tape.constant(std::move(o));
    const ad::Var post_in[] = {state, action, observation};
    const ad::Var trans_in[] = {state, action};
    const ad::GaussianVar q = forward_gaussian(tape, vars.posterior, ad::concat_cols(tape, post_in));
    const ad::GaussianVar p = forward_gaussian(tape, vars.transition, ad::concat_cols(tape, trans_in));
    state = ad::reparam_sample(tape, q, noise[t]);
    const ad::GaussianVar lik = forward_gaussian(tape, vars.likelihood, state);
    nll_terms.push_back(ad::sum(tape, ad::log_prob(tape, observation, lik)));
    kl_terms.push_back(ad::sum(tape, ad::kl_divergence(tape, q, p)));
  }
  const double norm = 1.0 / (static_cast<double>(rows) * static_cast<double>(length));
  auto total_of = [&](const std::vector<ad::Var>& terms, double factor) {
    ad::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(tape, acc, terms[i]);
    return ad::scale(tape, acc, factor);
  };
  const ad::Var nll = total_of(nll_terms, -norm);
  const ad::Var kl = total_of(kl_terms, norm);
  const ad::Var total = ad::add(tape, nll, ad::scale(tape, kl, kl_weight));
  return FreeEnergyTerms{total, nll, kl};
}

std::vector<const Matrix*> ModelGradients::tensors() const {
  std::vector<const Matrix*> out;
  for (const NetworkParams* n : {&posterior, &transition, &likelihood}) {
    for (const Matrix* t : n->tensors()) out.push_back(t);
  }
  return out;
}

FreeEnergyResult free_energy_loss(const ModelSet& models, const TrainingBatch& batch, Rng& rng, double kl_weight) {
  require(!batch.windows.empty(), "free_energy_loss: batch has no windows");
  const std::vector<Matrix> noise = draw_window_noise(batch, models.state_dim, rng);
  ad::Tape tape;
  const ModelVars vars = bind(tape, models);
  const FreeEnergyTerms terms = free_energy_graph(tape, vars, batch, noise, kl_weight);
  tape.backward(terms.total);
  FreeEnergyResult r;
  r.loss = tape.scalar(terms.total);
  r.nll = tape.scalar(terms.nll);
  r.kl = tape.scalar(terms.kl);
  r.gradients = ModelGradients{gradients(tape, vars.posterior), gradients(tape, vars.transition),
                               gradients(tape, vars.likelihood)};
  return r;
}

std::pair<ModelSet, TrainingReport> train_models(const std::vector<Trajectory>& dataset, const TrainConfig& config) {
  require(!dataset.empty(), "train_models: dataset is empty");
  require(config.window >= 1 && config.batch_size >= 1 && config.epochs >= 0,
          "train_models: window, batch size and epochs must be positive");
  const auto length = static_cast<std::size_t>(config.window);
  std::vector<const Trajectory*> usable;
  for (const Trajectory& tr : dataset) {
    if (tr.observation_count() >= length) usable.push_back(&tr);
  }
  require(!usable.empty(), "train_models: no trajectory is as long as one training window");

  const auto started = std::chrono::steady_clock::now();
  ModelSet models = ModelSet::initialize(config.model);
  auto params = models.tensors();
  OptimizerState optimizer = OptimizerState::for_tensors(params, config.adam);
  Rng rng(config.seed);
  TrainingReport report;

  require(config.final_learning_rate > 0.0, "train_models: final_learning_rate must be positive");
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double progress = config.epochs > 1 ? static_cast<double>(epoch - 1) / (config.epochs - 1) : 0.0;
    optimizer.config.learning_rate =
        config.adam.learning_rate * std::pow(config.final_learning_rate / config.adam.learning_rate, progress);
    // Non-overlapping windows from a random offset in each trajectory.
    std::vector<std::pair<const Trajectory*, std::size_t>> windows;
    for (const Trajectory* tr : usable) {
      const std::size_t count = tr->observation_count();
      const std::size_t max_offset = std::min(length - 1, count - length);
      std::uniform_int_distribution<std::size_t> offset_dist(0, max_offset);
      for (std::size_t start = offset_dist(rng); start + length <= count; start += length) {
        windows.emplace_back(tr, start);
      }
    }
    std::shuffle(windows.begin(), windows.end(), rng);

    EpochReport er;
    er.epoch = epoch;
    double weight_total = 0.0;
    for (std::size_t begin = 0; begin < windows.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(windows.size(), begin + static_cast<std::size_t>(config.batch_size));
      TrainingBatch batch;
      for (std::size_t i = begin; i < end; ++i) {
        batch.windows.push_back(make_window(*windows[i].first, windows[i].second, length));
      }
      const FreeEnergyResult r = free_energy_loss(models, batch, rng, config.kl_weight);
      const auto grads = r.gradients.tensors();
      adam_step(std::span<Matrix* const>(params), std::span<const Matrix* const>(grads), optimizer);
      models.training_steps += 1;
      const double w = static_cast<double>(end - begin);
      er.nll += w * r.nll;
      er.kl += w * r.kl;
      weight_total += w;
    }
    er.nll /= weight_total;
    er.kl /= weight_total;
    er.free_energy = er.nll + config.kl_weight * er.kl;
    report.epochs.push_back(er);
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(models), std::move(report)};
}

ImaginedRollout imagine_rollout(const ModelSet& models, std::span<const double> s0, std::span<const double> actions,
                                Rng& rng) {
  require_state(models, s0.size(), "imagine_rollout");
  ImaginedRollout rollout;
  rollout.actions.assign(actions.begin(), actions.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> state(s0.begin(), s0.end());
  std::vector<double> noise(static_cast<std::size_t>(models.state_dim));
  for (double a : actions) {
    DiagonalGaussian g = transition_predict(models, state, a);
    for (double& n : noise) n = normal(rng);
    state = reparam_sample(g, noise);
    rollout.state_gaussians.push_back(std::move(g));
    rollout.sampled_states.push_back(state);
  }
  return rollout;
}

std::vector<PredictionPoint> open_loop_prediction(const ModelSet& models, const Trajectory& trajectory,
                                                  std::size_t max_steps) {
  require(trajectory.observation_count() >= 2, "open_loop_prediction: trajectory needs at least two observations");
  std::vector<double> state = posterior_infer(models, std::vector<double>(static_cast<std::size_t>(models.state_dim), 0.0),
                                              0.0, trajectory.initial_observation)
                                  .mean();
  std::vector<PredictionPoint> out;
  const std::size_t horizon = std::min(max_steps, trajectory.steps.size());
  for (std::size_t t = 1; t <= horizon; ++t) {
    state = transition_predict(models, state, trajectory.action_at(t)).mean();
    const DiagonalGaussian obs = likelihood_decode(models, state);
    out.push_back(PredictionPoint{t, trajectory.observation_at(t), obs.mean()[0], std::sqrt(obs.variance()[0])});
  }
  return out;
}

double open_loop_prediction_error(const ModelSet& models, const Trajectory& trajectory, std::size_t max_steps) {
  const auto points = open_loop_prediction(models, trajectory, max_steps);
  double sq = 0.0;
  for (const PredictionPoint& p : points) sq += (p.predicted_mean - p.truth) * (p.predicted_mean - p.truth);
  return std::sqrt(sq / static_cast<double>(points.size()));
}

}  // namespace aif
