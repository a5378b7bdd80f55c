#include <doctest.h>

#include <cmath>
#include <sstream>

#include "aif/error.hpp"
#include "aif/grad_check.hpp"
#include "aif/habit_policy.hpp"
#include "generators.hpp"

using namespace aif;
using aif::testing::Gen;

namespace {

ModelSet small_models(std::uint64_t seed, int state_dim, int hidden) {
  ModelConfig c;
  c.state_dim = state_dim;
  c.hidden = {hidden, hidden};
  c.seed = seed;
  ModelSet m = ModelSet::initialize(c);
  Gen gen(seed);
  for (Matrix* t : m.tensors()) *t += 0.1 * gen.matrix(t->rows(), t->cols());
  return m;
}

std::vector<Trajectory> random_dataset(int episodes, std::uint64_t seed, int max_steps) {
  std::vector<Trajectory> out;
  for (int i = 0; i < episodes; ++i) {
    out.push_back(run_episode(random_agent(), {0.05, max_steps}, seed + static_cast<std::uint64_t>(i), std::nullopt, i));
  }
  return out;
}

}  // namespace

TEST_CASE("policy action: zero net, bounds, rng independence") {
  HabitPolicy zero = HabitPolicy::initialize(4, {8, 8}, 1);
  for (Matrix* t : zero.net.tensors()) t->setZero();
  Rng rng(1);
  CHECK(policy_action(zero, std::vector<double>(4, 0.7), rng) == 0.0);

  Gen gen(2);
  HabitPolicy p = HabitPolicy::initialize(4, {8, 8}, 3, PolicyMode::stochastic);
  for (Matrix* t : p.net.tensors()) *t *= 5.0;
  for (int i = 0; i < 500; ++i) {
    const double a = policy_action(p, gen.vector(4, -20.0, 20.0), rng);
    CHECK(a >= -1.0);
    CHECK(a <= 1.0);
  }

  HabitPolicy det = HabitPolicy::initialize(4, {8, 8}, 3, PolicyMode::deterministic);
  const std::vector<double> s = gen.vector(4, -1.0, 1.0);
  Rng r1(1), r2(999);
  CHECK(policy_action(det, s, r1) == policy_action(det, s, r2));
  CHECK(policy_action(det, s, r1) == std::tanh(det.net.evaluate(s).mean()[0]));
  CHECK_THROWS_AS(policy_action(det, std::vector<double>(3, 0.0), r1), ContractViolation);
}

TEST_CASE("policy checkpoint round trip") {
  const HabitPolicy p = HabitPolicy::initialize(5, {6}, 4, PolicyMode::stochastic);
  std::stringstream ss;
  write_checkpoint(ss, p.to_checkpoint());
  CHECK(HabitPolicy::from_checkpoint(read_checkpoint(ss)) == p);
  CHECK(policy_mode_from_string(to_string(PolicyMode::stochastic)) == PolicyMode::stochastic);
  CHECK_THROWS_AS(policy_mode_from_string("greedy"), ContractViolation);
}

TEST_CASE("expected free energy of policy rollouts passes finite differences") {
  const ModelSet m = small_models(1, 2, 8);
  HabitPolicy p = HabitPolicy::initialize(2, {8}, 2, PolicyMode::stochastic);
  Gen gen(3);
  for (Matrix* t : p.net.tensors()) *t += 0.2 * gen.matrix(t->rows(), t->cols());
  const Trajectory demo = run_episode(scripted_expert(), {0.05, 200}, 1, -0.5);
  const PreferredPrior prior = prior_from_demos(m, {demo, run_episode(scripted_expert(), {0.05, 200}, 2, -0.4)}, 10);
  const Matrix starts = gen.matrix(4, 2, 0.5);
  const std::vector<std::size_t> offsets{0, 3, 7, 9};
  for (bool sample_states : {false, true}) {
    Rng rng(4);
    const RolloutNoise noise = draw_rollout_noise(4, 2, 3, sample_states, rng);
    std::vector<Matrix*> params = p.net.tensors();
    const double err = grad_check(params, [&](ad::Tape& tape, std::span<const ad::Var> leaves) {
      const BoundNetwork policy{&p.net, std::vector<ad::Var>(leaves.begin(), leaves.end())};
      return policy_free_energy_graph(tape, policy, bind(tape, m, false), starts, offsets, prior, noise);
    });
    CAPTURE(sample_states);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("world-model parameters receive no gradient during policy training") {
  const ModelSet m = small_models(5, 2, 8);
  const HabitPolicy p = HabitPolicy::initialize(2, {8}, 6, PolicyMode::stochastic);
  Rng rng(1);
  const RolloutNoise noise = draw_rollout_noise(3, 2, 4, false, rng);
  ad::Tape tape;
  const ModelVars frozen = bind(tape, m, false);
  const BoundNetwork policy = bind(tape, p.net);
  const std::vector<std::size_t> offsets{0, 0, 0};
  const ad::Var g =
      policy_free_energy_graph(tape, policy, frozen, Matrix::Zero(3, 2), offsets, flat_prior(2, 4), noise);
  tape.backward(g);
  for (const BoundNetwork* net : {&frozen.posterior, &frozen.transition, &frozen.likelihood}) {
    for (ad::Var v : net->tensors) {
      CHECK_FALSE(tape.needs_grad(v));
      CHECK(tape.adjoint(v).isZero());
    }
  }
  double policy_grad = 0.0;
  for (ad::Var v : policy.tensors) policy_grad += tape.adjoint(v).norm();
  CHECK(policy_grad > 0.0);
}

TEST_CASE("start states carry the prior offset of the first imagined state") {
  const ModelSet m = small_models(7, 3, 8);
  const std::vector<Trajectory> data = random_dataset(2, 1, 20);
  const std::vector<StartState> all = start_states_from_dataset(m, data);
  CHECK(all.size() == data[0].observation_count() + data[1].observation_count());
  CHECK(all[0].prior_offset == 1);
  CHECK(all[5].prior_offset == 6);
  CHECK(all[0].state == encode_trajectory(m, data[0])[0].mean());
  const std::vector<StartState> early = start_states_from_dataset(m, data, 4);
  CHECK(early.size() == 10);
}

TEST_CASE("training lowers G and is seeded") {
  const ModelSet m = small_models(9, 3, 16);
  const std::vector<Trajectory> data = random_dataset(5, 20, 100);
  const std::vector<Trajectory> demos{run_episode(scripted_expert(), {0.05, 200}, 1, -0.6),
                                      run_episode(scripted_expert(), {0.05, 200}, 2, -0.4)};
  const PreferredPrior prior = prior_from_demos(m, demos, 60);
  PolicyTrainConfig c;
  c.horizon = 10;
  c.iterations = 200;
  c.batch_size = 8;
  c.hidden = {16};
  c.seed = 3;
  const PolicyTrainingResult r = train_policy(m, prior, data, c);
  REQUIRE(r.g_curve.size() == 200);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 20; ++i) {
    first += r.g_curve[static_cast<std::size_t>(i)];
    last += r.g_curve[static_cast<std::size_t>(180 + i)];
  }
  CHECK(last < first);
  CHECK(train_policy(m, prior, data, c).policy == r.policy);
}

TEST_CASE("evaluation bookkeeping and file format") {
  const EnvConfig env{0.05, 200};
  const std::vector<double> starts{-1.1, -0.5, 0.2};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const PolicyEvaluation greedy = evaluate_source(constant_action(1.0), env, starts, seeds);
  REQUIRE(greedy.episodes.size() == 3);
  int successes = 0;
  double steps = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const Trajectory t = run_episode(constant_action(1.0), env, seeds[i], starts[i]);
    CHECK(greedy.episodes[i].success == t.reached_goal());
    CHECK(greedy.episodes[i].success == (t.true_positions.back() >= 0.45));
    CHECK(greedy.episodes[i].steps == static_cast<int>(t.size()));
    if (t.reached_goal()) {
      ++successes;
      steps += static_cast<double>(t.size());
    }
  }
  CHECK(greedy.success_rate == successes / 3.0);
  CHECK(greedy.mean_steps_to_goal == (successes ? steps / successes : 0.0));

  std::stringstream ss;
  write_evaluation(ss, greedy);
  CHECK(ss.str().rfind("AIFEVAL v1\n", 0) == 0);
  const PolicyEvaluation back = read_evaluation(ss);
  REQUIRE(back.episodes.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.episodes[i].start == greedy.episodes[i].start);
    CHECK(back.episodes[i].seed == greedy.episodes[i].seed);
    CHECK(back.episodes[i].success == greedy.episodes[i].success);
    CHECK(back.episodes[i].steps == greedy.episodes[i].steps);
  }
  CHECK(back.success_rate == greedy.success_rate);
}

TEST_CASE("closed-loop policy evaluation is deterministic and bounded") {
  const ModelSet m = small_models(3, 3, 8);
  const HabitPolicy p = HabitPolicy::initialize(3, {8}, 1, PolicyMode::stochastic);
  const std::vector<double> starts{-0.9, -0.2};
  const std::vector<std::uint64_t> seeds{5, 6};
  const PolicyEvaluation a = evaluate_policy(p, m, {0.05, 50}, starts, seeds);
  const PolicyEvaluation b = evaluate_policy(p, m, {0.05, 50}, starts, seeds);
  REQUIRE(a.trajectories.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.trajectories[i].steps == b.trajectories[i].steps);
    CHECK(a.trajectories[i].start_position == starts[i]);
    for (const Step& s : a.trajectories[i].steps) CHECK(std::abs(s.action) <= 1.0);
  }
}
