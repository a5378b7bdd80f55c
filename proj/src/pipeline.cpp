#include "aif/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "aif/error.hpp"
#include "aif/text_format.hpp"
#include "aif/trajectory_io.hpp"

namespace aif {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kReportMagic = "AIFREPORT v1";
constexpr const char* kPlotMagic = "AIFPLOT v1";

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void reject_unknown(const ordered_json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw FormatError("config: '" + where + "' must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw FormatError("config: unknown key '" + (where.empty() ? "" : where + ".") + item.key() + "'");
    }
  }
}

template <typename T>
void read_key(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

fs::path require_input(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw DependencyError("missing upstream artifact '" + path.string() + "' (produced by '" + producer + "')");
  }
  return path;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  writer(out);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Report make_report(const std::string& stage, const RunConfig& config) {
  Report r;
  r.stage = stage;
  r.config_json = to_json(config).dump();
  return r;
}

std::string fmt(double v) { return format_double(v); }

ModelSet load_models_for(const fs::path& run_dir) {
  return load_models(require_input(run_dir / files::kModels, "train-model"));
}

PreferredPrior load_prior_for(const fs::path& run_dir, PriorMode mode) {
  return load_prior(require_input(run_dir / files::prior(mode), "build-prior --mode " + to_string(mode)));
}

std::vector<Trajectory> load_random_for(const fs::path& run_dir) {
  return load_trajectories(require_input(run_dir / files::kRandom, "collect"));
}

std::vector<Trajectory> load_expert_for(const fs::path& run_dir) {
  return load_trajectories(require_input(run_dir / files::kExpert, "record-expert"));
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

std::uint64_t RunConfig::stage_seed(const std::string& stage) const { return splitmix64(seed ^ fnv1a(stage)); }

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["env"] = {{"observation_noise_std", c.env.observation_noise_std}, {"max_steps", c.env.max_steps}};
  j["collect"] = {{"episodes", c.random_episodes}};
  j["expert"] = {{"episodes", c.expert_episodes}, {"start_min", c.expert_start_min}, {"start_max", c.expert_start_max}};
  j["model"] = {{"state_dim", c.model.model.state_dim},
                {"hidden", c.model.model.hidden},
                {"activation", to_string(c.model.model.activation)},
                {"window", c.model.window},
                {"batch_size", c.model.batch_size},
                {"epochs", c.model.epochs},
                {"kl_weight", c.model.kl_weight},
                {"learning_rate", c.model.adam.learning_rate},
                {"final_learning_rate", c.model.final_learning_rate},
                {"beta1", c.model.adam.beta1},
                {"beta2", c.model.adam.beta2},
                {"epsilon", c.model.adam.epsilon}};
  j["prior"] = {{"horizon", c.prior_horizon}, {"reward_threshold", c.reward_threshold}};
  j["planner"] = {{"num_candidates", c.planner.num_candidates},
                  {"horizon", c.planner.horizon},
                  {"gamma", c.planner.gamma},
                  {"cem_iterations", c.planner.cem_iterations},
                  {"cem_elite_fraction", c.planner.cem_elite_fraction},
                  {"ambiguity_samples", c.planner.ambiguity_samples},
                  {"stochastic_selection", c.planner.stochastic_selection},
                  {"open_loop", c.planner.open_loop}};
  j["plan_eval"] = {{"start", c.plan_eval.start},
                    {"belief_index", c.plan_eval.belief_index},
                    {"num_candidates", c.plan_eval.num_candidates},
                    {"horizon", c.plan_eval.horizon},
                    {"control_episodes", c.plan_eval.control_episodes}};
  j["policy"] = {{"prior", to_string(c.policy_prior)},
                 {"horizon", c.policy.horizon},
                 {"iterations", c.policy.iterations},
                 {"batch_size", c.policy.batch_size},
                 {"hidden", c.policy.hidden},
                 {"learning_rate", c.policy.adam.learning_rate},
                 {"sample_states", c.policy.sample_states},
                 {"max_start_index", c.policy.max_start_index}};
  j["evaluation"] = {{"episodes", c.evaluation.episodes},
                     {"start_min", c.evaluation.start_min},
                     {"start_max", c.evaluation.start_max},
                     {"greedy_episodes", c.evaluation.greedy_episodes}};
  return j;
}

RunConfig run_config_from_json(const ordered_json& j) {
  RunConfig c;
  try {
    reject_unknown(j, {"seed", "env", "collect", "expert", "model", "prior", "planner", "plan_eval", "policy",
                       "evaluation"},
                   "");
    read_key(j, "seed", c.seed);
    if (j.contains("env")) {
      const auto& e = j.at("env");
      reject_unknown(e, {"observation_noise_std", "max_steps"}, "env");
      read_key(e, "observation_noise_std", c.env.observation_noise_std);
      read_key(e, "max_steps", c.env.max_steps);
    }
    if (j.contains("collect")) {
      reject_unknown(j.at("collect"), {"episodes"}, "collect");
      read_key(j.at("collect"), "episodes", c.random_episodes);
    }
    if (j.contains("expert")) {
      const auto& e = j.at("expert");
      reject_unknown(e, {"episodes", "start_min", "start_max"}, "expert");
      read_key(e, "episodes", c.expert_episodes);
      read_key(e, "start_min", c.expert_start_min);
      read_key(e, "start_max", c.expert_start_max);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, {"state_dim", "hidden", "activation", "window", "batch_size", "epochs", "kl_weight",
                         "learning_rate", "final_learning_rate", "beta1", "beta2", "epsilon"},
                     "model");
      read_key(m, "state_dim", c.model.model.state_dim);
      read_key(m, "hidden", c.model.model.hidden);
      if (m.contains("activation")) c.model.model.activation = activation_from_string(m.at("activation").get<std::string>());
      read_key(m, "window", c.model.window);
      read_key(m, "batch_size", c.model.batch_size);
      read_key(m, "epochs", c.model.epochs);
      read_key(m, "kl_weight", c.model.kl_weight);
      read_key(m, "learning_rate", c.model.adam.learning_rate);
      read_key(m, "final_learning_rate", c.model.final_learning_rate);
      read_key(m, "beta1", c.model.adam.beta1);
      read_key(m, "beta2", c.model.adam.beta2);
      read_key(m, "epsilon", c.model.adam.epsilon);
    }
    if (j.contains("prior")) {
      reject_unknown(j.at("prior"), {"horizon", "reward_threshold"}, "prior");
      read_key(j.at("prior"), "horizon", c.prior_horizon);
      read_key(j.at("prior"), "reward_threshold", c.reward_threshold);
    }
    if (j.contains("planner")) {
      const auto& p = j.at("planner");
      reject_unknown(p, {"num_candidates", "horizon", "gamma", "cem_iterations", "cem_elite_fraction",
                         "ambiguity_samples", "stochastic_selection", "open_loop"},
                     "planner");
      read_key(p, "num_candidates", c.planner.num_candidates);
      read_key(p, "horizon", c.planner.horizon);
      read_key(p, "gamma", c.planner.gamma);
      read_key(p, "cem_iterations", c.planner.cem_iterations);
      read_key(p, "cem_elite_fraction", c.planner.cem_elite_fraction);
      read_key(p, "ambiguity_samples", c.planner.ambiguity_samples);
      read_key(p, "stochastic_selection", c.planner.stochastic_selection);
      read_key(p, "open_loop", c.planner.open_loop);
    }
    if (j.contains("plan_eval")) {
      const auto& p = j.at("plan_eval");
      reject_unknown(p, {"start", "belief_index", "num_candidates", "horizon", "control_episodes"}, "plan_eval");
      read_key(p, "start", c.plan_eval.start);
      read_key(p, "belief_index", c.plan_eval.belief_index);
      read_key(p, "num_candidates", c.plan_eval.num_candidates);
      read_key(p, "horizon", c.plan_eval.horizon);
      read_key(p, "control_episodes", c.plan_eval.control_episodes);
    }
    if (j.contains("policy")) {
      const auto& p = j.at("policy");
      reject_unknown(p, {"prior", "horizon", "iterations", "batch_size", "hidden", "learning_rate", "sample_states",
                         "max_start_index"},
                     "policy");
      if (p.contains("prior")) c.policy_prior = prior_mode_from_string(p.at("prior").get<std::string>());
      read_key(p, "horizon", c.policy.horizon);
      read_key(p, "iterations", c.policy.iterations);
      read_key(p, "batch_size", c.policy.batch_size);
      read_key(p, "hidden", c.policy.hidden);
      read_key(p, "learning_rate", c.policy.adam.learning_rate);
      read_key(p, "sample_states", c.policy.sample_states);
      read_key(p, "max_start_index", c.policy.max_start_index);
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      reject_unknown(e, {"episodes", "start_min", "start_max", "greedy_episodes"}, "evaluation");
      read_key(e, "episodes", c.evaluation.episodes);
      read_key(e, "start_min", c.evaluation.start_min);
      read_key(e, "start_max", c.evaluation.start_max);
      read_key(e, "greedy_episodes", c.evaluation.greedy_episodes);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  try {
    return run_config_from_json(ordered_json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config '" + path.string() + "': " + e.what());
  }
}

void Report::set(const std::string& key, double value) { values.emplace_back(key, format_double(value)); }
void Report::set(const std::string& key, long long value) { values.emplace_back(key, std::to_string(value)); }
void Report::set(const std::string& key, const std::string& value) { values.emplace_back(key, value); }

const std::string& Report::get(const std::string& key) const {
  for (const auto& [k, v] : values) {
    if (k == key) return v;
  }
  throw FormatError("report '" + stage + "' has no key '" + key + "'");
}

const Report::Table& Report::table(const std::string& name) const {
  for (const Table& t : tables) {
    if (t.name == name) return t;
  }
  throw FormatError("report '" + stage + "' has no table '" + name + "'");
}

void write_report(std::ostream& out, const Report& r) {
  out << kReportMagic << '\n' << "stage " << r.stage << '\n' << "config " << r.config_json << '\n';
  for (const auto& [k, v] : r.values) out << k << ',' << v << '\n';
  for (const Report::Table& t : r.tables) {
    out << '\n' << "table " << t.name << '\n';
    for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << t.columns[i];
    out << '\n';
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << '\n';
    }
  }
}

Report read_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReportMagic) {
    throw FormatError("AIFREPORT: expected header '" + std::string(kReportMagic) + "', found '" + line + "'");
  }
  Report r;
  if (!std::getline(in, line) || line.rfind("stage ", 0) != 0) throw FormatError("AIFREPORT: missing stage line");
  r.stage = line.substr(6);
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) throw FormatError("AIFREPORT: missing config line");
  r.config_json = line.substr(7);
  Report::Table* table = nullptr;
  bool expect_columns = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      table = nullptr;
      continue;
    }
    if (line.rfind("table ", 0) == 0) {
      r.tables.push_back(Report::Table{line.substr(6), {}, {}});
      table = &r.tables.back();
      expect_columns = true;
      continue;
    }
    auto fields = split_csv(line);
    if (table != nullptr) {
      if (expect_columns) {
        table->columns = std::move(fields);
        expect_columns = false;
      } else {
        if (fields.size() != table->columns.size()) throw FormatError("AIFREPORT: ragged row in table " + table->name);
        table->rows.push_back(std::move(fields));
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("AIFREPORT: malformed line '" + line + "'");
    r.values.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return r;
}

void save_report(const fs::path& path, const Report& report) {
  write_file(path, [&](std::ostream& out) { write_report(out, report); });
}

Report load_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_report(in);
}

namespace files {
std::string prior(PriorMode mode) { return "prior_" + to_string(mode) + ".aifprior"; }
std::string prior_report(PriorMode mode) { return "build_prior_" + to_string(mode) + ".report"; }
std::string candidates(PriorMode mode) { return "candidates_" + to_string(mode) + ".csv"; }
std::string plan_report(PriorMode mode) { return "plan_eval_" + to_string(mode) + ".report"; }
}  // namespace files

std::vector<Trajectory> collect_random(const RunConfig& config) {
  require(config.random_episodes >= 1, "collect: episodes must be positive");
  const std::uint64_t base = config.stage_seed("collect");
  std::vector<Trajectory> out;
  for (int i = 0; i < config.random_episodes; ++i) {
    out.push_back(run_episode(random_agent(), config.env, base + static_cast<std::uint64_t>(i), std::nullopt, i));
  }
  return out;
}

std::vector<double> expert_starts(const RunConfig& config) {
  require(config.expert_episodes >= 1, "record-expert: episodes must be positive");
  std::vector<double> starts;
  const int n = config.expert_episodes;
  for (int i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
    starts.push_back(config.expert_start_min + f * (config.expert_start_max - config.expert_start_min));
  }
  return starts;
}

std::vector<Trajectory> record_expert(const RunConfig& config) {
  const std::uint64_t base = config.stage_seed("record-expert");
  const std::vector<double> starts = expert_starts(config);
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    Trajectory t = run_episode(scripted_expert(), config.env, base + i, starts[i], static_cast<int>(i));
    if (!t.reached_goal()) {
      throw DataError("expert failed to reach goal from start " + format_double(starts[i]));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::pair<std::vector<double>, std::vector<std::uint64_t>> evaluation_episodes(const RunConfig& config) {
  Rng rng(config.stage_seed("evaluate"));
  std::uniform_real_distribution<double> start(config.evaluation.start_min, config.evaluation.start_max);
  std::pair<std::vector<double>, std::vector<std::uint64_t>> out;
  for (int i = 0; i < config.evaluation.episodes; ++i) {
    out.first.push_back(start(rng));
    out.second.push_back(rng());
  }
  return out;
}

void cmd_collect(const RunConfig& config, const fs::path& run_dir) {
  ensure_dir(run_dir);
  save_trajectories(run_dir / files::kRandom, collect_random(config));
}

void cmd_record_expert(const RunConfig& config, const fs::path& run_dir) {
  ensure_dir(run_dir);
  save_trajectories(run_dir / files::kExpert, record_expert(config));
}

void cmd_train_model(const RunConfig& config, const fs::path& run_dir) {
  const std::vector<Trajectory> data = load_random_for(run_dir);
  TrainConfig tc = config.model;
  tc.seed = config.stage_seed("train-model");
  tc.model.seed = tc.seed;
  auto [models, training] = train_models(data, tc);
  save_models(run_dir / files::kModels, models);

  Report r = make_report("train-model", config);
  r.set("episodes", static_cast<long long>(data.size()));
  r.set("training_steps", static_cast<long long>(models.training_steps));
  if (!training.epochs.empty()) {
    r.set("final_free_energy", training.epochs.back().free_energy);
    r.set("final_nll", training.epochs.back().nll);
    r.set("final_kl", training.epochs.back().kl);
  }
  // Open-loop prediction on fresh episodes, against an untrained model of
  // the same shape.
  RunConfig test = config;
  test.seed = config.stage_seed("train-model/test");
  test.random_episodes = 20;
  const std::vector<Trajectory> held_out = collect_random(test);
  ModelConfig untrained_cfg = tc.model;
  untrained_cfg.seed = tc.seed + 1;
  const ModelSet untrained = ModelSet::initialize(untrained_cfg);
  double trained_rms = 0.0, untrained_rms = 0.0;
  for (const Trajectory& t : held_out) {
    trained_rms += open_loop_prediction_error(models, t, 50);
    untrained_rms += open_loop_prediction_error(untrained, t, 50);
  }
  r.set("open_loop_rms", trained_rms / static_cast<double>(held_out.size()));
  r.set("open_loop_rms_untrained", untrained_rms / static_cast<double>(held_out.size()));
  Report::Table epochs{"epochs", {"epoch", "free_energy", "nll", "kl"}, {}};
  for (const EpochReport& e : training.epochs) {
    epochs.rows.push_back({std::to_string(e.epoch), fmt(e.free_energy), fmt(e.nll), fmt(e.kl)});
  }
  r.tables.push_back(std::move(epochs));
  save_report(run_dir / files::kTrainReport, r);
}

void cmd_build_prior(const RunConfig& config, const fs::path& run_dir, PriorMode mode, std::optional<int> threshold) {
  const ModelSet models = load_models_for(run_dir);
  PreferredPrior prior;
  switch (mode) {
    case PriorMode::demos:
      prior = prior_from_demos(models, load_expert_for(run_dir), config.prior_horizon);
      break;
    case PriorMode::reward:
      prior = prior_from_reward(models, load_random_for(run_dir), threshold.value_or(config.reward_threshold),
                                config.prior_horizon);
      break;
    case PriorMode::flat:
      prior = flat_prior(models.state_dim, config.prior_horizon);
      break;
  }
  save_prior(run_dir / files::prior(mode), prior);

  Report r = make_report("build-prior", config);
  r.set("mode", to_string(mode));
  r.set("horizon", static_cast<long long>(prior.length()));
  r.set("threshold", prior.threshold ? std::to_string(*prior.threshold) : std::string("none"));
  long long active = 0;
  for (const PriorEntry& e : prior.steps) active += e.active ? 1 : 0;
  r.set("active_steps", active);
  // Mean per-dimension variance over the first and last 20% of timesteps.
  const std::size_t fifth = std::max<std::size_t>(1, prior.length() / 5);
  auto mean_var = [&](std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t t = begin; t < end; ++t) {
      for (double v : prior.at(t).gaussian.variance()) s += v;
    }
    return s / static_cast<double>((end - begin) * static_cast<std::size_t>(prior.state_dim));
  };
  r.set("mean_variance_first_fifth", mean_var(0, fifth));
  r.set("mean_variance_last_fifth", mean_var(prior.length() - fifth, prior.length()));
  r.set("decoded_final_mean", likelihood_decode(models, prior.steps.back().gaussian.mean()).mean()[0]);
  save_report(run_dir / files::prior_report(mode), r);
}

void cmd_plan_eval(const RunConfig& config, const fs::path& run_dir, PriorMode mode) {
  const ModelSet models = load_models_for(run_dir);
  const PreferredPrior prior = load_prior_for(run_dir, mode);
  const std::uint64_t seed = config.stage_seed("plan-eval/" + to_string(mode));

  // Belief: posterior of a scripted-expert run at the configured index.
  const Trajectory reference =
      run_episode(scripted_expert(), config.env, config.stage_seed("plan-eval/reference"), config.plan_eval.start);
  require(config.plan_eval.belief_index >= 0 &&
              static_cast<std::size_t>(config.plan_eval.belief_index) < reference.observation_count(),
          "plan-eval: belief_index beyond the reference episode");
  const auto index = static_cast<std::size_t>(config.plan_eval.belief_index);
  const DiagonalGaussian belief = encode_trajectory(models, reference)[index];

  PlannerConfig pc = config.planner;
  pc.num_candidates = config.plan_eval.num_candidates;
  pc.horizon = config.plan_eval.horizon;
  pc.seed = seed;
  Rng rng(seed);
  const PlanResult result = plan(models, belief, prior, index + 1, pc, rng);
  write_file(run_dir / files::candidates(mode), [&](std::ostream& out) { write_diagnostics(out, result.candidates); });

  Report r = make_report("plan-eval", config);
  r.set("mode", to_string(mode));
  r.set("belief_true_position", reference.true_positions[index]);
  r.set("candidates", static_cast<long long>(result.candidates.size()));
  std::vector<double> g, distance;
  double g_reached = 0.0, g_missed = 0.0;
  long long reached = 0;
  for (const CandidateRecord& c : result.candidates) {
    g.push_back(c.g_value);
    distance.push_back(std::max(0.0, car::kGoalPosition - c.decoded_final_position));
    if (c.reached_goal) {
      ++reached;
      g_reached += c.g_value;
    } else {
      g_missed += c.g_value;
    }
  }
  const long long missed = static_cast<long long>(result.candidates.size()) - reached;
  r.set("reached_goal", reached);
  r.set("mean_g_reached", reached > 0 ? fmt(g_reached / static_cast<double>(reached)) : std::string("nan"));
  r.set("mean_g_missed", missed > 0 ? fmt(g_missed / static_cast<double>(missed)) : std::string("nan"));
  const double rho = spearman(g, distance);
  Rng perm_rng(seed ^ 0x5A5A5A5Aull);
  r.set("spearman_g_distance", rho);
  r.set("spearman_p_value", spearman_permutation_p(g, distance, 10000, perm_rng));
  r.set("selected_action", result.action);

  if (config.plan_eval.control_episodes > 0) {
    PlannerConfig control = config.planner;
    control.seed = seed;
    long long successes = 0;
    Report::Table episodes{"control", {"episode", "seed", "success", "steps"}, {}};
    for (int e = 0; e < config.plan_eval.control_episodes; ++e) {
      const std::uint64_t env_seed = config.stage_seed("plan-eval/control") + static_cast<std::uint64_t>(e);
      const Trajectory t = act_in_env(models, prior, control, config.env, env_seed, config.plan_eval.start);
      successes += t.reached_goal() ? 1 : 0;
      episodes.rows.push_back({std::to_string(e), std::to_string(env_seed), t.reached_goal() ? "1" : "0",
                               std::to_string(t.steps.size())});
    }
    r.set("control_successes", successes);
    r.tables.push_back(std::move(episodes));
  }
  save_report(run_dir / files::plan_report(mode), r);
}

void cmd_train_policy(const RunConfig& config, const fs::path& run_dir) {
  const ModelSet models = load_models_for(run_dir);
  const PreferredPrior prior = load_prior_for(run_dir, config.policy_prior);
  const std::vector<Trajectory> data = load_random_for(run_dir);
  PolicyTrainConfig pc = config.policy;
  pc.seed = config.stage_seed("train-policy");
  const PolicyTrainingResult result = train_policy(models, prior, data, pc);
  save_policy(run_dir / files::kPolicy, result.policy);

  Report r = make_report("train-policy", config);
  r.set("prior", to_string(config.policy_prior));
  r.set("iterations", static_cast<long long>(result.g_curve.size()));
  if (!result.g_curve.empty()) {
    const std::size_t tenth = std::max<std::size_t>(1, result.g_curve.size() / 10);
    auto mean_of = [&](std::size_t begin, std::size_t end) {
      return std::accumulate(result.g_curve.begin() + static_cast<std::ptrdiff_t>(begin),
                             result.g_curve.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
             static_cast<double>(end - begin);
    };
    r.set("mean_g_first_tenth", mean_of(0, tenth));
    r.set("mean_g_last_tenth", mean_of(result.g_curve.size() - tenth, result.g_curve.size()));
  }
  Report::Table curve{"g_curve", {"iteration", "g"}, {}};
  for (std::size_t i = 0; i < result.g_curve.size(); ++i) curve.rows.push_back({std::to_string(i), fmt(result.g_curve[i])});
  r.tables.push_back(std::move(curve));
  save_report(run_dir / files::kPolicyReport, r);
}

void cmd_evaluate(const RunConfig& config, const fs::path& run_dir) {
  const ModelSet models = load_models_for(run_dir);
  const HabitPolicy policy = load_policy(require_input(run_dir / files::kPolicy, "train-policy"));
  const auto [starts, seeds] = evaluation_episodes(config);
  const PolicyEvaluation eval = evaluate_policy(policy, models, config.env, starts, seeds);
  write_file(run_dir / files::kEvaluation, [&](std::ostream& out) { write_evaluation(out, eval); });

  const PolicyEvaluation random = evaluate_source(random_agent(), config.env, starts, seeds);
  std::vector<double> greedy_starts(static_cast<std::size_t>(config.evaluation.greedy_episodes), -0.5);
  std::vector<std::uint64_t> greedy_seeds;
  for (int i = 0; i < config.evaluation.greedy_episodes; ++i) {
    greedy_seeds.push_back(config.stage_seed("evaluate/greedy") + static_cast<std::uint64_t>(i));
  }
  const PolicyEvaluation greedy = evaluate_source(constant_action(1.0), config.env, greedy_starts, greedy_seeds);

  Report r = make_report("evaluate", config);
  long long successes = 0;
  for (const EpisodeOutcome& e : eval.episodes) successes += e.success ? 1 : 0;
  r.set("episodes", static_cast<long long>(eval.episodes.size()));
  r.set("successes", successes);
  r.set("success_rate", eval.success_rate);
  r.set("mean_steps_to_goal", eval.mean_steps_to_goal);
  r.set("random_success_rate", random.success_rate);
  long long greedy_successes = 0;
  for (const EpisodeOutcome& e : greedy.episodes) greedy_successes += e.success ? 1 : 0;
  r.set("greedy_episodes", static_cast<long long>(greedy.episodes.size()));
  r.set("greedy_successes", greedy_successes);
  save_report(run_dir / files::kEvaluateReport, r);
}

void cmd_export_plots(const RunConfig& config, const fs::path& run_dir) {
  const ModelSet models = load_models_for(run_dir);
  const std::vector<Trajectory> expert = load_expert_for(run_dir);
  const std::vector<Trajectory> random = load_random_for(run_dir);
  std::vector<std::pair<PriorMode, PreferredPrior>> priors;
  for (PriorMode mode : {PriorMode::demos, PriorMode::reward, PriorMode::flat}) {
    if (fs::exists(run_dir / files::prior(mode))) priors.emplace_back(mode, load_prior(run_dir / files::prior(mode)));
  }
  if (priors.empty()) require_input(run_dir / files::prior(PriorMode::demos), "build-prior");
  const HabitPolicy policy = load_policy(require_input(run_dir / files::kPolicy, "train-policy"));
  const fs::path dir = run_dir / files::kPlots;
  ensure_dir(dir);
  const int d = models.state_dim;

  write_file(dir / "latent_trace.csv", [&](std::ostream& out) {
    out << kPlotMagic << " latent_trace\n" << "t";
    for (int i = 1; i <= d; ++i) out << ",s" << i;
    out << '\n';
    const std::vector<DiagonalGaussian> beliefs = encode_trajectory(models, expert.front());
    for (std::size_t t = 0; t < beliefs.size(); ++t) {
      out << t;
      for (double m : beliefs[t].mean()) out << ',' << fmt(m);
      out << '\n';
    }
  });

  write_file(dir / "prediction.csv", [&](std::ostream& out) {
    out << kPlotMagic << " prediction\n" << "t,truth,predicted_mean,predicted_std\n";
    for (const PredictionPoint& p : open_loop_prediction(models, random.front(), 50)) {
      out << p.t << ',' << fmt(p.truth) << ',' << fmt(p.predicted_mean) << ',' << fmt(p.predicted_std) << '\n';
    }
  });

  for (const auto& [mode, prior] : priors) {
    write_file(dir / ("prior_" + to_string(mode) + ".csv"), [&](std::ostream& out) {
      out << kPlotMagic << " prior " << to_string(mode) << '\n' << "t,active,decoded_mean";
      for (int i = 1; i <= d; ++i) out << ",mean" << i;
      for (int i = 1; i <= d; ++i) out << ",std" << i;
      out << '\n';
      for (std::size_t t = 0; t < prior.length(); ++t) {
        const DiagonalGaussian& g = prior.at(t).gaussian;
        out << t << ',' << (prior.at(t).active ? 1 : 0) << ',' << fmt(likelihood_decode(models, g.mean()).mean()[0]);
        for (double m : g.mean()) out << ',' << fmt(m);
        for (double s : g.stddev()) out << ',' << fmt(s);
        out << '\n';
      }
    });
    const fs::path candidates = run_dir / files::candidates(mode);
    if (fs::exists(candidates)) {
      fs::copy_file(candidates, dir / files::candidates(mode), fs::copy_options::overwrite_existing);
    }
  }

  const auto [starts, seeds] = evaluation_episodes(config);
  const PolicyEvaluation eval = evaluate_policy(policy, models, config.env, starts, seeds);
  write_file(dir / "policy_rollouts.csv", [&](std::ostream& out) {
    out << kPlotMagic << " policy_rollouts\n" << "episode,start,t,position,observation,action\n";
    for (std::size_t e = 0; e < eval.trajectories.size(); ++e) {
      const Trajectory& tr = eval.trajectories[e];
      for (std::size_t t = 0; t < tr.observation_count(); ++t) {
        out << e << ',' << fmt(starts[e]) << ',' << t << ',' << fmt(tr.true_positions[t]) << ','
            << fmt(tr.observation_at(t)) << ',' << fmt(tr.action_at(t)) << '\n';
      }
    }
  });
}

void cmd_reproduce(const RunConfig& config, const fs::path& run_dir) {
  ensure_dir(run_dir);
  write_file(run_dir / files::kConfig, [&](std::ostream& out) { out << to_json(config).dump(2) << '\n'; });
  cmd_collect(config, run_dir);
  cmd_record_expert(config, run_dir);
  cmd_train_model(config, run_dir);
  cmd_build_prior(config, run_dir, PriorMode::demos);
  cmd_build_prior(config, run_dir, PriorMode::reward);
  cmd_plan_eval(config, run_dir, PriorMode::demos);
  cmd_plan_eval(config, run_dir, PriorMode::reward);
  cmd_train_policy(config, run_dir);
  cmd_evaluate(config, run_dir);
  cmd_export_plots(config, run_dir);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman: need two equally long samples of size >= 2");
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  return pearson(rx, ry);
}

double spearman_permutation_p(std::span<const double> x, std::span<const double> y, int permutations, Rng& rng) {
  require(permutations >= 1, "spearman_permutation_p: permutations must be positive");
  const std::vector<double> rx = ranks(x);
  std::vector<double> ry = ranks(y);
  const double observed = pearson(rx, ry);
  int at_least = 0;
  for (int i = 0; i < permutations; ++i) {
    std::shuffle(ry.begin(), ry.end(), rng);
    if (pearson(rx, ry) >= observed) ++at_least;
  }
  return (1.0 + at_least) / (1.0 + permutations);
}

}  // namespace aif
