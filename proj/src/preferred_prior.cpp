#include "aif/preferred_prior.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "aif/error.hpp"
#include "aif/text_format.hpp"

namespace aif {

namespace {

constexpr const char* kMagic = "AIFPRIOR v1";

// Sum in sorted order so the result is independent of sample order.
double ordered_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

std::string read_manifest_value(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("AIFPRIOR: missing manifest line '" + key + "'");
  std::istringstream ss(line);
  std::string k, v;
  if (!(ss >> k >> v) || k != key) throw FormatError("AIFPRIOR: expected '" + key + " <value>', found '" + line + "'");
  return v;
}

}  // namespace

std::string to_string(PriorMode mode) {
  switch (mode) {
    case PriorMode::demos:
      return "demos";
    case PriorMode::reward:
      return "reward";
    case PriorMode::flat:
      return "flat";
  }
  return "unknown";
}

PriorMode prior_mode_from_string(const std::string& name) {
  if (name == "demos") return PriorMode::demos;
  if (name == "reward") return PriorMode::reward;
  if (name == "flat") return PriorMode::flat;
  throw ContractViolation("unknown prior mode '" + name + "' (expected demos, reward or flat)");
}

const PriorEntry& PreferredPrior::at(std::size_t index) const {
  require(index < steps.size(), "PreferredPrior: timestep " + std::to_string(index) + " beyond prior length " +
                                    std::to_string(steps.size()));
  return steps[index];
}

DiagonalGaussian fit_gaussian(const std::vector<std::vector<double>>& samples) {
  require(!samples.empty(), "fit_gaussian: no samples");
  const std::size_t d = samples.front().size();
  const double n = static_cast<double>(samples.size());
  std::vector<double> mean(d), variance(d);
  std::vector<double> column(samples.size());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < samples.size(); ++k) {
      require(samples[k].size() == d, "fit_gaussian: samples differ in dimension");
      column[k] = samples[k][i];
    }
    mean[i] = ordered_sum(column) / n;
    for (std::size_t k = 0; k < samples.size(); ++k) column[k] = (samples[k][i] - mean[i]) * (samples[k][i] - mean[i]);
    variance[i] = ordered_sum(column) / n;
  }
  return DiagonalGaussian(std::move(mean), std::move(variance));
}

PreferredPrior prior_from_demos(const ModelSet& models, const std::vector<Trajectory>& demos, int horizon) {
  require(!demos.empty(), "prior_from_demos: no demonstrations");
  require(horizon >= 1, "prior_from_demos: horizon must be at least 1");
  std::vector<std::vector<std::vector<double>>> latents;  // demo -> index -> latent mean
  for (const Trajectory& demo : demos) {
    require(demo.size() >= 1, "prior_from_demos: demonstration has no steps");
    std::vector<std::vector<double>> means;
    for (const DiagonalGaussian& g : encode_trajectory(models, demo)) means.push_back(g.mean());
    latents.push_back(std::move(means));
  }
  PreferredPrior prior;
  prior.mode = PriorMode::demos;
  prior.state_dim = models.state_dim;
  std::vector<std::vector<double>> at_step(latents.size());
  for (int tau = 0; tau < horizon; ++tau) {
    for (std::size_t k = 0; k < latents.size(); ++k) {
      at_step[k] = latents[k][std::min(static_cast<std::size_t>(tau), latents[k].size() - 1)];
    }
    prior.steps.push_back(PriorEntry{fit_gaussian(at_step), true});
  }
  return prior;
}

PreferredPrior prior_from_reward(const ModelSet& models, const std::vector<Trajectory>& dataset, int threshold,
                                 int horizon) {
  require(threshold >= 0, "prior_from_reward: threshold must be nonnegative");
  require(horizon > threshold, "prior_from_reward: horizon must exceed the threshold");
  std::vector<std::vector<double>> rewarded;
  for (const Trajectory& tr : dataset) {
    bool any = false;
    for (std::size_t t = 1; t < tr.observation_count(); ++t) {
      if (tr.steps[t - 1].reward > 0.0 && static_cast<int>(t) >= threshold) any = true;
    }
    if (!any) continue;
    const auto beliefs = encode_trajectory(models, tr);
    for (std::size_t t = 1; t < tr.observation_count(); ++t) {
      if (tr.steps[t - 1].reward > 0.0 && static_cast<int>(t) >= threshold) rewarded.push_back(beliefs[t].mean());
    }
  }
  if (rewarded.empty()) {
    throw DataError("insufficient reward data: no +1 reward at or after timestep " + std::to_string(threshold));
  }
  const DiagonalGaussian goal = fit_gaussian(rewarded);
  PreferredPrior prior = flat_prior(models.state_dim, horizon);
  prior.mode = PriorMode::reward;
  prior.threshold = threshold;
  for (int tau = threshold; tau < horizon; ++tau) prior.steps[static_cast<std::size_t>(tau)] = PriorEntry{goal, true};
  return prior;
}

PreferredPrior flat_prior(int state_dim, int horizon) {
  require(state_dim >= 1, "flat_prior: state_dim must be positive");
  require(horizon >= 1, "flat_prior: horizon must be at least 1");
  PreferredPrior prior;
  prior.mode = PriorMode::flat;
  prior.state_dim = state_dim;
  const PriorEntry inactive{DiagonalGaussian::isotropic(std::vector<double>(static_cast<std::size_t>(state_dim), 0.0), 1.0),
                            false};
  prior.steps.assign(static_cast<std::size_t>(horizon), inactive);
  return prior;
}

void write_prior(std::ostream& out, const PreferredPrior& prior) {
  out << kMagic << '\n';
  out << "mode " << to_string(prior.mode) << '\n';
  out << "T " << prior.steps.size() << '\n';
  out << "state_dim " << prior.state_dim << '\n';
  out << "threshold " << (prior.threshold ? std::to_string(*prior.threshold) : "none") << '\n';
  for (const PriorEntry& e : prior.steps) {
    out << (e.active ? 1 : 0);
    for (double m : e.gaussian.mean()) out << ',' << format_double(m);
    for (double v : e.gaussian.variance()) out << ',' << format_double(v);
    out << '\n';
  }
}

PreferredPrior read_prior(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw FormatError("AIFPRIOR: expected header '" + std::string(kMagic) + "', found '" + line + "'");
  }
  PreferredPrior prior;
  prior.mode = prior_mode_from_string(read_manifest_value(in, "mode"));
  const long long horizon = parse_integer(read_manifest_value(in, "T"));
  prior.state_dim = static_cast<int>(parse_integer(read_manifest_value(in, "state_dim")));
  const std::string threshold = read_manifest_value(in, "threshold");
  if (threshold != "none") prior.threshold = static_cast<int>(parse_integer(threshold));
  const auto d = static_cast<std::size_t>(prior.state_dim);
  for (long long t = 0; t < horizon; ++t) {
    if (!std::getline(in, line)) throw FormatError("AIFPRIOR: file ends before timestep " + std::to_string(t));
    const auto f = split_csv(line);
    if (f.size() != 1 + 2 * d) throw FormatError("AIFPRIOR: timestep " + std::to_string(t) + " has wrong field count");
    std::vector<double> mean(d), variance(d);
    for (std::size_t i = 0; i < d; ++i) {
      mean[i] = parse_double(f[1 + i]);
      variance[i] = parse_double(f[1 + d + i]);
    }
    if (f[0] != "0" && f[0] != "1") throw FormatError("AIFPRIOR: active flag must be 0 or 1");
    prior.steps.push_back(PriorEntry{DiagonalGaussian(std::move(mean), std::move(variance)), f[0] == "1"});
  }
  return prior;
}

void save_prior(const std::filesystem::path& path, const PreferredPrior& prior) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_prior(out, prior);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

PreferredPrior load_prior(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_prior(in);
}

}  // namespace aif
