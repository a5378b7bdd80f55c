#pragma once

// Preferred-state distributions P(s_tau): one diagonal Gaussian per future
// timestep plus a flag saying whether that timestep attracts at all.
// Inactive timesteps contribute no KL term to expected free energy.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "aif/gaussian.hpp"
#include "aif/mountain_car.hpp"
#include "aif/world_model.hpp"

namespace aif {

enum class PriorMode { demos, reward, flat };

std::string to_string(PriorMode mode);
PriorMode prior_mode_from_string(const std::string& name);

struct PriorEntry {
  DiagonalGaussian gaussian;
  bool active = false;

  friend bool operator==(const PriorEntry&, const PriorEntry&) = default;
};

struct PreferredPrior {
  PriorMode mode = PriorMode::flat;
  int state_dim = 0;
  /// Reward mode only: first timestep that carries the goal Gaussian.
  std::optional<int> threshold;
  std::vector<PriorEntry> steps;

  std::size_t length() const { return steps.size(); }
  const PriorEntry& at(std::size_t index) const;

  friend bool operator==(const PreferredPrior&, const PreferredPrior&) = default;
};

/// Encodes each demo with posterior means and fits a Gaussian per timestep
/// across demos. Demos shorter than `horizon` repeat their final latent.
PreferredPrior prior_from_demos(const ModelSet& models, const std::vector<Trajectory>& demos, int horizon);

/// One Gaussian over the posterior latents of every +1 reward received at
/// trajectory index >= threshold; timesteps before the threshold are flat.
/// Throws DataError ("insufficient reward data") when no such reward exists.
PreferredPrior prior_from_reward(const ModelSet& models, const std::vector<Trajectory>& dataset, int threshold,
                                 int horizon);

PreferredPrior flat_prior(int state_dim, int horizon);

/// Per-dimension mean and (population) variance of a set of latents. The
/// result does not depend on the order of `samples`.
DiagonalGaussian fit_gaussian(const std::vector<std::vector<double>>& samples);

// "AIFPRIOR v1": header, manifest lines "mode", "T", "state_dim",
// "threshold" (an integer or "none"), then one record per timestep:
// active,mean_1..mean_d,variance_1..variance_d
void write_prior(std::ostream& out, const PreferredPrior& prior);
PreferredPrior read_prior(std::istream& in);
void save_prior(const std::filesystem::path& path, const PreferredPrior& prior);
PreferredPrior load_prior(const std::filesystem::path& path);

}  // namespace aif
