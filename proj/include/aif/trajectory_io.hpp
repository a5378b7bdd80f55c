#pragma once

// "AIFTRAJ v1" trajectory files.
//
//   AIFTRAJ v1
//   # episode <id> start <start_position> seed <seed>
//   <episode_id>,<t>,<action>,<observation>,<reward>,<done>
//   ...
//   <blank line between episodes>
//
// Record t = 0 is the reset observation with the null action. Numbers are
// written in shortest round-trip form, so files reload bit-exactly.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "aif/mountain_car.hpp"

namespace aif {

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& episodes);
std::vector<Trajectory> read_trajectories(std::istream& in);

void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& episodes);
std::vector<Trajectory> load_trajectories(const std::filesystem::path& path);

}  // namespace aif
