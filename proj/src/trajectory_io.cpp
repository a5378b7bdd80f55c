#include "aif/trajectory_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "aif/error.hpp"
#include "aif/text_format.hpp"

namespace aif {

namespace {

constexpr const char* kMagic = "AIFTRAJ v1";

void write_record(std::ostream& out, int episode, std::size_t t, double action, double observation, double reward,
                  bool done) {
  out << episode << ',' << t << ',' << format_double(action) << ',' << format_double(observation) << ','
      << format_double(reward) << ',' << (done ? 1 : 0) << '\n';
}

}  // namespace

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& episodes) {
  out << kMagic << '\n';
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Trajectory& tr = episodes[e];
    if (e > 0) out << '\n';
    out << "# episode " << tr.episode_id << " start " << format_double(tr.start_position) << " seed " << tr.seed
        << '\n';
    write_record(out, tr.episode_id, 0, 0.0, tr.initial_observation, 0.0, false);
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const Step& s = tr.steps[t];
      write_record(out, tr.episode_id, t + 1, s.action, s.observation, s.reward, s.done);
    }
  }
}

std::vector<Trajectory> read_trajectories(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw FormatError("AIFTRAJ: expected header '" + std::string(kMagic) + "', found '" + line + "'");
  }
  std::vector<Trajectory> episodes;
  bool open = false;          // an episode is being filled
  bool metadata_seen = false;  // last episode was opened by a '#' line
  std::size_t line_no = 1;
  auto fail = [&](const std::string& why) {
    throw FormatError("AIFTRAJ line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      open = false;
      continue;
    }
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string k1, k2, k3, start, seed;
      int id = 0;
      if (!(ss >> k1 >> id >> k2 >> start >> k3 >> seed) || k1 != "episode" || k2 != "start" || k3 != "seed") {
        fail("malformed episode metadata");
      }
      Trajectory tr;
      tr.episode_id = id;
      tr.start_position = parse_double(start);
      tr.seed = parse_unsigned(seed);
      episodes.push_back(std::move(tr));
      open = false;
      metadata_seen = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 6) fail("expected 6 fields, found " + std::to_string(f.size()));
    const int episode = static_cast<int>(parse_integer(f[0]));
    const long long t = parse_integer(f[1]);
    const double action = parse_double(f[2]);
    const double observation = parse_double(f[3]);
    const double reward = parse_double(f[4]);
    const long long done = parse_integer(f[5]);
    if (done != 0 && done != 1) fail("done flag must be 0 or 1");
    if (!(action >= -1.0 && action <= 1.0)) fail("action outside [-1, 1]");
    if (!std::isfinite(observation) || !std::isfinite(reward)) fail("non-finite value");
    if (t == 0) {
      // Episodes written without a metadata line start at their t = 0 record.
      if (!metadata_seen) {
        Trajectory tr;
        tr.episode_id = episode;
        episodes.push_back(std::move(tr));
      }
      Trajectory& tr = episodes.back();
      if (tr.episode_id != episode) fail("episode id does not match its metadata");
      tr.initial_observation = observation;
      open = true;
      metadata_seen = false;
      continue;
    }
    if (!open || episodes.back().episode_id != episode) fail("step record outside its episode");
    Trajectory& tr = episodes.back();
    if (static_cast<std::size_t>(t) != tr.steps.size() + 1) fail("timesteps must be consecutive");
    tr.steps.push_back(Step{action, observation, reward, done == 1});
  }
  return episodes;
}

void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& episodes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_trajectories(out, episodes);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return read_trajectories(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace aif
