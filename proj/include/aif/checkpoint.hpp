#pragma once

// "AIFNET v1" checkpoints: a text manifest followed by the raw parameters.
//
//   AIFNET v1
//   kind <kind>
//   meta <key> <value>                         (zero or more)
//   network <name> <activation> <seed> <input> <hidden widths...> <output>
//   ...
//   doubles <count>
//   <count little-endian IEEE-754 doubles>
//
// Parameters appear network by network in manifest order, each network's
// tensors in canonical order (hidden W, b ..., mean W, b, variance W, b),
// every matrix written row by row.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aif/network.hpp"

namespace aif {

struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, NetworkParams>> networks;

  const NetworkParams& network(const std::string& name) const;
  const std::string& meta(const std::string& key) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace aif
