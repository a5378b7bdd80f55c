#include "aif/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "aif/error.hpp"

namespace aif {

namespace {

constexpr const char* kMagic = "AIFNET v1";

void write_double(std::ostream& out, double value) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_double(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (in.gcount() != 8) throw FormatError("AIFNET: truncated parameter block");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::vector<std::string> split(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

long long parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw FormatError("AIFNET: bad integer '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("AIFNET: bad integer '" + s + "'");
  }
}

}  // namespace

const NetworkParams& Checkpoint::network(const std::string& name) const {
  for (const auto& [n, p] : networks) {
    if (n == name) return p;
  }
  throw FormatError("AIFNET: checkpoint has no network named '" + name + "'");
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw FormatError("AIFNET: checkpoint has no metadata key '" + key + "'");
  return it->second;
}

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  out << kMagic << '\n' << "kind " << checkpoint.kind << '\n';
  for (const auto& [key, value] : checkpoint.metadata) {
    require(key.find_first_of(" \n") == std::string::npos && value.find_first_of(" \n") == std::string::npos,
            "write_checkpoint: metadata must not contain whitespace");
    out << "meta " << key << ' ' << value << '\n';
  }
  std::size_t count = 0;
  for (const auto& [name, params] : checkpoint.networks) {
    const NetworkShape shape = params.shape();
    out << "network " << name << ' ' << to_string(shape.activation) << ' ' << params.seed() << ' '
        << shape.input_dim;
    for (int w : shape.hidden) out << ' ' << w;
    out << ' ' << shape.output_dim << '\n';
    count += params.parameter_count();
  }
  out << "doubles " << count << '\n';
  for (const auto& [name, params] : checkpoint.networks) {
    for (const Matrix* m : params.tensors()) {
      for (Eigen::Index r = 0; r < m->rows(); ++r) {
        for (Eigen::Index c = 0; c < m->cols(); ++c) write_double(out, (*m)(r, c));
      }
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw FormatError("AIFNET: expected header '" + std::string(kMagic) + "', found '" + line + "'");
  }
  Checkpoint cp;
  std::vector<NetworkShape> shapes;
  std::vector<std::uint64_t> seeds;
  long long count = -1;
  while (count < 0 && std::getline(in, line)) {
    const auto tok = split(line);
    if (tok.empty()) continue;
    if (tok[0] == "kind" && tok.size() == 2) {
      cp.kind = tok[1];
    } else if (tok[0] == "meta" && tok.size() == 3) {
      cp.metadata[tok[1]] = tok[2];
    } else if (tok[0] == "network" && tok.size() >= 6) {
      NetworkShape shape;
      shape.activation = activation_from_string(tok[2]);
      seeds.push_back(static_cast<std::uint64_t>(std::stoull(tok[3])));
      shape.input_dim = static_cast<int>(parse_int(tok[4]));
      shape.hidden.clear();
      for (std::size_t i = 5; i + 1 < tok.size(); ++i) shape.hidden.push_back(static_cast<int>(parse_int(tok[i])));
      shape.output_dim = static_cast<int>(parse_int(tok.back()));
      shapes.push_back(shape);
      cp.networks.emplace_back(tok[1], NetworkParams());
    } else if (tok[0] == "doubles" && tok.size() == 2) {
      count = parse_int(tok[1]);
    } else {
      throw FormatError("AIFNET: unrecognized manifest line '" + line + "'");
    }
  }
  if (count < 0) throw FormatError("AIFNET: manifest has no 'doubles' line");

  long long read = 0;
  for (std::size_t n = 0; n < shapes.size(); ++n) {
    NetworkParams p = NetworkParams::initialize(shapes[n], 0);
    p = make_network(p.hidden(), p.mean_head(), p.variance_head(), shapes[n].activation, seeds[n]);
    for (Matrix* m : p.tensors()) {
      for (Eigen::Index r = 0; r < m->rows(); ++r) {
        for (Eigen::Index c = 0; c < m->cols(); ++c) {
          (*m)(r, c) = read_double(in);
          ++read;
        }
      }
    }
    cp.networks[n].second = std::move(p);
  }
  if (read != count) throw FormatError("AIFNET: manifest declares " + std::to_string(count) + " doubles, shapes need " +
                                       std::to_string(read));
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("AIFNET: trailing bytes after parameter block");
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, checkpoint);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_checkpoint(in);
}

}  // namespace aif
