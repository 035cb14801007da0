#include "transfer/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "transfer/errors.hpp"

namespace transfer {
namespace {

constexpr std::array<char, 4> kMagic{'T', 'F', 'T', '1'};
constexpr const char* kCheckpointHeader = "TRANSFER-CHECKPOINT 1";

template <typename T>
void put_le(std::ostream& os, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  os.write(reinterpret_cast<const char*>(bits.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bits{};
  if (!is.read(reinterpret_cast<char*>(bits.data()), sizeof(T)))
    throw DataError("TFT1: unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  return std::bit_cast<T>(bits);
}

std::string shape_token(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_le<double>(os, v);
}

std::size_t encoded_size(const Tensor& t) { return 4 + 4 + 4 * t.rank() + 8 * t.numel(); }

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw DataError("TFT1: bad magic bytes");
  const auto rank = get_le<std::uint32_t>(is);
  if (rank > 16) throw DataError("TFT1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint32_t>(is);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = get_le<double>(is);
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_tensor(is);
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw DataError("checkpoint has no tensor named " + name);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << kCheckpointHeader << '\n';
  for (const auto& [k, v] : ckpt.config) os << "config " << k << '=' << v << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.find_first_of(" \t\n") != std::string::npos)
      throw UsageError("checkpoint tensor name contains whitespace: " + name);
    os << "tensor " << name << ' ' << offset << ' ' << shape_token(t.shape()) << '\n';
    offset += encoded_size(t);
  }
  os << "end\n";
  for (const auto& entry : ckpt.tensors) write_tensor(os, entry.second);
  if (!os) throw DataError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointHeader)
    throw DataError(path.string() + " is not a checkpoint");
  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::size_t>> index;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string rest;
      std::getline(ls >> std::ws, rest);
      const auto eq = rest.find('=');
      if (eq == std::string::npos) throw DataError("checkpoint: malformed config line: " + line);
      ckpt.config.emplace_back(rest.substr(0, eq), rest.substr(eq + 1));
    } else if (kind == "tensor") {
      std::string name, shape;
      std::size_t offset = 0;
      if (!(ls >> name >> offset >> shape)) throw DataError("checkpoint: malformed tensor line: " + line);
      index.emplace_back(name, offset);
    } else {
      throw DataError("checkpoint: unexpected index line: " + line);
    }
  }
  if (line != "end") throw DataError("checkpoint: truncated index in " + path.string());
  const auto payload = is.tellg();
  for (const auto& [name, offset] : index) {
    is.seekg(payload + static_cast<std::streamoff>(offset));
    ckpt.tensors.emplace_back(name, read_tensor(is));
  }
  return ckpt;
}

}  // namespace transfer
