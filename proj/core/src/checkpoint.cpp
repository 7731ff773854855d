#include "prwm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace prwm {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'W', 'M'};
constexpr uint16_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(std::string("checkpoint: truncated reading ") + what);
  return v;
}

}  // namespace

const Tensor* NamedTensors::find(std::string_view name) const {
  for (auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& NamedTensors::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw std::runtime_error("checkpoint: missing tensor '" + std::string(name) + "'");
  return *t;
}

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  for (auto& [name, t] : tensors) {
    write_pod(os, uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_pod(os, uint32_t(t.rank()));
    for (int d : t.shape) write_pod(os, uint64_t(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             std::streamsize(t.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' has wrong magic");
  const auto version = read_pod<uint16_t>(is, "version");
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  NamedTensors out;
  while (true) {
    uint32_t name_len;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    if (!is) throw std::runtime_error("checkpoint: truncated reading name length");
    if (name_len > (1u << 20)) throw std::runtime_error("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated reading name");
    const auto rank = read_pod<uint32_t>(is, "rank");
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = int(read_pod<uint64_t>(is, "dims"));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated reading data for '" + name + "'");
    out.items.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> snapshot_params(const nn::Params& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params.items.size());
  for (auto& [name, var] : params.items) out.emplace_back(name, var.value());
  return out;
}

void restore_params(nn::Params& params, const NamedTensors& saved, const std::string& prefix) {
  for (auto& [name, var] : params.items) {
    const Tensor& t = saved.at(prefix + name);
    if (!t.same_shape(var.value()))
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': stored " +
                               t.shape_str() + " vs model " + var.value().shape_str());
    var.value() = t;
  }
}

uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checksum: cannot open '" + path + "'");
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= uint8_t(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

}  // namespace prwm
