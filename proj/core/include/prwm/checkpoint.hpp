#pragma once
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prwm/layers.hpp"
#include "prwm/tensor.hpp"

namespace prwm {

// Named-tensor container produced by checkpoint loads.
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> items;
  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;  // throws if absent
};

// Binary tensor archive: magic "PRWM", u16 version, then per-tensor records
// (u32 name length, name bytes, u32 rank, u64 dims, f64 data), little-endian.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);
NamedTensors load_checkpoint(const std::string& path);

// Copies parameter values out of / into a Params registry.
std::vector<std::pair<std::string, Tensor>> snapshot_params(const nn::Params& params);
void restore_params(nn::Params& params, const NamedTensors& saved, const std::string& prefix = "");

// FNV-1a over a file's raw bytes; used to assert artifacts stay frozen.
uint64_t file_checksum(const std::string& path);

}  // namespace prwm
