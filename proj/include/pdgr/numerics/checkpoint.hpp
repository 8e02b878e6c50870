#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "pdgr/numerics/tensor.hpp"

namespace pdgr {

/// Ordered list of named tensors as stored in a checkpoint file.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr char kCheckpointMagic[4] = {'P', 'D', 'G', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers and floats little-endian):
//   "PDGR" | u32 version | u32 entry count |
//   per entry: u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 payload[numel]
void write_checkpoint(std::ostream& os, const NamedTensors& entries);
NamedTensors read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace pdgr
