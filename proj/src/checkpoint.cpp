#include "pdgr/numerics/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw CheckpointError("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& os, const NamedTensors& entries) {
  os.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(os, d);
    for (std::size_t i = 0; i < t.numel(); ++i) put_le<double>(os, t[i]);
  }
}

NamedTensors read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError("bad magic bytes");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(is);
  NamedTensors entries;
  entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("truncated entry name");
    const auto rank = get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(is);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = get_le<double>(is);
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, entries);
  if (!os) throw IoError("write failed: " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace pdgr
