#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pdgr {

/// SplitMix64-style finalizer combining a seed and a tag into a stream seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

/// Seedable generator with platform-independent output.
///
/// The engine is `std::mt19937_64`, whose sequence is fixed by the standard.
/// The standard distributions are not, so the conversions to uniform and
/// normal variates are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (one variate per call, the pair's twin is cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Child stream keyed by a 64-bit tag; advances this stream by one draw.
  Rng fork(std::uint64_t tag) { return Rng(mix_seed(next_u64(), tag)); }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// 64-bit FNV-1a of a byte string; used to key per-sample streams by id.
std::uint64_t hash_id(std::string_view id);

}  // namespace pdgr
