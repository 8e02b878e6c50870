#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pdgr/agt/agt_shift.hpp"
#include "pdgr/model/model.hpp"
#include "pdgr/numerics/tensor.hpp"

namespace pdgr {

// FLOPs are counted analytically; a multiply-add is 2, exp and divide are 1.

/// Attention core of single-head softmax attention on T tokens of width C:
/// Q K^T (2 T^2 C), row max, subtract, exp, sum, divide (5 T^2), P V (2 T^2 C).
/// Every term is T^2, so the count is exactly quadratic.
double softmax_attention_flops(std::size_t T, std::size_t C);

/// The four C x C token projections (r/q, k, v, output) shared by both
/// attention forms: 8 T C^2.
double projection_flops(std::size_t T, std::size_t C);

/// Forward FLOPs of the whole classifier on one cloud of `input_points`.
double model_flops(const ModelConfig& cfg, std::size_t input_points);

/// Reference softmax attention forward, evaluated in row blocks so memory
/// stays O(block * T).
RowMatrix softmax_attention(const RowMatrix& q, const RowMatrix& k, const RowMatrix& v);

enum class BenchKernel { biwkv, softmax };
BenchKernel parse_bench_kernel(std::string_view text);
std::string_view to_string(BenchKernel k);

struct BenchRow {
  std::string name;  // biwkv, softmax or agt_shift
  std::size_t length = 0;
  double flops = 0.0;        // attention core
  double flops_total = 0.0;  // core plus projections; 0 for agt_shift
  double seconds = -1.0;     // median wall-clock, -1 when not timed
};

/// Analytic FLOPs for every length; wall-clock as well when `time` is set.
std::vector<BenchRow> bench_kernel(BenchKernel kernel, std::span<const std::size_t> lengths, std::size_t channels,
                                   bool time, std::uint64_t seed = 0);

/// Wall-clock of grid construction plus AGT-Shift over N points drawn at a
/// fixed density (about 1024 points per unit volume), C channels.
std::vector<BenchRow> bench_agt(std::span<const std::size_t> sizes, std::size_t channels, const AgtConfig& cfg,
                                std::uint64_t seed = 0);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// name,length,flops,flops_total,seconds
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);

}  // namespace pdgr
