#include "pdgr/harness/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "pdgr/numerics/errors.hpp"
#include "pdgr/numerics/rng.hpp"
#include "pdgr/rwkv/bi_wkv.hpp"

namespace pdgr {

double softmax_attention_flops(std::size_t T, std::size_t C) {
  const double t = static_cast<double>(T), c = static_cast<double>(C);
  return 2.0 * t * t * c + 5.0 * t * t + 2.0 * t * t * c;
}

double projection_flops(std::size_t T, std::size_t C) {
  const double t = static_cast<double>(T), c = static_cast<double>(C);
  return 4.0 * 2.0 * t * c * c;
}

double model_flops(const ModelConfig& cfg, std::size_t input_points) {
  // Dense layers and the Bi-WKV kernel; norms and elementwise ops are ignored.
  auto dense = [](double rows, double in, double out) { return 2.0 * rows * in * out; };
  const double c0 = static_cast<double>(cfg.stage_widths.front());
  double tokens = static_cast<double>(input_points);
  double flops = dense(tokens, 3, c0) + dense(tokens, c0, c0);
  double prev = c0;
  for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
    const std::size_t C = cfg.stage_widths[s];
    const double c = static_cast<double>(C);
    tokens = std::min(tokens, static_cast<double>(cfg.stage_points[s]));
    flops += dense(tokens, prev, c);
    const auto T = static_cast<std::size_t>(tokens);
    const double hidden = static_cast<double>(cfg.hidden_ratio) * c;
    const double block = projection_flops(T, C) + bi_wkv_flops(T, C) + dense(tokens, c, c) +
                         dense(tokens, c, hidden) + dense(tokens, hidden, c);
    flops += static_cast<double>(cfg.stage_blocks[s]) * block;
    prev = c;
  }
  flops += dense(1, 2 * prev, static_cast<double>(cfg.num_classes));
  return flops;
}

RowMatrix softmax_attention(const RowMatrix& q, const RowMatrix& k, const RowMatrix& v) {
  const Eigen::Index T = q.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  constexpr Eigen::Index kBlock = 256;
  RowMatrix out(T, v.cols());
  for (Eigen::Index r0 = 0; r0 < T; r0 += kBlock) {
    const Eigen::Index rows = std::min(kBlock, T - r0);
    RowMatrix s = (q.middleRows(r0, rows) * k.transpose()) * scale;
    for (Eigen::Index i = 0; i < rows; ++i) {
      auto row = s.row(i);
      row = (row.array() - row.maxCoeff()).exp().matrix();
      row /= row.sum();
    }
    out.middleRows(r0, rows) = s * v;
  }
  return out;
}

BenchKernel parse_bench_kernel(std::string_view text) {
  if (text == "biwkv") return BenchKernel::biwkv;
  if (text == "softmax") return BenchKernel::softmax;
  throw InvalidConfig("unknown kernel '" + std::string(text) + "' (expected biwkv or softmax)");
}

std::string_view to_string(BenchKernel k) { return k == BenchKernel::biwkv ? "biwkv" : "softmax"; }

namespace {

RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

// Median over repeats; each repeat runs the body enough times to last ~20 ms.
template <typename F>
double median_seconds(F&& body, int repeats = 5) {
  using clock = std::chrono::steady_clock;
  int inner = 1;
  for (;;) {
    const auto t0 = clock::now();
    for (int i = 0; i < inner; ++i) body();
    const double dt = std::chrono::duration<double>(clock::now() - t0).count();
    if (dt > 0.02 || inner >= (1 << 16)) break;
    inner *= 2;
  }
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = clock::now();
    for (int i = 0; i < inner; ++i) body();
    times.push_back(std::chrono::duration<double>(clock::now() - t0).count() / inner);
  }
  std::nth_element(times.begin(), times.begin() + repeats / 2, times.end());
  return times[static_cast<std::size_t>(repeats / 2)];
}

}  // namespace

std::vector<BenchRow> bench_kernel(BenchKernel kernel, std::span<const std::size_t> lengths, std::size_t channels,
                                   bool time, std::uint64_t seed) {
  std::vector<BenchRow> rows;
  Rng rng(seed);
  const auto C = static_cast<Eigen::Index>(channels);
  for (std::size_t T : lengths) {
    BenchRow row;
    row.name = std::string(to_string(kernel));
    row.length = T;
    row.flops = kernel == BenchKernel::biwkv ? bi_wkv_flops(T, channels) : softmax_attention_flops(T, channels);
    row.flops_total = row.flops + projection_flops(T, channels);
    if (time) {
      const RowMatrix k = random_matrix(static_cast<Eigen::Index>(T), C, rng);
      const RowMatrix v = random_matrix(static_cast<Eigen::Index>(T), C, rng);
      volatile double sink = 0.0;
      if (kernel == BenchKernel::biwkv) {
        const Vector w = Vector::LinSpaced(C, 0.0, 8.0);
        const Vector u = Vector::Constant(C, 0.5);
        row.seconds = median_seconds([&] { sink = sink + bi_wkv_linear(k, v, w, u)(0, 0); }, 3);
      } else {
        const RowMatrix q = random_matrix(static_cast<Eigen::Index>(T), C, rng);
        row.seconds = median_seconds([&] { sink = sink + softmax_attention(q, k, v)(0, 0); }, 3);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<BenchRow> bench_agt(std::span<const std::size_t> sizes, std::size_t channels, const AgtConfig& cfg,
                                std::uint64_t seed) {
  std::vector<BenchRow> rows;
  Rng rng(seed);
  for (std::size_t n : sizes) {
    const double side = std::cbrt(static_cast<double>(n) / 1024.0);
    Points coords(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < coords.size(); ++i) coords.data()[i] = rng.uniform(0.0, side);
    const Node features = Node::constant(
        Tensor::from_matrix(random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(channels), rng)));
    BenchRow row;
    row.name = "agt_shift";
    row.length = n;
    volatile double sink = 0.0;
    row.seconds = median_seconds([&] { sink = sink + agt_shift(features, coords, cfg).value().data()[0]; });
    rows.push_back(row);
  }
  return rows;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidConfig("loglog_slope needs two or more paired points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "name,length,flops,flops_total,seconds\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.9g\n", r.name.c_str(), r.length, r.flops, r.flops_total,
                  r.seconds);
    os << buf;
  }
}

}  // namespace pdgr
