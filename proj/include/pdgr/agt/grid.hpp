#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

template <typename Scalar>
using PointsX = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points = PointsX<double>;

/// Integer cell coordinates must satisfy |i| < 2^20 to pack losslessly.
inline constexpr std::int64_t kCellCoordLimit = std::int64_t{1} << 20;

/// Packs three signed cell coordinates into 63 bits, 21 bits per axis.
inline std::uint64_t pack_cell(std::int64_t ix, std::int64_t iy, std::int64_t iz) {
  constexpr std::uint64_t mask = (std::uint64_t{1} << 21) - 1;
  auto enc = [](std::int64_t v) { return static_cast<std::uint64_t>(v + kCellCoordLimit) & mask; };
  return enc(ix) | (enc(iy) << 21) | (enc(iz) << 42);
}

/// Spatial hash over a fixed cell size. Cells are numbered densely in order
/// of first appearance so iteration is deterministic.
template <typename Scalar>
struct GridIndexT {
  Scalar cell_size{};
  std::vector<std::uint64_t> cell_of;          // per point: packed key
  std::vector<std::size_t> slot_of;            // per point: dense cell number
  std::vector<std::uint64_t> keys;             // per cell
  std::vector<std::vector<std::size_t>> members;
  PointsX<Scalar> centroids;                   // per cell
  std::unordered_map<std::uint64_t, std::size_t> lookup;

  std::size_t num_cells() const { return members.size(); }
};
using GridIndex = GridIndexT<double>;

/// One pass over the points: bucket by floor(coord / h), then average members.
template <typename Derived>
GridIndexT<typename Derived::Scalar> build_grid(const Eigen::MatrixBase<Derived>& coords,
                                                typename Derived::Scalar h) {
  using Scalar = typename Derived::Scalar;
  using std::floor;
  if (coords.cols() != 3) throw ShapeMismatch("build_grid expects N x 3 coordinates");
  if (!(h > Scalar(0))) throw InvalidConfig("cell size must be positive");
  const Eigen::Index n = coords.rows();
  GridIndexT<Scalar> g;
  g.cell_size = h;
  g.cell_of.resize(static_cast<std::size_t>(n));
  g.slot_of.resize(static_cast<std::size_t>(n));
  g.lookup.reserve(static_cast<std::size_t>(n));
  std::vector<Eigen::Matrix<Scalar, 1, 3>> sums;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::int64_t c[3];
    for (int a = 0; a < 3; ++a) {
      const Scalar x = coords(i, a);
      if (!std::isfinite(static_cast<double>(x))) {
        throw NonFiniteCoordinate("point " + std::to_string(i));
      }
      const Scalar q = floor(x / h);
      if (!(q > -Scalar(kCellCoordLimit) && q < Scalar(kCellCoordLimit))) {
        throw InvalidConfig("cell coordinate exceeds the 21-bit hash range at point " +
                            std::to_string(i));
      }
      c[a] = static_cast<std::int64_t>(q);
    }
    const std::uint64_t key = pack_cell(c[0], c[1], c[2]);
    auto [it, inserted] = g.lookup.try_emplace(key, g.members.size());
    if (inserted) {
      g.keys.push_back(key);
      g.members.emplace_back();
      sums.push_back(Eigen::Matrix<Scalar, 1, 3>::Zero());
    }
    g.cell_of[static_cast<std::size_t>(i)] = key;
    g.slot_of[static_cast<std::size_t>(i)] = it->second;
    g.members[it->second].push_back(static_cast<std::size_t>(i));
    sums[it->second] += coords.row(i);
  }
  g.centroids.resize(static_cast<Eigen::Index>(g.members.size()), 3);
  for (std::size_t s = 0; s < g.members.size(); ++s) {
    g.centroids.row(static_cast<Eigen::Index>(s)) = sums[s] / Scalar(g.members[s].size());
  }
  return g;
}

/// Per-cell softmax of negative centroid distances, aligned with `members`.
template <typename Scalar, typename Derived>
std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> agt_weights(
    const GridIndexT<Scalar>& grid, const Eigen::MatrixBase<Derived>& coords) {
  using std::exp;
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> weights(grid.num_cells());
  for (std::size_t s = 0; s < grid.num_cells(); ++s) {
    const auto& mem = grid.members[s];
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d(static_cast<Eigen::Index>(mem.size()));
    for (std::size_t j = 0; j < mem.size(); ++j) {
      d[static_cast<Eigen::Index>(j)] =
          (coords.row(static_cast<Eigen::Index>(mem[j])) - grid.centroids.row(static_cast<Eigen::Index>(s)))
              .norm();
    }
    // Shift by the smallest distance; the softmax is unchanged.
    auto e = (-(d.array() - d.minCoeff())).exp();
    weights[s] = (e / e.sum()).matrix();
  }
  return weights;
}

}  // namespace pdgr
