#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "pdgr/agt/grid.hpp"
#include "pdgr/numerics/autodiff.hpp"
#include "pdgr/numerics/rng.hpp"

namespace pdgr {

struct AgtConfig {
  double cell_size = 0.2;  // h
  double lambda = 0.5;     // weight of the original feature in the fused channels
  /// Number of leading channels that are mixed; 0 means C / 2.
  std::size_t mixed_channels = 0;

  void validate(std::size_t channels) const;
  std::size_t resolved_channels(std::size_t channels) const {
    return mixed_channels == 0 ? channels / 2 : mixed_channels;
  }
};

/// Row-sparse aggregation: row i aggregates group `group_of[i]`, a list of
/// (source row, weight) pairs. Several rows may share a group.
struct NeighborPlan {
  std::vector<std::vector<std::pair<std::size_t, double>>> groups;
  std::vector<std::size_t> group_of;
};

/// out[:, :c'] = lambda * F[:, :c'] + (1 - lambda) * (A F)[:, :c'];
/// out[:, c':] = F[:, c':]. Linear in F; the plan carries no gradient.
Node neighbor_fuse(const Node& features, const NeighborPlan& plan, double lambda,
                   std::size_t mixed_channels);

/// Aggregation plan of the spatial-hash cells: every member of a cell shares
/// the cell's centroid-softmax aggregate.
NeighborPlan agt_plan(const Eigen::Ref<const Points>& coords, double cell_size);

Node agt_shift(const Node& features, const Eigen::Ref<const Points>& coords, const AgtConfig& cfg);

enum class KnnStrategy { RandOne, Avg, WAvg };

/// Indices of the k nearest other points of every point, nearest first, ties
/// by lower index. Brute force O(N^2).
std::vector<std::vector<std::size_t>> knn_indices(const Eigen::Ref<const Points>& coords, std::size_t k);

NeighborPlan knn_plan(const Eigen::Ref<const Points>& coords, std::size_t k, KnnStrategy strategy,
                      Rng& rng);

Node knn_shift(const Node& features, const Eigen::Ref<const Points>& coords, std::size_t k,
               KnnStrategy strategy, Rng& rng, const AgtConfig& fuse = {});

}  // namespace pdgr
