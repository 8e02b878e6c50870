#include "pdgr/agt/agt_shift.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

void AgtConfig::validate(std::size_t channels) const {
  if (!(cell_size > 0.0)) throw InvalidConfig("agt cell size must be > 0");
  if (!(lambda > 0.0 && lambda < 1.0)) throw InvalidConfig("agt lambda must lie in (0, 1)");
  const std::size_t c = resolved_channels(channels);
  if (c == 0 || c > channels) {
    throw InvalidConfig("agt mixed channel count " + std::to_string(c) + " not in (0, " +
                        std::to_string(channels) + "]");
  }
}

Node neighbor_fuse(const Node& features, const NeighborPlan& plan, double lambda,
                   std::size_t mixed_channels) {
  if (features.value().rank() != 2) throw ShapeMismatch("neighbor_fuse expects N x C features");
  const Eigen::Index n = features.value().rows();
  const auto cm = static_cast<Eigen::Index>(mixed_channels);
  if (plan.group_of.size() != static_cast<std::size_t>(n)) {
    throw ShapeMismatch("neighbor plan covers " + std::to_string(plan.group_of.size()) +
                        " rows, features have " + std::to_string(n));
  }
  if (cm > features.value().cols()) throw ShapeMismatch("mixed channels exceed feature width");

  const auto F = features.value().matrix();
  RowMatrix agg = RowMatrix::Zero(static_cast<Eigen::Index>(plan.groups.size()), cm);
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    for (const auto& [j, w] : plan.groups[g]) {
      agg.row(static_cast<Eigen::Index>(g)) += w * F.row(static_cast<Eigen::Index>(j)).head(cm);
    }
  }
  // Written as F + (1 - lambda) (A F - F) so a row whose aggregate equals the
  // row itself (singleton cell) comes back bit-identical.
  RowMatrix out = F;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto a = agg.row(static_cast<Eigen::Index>(plan.group_of[static_cast<std::size_t>(i)]));
    out.row(i).head(cm) += (1.0 - lambda) * (a - F.row(i).head(cm));
  }

  auto shared_plan = std::make_shared<NeighborPlan>(plan);
  return Node::make(Tensor::from_matrix(out), {features},
                    [shared_plan, lambda, cm](detail::NodeData& self) {
                      auto& p = self.parent(0);
                      if (!p.requires_grad) return;
                      const auto G = self.grad.matrix();
                      auto dF = p.grad.matrix();
                      // Sum of upstream grads per group, then scatter by weight.
                      RowMatrix gsum = RowMatrix::Zero(static_cast<Eigen::Index>(shared_plan->groups.size()), cm);
                      for (Eigen::Index i = 0; i < G.rows(); ++i) {
                        gsum.row(static_cast<Eigen::Index>(shared_plan->group_of[static_cast<std::size_t>(i)])) +=
                            G.row(i).head(cm);
                      }
                      dF.rightCols(G.cols() - cm) += G.rightCols(G.cols() - cm);
                      dF.leftCols(cm) += lambda * G.leftCols(cm);
                      for (std::size_t g = 0; g < shared_plan->groups.size(); ++g) {
                        for (const auto& [j, w] : shared_plan->groups[g]) {
                          dF.row(static_cast<Eigen::Index>(j)).head(cm) +=
                              (1.0 - lambda) * w * gsum.row(static_cast<Eigen::Index>(g));
                        }
                      }
                    });
}

NeighborPlan agt_plan(const Eigen::Ref<const Points>& coords, double cell_size) {
  const GridIndex grid = build_grid(coords, cell_size);
  const auto weights = agt_weights(grid, coords);
  NeighborPlan plan;
  plan.group_of = grid.slot_of;
  plan.groups.resize(grid.num_cells());
  for (std::size_t s = 0; s < grid.num_cells(); ++s) {
    const auto& mem = grid.members[s];
    plan.groups[s].reserve(mem.size());
    for (std::size_t j = 0; j < mem.size(); ++j) {
      plan.groups[s].emplace_back(mem[j], weights[s][static_cast<Eigen::Index>(j)]);
    }
  }
  return plan;
}

Node agt_shift(const Node& features, const Eigen::Ref<const Points>& coords, const AgtConfig& cfg) {
  if (features.value().rank() != 2 || features.value().rows() != coords.rows()) {
    throw ShapeMismatch("agt_shift: feature rows must align with coordinate rows");
  }
  const auto channels = static_cast<std::size_t>(features.value().cols());
  cfg.validate(channels);
  return neighbor_fuse(features, agt_plan(coords, cfg.cell_size), cfg.lambda,
                       cfg.resolved_channels(channels));
}

std::vector<std::vector<std::size_t>> knn_indices(const Eigen::Ref<const Points>& coords, std::size_t k) {
  const auto n = static_cast<std::size_t>(coords.rows());
  if (k < 1 || k >= n) {
    throw KTooLarge("k = " + std::to_string(k) + " needs 1 <= k < N = " + std::to_string(n));
  }
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back((coords.row(static_cast<Eigen::Index>(i)) - coords.row(static_cast<Eigen::Index>(j)))
                            .squaredNorm(),
                        j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    out[i].reserve(k);
    for (std::size_t r = 0; r < k; ++r) out[i].push_back(cand[r].second);
  }
  return out;
}

NeighborPlan knn_plan(const Eigen::Ref<const Points>& coords, std::size_t k, KnnStrategy strategy,
                      Rng& rng) {
  const auto nbrs = knn_indices(coords, k);
  NeighborPlan plan;
  plan.groups.resize(nbrs.size());
  plan.group_of.resize(nbrs.size());
  std::iota(plan.group_of.begin(), plan.group_of.end(), std::size_t{0});
  for (std::size_t i = 0; i < nbrs.size(); ++i) {
    auto& grp = plan.groups[i];
    switch (strategy) {
      case KnnStrategy::RandOne:
        grp.emplace_back(nbrs[i][static_cast<std::size_t>(rng.below(k))], 1.0);
        break;
      case KnnStrategy::Avg:
        for (auto j : nbrs[i]) grp.emplace_back(j, 1.0 / static_cast<double>(k));
        break;
      case KnnStrategy::WAvg: {
        Vector d(static_cast<Eigen::Index>(k));
        for (std::size_t r = 0; r < k; ++r) {
          d[static_cast<Eigen::Index>(r)] =
              (coords.row(static_cast<Eigen::Index>(i)) - coords.row(static_cast<Eigen::Index>(nbrs[i][r]))).norm();
        }
        const Eigen::ArrayXd e = (-(d.array() - d.minCoeff())).exp();
        const double total = e.sum();
        for (std::size_t r = 0; r < k; ++r) grp.emplace_back(nbrs[i][r], e[static_cast<Eigen::Index>(r)] / total);
        break;
      }
    }
  }
  return plan;
}

Node knn_shift(const Node& features, const Eigen::Ref<const Points>& coords, std::size_t k,
               KnnStrategy strategy, Rng& rng, const AgtConfig& fuse) {
  if (features.value().rank() != 2 || features.value().rows() != coords.rows()) {
    throw ShapeMismatch("knn_shift: feature rows must align with coordinate rows");
  }
  const auto channels = static_cast<std::size_t>(features.value().cols());
  fuse.validate(channels);
  return neighbor_fuse(features, knn_plan(coords, k, strategy, rng), fuse.lambda,
                       fuse.resolved_channels(channels));
}

}  // namespace pdgr
