#pragma once

#include <span>
#include <vector>

#include "pdgr/numerics/autodiff.hpp"

namespace pdgr {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment buffers, one pair per parameter, plus the step count.
struct AdamWState {
  std::vector<Vector> m;
  std::vector<Vector> v;
  long step = 0;
};

/// One AdamW update: decoupled weight decay applied to the parameter, then the
/// bias-corrected Adam step. Moment buffers are created on first use.
void adamw_step(std::span<Node> params, double lr, double weight_decay, const AdamWConfig& cfg,
                AdamWState& state);

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
double cosine_lr(long step, long total_steps, double lr_max, double lr_min);

}  // namespace pdgr
