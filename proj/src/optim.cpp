#include "pdgr/numerics/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

void adamw_step(std::span<Node> params, double lr, double weight_decay, const AdamWConfig& cfg,
                AdamWState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Vector::Zero(static_cast<Eigen::Index>(p.value().numel())));
      state.v.push_back(Vector::Zero(static_cast<Eigen::Index>(p.value().numel())));
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeMismatch("optimizer state holds " + std::to_string(state.m.size()) +
                        " buffers for " + std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Vector& x = params[i].value().data();
    const Vector& g = params[i].grad().data();
    Vector& m = state.m[i];
    Vector& v = state.v[i];
    if (m.size() != x.size()) throw ShapeMismatch("optimizer buffer shape drift");
    x *= (1.0 - lr * weight_decay);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    x.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

double cosine_lr(long step, long total_steps, double lr_max, double lr_min) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw InvalidStep("step " + std::to_string(step) + " of " + std::to_string(total_steps));
  }
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

}  // namespace pdgr
