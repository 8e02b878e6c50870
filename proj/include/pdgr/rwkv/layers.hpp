#pragma once

#include <array>
#include <functional>
#include <span>

#include "pdgr/numerics/autodiff.hpp"
#include "pdgr/rwkv/bi_wkv.hpp"

namespace pdgr {

/// Token shift applied before a mixing sublayer; maps T x C to T x C.
using ShiftFn = std::function<Node(const Node&)>;

inline Node identity_shift(const Node& x) { return x; }

inline constexpr std::array<int, 4> kDefaultShiftOffsets = {-1, +1, -2, +2};

/// Differentiable Bi-WKV with linear-time forward and reverse passes.
/// k, v: T x C; w, u: [C].
Node bi_wkv(const Node& k, const Node& v, const Node& w, const Node& u);

/// Quarter-channel sequence shift: X + (1 - mu) * X*, where channel quarter j
/// of X*[t] is X[clamp(t + offsets[j], 0, T-1)]. `mu` broadcasts against X
/// (typically shape [C]).
Node q_shift(const Node& x, const Node& mu,
             std::span<const int> offsets = kDefaultShiftOffsets);
Tensor q_shift(const Tensor& x, const Tensor& mu,
               std::span<const int> offsets = kDefaultShiftOffsets);

/// Per-row standardisation with learnable gain and bias (both [C]).
Node layer_norm(const Node& x, const Node& gain, const Node& bias, double eps = 1e-5);

struct SpatialMixParams {
  Node w_r, w_k, w_v, w_o;  // C x C, no bias
  Node decay;               // w of Bi-WKV, [C]
  Node bonus;               // u of Bi-WKV, [C]
  Node mu;                  // shift mix, [C], entries in [0, 1]
};

struct ChannelMixParams {
  Node w_r;  // C x C
  Node w_k;  // C x hidden
  Node w_v;  // hidden x C
  Node mu;   // shift mix, [C]
};

/// Key/value activations of a spatial mix, exposed for distribution alignment.
struct MixTaps {
  Node k;
  Node v;
};

/// out = (sigmoid(Xs W_r) * BiWKV(Xs W_k, Xs W_v)) W_o with Xs = shift(X).
Node spatial_mix(const Node& x, const SpatialMixParams& p, const ShiftFn& shift,
                 MixTaps* taps = nullptr);

/// out = sigmoid(Xs W_r) * (relu(Xs W_k)^2 W_v) with Xs = shift(X).
Node channel_mix(const Node& x, const ChannelMixParams& p, const ShiftFn& shift);

}  // namespace pdgr
