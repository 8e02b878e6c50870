#include "pdgr/rwkv/layers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

namespace {

void require_matrix(const Node& x, const char* what) {
  if (x.value().rank() != 2) {
    throw ShapeMismatch(std::string(what) + " expects a T x C matrix, got " + shape_str(x.shape()));
  }
}

// Source row of every (t, quarter) pair.
std::vector<Eigen::Index> shift_sources(Eigen::Index T, std::span<const int> offsets) {
  std::vector<Eigen::Index> src(static_cast<std::size_t>(T) * 4);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      src[static_cast<std::size_t>(t) * 4 + j] = std::clamp<Eigen::Index>(t + offsets[j], 0, T - 1);
    }
  }
  return src;
}

// X* of the quarter shift as a differentiable gather.
Node shifted_copy(const Node& x, std::span<const int> offsets) {
  require_matrix(x, "q_shift");
  if (offsets.size() != 4) throw ShapeMismatch("q_shift needs exactly four offsets");
  const Eigen::Index T = x.value().rows();
  const Eigen::Index C = x.value().cols();
  if (C % 4 != 0) throw ChannelsNotDivisibleBy4("C = " + std::to_string(C));
  const Eigen::Index q = C / 4;
  auto src = shift_sources(T, offsets);
  const auto X = x.value().matrix();
  RowMatrix out(T, C);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      out.block(t, j * q, 1, q) = X.block(src[static_cast<std::size_t>(t * 4 + j)], j * q, 1, q);
    }
  }
  return Node::make(Tensor::from_matrix(out), {x}, [src = std::move(src), T, q](detail::NodeData& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    auto dx = p.grad.matrix();
    const auto g = self.grad.matrix();
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index j = 0; j < 4; ++j) {
        dx.block(src[static_cast<std::size_t>(t * 4 + j)], j * q, 1, q) += g.block(t, j * q, 1, q);
      }
    }
  });
}

}  // namespace

Node bi_wkv(const Node& k, const Node& v, const Node& w, const Node& u) {
  require_matrix(k, "bi_wkv");
  auto log_den = std::make_shared<RowMatrix>();
  RowMatrix y = bi_wkv_linear(k.value().matrix(), v.value().matrix(),
                              Eigen::Map<const Vector>(w.value().data().data(), w.value().data().size()),
                              Eigen::Map<const Vector>(u.value().data().data(), u.value().data().size()),
                              log_den.get());
  return Node::make(Tensor::from_matrix(y), {k, v, w, u}, [log_den](detail::NodeData& self) {
    auto& pk = self.parent(0);
    auto& pv = self.parent(1);
    auto& pw = self.parent(2);
    auto& pu = self.parent(3);
    const auto grads = bi_wkv_backward<double>(pk.value.matrix(), pv.value.matrix(), pw.value.data(),
                                               pu.value.data(), self.value.matrix(), *log_den,
                                               self.grad.matrix());
    if (pk.requires_grad) pk.grad.matrix() += grads.k;
    if (pv.requires_grad) pv.grad.matrix() += grads.v;
    accumulate_grad(pw, grads.w);
    accumulate_grad(pu, grads.u);
  });
}

Node q_shift(const Node& x, const Node& mu, std::span<const int> offsets) {
  const Node xs = shifted_copy(x, offsets);
  const Node one = Node::constant(Tensor::scalar(1.0));
  return x + (one - mu) * xs;
}

Tensor q_shift(const Tensor& x, const Tensor& mu, std::span<const int> offsets) {
  return q_shift(Node::constant(x), Node::constant(mu), offsets).value();
}

Node layer_norm(const Node& x, const Node& gain, const Node& bias, double eps) {
  require_matrix(x, "layer_norm");
  const auto X = x.value().matrix();
  const Eigen::Index C = X.cols();
  if (gain.value().numel() != static_cast<std::size_t>(C) ||
      bias.value().numel() != static_cast<std::size_t>(C)) {
    throw ShapeMismatch("layer_norm gain/bias must have C entries");
  }
  const Vector mean = X.rowwise().mean();
  RowMatrix xhat = X.colwise() - mean;
  const Vector inv_std =
      ((xhat.array().square().rowwise().sum() / static_cast<double>(C)) + eps).rsqrt().matrix();
  xhat.array().colwise() *= inv_std.array();
  const auto g = gain.value().matrix();  // 1 x C
  const auto b = bias.value().matrix();
  RowMatrix y = (xhat.array().rowwise() * g.array().row(0)).rowwise() + b.array().row(0);

  auto saved = std::make_shared<std::pair<RowMatrix, Vector>>(std::move(xhat), inv_std);
  return Node::make(Tensor::from_matrix(y), {x, gain, bias}, [saved](detail::NodeData& self) {
    auto& px = self.parent(0);
    auto& pg = self.parent(1);
    auto& pb = self.parent(2);
    const RowMatrix& xh = saved->first;
    const Vector& inv = saved->second;
    const auto G = self.grad.matrix();
    if (pg.requires_grad) pg.grad.matrix().row(0) += (G.array() * xh.array()).colwise().sum().matrix();
    if (pb.requires_grad) pb.grad.matrix().row(0) += G.colwise().sum();
    if (px.requires_grad) {
      const double C = static_cast<double>(xh.cols());
      RowMatrix dxh = G.array().rowwise() * pg.value.matrix().array().row(0);
      const Vector m1 = dxh.rowwise().sum() / C;
      const Vector m2 = (dxh.array() * xh.array()).rowwise().sum().matrix() / C;
      RowMatrix dx = dxh;
      dx.colwise() -= m1;
      dx.array() -= xh.array().colwise() * m2.array();
      dx.array().colwise() *= inv.array();
      px.grad.matrix() += dx;
    }
  });
}

Node spatial_mix(const Node& x, const SpatialMixParams& p, const ShiftFn& shift, MixTaps* taps) {
  require_matrix(x, "spatial_mix");
  const Node xs = shift(x);
  const Node r = matmul(xs, p.w_r);
  const Node k = matmul(xs, p.w_k);
  const Node v = matmul(xs, p.w_v);
  if (taps) *taps = {k, v};
  return matmul(sigmoid(r) * bi_wkv(k, v, p.decay, p.bonus), p.w_o);
}

Node channel_mix(const Node& x, const ChannelMixParams& p, const ShiftFn& shift) {
  require_matrix(x, "channel_mix");
  const Node xs = shift(x);
  const Node gate = sigmoid(matmul(xs, p.w_r));
  return gate * matmul(square(relu(matmul(xs, p.w_k))), p.w_v);
}

}  // namespace pdgr
