#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "pdgr/numerics/errors.hpp"
#include "pdgr/rwkv/bi_wkv.hpp"
#include "pdgr/rwkv/layers.hpp"

using namespace pdgr;
using pdgr::testing::grad_check;
using pdgr::testing::random_param;
using pdgr::testing::random_tensor;

namespace {

struct WkvCase {
  RowMatrix k, v;
  Vector w, u;
};

WkvCase random_case(Rng& rng, Eigen::Index T, Eigen::Index C, double bound = 5.0) {
  WkvCase c{RowMatrix(T, C), RowMatrix(T, C), Vector(C), Vector(C)};
  for (Eigen::Index i = 0; i < T * C; ++i) {
    c.k.data()[i] = rng.uniform(-bound, bound);
    c.v.data()[i] = rng.uniform(-bound, bound);
  }
  for (Eigen::Index j = 0; j < C; ++j) {
    c.w[j] = rng.uniform(-bound, bound);
    c.u[j] = rng.uniform(-bound, bound);
  }
  return c;
}

// |linear - quadratic| relative to the attention-weighted magnitude of v.
double kernel_deviation(const WkvCase& c) {
  RowMatrix scale;
  const RowMatrix q = bi_wkv_quadratic(c.k, c.v, c.w, c.u, &scale);
  const RowMatrix l = bi_wkv_linear(c.k, c.v, c.w, c.u);
  return ((q - l).array().abs() / scale.array()).maxCoeff();
}

}  // namespace

TEST_CASE("bi_wkv_quadratic hand examples") {
  SUBCASE("T = 1 returns v") {
    RowMatrix k{{0.3, -2.0}}, v{{1.5, -4.0}};
    Vector w{{1.0, 2.0}}, u{{0.5, -0.5}};
    CHECK(bi_wkv_quadratic(k, v, w, u) == v);
    CHECK(bi_wkv_linear(k, v, w, u) == v);
  }
  SUBCASE("constant v is reproduced") {
    Rng rng(1);
    auto c = random_case(rng, 9, 3);
    c.v.setConstant(2.5);
    CHECK((bi_wkv_quadratic(c.k, c.v, c.w, c.u).array() - 2.5).abs().maxCoeff() < 1e-14);
  }
  SUBCASE("T = 2, k = 0, u = 0: plain average of both tokens") {
    RowMatrix k = RowMatrix::Zero(2, 1), v{{3.0}, {7.0}};
    Vector w{{4.2}}, u{{0.0}};
    const RowMatrix y = bi_wkv_quadratic(k, v, w, u);
    CHECK(y(0, 0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(y(1, 0) == doctest::Approx(5.0).epsilon(1e-15));
  }
  SUBCASE("shape errors") {
    RowMatrix k(3, 2), v(2, 2);
    Vector w(2), u(2);
    CHECK_THROWS_AS(bi_wkv_linear(k, v, w, u), ShapeMismatch);
  }
}

TEST_CASE("linear scan matches the quadratic oracle") {
  Rng rng(17);
  double worst = 0.0;
  for (Eigen::Index T : {1, 2, 3, 7, 64, 257}) {
    for (int rep = 0; rep < 6; ++rep) worst = std::max(worst, kernel_deviation(random_case(rng, T, 5)));
  }
  MESSAGE("worst deviation " << worst);
  CHECK(worst <= 1e-10);
}

TEST_CASE("overflow safety with a dominant key") {
  const Eigen::Index T = 12;
  RowMatrix k = RowMatrix::Zero(T, 2), v(T, 2);
  for (Eigen::Index t = 0; t < T; ++t) v.row(t) << double(t), -double(t);
  k(5, 0) = 80.0;
  k(5, 1) = 80.0;
  Vector w{{1.0, 3.0}}, u{{0.0, 0.0}};
  const RowMatrix q = bi_wkv_quadratic(k, v, w, u);
  const RowMatrix l = bi_wkv_linear(k, v, w, u);
  CHECK(q.allFinite());
  CHECK(l.allFinite());
  for (Eigen::Index t = 3; t <= 7; ++t) {
    CHECK(l(t, 0) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(l(t, 1) == doctest::Approx(-5.0).epsilon(1e-12));
  }
  CHECK(((q - l).array().abs() / (q.array().abs() + 1e-300)).maxCoeff() < 1e-8);
}

TEST_CASE("shift invariance in k, at a large offset") {
  // A common shift of every exponent: the self term e^{u + k_t} moves with k_t,
  // so u stays put.
  Rng rng(5);
  auto c = random_case(rng, 33, 4);
  const RowMatrix base = bi_wkv_linear(c.k, c.v, c.w, c.u);
  auto shifted = c;
  shifted.k.array() += 50.0;
  const RowMatrix moved = bi_wkv_linear(shifted.k, shifted.v, shifted.w, shifted.u);
  RowMatrix scale;
  bi_wkv_quadratic(c.k, c.v, c.w, c.u, &scale);
  CHECK(((moved - base).array().abs() / scale.array()).maxCoeff() < 1e-12);
}

TEST_CASE("reversing the sequence reverses the output") {
  Rng rng(8);
  auto c = random_case(rng, 20, 3);
  const RowMatrix y = bi_wkv_linear(c.k, c.v, c.w, c.u);
  const RowMatrix kr = c.k.colwise().reverse(), vr = c.v.colwise().reverse();
  const RowMatrix yr = bi_wkv_linear(kr, vr, c.w, c.u);
  RowMatrix scale;
  bi_wkv_quadratic(c.k, c.v, c.w, c.u, &scale);
  CHECK(((yr.colwise().reverse() - y).array().abs() / scale.array()).maxCoeff() < 1e-13);
}

TEST_CASE("channels are independent of scheduling") {
  Rng rng(9);
  auto c = random_case(rng, 40, 6);
  const RowMatrix full = bi_wkv_linear(c.k, c.v, c.w, c.u);
  for (Eigen::Index ch = 0; ch < 6; ++ch) {
    const RowMatrix one = bi_wkv_linear(c.k.col(ch), c.v.col(ch), c.w.segment(ch, 1), c.u.segment(ch, 1));
    CHECK(one.col(0) == full.col(ch));
  }
}

TEST_CASE("bi_wkv autodiff op matches finite differences") {
  Rng rng(21);
  for (Eigen::Index T : {1, 2, 5, 11}) {
    auto k = random_param({static_cast<std::size_t>(T), 3}, rng);
    auto v = random_param({static_cast<std::size_t>(T), 3}, rng);
    auto w = random_param({3}, rng);
    auto u = random_param({3}, rng);
    auto weights = Node::constant(random_tensor({static_cast<std::size_t>(T), 3}, rng));
    auto rep = grad_check({k, v, w, u}, [&] { return sum(bi_wkv(k, v, w, u) * weights); });
    CAPTURE(T);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("bi_wkv backward stays finite with extreme keys") {
  const std::size_t T = 8;
  Tensor kt({T, 2});
  for (std::size_t i = 0; i < kt.numel(); ++i) kt[i] = (i % 3 == 0) ? 80.0 : -80.0;
  auto k = Node::parameter(kt);
  Rng rng(2);
  auto v = random_param({T, 2}, rng);
  auto w = Node::parameter(Tensor::vector({1.0, -2.0}));
  auto u = Node::parameter(Tensor::vector({80.0, -80.0}));
  backward(sum(square(bi_wkv(k, v, w, u))));
  CHECK(k.grad().all_finite());
  CHECK(v.grad().all_finite());
  CHECK(w.grad().all_finite());
  CHECK(u.grad().all_finite());
}

TEST_CASE("q_shift examples") {
  Rng rng(4);
  const Tensor x = random_tensor({5, 8}, rng);
  CHECK(q_shift(x, Tensor::filled({8}, 1.0)) == x);

  const Tensor one = random_tensor({1, 8}, rng);
  const Tensor mu = random_tensor({8}, rng, 0.0, 1.0);
  const Tensor y = q_shift(one, mu);
  for (std::size_t c = 0; c < 8; ++c) CHECK(y[c] == one[c] + (1.0 - mu[c]) * one[c]);

  CHECK_THROWS_AS(q_shift(random_tensor({3, 6}, rng), Tensor::filled({6}, 0.5)), ChannelsNotDivisibleBy4);
}

TEST_CASE("q_shift index map on T = 3, C = 4") {
  // Row r holds values 10 r + c so every source is recognisable.
  Tensor x({3, 4});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) x[r * 4 + c] = 10.0 * double(r) + double(c);
  const Tensor y = q_shift(x, Tensor::filled({4}, 0.0));
  // Offsets {-1, +1, -2, +2} clamped to [0, 2]; quarter j is channel j here.
  const int source[3][4] = {{0, 1, 0, 2}, {0, 2, 0, 2}, {1, 2, 0, 2}};
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double shifted = 10.0 * source[t][j] + double(j);
      CHECK(y[t * 4 + j] == x[t * 4 + j] + shifted);
    }
  }
}

TEST_CASE("layer_norm gradients") {
  Rng rng(31);
  auto x = random_param({4, 6}, rng);
  auto g = random_param({6}, rng);
  auto b = random_param({6}, rng);
  auto wts = Node::constant(random_tensor({4, 6}, rng));
  auto rep = grad_check({x, g, b}, [&] { return sum(layer_norm(x, g, b) * wts); });
  CHECK(rep.max_rel_error < 1e-4);
}

namespace {

SpatialMixParams random_spatial(Rng& rng, std::size_t C) {
  return {random_param({C, C}, rng, -0.5, 0.5), random_param({C, C}, rng, -0.5, 0.5),
          random_param({C, C}, rng, -0.5, 0.5), random_param({C, C}, rng, -0.5, 0.5),
          random_param({C}, rng, -2.0, 2.0),    random_param({C}, rng, -1.0, 1.0),
          random_param({C}, rng, 0.2, 0.8)};
}

}  // namespace

TEST_CASE("spatial_mix") {
  Rng rng(12);
  const std::size_t T = 6, C = 8;
  auto p = random_spatial(rng, C);
  auto x = random_param({T, C}, rng);
  const ShiftFn shift = [&](const Node& in) { return q_shift(in, p.mu); };

  SUBCASE("zero output projection") {
    auto q = p;
    q.w_o = Node::constant(Tensor::zeros({C, C}));
    CHECK((spatial_mix(x, q, shift).value().data().array() == 0.0).all());
  }
  SUBCASE("gradient check") {
    auto rep = grad_check({x, p.w_r, p.w_k, p.w_v, p.w_o, p.decay, p.bonus, p.mu},
                          [&] { return sum(spatial_mix(x, p, shift)); });
    CHECK(rep.max_rel_error < 1e-4);
  }
  SUBCASE("composition with the oracle when keys vanish") {
    auto q = p;
    const Tensor eye = Tensor::from_matrix(RowMatrix::Identity(C, C));
    q.w_r = Node::constant(eye);
    q.w_v = Node::constant(eye);
    q.w_o = Node::constant(eye);
    q.w_k = Node::constant(Tensor::zeros({C, C}));
    MixTaps taps;
    const RowMatrix out = spatial_mix(x, q, identity_shift, &taps).value().matrix();
    CHECK((taps.k.value().data().array() == 0.0).all());
    const RowMatrix X = x.value().matrix();
    const RowMatrix wkv = bi_wkv_quadratic(RowMatrix::Zero(T, C), X, q.decay.value().data(),
                                           q.bonus.value().data());
    const RowMatrix expect = (1.0 / (1.0 + (-X.array()).exp())) * wkv.array();
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("sigmoid gate bounds the output") {
    MixTaps taps;
    const RowMatrix out = spatial_mix(x, p, shift, &taps).value().matrix();
    const RowMatrix wkv = bi_wkv_linear(taps.k.value().matrix(), taps.v.value().matrix(),
                                        p.decay.value().data(), p.bonus.value().data());
    const auto Wo = p.w_o.value().matrix();
    for (Eigen::Index t = 0; t < out.rows(); ++t) {
      const double m = wkv.row(t).cwiseAbs().maxCoeff();
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        CHECK(std::abs(out(t, j)) <= m * Wo.col(j).cwiseAbs().sum() + 1e-12);
      }
    }
  }
}

TEST_CASE("channel_mix") {
  Rng rng(13);
  const std::size_t T = 5, C = 8, H = 16;
  ChannelMixParams p{random_param({C, C}, rng, -0.5, 0.5), random_param({C, H}, rng, -0.5, 0.5),
                     random_param({H, C}, rng, -0.5, 0.5), random_param({C}, rng, 0.2, 0.8)};
  const ShiftFn shift = [&](const Node& in) { return q_shift(in, p.mu); };

  SUBCASE("zero input gives zero output") {
    auto x = Node::constant(Tensor::zeros({T, C}));
    CHECK((channel_mix(x, p, shift).value().data().array() == 0.0).all());
  }
  SUBCASE("all-negative key pre-activations are killed by relu") {
    auto x = Node::constant(Tensor::filled({T, C}, 1.0));
    auto q = p;
    q.w_k = Node::constant(Tensor::filled({C, H}, -0.1));
    CHECK((channel_mix(x, q, shift).value().data().array() == 0.0).all());
  }
  SUBCASE("gradient check") {
    auto x = random_param({T, C}, rng);
    auto rep = grad_check({x, p.w_r, p.w_k, p.w_v, p.mu}, [&] { return sum(channel_mix(x, p, shift)); });
    CHECK(rep.max_rel_error < 1e-4);
  }
}
