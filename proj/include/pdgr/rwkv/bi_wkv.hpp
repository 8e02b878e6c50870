#pragma once

// Bidirectional WKV attention.
//
// For every channel c and token t of a length-T sequence:
//
//   wkv_t = ( sum_{i != t} e^{-(|t-i|-1)/T * w + k_i} v_i + e^{u + k_t} v_t )
//         / ( sum_{i != t} e^{-(|t-i|-1)/T * w + k_i}     + e^{u + k_t}     )
//
// Two evaluations are provided: a direct O(T^2) double loop used as the
// reference, and an O(T) pair of prefix scans. Both keep every exponential
// relative to a running maximum exponent, so no intermediate overflows.

#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "pdgr/numerics/errors.hpp"
#include "pdgr/numerics/tensor.hpp"

namespace pdgr {

/// Per-channel decay `w` and self bias `u` of a Bi-WKV layer.
template <typename Scalar>
struct BiWkvParamsT {
  VectorX<Scalar> w;
  VectorX<Scalar> u;
};
using BiWkvParams = BiWkvParamsT<double>;

namespace detail {

/// Sums of the form sum_j e^{x_j} * val_j[n], held as e^m * s[n].
template <typename Scalar, int N>
struct LogScaledSums {
  Scalar m = -std::numeric_limits<Scalar>::infinity();
  std::array<Scalar, N> s{};

  bool empty() const { return m == -std::numeric_limits<Scalar>::infinity(); }

  void decay(Scalar delta) {
    if (!empty()) m += delta;
  }

  void add(Scalar x, const std::array<Scalar, N>& vals) {
    using std::exp;
    if (x > m) {
      const Scalar scale = empty() ? Scalar(0) : exp(m - x);
      for (int n = 0; n < N; ++n) s[n] = s[n] * scale + vals[n];
      m = x;
    } else {
      const Scalar e = exp(x - m);
      for (int n = 0; n < N; ++n) s[n] += e * vals[n];
    }
  }

  /// s[n] * e^{m - ref}; zero for an empty accumulator.
  Scalar at(int n, Scalar ref) const {
    using std::exp;
    return empty() ? Scalar(0) : s[n] * exp(m - ref);
  }
};

template <typename DerivedK, typename DerivedV, typename DerivedW, typename DerivedU>
void check_bi_wkv_shapes(const Eigen::MatrixBase<DerivedK>& k, const Eigen::MatrixBase<DerivedV>& v,
                         const Eigen::MatrixBase<DerivedW>& w, const Eigen::MatrixBase<DerivedU>& u) {
  if (k.rows() != v.rows() || k.cols() != v.cols()) throw ShapeMismatch("bi_wkv: K and V differ");
  if (w.size() != k.cols() || u.size() != k.cols()) {
    throw ShapeMismatch("bi_wkv: w/u length must equal the channel count");
  }
  if (k.rows() < 1) throw ShapeMismatch("bi_wkv: empty sequence");
}

}  // namespace detail

/// Reference O(T^2 C) evaluation. When `scale` is given it receives, per
/// (t, c), the attention-weighted mean of |v_i|: the natural magnitude against
/// which the rounding error of a convex combination is measured.
template <typename DerivedK, typename DerivedV, typename DerivedW, typename DerivedU>
RowMatrixX<typename DerivedK::Scalar> bi_wkv_quadratic(
    const Eigen::MatrixBase<DerivedK>& k, const Eigen::MatrixBase<DerivedV>& v,
    const Eigen::MatrixBase<DerivedW>& w, const Eigen::MatrixBase<DerivedU>& u,
    RowMatrixX<typename DerivedK::Scalar>* scale = nullptr) {
  using Scalar = typename DerivedK::Scalar;
  using std::abs;
  using std::exp;
  detail::check_bi_wkv_shapes(k, v, w, u);
  const Eigen::Index T = k.rows();
  const Eigen::Index C = k.cols();
  const Scalar inv_t = Scalar(1) / Scalar(T);
  RowMatrixX<Scalar> out(T, C);
  if (scale) scale->resize(T, C);
  VectorX<Scalar> x(T);
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index i = 0; i < T; ++i) {
        x[i] = i == t ? u[c] + k(t, c)
                      : -Scalar(std::abs(t - i) - 1) * inv_t * w[c] + k(i, c);
      }
      const Scalar m = x.maxCoeff();
      Scalar den = 0, num = 0, mag = 0;
      for (Eigen::Index i = 0; i < T; ++i) {
        const Scalar e = exp(x[i] - m);
        den += e;
        num += e * v(i, c);
        mag += e * abs(v(i, c));
      }
      // The implicit attention weights are e/den: positive and summing to one.
      Scalar total = 0;
      for (Eigen::Index i = 0; i < T; ++i) {
        const Scalar wi = exp(x[i] - m) / den;
        if (!(wi >= Scalar(0))) throw DomainError("bi_wkv_quadratic: negative attention weight");
        total += wi;
      }
      if (abs(total - Scalar(1)) > Scalar(1e-12)) {
        throw DomainError("bi_wkv_quadratic: attention weights do not sum to one");
      }
      out(t, c) = num / den;
      if (scale) (*scale)(t, c) = mag / den;
    }
  }
  return out;
}

/// O(T C) evaluation by a forward and a backward prefix scan per channel.
/// When `log_den` is given it receives log of the (unnormalised) denominator
/// per (t, c), which the backward pass needs.
template <typename DerivedK, typename DerivedV, typename DerivedW, typename DerivedU>
RowMatrixX<typename DerivedK::Scalar> bi_wkv_linear(
    const Eigen::MatrixBase<DerivedK>& k, const Eigen::MatrixBase<DerivedV>& v,
    const Eigen::MatrixBase<DerivedW>& w, const Eigen::MatrixBase<DerivedU>& u,
    RowMatrixX<typename DerivedK::Scalar>* log_den = nullptr) {
  using Scalar = typename DerivedK::Scalar;
  using std::exp;
  using std::log;
  using std::max;
  using Acc = detail::LogScaledSums<Scalar, 2>;
  detail::check_bi_wkv_shapes(k, v, w, u);
  const Eigen::Index T = k.rows();
  const Eigen::Index C = k.cols();
  RowMatrixX<Scalar> out(T, C);
  if (log_den) log_den->resize(T, C);

  std::vector<Acc> fwd(static_cast<std::size_t>(T));
  for (Eigen::Index c = 0; c < C; ++c) {
    const Scalar step = -w[c] / Scalar(T);
    // fwd[t] covers i < t: sum e^{k_i - (t-1-i) w / T} * {v_i, 1}.
    Acc acc;
    for (Eigen::Index t = 0; t < T; ++t) {
      fwd[static_cast<std::size_t>(t)] = acc;
      acc.decay(step);
      acc.add(k(t, c), {v(t, c), Scalar(1)});
    }
    // Mirrored scan for i > t, combined with the self term on the fly.
    acc = Acc{};
    for (Eigen::Index t = T; t-- > 0;) {
      const Acc& f = fwd[static_cast<std::size_t>(t)];
      const Scalar self = u[c] + k(t, c);
      Scalar ref = self;
      if (!f.empty()) ref = max(ref, f.m);
      if (!acc.empty()) ref = max(ref, acc.m);
      const Scalar es = exp(self - ref);
      const Scalar num = f.at(0, ref) + acc.at(0, ref) + es * v(t, c);
      const Scalar den = f.at(1, ref) + acc.at(1, ref) + es;
      out(t, c) = num / den;
      if (log_den) (*log_den)(t, c) = ref + log(den);
      acc.decay(step);
      acc.add(k(t, c), {v(t, c), Scalar(1)});
    }
  }
  return out;
}

template <typename DerivedK, typename DerivedV, typename Scalar>
RowMatrixX<Scalar> bi_wkv_quadratic(const Eigen::MatrixBase<DerivedK>& k,
                                    const Eigen::MatrixBase<DerivedV>& v,
                                    const BiWkvParamsT<Scalar>& p) {
  return bi_wkv_quadratic(k, v, p.w, p.u);
}

template <typename DerivedK, typename DerivedV, typename Scalar>
RowMatrixX<Scalar> bi_wkv_linear(const Eigen::MatrixBase<DerivedK>& k,
                                 const Eigen::MatrixBase<DerivedV>& v,
                                 const BiWkvParamsT<Scalar>& p) {
  return bi_wkv_linear(k, v, p.w, p.u);
}

/// Gradients of a scalar loss with respect to the Bi-WKV inputs.
template <typename Scalar>
struct BiWkvGrads {
  RowMatrixX<Scalar> k;
  RowMatrixX<Scalar> v;
  VectorX<Scalar> w;
  VectorX<Scalar> u;
};

/// Linear-time reverse pass. `y` and `log_den` come from `bi_wkv_linear`,
/// `g` is dLoss/dwkv.
///
/// With a_ti the unnormalised weight of token i at position t, D_t the
/// denominator, c_t = g_t / D_t:
///   dv_i = sum_t c_t a_ti
///   dk_i = sum_t c_t a_ti (v_i - y_t)
///   du   = sum_t c_t a_tt (v_t - y_t)
///   dw   = -1/T sum_t c_t sum_{i != t} (|t-i|-1) a_ti (v_i - y_t)
/// Every sum is evaluated with decayed prefix scans in both directions.
template <typename Scalar>
BiWkvGrads<Scalar> bi_wkv_backward(const Eigen::Ref<const RowMatrixX<Scalar>>& k,
                                   const Eigen::Ref<const RowMatrixX<Scalar>>& v,
                                   const Eigen::Ref<const VectorX<Scalar>>& w,
                                   const Eigen::Ref<const VectorX<Scalar>>& u,
                                   const Eigen::Ref<const RowMatrixX<Scalar>>& y,
                                   const Eigen::Ref<const RowMatrixX<Scalar>>& log_den,
                                   const Eigen::Ref<const RowMatrixX<Scalar>>& g) {
  using std::exp;
  const Eigen::Index T = k.rows();
  const Eigen::Index C = k.cols();
  BiWkvGrads<Scalar> out{RowMatrixX<Scalar>::Zero(T, C), RowMatrixX<Scalar>::Zero(T, C),
                         VectorX<Scalar>::Zero(C), VectorX<Scalar>::Zero(C)};
  // Distance-weighted scan state: {sum a v, sum a, sum d a v, sum d a}.
  using DistAcc = detail::LogScaledSums<Scalar, 4>;
  // Reverse scan state: {sum c_t e^{..}, sum c_t y_t e^{..}} with exponent -logD_t.
  using GradAcc = detail::LogScaledSums<Scalar, 2>;
  std::vector<DistAcc> fwd_d(static_cast<std::size_t>(T));
  std::vector<GradAcc> fwd_g(static_cast<std::size_t>(T));

  for (Eigen::Index c = 0; c < C; ++c) {
    const Scalar step = -w[c] / Scalar(T);
    DistAcc dacc;
    GradAcc gacc;
    for (Eigen::Index t = 0; t < T; ++t) {
      fwd_d[static_cast<std::size_t>(t)] = dacc;
      fwd_g[static_cast<std::size_t>(t)] = gacc;
      // Every earlier term moves one step further away.
      dacc.s[2] += dacc.s[0];
      dacc.s[3] += dacc.s[1];
      dacc.decay(step);
      dacc.add(k(t, c), {v(t, c), Scalar(1), Scalar(0), Scalar(0)});
      gacc.decay(step);
      gacc.add(-log_den(t, c), {g(t, c), g(t, c) * y(t, c)});
    }

    DistAcc dbwd;
    GradAcc gbwd;
    Scalar dw = 0, du = 0;
    for (Eigen::Index t = T; t-- > 0;) {
      const auto ts = static_cast<std::size_t>(t);
      const Scalar ld = log_den(t, c);
      const Scalar yt = y(t, c);
      const Scalar gt = g(t, c);

      // Distance-weighted cross terms, normalised by D_t.
      const DistAcc& fd = fwd_d[ts];
      const Scalar nd = fd.at(2, ld) + dbwd.at(2, ld);
      const Scalar dd = fd.at(3, ld) + dbwd.at(3, ld);
      dw += gt * (nd - yt * dd);

      const Scalar self_w = exp(u[c] + k(t, c) - ld);
      du += gt * self_w * (v(t, c) - yt);

      // sum_{t' != t} c_{t'} a_{t' t} / e^{k_t}, both directions.
      const GradAcc& fg = fwd_g[ts];
      const Scalar kt = k(t, c);
      const Scalar s0 = fg.at(0, -kt) + gbwd.at(0, -kt);
      const Scalar s1 = fg.at(1, -kt) + gbwd.at(1, -kt);
      const Scalar ct_self = gt * self_w;
      const Scalar dv = s0 + ct_self;
      out.v(t, c) = dv;
      out.k(t, c) = v(t, c) * dv - (s1 + ct_self * yt);

      dbwd.s[2] += dbwd.s[0];
      dbwd.s[3] += dbwd.s[1];
      dbwd.decay(step);
      dbwd.add(k(t, c), {v(t, c), Scalar(1), Scalar(0), Scalar(0)});
      gbwd.decay(step);
      gbwd.add(-ld, {gt, gt * yt});
    }
    out.w[c] = -dw / Scalar(T);
    out.u[c] = du;
  }
  return out;
}

/// Analytic FLOP count of one `bi_wkv_linear` call (multiply-add counts as 2,
/// exp/log/div count as 1 each). Exactly linear in T.
inline double bi_wkv_flops(std::size_t T, std::size_t C) {
  // Per (t, c): two scans each with decay add, exp, 2 multiply-adds  -> 2 * 6
  // combine: 3 exps, 2 * 3 multiply-adds for num/den, 1 div         -> 10
  return 22.0 * static_cast<double>(T) * static_cast<double>(C);
}

}  // namespace pdgr
