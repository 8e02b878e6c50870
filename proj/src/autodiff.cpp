#include "pdgr/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

namespace {

std::shared_ptr<detail::NodeData> new_data(Tensor value, bool requires_grad) {
  auto d = std::make_shared<detail::NodeData>();
  d->grad = Tensor::zeros(value.shape());
  d->value = std::move(value);
  d->requires_grad = requires_grad;
  return d;
}

// Flat source indices of `a` and `b` for every element of the broadcast result.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

std::vector<std::size_t> source_indices(const Shape& src, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - src.size();
  // Stride of each output axis inside `src` (0 where broadcast).
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t k = src.size(); k-- > 0;) {
    stride[k + offset] = src[k] == 1 ? 0 : s;
    s *= src[k];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = flat;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      flat += stride[k];
      if (counter[k] < out[k]) break;
      flat -= stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return idx;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  p.same = (a == b);
  if (!p.same) {
    p.a_index = source_indices(a, p.out);
    p.b_index = source_indices(b, p.out);
  }
  return p;
}

Node binary(Elementwise op, const Node& a, const Node& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  const Vector& av = a.value().data();
  const Vector& bv = b.value().data();
  const auto n = static_cast<Eigen::Index>(shape_numel(plan->out));

  // Materialise broadcast operands once; backward reuses them.
  Vector ab, bb;
  if (plan->same) {
    ab = av;
    bb = bv;
  } else {
    ab.resize(n);
    bb.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      ab[i] = av[static_cast<Eigen::Index>(plan->a_index[i])];
      bb[i] = bv[static_cast<Eigen::Index>(plan->b_index[i])];
    }
  }

  Vector out(n);
  switch (op) {
    case Elementwise::add: out = ab + bb; break;
    case Elementwise::sub: out = ab - bb; break;
    case Elementwise::mul: out = ab.cwiseProduct(bb); break;
    case Elementwise::div:
      if ((bb.array() == 0.0).any()) throw DomainError("division by zero");
      out = ab.cwiseQuotient(bb);
      break;
    default: throw DomainError("not a binary operation");
  }
  if (op == Elementwise::add || op == Elementwise::sub) {
    ab = Vector();
    bb = Vector();
  }

  auto scatter = [plan](detail::NodeData& dst, const Vector& g, bool is_a) {
    if (!dst.requires_grad) return;
    if (plan->same) {
      dst.grad.data() += g;
      return;
    }
    const auto& index = is_a ? plan->a_index : plan->b_index;
    Vector& dg = dst.grad.data();
    for (Eigen::Index i = 0; i < g.size(); ++i) dg[static_cast<Eigen::Index>(index[i])] += g[i];
  };

  return Node::make(Tensor(plan->out, std::move(out)), {a, b},
                    [op, scatter, ab = std::move(ab), bb = std::move(bb)](detail::NodeData& self) {
                      const Vector& g = self.grad.data();
                      switch (op) {
                        case Elementwise::add:
                          scatter(self.parent(0), g, true);
                          scatter(self.parent(1), g, false);
                          break;
                        case Elementwise::sub:
                          scatter(self.parent(0), g, true);
                          scatter(self.parent(1), -g, false);
                          break;
                        case Elementwise::mul:
                          scatter(self.parent(0), g.cwiseProduct(bb), true);
                          scatter(self.parent(1), g.cwiseProduct(ab), false);
                          break;
                        case Elementwise::div:
                          scatter(self.parent(0), g.cwiseQuotient(bb), true);
                          scatter(self.parent(1),
                                  (-g.array() * ab.array() / bb.array().square()).matrix(),
                                  false);
                          break;
                        default: break;
                      }
                    });
}

Node unary(Elementwise op, const Node& a) {
  const Vector& x = a.value().data();
  Vector y;
  switch (op) {
    case Elementwise::exp: y = x.array().exp().matrix(); break;
    case Elementwise::log:
      if ((x.array() <= 0.0).any()) throw DomainError("log of non-positive input");
      y = x.array().log().matrix();
      break;
    case Elementwise::relu: y = x.cwiseMax(0.0); break;
    case Elementwise::sigmoid: y = (1.0 / (1.0 + (-x.array()).exp())).matrix(); break;
    case Elementwise::square: y = x.cwiseAbs2(); break;
    default: throw DomainError("not a unary operation");
  }
  Vector yy = y;
  return Node::make(Tensor(a.shape(), std::move(y)), {a},
                    [op, yy = std::move(yy)](detail::NodeData& self) {
                      auto& p = self.parent(0);
                      const Vector& g = self.grad.data();
                      const Vector& x = p.value.data();
                      switch (op) {
                        case Elementwise::exp: accumulate_grad(p, g.cwiseProduct(yy)); break;
                        case Elementwise::log: accumulate_grad(p, g.cwiseQuotient(x)); break;
                        case Elementwise::relu:
                          accumulate_grad(p, (x.array() > 0.0).select(g, 0.0));
                          break;
                        case Elementwise::sigmoid:
                          accumulate_grad(p, (g.array() * yy.array() * (1.0 - yy.array())).matrix());
                          break;
                        case Elementwise::square: accumulate_grad(p, 2.0 * g.cwiseProduct(x)); break;
                        default: break;
                      }
                    });
}

}  // namespace

Node Node::parameter(Tensor value) {
  Node n;
  n.impl_ = new_data(std::move(value), true);
  return n;
}

Node Node::constant(Tensor value) {
  Node n;
  n.impl_ = new_data(std::move(value), false);
  return n;
}

Node Node::make(Tensor value, std::vector<Node> parents, detail::BackwardFn backward) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  Node n;
  n.impl_ = new_data(std::move(value), rg);
  if (rg) {
    n.impl_->parents.reserve(parents.size());
    for (auto& p : parents) n.impl_->parents.push_back(std::move(p.impl_));
    n.impl_->backward = std::move(backward);
  }
  return n;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[k] = da == 1 ? db : da;
  }
  return out;
}

Node elementwise(Elementwise op, const Node& a, const Node* b) {
  switch (op) {
    case Elementwise::add:
    case Elementwise::sub:
    case Elementwise::mul:
    case Elementwise::div:
      if (b == nullptr) throw ShapeMismatch("binary operation needs two operands");
      return binary(op, a, *b);
    default: return unary(op, a);
  }
}

Node add(const Node& a, const Node& b) { return binary(Elementwise::add, a, b); }
Node sub(const Node& a, const Node& b) { return binary(Elementwise::sub, a, b); }
Node mul(const Node& a, const Node& b) { return binary(Elementwise::mul, a, b); }
Node div(const Node& a, const Node& b) { return binary(Elementwise::div, a, b); }
Node exp(const Node& a) { return unary(Elementwise::exp, a); }
Node log(const Node& a) { return unary(Elementwise::log, a); }
Node relu(const Node& a) { return unary(Elementwise::relu, a); }
Node sigmoid(const Node& a) { return unary(Elementwise::sigmoid, a); }
Node square(const Node& a) { return unary(Elementwise::square, a); }

Node scale(const Node& a, double factor) {
  return Node::make(Tensor(a.shape(), a.value().data() * factor), {a},
                    [factor](detail::NodeData& self) {
                      accumulate_grad(self.parent(0), self.grad.data() * factor);
                    });
}

Node matmul(const Node& a, const Node& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) {
    throw ShapeMismatch("matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
  }
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeMismatch("matmul inner dimensions differ: " + shape_str(a.shape()) + " * " +
                        shape_str(b.shape()));
  }
  RowMatrix c = a.value().matrix() * b.value().matrix();
  return Node::make(Tensor::from_matrix(c), {a, b}, [](detail::NodeData& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    const auto g = self.grad.matrix();
    if (pa.requires_grad) pa.grad.matrix().noalias() += g * pb.value.matrix().transpose();
    if (pb.requires_grad) pb.grad.matrix().noalias() += pa.value.matrix().transpose() * g;
  });
}

Node transpose(const Node& a) {
  if (a.value().rank() != 2) throw ShapeMismatch("transpose needs a rank-2 operand");
  RowMatrix t = a.value().matrix().transpose();
  return Node::make(Tensor::from_matrix(t), {a}, [](detail::NodeData& self) {
    auto& p = self.parent(0);
    if (p.requires_grad) p.grad.matrix() += self.grad.matrix().transpose();
  });
}

Node reshape(const Node& a, Shape shape) {
  return Node::make(a.value().reshaped(std::move(shape)), {a}, [](detail::NodeData& self) {
    accumulate_grad(self.parent(0), self.grad.data());
  });
}

Node concat(std::span<const Node> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw InvalidAxis("concat axis " + std::to_string(axis));
  Shape out = first;
  out[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k) ok = (k == axis) || s[k] == first[k];
    if (!ok) throw ShapeMismatch("concat of " + shape_str(first) + " and " + shape_str(s));
    out[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= first[k];
  for (std::size_t k = axis + 1; k < first.size(); ++k) inner *= first[k];

  Tensor value(out);
  std::vector<std::size_t> widths;
  std::size_t row = out[axis] * inner;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      value.data().segment(static_cast<Eigen::Index>(o * row + off), static_cast<Eigen::Index>(w)) =
          p.value().data().segment(static_cast<Eigen::Index>(o * w), static_cast<Eigen::Index>(w));
    }
    widths.push_back(w);
    off += w;
  }
  std::vector<Node> parents(parts.begin(), parts.end());
  return Node::make(std::move(value), std::move(parents),
                    [widths, outer, row](detail::NodeData& self) {
                      std::size_t off = 0;
                      for (std::size_t i = 0; i < widths.size(); ++i) {
                        auto& p = self.parent(i);
                        const std::size_t w = widths[i];
                        if (p.requires_grad) {
                          for (std::size_t o = 0; o < outer; ++o) {
                            p.grad.data().segment(static_cast<Eigen::Index>(o * w),
                                                  static_cast<Eigen::Index>(w)) +=
                                self.grad.data().segment(static_cast<Eigen::Index>(o * row + off),
                                                         static_cast<Eigen::Index>(w));
                          }
                        }
                        off += w;
                      }
                    });
}

Node reduce(Reduce op, const Node& a, std::optional<std::size_t> axis) {
  const Shape& s = a.shape();
  std::size_t outer = 1, n = a.value().numel(), inner = 1;
  Shape out;
  if (axis) {
    if (*axis >= s.size()) {
      throw InvalidAxis("axis " + std::to_string(*axis) + " for shape " + shape_str(s));
    }
    n = s[*axis];
    for (std::size_t k = 0; k < *axis; ++k) outer *= s[k];
    for (std::size_t k = *axis + 1; k < s.size(); ++k) inner *= s[k];
    out = s;
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(*axis));
  }
  if (op == Reduce::max && n == 0) throw InvalidAxis("max over an empty axis");

  const Vector& x = a.value().data();
  Tensor value(out);
  std::vector<std::size_t> argmax;
  if (op == Reduce::max) argmax.resize(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double acc = 0.0;
      if (op == Reduce::max) {
        std::size_t best = base;
        for (std::size_t j = 1; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          if (x[static_cast<Eigen::Index>(idx)] > x[static_cast<Eigen::Index>(best)]) best = idx;
        }
        argmax[o * inner + i] = best;
        acc = x[static_cast<Eigen::Index>(best)];
      } else {
        for (std::size_t j = 0; j < n; ++j) acc += x[static_cast<Eigen::Index>(base + j * inner)];
        if (op == Reduce::mean) acc /= static_cast<double>(n);
      }
      value[o * inner + i] = acc;
    }
  }
  return Node::make(std::move(value), {a},
                    [op, outer, n, inner, argmax = std::move(argmax)](detail::NodeData& self) {
                      auto& p = self.parent(0);
                      if (!p.requires_grad) return;
                      Vector& dg = p.grad.data();
                      const Vector& g = self.grad.data();
                      const double f = op == Reduce::mean ? 1.0 / static_cast<double>(n) : 1.0;
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t i = 0; i < inner; ++i) {
                          const double gi = g[static_cast<Eigen::Index>(o * inner + i)];
                          if (op == Reduce::max) {
                            dg[static_cast<Eigen::Index>(argmax[o * inner + i])] += gi;
                            continue;
                          }
                          const std::size_t base = o * n * inner + i;
                          for (std::size_t j = 0; j < n; ++j) {
                            dg[static_cast<Eigen::Index>(base + j * inner)] += f * gi;
                          }
                        }
                      }
                    });
}

void backward(const Node& root) {
  if (root.value().numel() != 1) {
    throw NonScalarRoot("backward from a node of shape " + shape_str(root.shape()));
  }
  auto* r = root.data();
  if (!r->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::NodeData*> order;
  std::unordered_set<detail::NodeData*> seen;
  std::vector<std::pair<detail::NodeData*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::NodeData* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  r->grad.data().array() += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace pdgr
