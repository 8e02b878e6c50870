#include "pdgr/dg/losses.hpp"

#include <cmath>
#include <string>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

KeyMoments key_stats(const Node& keys) {
  if (keys.value().rank() != 2) throw ShapeMismatch("key_stats expects M x C keys");
  const auto m = keys.value().dim(0);
  if (m < 2) throw TooFewRows("key_stats needs at least two rows, got " + std::to_string(m));
  Node mu = mean(keys, 0);
  Node centered = keys - mu;
  Node sigma = scale(matmul(transpose(centered), centered), 1.0 / static_cast<double>(m));
  return {mu, sigma};
}

KeyStats key_stats(int domain_id, const Node& keys) {
  auto [mu, sigma] = key_stats(keys);
  return {domain_id, mu, sigma, keys.value().dim(0)};
}

Node cd_kda_loss(std::span<const KeyStats> stats) {
  const std::size_t n = stats.size();
  if (n < 2) return Node::constant(Tensor::scalar(0.0));
  std::vector<Node> terms;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      terms.push_back(sum(square(stats[i].mu - stats[j].mu)) +
                      sum(square(stats[i].sigma - stats[j].sigma)));
    }
  }
  Node total = terms[0];
  for (std::size_t p = 1; p < terms.size(); ++p) total = total + terms[p];
  return scale(total, 1.0 / static_cast<double>(terms.size()));
}

Node cross_entropy(const Node& logits, std::span<const int> labels) {
  if (logits.value().rank() != 2) throw ShapeMismatch("cross_entropy expects B x K logits");
  const auto Z = logits.value().matrix();
  const Eigen::Index B = Z.rows();
  const Eigen::Index K = Z.cols();
  if (static_cast<std::size_t>(B) != labels.size()) {
    throw ShapeMismatch("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(B) + " rows");
  }
  RowMatrix prob(B, K);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K) throw LabelOutOfRange("label " + std::to_string(y));
    const double m = Z.row(b).maxCoeff();
    const Eigen::ArrayXd e = (Z.row(b).array() - m).exp().transpose();
    const double s = e.sum();
    prob.row(b) = (e / s).matrix().transpose();
    loss += std::log(s) + m - Z(b, y);
  }
  loss /= static_cast<double>(B);
  std::vector<int> ys(labels.begin(), labels.end());
  return Node::make(Tensor::scalar(loss), {logits},
                    [prob = std::move(prob), ys = std::move(ys)](detail::NodeData& self) {
                      auto& p = self.parent(0);
                      if (!p.requires_grad) return;
                      RowMatrix d = prob;
                      for (std::size_t b = 0; b < ys.size(); ++b) d(static_cast<Eigen::Index>(b), ys[b]) -= 1.0;
                      p.grad.matrix() += d * (self.grad.item() / static_cast<double>(ys.size()));
                    });
}

Node total_loss(const Node& cls, const Node& kda, double lambda1, double lambda2) {
  if (!std::isfinite(cls.item()) || !std::isfinite(kda.item())) {
    throw DomainError("total_loss of non-finite components");
  }
  return scale(cls, lambda1) + scale(kda, lambda2);
}

std::string_view to_string(AlignMode mode) {
  switch (mode) {
    case AlignMode::none: return "none";
    case AlignMode::k_only: return "k_only";
    case AlignMode::v_only: return "v_only";
    case AlignMode::k_and_v: return "k_and_v";
  }
  return "none";
}

AlignMode parse_align_mode(std::string_view text) {
  if (text == "none") return AlignMode::none;
  if (text == "k_only" || text == "only-k") return AlignMode::k_only;
  if (text == "v_only" || text == "only-v") return AlignMode::v_only;
  if (text == "k_and_v" || text == "k-and-v") return AlignMode::k_and_v;
  throw InvalidConfig("unknown align mode '" + std::string(text) + "'");
}

void KeyCollector::deposit(std::size_t layer, int domain_id, const Node& keys, const Node& values) {
  if (!accepts(layer)) return;
  auto& buf = layers_[layer][domain_id];
  buf.keys.push_back(keys);
  buf.values.push_back(values);
}

namespace {

Node layer_alignment(const std::map<int, KeyCollector::Buffers>& domains, bool use_values) {
  std::vector<KeyStats> stats;
  for (const auto& [domain, buf] : domains) {
    const auto& rows = use_values ? buf.values : buf.keys;
    if (rows.empty()) continue;
    const Node pooled = rows.size() == 1 ? rows[0] : concat(rows, 0);
    stats.push_back(key_stats(domain, pooled));
  }
  return cd_kda_loss(stats);
}

}  // namespace

Node alignment_target(AlignMode mode, const KeyCollector& collector) {
  if (mode == AlignMode::none || collector.empty()) return Node::constant(Tensor::scalar(0.0));
  std::vector<Node> per_layer;
  for (const auto& [layer, domains] : collector.layers()) {
    if (mode == AlignMode::k_only || mode == AlignMode::k_and_v) {
      per_layer.push_back(layer_alignment(domains, false));
    }
    if (mode == AlignMode::v_only || mode == AlignMode::k_and_v) {
      per_layer.push_back(layer_alignment(domains, true));
    }
  }
  // k_and_v sums the key and value losses, each averaged over layers.
  const double layers = static_cast<double>(collector.layers().size());
  Node total = per_layer[0];
  for (std::size_t i = 1; i < per_layer.size(); ++i) total = total + per_layer[i];
  return scale(total, 1.0 / layers);
}

}  // namespace pdgr
