#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "pdgr/numerics/autodiff.hpp"

namespace pdgr {

/// Mean and population covariance of one domain's pooled key rows.
struct KeyStats {
  int domain_id = 0;
  Node mu;     // [C]
  Node sigma;  // C x C
  std::size_t count = 0;
};

struct KeyMoments {
  Node mu;
  Node sigma;
};

/// mu = column mean, sigma = (K - mu)^T (K - mu) / M. Needs M >= 2 rows.
KeyMoments key_stats(const Node& keys);
KeyStats key_stats(int domain_id, const Node& keys);

/// Mean over unordered domain pairs of ||mu_i - mu_j||^2 + ||Sigma_i - Sigma_j||_F^2.
/// Zero for fewer than two domains.
Node cd_kda_loss(std::span<const KeyStats> stats);

/// Batch mean of -log softmax(logits)[label]; logits are B x K.
Node cross_entropy(const Node& logits, std::span<const int> labels);

/// lambda1 * cls + lambda2 * kda.
Node total_loss(const Node& cls, const Node& kda, double lambda1, double lambda2);

enum class AlignMode { none, k_only, v_only, k_and_v };

std::string_view to_string(AlignMode mode);
AlignMode parse_align_mode(std::string_view text);

/// Gathers key/value activations of the spatial-mix layers during one
/// training step, grouped by layer and domain. Cleared every step.
class KeyCollector {
 public:
  KeyCollector() = default;
  /// Restrict collection to the listed layer indices.
  explicit KeyCollector(std::set<std::size_t> layers) : filter_(std::move(layers)) {}

  void clear() { layers_.clear(); }
  bool accepts(std::size_t layer) const { return !filter_ || filter_->count(layer) > 0; }
  void deposit(std::size_t layer, int domain_id, const Node& keys, const Node& values);

  struct Buffers {
    std::vector<Node> keys;
    std::vector<Node> values;
  };
  /// layer -> domain -> buffered rows.
  const std::map<std::size_t, std::map<int, Buffers>>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }

 private:
  std::optional<std::set<std::size_t>> filter_;
  std::map<std::size_t, std::map<int, Buffers>> layers_;
};

/// Per-layer CD-KDA on the selected activations, averaged over layers.
Node alignment_target(AlignMode mode, const KeyCollector& collector);

}  // namespace pdgr
