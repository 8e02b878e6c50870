#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdgr/agt/agt_shift.hpp"
#include "pdgr/data/point_cloud.hpp"
#include "pdgr/dg/losses.hpp"
#include "pdgr/numerics/checkpoint.hpp"
#include "pdgr/rwkv/layers.hpp"

namespace pdgr {

enum class ShiftMode { qshift, agt, knn_rand_one, knn_avg, knn_wavg };

std::string_view to_string(ShiftMode mode);
ShiftMode parse_shift_mode(std::string_view text);

struct ModelConfig {
  std::vector<std::size_t> stage_blocks{1, 1, 2, 2};
  std::vector<std::size_t> stage_widths{32, 64, 128, 128};
  std::vector<std::size_t> stage_points{512, 256, 128, 64};
  std::size_t num_classes = 5;
  ShiftMode shift_mode = ShiftMode::agt;
  AlignMode align_mode = AlignMode::k_only;
  AgtConfig agt{};
  std::size_t knn_k = 8;
  std::size_t hidden_ratio = 2;  // channel-mix hidden width = ratio * C
  bool shift_channel_mix = true;
  // Alignment covers the spatial mixes of stages >= this index; 0 aligns every layer.
  std::size_t align_from_stage = 0;

  /// Spatial-mix layer indices (in forward order) that alignment covers.
  std::set<std::size_t> aligned_layers() const;

  /// Throws InvalidConfig (or ChannelsNotDivisibleBy4 for a width).
  void validate() const;

  static ModelConfig base();
  static ModelConfig standard();
  static ModelConfig large();
};

struct EmbedParams {
  Node w1, b1;  // 3 x C0, [C0]
  Node w2, b2;  // C0 x C0, [C0]
};

struct BlockParams {
  Node ln1_gain, ln1_bias;
  SpatialMixParams spatial;
  Node ln2_gain, ln2_bias;
  ChannelMixParams channel;
};

struct StageParams {
  Node down_w, down_b;  // projection into the stage width
  std::vector<BlockParams> blocks;
};

/// Learnable parameters with hierarchical names (stage.block.sublayer.tensor).
/// Copies share parameter storage; use clone() for an independent copy.
struct ModelState {
  ModelConfig config;
  std::uint64_t seed = 0;
  EmbedParams embed;
  std::vector<StageParams> stages;
  Node norm_gain, norm_bias;
  Node head_w, head_b;
  std::vector<std::pair<std::string, Node>> named;  // insertion order

  std::vector<Node> parameters() const;
  std::size_t parameter_count() const;
  NamedTensors to_named_tensors() const;
  /// Copies values in; names, order and shapes must match exactly.
  void load_named_tensors(const NamedTensors& tensors);
  ModelState clone() const;
  /// Keeps every token-shift mix coefficient inside [0, 1].
  void clamp_mix();
};

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Closed-form parameter count of a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

/// 30-bit Morton code of coordinates in [-1, 1]^3 (10 bits per axis).
std::uint32_t morton_code(double x, double y, double z);

/// Stable sort by Morton code; ties keep input order. Throws CoordOutOfRange.
std::vector<std::size_t> morton_order(const Eigen::Ref<const Points>& coords);

/// Shared per-point map relu(X W1 + b1) W2 + b2.
Node embed(const Eigen::Ref<const Points>& coords, const EmbedParams& p);

/// Greedy farthest-point sampling from index 0; indices in selection order.
std::vector<std::size_t> farthest_point_sample(const Eigen::Ref<const Points>& coords, std::size_t m);

struct Partition {
  std::vector<std::size_t> anchors;               // ascending, so token order is kept
  std::vector<std::vector<std::size_t>> members;  // per anchor, ascending
};

/// FPS anchors plus nearest-anchor assignment of all points (ties to the
/// earlier anchor). Throws MTooLarge unless 1 <= m <= N.
Partition fps_partition(const Eigen::Ref<const Points>& coords, std::size_t m);

/// Row r of the result is the elementwise max of F over members[r]; the
/// gradient goes to the lowest-index maximiser.
Node segment_max(const Node& features, const std::vector<std::vector<std::size_t>>& members);

struct Downsampled {
  Points coords;
  Node features;
  Partition partition;
};

/// FPS to m anchors, max-pool each nearest-anchor group, then project by (w, b).
Downsampled downsample(const Eigen::Ref<const Points>& coords, const Node& features, std::size_t m,
                       const Node& w, const Node& b);

struct ForwardResult {
  Node logits;  // 1 x K
  Node pooled;  // [2 C_last], input of the head
};

/// Full classifier on one cloud. With a collector, every spatial mix deposits
/// its k and v rows tagged with the cloud's domain. `rng` drives the random
/// KNN replacement only; when null a stream keyed by the cloud id is used.
ForwardResult forward(const PointCloud& cloud, const ModelState& state,
                      KeyCollector* collector = nullptr, Rng* rng = nullptr);

/// B x K logits for a batch, one forward per cloud.
Node forward_batch(std::span<const PointCloud> clouds, const ModelState& state,
                   KeyCollector* collector = nullptr, Rng* rng = nullptr);

/// Index of the largest entry; lowest index on ties.
std::size_t argmax(std::span<const double> values);

std::size_t predict(const PointCloud& cloud, const ModelState& state);

}  // namespace pdgr
