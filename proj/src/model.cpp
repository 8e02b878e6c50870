#include "pdgr/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

std::string_view to_string(ShiftMode mode) {
  switch (mode) {
    case ShiftMode::qshift: return "qshift";
    case ShiftMode::agt: return "agt";
    case ShiftMode::knn_rand_one: return "knn_randone";
    case ShiftMode::knn_avg: return "knn_avg";
    case ShiftMode::knn_wavg: return "knn_wavg";
  }
  return "?";
}

ShiftMode parse_shift_mode(std::string_view text) {
  for (auto m : {ShiftMode::qshift, ShiftMode::agt, ShiftMode::knn_rand_one, ShiftMode::knn_avg,
                 ShiftMode::knn_wavg}) {
    if (text == to_string(m)) return m;
  }
  if (text == "KNN-RandOne") return ShiftMode::knn_rand_one;
  if (text == "KNN-Avg") return ShiftMode::knn_avg;
  if (text == "KNN-WAvg") return ShiftMode::knn_wavg;
  if (text == "AGT-Shift") return ShiftMode::agt;
  if (text == "Q-Shift") return ShiftMode::qshift;
  throw InvalidConfig("unknown shift mode '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  const std::size_t S = stage_blocks.size();
  if (S == 0 || stage_widths.size() != S || stage_points.size() != S) {
    throw InvalidConfig("stage lists must be non-empty and of equal length");
  }
  for (std::size_t s = 0; s < S; ++s) {
    if (stage_blocks[s] == 0) throw InvalidConfig("every stage needs at least one block");
    if (stage_widths[s] == 0 || stage_points[s] == 0) throw InvalidConfig("zero width or token count");
    if (stage_widths[s] % 4 != 0) {
      throw ChannelsNotDivisibleBy4("stage " + std::to_string(s) + " width " +
                                    std::to_string(stage_widths[s]));
    }
    if (s > 0 && stage_widths[s] < stage_widths[s - 1]) throw InvalidConfig("widths must be nondecreasing");
    if (s > 0 && stage_points[s] > stage_points[s - 1]) throw InvalidConfig("points must be nonincreasing");
    agt.validate(stage_widths[s]);
  }
  if (num_classes < 2) throw InvalidConfig("need at least two classes");
  if (hidden_ratio == 0) throw InvalidConfig("hidden_ratio must be positive");
  if (knn_k == 0) throw InvalidConfig("knn_k must be positive");
  if (align_from_stage >= S) throw InvalidConfig("align_from_stage must name an existing stage");
}

std::set<std::size_t> ModelConfig::aligned_layers() const {
  std::set<std::size_t> out;
  std::size_t layer = 0;
  for (std::size_t s = 0; s < stage_blocks.size(); ++s) {
    for (std::size_t b = 0; b < stage_blocks[s]; ++b, ++layer) {
      if (s >= align_from_stage) out.insert(layer);
    }
  }
  return out;
}

ModelConfig ModelConfig::standard() { return ModelConfig{}; }

ModelConfig ModelConfig::base() {
  ModelConfig c;
  for (auto& b : c.stage_blocks) b = std::max<std::size_t>(1, b / 2);
  return c;
}

ModelConfig ModelConfig::large() {
  ModelConfig c;
  c.stage_widths = {48, 96, 192, 192};
  c.stage_points = {1024, 512, 256, 128};
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

class Builder {
 public:
  Builder(ModelState& st, Rng& rng) : st_(st), rng_(rng) {}

  Node add(const std::string& name, Tensor value) {
    Node n = Node::parameter(std::move(value));
    st_.named.emplace_back(name, n);
    return n;
  }
  Node dense(const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
    Tensor t({in, out});
    const double sd = gain / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng_.normal(0.0, sd);
    return add(name, std::move(t));
  }
  Node fill(const std::string& name, std::size_t n, double v) { return add(name, Tensor::filled({n}, v)); }

 private:
  ModelState& st_;
  Rng& rng_;
};

}  // namespace

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState st;
  st.config = cfg;
  st.seed = seed;
  Rng rng(mix_seed(seed, hash_id("init")));
  Builder b(st, rng);

  const std::size_t c0 = cfg.stage_widths.front();
  st.embed.w1 = b.dense("embed.fc1.weight", 3, c0);
  st.embed.b1 = b.fill("embed.fc1.bias", c0, 0.0);
  st.embed.w2 = b.dense("embed.fc2.weight", c0, c0);
  st.embed.b2 = b.fill("embed.fc2.bias", c0, 0.0);

  std::size_t width_in = c0;
  for (std::size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
    const std::size_t C = cfg.stage_widths[s];
    const std::size_t H = cfg.hidden_ratio * C;
    const std::string sp = "stage" + std::to_string(s);
    StageParams stage;
    stage.down_w = b.dense(sp + ".down.weight", width_in, C);
    stage.down_b = b.fill(sp + ".down.bias", C, 0.0);
    for (std::size_t k = 0; k < cfg.stage_blocks[s]; ++k) {
      const std::string bp = sp + ".block" + std::to_string(k);
      BlockParams blk;
      blk.ln1_gain = b.fill(bp + ".ln1.gain", C, 1.0);
      blk.ln1_bias = b.fill(bp + ".ln1.bias", C, 0.0);
      blk.spatial.w_r = b.dense(bp + ".spatial.w_r", C, C);
      blk.spatial.w_k = b.dense(bp + ".spatial.w_k", C, C);
      blk.spatial.w_v = b.dense(bp + ".spatial.w_v", C, C);
      blk.spatial.w_o = b.dense(bp + ".spatial.w_o", C, C, 0.5);
      Tensor decay({C});
      for (std::size_t c = 0; c < C; ++c) {
        decay[c] = C == 1 ? 0.0 : 8.0 * static_cast<double>(c) / static_cast<double>(C - 1);
      }
      blk.spatial.decay = b.add(bp + ".spatial.decay", std::move(decay));
      blk.spatial.bonus = b.fill(bp + ".spatial.bonus", C, 0.5);
      blk.spatial.mu = b.fill(bp + ".spatial.mu", C, 0.5);
      blk.ln2_gain = b.fill(bp + ".ln2.gain", C, 1.0);
      blk.ln2_bias = b.fill(bp + ".ln2.bias", C, 0.0);
      blk.channel.w_r = b.dense(bp + ".channel.w_r", C, C);
      blk.channel.w_k = b.dense(bp + ".channel.w_k", C, H);
      blk.channel.w_v = b.dense(bp + ".channel.w_v", H, C, 0.5);
      blk.channel.mu = b.fill(bp + ".channel.mu", C, 0.5);
      stage.blocks.push_back(std::move(blk));
    }
    st.stages.push_back(std::move(stage));
    width_in = C;
  }
  st.norm_gain = b.fill("norm.gain", width_in, 1.0);
  st.norm_bias = b.fill("norm.bias", width_in, 0.0);
  st.head_w = b.dense("head.weight", 2 * width_in, cfg.num_classes, 0.05);
  st.head_b = b.fill("head.bias", cfg.num_classes, 0.0);
  return st;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t c0 = cfg.stage_widths.front();
  std::size_t n = 3 * c0 + c0 + c0 * c0 + c0;
  std::size_t in = c0;
  for (std::size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
    const std::size_t C = cfg.stage_widths[s];
    const std::size_t H = cfg.hidden_ratio * C;
    n += in * C + C;
    // 2 norms, spatial (4 CxC + decay, bonus, mu), channel (CxC, CxH, HxC, mu)
    n += cfg.stage_blocks[s] * (4 * C + 4 * C * C + 3 * C + C * C + 2 * C * H + C);
    in = C;
  }
  return n + 2 * in + 2 * in * cfg.num_classes + cfg.num_classes;
}

std::vector<Node> ModelState::parameters() const {
  std::vector<Node> out;
  out.reserve(named.size());
  for (const auto& [name, n] : named) out.push_back(n);
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : named) n += p.value().numel();
  return n;
}

NamedTensors ModelState::to_named_tensors() const {
  NamedTensors out;
  out.reserve(named.size());
  for (const auto& [name, p] : named) out.emplace_back(name, p.value());
  return out;
}

void ModelState::load_named_tensors(const NamedTensors& tensors) {
  if (tensors.size() != named.size()) {
    throw CheckpointError("expected " + std::to_string(named.size()) + " tensors, found " +
                          std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, p] = named[i];
    if (tensors[i].first != name) throw CheckpointError("entry " + std::to_string(i) + " is '" +
                                                        tensors[i].first + "', expected '" + name + "'");
    if (tensors[i].second.shape() != p.value().shape()) {
      throw CheckpointError("shape mismatch for '" + name + "': " + shape_str(tensors[i].second.shape()) +
                            " vs " + shape_str(p.value().shape()));
    }
  }
  for (std::size_t i = 0; i < named.size(); ++i) named[i].second.value() = tensors[i].second;
}

ModelState ModelState::clone() const {
  ModelState copy = init_model(config, seed);
  copy.load_named_tensors(to_named_tensors());
  return copy;
}

void ModelState::clamp_mix() {
  for (auto& stage : stages) {
    for (auto& blk : stage.blocks) {
      for (Node* mu : {&blk.spatial.mu, &blk.channel.mu}) {
        auto& d = mu->value().data();
        d = d.cwiseMax(0.0).cwiseMin(1.0);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Token order and downsampling

namespace {

std::uint32_t quantize(double x) {
  const double q = std::floor((x + 1.0) * 512.0);
  return static_cast<std::uint32_t>(std::clamp(q, 0.0, 1023.0));
}

// Spreads the low 10 bits of v so bit i lands on bit 3i.
std::uint32_t spread_bits(std::uint32_t v) {
  v &= 0x3ffu;
  v = (v | (v << 16)) & 0x030000ffu;
  v = (v | (v << 8)) & 0x0300f00fu;
  v = (v | (v << 4)) & 0x030c30c3u;
  v = (v | (v << 2)) & 0x09249249u;
  return v;
}

}  // namespace

std::uint32_t morton_code(double x, double y, double z) {
  return spread_bits(quantize(x)) | (spread_bits(quantize(y)) << 1) | (spread_bits(quantize(z)) << 2);
}

std::vector<std::size_t> morton_order(const Eigen::Ref<const Points>& coords) {
  const auto N = static_cast<std::size_t>(coords.rows());
  std::vector<std::uint32_t> codes(N);
  for (std::size_t i = 0; i < N; ++i) {
    const auto r = coords.row(static_cast<Eigen::Index>(i));
    if (!r.allFinite() || r.cwiseAbs().maxCoeff() > 1.0) {
      throw CoordOutOfRange("point " + std::to_string(i) + " is outside [-1, 1]^3");
    }
    codes[i] = morton_code(r(0), r(1), r(2));
  }
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return codes[a] < codes[b]; });
  return order;
}

Node embed(const Eigen::Ref<const Points>& coords, const EmbedParams& p) {
  const Node x = Node::constant(Tensor::from_matrix(coords));
  return matmul(relu(matmul(x, p.w1) + p.b1), p.w2) + p.b2;
}

std::vector<std::size_t> farthest_point_sample(const Eigen::Ref<const Points>& coords, std::size_t m) {
  const auto N = static_cast<std::size_t>(coords.rows());
  if (m == 0 || m > N) {
    throw MTooLarge("m = " + std::to_string(m) + " with N = " + std::to_string(N));
  }
  std::vector<std::size_t> picked{0};
  picked.reserve(m);
  Vector dist = (coords.rowwise() - coords.row(0)).rowwise().squaredNorm();
  std::vector<char> taken(N, 0);
  taken[0] = 1;
  while (picked.size() < m) {
    std::size_t best = N;
    double best_d = -1.0;
    for (std::size_t i = 0; i < N; ++i) {
      if (!taken[i] && dist[static_cast<Eigen::Index>(i)] > best_d) {
        best_d = dist[static_cast<Eigen::Index>(i)];
        best = i;
      }
    }
    picked.push_back(best);
    taken[best] = 1;
    dist = dist.cwiseMin((coords.rowwise() - coords.row(static_cast<Eigen::Index>(best))).rowwise().squaredNorm());
  }
  return picked;
}

Partition fps_partition(const Eigen::Ref<const Points>& coords, std::size_t m) {
  Partition part;
  part.anchors = farthest_point_sample(coords, m);
  std::sort(part.anchors.begin(), part.anchors.end());
  const auto N = static_cast<std::size_t>(coords.rows());
  std::vector<std::size_t> owner(N, m);
  for (std::size_t a = 0; a < m; ++a) owner[part.anchors[a]] = a;
  for (std::size_t i = 0; i < N; ++i) {
    if (owner[i] != m) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m; ++a) {
      const double d = (coords.row(static_cast<Eigen::Index>(i)) -
                        coords.row(static_cast<Eigen::Index>(part.anchors[a]))).squaredNorm();
      if (d < best) {
        best = d;
        owner[i] = a;
      }
    }
  }
  part.members.resize(m);
  for (std::size_t i = 0; i < N; ++i) part.members[owner[i]].push_back(i);
  return part;
}

Node segment_max(const Node& features, const std::vector<std::vector<std::size_t>>& members) {
  const auto F = features.value().matrix();
  const Eigen::Index C = F.cols();
  const auto M = static_cast<Eigen::Index>(members.size());
  RowMatrix out(M, C);
  auto arg = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(M * C));
  for (Eigen::Index r = 0; r < M; ++r) {
    const auto& mem = members[static_cast<std::size_t>(r)];
    if (mem.empty()) throw ShapeMismatch("segment_max: empty group " + std::to_string(r));
    for (Eigen::Index c = 0; c < C; ++c) {
      std::size_t best = mem.front();
      for (auto i : mem) {
        if (F(static_cast<Eigen::Index>(i), c) > F(static_cast<Eigen::Index>(best), c)) best = i;
      }
      out(r, c) = F(static_cast<Eigen::Index>(best), c);
      (*arg)[static_cast<std::size_t>(r * C + c)] = best;
    }
  }
  return Node::make(Tensor::from_matrix(out), {features}, [arg, C](detail::NodeData& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    const auto& g = self.grad.data();
    auto& dp = p.grad.data();
    for (std::size_t e = 0; e < arg->size(); ++e) {
      dp[static_cast<Eigen::Index>((*arg)[e] * static_cast<std::size_t>(C) + e % static_cast<std::size_t>(C))] +=
          g[static_cast<Eigen::Index>(e)];
    }
  });
}

Downsampled downsample(const Eigen::Ref<const Points>& coords, const Node& features, std::size_t m,
                       const Node& w, const Node& b) {
  Downsampled out;
  out.partition = fps_partition(coords, m);
  out.coords.resize(static_cast<Eigen::Index>(m), 3);
  for (std::size_t a = 0; a < m; ++a) {
    out.coords.row(static_cast<Eigen::Index>(a)) = coords.row(static_cast<Eigen::Index>(out.partition.anchors[a]));
  }
  out.features = matmul(segment_max(features, out.partition.members), w) + b;
  return out;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

KnnStrategy knn_strategy(ShiftMode mode) {
  switch (mode) {
    case ShiftMode::knn_rand_one: return KnnStrategy::RandOne;
    case ShiftMode::knn_avg: return KnnStrategy::Avg;
    default: return KnnStrategy::WAvg;
  }
}

// Token shift for one stage. Geometric modes share one plan across blocks.
struct StageShift {
  ShiftMode mode;
  NeighborPlan plan;
  double lambda = 0.5;
  std::size_t mixed = 0;

  ShiftFn make(const Node& mu) const {
    if (mode == ShiftMode::qshift) {
      return [mu](const Node& x) { return q_shift(x, mu); };
    }
    return [this](const Node& x) { return neighbor_fuse(x, plan, lambda, mixed); };
  }
};

StageShift stage_shift(const ModelConfig& cfg, const Points& coords, std::size_t width, Rng& rng) {
  StageShift sh{cfg.shift_mode, {}, cfg.agt.lambda, cfg.agt.resolved_channels(width)};
  if (cfg.shift_mode == ShiftMode::agt) {
    sh.plan = agt_plan(coords, cfg.agt.cell_size);
  } else if (cfg.shift_mode != ShiftMode::qshift) {
    const auto n = static_cast<std::size_t>(coords.rows());
    if (n < 2) {
      sh.plan.groups.assign(n, {});
      sh.plan.group_of.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        sh.plan.groups[i] = {{i, 1.0}};
        sh.plan.group_of[i] = i;
      }
    } else {
      sh.plan = knn_plan(coords, std::min(cfg.knn_k, n - 1), knn_strategy(cfg.shift_mode), rng);
    }
  }
  return sh;
}

}  // namespace

ForwardResult forward(const PointCloud& cloud, const ModelState& state, KeyCollector* collector, Rng* rng) {
  const ModelConfig& cfg = state.config;
  if (cloud.size() < 1) throw ShapeMismatch("forward: empty cloud");
  if (!cloud.coords.allFinite()) throw NonFiniteCoordinate("cloud '" + cloud.id + "'");

  Rng local(mix_seed(state.seed, hash_id(cloud.id)));
  Rng& r = rng ? *rng : local;

  // Morton keys need [-1, 1]^3; features keep the original coordinates.
  const double extent = std::max(1.0, cloud.coords.cwiseAbs().maxCoeff());
  const Points unit = cloud.coords / extent;
  const auto order = morton_order(unit);
  Points coords(cloud.size(), 3);
  for (std::size_t i = 0; i < order.size(); ++i) {
    coords.row(static_cast<Eigen::Index>(i)) = cloud.coords.row(static_cast<Eigen::Index>(order[i]));
  }

  Node x = embed(coords, state.embed);
  std::size_t layer = 0;
  for (std::size_t s = 0; s < state.stages.size(); ++s) {
    const StageParams& stage = state.stages[s];
    const auto target = std::min(cfg.stage_points[s], static_cast<std::size_t>(coords.rows()));
    if (target < static_cast<std::size_t>(coords.rows())) {
      auto ds = downsample(coords, x, target, stage.down_w, stage.down_b);
      coords = std::move(ds.coords);
      x = ds.features;
    } else {
      x = matmul(x, stage.down_w) + stage.down_b;
    }

    const StageShift sh = stage_shift(cfg, coords, cfg.stage_widths[s], r);
    for (const BlockParams& blk : stage.blocks) {
      MixTaps taps;
      const Node h1 = layer_norm(x, blk.ln1_gain, blk.ln1_bias);
      x = x + spatial_mix(h1, blk.spatial, sh.make(blk.spatial.mu), collector ? &taps : nullptr);
      if (collector && collector->accepts(layer)) collector->deposit(layer, cloud.domain_id, taps.k, taps.v);
      ++layer;
      const Node h2 = layer_norm(x, blk.ln2_gain, blk.ln2_bias);
      const ShiftFn cshift = cfg.shift_channel_mix ? sh.make(blk.channel.mu) : ShiftFn(identity_shift);
      x = x + channel_mix(h2, blk.channel, cshift);
    }
  }

  const Node h = layer_norm(x, state.norm_gain, state.norm_bias);
  const Node parts[] = {mean(h, 0), max(h, 0)};
  ForwardResult out;
  out.pooled = concat(parts, 0);
  const auto width = out.pooled.value().numel();
  out.logits = matmul(reshape(out.pooled, {1, width}), state.head_w) + state.head_b;
  return out;
}

Node forward_batch(std::span<const PointCloud> clouds, const ModelState& state, KeyCollector* collector,
                   Rng* rng) {
  std::vector<Node> rows;
  rows.reserve(clouds.size());
  for (const auto& c : clouds) rows.push_back(forward(c, state, collector, rng).logits);
  return concat(rows, 0);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t predict(const PointCloud& cloud, const ModelState& state) {
  const Tensor logits = forward(cloud, state).logits.value();
  return argmax(std::span<const double>(logits.data().data(), logits.numel()));
}

}  // namespace pdgr
