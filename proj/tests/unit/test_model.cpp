#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "pdgr/model/model.hpp"
#include "pdgr/numerics/errors.hpp"

using namespace pdgr;
using pdgr::testing::grad_check;
using pdgr::testing::grad_check_ladder;
using pdgr::testing::random_param;
using pdgr::testing::random_tensor;

namespace {

PointCloud sphere_cloud(Rng& rng, Eigen::Index n, int label = 0, int domain = 0, std::string id = "c") {
  PointCloud pc;
  pc.coords.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVector3d p(rng.normal(), rng.normal(), rng.normal());
    pc.coords.row(i) = 0.9 * p.normalized();
  }
  pc.label = label;
  pc.domain_id = domain;
  pc.id = std::move(id);
  return pc;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.stage_widths = {8, 8, 16, 16};
  cfg.stage_points = {32, 16, 8, 4};
  cfg.agt.cell_size = 0.5;
  return cfg;
}

// Bit-by-bit interleave, written independently of the library's mask tricks.
std::uint32_t naive_morton(double x, double y, double z) {
  std::uint32_t q[3];
  const double v[3] = {x, y, z};
  for (int a = 0; a < 3; ++a) {
    q[a] = static_cast<std::uint32_t>(std::min(1023.0, std::floor((v[a] + 1.0) * 512.0)));
  }
  std::uint32_t code = 0;
  for (int bit = 0; bit < 10; ++bit) {
    for (int a = 0; a < 3; ++a) code |= ((q[a] >> bit) & 1u) << (3 * bit + a);
  }
  return code;
}

// Recomputes every min-distance from scratch at each step.
std::vector<std::size_t> naive_fps(const Points& p, std::size_t m) {
  std::vector<std::size_t> sel{0};
  while (sel.size() < m) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      if (std::find(sel.begin(), sel.end(), static_cast<std::size_t>(i)) != sel.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (auto s : sel) d = std::min(d, (p.row(i) - p.row(static_cast<Eigen::Index>(s))).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = static_cast<std::size_t>(i);
      }
    }
    sel.push_back(best);
  }
  return sel;
}

Tensor logits_of(const PointCloud& pc, const ModelState& st) { return forward(pc, st).logits.value(); }

}  // namespace

TEST_CASE("morton codes match a bit-by-bit interleave") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1), z = rng.uniform(-1, 1);
    CHECK(morton_code(x, y, z) == naive_morton(x, y, z));
  }
  CHECK(morton_code(1.0, 1.0, 1.0) == (1u << 30) - 1);
  CHECK(morton_code(-1.0, -1.0, -1.0) == 0u);
}

TEST_CASE("morton order of the cube corners") {
  // Corners listed in scrambled order; x is the lowest interleaved bit, z the highest.
  Points p(8, 3);
  p << 0.75, 0.75, 0.75,     // 7
      -0.75, -0.75, -0.75,   // 0
      -0.75, 0.75, -0.75,    // 2
      0.75, -0.75, 0.75,     // 5
      0.75, -0.75, -0.75,    // 1
      -0.75, -0.75, 0.75,    // 4
      0.75, 0.75, -0.75,     // 3
      -0.75, 0.75, 0.75;     // 6
  const std::vector<std::size_t> expect{1, 4, 2, 6, 5, 3, 7, 0};
  CHECK(morton_order(p) == expect);
}

TEST_CASE("morton order edge cases") {
  Rng rng(2);
  Points p(50, 3);
  for (Eigen::Index i = 0; i < 150; ++i) p.data()[i] = rng.uniform(-1, 1);
  const auto order = morton_order(p);
  Points sorted(50, 3);
  for (std::size_t i = 0; i < 50; ++i) sorted.row(static_cast<Eigen::Index>(i)) = p.row(static_cast<Eigen::Index>(order[i]));
  std::vector<std::size_t> ident(50);
  std::iota(ident.begin(), ident.end(), std::size_t{0});
  CHECK(morton_order(sorted) == ident);

  Points same = Points::Constant(5, 3, 0.3);
  CHECK(morton_order(same) == std::vector<std::size_t>{0, 1, 2, 3, 4});

  Points out(1, 3);
  out << 0.0, 1.5, 0.0;
  CHECK_THROWS_AS(morton_order(out), CoordOutOfRange);
}

TEST_CASE("embed") {
  Rng rng(3);
  Points p(8, 3);
  for (Eigen::Index i = 0; i < 24; ++i) p.data()[i] = rng.uniform(-1, 1);
  EmbedParams e{random_param({3, 16}, rng), random_param({16}, rng), random_param({16, 16}, rng),
                random_param({16}, rng)};

  SUBCASE("zero weights give zero") {
    EmbedParams z{Node::constant(Tensor::zeros({3, 16})), Node::constant(Tensor::zeros({16})),
                  Node::constant(Tensor::zeros({16, 16})), Node::constant(Tensor::zeros({16}))};
    CHECK((embed(p, z).value().data().array() == 0.0).all());
  }
  SUBCASE("row permutation commutes") {
    Points q = p;
    q.row(0).swap(q.row(5));
    const RowMatrix a = embed(p, e).value().matrix();
    const RowMatrix b = embed(q, e).value().matrix();
    CHECK(a.row(0) == b.row(5));
    CHECK(a.row(5) == b.row(0));
    CHECK(a.row(3) == b.row(3));
  }
  SUBCASE("gradient check") {
    auto wts = Node::constant(random_tensor({8, 16}, rng));
    auto rep = grad_check({e.w1, e.b1, e.w2, e.b2}, [&] { return sum(embed(p, e) * wts); });
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("farthest point sampling and partition") {
  Rng rng(4);
  SUBCASE("agrees with a from-scratch trace") {
    for (int rep = 0; rep < 20; ++rep) {
      Points p(40, 3);
      for (Eigen::Index i = 0; i < 120; ++i) p.data()[i] = rng.uniform(-1, 1);
      CHECK(farthest_point_sample(p, 12) == naive_fps(p, 12));
    }
  }
  SUBCASE("m = N keeps every point as its own group") {
    Points p(10, 3);
    for (Eigen::Index i = 0; i < 30; ++i) p.data()[i] = rng.uniform(-1, 1);
    auto f = Node::constant(random_tensor({10, 4}, rng));
    const auto part = fps_partition(p, 10);
    for (std::size_t a = 0; a < 10; ++a) CHECK(part.members[a] == std::vector<std::size_t>{a});
    CHECK(segment_max(f, part.members).value() == f.value());
    auto eye = Node::constant(Tensor::from_matrix(RowMatrix::Identity(4, 4)));
    auto zero = Node::constant(Tensor::zeros({4}));
    auto ds = downsample(p, f, 10, eye, zero);
    CHECK(ds.coords == p);
  }
  SUBCASE("two separated clusters get one anchor each") {
    Points p(20, 3);
    for (Eigen::Index i = 0; i < 20; ++i) {
      const double cx = i < 10 ? -5.0 : 5.0;
      p.row(i) << cx + rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1);
    }
    const auto part = fps_partition(p, 2);
    CHECK(part.anchors[0] < 10);
    CHECK(part.anchors[1] >= 10);
    CHECK(part.members[0].size() == 10);
    CHECK(part.members[1].size() == 10);
    CHECK(fps_partition(p, 2).anchors == part.anchors);
  }
  SUBCASE("nearest-anchor assignment") {
    Points p(60, 3);
    for (Eigen::Index i = 0; i < 180; ++i) p.data()[i] = rng.uniform(-1, 1);
    const auto part = fps_partition(p, 7);
    std::size_t total = 0;
    for (std::size_t a = 0; a < 7; ++a) {
      total += part.members[a].size();
      for (auto i : part.members[a]) {
        const double mine = (p.row(static_cast<Eigen::Index>(i)) - p.row(static_cast<Eigen::Index>(part.anchors[a]))).squaredNorm();
        for (auto other : part.anchors) {
          CHECK(mine <= (p.row(static_cast<Eigen::Index>(i)) - p.row(static_cast<Eigen::Index>(other))).squaredNorm());
        }
      }
    }
    CHECK(total == 60);
  }
  SUBCASE("errors") {
    Points p(3, 3);
    p.setZero();
    CHECK_THROWS_AS(farthest_point_sample(p, 4), MTooLarge);
    CHECK_THROWS_AS(farthest_point_sample(p, 0), MTooLarge);
  }
}

TEST_CASE("segment_max values and gradient") {
  Rng rng(5);
  auto f = random_param({9, 3}, rng);
  const std::vector<std::vector<std::size_t>> groups{{0, 4, 8}, {1, 2}, {3, 5, 6, 7}};
  const Node pooled = segment_max(f, groups);
  const auto out = pooled.value().matrix();
  const auto F = f.value().matrix();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (Eigen::Index c = 0; c < 3; ++c) {
      double m = -std::numeric_limits<double>::infinity();
      for (auto i : groups[g]) m = std::max(m, F(static_cast<Eigen::Index>(i), c));
      CHECK(out(static_cast<Eigen::Index>(g), c) == m);
    }
  }
  auto wts = Node::constant(random_tensor({3, 3}, rng));
  auto rep = grad_check({f}, [&] { return sum(segment_max(f, groups) * wts); });
  CHECK(rep.max_rel_error < 1e-4);

  auto tied = Node::parameter(Tensor::matrix({{1.0}, {1.0}}));
  backward(sum(segment_max(tied, {{0, 1}})));
  CHECK(tied.grad()[0] == 1.0);
  CHECK(tied.grad()[1] == 0.0);
}

TEST_CASE("configuration presets and parameter counts") {
  for (const auto& cfg : {ModelConfig::base(), ModelConfig::standard(), ModelConfig::large()}) {
    CHECK_NOTHROW(cfg.validate());
    const auto st = init_model(cfg, 1);
    CHECK(st.parameter_count() == parameter_count(cfg));
    std::set<std::string> names;
    for (const auto& [n, p] : st.named) names.insert(n);
    CHECK(names.size() == st.named.size());
  }
  CHECK(ModelConfig::base().stage_blocks == std::vector<std::size_t>{1, 1, 1, 1});

  // Standard by hand: widths 32, 64, 128, 128 with 1, 1, 2, 2 blocks, hidden 2C, 5 classes.
  const auto block = [](std::size_t C) { return 4 * C + 4 * C * C + 3 * C + C * C + 4 * C * C + C; };
  const std::size_t embed = 3 * 32 + 32 + 32 * 32 + 32;
  const std::size_t downs = (32 * 32 + 32) + (32 * 64 + 64) + (64 * 128 + 128) + (128 * 128 + 128);
  const std::size_t blocks = block(32) + block(64) + 2 * block(128) + 2 * block(128);
  const std::size_t head = 2 * 128 + 256 * 5 + 5;
  CHECK(parameter_count(ModelConfig::standard()) == embed + downs + blocks + head);
  CHECK(parameter_count(ModelConfig::standard()) == 671493);

  CHECK(parameter_count(ModelConfig::base()) < parameter_count(ModelConfig::standard()));
  CHECK(parameter_count(ModelConfig::standard()) < parameter_count(ModelConfig::large()));

  ModelConfig bad;
  bad.stage_widths = {32, 16, 128, 128};
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = ModelConfig{};
  bad.stage_points = {64, 128, 32, 16};
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = ModelConfig{};
  bad.stage_widths = {30, 64, 128, 128};
  CHECK_THROWS_AS(bad.validate(), ChannelsNotDivisibleBy4);
}

TEST_CASE("forward is deterministic, finite and checkpoint-stable") {
  Rng rng(6);
  const ModelConfig cfg = tiny_config();
  const auto st = init_model(cfg, 11);
  const auto pc = sphere_cloud(rng, 64);
  const Tensor a = logits_of(pc, st);
  CHECK(a.shape() == Shape{1, 5});
  CHECK(a == logits_of(pc, st));
  CHECK(a.all_finite());

  std::stringstream buf;
  write_checkpoint(buf, st.to_named_tensors());
  auto other = init_model(cfg, 99);
  CHECK(!(logits_of(pc, other) == a));
  other.load_named_tensors(read_checkpoint(buf));
  CHECK(logits_of(pc, other) == a);

  auto copy = st.clone();
  copy.named.front().second.value()[0] += 1.0;
  CHECK(logits_of(pc, st) == a);

  PointCloud wild = pc;
  wild.coords *= 1e3;
  CHECK(logits_of(wild, st).all_finite());

  auto wrong = init_model(ModelConfig::base(), 1);
  CHECK_THROWS_AS(wrong.load_named_tensors(st.to_named_tensors()), CheckpointError);
}

TEST_CASE("input permutations") {
  Rng rng(7);
  // No downsampling before the first blocks, so token order reaches Bi-WKV.
  ModelConfig cfg = tiny_config();
  cfg.stage_points = {64, 16, 8, 4};
  const auto st = init_model(cfg, 3);
  const auto pc = sphere_cloud(rng, 64);

  // Distinct Morton codes: any input order sorts to the same token sequence.
  std::set<std::uint32_t> codes;
  for (Eigen::Index i = 0; i < 64; ++i) codes.insert(morton_code(pc.coords(i, 0), pc.coords(i, 1), pc.coords(i, 2)));
  REQUIRE(codes.size() == 64);
  PointCloud perm = pc;
  std::vector<Eigen::Index> idx(64);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::reverse(idx.begin(), idx.end());
  std::swap(idx[3], idx[40]);
  for (Eigen::Index i = 0; i < 64; ++i) perm.coords.row(i) = pc.coords.row(idx[static_cast<std::size_t>(i)]);
  CHECK(logits_of(perm, st) == logits_of(pc, st));

  // Two distinct points inside one quantisation cell: swapping them changes the sequence.
  PointCloud tie = pc;
  tie.coords.row(1) = tie.coords.row(0) + Eigen::RowVector3d(1e-4, 0, 0);
  REQUIRE(morton_code(tie.coords(0, 0), tie.coords(0, 1), tie.coords(0, 2)) ==
          morton_code(tie.coords(1, 0), tie.coords(1, 1), tie.coords(1, 2)));
  PointCloud swapped = tie;
  swapped.coords.row(0).swap(swapped.coords.row(1));
  CHECK(!(logits_of(swapped, st) == logits_of(tie, st)));
}

TEST_CASE("shift modes coincide at the identity limit") {
  Rng rng(8);
  ModelConfig cfg = tiny_config();
  cfg.shift_mode = ShiftMode::qshift;
  auto q = init_model(cfg, 5);
  for (auto& stage : q.stages) {
    for (auto& blk : stage.blocks) {
      blk.spatial.mu.value().data().setOnes();
      blk.channel.mu.value().data().setOnes();
    }
  }
  cfg.shift_mode = ShiftMode::agt;
  cfg.agt.lambda = 1.0 - 1e-12;
  auto g = init_model(cfg, 5);
  g.load_named_tensors(q.to_named_tensors());
  const auto pc = sphere_cloud(rng, 64);
  const Tensor lq = logits_of(pc, q);
  const Tensor lg = logits_of(pc, g);
  CHECK((lq.data() - lg.data()).cwiseAbs().maxCoeff() < 1e-9);

  for (auto mode : {ShiftMode::knn_rand_one, ShiftMode::knn_avg, ShiftMode::knn_wavg}) {
    cfg.shift_mode = mode;
    auto k = init_model(cfg, 5);
    k.load_named_tensors(q.to_named_tensors());
    CHECK((logits_of(pc, k).data() - lq.data()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("mix coefficients are clamped to the unit interval") {
  auto st = init_model(tiny_config(), 1);
  st.stages[0].blocks[0].spatial.mu.value()[0] = 1.5;
  st.stages[0].blocks[0].channel.mu.value()[1] = -0.2;
  st.clamp_mix();
  CHECK(st.stages[0].blocks[0].spatial.mu.value()[0] == 1.0);
  CHECK(st.stages[0].blocks[0].channel.mu.value()[1] == 0.0);
}

TEST_CASE("predict and argmax") {
  const double a[] = {0.1, 0.9, 0.3};
  CHECK(argmax(a) == 1);
  const double tie[] = {1.0, 1.0};
  CHECK(argmax(tie) == 0);
  Rng rng(9);
  const auto st = init_model(tiny_config(), 2);
  const auto pc = sphere_cloud(rng, 64);
  const Tensor l = logits_of(pc, st);
  CHECK(predict(pc, st) == argmax(std::span<const double>(l.data().data(), l.numel())));
}

TEST_CASE("collector receives one deposit per spatial mix") {
  Rng rng(10);
  const auto st = init_model(tiny_config(), 2);
  KeyCollector col;
  const auto pc = sphere_cloud(rng, 64, 0, 3);
  forward(pc, st, &col);
  CHECK(col.layers().size() == 6);
  for (const auto& [layer, per_domain] : col.layers()) {
    REQUIRE(per_domain.count(3) == 1);
    CHECK(per_domain.at(3).keys.size() == 1);
  }
  CHECK(col.layers().at(0).at(3).keys[0].shape() == Shape{32, 8});
  CHECK(col.layers().at(5).at(3).keys[0].shape() == Shape{4, 16});

  ModelConfig cfg = tiny_config();
  CHECK(cfg.aligned_layers() == std::set<std::size_t>{0, 1, 2, 3, 4, 5});
  cfg.align_from_stage = 2;
  CHECK(cfg.aligned_layers() == std::set<std::size_t>{2, 3, 4, 5});
  cfg.align_from_stage = 3;
  CHECK(cfg.aligned_layers() == std::set<std::size_t>{4, 5});
  KeyCollector deep(cfg.aligned_layers());
  forward(pc, st, &deep);
  CHECK(deep.layers().size() == 2);
  CHECK(deep.layers().count(4) == 1);
  cfg.align_from_stage = 4;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("full model gradient check on a two-sample batch") {
  Rng rng(11);
  for (auto mode : {ShiftMode::agt, ShiftMode::qshift}) {
    ModelConfig cfg = tiny_config();
    cfg.shift_mode = mode;
    auto st = init_model(cfg, 21);
    // Move mu off its initial constant so every parameter has a generic gradient.
    for (auto& [name, p] : st.named) {
      if (name.find("mu") != std::string::npos || name.find("bias") != std::string::npos) {
        for (std::size_t i = 0; i < p.value().numel(); ++i) p.value()[i] += rng.uniform(-0.3, 0.3);
      }
    }
    const std::vector<PointCloud> batch{sphere_cloud(rng, 64, 1, 0, "a"), sphere_cloud(rng, 64, 3, 1, "b")};
    const std::vector<int> labels{1, 3};
    auto loss = [&] {
      KeyCollector col;
      const Node logits = forward_batch(batch, st, &col);
      return total_loss(cross_entropy(logits, labels), alignment_target(AlignMode::k_only, col), 1.0, 0.3);
    };
    const auto t0 = std::chrono::steady_clock::now();
    auto rep = grad_check_ladder(st.parameters(), loss, 1e-4);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE(to_string(mode), ": ", rep.checked, " entries, max rel ", rep.max_rel_error, " (", rep.refined,
            " refined, ", rep.max_rel_primary, " at step 1e-4), ", secs, " s");
    CHECK(rep.checked == st.parameter_count());
    CHECK(rep.max_rel_error < 1e-4);
  }
}
