#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "doctest.h"
#include "pdgr/data/data.hpp"
#include "pdgr/numerics/errors.hpp"

using namespace pdgr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pdgr_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

Manifest small_manifest() {
  Manifest m = Manifest::standard();
  m.points = 64;
  m.train_per_class = 3;
  m.val_per_class = 1;
  m.test_per_class = 2;
  return m;
}

double mean_nn_distance(const Points& p) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      if (j != i) best = std::min(best, (p.row(i) - p.row(j)).norm());
    }
    total += best;
  }
  return total / static_cast<double>(p.rows());
}

// Two-sided Mann-Whitney U test, normal approximation with midranks.
double rank_sum_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<std::pair<double, int>> all;
  for (double x : a) all.emplace_back(x, 0);
  for (double x : b) all.emplace_back(x, 1);
  std::sort(all.begin(), all.end());
  std::vector<double> rank(all.size());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    for (std::size_t k = i; k < j; ++k) rank[k] = 0.5 * static_cast<double>(i + j + 1);
    i = j;
  }
  double ra = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].second == 0) ra += rank[i];
  }
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double u = ra - n1 * (n1 + 1) / 2;
  const double z = (u - n1 * n2 / 2) / std::sqrt(n1 * n2 * (n1 + n2 + 1) / 12);
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

}  // namespace

TEST_CASE("generated shapes lie on their surfaces") {
  Rng rng(1);
  const auto sphere = generate_shape(0, 1024, rng);
  CHECK((sphere.coords.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-9);

  const auto cube = generate_shape(1, 1024, rng);
  CHECK((cube.coords.cwiseAbs().rowwise().maxCoeff().array() == 1.0).all());

  // Cylinder: side points have x^2 + y^2 = 1, cap points |z| = a with x^2 + y^2 <= 1.
  const auto cyl = generate_shape(2, 1024, rng);
  const double a = cyl.coords.col(2).cwiseAbs().maxCoeff();
  CHECK(a >= 0.5);
  CHECK(a <= 2.0);
  for (Eigen::Index i = 0; i < 1024; ++i) {
    const double r = std::hypot(cyl.coords(i, 0), cyl.coords(i, 1));
    const bool side = std::abs(r - 1.0) < 1e-12;
    const bool cap = std::abs(std::abs(cyl.coords(i, 2)) - a) < 1e-12 && r <= 1.0 + 1e-12;
    CHECK((side || cap));
  }

  // Cone: radius shrinks linearly from 1 at the base to 0 at the apex.
  const auto cone = generate_shape(3, 1024, rng);
  const double base = cone.coords.col(2).minCoeff();
  std::vector<double> heights;
  for (Eigen::Index i = 0; i < 1024; ++i) {
    const double r = std::hypot(cone.coords(i, 0), cone.coords(i, 1));
    const double z = cone.coords(i, 2);
    if (z == base) {
      CHECK(r <= 1.0 + 1e-12);
    } else if (r < 0.95) {
      heights.push_back((z - base) / (1.0 - r));
    }
  }
  REQUIRE(heights.size() > 100);
  const auto [hlo, hhi] = std::minmax_element(heights.begin(), heights.end());
  CHECK(*hhi - *hlo < 1e-9);
  CHECK(*hlo >= 1.0);
  CHECK(*hhi <= 2.5);
  CHECK(std::abs(base + *hlo / 2) < 1e-9);

  // Torus: (sqrt(x^2 + y^2) - 1)^2 + z^2 = r^2 for a single r in [0.25, 0.45].
  const auto torus = generate_shape(4, 1024, rng);
  std::vector<double> radii;
  for (Eigen::Index i = 0; i < 1024; ++i) {
    const double ring = std::hypot(torus.coords(i, 0), torus.coords(i, 1)) - 1.0;
    radii.push_back(std::hypot(ring, torus.coords(i, 2)));
  }
  const auto [lo, hi] = std::minmax_element(radii.begin(), radii.end());
  CHECK(*hi - *lo < 1e-12);
  CHECK(*lo >= 0.25);
  CHECK(*hi <= 0.45);

  CHECK_THROWS_AS(generate_shape(5, 64, rng), UnknownClass);
  CHECK_THROWS_AS(generate_shape(-1, 64, rng), UnknownClass);
}

TEST_CASE("shape generation is deterministic") {
  for (int c = 0; c < 5; ++c) {
    Rng a(42), b(42);
    CHECK(generate_shape(c, 200, a).coords == generate_shape(c, 200, b).coords);
  }
}

TEST_CASE("domain corruptions") {
  Rng rng(2);
  const auto sphere = generate_shape(0, 512, rng);

  SUBCASE("clean and zero jitter are identities") {
    CHECK(apply_domain(sphere, DomainSpec{"c", Corruption::clean}, rng).coords == sphere.coords);
    DomainSpec j{"j", Corruption::jitter};
    j.sigma = 0.0;
    CHECK(apply_domain(sphere, j, rng).coords == sphere.coords);
    j.sigma = 0.05;
    const auto noisy = apply_domain(sphere, j, rng);
    const double sd = std::sqrt((noisy.coords - sphere.coords).array().square().mean());
    CHECK(sd == doctest::Approx(0.05).epsilon(0.05));
  }
  SUBCASE("half-space dropout keeps one side of the cut") {
    DomainSpec d{"o", Corruption::halfspace_dropout};
    d.fraction = 0.5;
    CutPlane cut;
    const auto out = apply_domain(sphere, d, rng, &cut);
    CHECK(out.size() == sphere.size());
    CHECK(std::abs(cut.normal.norm() - 1.0) < 1e-12);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      CHECK(cut.normal.dot(out.coords.row(i) - cut.origin) <= cut.offset);
    }
    // Every output point is one of the input points.
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      bool found = false;
      for (Eigen::Index j = 0; j < sphere.size() && !found; ++j) found = out.coords.row(i) == sphere.coords.row(j);
      CHECK(found);
    }
  }
  SUBCASE("anisotropic scale and density resampling") {
    DomainSpec s{"s", Corruption::anisotropic_scale};
    s.scale = {2.0, 1.0, 0.5};
    const auto st = apply_domain(sphere, s, rng);
    CHECK(st.coords.col(0) == 2.0 * sphere.coords.col(0));
    CHECK(st.coords.col(2) == 0.5 * sphere.coords.col(2));

    DomainSpec r{"r", Corruption::density_resample};
    r.resample_n = 100;
    const auto rs = apply_domain(sphere, r, rng);
    std::set<std::tuple<double, double, double>> distinct;
    for (Eigen::Index i = 0; i < rs.size(); ++i) distinct.emplace(rs.coords(i, 0), rs.coords(i, 1), rs.coords(i, 2));
    CHECK(rs.size() == 512);
    CHECK(distinct.size() <= 100);
  }
  SUBCASE("parameter ranges") {
    DomainSpec bad{"b", Corruption::jitter};
    bad.sigma = 0.2;
    CHECK_THROWS_AS(bad.validate(), InvalidConfig);
    bad = DomainSpec{"b", Corruption::halfspace_dropout};
    bad.fraction = 0.6;
    CHECK_THROWS_AS(bad.validate(), InvalidConfig);
    bad = DomainSpec{"b", Corruption::anisotropic_scale};
    bad.scale = {3.0, 1.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  }
}

TEST_CASE("preprocess") {
  Rng rng(3);
  PointCloud pc = generate_shape(3, 300, rng);
  pc.coords = pc.coords * 3.0;
  pc.coords.rowwise() += Eigen::RowVector3d(5, -2, 1);

  const auto eval = preprocess(pc, false, rng);
  CHECK(std::abs(eval.coords.rowwise().norm().maxCoeff() - 1.0) <= 2e-16);
  CHECK(eval.coords.colwise().mean().cwiseAbs().maxCoeff() < 1e-15);
  const auto again = preprocess(eval, false, rng);
  CHECK((again.coords - eval.coords).cwiseAbs().maxCoeff() < 1e-15);

  AugmentConfig unit_scale;
  unit_scale.scale_lo = unit_scale.scale_hi = 1.0;
  const auto train = preprocess(pc, true, rng, unit_scale);
  CHECK((train.coords - eval.coords).cwiseAbs().maxCoeff() <= 0.05);
  CHECK(!(train.coords == eval.coords));

  const auto scaled = preprocess(pc, true, rng);
  const double r = scaled.coords.rowwise().norm().maxCoeff();
  CHECK(r >= 0.8 - 0.05 * std::sqrt(3.0));
  CHECK(r <= 1.2 + 0.05 * std::sqrt(3.0));

  PointCloud flat;
  flat.coords = Points::Constant(10, 3, 0.5);
  CHECK_THROWS_AS(preprocess(flat, false, rng), DegenerateCloud);
}

TEST_CASE("xyz read and write") {
  Rng rng(4);
  PointCloud pc = generate_shape(4, 100, rng);
  pc.coords *= 1.0 / 3.0;
  pc.label = 4;
  pc.domain_id = 2;
  std::stringstream ss;
  write_cloud(ss, pc);
  const auto back = read_cloud(ss);
  CHECK(back.coords == pc.coords);
  CHECK(back.label == 4);
  CHECK(back.domain_id == 2);

  std::istringstream two("N 2 0 1\n0.5 1 2\n-3 4e-3 5\n");
  const auto small = read_cloud(two);
  CHECK(small.size() == 2);
  CHECK(small.label == 0);
  CHECK(small.domain_id == 1);
  CHECK(small.coords(1, 1) == 4e-3);

  std::istringstream truncated("N 3 0 0\n1 2 3\n4 5 6\n");
  CHECK_THROWS_AS(read_cloud(truncated), CountMismatch);
  std::istringstream extra("N 1 0 0\n1 2 3\n4 5 6\n");
  CHECK_THROWS_AS(read_cloud(extra), CountMismatch);
  std::istringstream garbled("N 2 0 0\n1 2 3\n4 five 6\n");
  try {
    read_cloud(garbled, "g.xyz");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("g.xyz:3") != std::string::npos);
  }
  std::istringstream header("P 2 0 0\n");
  CHECK_THROWS_AS(read_cloud(header), ParseError);
}

TEST_CASE("key-value parsing") {
  std::istringstream in("a = 1\n# comment\n[sec one]\nb = x, y  z\nc = 2.5 # trailing\n");
  const auto doc = parse_kv(in, "t.cfg");
  REQUIRE(doc.sections.size() == 2);
  CHECK(doc.get_int(*doc.section(""), "a", 0) == 1);
  const auto& s = *doc.section("sec one");
  CHECK(doc.get_list(s, "b", {}) == std::vector<std::string>{"x", "y", "z"});
  CHECK(doc.get_double(s, "c", 0.0) == 2.5);
  CHECK(doc.get_double(s, "missing", 7.0) == 7.0);

  std::istringstream bad("a = 1\nnot a pair\n");
  try {
    parse_kv(bad, "bad.cfg");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
  }
  std::istringstream num("x = abc\n");
  const auto d2 = parse_kv(num, "n.cfg");
  CHECK_THROWS_AS(d2.get_double(*d2.section(""), "x", 0.0), ParseError);
}

TEST_CASE("manifest round trip") {
  const Manifest m = Manifest::standard();
  std::stringstream ss;
  write_manifest(ss, m);
  const Manifest back = parse_manifest(parse_kv(ss, "m"));
  REQUIRE(back.domains.size() == 4);
  CHECK(back.seed == m.seed);
  CHECK(back.classes == m.classes);
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(back.domains[d].name == m.domains[d].name);
    CHECK(back.domains[d].corruption == m.domains[d].corruption);
    CHECK(back.domains[d].sigma == m.domains[d].sigma);
    CHECK(back.domains[d].fraction == m.domains[d].fraction);
    CHECK(back.domains[d].scale == m.domains[d].scale);
    CHECK(back.domains[d].seed == m.domains[d].seed);
  }
}

TEST_CASE("benchmark tree, splits and determinism") {
  const Manifest m = small_manifest();
  const fs::path root = fresh_dir("bench_a");
  const auto summary = build_benchmark(m, root);
  CHECK(summary.tasks == 4);
  for (std::size_t t = 0; t < 4; ++t) CHECK(fs::exists(root / "tasks" / ("task_" + std::to_string(t) + ".split")));

  for (const auto& d : m.domains) {
    for (const auto& c : m.classes) {
      std::size_t train = 0, test = 0;
      for (const auto& e : fs::directory_iterator(root / "domains" / d.name / "train")) {
        train += e.path().filename().string().rfind(c + "_", 0) == 0;
      }
      for (const auto& e : fs::directory_iterator(root / "domains" / d.name / "test")) {
        test += e.path().filename().string().rfind(c + "_", 0) == 0;
      }
      CHECK(train == m.train_per_class + m.val_per_class);
      CHECK(test == m.test_per_class);
    }
  }

  for (std::size_t t = 0; t < 4; ++t) {
    const TaskSplit split = read_task(root / "tasks" / ("task_" + std::to_string(t) + ".split"));
    CHECK(split.target == t);
    CHECK(split.target_name == m.domains[t].name);
    CHECK(split.source_train.size() == 3 * 5 * m.train_per_class);
    CHECK(split.source_val.size() == 3 * 5 * m.val_per_class);
    CHECK(split.target_test.size() == 5 * m.test_per_class);
    std::set<std::string> source(split.source_train.begin(), split.source_train.end());
    source.insert(split.source_val.begin(), split.source_val.end());
    CHECK(source.size() == split.source_train.size() + split.source_val.size());
    std::size_t leaks = 0;
    for (const auto& id : source) leaks += domain_of(m, id) == static_cast<int>(t);
    for (const auto& id : split.target_test) leaks += source.count(id);
    CHECK(leaks == 0);
    std::map<std::string, std::size_t> per_class;
    for (const auto& id : split.target_test) ++per_class[id.substr(id.rfind('/') + 1, id.rfind('_') - id.rfind('/') - 1)];
    for (const auto& c : m.classes) CHECK(per_class[c] == m.test_per_class);
    for (const auto& id : split.target_test) CHECK(fs::exists(root / "domains" / (id + ".xyz")));
  }

  const auto first = tree_contents(root);
  CHECK_THROWS_AS(build_benchmark(m, root), IoError);
  build_benchmark(m, root, true);
  CHECK(tree_contents(root) == first);
  const fs::path other = fresh_dir("bench_b");
  build_benchmark(m, other);
  CHECK(tree_contents(other) == first);

  DatasetReader reader(root);
  const auto pc = reader.load("noisy/test/cone_0001");
  CHECK(pc.label == 3);
  CHECK(pc.domain_id == 1);
  CHECK(pc.id == "noisy/test/cone_0001");
  CHECK(reader.access_log() == std::vector<std::string>{"noisy/test/cone_0001"});
  CHECK_THROWS_AS(reader.load("nowhere/train/cube_0000"), IoError);

  fs::remove_all(root);
  fs::remove_all(other);
}

TEST_CASE("occlusion shifts the nearest-neighbour statistic") {
  Manifest m = Manifest::standard();
  m.points = 256;
  std::vector<double> clean, occluded;
  for (std::size_t i = 0; i < 200; ++i) {
    const int cls = static_cast<int>(i % 5);
    clean.push_back(mean_nn_distance(make_sample(m, 0, cls, "train", i).coords));
    occluded.push_back(mean_nn_distance(make_sample(m, 2, cls, "train", i).coords));
  }
  const double p = rank_sum_p_value(clean, occluded);
  MESSAGE("rank-sum p = ", p);
  CHECK(p < 0.01);
}
