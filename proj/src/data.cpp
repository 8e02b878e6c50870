#include "pdgr/data/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

namespace fs = std::filesystem;

const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names{"sphere", "cube", "cylinder", "cone", "torus"};
  return names;
}

int class_id(std::string_view name) {
  const auto& names = default_class_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw UnknownClass("'" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Shapes

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::RowVector3d on_disk(Rng& rng, double radius, double z) {
  const double r = radius * std::sqrt(rng.uniform());
  const double t = 2.0 * kPi * rng.uniform();
  return {r * std::cos(t), r * std::sin(t), z};
}

}  // namespace

PointCloud generate_shape(int cls, std::size_t n, Rng& rng) {
  if (cls < 0 || cls >= static_cast<int>(default_class_names().size())) {
    throw UnknownClass("class id " + std::to_string(cls));
  }
  if (n < 8) throw InvalidConfig("a cloud needs at least 8 points, got " + std::to_string(n));
  PointCloud pc;
  pc.label = cls;
  pc.coords.resize(static_cast<Eigen::Index>(n), 3);

  // Per-sample shape parameters are drawn before any point.
  const double aspect = rng.uniform(0.5, 2.0);   // cylinder half-height
  const double height = rng.uniform(1.0, 2.5);   // cone
  const double tube = rng.uniform(0.25, 0.45);   // torus minor radius
  const double slant = std::sqrt(1.0 + height * height);

  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    Eigen::RowVector3d p;
    switch (cls) {
      case 0: {
        Eigen::RowVector3d g(rng.normal(), rng.normal(), rng.normal());
        while (g.squaredNorm() == 0.0) g = {rng.normal(), rng.normal(), rng.normal()};
        p = g / g.norm();
        break;
      }
      case 1: {
        const auto face = rng.below(6);
        const auto axis = static_cast<Eigen::Index>(face / 2);
        p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        p(axis) = face % 2 == 0 ? -1.0 : 1.0;
        break;
      }
      case 2: {
        // Side area 4 pi a against 2 pi for both caps.
        if (rng.uniform() < 2.0 * aspect / (2.0 * aspect + 1.0)) {
          const double t = 2.0 * kPi * rng.uniform();
          p = {std::cos(t), std::sin(t), rng.uniform(-aspect, aspect)};
        } else {
          p = on_disk(rng, 1.0, rng.uniform() < 0.5 ? -aspect : aspect);
        }
        break;
      }
      case 3: {
        // Apex at +h/2, base at -h/2; side area pi s against pi for the base.
        if (rng.uniform() < slant / (slant + 1.0)) {
          const double f = std::sqrt(rng.uniform());  // distance from the apex, as a fraction
          const double t = 2.0 * kPi * rng.uniform();
          p = {f * std::cos(t), f * std::sin(t), height / 2.0 - f * height};
        } else {
          p = on_disk(rng, 1.0, -height / 2.0);
        }
        break;
      }
      default: {
        double phi = 0.0;
        do {
          phi = 2.0 * kPi * rng.uniform();
        } while (rng.uniform() * (1.0 + tube) > 1.0 + tube * std::cos(phi));
        const double t = 2.0 * kPi * rng.uniform();
        const double ring = 1.0 + tube * std::cos(phi);
        p = {ring * std::cos(t), ring * std::sin(t), tube * std::sin(phi)};
        break;
      }
    }
    pc.coords.row(i) = p;
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Domains

std::string_view to_string(Corruption c) {
  switch (c) {
    case Corruption::clean: return "clean";
    case Corruption::jitter: return "jitter";
    case Corruption::halfspace_dropout: return "halfspace_dropout";
    case Corruption::anisotropic_scale: return "anisotropic_scale";
    case Corruption::density_resample: return "density_resample";
  }
  return "?";
}

Corruption parse_corruption(std::string_view text) {
  for (auto c : {Corruption::clean, Corruption::jitter, Corruption::halfspace_dropout,
                 Corruption::anisotropic_scale, Corruption::density_resample}) {
    if (text == to_string(c)) return c;
  }
  throw InvalidConfig("unknown corruption '" + std::string(text) + "'");
}

void DomainSpec::validate() const {
  if (name.empty() || name.find_first_of("/ \t") != std::string::npos) {
    throw InvalidConfig("domain name '" + name + "' must be non-empty without '/' or spaces");
  }
  if (!(sigma >= 0.0 && sigma <= 0.1)) throw InvalidConfig(name + ": sigma must be in [0, 0.1]");
  if (!(fraction >= 0.0 && fraction <= 0.5)) throw InvalidConfig(name + ": fraction must be in [0, 0.5]");
  for (int a = 0; a < 3; ++a) {
    if (!(scale(a) >= 0.5 && scale(a) <= 2.0)) throw InvalidConfig(name + ": scales must be in [0.5, 2]");
  }
  if (corruption == Corruption::density_resample && resample_n < 8) {
    throw InvalidConfig(name + ": resample_n must be at least 8");
  }
}

namespace {

Points resample(const Points& src, const std::vector<std::size_t>& keep, Eigen::Index n, Rng& rng) {
  Points out(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = src.row(static_cast<Eigen::Index>(keep[rng.below(keep.size())]));
  }
  return out;
}

}  // namespace

PointCloud apply_domain(const PointCloud& cloud, const DomainSpec& spec, Rng& rng, CutPlane* cut) {
  PointCloud out = cloud;
  const Eigen::Index n = cloud.size();
  switch (spec.corruption) {
    case Corruption::clean:
      break;
    case Corruption::jitter:
      if (spec.sigma > 0.0) {
        for (Eigen::Index i = 0; i < n * 3; ++i) out.coords.data()[i] += rng.normal(0.0, spec.sigma);
      }
      break;
    case Corruption::halfspace_dropout: {
      Eigen::RowVector3d normal(rng.normal(), rng.normal(), rng.normal());
      normal.normalize();
      const Eigen::RowVector3d origin = cloud.coords.colwise().mean();
      const Eigen::VectorXd proj = (cloud.coords.rowwise() - origin) * normal.transpose();
      const auto drop = static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(n)));
      std::vector<std::size_t> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return proj[static_cast<Eigen::Index>(a)] < proj[static_cast<Eigen::Index>(b)];
      });
      std::vector<std::size_t> keep(order.begin(), order.end() - static_cast<std::ptrdiff_t>(drop));
      const double offset = proj[static_cast<Eigen::Index>(keep.back())];
      std::sort(keep.begin(), keep.end());
      out.coords = resample(cloud.coords, keep, n, rng);
      if (cut) *cut = CutPlane{normal, origin, offset};
      break;
    }
    case Corruption::anisotropic_scale:
      out.coords = cloud.coords * spec.scale.asDiagonal();
      break;
    case Corruption::density_resample: {
      std::vector<std::size_t> all(static_cast<std::size_t>(n));
      std::iota(all.begin(), all.end(), std::size_t{0});
      const std::size_t k = std::min<std::size_t>(spec.resample_n, all.size());
      // Partial Fisher-Yates for the kept subset.
      for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
      all.resize(k);
      std::sort(all.begin(), all.end());
      out.coords = resample(cloud.coords, all, n, rng);
      break;
    }
  }
  return out;
}

PointCloud preprocess(const PointCloud& cloud, bool train, Rng& rng, const AugmentConfig& aug) {
  PointCloud out = cloud;
  const Eigen::RowVector3d centroid = cloud.coords.colwise().mean();
  out.coords.rowwise() -= centroid;
  const double radius = out.coords.rowwise().norm().maxCoeff();
  if (!(radius > 0.0)) throw DegenerateCloud("cloud '" + cloud.id + "' has all points coincident");
  out.coords /= radius;
  if (train) {
    out.coords *= rng.uniform(aug.scale_lo, aug.scale_hi);
    for (Eigen::Index i = 0; i < out.coords.size(); ++i) {
      out.coords.data()[i] += std::clamp(rng.normal(0.0, aug.jitter_sigma), -aug.jitter_clip, aug.jitter_clip);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// .xyz files

void write_cloud(std::ostream& os, const PointCloud& cloud) {
  os << "N " << cloud.size() << ' ' << cloud.label << ' ' << cloud.domain_id << '\n';
  char buf[128];
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", cloud.coords(i, 0), cloud.coords(i, 1),
                  cloud.coords(i, 2));
    os << buf;
  }
}

namespace {

std::vector<std::string_view> fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
T parse_field(std::string_view f, const std::string& where) {
  T v{};
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size()) {
    throw ParseError(where + ": cannot parse '" + std::string(f) + "'");
  }
  return v;
}

}  // namespace

PointCloud read_cloud(std::istream& is, const std::string& source) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(source + ":1: missing header");
  const auto head = fields(line);
  const std::string h1 = source + ":1";
  if (head.size() != 4 || head[0] != "N") throw ParseError(h1 + ": expected 'N <count> <label> <domain_id>'");
  const auto count = parse_field<long long>(head[1], h1);
  if (count < 0) throw ParseError(h1 + ": negative count");
  PointCloud pc;
  pc.label = parse_field<int>(head[2], h1);
  pc.domain_id = parse_field<int>(head[3], h1);
  pc.coords.resize(count, 3);
  long long row = 0;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    const auto f = fields(line);
    if (f.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (row >= count) throw CountMismatch(where + ": more than " + std::to_string(count) + " points");
    if (f.size() != 3) throw ParseError(where + ": expected 'x y z'");
    for (int a = 0; a < 3; ++a) pc.coords(row, a) = parse_field<double>(f[static_cast<std::size_t>(a)], where);
    ++row;
  }
  if (row != count) {
    throw CountMismatch(source + ": header says " + std::to_string(count) + " points, found " + std::to_string(row));
  }
  return pc;
}

void write_cloud(const PointCloud& cloud, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  write_cloud(os, cloud);
  if (!os) throw IoError("write failed for " + path.string());
}

PointCloud read_cloud(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  PointCloud pc = read_cloud(is, path.string());
  pc.id = path.stem().string();
  return pc;
}

// ---------------------------------------------------------------------------
// Manifest and tasks

Manifest Manifest::standard() {
  Manifest m;
  DomainSpec clean{"clean", Corruption::clean};
  clean.seed = 1;
  DomainSpec noisy{"noisy", Corruption::jitter};
  noisy.sigma = 0.04;
  noisy.seed = 2;
  DomainSpec occluded{"occluded", Corruption::halfspace_dropout};
  occluded.fraction = 0.4;
  occluded.seed = 3;
  DomainSpec stretched{"stretched", Corruption::anisotropic_scale};
  stretched.scale = {1.6, 1.0, 0.6};
  stretched.seed = 4;
  m.domains = {clean, noisy, occluded, stretched};
  return m;
}

void Manifest::validate() const {
  if (classes.empty()) throw InvalidConfig("manifest lists no classes");
  for (const auto& c : classes) class_id(c);
  if (domains.size() < 3) throw InvalidConfig("need at least 3 domains for 2 sources per task");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    domains[i].validate();
    for (std::size_t j = 0; j < i; ++j) {
      if (domains[j].name == domains[i].name) throw InvalidConfig("duplicate domain '" + domains[i].name + "'");
    }
  }
  if (points < 8) throw InvalidConfig("points must be at least 8");
  if (train_per_class == 0 || test_per_class == 0) throw InvalidConfig("empty train or test split");
}

Manifest parse_manifest(const KvDocument& doc) {
  Manifest m;
  m.domains.clear();
  const KvSection& top = *doc.section("");
  m.seed = static_cast<std::uint64_t>(doc.get_int(top, "seed", static_cast<long long>(m.seed)));
  m.points = static_cast<std::size_t>(doc.get_int(top, "points", static_cast<long long>(m.points)));
  m.train_per_class = static_cast<std::size_t>(doc.get_int(top, "train_per_class", static_cast<long long>(m.train_per_class)));
  m.val_per_class = static_cast<std::size_t>(doc.get_int(top, "val_per_class", static_cast<long long>(m.val_per_class)));
  m.test_per_class = static_cast<std::size_t>(doc.get_int(top, "test_per_class", static_cast<long long>(m.test_per_class)));
  m.classes = doc.get_list(top, "classes", m.classes);
  for (const auto& sec : doc.sections) {
    if (sec.name.rfind("domain ", 0) != 0) {
      if (!sec.name.empty()) throw ParseError(doc.source + ":" + std::to_string(sec.line) + ": unknown section '" + sec.name + "'");
      continue;
    }
    DomainSpec d;
    d.name = trim(std::string_view(sec.name).substr(7));
    d.corruption = parse_corruption(doc.get(sec, "corruption", "clean"));
    d.sigma = doc.get_double(sec, "sigma", 0.0);
    d.fraction = doc.get_double(sec, "fraction", 0.0);
    const auto sc = doc.get_list(sec, "scale", {"1", "1", "1"});
    if (sc.size() != 3) throw ParseError(doc.source + ":" + std::to_string(sec.line) + ": scale needs 3 values");
    for (int a = 0; a < 3; ++a) d.scale(a) = parse_field<double>(sc[static_cast<std::size_t>(a)], doc.source);
    d.resample_n = static_cast<std::size_t>(doc.get_int(sec, "resample_n", 0));
    d.seed = static_cast<std::uint64_t>(doc.get_int(sec, "seed", static_cast<long long>(m.domains.size() + 1)));
    m.domains.push_back(std::move(d));
  }
  if (m.domains.empty()) m.domains = Manifest::standard().domains;
  m.validate();
  return m;
}

Manifest load_manifest(const fs::path& path) { return parse_manifest(load_kv(path)); }

void write_manifest(std::ostream& os, const Manifest& m) {
  os << "seed = " << m.seed << "\npoints = " << m.points << "\ntrain_per_class = " << m.train_per_class
     << "\nval_per_class = " << m.val_per_class << "\ntest_per_class = " << m.test_per_class << "\nclasses = ";
  for (std::size_t i = 0; i < m.classes.size(); ++i) os << (i ? ", " : "") << m.classes[i];
  os << '\n';
  char buf[96];
  for (const auto& d : m.domains) {
    os << "\n[domain " << d.name << "]\ncorruption = " << to_string(d.corruption) << "\nseed = " << d.seed << '\n';
    switch (d.corruption) {
      case Corruption::jitter:
        std::snprintf(buf, sizeof buf, "%.17g", d.sigma);
        os << "sigma = " << buf << '\n';
        break;
      case Corruption::halfspace_dropout:
        std::snprintf(buf, sizeof buf, "%.17g", d.fraction);
        os << "fraction = " << buf << '\n';
        break;
      case Corruption::anisotropic_scale:
        std::snprintf(buf, sizeof buf, "%.17g, %.17g, %.17g", d.scale(0), d.scale(1), d.scale(2));
        os << "scale = " << buf << '\n';
        break;
      case Corruption::density_resample:
        os << "resample_n = " << d.resample_n << '\n';
        break;
      case Corruption::clean:
        break;
    }
  }
}

std::string sample_id(const std::string& domain, std::string_view split, const std::string& cls, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return domain + "/" + std::string(split) + "/" + cls + "_" + buf;
}

PointCloud make_sample(const Manifest& m, std::size_t domain, int cls, std::string_view split, std::size_t index) {
  const DomainSpec& spec = m.domains.at(domain);
  const std::string& cname = m.classes.at(static_cast<std::size_t>(cls));
  const std::string id = sample_id(spec.name, split, cname, index);
  Rng rng(mix_seed(mix_seed(m.seed, spec.seed), hash_id(id)));
  PointCloud pc = apply_domain(generate_shape(class_id(cname), m.points, rng), spec, rng);
  pc.label = cls;
  pc.domain_id = static_cast<int>(domain);
  pc.id = id;
  return pc;
}

TaskSplit make_task(const Manifest& m, std::size_t target) {
  if (target >= m.domains.size()) throw InvalidConfig("task " + std::to_string(target) + " out of range");
  TaskSplit t;
  t.target = target;
  t.target_name = m.domains[target].name;
  for (std::size_t d = 0; d < m.domains.size(); ++d) {
    for (std::size_t c = 0; c < m.classes.size(); ++c) {
      if (d == target) {
        for (std::size_t i = 0; i < m.test_per_class; ++i) {
          t.target_test.push_back(sample_id(m.domains[d].name, "test", m.classes[c], i));
        }
        continue;
      }
      for (std::size_t i = 0; i < m.train_per_class + m.val_per_class; ++i) {
        auto& dst = i < m.train_per_class ? t.source_train : t.source_val;
        dst.push_back(sample_id(m.domains[d].name, "train", m.classes[c], i));
      }
    }
  }
  return t;
}

void write_task(std::ostream& os, const TaskSplit& t) {
  os << "# leave-one-out task: domain '" << t.target_name << "' is the unseen target\n";
  os << "target = " << t.target_name << "\ntarget_index = " << t.target << '\n';
  const std::pair<const char*, const std::vector<std::string>*> lists[] = {
      {"source_train", &t.source_train}, {"source_val", &t.source_val}, {"target_test", &t.target_test}};
  for (const auto& [name, ids] : lists) {
    os << "\n[" << name << "]\n";
    for (const auto& id : *ids) os << id << '\n';
  }
}

TaskSplit read_task(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  TaskSplit t;
  std::vector<std::string>* cur = nullptr;
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line == "[source_train]") cur = &t.source_train;
      else if (line == "[source_val]") cur = &t.source_val;
      else if (line == "[target_test]") cur = &t.target_test;
      else throw ParseError(where + ": unknown section " + line);
      continue;
    }
    if (!cur) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
      const std::string key = trim(std::string_view(line).substr(0, eq));
      const std::string val = trim(std::string_view(line).substr(eq + 1));
      if (key == "target") t.target_name = val;
      else if (key == "target_index") t.target = parse_field<std::size_t>(val, where);
      else throw ParseError(where + ": unknown key '" + key + "'");
      continue;
    }
    cur->push_back(line);
  }
  return t;
}

BenchmarkSummary build_benchmark(const Manifest& m, const fs::path& root, bool force) {
  m.validate();
  std::error_code ec;
  if (fs::exists(root, ec) && !fs::is_empty(root, ec)) {
    if (!force) throw IoError(root.string() + " is not empty; pass --force to regenerate");
    fs::remove_all(root / "domains", ec);
    fs::remove_all(root / "tasks", ec);
    fs::remove(root / "manifest.txt", ec);
  }
  BenchmarkSummary summary;
  auto mkdirs = [](const fs::path& p) {
    std::error_code e;
    fs::create_directories(p, e);
    if (e) throw IoError("cannot create " + p.string() + ": " + e.message());
  };
  mkdirs(root / "tasks");
  {
    std::ofstream os(root / "manifest.txt", std::ios::binary);
    if (!os) throw IoError("cannot write " + (root / "manifest.txt").string());
    write_manifest(os, m);
  }
  for (std::size_t d = 0; d < m.domains.size(); ++d) {
    for (const std::string split : {"train", "test"}) {
      mkdirs(root / "domains" / m.domains[d].name / split);
      const std::size_t per_class = split == "train" ? m.train_per_class + m.val_per_class : m.test_per_class;
      for (std::size_t c = 0; c < m.classes.size(); ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
          const PointCloud pc = make_sample(m, d, static_cast<int>(c), split, i);
          write_cloud(pc, root / "domains" / (pc.id + ".xyz"));
        }
        summary.counts[m.domains[d].name][split][m.classes[c]] = per_class;
      }
    }
  }
  for (std::size_t d = 0; d < m.domains.size(); ++d) {
    const fs::path p = root / "tasks" / ("task_" + std::to_string(d) + ".split");
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot write " + p.string());
    write_task(os, make_task(m, d));
    ++summary.tasks;
  }
  return summary;
}

PointCloud DatasetReader::load(const std::string& id) {
  log_.push_back(id);
  PointCloud pc = read_cloud(root_ / "domains" / (id + ".xyz"));
  pc.id = id;
  return pc;
}

int domain_of(const Manifest& m, std::string_view id) {
  const auto slash = id.find('/');
  const auto name = id.substr(0, slash);
  for (std::size_t d = 0; d < m.domains.size(); ++d) {
    if (m.domains[d].name == name) return static_cast<int>(d);
  }
  return -1;
}

}  // namespace pdgr
