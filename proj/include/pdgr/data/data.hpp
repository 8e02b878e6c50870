#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pdgr/data/kv.hpp"
#include "pdgr/data/point_cloud.hpp"
#include "pdgr/numerics/rng.hpp"

namespace pdgr {

/// Default class set, in class-id order.
const std::vector<std::string>& default_class_names();
int class_id(std::string_view name);

/// Uniform surface samples of a parametric shape (before normalisation):
/// 0 sphere (radius 1), 1 cube (half-extent 1), 2 cylinder (radius 1, height
/// 2a with a in [0.5, 2]), 3 cone (base radius 1, height in [1, 2.5]),
/// 4 torus (R = 1, r in [0.25, 0.45]). Throws UnknownClass.
PointCloud generate_shape(int class_id, std::size_t n, Rng& rng);

enum class Corruption { clean, jitter, halfspace_dropout, anisotropic_scale, density_resample };

std::string_view to_string(Corruption c);
Corruption parse_corruption(std::string_view text);

struct DomainSpec {
  std::string name;
  Corruption corruption = Corruption::clean;
  double sigma = 0.0;                   // jitter, <= 0.1
  double fraction = 0.0;                // halfspace_dropout, <= 0.5
  Eigen::Vector3d scale{1.0, 1.0, 1.0};  // anisotropic_scale, each in [0.5, 2]
  std::size_t resample_n = 0;           // density_resample
  std::uint64_t seed = 0;

  void validate() const;
};

/// jitter: iid N(0, sigma) per coordinate. halfspace_dropout: removes the
/// `fraction` of points beyond a random plane through the centroid (offset to
/// the fraction quantile), then resamples survivors with replacement back to
/// N. anisotropic_scale: per-axis scaling. density_resample: keeps a random
/// subset of resample_n points and resamples it with replacement back to N.
struct CutPlane {
  Eigen::RowVector3d normal;  // unit
  Eigen::RowVector3d origin;  // centroid of the input cloud
  double offset = 0.0;        // survivors satisfy normal . (p - origin) <= offset
};

PointCloud apply_domain(const PointCloud& cloud, const DomainSpec& spec, Rng& rng, CutPlane* cut = nullptr);

struct AugmentConfig {
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
};

/// Centres on the centroid and scales to max radius 1; in training mode also
/// applies a random uniform scale and clipped Gaussian jitter.
/// Throws DegenerateCloud when all points coincide.
PointCloud preprocess(const PointCloud& cloud, bool train, Rng& rng, const AugmentConfig& aug = {});

/// Text format: "N <count> <label> <domain_id>", then one "x y z" line per
/// point printed with 17 significant digits.
void write_cloud(std::ostream& os, const PointCloud& cloud);
PointCloud read_cloud(std::istream& is, const std::string& source = "<stream>");
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);
/// The cloud id is the file stem.
PointCloud read_cloud(const std::filesystem::path& path);

struct Manifest {
  std::vector<std::string> classes = default_class_names();
  std::vector<DomainSpec> domains;
  std::size_t points = 1024;
  std::size_t train_per_class = 200;
  std::size_t val_per_class = 20;
  std::size_t test_per_class = 50;
  std::uint64_t seed = 7;

  /// clean, jitter, occluded and stretched domains.
  static Manifest standard();
  void validate() const;
};

Manifest parse_manifest(const KvDocument& doc);
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& os, const Manifest& m);

/// Sample id: "<domain>/<split>/<class>_<index>" (split is train or test).
std::string sample_id(const std::string& domain, std::string_view split, const std::string& cls,
                      std::size_t index);

/// Deterministic sample from (manifest seed, domain seed, id).
PointCloud make_sample(const Manifest& m, std::size_t domain, int cls, std::string_view split,
                       std::size_t index);

struct TaskSplit {
  std::size_t target = 0;  // held-out domain index
  std::string target_name;
  std::vector<std::string> source_train;
  std::vector<std::string> source_val;
  std::vector<std::string> target_test;
};

/// Leave-one-out split for holding out domain `target`.
TaskSplit make_task(const Manifest& m, std::size_t target);
void write_task(std::ostream& os, const TaskSplit& t);
TaskSplit read_task(const std::filesystem::path& path);

struct BenchmarkSummary {
  // domain -> split -> class -> count
  std::map<std::string, std::map<std::string, std::map<std::string, std::size_t>>> counts;
  std::size_t tasks = 0;
};

/// Writes manifest.txt, domains/<name>/{train,test}/<class>_<i>.xyz (train
/// holds train + val samples) and tasks/task_<k>.split. Refuses a non-empty
/// root unless `force`. Throws IoError.
BenchmarkSummary build_benchmark(const Manifest& m, const std::filesystem::path& root, bool force = false);

/// Reads samples by id from a benchmark root and records every id it opens.
class DatasetReader {
 public:
  explicit DatasetReader(std::filesystem::path root) : root_(std::move(root)) {}

  PointCloud load(const std::string& id);
  const std::vector<std::string>& access_log() const { return log_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::vector<std::string> log_;
};

/// Domain index of an id produced by sample_id; -1 when unknown.
int domain_of(const Manifest& m, std::string_view id);

}  // namespace pdgr
