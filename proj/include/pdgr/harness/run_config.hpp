#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "pdgr/data/kv.hpp"
#include "pdgr/model/model.hpp"

namespace pdgr {

/// Everything that determines a training run. Together with the dataset it
/// fixes every number the run emits.
struct RunConfig {
  std::filesystem::path data_root = "data";
  std::size_t task = 0;  // index of the held-out domain
  ModelConfig model = ModelConfig::standard();
  double lr = 1e-4;
  double lr_min = 0.0;
  double weight_decay = 1e-4;
  std::size_t epochs = 30;
  std::size_t batch_per_domain = 4;
  double lambda1 = 1.0;
  double lambda2 = 0.3;
  std::uint64_t seed = 0;
  std::size_t train_limit = 0;  // cap on training samples per domain and class, 0 = all
  bool augment = true;
  std::filesystem::path out_dir;  // empty: write nothing

  /// Throws InvalidConfig.
  void validate() const;
};

/// Sections: [run] and [model]. [model] may name a `preset` (base, standard,
/// large) that the remaining keys override. Unknown keys are errors.
RunConfig parse_run_config(const KvDocument& doc);
/// Relative data and output paths are resolved against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
/// Round-trips through parse_run_config exactly.
void write_run_config(std::ostream& os, const RunConfig& cfg);

}  // namespace pdgr
