#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdgr/harness/run_config.hpp"

namespace pdgr {

struct AblationVariant {
  std::string name;
  ModelConfig model;
};

/// Rows of a suite, baseline first:
///   shift   KNN-RandOne, KNN-Avg, KNN-WAvg, AGT-Shift
///   align   none, only-v, k-and-v, only-k
///   scale   Base (blocks halved), Standard (as given), Large (1.5x widths, 2x points)
///   modules baseline (Q-Shift, no alignment), AGTS, KDA, AGTS+KDA
/// Settings a suite does not vary are taken from `base`.
std::vector<AblationVariant> ablation_variants(std::string_view suite, const ModelConfig& base);

struct AblationCell {
  std::string variant;
  std::size_t task = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;  // target accuracy in [0, 1]
  double seconds = 0.0;
};

struct AblationTable {
  std::string suite;
  std::vector<std::string> rows;
  std::vector<std::string> tasks;             // column headers (target domain names)
  std::vector<std::vector<double>> mean, sd;  // [row][task], over seeds
  std::vector<double> avg;                    // mean of the row's task means
  std::vector<double> avg_sd;                 // spread over seeds of the per-seed task average
  std::vector<double> gain;                   // avg - avg of the first row
};

/// Cells already in `cache` (keyed by the cell's full config text) are not
/// retrained; new results are added to it.
using CellCache = std::map<std::string, AblationCell>;
using CellFn = std::function<void(const AblationCell&)>;

std::vector<AblationCell> run_ablation(const RunConfig& base, std::string_view suite,
                                       std::span<const std::uint64_t> seeds, std::span<const std::size_t> tasks,
                                       CellCache* cache = nullptr, const CellFn& on_cell = {});

/// Cells of rows missing from `cells` are an error.
AblationTable summarize_ablation(std::string_view suite, const std::vector<std::string>& rows,
                                 const std::vector<std::size_t>& tasks, const std::vector<std::string>& task_names,
                                 const std::vector<AblationCell>& cells);

/// Accuracies as percentages, "mean ± sd".
void write_ablation_text(std::ostream& os, const AblationTable& t);
/// variant,<task>_mean,<task>_sd,...,avg,avg_sd,gain (fractions, not percent)
void write_ablation_csv(std::ostream& os, const AblationTable& t);
/// variant,task,seed,accuracy,seconds
void write_cells_csv(std::ostream& os, const std::vector<AblationCell>& cells);

}  // namespace pdgr
