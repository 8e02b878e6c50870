#include "pdgr/harness/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "pdgr/harness/trainer.hpp"
#include "pdgr/numerics/errors.hpp"

namespace pdgr {

namespace {

AblationVariant with(std::string name, ModelConfig m, ShiftMode shift, AlignMode align) {
  m.shift_mode = shift;
  m.align_mode = align;
  return {std::move(name), std::move(m)};
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string pct(double mean, double sd) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%6.2f ± %5.2f", 100.0 * mean, 100.0 * sd);
  return buf;
}

}  // namespace

std::vector<AblationVariant> ablation_variants(std::string_view suite, const ModelConfig& base) {
  const AlignMode a = base.align_mode;
  const ShiftMode s = base.shift_mode;
  if (suite == "shift") {
    return {with("KNN-RandOne", base, ShiftMode::knn_rand_one, a), with("KNN-Avg", base, ShiftMode::knn_avg, a),
            with("KNN-WAvg", base, ShiftMode::knn_wavg, a), with("AGT-Shift", base, ShiftMode::agt, a)};
  }
  if (suite == "align") {
    return {with("none", base, s, AlignMode::none), with("only-v", base, s, AlignMode::v_only),
            with("k-and-v", base, s, AlignMode::k_and_v), with("only-k", base, s, AlignMode::k_only)};
  }
  if (suite == "modules") {
    return {with("baseline", base, ShiftMode::qshift, AlignMode::none),
            with("AGTS", base, ShiftMode::agt, AlignMode::none), with("KDA", base, ShiftMode::qshift, AlignMode::k_only),
            with("AGTS+KDA", base, ShiftMode::agt, AlignMode::k_only)};
  }
  if (suite == "scale") {
    ModelConfig small = base, large = base;
    for (auto& b : small.stage_blocks) b = (b + 1) / 2;
    for (auto& w : large.stage_widths) w = (w * 3 / 2 + 3) / 4 * 4;
    for (auto& p : large.stage_points) p *= 2;
    return {{"Base", small}, {"Standard", base}, {"Large", large}};
  }
  throw InvalidConfig("unknown ablation suite '" + std::string(suite) + "' (expected shift, align, scale or modules)");
}

std::vector<AblationCell> run_ablation(const RunConfig& base, std::string_view suite,
                                       std::span<const std::uint64_t> seeds, std::span<const std::size_t> tasks,
                                       CellCache* cache, const CellFn& on_cell) {
  if (seeds.empty() || tasks.empty()) throw InvalidConfig("ablation needs at least one seed and one task");
  std::vector<AblationCell> cells;
  for (const auto& v : ablation_variants(suite, base.model)) {
    for (std::size_t task : tasks) {
      for (std::uint64_t seed : seeds) {
        RunConfig cfg = base;
        cfg.model = v.model;
        cfg.task = task;
        cfg.seed = seed;
        if (!base.out_dir.empty()) {
          cfg.out_dir = base.out_dir / v.name / ("task_" + std::to_string(task)) / ("seed_" + std::to_string(seed));
        }
        RunConfig keyed = cfg;
        keyed.out_dir.clear();
        std::ostringstream key;
        write_run_config(key, keyed);

        AblationCell cell;
        if (cache && cache->count(key.str())) {
          cell = cache->at(key.str());
        } else {
          const RunReport r = run_training(cfg);
          cell.accuracy = r.target_acc;
          cell.seconds = r.seconds;
          if (cache) (*cache)[key.str()] = cell;
        }
        cell.variant = v.name;
        cell.task = task;
        cell.seed = seed;
        cells.push_back(cell);
        if (on_cell) on_cell(cell);
      }
    }
  }
  return cells;
}

AblationTable summarize_ablation(std::string_view suite, const std::vector<std::string>& rows,
                                 const std::vector<std::size_t>& tasks, const std::vector<std::string>& task_names,
                                 const std::vector<AblationCell>& cells) {
  AblationTable t;
  t.suite = std::string(suite);
  t.rows = rows;
  t.tasks = task_names;
  for (const auto& row : rows) {
    std::vector<double> means, sds;
    std::map<std::uint64_t, std::vector<double>> per_seed;
    for (std::size_t task : tasks) {
      std::vector<double> acc;
      for (const auto& c : cells) {
        if (c.variant == row && c.task == task) {
          acc.push_back(c.accuracy);
          per_seed[c.seed].push_back(c.accuracy);
        }
      }
      if (acc.empty()) throw InvalidConfig("no results for " + row + " on task " + std::to_string(task));
      means.push_back(mean_of(acc));
      sds.push_back(sd_of(acc));
    }
    std::vector<double> seed_avgs;
    for (const auto& [seed, accs] : per_seed) seed_avgs.push_back(mean_of(accs));
    t.mean.push_back(means);
    t.sd.push_back(sds);
    t.avg.push_back(mean_of(means));
    t.avg_sd.push_back(sd_of(seed_avgs));
  }
  for (double a : t.avg) t.gain.push_back(a - t.avg.front());
  return t;
}

void write_ablation_text(std::ostream& os, const AblationTable& t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-14s", ("[" + t.suite + "]").c_str());
  os << buf;
  for (const auto& name : t.tasks) {
    std::snprintf(buf, sizeof buf, " | %15s", ("->" + name).c_str());
    os << buf;
  }
  os << " |            Avg. |   Gain\n";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%-14s", t.rows[r].c_str());
    os << buf;
    for (std::size_t c = 0; c < t.tasks.size(); ++c) os << " | " << pct(t.mean[r][c], t.sd[r][c]);
    std::snprintf(buf, sizeof buf, " | %+6.2f\n", 100.0 * t.gain[r]);
    os << " | " << pct(t.avg[r], t.avg_sd[r]) << buf;
  }
}

void write_ablation_csv(std::ostream& os, const AblationTable& t) {
  os << "variant";
  for (const auto& name : t.tasks) os << "," << name << "_mean," << name << "_sd";
  os << ",avg,avg_sd,gain\n";
  char buf[48];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    os << t.rows[r];
    for (std::size_t c = 0; c < t.tasks.size(); ++c) os << "," << num(t.mean[r][c]) << "," << num(t.sd[r][c]);
    os << "," << num(t.avg[r]) << "," << num(t.avg_sd[r]) << "," << num(t.gain[r]) << "\n";
  }
}

void write_cells_csv(std::ostream& os, const std::vector<AblationCell>& cells) {
  os << "variant,task,seed,accuracy,seconds\n";
  char buf[64];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.3f\n", c.accuracy, c.seconds);
    os << c.variant << "," << c.task << "," << c.seed << buf;
  }
}

}  // namespace pdgr
