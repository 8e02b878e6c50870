// pdgr: train, evaluate, ablate, benchmark and generate data.
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "pdgr/data/data.hpp"
#include "pdgr/harness/ablation.hpp"
#include "pdgr/harness/bench.hpp"
#include "pdgr/harness/trainer.hpp"
#include "pdgr/numerics/errors.hpp"

namespace fs = std::filesystem;
using namespace pdgr;

namespace {

void write_to(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  body(out);
}

void print_epoch(const EpochStats& e) {
  std::printf("epoch %3zu  lr %.2e  cls %.4f  kda %.4f  total %.4f  val %.4f\n", e.epoch, e.lr, e.cls, e.kda,
              e.total, e.val_acc);
  std::fflush(stdout);
}

int cmd_train(const fs::path& config, std::optional<std::uint64_t> seed, const fs::path& out) {
  RunConfig cfg = load_run_config(config);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.out_dir = out;
  const RunReport r = run_training(cfg, print_epoch);
  write_report_text(std::cout, r);
  return 0;
}

int cmd_eval(const fs::path& checkpoint, std::size_t task, fs::path config, const fs::path& data,
             const fs::path& out) {
  if (config.empty()) config = checkpoint.parent_path() / "config.txt";
  RunConfig cfg = load_run_config(config);
  if (!data.empty()) cfg.data_root = data;
  cfg.task = task;
  ModelState state = init_model(cfg.model, cfg.seed);
  state.load_named_tensors(load_checkpoint(checkpoint));

  const TaskData td = load_task(cfg);
  DatasetReader reader(cfg.data_root);
  const EvalResult r = evaluate(state, load_samples(reader, td.split.target_test));
  write_accuracy_csv(std::cout, r, td.manifest.classes);

  const fs::path dir = out.empty() ? checkpoint.parent_path() / ("eval_task_" + std::to_string(task)) : out;
  write_to(dir / "accuracy.csv", [&](std::ostream& os) { write_accuracy_csv(os, r, td.manifest.classes); });
  write_to(dir / "confusion.csv", [&](std::ostream& os) { write_confusion_csv(os, r, td.manifest.classes); });
  write_to(dir / "embeddings.csv", [&](std::ostream& os) { write_embeddings_csv(os, r); });
  std::cout << "wrote " << dir.string() << "/{accuracy,confusion,embeddings}.csv\n";
  return 0;
}

int cmd_ablate(const std::string& suite, const fs::path& config, const std::vector<std::uint64_t>& seeds,
               const std::vector<std::size_t>& tasks, const fs::path& out) {
  if (seeds.size() < 3) std::cerr << "warning: fewer than 3 seeds\n";
  RunConfig base = load_run_config(config);
  base.out_dir = out.empty() ? fs::path() : out / "runs";
  const TaskData td = load_task(base);
  std::vector<std::string> names;
  for (std::size_t t : tasks) {
    if (t >= td.manifest.domains.size()) throw InvalidConfig("task " + std::to_string(t) + " out of range");
    names.push_back(td.manifest.domains[t].name);
  }
  const auto cells = run_ablation(base, suite, seeds, tasks, nullptr, [](const AblationCell& c) {
    std::printf("%-12s task %zu seed %llu  acc %.4f  (%.1f s)\n", c.variant.c_str(), c.task,
                static_cast<unsigned long long>(c.seed), c.accuracy, c.seconds);
    std::fflush(stdout);
  });
  std::vector<std::string> rows;
  for (const auto& v : ablation_variants(suite, base.model)) rows.push_back(v.name);
  const AblationTable table = summarize_ablation(suite, rows, tasks, names, cells);
  write_ablation_text(std::cout, table);
  if (!out.empty()) {
    write_to(out / ("ablation_" + suite + ".txt"), [&](std::ostream& os) { write_ablation_text(os, table); });
    write_to(out / ("ablation_" + suite + ".csv"), [&](std::ostream& os) { write_ablation_csv(os, table); });
    write_to(out / ("ablation_" + suite + "_cells.csv"), [&](std::ostream& os) { write_cells_csv(os, cells); });
  }
  return 0;
}

int cmd_bench(const std::vector<std::string>& kernels, const std::vector<std::size_t>& lengths, std::size_t channels,
              bool no_time, const std::vector<std::size_t>& agt_sizes, const fs::path& out) {
  std::vector<BenchRow> rows;
  auto report_slope = [](const std::vector<BenchRow>& part, bool seconds) {
    std::vector<double> x, y;
    for (const auto& r : part) {
      x.push_back(static_cast<double>(r.length));
      y.push_back(seconds ? r.seconds : r.flops);
    }
    return x.size() >= 2 ? loglog_slope(x, y) : 0.0;
  };
  for (const auto& k : kernels) {
    const auto part = bench_kernel(parse_bench_kernel(k), lengths, channels, !no_time);
    std::printf("%-8s FLOPs log-log slope %.4f", k.c_str(), report_slope(part, false));
    if (!no_time) std::printf(", wall-clock slope %.4f", report_slope(part, true));
    std::printf("\n");
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (!agt_sizes.empty()) {
    const auto part = bench_agt(agt_sizes, 32, AgtConfig{});
    std::printf("agt_shift wall-clock log-log slope %.4f\n", report_slope(part, true));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_bench_csv(std::cout, rows);
  if (!out.empty()) write_to(out, [&](std::ostream& os) { write_bench_csv(os, rows); });
  return 0;
}

int cmd_gen_data(const fs::path& manifest, const fs::path& root, bool force) {
  const Manifest m = manifest.empty() ? Manifest::standard() : load_manifest(manifest);
  const BenchmarkSummary s = build_benchmark(m, root, force);
  for (const auto& [domain, splits] : s.counts) {
    for (const auto& [split, classes] : splits) {
      std::printf("%-10s %-5s", domain.c_str(), split.c_str());
      for (const auto& [cls, n] : classes) std::printf("  %s=%zu", cls.c_str(), n);
      std::printf("\n");
    }
  }
  std::printf("%zu tasks written to %s\n", s.tasks, root.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-generalised point cloud classifier with bidirectional WKV attention"};
  app.require_subcommand(1);

  fs::path config, out, checkpoint, data, manifest, root = "data";
  std::optional<std::uint64_t> seed;
  std::size_t task = 0, channels = 128;
  std::string suite;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::size_t> tasks{0, 1, 2, 3};
  std::vector<std::string> kernels;
  std::vector<std::size_t> lengths{1024, 2048, 4096, 8192, 16384};
  std::vector<std::size_t> agt_sizes;
  bool force = false, no_time = false;

  auto* train = app.add_subcommand("train", "train on the source domains of one task");
  train->add_option("--config", config, "run config file")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--out", out, "override the output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a task's target domain");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--task", task, "held-out domain index")->required();
  eval->add_option("--config", config, "run config (default: config.txt next to the checkpoint)");
  eval->add_option("--data", data, "benchmark root override");
  eval->add_option("--out", out, "directory for the CSV outputs");

  auto* ablate = app.add_subcommand("ablate", "run an ablation suite over tasks and seeds");
  ablate->add_option("--suite", suite, "shift, align, scale or modules")
      ->required()
      ->check(CLI::IsMember({"shift", "align", "scale", "modules"}));
  ablate->add_option("--config", config, "base run config")->required();
  ablate->add_option("--seeds", seeds, "seeds")->delimiter(',');
  ablate->add_option("--tasks", tasks, "task indices")->delimiter(',');
  ablate->add_option("--out", out, "output directory");

  auto* bench = app.add_subcommand("bench", "FLOPs and wall-clock scaling");
  bench->add_option("--kernel", kernels, "biwkv and/or softmax")->delimiter(',')->check(CLI::IsMember({"biwkv", "softmax"}));
  bench->add_option("--lengths", lengths, "sequence lengths")->delimiter(',');
  bench->add_option("--channels", channels, "attention width");
  bench->add_flag("--no-time", no_time, "analytic FLOPs only");
  bench->add_option("--agt-sizes", agt_sizes, "point counts for the AGT-Shift scaling run")->delimiter(',');
  bench->add_option("--out", out, "CSV output file");

  auto* gen = app.add_subcommand("gen-data", "materialise the synthetic benchmark");
  gen->add_option("--manifest", manifest, "manifest file (default: built-in four-domain manifest)");
  gen->add_option("--root", root, "output directory");
  gen->add_flag("--force", force, "overwrite an existing benchmark");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*train) return cmd_train(config, seed, out);
    if (*eval) return cmd_eval(checkpoint, task, config, data, out);
    if (*ablate) return cmd_ablate(suite, config, seeds, tasks, out);
    if (*bench) {
      if (kernels.empty() && agt_sizes.empty()) kernels = {"biwkv", "softmax"};
      return cmd_bench(kernels, lengths, channels, no_time, agt_sizes, out);
    }
    if (*gen) return cmd_gen_data(manifest, root, force);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
