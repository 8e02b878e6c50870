#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "pdgr/data/data.hpp"
#include "pdgr/harness/run_config.hpp"
#include "pdgr/model/model.hpp"

namespace pdgr {

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;       // at the epoch's first step
  double cls = 0.0;      // mean over the epoch's steps
  double kda = 0.0;
  double total = 0.0;
  double val_acc = 0.0;  // source validation accuracy after the epoch
};

struct TrainResult {
  ModelState best;  // highest source-validation accuracy, earliest on ties
  ModelState last;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  std::vector<EpochStats> epochs;
  std::vector<double> step_losses;  // total loss of every step, in order
  double seconds = 0.0;
};

/// Reads the benchmark's manifest and the task split of `cfg.task`.
struct TaskData {
  Manifest manifest;
  TaskSplit split;
};
TaskData load_task(const RunConfig& cfg);

using ProgressFn = std::function<void(const EpochStats&)>;

/// Trains on the source domains of `task` only, reading samples through
/// `reader`. Each step draws batch_per_domain samples from every source
/// domain. When cfg.out_dir is set, writes best.ckpt, last.ckpt and
/// config.txt there.
TrainResult train(const RunConfig& cfg, const TaskData& task, DatasetReader& reader,
                  const ProgressFn& progress = {});

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class;                 // NaN for a class with no samples
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<int> predictions;
  std::vector<std::vector<double>> embeddings;  // pooled features, input of the head
};

/// Samples must already be preprocessed.
EvalResult evaluate(const ModelState& state, const std::vector<PointCloud>& samples);

/// Reads and preprocesses (eval mode) the given ids.
std::vector<PointCloud> load_samples(DatasetReader& reader, const std::vector<std::string>& ids);

/// id,label,prediction,e0,e1,...
void write_embeddings_csv(std::ostream& os, const EvalResult& r);
/// true_class,<class names...>, one row per true class.
void write_confusion_csv(std::ostream& os, const EvalResult& r, const std::vector<std::string>& classes);
/// class,count,accuracy then an overall row.
void write_accuracy_csv(std::ostream& os, const EvalResult& r, const std::vector<std::string>& classes);

struct RunReport {
  std::size_t task = 0;
  std::string target;
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  double target_acc = 0.0;
  double seconds = 0.0;
  std::size_t parameters = 0;
  double flops = 0.0;  // analytic forward FLOPs per sample
};

/// Full train command: train, then evaluate the best checkpoint on the
/// target test split. Writes report.txt, report.csv and summary.csv next
/// to the checkpoints when cfg.out_dir is set.
RunReport run_training(const RunConfig& cfg, const ProgressFn& progress = {});

void write_report_text(std::ostream& os, const RunReport& r);
/// epoch,lr,cls_loss,kda_loss,total_loss,val_acc
void write_report_csv(std::ostream& os, const RunReport& r);
/// task,target,seed,target_acc,best_val_acc,best_epoch,parameters,flops,seconds
void write_summary_csv(std::ostream& os, const RunReport& r, bool header = true);

}  // namespace pdgr
