#include "pdgr/harness/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "pdgr/harness/bench.hpp"
#include "pdgr/numerics/errors.hpp"
#include "pdgr/numerics/optim.hpp"

namespace pdgr {

namespace {

// "<domain>/<split>/<class>_<index>" -> class index, -1 if unknown.
int class_of_id(const Manifest& m, const std::string& id) {
  const auto slash = id.rfind('/');
  const auto under = id.rfind('_');
  if (slash == std::string::npos || under == std::string::npos || under < slash) return -1;
  const std::string cls = id.substr(slash + 1, under - slash - 1);
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    if (m.classes[c] == cls) return static_cast<int>(c);
  }
  return -1;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  body(out);
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

TaskData load_task(const RunConfig& cfg) {
  TaskData t;
  t.manifest = load_manifest(cfg.data_root / "manifest.txt");
  if (cfg.task >= t.manifest.domains.size()) {
    throw InvalidConfig("task " + std::to_string(cfg.task) + " out of range: the benchmark has " +
                        std::to_string(t.manifest.domains.size()) + " domains");
  }
  if (cfg.model.num_classes != t.manifest.classes.size()) {
    throw InvalidConfig("model has " + std::to_string(cfg.model.num_classes) + " classes, benchmark has " +
                        std::to_string(t.manifest.classes.size()));
  }
  t.split = read_task(cfg.data_root / "tasks" / ("task_" + std::to_string(cfg.task) + ".split"));
  return t;
}

std::vector<PointCloud> load_samples(DatasetReader& reader, const std::vector<std::string>& ids) {
  std::vector<PointCloud> out;
  out.reserve(ids.size());
  Rng unused(0);
  for (const auto& id : ids) out.push_back(preprocess(reader.load(id), false, unused));
  return out;
}

EvalResult evaluate(const ModelState& state, const std::vector<PointCloud>& samples) {
  const std::size_t K = state.config.num_classes;
  EvalResult r;
  r.confusion.assign(K, std::vector<std::size_t>(K, 0));
  std::size_t correct = 0;
  for (const auto& pc : samples) {
    if (pc.label < 0 || static_cast<std::size_t>(pc.label) >= K) {
      throw LabelOutOfRange("sample " + pc.id + " has label " + std::to_string(pc.label));
    }
    const ForwardResult f = forward(pc, state);
    const Vector& logits = f.logits.value().data();
    const int pred = static_cast<int>(argmax(std::span<const double>(logits.data(), logits.size())));
    const Vector& pooled = f.pooled.value().data();
    r.ids.push_back(pc.id);
    r.labels.push_back(pc.label);
    r.predictions.push_back(pred);
    r.embeddings.emplace_back(pooled.data(), pooled.data() + pooled.size());
    ++r.confusion[static_cast<std::size_t>(pc.label)][static_cast<std::size_t>(pred)];
    correct += pred == pc.label;
  }
  r.accuracy = samples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples.size());
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t n = 0;
    for (auto v : r.confusion[c]) n += v;
    r.per_class.push_back(n ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(n)
                            : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

TrainResult train(const RunConfig& cfg, const TaskData& task, DatasetReader& reader, const ProgressFn& progress) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Manifest& m = task.manifest;

  // Source training pool: domain -> class -> samples, optionally capped per class.
  std::map<int, std::map<int, std::vector<PointCloud>>> pool;
  std::set<int> classes;
  std::size_t largest = 0;
  for (const auto& id : task.split.source_train) {
    const int d = domain_of(m, id);
    if (d < 0 || static_cast<std::size_t>(d) == task.split.target) {
      throw InvalidConfig("training id '" + id + "' is not from a source domain");
    }
    const int c = class_of_id(m, id);
    if (c < 0) throw InvalidConfig("training id '" + id + "' names no known class");
    auto& bucket = pool[d][c];
    if (cfg.train_limit > 0 && bucket.size() >= cfg.train_limit) continue;
    bucket.push_back(reader.load(id));
    classes.insert(c);
  }
  if (pool.empty()) throw InvalidConfig("task has no training samples");
  for (const auto& [d, by_class] : pool) {
    std::size_t n = 0;
    for (const auto& [c, v] : by_class) n += v.size();
    largest = std::max(largest, n);
    if (by_class.size() != classes.size()) {
      throw InvalidConfig("source domain " + m.domains[static_cast<std::size_t>(d)].name + " lacks a class");
    }
  }
  const std::vector<PointCloud> val = load_samples(reader, task.split.source_val);

  const std::size_t steps_per_epoch = (largest + cfg.batch_per_domain - 1) / cfg.batch_per_domain;
  const long total_steps = static_cast<long>(steps_per_epoch * cfg.epochs);

  ModelState state = init_model(cfg.model, cfg.seed);
  std::vector<Node> params = state.parameters();
  AdamWState opt;
  Rng rng(mix_seed(cfg.seed, hash_id("train")));

  // Shuffled queues that refill when exhausted.
  struct Queue {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::size_t next(Rng& r) {
      if (cursor == order.size()) {
        shuffle(order, r);
        cursor = 0;
      }
      return order[cursor++];
    }
  };
  auto make_queue = [&](std::size_t n) {
    Queue q;
    for (std::size_t i = 0; i < n; ++i) q.order.push_back(i);
    q.cursor = n;
    return q;
  };
  const std::vector<int> class_list(classes.begin(), classes.end());
  Queue class_queue = make_queue(class_list.size());
  std::map<std::pair<int, int>, Queue> sample_queue;
  for (const auto& [d, by_class] : pool) {
    for (const auto& [c, v] : by_class) sample_queue[{d, c}] = make_queue(v.size());
  }

  TrainResult res;
  res.best_val_acc = -1.0;
  long step = 0;
  const bool align = cfg.model.align_mode != AlignMode::none;
  const std::set<std::size_t> aligned = cfg.model.aligned_layers();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats es;
    es.epoch = epoch;
    es.lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min);
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      // Every domain contributes the same class multiset, so per-domain key
      // statistics differ by domain rather than by which classes were drawn.
      std::vector<int> step_classes;
      for (std::size_t b = 0; b < cfg.batch_per_domain; ++b) step_classes.push_back(class_list[class_queue.next(rng)]);
      std::vector<PointCloud> batch;
      std::vector<int> labels;
      for (auto& [d, by_class] : pool) {
        for (int c : step_classes) {
          const PointCloud& raw = by_class.at(c)[sample_queue[{d, c}].next(rng)];
          batch.push_back(preprocess(raw, cfg.augment, rng));
          labels.push_back(raw.label);
        }
      }
      KeyCollector collector(aligned);
      const Node logits = forward_batch(batch, state, align ? &collector : nullptr, &rng);
      const Node cls = cross_entropy(logits, labels);
      const Node kda = alignment_target(cfg.model.align_mode, collector);
      const Node loss = total_loss(cls, kda, cfg.lambda1, cfg.lambda2);
      for (auto& p : params) p.zero_grad();
      backward(loss);
      adamw_step(params, cosine_lr(step, total_steps, cfg.lr, cfg.lr_min), cfg.weight_decay, {}, opt);
      state.clamp_mix();

      es.cls += cls.item();
      es.kda += kda.item();
      es.total += loss.item();
      res.step_losses.push_back(loss.item());
    }
    const double n = static_cast<double>(steps_per_epoch);
    es.cls /= n;
    es.kda /= n;
    es.total /= n;
    es.val_acc = evaluate(state, val).accuracy;
    if (es.val_acc > res.best_val_acc) {
      res.best_val_acc = es.val_acc;
      res.best_epoch = epoch;
      res.best = state.clone();
    }
    res.epochs.push_back(es);
    if (progress) progress(es);
  }
  res.last = state;

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    save_checkpoint(cfg.out_dir / "best.ckpt", res.best.to_named_tensors());
    save_checkpoint(cfg.out_dir / "last.ckpt", res.last.to_named_tensors());
    write_file(cfg.out_dir / "config.txt", [&](std::ostream& os) { write_run_config(os, cfg); });
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

RunReport run_training(const RunConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const TaskData task = load_task(cfg);
  DatasetReader train_reader(cfg.data_root);
  const TrainResult tr = train(cfg, task, train_reader, progress);

  DatasetReader test_reader(cfg.data_root);
  const EvalResult ev = evaluate(tr.best, load_samples(test_reader, task.split.target_test));

  RunReport r;
  r.task = cfg.task;
  r.target = task.split.target_name;
  r.seed = cfg.seed;
  r.epochs = tr.epochs;
  r.best_epoch = tr.best_epoch;
  r.best_val_acc = tr.best_val_acc;
  r.target_acc = ev.accuracy;
  r.seconds = tr.seconds;
  r.parameters = tr.best.parameter_count();
  r.flops = model_flops(cfg.model, task.manifest.points);

  if (!cfg.out_dir.empty()) {
    write_file(cfg.out_dir / "report.txt", [&](std::ostream& os) { write_report_text(os, r); });
    write_file(cfg.out_dir / "report.csv", [&](std::ostream& os) { write_report_csv(os, r); });
    write_file(cfg.out_dir / "summary.csv", [&](std::ostream& os) { write_summary_csv(os, r); });
  }
  return r;
}

void write_embeddings_csv(std::ostream& os, const EvalResult& r) {
  os << "id,label,prediction";
  const std::size_t dim = r.embeddings.empty() ? 0 : r.embeddings.front().size();
  for (std::size_t j = 0; j < dim; ++j) os << ",e" << j;
  os << "\n";
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    os << r.ids[i] << "," << r.labels[i] << "," << r.predictions[i];
    for (double v : r.embeddings[i]) os << "," << fmt(v, "%.9g");
    os << "\n";
  }
}

void write_confusion_csv(std::ostream& os, const EvalResult& r, const std::vector<std::string>& classes) {
  os << "true_class";
  for (const auto& c : classes) os << "," << c;
  os << "\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    os << (i < classes.size() ? classes[i] : std::to_string(i));
    for (auto v : r.confusion[i]) os << "," << v;
    os << "\n";
  }
}

void write_accuracy_csv(std::ostream& os, const EvalResult& r, const std::vector<std::string>& classes) {
  os << "class,count,accuracy\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    std::size_t n = 0;
    for (auto v : r.confusion[c]) n += v;
    os << (c < classes.size() ? classes[c] : std::to_string(c)) << "," << n << ","
       << (std::isnan(r.per_class[c]) ? std::string() : fmt(r.per_class[c])) << "\n";
  }
  os << "overall," << r.ids.size() << "," << fmt(r.accuracy) << "\n";
}

void write_report_text(std::ostream& os, const RunReport& r) {
  os << "task " << r.task << " (target " << r.target << "), seed " << r.seed << "\n";
  os << "epoch        lr   cls_loss   kda_loss  total_loss  val_acc\n";
  for (const auto& e : r.epochs) {
    char line[128];
    std::snprintf(line, sizeof line, "%5zu  %8.2e  %9.5f  %9.5f  %10.5f  %7.4f\n", e.epoch, e.lr, e.cls, e.kda,
                  e.total, e.val_acc);
    os << line;
  }
  os << "best epoch " << r.best_epoch << ", source val acc " << fmt(r.best_val_acc, "%.4f") << "\n";
  os << "target acc " << fmt(r.target_acc, "%.4f") << "\n";
  os << "parameters " << r.parameters << ", forward FLOPs/sample " << fmt(r.flops, "%.4g") << ", wall-clock "
     << fmt(r.seconds, "%.1f") << " s\n";
}

void write_report_csv(std::ostream& os, const RunReport& r) {
  os << "epoch,lr,cls_loss,kda_loss,total_loss,val_acc\n";
  for (const auto& e : r.epochs) {
    os << e.epoch << "," << fmt(e.lr, "%.9g") << "," << fmt(e.cls, "%.9g") << "," << fmt(e.kda, "%.9g") << ","
       << fmt(e.total, "%.9g") << "," << fmt(e.val_acc) << "\n";
  }
}

void write_summary_csv(std::ostream& os, const RunReport& r, bool header) {
  if (header) os << "task,target,seed,target_acc,best_val_acc,best_epoch,parameters,flops,seconds\n";
  os << r.task << "," << r.target << "," << r.seed << "," << fmt(r.target_acc) << "," << fmt(r.best_val_acc) << ","
     << r.best_epoch << "," << r.parameters << "," << fmt(r.flops, "%.6g") << "," << fmt(r.seconds, "%.3f") << "\n";
}

}  // namespace pdgr
