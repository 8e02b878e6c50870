#include "pdgr/harness/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include "pdgr/numerics/errors.hpp"

namespace pdgr {

void RunConfig::validate() const {
  model.validate();
  if (batch_per_domain < 1) throw InvalidConfig("batch_per_domain must be >= 1");
  if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (!(lr > 0.0) || lr_min < 0.0 || lr_min > lr) throw InvalidConfig("need 0 <= lr_min <= lr, lr > 0");
  if (weight_decay < 0.0) throw InvalidConfig("weight_decay must be >= 0");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw InvalidConfig("loss weights must be >= 0");
}

namespace {

std::string where(const KvDocument& doc, const KvSection& s, std::string_view key) {
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    if (s.entries[i].first == key) return doc.source + ":" + std::to_string(s.entry_lines[i]);
  }
  return doc.source + ":" + std::to_string(s.line);
}

std::vector<std::size_t> get_sizes(const KvDocument& doc, const KvSection& s, std::string_view key,
                                   std::vector<std::size_t> fallback) {
  if (!s.find(key)) return fallback;
  std::vector<std::size_t> out;
  for (const auto& item : doc.get_list(s, key, {})) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ParseError(where(doc, s, key) + ": '" + std::string(key) + "' expects non-negative integers, got '" +
                       item + "'");
    }
  }
  return out;
}

std::size_t get_size(const KvDocument& doc, const KvSection& s, std::string_view key, std::size_t fallback) {
  const long long v = doc.get_int(s, key, static_cast<long long>(fallback));
  if (v < 0) throw ParseError(where(doc, s, key) + ": '" + std::string(key) + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

bool get_bool(const KvDocument& doc, const KvSection& s, std::string_view key, bool fallback) {
  const auto v = s.find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ParseError(where(doc, s, key) + ": '" + std::string(key) + "' expects true or false, got '" + *v + "'");
}

void reject_unknown(const KvDocument& doc, const KvSection& s, const std::set<std::string>& known) {
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    if (!known.count(s.entries[i].first)) {
      throw ParseError(doc.source + ":" + std::to_string(s.entry_lines[i]) + ": unknown key '" +
                       s.entries[i].first + "' in [" + s.name + "]");
    }
  }
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

RunConfig parse_run_config(const KvDocument& doc) {
  RunConfig cfg;
  for (const auto& s : doc.sections) {
    if (s.name == "") {
      if (!s.entries.empty()) {
        throw ParseError(doc.source + ":" + std::to_string(s.entry_lines[0]) + ": key outside of [run] or [model]");
      }
    } else if (s.name != "run" && s.name != "model") {
      throw ParseError(doc.source + ":" + std::to_string(s.line) + ": unknown section [" + s.name + "]");
    }
  }

  if (const KvSection* r = doc.section("run")) {
    reject_unknown(doc, *r,
                   {"data", "task", "seed", "epochs", "batch_per_domain", "lr", "lr_min", "weight_decay", "lambda1",
                    "lambda2", "train_limit", "augment", "out"});
    cfg.data_root = doc.get(*r, "data", cfg.data_root.string());
    cfg.task = get_size(doc, *r, "task", cfg.task);
    cfg.seed = get_size(doc, *r, "seed", cfg.seed);
    cfg.epochs = get_size(doc, *r, "epochs", cfg.epochs);
    cfg.batch_per_domain = get_size(doc, *r, "batch_per_domain", cfg.batch_per_domain);
    cfg.lr = doc.get_double(*r, "lr", cfg.lr);
    cfg.lr_min = doc.get_double(*r, "lr_min", cfg.lr_min);
    cfg.weight_decay = doc.get_double(*r, "weight_decay", cfg.weight_decay);
    cfg.lambda1 = doc.get_double(*r, "lambda1", cfg.lambda1);
    cfg.lambda2 = doc.get_double(*r, "lambda2", cfg.lambda2);
    cfg.train_limit = get_size(doc, *r, "train_limit", cfg.train_limit);
    cfg.augment = get_bool(doc, *r, "augment", cfg.augment);
    cfg.out_dir = doc.get(*r, "out", "");
  }

  if (const KvSection* m = doc.section("model")) {
    reject_unknown(doc, *m,
                   {"preset", "blocks", "widths", "points", "classes", "shift", "align", "agt_cell", "agt_lambda",
                    "agt_channels", "knn_k", "hidden_ratio", "shift_channel_mix", "align_from_stage"});
    const std::string preset = doc.get(*m, "preset", "standard");
    if (preset == "base") {
      cfg.model = ModelConfig::base();
    } else if (preset == "standard") {
      cfg.model = ModelConfig::standard();
    } else if (preset == "large") {
      cfg.model = ModelConfig::large();
    } else {
      throw ParseError(where(doc, *m, "preset") + ": unknown preset '" + preset + "'");
    }
    ModelConfig& mc = cfg.model;
    mc.stage_blocks = get_sizes(doc, *m, "blocks", mc.stage_blocks);
    mc.stage_widths = get_sizes(doc, *m, "widths", mc.stage_widths);
    mc.stage_points = get_sizes(doc, *m, "points", mc.stage_points);
    mc.num_classes = get_size(doc, *m, "classes", mc.num_classes);
    try {
      mc.shift_mode = parse_shift_mode(doc.get(*m, "shift", to_string(mc.shift_mode)));
    } catch (const InvalidConfig& e) {
      throw ParseError(where(doc, *m, "shift") + ": " + e.what());
    }
    try {
      mc.align_mode = parse_align_mode(doc.get(*m, "align", to_string(mc.align_mode)));
    } catch (const InvalidConfig& e) {
      throw ParseError(where(doc, *m, "align") + ": " + e.what());
    }
    mc.agt.cell_size = doc.get_double(*m, "agt_cell", mc.agt.cell_size);
    mc.agt.lambda = doc.get_double(*m, "agt_lambda", mc.agt.lambda);
    mc.agt.mixed_channels = get_size(doc, *m, "agt_channels", mc.agt.mixed_channels);
    mc.knn_k = get_size(doc, *m, "knn_k", mc.knn_k);
    mc.hidden_ratio = get_size(doc, *m, "hidden_ratio", mc.hidden_ratio);
    mc.shift_channel_mix = get_bool(doc, *m, "shift_channel_mix", mc.shift_channel_mix);
    mc.align_from_stage = get_size(doc, *m, "align_from_stage", mc.align_from_stage);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg = parse_run_config(load_kv(path));
  const auto dir = path.parent_path();
  if (cfg.data_root.is_relative()) cfg.data_root = dir / cfg.data_root;
  if (!cfg.out_dir.empty() && cfg.out_dir.is_relative()) cfg.out_dir = dir / cfg.out_dir;
  return cfg;
}

void write_run_config(std::ostream& os, const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  os << "[run]\n"
     << "data = " << cfg.data_root.string() << "\n"
     << "task = " << cfg.task << "\n"
     << "seed = " << cfg.seed << "\n"
     << "epochs = " << cfg.epochs << "\n"
     << "batch_per_domain = " << cfg.batch_per_domain << "\n"
     << "lr = " << num(cfg.lr) << "\n"
     << "lr_min = " << num(cfg.lr_min) << "\n"
     << "weight_decay = " << num(cfg.weight_decay) << "\n"
     << "lambda1 = " << num(cfg.lambda1) << "\n"
     << "lambda2 = " << num(cfg.lambda2) << "\n"
     << "train_limit = " << cfg.train_limit << "\n"
     << "augment = " << (cfg.augment ? "true" : "false") << "\n";
  if (!cfg.out_dir.empty()) os << "out = " << cfg.out_dir.string() << "\n";
  os << "\n[model]\n"
     << "blocks = " << join(m.stage_blocks) << "\n"
     << "widths = " << join(m.stage_widths) << "\n"
     << "points = " << join(m.stage_points) << "\n"
     << "classes = " << m.num_classes << "\n"
     << "shift = " << to_string(m.shift_mode) << "\n"
     << "align = " << to_string(m.align_mode) << "\n"
     << "agt_cell = " << num(m.agt.cell_size) << "\n"
     << "agt_lambda = " << num(m.agt.lambda) << "\n"
     << "agt_channels = " << m.agt.mixed_channels << "\n"
     << "knn_k = " << m.knn_k << "\n"
     << "hidden_ratio = " << m.hidden_ratio << "\n"
     << "shift_channel_mix = " << (m.shift_channel_mix ? "true" : "false") << "\n"
     << "align_from_stage = " << m.align_from_stage << "\n";
}

}  // namespace pdgr
