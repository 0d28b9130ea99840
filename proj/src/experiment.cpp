// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace cil {

namespace {

using SectionMap = std::map<std::string, std::map<std::string, std::string>>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

SectionMap parse_sections(const std::string& text) {
  SectionMap sections;
  std::istringstream is(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": key outside any [section]");
    sections[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return sections;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text);

template <>
double parse_number<double>(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + text + "'");
  }
}

template <>
int parse_number<int>(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: '" + text + "'");
  }
}

template <>
std::size_t parse_number<std::size_t>(const std::string& key,
                                      const std::string& text) {
  const int v = parse_number<int>(key, text);
  if (v < 0) throw ConfigError(key + ": must be non-negative");
  return static_cast<std::size_t>(v);
}

std::uint64_t parse_seed(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a non-negative integer: '" + text + "'");
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ','))
    out.push_back(parse_number<T>(key, trim(tok)));
  return out;
}

}  // namespace

std::pair<double, bool> parse_epsilon(const std::string& text) {
  std::string t = trim(text);
  if (t.empty()) throw ConfigError("loss.epsilon: empty value");
  bool percent = false;
  if (t.back() == '%') {
    percent = true;
    t = trim(t.substr(0, t.size() - 1));
  }
  const double v = parse_number<double>("loss.epsilon", t);
  if (v < 0.0) throw ConfigError("loss.epsilon: must be >= 0");
  return {v, percent};
}

ExperimentConfig parse_config_text(const std::string& text) {
  const SectionMap sections = parse_sections(text);
  ExperimentConfig cfg;

  static const std::set<std::string> known_sections = {
      "dataset", "schedule", "memory", "loss", "train", "meta", "run"};
  for (const auto& [name, kv] : sections)
    if (!known_sections.count(name))
      throw ConfigError("unknown config section [" + name + "]");

  auto get = [&](const std::string& section, const std::string& key,
                 auto parse) {
    auto sit = sections.find(section);
    if (sit == sections.end()) return;
    auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return;
    parse(kit->second);
  };
  std::set<std::string> consumed;
  auto mark = [&](const std::string& s, const std::string& k) {
    consumed.insert(s + "." + k);
  };

  auto field = [&](const std::string& s, const std::string& k, auto&& fn) {
    get(s, k, fn);
    mark(s, k);
  };

  field("dataset", "source", [&](const std::string& v) { cfg.dataset.source = v; });
  field("dataset", "train_path", [&](const std::string& v) { cfg.dataset.train_path = v; });
  field("dataset", "test_path", [&](const std::string& v) { cfg.dataset.test_path = v; });
  field("dataset", "classes", [&](const std::string& v) {
    cfg.dataset.classes = parse_number<std::size_t>("dataset.classes", v);
  });
  field("dataset", "dim", [&](const std::string& v) {
    cfg.dataset.dim = parse_number<std::size_t>("dataset.dim", v);
  });
  field("dataset", "train_per_class", [&](const std::string& v) {
    cfg.dataset.train_per_class =
        parse_number<std::size_t>("dataset.train_per_class", v);
  });
  field("dataset", "test_per_class", [&](const std::string& v) {
    cfg.dataset.test_per_class =
        parse_number<std::size_t>("dataset.test_per_class", v);
  });
  field("dataset", "spread", [&](const std::string& v) {
    cfg.dataset.spread = parse_number<double>("dataset.spread", v);
  });
  field("dataset", "data_seed", [&](const std::string& v) {
    cfg.dataset.data_seed = parse_seed("dataset.data_seed", v);
  });

  field("schedule", "base_classes", [&](const std::string& v) {
    cfg.schedule.base_classes =
        parse_number<std::size_t>("schedule.base_classes", v);
  });
  field("schedule", "incremental_steps", [&](const std::string& v) {
    cfg.schedule.incremental_steps =
        parse_number<std::size_t>("schedule.incremental_steps", v);
  });
  field("schedule", "order_seed", [&](const std::string& v) {
    cfg.schedule.order_seed =
        parse_seed("schedule.order_seed", v);
  });

  field("memory", "policy", [&](const std::string& v) { cfg.memory.policy = v; });
  field("memory", "per_class", [&](const std::string& v) {
    cfg.memory.per_class = parse_number<std::size_t>("memory.per_class", v);
  });
  field("memory", "budget", [&](const std::string& v) {
    cfg.memory.budget = parse_number<std::size_t>("memory.budget", v);
  });
  field("memory", "selection", [&](const std::string& v) { cfg.memory.selection = v; });
  field("memory", "features", [&](const std::string& v) { cfg.memory.features = v; });

  field("loss", "mode", [&](const std::string& v) { cfg.loss.mode = v; });
  field("loss", "alpha", [&](const std::string& v) {
    cfg.loss.alpha = parse_number<double>("loss.alpha", v);
  });
  field("loss", "epsilon", [&](const std::string& v) {
    const auto [val, pct] = parse_epsilon(v);
    cfg.loss.epsilon_value = val;
    cfg.loss.epsilon_is_percent = pct;
  });
  field("loss", "temperature", [&](const std::string& v) {
    cfg.loss.temperature = parse_number<double>("loss.temperature", v);
  });

  field("train", "epochs", [&](const std::string& v) {
    cfg.train.epochs = parse_number<int>("train.epochs", v);
  });
  field("train", "batch_size", [&](const std::string& v) {
    cfg.train.batch_size = parse_number<int>("train.batch_size", v);
  });
  field("train", "lr", [&](const std::string& v) {
    cfg.train.lr = parse_number<double>("train.lr", v);
  });
  field("train", "lr_milestones", [&](const std::string& v) {
    cfg.train.lr_milestones = parse_list<int>("train.lr_milestones", v);
  });
  field("train", "lr_decay", [&](const std::string& v) {
    cfg.train.lr_decay = parse_number<double>("train.lr_decay", v);
  });
  field("train", "momentum", [&](const std::string& v) {
    cfg.train.momentum = parse_number<double>("train.momentum", v);
  });
  field("train", "weight_decay", [&](const std::string& v) {
    cfg.train.weight_decay = parse_number<double>("train.weight_decay", v);
  });
  field("train", "hidden", [&](const std::string& v) {
    cfg.train.hidden = parse_list<std::size_t>("train.hidden", v);
  });
  field("train", "oversampling", [&](const std::string& v) { cfg.train.oversampling = v; });
  field("train", "finetune_epochs", [&](const std::string& v) {
    cfg.train.finetune_epochs = parse_number<int>("train.finetune_epochs", v);
  });
  field("train", "finetune_lr", [&](const std::string& v) {
    cfg.train.finetune_lr = parse_number<double>("train.finetune_lr", v);
  });

  field("meta", "alpha_lr", [&](const std::string& v) {
    cfg.meta.alpha_lr = parse_number<double>("meta.alpha_lr", v);
  });
  field("meta", "update_period", [&](const std::string& v) {
    cfg.meta.update_period = parse_number<int>("meta.update_period", v);
  });
  field("meta", "val_fraction", [&](const std::string& v) {
    cfg.meta.val_fraction = parse_number<double>("meta.val_fraction", v);
  });
  field("meta", "alpha_min", [&](const std::string& v) {
    cfg.meta.alpha_min = parse_number<double>("meta.alpha_min", v);
  });
  field("meta", "alpha_max", [&](const std::string& v) {
    cfg.meta.alpha_max = parse_number<double>("meta.alpha_max", v);
  });

  field("run", "seed", [&](const std::string& v) {
    cfg.run.seed = parse_seed("run.seed", v);
  });
  field("run", "out", [&](const std::string& v) { cfg.run.out = v; });

  for (const auto& [section, kv] : sections)
    for (const auto& [key, value] : kv)
      if (!consumed.count(section + "." + key))
        throw ConfigError("unknown config key " + section + "." + key);

  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

void ExperimentConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "csv" &&
      dataset.source != "binary")
    throw ConfigError("dataset.source: expected synthetic, csv or binary");
  if (dataset.source != "synthetic") {
    if (dataset.train_path.empty())
      throw ConfigError("dataset.train_path: required for file sources");
    if (dataset.test_path.empty())
      throw ConfigError("dataset.test_path: required for file sources");
  }
  if (dataset.source == "synthetic") {
    if (dataset.classes == 0) throw ConfigError("dataset.classes: must be >= 1");
    if (dataset.dim < 2) throw ConfigError("dataset.dim: must be >= 2");
    if (dataset.train_per_class == 0 || dataset.test_per_class == 0)
      throw ConfigError("dataset per-class counts must be >= 1");
    if (dataset.spread < 0.0) throw ConfigError("dataset.spread: must be >= 0");
  }
  if (memory.policy != "growing" && memory.policy != "fixed")
    throw ConfigError("memory.policy: expected growing or fixed");
  if (memory.selection != "herding" && memory.selection != "random")
    throw ConfigError("memory.selection: expected herding or random");
  if (memory.features != "pre_update" && memory.features != "post_update")
    throw ConfigError("memory.features: expected pre_update or post_update");
  static const std::set<std::string> modes = {"standard", "balanced", "alpha",
                                              "relaxed", "rescaled", "meta"};
  if (!modes.count(loss.mode))
    throw ConfigError("loss.mode: unknown mode '" + loss.mode + "'");
  if (loss.alpha < 0.0 || loss.alpha > 1.0)
    throw ConfigError("loss.alpha: must lie in [0, 1]");
  if (loss.epsilon_value < 0.0) throw ConfigError("loss.epsilon: must be >= 0");
  if (!(loss.temperature > 0.0))
    throw ConfigError("loss.temperature: must be positive");
  if (train.epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  if (train.batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr: must be positive");
  if (!(train.lr_decay > 0.0) || train.lr_decay > 1.0)
    throw ConfigError("train.lr_decay: must lie in (0, 1]");
  if (train.momentum < 0.0 || train.momentum >= 1.0)
    throw ConfigError("train.momentum: must lie in [0, 1)");
  if (train.weight_decay < 0.0)
    throw ConfigError("train.weight_decay: must be >= 0");
  if (train.oversampling != "none" && train.oversampling != "memory" &&
      train.oversampling != "class")
    throw ConfigError("train.oversampling: expected none, memory or class");
  if (train.finetune_epochs < 0)
    throw ConfigError("train.finetune_epochs: must be >= 0");
  if (schedule.base_classes == 0)
    throw ConfigError("schedule.base_classes: must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
  return nlohmann::json{
      {"dataset",
       {{"source", dataset.source},
        {"train_path", dataset.train_path},
        {"test_path", dataset.test_path},
        {"classes", dataset.classes},
        {"dim", dataset.dim},
        {"train_per_class", dataset.train_per_class},
        {"test_per_class", dataset.test_per_class},
        {"spread", dataset.spread},
        {"data_seed", dataset.data_seed}}},
      {"schedule",
       {{"base_classes", schedule.base_classes},
        {"incremental_steps", schedule.incremental_steps},
        {"order_seed", schedule.order_seed}}},
      {"memory",
       {{"policy", memory.policy},
        {"per_class", memory.per_class},
        {"budget", memory.budget},
        {"selection", memory.selection},
        {"features", memory.features}}},
      {"loss",
       {{"mode", loss.mode},
        {"alpha", loss.alpha},
        {"epsilon_value", loss.epsilon_value},
        {"epsilon_is_percent", loss.epsilon_is_percent},
        {"temperature", loss.temperature}}},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"lr", train.lr},
        {"lr_milestones", train.lr_milestones},
        {"lr_decay", train.lr_decay},
        {"momentum", train.momentum},
        {"weight_decay", train.weight_decay},
        {"hidden", train.hidden},
        {"oversampling", train.oversampling},
        {"finetune_epochs", train.finetune_epochs},
        {"finetune_lr", train.finetune_lr}}},
      {"meta",
       {{"alpha_lr", meta.alpha_lr},
        {"update_period", meta.update_period},
        {"val_fraction", meta.val_fraction},
        {"alpha_min", meta.alpha_min},
        {"alpha_max", meta.alpha_max}}},
      {"run", {{"seed", run.seed}, {"out", run.out}}}};
}

void apply_overrides(ExperimentConfig& cfg, const ConfigOverrides& o) {
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.out) cfg.run.out = *o.out;
  if (o.loss_mode) cfg.loss.mode = *o.loss_mode;
  if (o.alpha) cfg.loss.alpha = *o.alpha;
  if (o.epsilon) {
    const auto [v, pct] = parse_epsilon(*o.epsilon);
    cfg.loss.epsilon_value = v;
    cfg.loss.epsilon_is_percent = pct;
  }
  if (o.memory_per_class) cfg.memory.per_class = *o.memory_per_class;
  if (o.steps) cfg.schedule.incremental_steps = *o.steps;
  cfg.validate();
}

namespace {

struct LoadedTask {
  LabeledDataset train;
  LabeledDataset test;
};

LoadedTask load_task(const ExperimentConfig& cfg) {
  if (cfg.dataset.source == "synthetic") {
    SyntheticTask task = synthesize_gaussian_task(
        cfg.dataset.classes, cfg.dataset.dim, cfg.dataset.train_per_class,
        cfg.dataset.test_per_class, cfg.dataset.spread, cfg.dataset.data_seed);
    return {std::move(task.train), std::move(task.test)};
  }
  const DatasetFormat fmt = cfg.dataset.source == "csv" ? DatasetFormat::csv
                                                        : DatasetFormat::binary;
  LoadedTask task{load_dataset(cfg.dataset.train_path, fmt),
                  load_dataset(cfg.dataset.test_path, fmt)};
  if (task.train.dim != task.test.dim)
    throw ConfigError("train and test feature dimensions disagree");
  task.test.num_classes = task.train.num_classes =
      std::max(task.train.num_classes, task.test.num_classes);
  task.train.rebuild_index();
  task.test.rebuild_index();
  return task;
}

TrainConfig make_train_config(const ExperimentConfig& cfg, std::uint64_t seed,
                              double epsilon_abs) {
  TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.batch_size = cfg.train.batch_size;
  tc.lr.initial = cfg.train.lr;
  tc.lr.milestones = cfg.train.lr_milestones;
  tc.lr.factor = cfg.train.lr_decay;
  tc.momentum = cfg.train.momentum;
  tc.weight_decay = cfg.train.weight_decay;
  tc.loss_mode = cfg.is_meta() ? LossMode::balanced
                               : loss_mode_from_string(cfg.loss.mode);
  tc.alpha = cfg.loss.alpha;
  tc.epsilon = epsilon_abs;
  tc.temperature = cfg.loss.temperature;
  if (cfg.train.oversampling == "memory")
    tc.oversampling = Oversampling::memory;
  else if (cfg.train.oversampling == "class")
    tc.oversampling = Oversampling::classes;
  tc.finetune.epochs = cfg.train.finetune_epochs;
  tc.finetune.lr = cfg.train.finetune_lr;
  tc.memory_features_pre_update = cfg.memory.features == "pre_update";
  tc.seed = seed;
  return tc;
}

}  // namespace

double epsilon_for_step(const ExperimentConfig& cfg,
                        const LabeledDataset& step_data) {
  if (!cfg.loss.epsilon_is_percent) return cfg.loss.epsilon_value;
  // Percentage form converts against the smallest new-class count of the
  // step, so mixed-size steps stay conservative.
  std::size_t min_count = 0;
  bool found = false;
  for (const auto& rows : step_data.per_class) {
    if (rows.empty()) continue;
    if (!found || rows.size() < min_count) min_count = rows.size();
    found = true;
  }
  if (!found) throw ArgumentError("step has no samples");
  return cfg.loss.epsilon_value / 100.0 * static_cast<double>(min_count);
}

std::string step_file_name(const std::string& stem, int step,
                           const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", step);
  return stem + "_step_" + buf + ext;
}

RunRecord run_experiment(const ExperimentConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  using clock = std::chrono::steady_clock;

  LoadedTask task = load_task(cfg);
  const std::size_t n_classes = task.train.num_classes;
  IncrementalSchedule sched =
      build_schedule(n_classes, cfg.schedule.base_classes,
                     cfg.schedule.incremental_steps, cfg.schedule.order_seed);
  LabeledDataset full_train = remap_dataset(task.train, sched);
  LabeledDataset full_test = remap_dataset(task.test, sched);

  std::vector<std::size_t> dims;
  dims.push_back(full_train.dim);
  for (std::size_t h : cfg.train.hidden) dims.push_back(h);
  dims.push_back(cfg.schedule.base_classes);
  ClassifierModel model(dims, mix_seed(cfg.run.seed, 11));

  const SelectionMethod selection = cfg.memory.selection == "herding"
                                        ? SelectionMethod::herding
                                        : SelectionMethod::random;
  ReplayMemory memory =
      cfg.memory.policy == "growing"
          ? ReplayMemory::growing(cfg.memory.per_class, selection,
                                  mix_seed(cfg.run.seed, 22))
          : ReplayMemory::fixed(cfg.memory.budget, selection,
                                mix_seed(cfg.run.seed, 22));

  if (out_dir) std::filesystem::create_directories(*out_dir);

  RunRecord record;
  record.config = cfg.to_json();

  MetaState meta;
  meta.alpha_lr = cfg.meta.alpha_lr;
  meta.update_period = cfg.meta.update_period;
  meta.val_fraction = cfg.meta.val_fraction;
  meta.alpha_min = cfg.meta.alpha_min;
  meta.alpha_max = cfg.meta.alpha_max;

  const std::size_t total_steps = sched.num_steps();
  for (std::size_t t = 0; t <= total_steps; ++t) {
    const auto started = clock::now();
    LabeledDataset view = step_view(full_train, sched, t);
    LabeledDataset test_cum =
        restrict_to_first_classes(full_test, sched.classes_after(t));
    TrainConfig tc = make_train_config(cfg, mix_seed(cfg.run.seed, 100 + t),
                                       epsilon_for_step(cfg, view));
    StepReport report;
    if (t == 0) {
      const ModelSnapshot init_snapshot = model.snapshot();
      report = run_base_step(model, view, test_cum, tc);
      // Base classes enter the memory with the same feature-source rule
      // the incremental steps use.
      std::vector<int> base_classes;
      for (std::size_t c = 0; c < sched.classes_after(0); ++c)
        if (!view.per_class[c].empty())
          base_classes.push_back(static_cast<int>(c));
      auto features_of = [&](const Tensor& x) {
        return tc.memory_features_pre_update ? init_snapshot.extract_features(x)
                                             : model.extract_features(x);
      };
      memory.update(full_train, base_classes, features_of);
    } else {
      ModelSnapshot snap = model.snapshot();
      model.expand_head(sched.group_sizes[t], model.default_head_init_scale(),
                        mix_seed(cfg.run.seed, 200 + t));
      StepContext sc{static_cast<int>(t), sched.base_count};
      if (cfg.is_meta())
        report = run_meta_incremental_step(model, snap, view, memory,
                                           full_train, test_cum, tc, meta, sc);
      else
        report = run_incremental_step(model, snap, view, memory, full_train,
                                      test_cum, tc, sc);
    }
    report.wall_seconds =
        std::chrono::duration<double>(clock::now() - started).count();
    if (out_dir) {
      write_confusion_csv(report.confusion, report.num_classes,
                          *out_dir / step_file_name("confusion",
                                                    report.step, ".csv"));
      write_confusion_log1p_csv(
          report.confusion, report.num_classes,
          *out_dir / step_file_name("confusion_log1p", report.step, ".csv"));
      model.save_checkpoint(*out_dir /
                            step_file_name("checkpoint", report.step, ".bin"));
    }
    record.steps.push_back(std::move(report));
  }

  std::vector<double> top1;
  for (const auto& s : record.steps) top1.push_back(s.top1.percent());
  record.average_incremental_accuracy = average_incremental_accuracy(top1);

  if (out_dir) {
    write_run_record(record, *out_dir / "run_record.json");
    memory.save(*out_dir / "memory_state.txt");
    std::ofstream timings(*out_dir / "timings.txt", std::ios::trunc);
    timings.precision(6);
    for (const auto& s : record.steps)
      timings << "step " << s.step << " " << std::fixed << s.wall_seconds
              << " s\n";
  }
  return record;
}

namespace {

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::map<std::string, nlohmann::json>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j;
  }
}

bool is_loss_or_mitigation_field(const std::string& key) {
  return key.rfind("loss.", 0) == 0 || key.rfind("meta.", 0) == 0 ||
         key == "train.oversampling" || key == "train.finetune_epochs" ||
         key == "train.finetune_lr" || key.rfind("run.", 0) == 0;
}

}  // namespace

CompareResult compare_experiments(const ExperimentConfig& a,
                                  const ExperimentConfig& b,
                                  const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ArgumentError("compare needs at least one seed");

  std::map<std::string, nlohmann::json> fa, fb;
  flatten_json(a.to_json(), "", fa);
  flatten_json(b.to_json(), "", fb);
  std::vector<std::string> differing;
  for (const auto& [key, value] : fa)
    if (!is_loss_or_mitigation_field(key) && fb.at(key) != value)
      differing.push_back(key);
  if (!differing.empty()) {
    std::string msg = "configs differ beyond loss/mitigation fields:";
    for (const auto& k : differing) msg += " " + k;
    throw ArgumentError(msg);
  }

  CompareResult result;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig ca = a, cb = b;
    ca.run.seed = seed;
    cb.run.seed = seed;
    const RunRecord ra = run_experiment(ca, std::nullopt);
    const RunRecord rb = run_experiment(cb, std::nullopt);
    result.rows.push_back(
        {seed, ra.average_incremental_accuracy, rb.average_incremental_accuracy});
  }
  for (const auto& row : result.rows) {
    result.a_mean += row.a_accuracy;
    result.b_mean += row.b_accuracy;
  }
  result.a_mean /= static_cast<double>(result.rows.size());
  result.b_mean /= static_cast<double>(result.rows.size());
  return result;
}

nlohmann::json CompareResult::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows)
    rows_json.push_back({{"seed", r.seed},
                         {"a_accuracy", r.a_accuracy},
                         {"b_accuracy", r.b_accuracy},
                         {"difference", r.difference()}});
  return nlohmann::json{{"rows", std::move(rows_json)},
                        {"a_mean", a_mean},
                        {"b_mean", b_mean},
                        {"mean_difference", mean_difference()}};
}

SweepResult sweep_experiment(const ExperimentConfig& cfg, SweepField field,
                             const std::vector<double>& values) {
  if (values.empty()) throw ArgumentError("sweep needs at least one value");
  if (field == SweepField::alpha && cfg.loss.mode != "alpha")
    throw ArgumentError("alpha sweeps require loss mode 'alpha'");
  if (field == SweepField::epsilon && cfg.loss.mode != "relaxed")
    throw ArgumentError("epsilon sweeps require loss mode 'relaxed'");

  SweepResult result;
  result.field = field;
  for (double value : values) {
    ExperimentConfig c = cfg;
    if (field == SweepField::alpha) {
      if (value < 0.0 || value > 1.0)
        throw ArgumentError("alpha value out of [0, 1]");
      c.loss.alpha = value;
    } else {
      if (value < 0.0) throw ArgumentError("epsilon value must be >= 0");
      c.loss.epsilon_value = value;
      c.loss.epsilon_is_percent = false;
    }
    RunRecord record = run_experiment(c, std::nullopt);
    const StepReport& last = record.steps.back();
    SweepRow row;
    row.value = value;
    row.final_base_accuracy = last.base_group.percent();
    row.final_overall_accuracy = last.top1.percent();
    row.average_incremental_accuracy = record.average_incremental_accuracy;
    row.record = std::move(record);
    result.rows.push_back(std::move(row));
  }
  return result;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows)
    rows_json.push_back({{"value", r.value},
                         {"final_base_accuracy", r.final_base_accuracy},
                         {"final_overall_accuracy", r.final_overall_accuracy},
                         {"average_incremental_accuracy",
                          r.average_incremental_accuracy}});
  return nlohmann::json{
      {"field", field == SweepField::alpha ? "alpha" : "epsilon"},
      {"rows", std::move(rows_json)}};
}

void emit_confusion(const std::filesystem::path& record_path,
                    const std::filesystem::path& out_dir) {
  const RunRecord record = read_run_record(record_path);
  std::filesystem::create_directories(out_dir);
  for (const auto& s : record.steps) {
    write_confusion_csv(s.confusion, s.num_classes,
                        out_dir / step_file_name("confusion", s.step, ".csv"));
    write_confusion_log1p_csv(
        s.confusion, s.num_classes,
        out_dir / step_file_name("confusion_log1p", s.step, ".csv"));
  }
}

}  // namespace cil
