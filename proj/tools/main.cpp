#include "hidac/errors.hpp"
#include "hidac/evaluation.hpp"
#include "hidac/manifest.hpp"
#include "hidac/model.hpp"
#include "hidac/prompting.hpp"
#include "hidac/rels.hpp"
#include "hidac/synthetic.hpp"
#include "hidac/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_exit = 0;  // gate failures flip this to 1 without aborting the command

// ---------------------------------------------------------------------------
// Data loading

std::vector<std::string> expand_rels_paths(const std::vector<std::string>& raw) {
  std::vector<std::string> files;
  for (const std::string& p : raw) {
    std::error_code ec;
    const fs::path path(p);
    if (!fs::exists(path, ec)) {
      throw hidac::IoError("no such path: '" + p + "'");
    }
    if (fs::is_directory(path, ec)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::recursive_directory_iterator(path)) {
        if (entry.is_regular_file() && entry.path().extension() == ".rels") {
          found.push_back(entry.path().string());
        }
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  if (files.empty()) {
    throw hidac::InputError("no .rels files under the given paths");
  }
  return files;
}

std::vector<hidac::RelationInstance> load_rels(
    const std::vector<std::string>& files) {
  std::vector<hidac::RelationInstance> all;
  for (const std::string& file : files) {
    auto part = hidac::parse_rels_file(file);
    all.insert(all.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  if (all.empty()) {
    throw hidac::InputError("the input files contain no instances");
  }
  return all;
}

// ---------------------------------------------------------------------------
// Config precedence: defaults < config file < command-line flags.

class ConfigResolver {
 public:
  ConfigResolver(const CLI::App* cmd, const std::string& config_path)
      : cmd_(cmd) {
    if (config_path.empty()) {
      file_ = json::object();
      return;
    }
    std::ifstream in(config_path);
    if (!in) {
      throw hidac::IoError("cannot read config file '" + config_path + "'");
    }
    try {
      file_ = json::parse(in);
    } catch (const json::exception& e) {
      throw hidac::ConfigError("config file '" + config_path +
                               "' is not valid JSON: " + e.what());
    }
    if (!file_.is_object()) {
      throw hidac::ConfigError("config file '" + config_path +
                               "' must hold a JSON object");
    }
  }

  bool provided(const std::string& key, const std::string& flag) const {
    return file_.contains(key) || flag_given(flag);
  }

  double number(const std::string& key, const std::string& flag,
                double flag_value, double fallback) {
    valid_.insert(key);
    double v = fallback;
    if (file_.contains(key)) {
      const json& j = file_[key];
      if (j.is_number()) {
        v = j.get<double>();
      } else {
        throw hidac::ConfigError("config key '" + key + "' must be a number");
      }
    }
    if (flag_given(flag)) v = flag_value;
    resolved_[key] = json(v).dump();
    return v;
  }

  int integer(const std::string& key, const std::string& flag, int flag_value,
              int fallback) {
    valid_.insert(key);
    int v = fallback;
    if (file_.contains(key)) {
      const json& j = file_[key];
      if (j.is_number_integer()) {
        v = j.get<int>();
      } else {
        throw hidac::ConfigError("config key '" + key +
                                 "' must be an integer");
      }
    }
    if (flag_given(flag)) v = flag_value;
    resolved_[key] = std::to_string(v);
    return v;
  }

  bool boolean(const std::string& key, const std::string& flag,
               bool flag_value, bool fallback) {
    valid_.insert(key);
    bool v = fallback;
    if (file_.contains(key)) {
      const json& j = file_[key];
      if (j.is_boolean()) {
        v = j.get<bool>();
      } else {
        throw hidac::ConfigError("config key '" + key + "' must be a boolean");
      }
    }
    if (flag_given(flag)) v = flag_value;
    resolved_[key] = v ? "true" : "false";
    return v;
  }

  std::uint64_t unsigned64(const std::string& key, const std::string& flag,
                           std::uint64_t flag_value, std::uint64_t fallback) {
    valid_.insert(key);
    std::uint64_t v = fallback;
    if (file_.contains(key)) {
      const json& j = file_[key];
      if (j.is_number_unsigned() || j.is_number_integer()) {
        v = j.get<std::uint64_t>();
      } else {
        throw hidac::ConfigError("config key '" + key +
                                 "' must be an unsigned integer");
      }
    }
    if (flag_given(flag)) v = flag_value;
    resolved_[key] = std::to_string(v);
    return v;
  }

  std::string text(const std::string& key, const std::string& flag,
                   const std::string& flag_value, const std::string& fallback) {
    valid_.insert(key);
    std::string v = fallback;
    if (file_.contains(key)) {
      const json& j = file_[key];
      if (j.is_string()) {
        v = j.get<std::string>();
      } else {
        throw hidac::ConfigError("config key '" + key + "' must be a string");
      }
    }
    if (flag_given(flag)) v = flag_value;
    resolved_[key] = v;
    return v;
  }

  /// Rejects config-file keys no call above registered.
  void check_unknown() const {
    for (const auto& item : file_.items()) {
      if (valid_.count(item.key())) continue;
      std::string keys;
      for (const std::string& k : valid_) {
        if (!keys.empty()) keys += ", ";
        keys += k;
      }
      throw hidac::ConfigError("unknown config key '" + item.key() +
                               "'; valid keys: " + keys);
    }
  }

  const std::map<std::string, std::string>& resolved() const {
    return resolved_;
  }

 private:
  bool flag_given(const std::string& flag) const {
    return !flag.empty() && cmd_->count(flag) > 0;
  }

  const CLI::App* cmd_;
  json file_;
  std::set<std::string> valid_;
  std::map<std::string, std::string> resolved_;
};

void write_text(const std::string& path, const std::string& content) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw hidac::IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw hidac::IoError("failed writing '" + path + "'");
}

std::vector<hidac::UnifiedLabel> parse_weak_labels(const std::string& csv) {
  std::vector<hidac::UnifiedLabel> labels;
  std::string current;
  std::istringstream stream(csv);
  while (std::getline(stream, current, ',')) {
    const std::string token = hidac::trim(current);
    if (!token.empty()) labels.push_back(hidac::validate_label(token));
  }
  return labels;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::vector<std::string> paths;
  std::string out_dir;
  std::string config_path;
  std::uint64_t seed = 42;
  const CLI::App* cmd = nullptr;
};

void run_stats(const StatsArgs& a) {
  ConfigResolver cfg(a.cmd, a.config_path);
  const std::string out_dir = cfg.text("out", "--out", a.out_dir, "");
  cfg.check_unknown();

  const auto files = expand_rels_paths(a.paths);
  const auto instances = load_rels(files);
  const std::string stats = hidac::stats_json(instances);

  if (!out_dir.empty()) {
    auto manifest = hidac::RunManifest::begin("stats", cfg.resolved(), a.seed);
    for (const std::string& f : files) manifest.add_input(f);
    const std::string manifest_path =
        (fs::path(out_dir) / "manifest.json").string();
    manifest.write(manifest_path);
    write_text((fs::path(out_dir) / "stats.json").string(), stats + "\n");
    manifest.finalize(manifest_path);
  }
  std::cout << stats << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config_path;
  std::string mode = "hidac";
  std::string train_path;
  std::string dev_path;
  std::string out_dir = "runs/train";
  std::uint64_t seed = 42;
  bool toy = false;
  std::string model_name;
  int layers = 4;
  int hidden_dim = 16;
  int max_seq_len = 64;
  int tap = 0;
  std::string fusion = "enhanced";
  bool untied = false;
  bool soft_routing = false;
  std::string ordering = "natural";
  double lr = -1.0;
  int batch_size = 32;
  int epochs = -1;
  double warmup_epochs = -1.0;
  double warmup_ratio = -1.0;
  double weight_decay = 0.01;
  int patience = -1;
  double clip_norm = 1.0;
  double lambda_ce = 1.0;
  double lambda_cl = 0.3;
  double tau = 0.1;
  double smoothing = 0.1;
  double momentum = 0.999;
  int queue_capacity = 64;
  double view_dropout = 0.1;
  bool filter_queue = false;
  int max_steps = 0;
  double unfreeze = -1.0;
  const CLI::App* cmd = nullptr;
};

void run_train(const TrainArgs& a) {
  ConfigResolver cfg(a.cmd, a.config_path);

  hidac::TrainMode mode = hidac::train_mode_from_string(
      cfg.text("mode", "--mode", a.mode, "hidac"));
  const hidac::TrainConfig base = hidac::TrainConfig::defaults_for(mode);

  const std::string train_path =
      cfg.text("train", "--train", a.train_path, "");
  const std::string dev_path = cfg.text("dev", "--dev", a.dev_path, "");
  const std::string out_dir =
      cfg.text("out", "--out", a.out_dir, "runs/train");
  const std::uint64_t seed = cfg.unsigned64("seed", "--seed", a.seed, 42);

  const bool unfreeze_set = cfg.provided("unfreeze", "--unfreeze");
  const double unfreeze = cfg.number(
      "unfreeze", "--unfreeze", a.unfreeze,
      mode == hidac::TrainMode::kBaselineFull ? 1.0 : 0.0);
  if (unfreeze_set) {
    const bool allowed = unfreeze == 0.0 || unfreeze == 0.25 ||
                         unfreeze == 0.5 || unfreeze == 0.75 ||
                         unfreeze == 1.0;
    if (!allowed) {
      throw hidac::ConfigError(
          "unfreeze must be one of {0, 0.25, 0.5, 0.75, 1}");
    }
    if (hidac::is_hidac_mode(mode)) {
      throw hidac::ConfigError(
          "unfreeze applies to the baseline modes; the dual-adapter model "
          "keeps its base frozen");
    }
    mode = unfreeze == 1.0 ? hidac::TrainMode::kBaselineFull
                           : hidac::TrainMode::kBaselineUnfreeze;
  }
  if (mode == hidac::TrainMode::kBaselineUnfreeze && !unfreeze_set) {
    throw hidac::ConfigError("baseline-unfreeze requires an unfreeze ratio");
  }

  // Encoder selection: desk-scale toy backbone by default; naming a
  // pretrained catalog entry documents the full-scale shape but has no
  // shipped weights, so loading one fails cleanly.
  const bool toy = cfg.boolean("toy", "--toy", a.toy, true);
  const std::string model_name =
      cfg.text("model", "--model", a.model_name, "");
  const int layers = cfg.integer("layers", "--layers", a.layers, 4);
  const int hidden_dim = cfg.integer("hidden_dim", "--dim", a.hidden_dim, 16);
  const int max_seq_len =
      cfg.integer("max_seq_len", "--max-seq-len", a.max_seq_len, 64);
  const int tap = cfg.integer("tap_layer", "--tap", a.tap, 0);
  const std::string fusion_s =
      cfg.text("fusion", "--fusion", a.fusion, "enhanced");
  const bool untied = cfg.boolean("untied", "--untied", a.untied, false);
  const bool soft =
      cfg.boolean("soft_routing", "--soft-routing", a.soft_routing, false);
  const std::string ordering_s =
      cfg.text("ordering", "--ordering", a.ordering, "natural");

  hidac::TrainConfig tc = base;
  tc.mode = mode;
  tc.seed = seed;
  tc.unfreeze_ratio = unfreeze;
  tc.ordering = hidac::ordering_from_string(ordering_s);
  tc.strict_routing = !soft;
  tc.lr_peak = cfg.number("lr", "--lr", a.lr, base.lr_peak);
  tc.batch_size = cfg.integer("batch_size", "--batch-size", a.batch_size, 32);
  tc.max_epochs = cfg.integer("epochs", "--epochs", a.epochs, base.max_epochs);
  tc.warmup_epochs = cfg.number("warmup_epochs", "--warmup-epochs",
                                a.warmup_epochs, base.warmup_epochs);
  tc.warmup_ratio = cfg.number("warmup_ratio", "--warmup-ratio",
                               a.warmup_ratio, base.warmup_ratio);
  tc.weight_decay = cfg.number("weight_decay", "--weight-decay",
                               a.weight_decay, base.weight_decay);
  tc.clip_norm = cfg.number("clip_norm", "--clip-norm", a.clip_norm,
                            base.clip_norm);
  tc.weights.lambda_ce = cfg.number("lambda_ce", "--lambda-ce", a.lambda_ce,
                                    base.weights.lambda_ce);
  tc.weights.lambda_cl = cfg.number("lambda_cl", "--lambda-cl", a.lambda_cl,
                                    base.weights.lambda_cl);
  tc.weights.tau = cfg.number("tau", "--tau", a.tau, base.weights.tau);
  tc.weights.smoothing = cfg.number("smoothing", "--smoothing", a.smoothing,
                                    base.weights.smoothing);
  tc.momentum = cfg.number("momentum", "--momentum", a.momentum,
                           base.momentum);
  tc.queue_capacity = cfg.integer("queue_capacity", "--queue",
                                  a.queue_capacity, base.queue_capacity);
  tc.view_dropout = cfg.number("view_dropout", "--view-dropout",
                               a.view_dropout, base.view_dropout);
  tc.filter_queue_by_label =
      cfg.boolean("filter_queue_by_label", "--filter-queue", a.filter_queue,
                  base.filter_queue_by_label);
  tc.max_steps = cfg.integer("max_steps", "--max-steps", a.max_steps, 0);
  const int patience_flag =
      cfg.integer("patience", "--patience", a.patience, -1);
  cfg.check_unknown();

  if (train_path.empty()) {
    throw hidac::ConfigError("training data path is required (--train)");
  }
  if (!model_name.empty() && a.cmd->count("--toy") > 0 && toy) {
    throw hidac::ConfigError("--toy and --model are mutually exclusive");
  }

  hidac::EncoderSpec spec =
      model_name.empty()
          ? hidac::EncoderSpec::toy(layers, hidden_dim, seed, max_seq_len)
          : hidac::EncoderSpec::pretrained(model_name);

  const auto train_files = expand_rels_paths({train_path});
  auto train_insts = load_rels(train_files);
  std::vector<std::string> dev_files;
  std::vector<hidac::RelationInstance> dev_insts;
  if (!dev_path.empty()) {
    dev_files = expand_rels_paths({dev_path});
    dev_insts = load_rels(dev_files);
  }
  tc.patience = patience_flag >= 0 ? patience_flag
                                   : (dev_insts.empty() ? 0 : base.patience);
  tc.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();

  auto manifest = hidac::RunManifest::begin("train", cfg.resolved(), seed);
  for (const auto& f : train_files) manifest.add_input(f);
  for (const auto& f : dev_files) manifest.add_input(f);
  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.json").string();
  manifest.write(manifest_path);

  const std::string checkpoint_path =
      (fs::path(out_dir) / "checkpoint.hdc").string();
  hidac::TrainHistory history;

  if (hidac::is_hidac_mode(mode)) {
    hidac::HiDACConfig mc;
    mc.encoder = spec;
    mc.tap_layer = tap;
    mc.fusion = hidac::fusion_mode_from_string(fusion_s);
    mc.tied_encoders = !untied;
    mc.seed = seed;
    auto model = hidac::HiDACModel::build(mc);

    std::int64_t adapter_params = 0;
    for (auto* p : model.adapter_parameters()) adapter_params += p->value.size();
    manifest.config["adapter_parameters"] = std::to_string(adapter_params);

    history = hidac::train(model, tc, train_insts, dev_insts);
    hidac::save_checkpoint(model, checkpoint_path);
  } else {
    auto model = hidac::BaselineModel::build(spec, seed);
    const auto freeze = model.encoder().set_trainable(
        mode == hidac::TrainMode::kBaselineFull ? 1.0 : unfreeze);
    manifest.config["trainable_layers"] =
        std::to_string(freeze.trainable_layer_indices.size()) + "/" +
        std::to_string(freeze.trainable_layer_indices.size() +
                       freeze.frozen_layer_indices.size());

    history = hidac::train(model, tc, train_insts, dev_insts);
    hidac::save_checkpoint(model, checkpoint_path);
  }

  manifest.finalize(manifest_path);

  std::cout << "mode: " << hidac::train_mode_name(mode) << "\n"
            << "epochs run: " << history.epochs.size() << " (best "
            << history.best_epoch << ", "
            << (history.stopped_early ? "stopped early" : "ran out the budget")
            << ")\n"
            << "optimizer steps: " << history.steps << "\n";
  if (!history.epochs.empty()) {
    const auto& last = history.epochs.back();
    std::cout << "final train loss: " << last.l_total;
    if (!dev_insts.empty()) {
      std::cout << "  dev accuracy: " << last.dev_accuracy;
    }
    std::cout << "\n";
  }
  std::cout << "checkpoint: " << checkpoint_path << "\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string config_path;
  std::string checkpoint;
  std::vector<std::string> data;
  std::string out_dir;
  double min_accuracy = -1.0;
  std::uint64_t seed = 42;
  const CLI::App* cmd = nullptr;
};

void run_eval(const EvalArgs& a) {
  ConfigResolver cfg(a.cmd, a.config_path);
  const std::string out_dir = cfg.text("out", "--out", a.out_dir, "");
  const double min_accuracy = cfg.number("min_accuracy", "--min-accuracy",
                                         a.min_accuracy, -1.0);
  cfg.check_unknown();

  const auto files = expand_rels_paths(a.data);
  const auto labeled = hidac::exclude_masked(load_rels(files));
  if (labeled.empty()) {
    throw hidac::InputError("no labeled instances to evaluate");
  }

  auto manifest = hidac::RunManifest::begin("eval", cfg.resolved(), a.seed);
  manifest.add_input(a.checkpoint);
  for (const auto& f : files) manifest.add_input(f);
  const std::string manifest_path =
      out_dir.empty() ? "" : (fs::path(out_dir) / "manifest.json").string();
  if (!manifest_path.empty()) manifest.write(manifest_path);

  std::vector<hidac::UnifiedLabel> preds, golds;
  std::vector<hidac::GroupMeta> meta;
  preds.reserve(labeled.size());
  const std::string type = hidac::checkpoint_model_type(a.checkpoint);
  if (type == "hidac") {
    auto model = hidac::load_hidac_checkpoint(a.checkpoint);
    for (const auto& r : labeled) preds.push_back(model.classify(r));
  } else {
    auto model = hidac::load_baseline_checkpoint(a.checkpoint);
    for (const auto& r : labeled) preds.push_back(model.classify(r));
  }
  for (const auto& r : labeled) {
    golds.push_back(r.label);
    meta.push_back({r.framework, r.language});
  }

  const auto report = hidac::grouped_report(preds, golds, meta);
  if (!out_dir.empty()) {
    write_text((fs::path(out_dir) / "report.json").string(),
               hidac::report_json(report));
    write_text((fs::path(out_dir) / "report.tsv").string(),
               hidac::report_tsv(report));
    manifest.finalize(manifest_path);
  }

  std::cout << hidac::report_tsv(report) << "overall accuracy "
            << report.overall_accuracy << ", macro-F1 "
            << report.overall_macro_f1 << " over " << report.total
            << " instances\n";

  if (min_accuracy >= 0.0 && report.overall_accuracy < min_accuracy) {
    std::cerr << "accuracy gate failed: " << report.overall_accuracy << " < "
              << min_accuracy << "\n";
    g_exit = 1;
  }
}

// ---------------------------------------------------------------------------
// prompt-eval

struct PromptEvalArgs {
  std::string config_path;
  std::string train_path;
  std::string dev_path;
  std::string out_dir = "runs/prompt";
  std::string mode = "zero-shot";
  std::string experiment = "exp1";
  std::string ordering = "natural";
  std::string client = "mock:gold";
  std::string weak_labels;
  std::string template_path;
  int folds = 27;
  int select = 4;
  int per_combo = 3;
  int in_flight = 1;
  int attempts = 3;
  bool allow_english_fallback = false;
  std::uint64_t seed = 42;
  const CLI::App* cmd = nullptr;
};

void run_prompt_eval_cmd(const PromptEvalArgs& a) {
  ConfigResolver cfg(a.cmd, a.config_path);
  const std::string train_path =
      cfg.text("train", "--train", a.train_path, "");
  const std::string dev_path = cfg.text("dev", "--dev", a.dev_path, "");
  const std::string out_dir =
      cfg.text("out", "--out", a.out_dir, "runs/prompt");
  const std::string mode_s =
      cfg.text("mode", "--mode", a.mode, "zero-shot");
  const std::string experiment_s =
      cfg.text("experiment", "--experiment", a.experiment, "exp1");
  const std::string ordering_s =
      cfg.text("ordering", "--ordering", a.ordering, "natural");
  const std::string client_s =
      cfg.text("client", "--client", a.client, "mock:gold");
  const std::string weak_csv =
      cfg.text("weak_labels", "--weak-labels", a.weak_labels, "");
  const std::string template_path =
      cfg.text("template", "--template", a.template_path, "");
  const int folds = cfg.integer("folds", "--folds", a.folds, 27);
  const int select = cfg.integer("select", "--select", a.select, 4);
  const int per_combo = cfg.integer("per_combo", "--per-combo", a.per_combo, 3);
  const int in_flight = cfg.integer("in_flight", "--in-flight", a.in_flight, 1);
  const int attempts = cfg.integer("max_attempts", "--attempts", a.attempts, 3);
  const bool fallback =
      cfg.boolean("allow_english_fallback", "--allow-english-fallback",
                  a.allow_english_fallback, false);
  const std::uint64_t seed = cfg.unsigned64("seed", "--seed", a.seed, 42);
  cfg.check_unknown();

  if (train_path.empty() || dev_path.empty()) {
    throw hidac::ConfigError(
        "prompt-eval needs --train (example pool) and --dev (evaluation) data");
  }

  const hidac::PromptMode mode = hidac::prompt_mode_from_string(mode_s);
  const hidac::Experiment experiment =
      hidac::experiment_from_string(experiment_s);
  const auto weak = parse_weak_labels(weak_csv);
  if (mode == hidac::PromptMode::kFewShot &&
      experiment == hidac::Experiment::kExp3WeakLabels && weak.size() != 6) {
    throw hidac::ConfigError(
        "experiment 3 needs --weak-labels with exactly six comma-separated "
        "labels");
  }

  const auto train_files = expand_rels_paths({train_path});
  const auto dev_files = expand_rels_paths({dev_path});
  const auto pool_source = load_rels(train_files);
  const auto dev = hidac::exclude_masked(load_rels(dev_files));
  if (dev.empty()) throw hidac::InputError("no labeled instances to evaluate");

  const auto strata = hidac::stratified_subsets(dev, folds, seed);
  const auto picked = hidac::select_fold_indices(folds, select, seed);
  const auto pool = hidac::build_pool(pool_source, per_combo, seed);

  hidac::PromptSpec spec =
      mode == hidac::PromptMode::kZeroShot
          ? hidac::PromptSpec::zero_shot(
                hidac::ordering_from_string(ordering_s))
          : hidac::PromptSpec::few_shot(
                experiment, hidac::ordering_from_string(ordering_s));
  spec.allow_english_fallback = fallback;
  spec.template_path = template_path;

  auto client = hidac::make_client(client_s, dev);

  auto manifest =
      hidac::RunManifest::begin("prompt-eval", cfg.resolved(), seed);
  for (const auto& f : train_files) manifest.add_input(f);
  for (const auto& f : dev_files) manifest.add_input(f);
  if (!template_path.empty()) manifest.add_input(template_path);
  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.json").string();
  manifest.write(manifest_path);

  std::vector<hidac::PredictedLabel> all_preds;
  std::vector<hidac::UnifiedLabel> all_golds;
  std::vector<hidac::GroupMeta> all_meta;
  int parse_failures = 0, transport_failures = 0;

  for (const int fold : picked) {
    std::vector<hidac::RelationInstance> subset;
    subset.reserve(strata.folds[static_cast<std::size_t>(fold)].size());
    for (const int index : strata.folds[static_cast<std::size_t>(fold)]) {
      subset.push_back(dev[static_cast<std::size_t>(index)]);
    }

    hidac::PromptEvalOptions options;
    options.audit_path =
        (fs::path(out_dir) / ("audit-fold" + std::to_string(fold) + ".jsonl"))
            .string();
    options.max_in_flight = in_flight;
    options.max_attempts = attempts;
    options.model = client_s;
    options.seed = seed;
    options.weak_labels = weak;

    const auto result =
        hidac::run_prompt_eval(*client, subset, spec, pool, options);
    write_text((fs::path(out_dir) /
                ("report-fold" + std::to_string(fold) + ".json"))
                   .string(),
               hidac::report_json(result.report));

    for (std::size_t i = 0; i < subset.size(); ++i) {
      all_preds.push_back(result.outcomes[i].parsed);
      all_golds.push_back(subset[i].label);
      all_meta.push_back({subset[i].framework, subset[i].language});
    }
    parse_failures += result.n_parse_failures;
    transport_failures += result.n_transport_failures;

    std::cout << "fold " << fold << ": accuracy "
              << result.report.overall_accuracy << ", macro-F1 "
              << result.report.overall_macro_f1 << " ("
              << result.report.total << " instances)\n";
  }

  const auto aggregate = hidac::grouped_report(all_preds, all_golds, all_meta);
  write_text((fs::path(out_dir) / "report.json").string(),
             hidac::report_json(aggregate));
  write_text((fs::path(out_dir) / "report.tsv").string(),
             hidac::report_tsv(aggregate));
  manifest.finalize(manifest_path);

  std::cout << "aggregate: accuracy " << aggregate.overall_accuracy
            << ", macro-F1 " << aggregate.overall_macro_f1 << " over "
            << aggregate.total << " instances (" << parse_failures
            << " parse failures, " << transport_failures
            << " transport failures)\n";
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string config_path;
  std::string kind = "distribution";
  std::string out_path;
  int total = 1000;
  int per_combo = 3;
  int n_labels = 4;
  std::uint64_t seed = 42;
  const CLI::App* cmd = nullptr;
};

void run_synth(const SynthArgs& a) {
  ConfigResolver cfg(a.cmd, a.config_path);
  const std::string kind = cfg.text("kind", "--kind", a.kind, "distribution");
  const std::string out_path = cfg.text("out", "--out", a.out_path, "");
  const int total = cfg.integer("total", "--total", a.total, 1000);
  const int per_combo =
      cfg.integer("per_combo", "--per-combo", a.per_combo, 3);
  const int n_labels = cfg.integer("n_labels", "--n-labels", a.n_labels, 4);
  const std::uint64_t seed = cfg.unsigned64("seed", "--seed", a.seed, 42);
  cfg.check_unknown();

  if (out_path.empty()) {
    throw hidac::ConfigError("an output .rels path is required (--out)");
  }

  std::vector<hidac::RelationInstance> instances;
  if (kind == "distribution") {
    instances = hidac::make_distribution_fixture(total, seed);
  } else if (kind == "combo") {
    instances = hidac::make_combo_fixture(per_combo, seed);
  } else if (kind == "separable") {
    instances = hidac::make_separable_fixture(total, n_labels, seed);
  } else {
    throw hidac::ConfigError(
        "unknown fixture kind '" + kind +
        "' (expected distribution, combo, or separable)");
  }

  auto manifest = hidac::RunManifest::begin("synth", cfg.resolved(), seed);
  const std::string manifest_path = out_path + ".manifest.json";
  manifest.write(manifest_path);
  const auto parent = fs::path(out_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  hidac::write_rels_file(instances, out_path);
  manifest.finalize(manifest_path);

  std::cout << "wrote " << instances.size() << " instances to " << out_path
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "hidac: multilingual discourse-relation classification — adapter "
      "training, fine-tuning baselines, metrics, and prompt-based evaluation"};
  app.require_subcommand(1);

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand(
      "stats", "Label/framework/language distribution of .rels data");
  stats_cmd->add_option("paths", stats.paths, ".rels files or directories")
      ->required();
  stats_cmd->add_option("--out", stats.out_dir, "output directory");
  stats_cmd->add_option("--config", stats.config_path, "JSON config file");
  stats_cmd->add_option("--seed", stats.seed, "RNG seed");
  stats.cmd = stats_cmd;
  stats_cmd->callback([&] { run_stats(stats); });

  TrainArgs train;
  auto* train_cmd = app.add_subcommand(
      "train", "Train the dual-adapter model or a fine-tuning baseline");
  train_cmd->add_option("--config", train.config_path, "JSON config file");
  train_cmd->add_option(
      "--mode", train.mode,
      "hidac | hidac-instance | baseline | baseline-unfreeze");
  train_cmd->add_option("--train", train.train_path, "training .rels data");
  train_cmd->add_option("--dev", train.dev_path, "development .rels data");
  train_cmd->add_option("--out", train.out_dir, "output directory");
  train_cmd->add_option("--seed", train.seed, "RNG seed");
  train_cmd->add_flag("--toy", train.toy, "use the toy backbone (default)");
  train_cmd->add_option("--model", train.model_name,
                        "pretrained catalog entry (no shipped weights)");
  train_cmd->add_option("--layers", train.layers, "toy backbone depth");
  train_cmd->add_option("--dim", train.hidden_dim, "toy hidden size");
  train_cmd->add_option("--max-seq-len", train.max_seq_len,
                        "token budget per sequence");
  train_cmd->add_option("--tap", train.tap,
                        "contrastive tap layer (0 = depth/3)");
  train_cmd->add_option("--fusion", train.fusion, "enhanced | concat");
  train_cmd->add_flag("--untied", train.untied,
                      "separate encoders for the two arguments");
  train_cmd->add_flag("--soft-routing", train.soft_routing,
                      "let both losses update all adapter blocks");
  train_cmd->add_option("--ordering", train.ordering,
                        "natural | relation-directed");
  train_cmd->add_option("--lr", train.lr, "peak learning rate");
  train_cmd->add_option("--batch-size", train.batch_size, "batch size");
  train_cmd->add_option("--epochs", train.epochs, "epoch budget");
  train_cmd->add_option("--warmup-epochs", train.warmup_epochs,
                        "warmup length in epochs (adapter modes)");
  train_cmd->add_option("--warmup-ratio", train.warmup_ratio,
                        "warmup fraction of total steps (baselines)");
  train_cmd->add_option("--weight-decay", train.weight_decay, "AdamW decay");
  train_cmd->add_option("--patience", train.patience,
                        "early-stop patience (-1 = mode default)");
  train_cmd->add_option("--clip-norm", train.clip_norm,
                        "global gradient-norm cap");
  train_cmd->add_option("--lambda-ce", train.lambda_ce,
                        "classification loss weight");
  train_cmd->add_option("--lambda-cl", train.lambda_cl,
                        "contrastive loss weight");
  train_cmd->add_option("--tau", train.tau, "contrastive temperature");
  train_cmd->add_option("--smoothing", train.smoothing, "label smoothing");
  train_cmd->add_option("--momentum", train.momentum,
                        "key-encoder momentum (instance mode)");
  train_cmd->add_option("--queue", train.queue_capacity,
                        "negative queue capacity (instance mode)");
  train_cmd->add_option("--view-dropout", train.view_dropout,
                        "stochastic-view dropout (instance mode)");
  train_cmd->add_flag("--filter-queue", train.filter_queue,
                      "drop same-label negatives from the queue");
  train_cmd->add_option("--max-steps", train.max_steps,
                        "hard optimizer-step cap (0 = none)");
  train_cmd->add_option("--unfreeze", train.unfreeze,
                        "baseline trainable-layer ratio "
                        "{0, 0.25, 0.5, 0.75, 1}");
  train.cmd = train_cmd;
  train_cmd->callback([&] { run_train(train); });

  EvalArgs eval;
  auto* eval_cmd =
      app.add_subcommand("eval", "Score a checkpoint on labeled .rels data");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--data", eval.data, ".rels files or directories")
      ->required();
  eval_cmd->add_option("--out", eval.out_dir, "output directory");
  eval_cmd->add_option("--config", eval.config_path, "JSON config file");
  eval_cmd->add_option("--min-accuracy", eval.min_accuracy,
                       "fail (exit 1) below this overall accuracy");
  eval_cmd->add_option("--seed", eval.seed, "RNG seed");
  eval.cmd = eval_cmd;
  eval_cmd->callback([&] { run_eval(eval); });

  PromptEvalArgs prompt;
  auto* prompt_cmd = app.add_subcommand(
      "prompt-eval", "Evaluate an LLM client on stratified dev subsets");
  prompt_cmd->add_option("--config", prompt.config_path, "JSON config file");
  prompt_cmd->add_option("--train", prompt.train_path,
                         "training .rels data (example pool)");
  prompt_cmd->add_option("--dev", prompt.dev_path, "development .rels data");
  prompt_cmd->add_option("--out", prompt.out_dir, "output directory");
  prompt_cmd->add_option("--mode", prompt.mode, "zero-shot | few-shot");
  prompt_cmd->add_option("--experiment", prompt.experiment,
                         "exp1 | exp2 | exp3");
  prompt_cmd->add_option("--ordering", prompt.ordering,
                         "natural | relation-directed");
  prompt_cmd->add_option("--client", prompt.client,
                         "mock:gold | mock:fixed:<label> | mock:unparseable "
                         "| http:<model>");
  prompt_cmd->add_option("--weak-labels", prompt.weak_labels,
                         "six comma-separated labels (experiment 3)");
  prompt_cmd->add_option("--template", prompt.template_path,
                         "prompt template override file");
  prompt_cmd->add_option("--folds", prompt.folds, "stratified fold count");
  prompt_cmd->add_option("--select", prompt.select, "folds to evaluate");
  prompt_cmd->add_option("--per-combo", prompt.per_combo,
                         "pool examples per combination");
  prompt_cmd->add_option("--in-flight", prompt.in_flight,
                         "max concurrent requests");
  prompt_cmd->add_option("--attempts", prompt.attempts,
                         "max attempts per request");
  prompt_cmd->add_flag("--allow-english-fallback",
                       prompt.allow_english_fallback,
                       "experiment 1: fall back to English examples");
  prompt_cmd->add_option("--seed", prompt.seed, "RNG seed");
  prompt.cmd = prompt_cmd;
  prompt_cmd->callback([&] { run_prompt_eval_cmd(prompt); });

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand(
      "synth", "Generate synthetic .rels fixtures for desk-scale runs");
  synth_cmd->add_option("--kind", synth.kind,
                        "distribution | combo | separable");
  synth_cmd->add_option("--out", synth.out_path, "output .rels path");
  synth_cmd->add_option("--total", synth.total,
                        "instance count (distribution/separable)");
  synth_cmd->add_option("--per-combo", synth.per_combo,
                        "instances per combination (combo)");
  synth_cmd->add_option("--n-labels", synth.n_labels,
                        "distinct labels (separable)");
  synth_cmd->add_option("--seed", synth.seed, "RNG seed");
  synth_cmd->add_option("--config", synth.config_path, "JSON config file");
  synth.cmd = synth_cmd;
  synth_cmd->callback([&] { run_synth(synth); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return g_exit;
}
