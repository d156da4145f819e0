#include "hidac/trainer.hpp"

#include "hidac/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace hidac {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kCheckpointMagic[8] = {'H', 'D', 'C', 'K', 'P', 'T', 'v', '1'};

std::vector<RelationInstance> prepare_data(
    const std::vector<RelationInstance>& data, OrderingStrategy ordering) {
  std::vector<RelationInstance> out = exclude_masked(data);
  for (auto& inst : out) {
    OrderedPair pair = apply_ordering(inst, ordering);
    inst.arg1_text = pair.first;
    inst.arg2_text = pair.second;
  }
  return out;
}

using ParamSet = std::unordered_set<const ad::Parameter*>;

ParamSet to_set(const std::vector<ad::Parameter*>& params) {
  return ParamSet(params.begin(), params.end());
}

double grad_norm_over(const std::vector<ad::Parameter*>& params) {
  double sq = 0.0;
  for (const ad::Parameter* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

// Per-instance work: build the loss graph, backpropagate (scaled for batch
// averaging), and report (ce, contrastive, combined) loss values.
using InstanceStep =
    std::function<std::array<double, 3>(const RelationInstance&, double)>;
// (accuracy, loss) over the dev set with the current parameters.
using DevEval = std::function<std::pair<double, double>()>;

struct LoopHooks {
  InstanceStep instance_step;
  std::function<void()> after_optimizer_step;  // optional
  DevEval eval_dev;                            // optional (dev may be empty)
  StopCriterion criterion = StopCriterion::kDevAccuracy;
};

TrainHistory run_loop(const TrainConfig& config,
                      const std::vector<ad::Parameter*>& params,
                      const std::vector<RelationInstance>& train_data,
                      bool has_dev, const LoopHooks& hooks) {
  if (train_data.empty())
    throw ConfigError("training data is empty (after dropping masked rows)");
  if (params.empty())
    throw ConfigError(
        "nothing to optimize: all parameters frozen and no head attached");
  if (!has_dev && config.patience > 0)
    throw ConfigError("early stopping (patience > 0) requires a dev set");
  if (config.batch_size <= 0)
    throw ConfigError("batch size must be positive");
  if (config.max_epochs <= 0)
    throw ConfigError("epoch budget must be positive");

  const int n = static_cast<int>(train_data.size());
  const int steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  int total_steps = steps_per_epoch * config.max_epochs;
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);
  int warmup_steps =
      is_hidac_mode(config.mode)
          ? static_cast<int>(std::lround(config.warmup_epochs * steps_per_epoch))
          : static_cast<int>(std::lround(config.warmup_ratio * total_steps));
  warmup_steps = std::clamp(warmup_steps, 0, total_steps - 1);
  Schedule schedule = make_schedule(config.lr_peak, warmup_steps, total_steps);

  AdamW optimizer(params, config.weight_decay);
  std::mt19937_64 shuffle_rng = seeded_rng(config.seed, "shuffle");

  std::ofstream metrics;
  if (!config.metrics_path.empty()) {
    metrics.open(config.metrics_path, std::ios::trunc);
    if (!metrics)
      throw IoError("cannot open metrics file '" + config.metrics_path + "'");
  }

  TrainHistory history;
  std::vector<Mat> best_values;
  double best_criterion = 0.0;
  std::vector<double> criterion_trace;
  int step = 0;
  bool out_of_steps = false;

  for (int epoch = 1; epoch <= config.max_epochs && !out_of_steps; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    shuffle_in_place(order, shuffle_rng);

    double sum_ce = 0.0, sum_cl = 0.0, sum_total = 0.0;
    int seen = 0;
    double last_lr = 0.0;

    for (int start = 0; start < n && !out_of_steps; start += config.batch_size) {
      const int end = std::min(n, start + config.batch_size);
      const double inv_b = 1.0 / (end - start);
      for (ad::Parameter* p : params) p->zero_grad();
      for (int i = start; i < end; ++i) {
        auto [ce, cl, total] =
            hooks.instance_step(train_data[static_cast<std::size_t>(order[i])],
                                inv_b);
        sum_ce += ce;
        sum_cl += cl;
        sum_total += total;
        ++seen;
      }
      const double pre_norm = clip_global_norm(params, config.clip_norm);
      history.max_post_clip_norm = std::max(
          history.max_post_clip_norm, std::min(pre_norm, config.clip_norm));
      last_lr = schedule(step);
      optimizer.step(last_lr);
      history.lr_by_step.push_back(last_lr);
      ++step;
      history.steps = step;
      if (hooks.after_optimizer_step) hooks.after_optimizer_step();
      if (config.max_steps > 0 && step >= config.max_steps) out_of_steps = true;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_ce = sum_ce / seen;
    rec.l_lcl = sum_cl / seen;
    rec.l_total = sum_total / seen;
    rec.lr = last_lr;
    if (has_dev) {
      auto [acc, loss] = hooks.eval_dev();
      rec.dev_accuracy = acc;
      rec.dev_loss = loss;
    }
    history.epochs.push_back(rec);

    if (metrics.is_open()) {
      ordered_json line = {{"epoch", rec.epoch},       {"l_ce", rec.l_ce},
                           {"l_lcl", rec.l_lcl},       {"l_total", rec.l_total},
                           {"dev_accuracy", rec.dev_accuracy},
                           {"dev_loss", rec.dev_loss}, {"lr", rec.lr}};
      metrics << line.dump() << '\n';
      metrics.flush();
    }

    if (has_dev) {
      const bool maximize = hooks.criterion == StopCriterion::kDevAccuracy;
      const double value =
          maximize ? rec.dev_accuracy : rec.dev_loss;
      criterion_trace.push_back(value);
      const bool improved =
          history.best_epoch == 0 ||
          (maximize ? value > best_criterion : value < best_criterion);
      if (improved) {
        best_criterion = value;
        history.best_epoch = epoch;
        best_values.clear();
        best_values.reserve(params.size());
        for (const ad::Parameter* p : params) best_values.push_back(p->value);
      }
      if (!out_of_steps && config.patience > 0 &&
          early_stop(criterion_trace, config.patience, hooks.criterion)) {
        history.stopped_early = true;
        break;
      }
    }
  }

  if (history.best_epoch > 0)
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value = best_values[i];
  return history;
}

}  // namespace

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kHidacLabelCentered: return "hidac-label-centered";
    case TrainMode::kHidacInstance: return "hidac-instance";
    case TrainMode::kBaselineFull: return "baseline-full";
    case TrainMode::kBaselineUnfreeze: return "baseline-unfreeze";
  }
  throw ConfigError("unhandled training mode");
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "hidac" || s == "hidac-label-centered")
    return TrainMode::kHidacLabelCentered;
  if (s == "hidac-instance") return TrainMode::kHidacInstance;
  if (s == "baseline" || s == "baseline-full") return TrainMode::kBaselineFull;
  if (s == "baseline-unfreeze") return TrainMode::kBaselineUnfreeze;
  throw ConfigError("unknown training mode '" + s +
                    "' (expected hidac, hidac-instance, baseline, or "
                    "baseline-unfreeze)");
}

bool is_hidac_mode(TrainMode mode) {
  return mode == TrainMode::kHidacLabelCentered ||
         mode == TrainMode::kHidacInstance;
}

TrainConfig TrainConfig::defaults_for(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  if (is_hidac_mode(mode)) {
    c.lr_peak = 2e-5;
    c.max_epochs = 10;
    c.warmup_epochs = 2.0;
    c.patience = 2;
  } else {
    c.lr_peak = 3e-5;
    c.max_epochs = 20;
    c.warmup_ratio = 0.1;
    c.patience = 3;
    c.weights.lambda_cl = 0.0;
    c.weights.smoothing = 0.0;
  }
  return c;
}

Schedule make_schedule(double lr_peak, int warmup_steps, int total_steps) {
  if (lr_peak < 0.0)
    throw ConfigError("peak learning rate must be non-negative");
  if (warmup_steps < 0) throw ConfigError("warmup steps must be non-negative");
  if (warmup_steps >= total_steps)
    throw ConfigError("warmup (" + std::to_string(warmup_steps) +
                      " steps) must end before the schedule does (" +
                      std::to_string(total_steps) + " steps)");
  return [=](int step) -> double {
    if (step <= 0) return warmup_steps == 0 ? lr_peak : 0.0;
    if (step <= warmup_steps)
      return lr_peak * static_cast<double>(step) / warmup_steps;
    if (step >= total_steps) return 0.0;
    const double progress = static_cast<double>(step - warmup_steps) /
                            (total_steps - warmup_steps);
    return lr_peak * 0.5 * (1.0 + std::cos(M_PI * progress));
  };
}

bool early_stop(const std::vector<double>& values, int patience,
                StopCriterion criterion) {
  if (values.empty() || patience <= 0) return false;
  const bool maximize = criterion == StopCriterion::kDevAccuracy;
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (maximize ? values[i] > values[best] : values[i] < values[best])
      best = i;
  return values.size() - 1 - best >= static_cast<std::size_t>(patience);
}

AdamW::AdamW(std::vector<ad::Parameter*> params, double weight_decay,
             double beta1, double beta2, double eps)
    : params_(std::move(params)), weight_decay_(weight_decay), beta1_(beta1),
      beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const ad::Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const Mat update =
        ((m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + eps_)).matrix() +
        weight_decay_ * p.value;
    p.value -= lr * update;
  }
}

double clip_global_norm(const std::vector<ad::Parameter*>& params,
                        double max_norm) {
  if (max_norm <= 0.0) throw ConfigError("clip norm must be positive");
  const double norm = grad_norm_over(params);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (ad::Parameter* p : params) p->grad *= scale;
  }
  return norm;
}

TrainHistory train(HiDACModel& model, const TrainConfig& config,
                   const std::vector<RelationInstance>& train_data,
                   const std::vector<RelationInstance>& dev_data) {
  if (!is_hidac_mode(config.mode))
    throw ConfigError("baseline training mode given a dual-adapter model");
  const std::vector<RelationInstance> train_set =
      prepare_data(train_data, config.ordering);
  const std::vector<RelationInstance> dev_set =
      prepare_data(dev_data, config.ordering);

  std::vector<ad::Parameter*> params = model.trainable_parameters();
  const ParamSet lower = to_set(model.lower_adapter_parameters());
  ParamSet contrastive_block = lower;
  contrastive_block.insert(&model.prototypes().embeddings);
  const auto ce_filter = [&](const ad::Parameter& p) {
    return contrastive_block.count(&p) == 0;
  };
  const auto cl_filter = [&](const ad::Parameter& p) {
    return contrastive_block.count(&p) != 0;
  };

  std::mt19937_64 dropout_rng = seeded_rng(config.seed, "dropout");
  const LossWeights& w = config.weights;
  const bool instance_mode = config.mode == TrainMode::kHidacInstance;

  // Instance-contrast machinery: a momentum-tracked key encoder, a FIFO of
  // detached keys, and (optionally) their labels for negative filtering.
  std::optional<Encoder> key_encoder;
  std::vector<ad::Parameter*> key_params, query_params;
  std::optional<NegativeQueue> queue;
  std::deque<UnifiedLabel> queue_labels;
  std::vector<Vec> batch_keys;
  std::vector<UnifiedLabel> batch_key_labels;
  std::mt19937_64 key_rng = seeded_rng(config.seed, "key-dropout");

  if (instance_mode) {
    if (model.config().tied_encoders == false)
      throw ConfigError(
          "instance-contrast training requires tied dual encoders");
    if (config.batch_size > config.queue_capacity)
      throw ConfigError("negative queue capacity (" +
                        std::to_string(config.queue_capacity) +
                        ") must be at least the batch size (" +
                        std::to_string(config.batch_size) + ")");
    key_encoder = model.encoder().clone();
    key_params = key_encoder->adapters()->parameters();
    query_params = model.encoder().adapters()->parameters();
    queue.emplace(config.queue_capacity);
  }

  auto key_view = [&](const RelationInstance& inst) -> Vec {
    ad::Tape tape(false);
    EncodeOptions eo;
    eo.tap_layers = {model.tap_layer()};
    eo.max_tokens = std::max(2, key_encoder->spec().max_seq_len / 2);
    eo.dropout = config.view_dropout;
    eo.dropout_rng = &key_rng;
    EncodeNodes e1 = key_encoder->encode_on_tape(tape, inst.arg1_text, eo);
    EncodeNodes e2 = key_encoder->encode_on_tape(tape, inst.arg2_text, eo);
    return 0.5 * (tape.value(e1.cls_by_layer.at(model.tap_layer())) +
                  tape.value(e2.cls_by_layer.at(model.tap_layer())));
  };

  LoopHooks hooks;
  hooks.criterion = StopCriterion::kDevAccuracy;

  hooks.instance_step = [&](const RelationInstance& inst,
                            double inv_b) -> std::array<double, 3> {
    ad::Tape tape;
    ForwardOptions fo;
    fo.train_mode = true;
    fo.routing_barrier = config.strict_routing;
    fo.dropout_rng = &dropout_rng;
    if (instance_mode) fo.encoder_dropout = config.view_dropout;
    ForwardNodes nodes = model.forward_on_tape(tape, inst, fo);
    ad::Var l_ce = cross_entropy_node(tape, nodes.logits, inst.label, w.smoothing);
    const double ce = tape.scalar(l_ce);

    std::optional<ad::Var> l_cl;
    double cl = 0.0;
    if (instance_mode) {
      Vec k_pos = key_view(inst);
      std::vector<const Vec*> negatives;
      for (std::size_t i = 0; i < queue->entries().size(); ++i) {
        if (config.filter_queue_by_label && queue_labels[i] == inst.label)
          continue;
        negatives.push_back(&queue->entries()[i]);
      }
      if (!negatives.empty()) {
        l_cl = instance_scl_node(tape, nodes.h_contrastive, k_pos, negatives,
                                 w.tau);
        cl = tape.scalar(*l_cl);
      }
      batch_keys.push_back(std::move(k_pos));
      batch_key_labels.push_back(inst.label);
    } else {
      l_cl = label_centered_scl_node(tape, nodes.h_contrastive,
                                     model.prototypes(), inst.label, w.tau);
      cl = tape.scalar(*l_cl);
    }

    if (config.strict_routing) {
      tape.backward(l_ce, w.lambda_ce * inv_b, ce_filter);
      if (l_cl) tape.backward(*l_cl, w.lambda_cl * inv_b, cl_filter);
    } else if (l_cl) {
      tape.backward(total_loss_node(tape, l_ce, *l_cl, w), inv_b);
    } else {
      tape.backward(l_ce, w.lambda_ce * inv_b);
    }
    return {ce, cl, w.lambda_ce * ce + (l_cl ? w.lambda_cl * cl : 0.0)};
  };

  if (instance_mode) {
    hooks.after_optimizer_step = [&]() {
      momentum_update(key_params, query_params, config.momentum);
      queue->push(batch_keys);
      for (UnifiedLabel l : batch_key_labels) queue_labels.push_back(l);
      while (static_cast<int>(queue_labels.size()) > queue->fill())
        queue_labels.pop_front();
      batch_keys.clear();
      batch_key_labels.clear();
    };
  }

  hooks.eval_dev = [&]() -> std::pair<double, double> {
    int correct = 0;
    double loss_sum = 0.0;
    for (const RelationInstance& inst : dev_set) {
      ForwardOutput out = model.forward(inst);
      if (argmax_label(out.logits) == inst.label) ++correct;
      double loss = w.lambda_ce * cross_entropy(out.logits, inst.label, w.smoothing);
      if (!instance_mode)
        loss += w.lambda_cl * label_centered_scl(out.h_contrastive,
                                                 model.prototypes(), inst.label,
                                                 w.tau);
      loss_sum += loss;
    }
    const double size = static_cast<double>(dev_set.size());
    return {correct / size, loss_sum / size};
  };

  const std::uint64_t checksum_before = model.encoder().base_checksum();
  TrainHistory history =
      run_loop(config, params, train_set, !dev_set.empty(), hooks);
  if (model.encoder().base_checksum() != checksum_before)
    throw StateError("frozen base parameters changed during training");
  return history;
}

TrainHistory train(BaselineModel& model, const TrainConfig& config,
                   const std::vector<RelationInstance>& train_data,
                   const std::vector<RelationInstance>& dev_data) {
  if (is_hidac_mode(config.mode))
    throw ConfigError("dual-adapter training mode given a baseline model");
  const std::vector<RelationInstance> train_set =
      prepare_data(train_data, config.ordering);
  const std::vector<RelationInstance> dev_set =
      prepare_data(dev_data, config.ordering);

  const double ratio =
      config.mode == TrainMode::kBaselineFull ? 1.0 : config.unfreeze_ratio;
  model.encoder().set_trainable(ratio);
  std::vector<ad::Parameter*> params;
  for (ad::Parameter* p : model.encoder().base_parameters())
    if (p->trainable) params.push_back(p);
  for (ad::Parameter* p : model.head_parameters()) params.push_back(p);

  std::mt19937_64 dropout_rng = seeded_rng(config.seed, "dropout");
  const double smoothing = config.weights.smoothing;

  LoopHooks hooks;
  hooks.criterion = StopCriterion::kDevLoss;
  hooks.instance_step = [&](const RelationInstance& inst,
                            double inv_b) -> std::array<double, 3> {
    ad::Tape tape;
    ForwardOptions fo;
    fo.train_mode = true;
    fo.dropout_rng = &dropout_rng;
    ad::Var logits = model.logits_on_tape(tape, inst, fo);
    ad::Var l_ce = cross_entropy_node(tape, logits, inst.label, smoothing);
    const double ce = tape.scalar(l_ce);
    tape.backward(l_ce, inv_b);
    return {ce, 0.0, ce};
  };
  hooks.eval_dev = [&]() -> std::pair<double, double> {
    int correct = 0;
    double loss_sum = 0.0;
    for (const RelationInstance& inst : dev_set) {
      Vec logits = model.logits(inst);
      if (argmax_label(logits) == inst.label) ++correct;
      loss_sum += cross_entropy(logits, inst.label, smoothing);
    }
    const double size = static_cast<double>(dev_set.size());
    return {correct / size, loss_sum / size};
  };

  return run_loop(config, params, train_set, !dev_set.empty(), hooks);
}

RoutingProbe probe_routing(HiDACModel& model, const RelationInstance& instance,
                           const LossWeights& weights, bool strict_routing) {
  std::vector<ad::Parameter*> all = model.trainable_parameters();
  auto lower = model.lower_adapter_parameters();
  std::vector<ad::Parameter*> lower_and_protos = lower;
  lower_and_protos.push_back(&model.prototypes().embeddings);
  std::vector<ad::Parameter*> upper_and_head = model.upper_adapter_parameters();
  for (ad::Parameter* p : model.head_parameters()) upper_and_head.push_back(p);

  auto zero_all = [&]() {
    for (ad::Parameter* p : all) p->zero_grad();
  };

  ad::Tape tape;
  ForwardOptions fo;
  fo.routing_barrier = strict_routing;
  ForwardNodes nodes = model.forward_on_tape(tape, instance, fo);
  ad::Var l_ce =
      cross_entropy_node(tape, nodes.logits, instance.label, weights.smoothing);
  ad::Var l_cl = label_centered_scl_node(tape, nodes.h_contrastive,
                                         model.prototypes(), instance.label,
                                         weights.tau);

  RoutingProbe probe;
  zero_all();
  tape.backward(l_ce);
  probe.ce_on_lower = grad_norm_over(lower);
  probe.ce_on_upper_and_head = grad_norm_over(upper_and_head);
  zero_all();
  tape.backward(l_cl);
  probe.lcl_on_lower_and_prototypes = grad_norm_over(lower_and_protos);
  probe.lcl_on_upper_and_head = grad_norm_over(upper_and_head);
  zero_all();
  return probe;
}

namespace {

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

ordered_json encoder_spec_json(const EncoderSpec& spec) {
  return {{"kind", spec.kind == EncoderKind::kToy ? "toy" : "pretrained"},
          {"model_name", spec.model_name},
          {"n_layers", spec.n_layers},
          {"hidden_dim", spec.hidden_dim},
          {"max_seq_len", spec.max_seq_len},
          {"seed", spec.seed}};
}

EncoderSpec encoder_spec_from_json(const ordered_json& j) {
  EncoderSpec spec;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "toy") {
    spec.kind = EncoderKind::kToy;
  } else if (kind == "pretrained") {
    spec.kind = EncoderKind::kPretrained;
  } else {
    throw LoadError("checkpoint names unknown encoder kind '" + kind + "'");
  }
  spec.model_name = j.at("model_name").get<std::string>();
  spec.n_layers = j.at("n_layers").get<int>();
  spec.hidden_dim = j.at("hidden_dim").get<int>();
  spec.max_seq_len = j.at("max_seq_len").get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

std::string tensor_payload(const std::vector<ad::Parameter*>& params,
                           ordered_json& tensor_list) {
  std::string payload;
  for (const ad::Parameter* p : params) {
    tensor_list.push_back({{"name", p->name},
                           {"rows", p->value.rows()},
                           {"cols", p->value.cols()}});
    const char* bytes = reinterpret_cast<const char*>(p->value.data());
    payload.append(bytes, sizeof(double) *
                              static_cast<std::size_t>(p->value.size()));
  }
  return payload;
}

void write_checkpoint_file(const std::string& path, ordered_json manifest,
                           const std::string& payload) {
  manifest["payload_fnv"] = to_hex(fnv1a64(payload));
  const std::string manifest_text = manifest.dump();
  std::string blob(kCheckpointMagic, sizeof(kCheckpointMagic));
  append_u64(blob, manifest_text.size());
  blob += manifest_text;
  blob += payload;

  const std::filesystem::path target(path);
  if (target.has_parent_path())
    std::filesystem::create_directories(target.parent_path());
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, target);
}

struct LoadedCheckpoint {
  ordered_json manifest;
  std::string payload;
};

LoadedCheckpoint read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw LoadError("'" + path + "' is not a checkpoint file");
  const std::uint64_t manifest_len = read_u64(in);
  std::string manifest_text(manifest_len, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw LoadError("checkpoint '" + path + "' is truncated");
  LoadedCheckpoint loaded;
  try {
    loaded.manifest = ordered_json::parse(manifest_text);
  } catch (const ordered_json::parse_error& e) {
    throw LoadError("checkpoint manifest is not valid JSON: " +
                    std::string(e.what()));
  }
  std::string payload((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  loaded.payload = std::move(payload);
  if (loaded.manifest.contains("payload_fnv") &&
      to_hex(fnv1a64(loaded.payload)) !=
          loaded.manifest.at("payload_fnv").get<std::string>())
    throw LoadError("checkpoint '" + path + "' payload is corrupt");
  return loaded;
}

void fill_tensors(const ordered_json& tensor_list, const std::string& payload,
                  const std::vector<ad::Parameter*>& params) {
  if (tensor_list.size() != params.size())
    throw LoadError("checkpoint holds " + std::to_string(tensor_list.size()) +
                    " tensors, model expects " + std::to_string(params.size()));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = tensor_list[i];
    ad::Parameter& p = *params[i];
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    if (entry.at("name").get<std::string>() != p.name ||
        rows != p.value.rows() || cols != p.value.cols())
      throw LoadError("checkpoint tensor '" +
                      entry.at("name").get<std::string>() +
                      "' does not match model parameter '" + p.name + "'");
    const std::size_t bytes =
        sizeof(double) * static_cast<std::size_t>(rows * cols);
    if (offset + bytes > payload.size())
      throw LoadError("checkpoint payload is truncated");
    std::memcpy(p.value.data(), payload.data() + offset, bytes);
    offset += bytes;
  }
}

}  // namespace

void save_checkpoint(const HiDACModel& model, const std::string& path) {
  auto& mutable_model = const_cast<HiDACModel&>(model);
  const AdapterPlacement& pl = mutable_model.encoder().adapters()->placement();

  ordered_json manifest;
  manifest["format"] = "dual-adapter-checkpoint-v1";
  manifest["model_type"] = "hidac";
  manifest["encoder"] = encoder_spec_json(model.config().encoder);
  manifest["base_checksum"] = to_hex(model.encoder().base_checksum());
  manifest["tap_layer"] = model.tap_layer();
  manifest["fusion"] = fusion_mode_name(model.config().fusion);
  manifest["tied_encoders"] = model.config().tied_encoders;
  manifest["model_seed"] = model.config().seed;
  manifest["placement"] = {{"lower", {pl.lower.first, pl.lower.last}},
                           {"upper", {pl.upper.first, pl.upper.last}},
                           {"n_experts", pl.n_experts},
                           {"rank", pl.rank},
                           {"alpha", pl.alpha},
                           {"per_sublayer", pl.per_sublayer}};
  ordered_json tensors = ordered_json::array();
  const std::string payload =
      tensor_payload(mutable_model.trainable_parameters(), tensors);
  manifest["tensors"] = std::move(tensors);
  write_checkpoint_file(path, std::move(manifest), payload);
}

void save_checkpoint(const BaselineModel& model, const std::string& path) {
  auto& mutable_model = const_cast<BaselineModel&>(model);
  ordered_json manifest;
  manifest["format"] = "dual-adapter-checkpoint-v1";
  manifest["model_type"] = "baseline";
  manifest["encoder"] = encoder_spec_json(model.encoder().spec());
  manifest["base_checksum"] = to_hex(model.encoder().base_checksum());
  manifest["model_seed"] = model.seed();
  std::vector<ad::Parameter*> params = mutable_model.encoder().base_parameters();
  for (ad::Parameter* p : mutable_model.head_parameters()) params.push_back(p);
  ordered_json tensors = ordered_json::array();
  const std::string payload = tensor_payload(params, tensors);
  manifest["tensors"] = std::move(tensors);
  write_checkpoint_file(path, std::move(manifest), payload);
}

std::string checkpoint_model_type(const std::string& path) {
  return read_checkpoint_file(path).manifest.at("model_type").get<std::string>();
}

HiDACModel load_hidac_checkpoint(const std::string& path) {
  LoadedCheckpoint loaded = read_checkpoint_file(path);
  const ordered_json& m = loaded.manifest;
  if (m.at("model_type").get<std::string>() != "hidac")
    throw LoadError("checkpoint '" + path + "' holds a '" +
                    m.at("model_type").get<std::string>() +
                    "' model, expected 'hidac'");

  HiDACConfig config;
  config.encoder = encoder_spec_from_json(m.at("encoder"));
  config.tap_layer = m.at("tap_layer").get<int>();
  config.fusion = fusion_mode_from_string(m.at("fusion").get<std::string>());
  config.tied_encoders = m.at("tied_encoders").get<bool>();
  config.seed = m.at("model_seed").get<std::uint64_t>();
  const auto& pj = m.at("placement");
  AdapterPlacement pl;
  pl.lower = {pj.at("lower")[0].get<int>(), pj.at("lower")[1].get<int>()};
  pl.upper = {pj.at("upper")[0].get<int>(), pj.at("upper")[1].get<int>()};
  pl.n_experts = pj.at("n_experts").get<int>();
  pl.rank = pj.at("rank").get<int>();
  pl.alpha = pj.at("alpha").get<double>();
  pl.per_sublayer = pj.at("per_sublayer").get<bool>();
  config.placement = pl;

  HiDACModel model = HiDACModel::build(config);
  const std::string expected = m.at("base_checksum").get<std::string>();
  const std::string actual = to_hex(model.encoder().base_checksum());
  if (expected != actual)
    throw LoadError("base model mismatch: checkpoint references base " +
                    expected + ", resolved base has checksum " + actual);
  fill_tensors(m.at("tensors"), loaded.payload, model.trainable_parameters());
  return model;
}

BaselineModel load_baseline_checkpoint(const std::string& path) {
  LoadedCheckpoint loaded = read_checkpoint_file(path);
  const ordered_json& m = loaded.manifest;
  if (m.at("model_type").get<std::string>() != "baseline")
    throw LoadError("checkpoint '" + path + "' holds a '" +
                    m.at("model_type").get<std::string>() +
                    "' model, expected 'baseline'");
  BaselineModel model =
      BaselineModel::build(encoder_spec_from_json(m.at("encoder")),
                           m.at("model_seed").get<std::uint64_t>());
  std::vector<ad::Parameter*> params = model.encoder().base_parameters();
  for (ad::Parameter* p : model.head_parameters()) params.push_back(p);
  fill_tensors(m.at("tensors"), loaded.payload, params);
  const std::string expected = m.at("base_checksum").get<std::string>();
  const std::string actual = to_hex(model.encoder().base_checksum());
  if (expected != actual)
    throw LoadError("restored base weights do not match the recorded "
                    "checksum (" + expected + " vs " + actual + ")");
  return model;
}

}  // namespace hidac
