#include "hidac/model.hpp"

#include "hidac/errors.hpp"

#include <cmath>
#include <sstream>

namespace hidac {

namespace {

Mat glorot_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(cols));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

void check_same_dim(const Mat& u, const Mat& v, const char* what) {
  if (u.rows() != v.rows() || u.cols() != v.cols())
    throw ShapeError(std::string(what) + ": dimension mismatch (" +
                     std::to_string(u.rows()) + " vs " +
                     std::to_string(v.rows()) + ")");
}

// Keep the trailing `budget` whitespace tokens of a text.
std::string tail_words(const std::string& text, int budget) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  const int start =
      std::max(0, static_cast<int>(words.size()) - std::max(1, budget));
  std::string out;
  for (std::size_t i = static_cast<std::size_t>(start); i < words.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

std::string fusion_mode_name(FusionMode mode) {
  return mode == FusionMode::kEnhanced ? "enhanced" : "concat";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "enhanced") return FusionMode::kEnhanced;
  if (s == "concat") return FusionMode::kConcat;
  throw ConfigError("unknown fusion mode '" + s +
                    "' (expected 'enhanced' or 'concat')");
}

ad::Var fuse_node(ad::Tape& tape, ad::Var u, ad::Var v, FusionMode mode) {
  check_same_dim(tape.value(u), tape.value(v), "fuse");
  if (mode == FusionMode::kConcat) return tape.concat_rows({u, v});
  return tape.concat_rows({u, v, tape.sub(u, v), tape.mul(u, v)});
}

Vec fuse(const Vec& u, const Vec& v, FusionMode mode) {
  ad::Tape tape(false);
  return tape.value(fuse_node(tape, tape.constant(u), tape.constant(v), mode));
}

ad::Var pool_contrastive_node(ad::Tape& tape, ad::Var u_tap, ad::Var v_tap) {
  check_same_dim(tape.value(u_tap), tape.value(v_tap), "pool_contrastive");
  return tape.scale(tape.add(u_tap, v_tap), 0.5);
}

Vec pool_contrastive(const Vec& u_tap, const Vec& v_tap) {
  ad::Tape tape(false);
  return tape.value(
      pool_contrastive_node(tape, tape.constant(u_tap), tape.constant(v_tap)));
}

Mlp Mlp::init(const std::string& name, int d_in, int d_h1, int d_h2, int d_out,
              std::mt19937_64& rng) {
  if (d_in <= 0 || d_h1 <= 0 || d_h2 <= 0 || d_out <= 0)
    throw ConfigError("mlp dimensions must be positive");
  Mlp mlp;
  mlp.w1 = ad::Parameter(name + ".w1", glorot_matrix(d_h1, d_in, rng));
  mlp.b1 = ad::Parameter(name + ".b1", Mat::Zero(d_h1, 1));
  mlp.w2 = ad::Parameter(name + ".w2", glorot_matrix(d_h2, d_h1, rng));
  mlp.b2 = ad::Parameter(name + ".b2", Mat::Zero(d_h2, 1));
  mlp.w3 = ad::Parameter(name + ".w3", glorot_matrix(d_out, d_h2, rng));
  mlp.b3 = ad::Parameter(name + ".b3", Mat::Zero(d_out, 1));
  return mlp;
}

std::vector<ad::Parameter*> Mlp::parameters() {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x, bool train_mode,
                     std::mt19937_64* dropout_rng) {
  const bool drop = train_mode && dropout_rng != nullptr && dropout_rate > 0.0;
  ad::Var h = tape.tanh_(tape.add(tape.matmul(tape.param(w1), x), tape.param(b1)));
  if (drop) h = tape.dropout(h, dropout_rate, *dropout_rng, true);
  h = tape.tanh_(tape.add(tape.matmul(tape.param(w2), h), tape.param(b2)));
  if (drop) h = tape.dropout(h, dropout_rate, *dropout_rng, true);
  return tape.add(tape.matmul(tape.param(w3), h), tape.param(b3));
}

UnifiedLabel argmax_label(const Vec& logits) {
  if (logits.size() != kNumLabels)
    throw ShapeError("expected " + std::to_string(kNumLabels) +
                     " logits, got " + std::to_string(logits.size()));
  int best = 0;
  for (int i = 1; i < kNumLabels; ++i)
    if (logits(i) > logits(best)) best = i;
  return label_from_index(best);
}

HiDACModel::HiDACModel(const HiDACConfig& config, Encoder encoder)
    : config_(config), encoder_(std::move(encoder)) {}

HiDACModel HiDACModel::build(const HiDACConfig& config) {
  Encoder encoder = Encoder::load(config.encoder);
  const int n = config.encoder.n_layers;
  const int tap = config.tap_layer > 0
                      ? config.tap_layer
                      : static_cast<int>(std::ceil(n / 3.0));
  if (tap < 1 || tap > n)
    throw ConfigError("tap layer " + std::to_string(tap) +
                      " outside [1.." + std::to_string(n) + "]");

  HiDACModel model(config, std::move(encoder));
  model.tap_layer_ = tap;
  // The backbone stays frozen; adapters, head and prototypes carry learning.
  model.encoder_.set_trainable(0.0);

  AdapterPlacement placement =
      config.placement ? *config.placement : AdapterPlacement::default_for(n, tap);
  std::mt19937_64 rng = seeded_rng(config.seed, "hidac-model");
  model.encoder_.attach_adapters(placement, rng);
  if (!config.tied_encoders) model.arg2_encoder_ = model.encoder_.clone();

  const int d = config.encoder.hidden_dim;
  model.prototypes_ = LabelPrototypes::init(d, rng);
  const int d_in = (config.fusion == FusionMode::kEnhanced ? 4 : 2) * d;
  model.head_ = Mlp::init("head", d_in, d, std::max(1, d / 2), kNumLabels, rng);
  return model;
}

ForwardNodes HiDACModel::forward_on_tape(ad::Tape& tape,
                                         const RelationInstance& instance,
                                         const ForwardOptions& options) {
  if (instance.masked)
    throw InputError("instance '" + instance.id +
                     "' has masked (suppressed) argument text");

  std::vector<std::pair<std::string, Mat>> gates;
  EncodeOptions enc;
  enc.tap_layers = {tap_layer_};
  enc.barrier_after_layer = options.routing_barrier ? tap_layer_ : -1;
  enc.max_tokens = std::max(2, encoder_.spec().max_seq_len / 2);
  enc.gate_sink = options.collect_gates ? &gates : nullptr;
  if (options.train_mode && options.encoder_dropout > 0.0) {
    enc.dropout = options.encoder_dropout;
    enc.dropout_rng = options.dropout_rng;
  }

  Encoder& enc2 = arg2_encoder_ ? *arg2_encoder_ : encoder_;
  EncodeNodes e1 = encoder_.encode_on_tape(tape, instance.arg1_text, enc);
  EncodeNodes e2 = enc2.encode_on_tape(tape, instance.arg2_text, enc);

  ForwardNodes out;
  out.truncated = e1.truncated || e2.truncated;
  out.u = e1.final_cls;
  out.v = e2.final_cls;
  out.h_contrastive =
      pool_contrastive_node(tape, e1.cls_by_layer.at(tap_layer_),
                            e2.cls_by_layer.at(tap_layer_));
  ad::Var z = fuse_node(tape, out.u, out.v, config_.fusion);
  out.logits = head_.forward(tape, z, options.train_mode, options.dropout_rng);

  if (options.collect_gates) {
    std::map<std::string, std::pair<Vec, int>> sums;
    for (const auto& [site, weights] : gates) {
      Vec mean = weights.rowwise().mean();
      auto it = sums.find(site);
      if (it == sums.end()) {
        sums.emplace(site, std::make_pair(mean, 1));
      } else {
        it->second.first += mean;
        it->second.second += 1;
      }
    }
    for (auto& [site, acc] : sums)
      out.gate_stats.emplace(site, acc.first / acc.second);
  }
  return out;
}

ForwardOutput HiDACModel::forward(const RelationInstance& instance) const {
  ad::Tape tape(false);
  ForwardOptions options;
  options.collect_gates = true;
  auto* self = const_cast<HiDACModel*>(this);
  ForwardNodes nodes = self->forward_on_tape(tape, instance, options);
  ForwardOutput out;
  out.logits = tape.value(nodes.logits);
  out.h_contrastive = tape.value(nodes.h_contrastive);
  out.u = tape.value(nodes.u);
  out.v = tape.value(nodes.v);
  out.gate_stats = std::move(nodes.gate_stats);
  out.truncated = nodes.truncated;
  if (!all_finite(out.logits))
    throw NumericError("non-finite logits for instance '" + instance.id + "'");
  return out;
}

UnifiedLabel HiDACModel::classify(const RelationInstance& instance) const {
  return argmax_label(forward(instance).logits);
}

std::vector<ad::Parameter*> HiDACModel::trainable_parameters() {
  std::vector<ad::Parameter*> out = adapter_parameters();
  for (ad::Parameter* p : head_.parameters()) out.push_back(p);
  out.push_back(&prototypes_.embeddings);
  return out;
}

std::vector<ad::Parameter*> HiDACModel::adapter_parameters() {
  std::vector<ad::Parameter*> out = encoder_.adapters()->parameters();
  if (arg2_encoder_)
    for (ad::Parameter* p : arg2_encoder_->adapters()->parameters())
      out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> HiDACModel::lower_adapter_parameters() {
  std::vector<ad::Parameter*> out = encoder_.adapters()->lower_parameters();
  if (arg2_encoder_)
    for (ad::Parameter* p : arg2_encoder_->adapters()->lower_parameters())
      out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> HiDACModel::upper_adapter_parameters() {
  std::vector<ad::Parameter*> out = encoder_.adapters()->upper_parameters();
  if (arg2_encoder_)
    for (ad::Parameter* p : arg2_encoder_->adapters()->upper_parameters())
      out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> HiDACModel::head_parameters() {
  return head_.parameters();
}

BaselineModel::BaselineModel(Encoder encoder, std::uint64_t seed)
    : encoder_(std::move(encoder)), seed_(seed) {
  const int d = encoder_.spec().hidden_dim;
  std::mt19937_64 rng = seeded_rng(seed, "baseline-head");
  pool_w_ = ad::Parameter("head.pool.W", glorot_matrix(d, d, rng));
  pool_b_ = ad::Parameter("head.pool.b", Mat::Zero(d, 1));
  out_w_ = ad::Parameter("head.out.W", glorot_matrix(kNumLabels, d, rng));
  out_b_ = ad::Parameter("head.out.b", Mat::Zero(kNumLabels, 1));
}

BaselineModel BaselineModel::build(const EncoderSpec& spec, std::uint64_t seed) {
  return BaselineModel(Encoder::load(spec), seed);
}

ad::Var BaselineModel::logits_on_tape(ad::Tape& tape,
                                      const RelationInstance& instance,
                                      const ForwardOptions& options) {
  if (instance.masked)
    throw InputError("instance '" + instance.id +
                     "' has masked (suppressed) argument text");
  // The pair shares the sequence budget: each argument keeps its trailing
  // half before the separator join.
  const int half = std::max(1, encoder_.spec().max_seq_len / 2 - 1);
  const std::string joint = tail_words(instance.arg1_text, half) + " [SEP] " +
                            tail_words(instance.arg2_text, half);
  EncodeOptions enc;
  enc.use_adapters = false;
  EncodeNodes nodes = encoder_.encode_on_tape(tape, joint, enc);
  const bool drop =
      options.train_mode && options.dropout_rng != nullptr && dropout_rate_ > 0.0;
  ad::Var pooled = tape.tanh_(tape.add(
      tape.matmul(tape.param(pool_w_), nodes.final_cls), tape.param(pool_b_)));
  if (drop) pooled = tape.dropout(pooled, dropout_rate_, *options.dropout_rng, true);
  return tape.add(tape.matmul(tape.param(out_w_), pooled), tape.param(out_b_));
}

Vec BaselineModel::logits(const RelationInstance& instance) const {
  ad::Tape tape(false);
  auto* self = const_cast<BaselineModel*>(this);
  Vec out = tape.value(self->logits_on_tape(tape, instance, ForwardOptions{}));
  if (!all_finite(out))
    throw NumericError("non-finite logits for instance '" + instance.id + "'");
  return out;
}

UnifiedLabel BaselineModel::classify(const RelationInstance& instance) const {
  return argmax_label(logits(instance));
}

std::vector<ad::Parameter*> BaselineModel::head_parameters() {
  return {&pool_w_, &pool_b_, &out_w_, &out_b_};
}

}  // namespace hidac
