#include "hidac/encoder.hpp"

#include "hidac/errors.hpp"

#include <cmath>
#include <sstream>

namespace hidac {

namespace {

constexpr int kVocabBuckets = 64;  // hashed token buckets; bucket 0 is [CLS]

Mat normal_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

void check_spec(const EncoderSpec& spec) {
  if (spec.n_layers <= 0)
    throw ConfigError("encoder needs a positive layer count, got " +
                      std::to_string(spec.n_layers));
  if (spec.hidden_dim <= 0)
    throw ConfigError("encoder needs a positive hidden dim, got " +
                      std::to_string(spec.hidden_dim));
  if (spec.max_seq_len < 2)
    throw ConfigError("max_seq_len must be at least 2, got " +
                      std::to_string(spec.max_seq_len));
}

}  // namespace

EncoderSpec EncoderSpec::toy(int n_layers, int hidden_dim, std::uint64_t seed,
                             int max_seq_len) {
  EncoderSpec spec;
  spec.kind = EncoderKind::kToy;
  spec.n_layers = n_layers;
  spec.hidden_dim = hidden_dim;
  spec.seed = seed;
  spec.max_seq_len = max_seq_len;
  return spec;
}

EncoderSpec EncoderSpec::pretrained(const std::string& model_name) {
  const PretrainedInfo* info = find_pretrained(model_name);
  if (!info)
    throw ConfigError("unknown pretrained encoder '" + model_name + "'");
  EncoderSpec spec;
  spec.kind = EncoderKind::kPretrained;
  spec.model_name = model_name;
  spec.n_layers = info->n_layers;
  spec.hidden_dim = info->hidden_dim;
  spec.max_seq_len = 512;
  return spec;
}

const std::vector<PretrainedInfo>& pretrained_catalog() {
  static const std::vector<PretrainedInfo> catalog = {
      {"xlm-roberta-large", 24, 1024, 550000000},
      {"xlm-roberta-base", 12, 768, 270000000},
      {"bert-base-multilingual-cased", 12, 768, 179000000},
  };
  return catalog;
}

const PretrainedInfo* find_pretrained(const std::string& name) {
  for (const auto& info : pretrained_catalog())
    if (info.name == name) return &info;
  return nullptr;
}

Encoder::Encoder(const EncoderSpec& spec) : spec_(spec), embeddings_("", Mat()) {
  const int d = spec.hidden_dim;
  std::mt19937_64 rng = seeded_rng(spec.seed, "toy-encoder");
  embeddings_ =
      ad::Parameter("base.embed", normal_matrix(d, kVocabBuckets, 0.5, rng));
  layers_.reserve(spec.n_layers);
  for (int l = 1; l <= spec.n_layers; ++l) {
    const std::string prefix = "base.L" + std::to_string(l);
    Layer layer{
        ad::Parameter(prefix + ".attn.W", normal_matrix(d, d, 0.08, rng)),
        ad::Parameter(prefix + ".attn.b", normal_matrix(d, 1, 0.02, rng)),
        ad::Parameter(prefix + ".ffn.W", normal_matrix(d, d, 0.08, rng)),
        ad::Parameter(prefix + ".ffn.b", normal_matrix(d, 1, 0.02, rng)),
    };
    layers_.push_back(std::move(layer));
  }
  for (ad::Parameter* p : base_parameters()) p->trainable = true;
}

Encoder Encoder::load(const EncoderSpec& spec) {
  check_spec(spec);
  if (spec.kind == EncoderKind::kPretrained)
    throw LoadError("no checkpoint available for pretrained encoder '" +
                    spec.model_name +
                    "'; desk-scale runs use the toy encoder");
  return Encoder(spec);
}

std::vector<int> Encoder::tokenize(const std::string& text, int max_tokens,
                                   bool* truncated) const {
  const int limit = max_tokens > 0 ? max_tokens : spec_.max_seq_len;
  if (limit < 1) throw ConfigError("token limit must be at least 1");
  std::vector<int> ids;
  ids.push_back(0);
  std::istringstream in(text);
  std::string tok;
  std::vector<int> body;
  while (in >> tok)
    body.push_back(1 + static_cast<int>(fnv1a64(to_lower(tok)) %
                                        (kVocabBuckets - 1)));
  bool cut = false;
  if (static_cast<int>(body.size()) > limit - 1) {
    // Head truncation: drop leading tokens, keep the tail next to [CLS].
    body.erase(body.begin(), body.end() - (limit - 1));
    cut = true;
  }
  ids.insert(ids.end(), body.begin(), body.end());
  if (truncated) *truncated = cut;
  return ids;
}

EncodeNodes Encoder::run(ad::Tape& tape, const std::string& text,
                         const EncodeOptions& options) const {
  for (int tap : options.tap_layers)
    if (tap < 1 || tap > spec_.n_layers)
      throw ConfigError("tap layer " + std::to_string(tap) +
                        " outside [1.." + std::to_string(spec_.n_layers) + "]");
  auto* self = const_cast<Encoder*>(this);
  AdapterStack* stack =
      options.use_adapters && self->adapters_ ? &*self->adapters_ : nullptr;

  EncodeNodes out;
  std::vector<int> ids = tokenize(text, options.max_tokens, &out.truncated);
  const int T = static_cast<int>(ids.size());

  ad::Var h = tape.gather_cols(tape.param(self->embeddings_), ids);
  ad::Var pool = tape.constant(Mat::Constant(T, 1, 1.0 / T));

  auto apply_adapter = [&](AdapterStack::Site* site, ad::Var x,
                           ad::Var base_out) -> ad::Var {
    if (!site) return base_out;
    if (auto* lora = std::get_if<LoRALayer>(&site->adapter))
      return lora_forward_node(tape, *lora, x, base_out);
    auto& moe = std::get<MoELoRALayer>(site->adapter);
    Mat gates;
    ad::Var y = moe_forward_node(tape, moe, x, base_out,
                                 options.gate_sink ? &gates : nullptr);
    if (options.gate_sink)
      options.gate_sink->emplace_back(
          "L" + std::to_string(site->layer) + "." +
              sublayer_kind_name(site->kind),
          std::move(gates));
    return y;
  };

  for (int l = 1; l <= spec_.n_layers; ++l) {
    Layer& layer = self->layers_[static_cast<std::size_t>(l - 1)];
    // Pooled mixing sublayer: a summary of all tokens is projected and
    // broadcast back, so every position sees global context.
    ad::Var m = tape.matmul(h, pool);
    ad::Var a = tape.add(tape.matmul(tape.param(layer.attn_w), m),
                         tape.param(layer.attn_b));
    a = apply_adapter(stack ? stack->find(l, SublayerKind::kAttention) : nullptr,
                      m, a);
    ad::Var mixed = tape.tanh_(tape.add_colvec(h, a));
    // Per-token feed-forward sublayer with residual connection.
    ad::Var f = tape.add_colvec(tape.matmul(tape.param(layer.ffn_w), mixed),
                                tape.param(layer.ffn_b));
    f = apply_adapter(stack ? stack->find(l, SublayerKind::kFeedForward) : nullptr,
                      mixed, f);
    h = tape.add(mixed, f);
    if (options.dropout > 0.0 && options.dropout_rng)
      h = tape.dropout(h, options.dropout, *options.dropout_rng, true);
    if (options.tap_layers.count(l)) out.cls_by_layer.emplace(l, tape.col(h, 0));
    if (options.barrier_after_layer == l) h = tape.stop_gradient(h);
  }
  out.final_cls = tape.col(h, 0);
  return out;
}

EncodeResult Encoder::encode(const std::string& text,
                             const std::set<int>& tap_layers) const {
  ad::Tape tape(/*grads_enabled=*/false);
  EncodeOptions options;
  options.tap_layers = tap_layers;
  EncodeNodes nodes = run(tape, text, options);
  EncodeResult result;
  result.truncated = nodes.truncated;
  result.final_cls = tape.value(nodes.final_cls);
  for (const auto& [layer, var] : nodes.cls_by_layer)
    result.cls_by_layer.emplace(layer, tape.value(var));
  if (!all_finite(result.final_cls))
    throw NumericError("encoder produced a non-finite representation");
  return result;
}

EncodeNodes Encoder::encode_on_tape(ad::Tape& tape, const std::string& text,
                                    const EncodeOptions& options) {
  return run(tape, text, options);
}

FreezeReport Encoder::set_trainable(double unfreeze_ratio) {
  if (unfreeze_ratio < 0.0 || unfreeze_ratio > 1.0)
    throw ConfigError("unfreeze ratio must lie in [0,1], got " +
                      std::to_string(unfreeze_ratio));
  const int n = spec_.n_layers;
  const int k = static_cast<int>(std::ceil(unfreeze_ratio * n - 1e-12));
  const int first_trainable = n - k + 1;
  embeddings_.trainable = unfreeze_ratio >= 1.0;
  FreezeReport report;
  report.total_param_count = static_cast<std::int64_t>(embeddings_.value.size());
  report.trainable_param_count =
      embeddings_.trainable ? static_cast<std::int64_t>(embeddings_.value.size())
                            : 0;
  for (int l = 1; l <= n; ++l) {
    Layer& layer = layers_[static_cast<std::size_t>(l - 1)];
    const bool on = l >= first_trainable;
    for (ad::Parameter* p : {&layer.attn_w, &layer.attn_b, &layer.ffn_w,
                             &layer.ffn_b}) {
      p->trainable = on;
      report.total_param_count += p->value.size();
      if (on) report.trainable_param_count += p->value.size();
    }
    (on ? report.trainable_layer_indices : report.frozen_layer_indices)
        .push_back(l);
  }
  return report;
}

AdapterStack& Encoder::attach_adapters(const AdapterPlacement& placement,
                                       std::mt19937_64& rng) {
  auto check_range = [&](const LayerRange& range, const char* which) {
    if (range.empty()) return;
    if (range.first < 1 || range.last > spec_.n_layers)
      throw ConfigError(std::string(which) + " adapter range [" +
                        std::to_string(range.first) + ".." +
                        std::to_string(range.last) + "] outside layers [1.." +
                        std::to_string(spec_.n_layers) + "]");
  };
  check_range(placement.lower, "lower");
  check_range(placement.upper, "upper");
  adapters_.emplace(placement, spec_.hidden_dim, rng);
  return *adapters_;
}

std::vector<ad::Parameter*> Encoder::base_parameters() {
  std::vector<ad::Parameter*> out;
  out.push_back(&embeddings_);
  for (auto& layer : layers_) {
    out.push_back(&layer.attn_w);
    out.push_back(&layer.attn_b);
    out.push_back(&layer.ffn_w);
    out.push_back(&layer.ffn_b);
  }
  return out;
}

std::uint64_t Encoder::base_checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto* self = const_cast<Encoder*>(this);
  for (const ad::Parameter* p : self->base_parameters())
    h = fnv1a64_bytes(p->value.data(),
                      sizeof(double) * static_cast<std::size_t>(p->value.size()),
                      h);
  return h;
}

}  // namespace hidac
