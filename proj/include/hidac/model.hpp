#pragma once

#include "hidac/adapters.hpp"
#include "hidac/autodiff.hpp"
#include "hidac/encoder.hpp"
#include "hidac/losses.hpp"
#include "hidac/rels.hpp"

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace hidac {

enum class FusionMode { kEnhanced, kConcat };

std::string fusion_mode_name(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& s);

/// ENHANCED: [u; v; u-v; u*v] (4d). CONCAT: [u; v] (2d).
Vec fuse(const Vec& u, const Vec& v, FusionMode mode);
ad::Var fuse_node(ad::Tape& tape, ad::Var u, ad::Var v, FusionMode mode);

/// Elementwise mean of the two tap-layer representations.
Vec pool_contrastive(const Vec& u_tap, const Vec& v_tap);
ad::Var pool_contrastive_node(ad::Tape& tape, ad::Var u_tap, ad::Var v_tap);

// Two-hidden-layer classifier head with tanh activations and dropout.
struct Mlp {
  ad::Parameter w1, b1, w2, b2, w3, b3;
  double dropout_rate = 0.1;

  static Mlp init(const std::string& name, int d_in, int d_h1, int d_h2,
                  int d_out, std::mt19937_64& rng);
  std::vector<ad::Parameter*> parameters();
  int input_dim() const { return static_cast<int>(w1.value.cols()); }
  ad::Var forward(ad::Tape& tape, ad::Var x, bool train_mode,
                  std::mt19937_64* dropout_rng);
};

struct HiDACConfig {
  EncoderSpec encoder = EncoderSpec::toy(4, 16, 42);
  std::optional<AdapterPlacement> placement;  // default derived from tap layer
  int tap_layer = 0;  // 0 → ceil(n_layers / 3); 8 on the 24-layer backbone
  FusionMode fusion = FusionMode::kEnhanced;
  bool tied_encoders = true;
  std::uint64_t seed = 42;
};

struct ForwardOutput {
  Vec logits;
  Vec h_contrastive;
  Vec u, v;
  // site name ("L12.ffn") → mean gate weight per expert across tokens/args.
  std::map<std::string, Vec> gate_stats;
  bool truncated = false;
};

struct ForwardNodes {
  ad::Var logits;
  ad::Var h_contrastive;
  ad::Var u, v;
  std::map<std::string, Vec> gate_stats;
  bool truncated = false;
};

struct ForwardOptions {
  bool train_mode = false;
  // Severs gradient flow from the classification path into the layers at and
  // below the tap, enforcing the loss-routing split structurally.
  bool routing_barrier = true;
  bool collect_gates = false;
  std::mt19937_64* dropout_rng = nullptr;
  // Encoder-internal dropout used to produce stochastic views for the
  // instance-contrastive objective; head dropout is separate.
  double encoder_dropout = 0.0;
};

// Dual-encoder relation classifier: both arguments encoded independently,
// tap-layer states averaged for the contrastive path, final states fused for
// the classification head.
class HiDACModel {
 public:
  static HiDACModel build(const HiDACConfig& config);

  const HiDACConfig& config() const { return config_; }
  int tap_layer() const { return tap_layer_; }
  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  LabelPrototypes& prototypes() { return prototypes_; }
  Mlp& head() { return head_; }

  ForwardOutput forward(const RelationInstance& instance) const;
  ForwardNodes forward_on_tape(ad::Tape& tape, const RelationInstance& instance,
                               const ForwardOptions& options);
  UnifiedLabel classify(const RelationInstance& instance) const;

  std::vector<ad::Parameter*> trainable_parameters();
  std::vector<ad::Parameter*> adapter_parameters();
  std::vector<ad::Parameter*> lower_adapter_parameters();
  std::vector<ad::Parameter*> upper_adapter_parameters();
  std::vector<ad::Parameter*> head_parameters();

 private:
  HiDACModel(const HiDACConfig& config, Encoder encoder);

  HiDACConfig config_;
  int tap_layer_ = 0;
  Encoder encoder_;
  std::optional<Encoder> arg2_encoder_;  // untied variant only
  LabelPrototypes prototypes_;
  Mlp head_;
};

/// Argmax with ties broken toward the lowest canonical label index.
UnifiedLabel argmax_label(const Vec& logits);

// Single-pass sequence-pair classifier used by the fine-tuning baselines:
// the two arguments are joined with a separator token and the final [CLS]
// feeds a dense+tanh pooler and a linear output layer.
class BaselineModel {
 public:
  static BaselineModel build(const EncoderSpec& spec, std::uint64_t seed);

  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  std::uint64_t seed() const { return seed_; }

  ad::Var logits_on_tape(ad::Tape& tape, const RelationInstance& instance,
                         const ForwardOptions& options);
  Vec logits(const RelationInstance& instance) const;
  UnifiedLabel classify(const RelationInstance& instance) const;

  std::vector<ad::Parameter*> head_parameters();

 private:
  BaselineModel(Encoder encoder, std::uint64_t seed);

  Encoder encoder_;
  std::uint64_t seed_ = 0;
  ad::Parameter pool_w_, pool_b_, out_w_, out_b_;
  double dropout_rate_ = 0.1;
};

}  // namespace hidac
