#pragma once

#include "hidac/adapters.hpp"
#include "hidac/autodiff.hpp"
#include "hidac/common.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace hidac {

enum class EncoderKind { kPretrained, kToy };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::kToy;
  std::string model_name;  // pretrained catalog key; unused for toy encoders
  int n_layers = 4;
  int hidden_dim = 16;
  int max_seq_len = 64;
  std::uint64_t seed = 42;

  static EncoderSpec toy(int n_layers, int hidden_dim, std::uint64_t seed,
                         int max_seq_len = 64);
  static EncoderSpec pretrained(const std::string& model_name);
};

// Published sizes of the multilingual encoders the full-scale system targets.
// Used for parameter-budget audits; the weights themselves are not shipped.
struct PretrainedInfo {
  std::string name;
  int n_layers = 0;
  int hidden_dim = 0;
  std::int64_t total_params = 0;
};

const std::vector<PretrainedInfo>& pretrained_catalog();
const PretrainedInfo* find_pretrained(const std::string& name);

struct EncodeResult {
  std::map<int, Vec> cls_by_layer;
  Vec final_cls;
  bool truncated = false;
};

// Tape-mode counterpart of EncodeResult. Tap nodes are recorded before the
// optional stop-gradient barrier, so gradients through them reach the layers
// below the barrier while gradients through final_cls do not.
struct EncodeNodes {
  std::map<int, ad::Var> cls_by_layer;
  ad::Var final_cls;
  bool truncated = false;
};

struct EncodeOptions {
  std::set<int> tap_layers;
  // After this layer's tap is recorded, upstream gradient flow is severed.
  // Negative disables the barrier.
  int barrier_after_layer = -1;
  int max_tokens = -1;  // negative → spec.max_seq_len
  bool use_adapters = true;
  // Per-layer dropout for stochastic training views; inactive unless both
  // a positive rate and an RNG are supplied.
  double dropout = 0.0;
  std::mt19937_64* dropout_rng = nullptr;
  // When set, receives (site_name, gate weight matrix) for every MoE site hit.
  std::vector<std::pair<std::string, Mat>>* gate_sink = nullptr;
};

struct FreezeReport {
  std::vector<int> trainable_layer_indices;
  std::vector<int> frozen_layer_indices;
  std::int64_t trainable_param_count = 0;
  std::int64_t total_param_count = 0;
};

// Deterministic toy transformer stand-in: hashed bag-of-token embeddings, a
// pooled mixing sublayer and a per-token feed-forward sublayer per layer,
// with adapter hooks on both output projections.
class Encoder {
 public:
  static Encoder load(const EncoderSpec& spec);

  const EncoderSpec& spec() const { return spec_; }

  std::vector<int> tokenize(const std::string& text, int max_tokens,
                            bool* truncated = nullptr) const;

  EncodeResult encode(const std::string& text,
                      const std::set<int>& tap_layers = {}) const;
  EncodeNodes encode_on_tape(ad::Tape& tape, const std::string& text,
                             const EncodeOptions& options);

  FreezeReport set_trainable(double unfreeze_ratio);

  AdapterStack& attach_adapters(const AdapterPlacement& placement,
                                std::mt19937_64& rng);
  AdapterStack* adapters() { return adapters_ ? &*adapters_ : nullptr; }
  const AdapterStack* adapters() const { return adapters_ ? &*adapters_ : nullptr; }

  std::vector<ad::Parameter*> base_parameters();
  std::uint64_t base_checksum() const;

  /// Deep copy (own parameters and adapter stack); used for momentum targets.
  Encoder clone() const { return *this; }

 private:
  explicit Encoder(const EncoderSpec& spec);

  struct Layer {
    ad::Parameter attn_w, attn_b, ffn_w, ffn_b;
  };

  EncodeNodes run(ad::Tape& tape, const std::string& text,
                  const EncodeOptions& options) const;

  EncoderSpec spec_;
  ad::Parameter embeddings_;
  std::vector<Layer> layers_;
  std::optional<AdapterStack> adapters_;
};

}  // namespace hidac
