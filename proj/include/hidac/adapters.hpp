#pragma once

#include "hidac/autodiff.hpp"
#include "hidac/common.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace hidac {

// Low-rank adapter state for one hook site: delta(x) = (alpha/r) * B * A * x.
// B starts at zero so a fresh adapter is an exact identity delta.
struct LoRALayer {
  ad::Parameter A;  // r x d_in
  ad::Parameter B;  // d_out x r
  int rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / rank; }
};

LoRALayer make_lora(const std::string& name, int rank, double alpha, int d_in,
                    int d_out, std::mt19937_64& rng);

// Mixture-of-experts LoRA: per-token softmax gate over expert deltas.
struct MoELoRALayer {
  std::vector<LoRALayer> experts;
  ad::Parameter gate;  // n_experts x d_in
};

MoELoRALayer make_moe_lora(const std::string& name, int n_experts, int rank,
                           double alpha, int d_in, int d_out,
                           std::mt19937_64& rng);

/// Trainable parameter count of one LoRA site: r * (d_in + d_out).
std::int64_t lora_param_count(int rank, int d_in, int d_out);

/// base_out + (alpha/r) * B * A * x for a single input vector.
Vec lora_forward(const LoRALayer& layer, const Vec& x, const Vec& base_out);

/// Soft mixture over experts; returns (output, gate weights) for one vector.
std::pair<Vec, Vec> moe_forward(const MoELoRALayer& layer, const Vec& x,
                                const Vec& base_out);

// Tape builders; x and base_out may be d x N matrices (columns = tokens).
ad::Var lora_delta_node(ad::Tape& tape, ad::Var a, ad::Var b, double scaling,
                        ad::Var x);
ad::Var lora_forward_node(ad::Tape& tape, LoRALayer& layer, ad::Var x,
                          ad::Var base_out);
/// When `gate_weights_out` is non-null it receives the softmax gate values
/// (n_experts x N) for stats reporting.
ad::Var moe_forward_node(ad::Tape& tape, MoELoRALayer& layer, ad::Var x,
                         ad::Var base_out, Mat* gate_weights_out = nullptr);

// Inclusive 1-based layer interval; empty when last < first.
struct LayerRange {
  int first = 1;
  int last = 0;

  bool empty() const { return last < first; }
  bool contains(int layer) const { return layer >= first && layer <= last; }
  int count() const { return empty() ? 0 : last - first + 1; }
};

enum class SublayerKind : int { kAttention = 0, kFeedForward };

std::string sublayer_kind_name(SublayerKind kind);

// Where adapters go: plain LoRA on the lower block, MoE-LoRA on the upper
// block. `per_sublayer` hooks both the attention and feed-forward output
// projections of each targeted layer; otherwise only the feed-forward one.
struct AdapterPlacement {
  LayerRange lower;
  LayerRange upper;
  int n_experts = 6;
  int rank = 128;
  double alpha = 256.0;
  bool per_sublayer = true;

  /// Scaled-down default for an n-layer encoder: lower = [1..tap],
  /// upper = [tap+1+n/8 .. n], mirroring the 8 / 12-24 split at n=24.
  static AdapterPlacement default_for(int n_layers, int tap_layer);
};

struct TensorShape {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  std::int64_t size() const { return rows * cols; }
};

// All adapters attached to one encoder. Sites are ordered by (layer, kind)
// so parameter enumeration is deterministic.
class AdapterStack {
 public:
  struct Site {
    int layer = 0;
    SublayerKind kind = SublayerKind::kAttention;
    std::variant<LoRALayer, MoELoRALayer> adapter;
  };

  AdapterStack(const AdapterPlacement& placement, int d_model,
               std::mt19937_64& rng);

  const AdapterPlacement& placement() const { return placement_; }
  std::vector<Site>& sites() { return sites_; }
  const std::vector<Site>& sites() const { return sites_; }

  Site* find(int layer, SublayerKind kind);

  std::vector<ad::Parameter*> parameters();
  std::vector<ad::Parameter*> lower_parameters();
  std::vector<ad::Parameter*> upper_parameters();
  std::int64_t parameter_count() const;

  /// The exact tensor list construction would allocate, without allocating.
  /// This is the enumeration route for parameter audits at any scale.
  static std::vector<TensorShape> enumerate_shapes(const AdapterPlacement& placement,
                                                   int d_model);

 private:
  AdapterPlacement placement_;
  std::vector<Site> sites_;
};

}  // namespace hidac
