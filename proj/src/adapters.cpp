#include "hidac/adapters.hpp"

#include "hidac/errors.hpp"

#include <utility>

namespace hidac {

namespace {

constexpr double kInitStd = 0.02;

Mat normal_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

LoRALayer make_lora(const std::string& name, int rank, double alpha, int d_in,
                    int d_out, std::mt19937_64& rng) {
  if (rank <= 0 || d_in <= 0 || d_out <= 0)
    throw ConfigError("lora dimensions must be positive: rank=" +
                      std::to_string(rank) + " d_in=" + std::to_string(d_in) +
                      " d_out=" + std::to_string(d_out));
  LoRALayer layer;
  layer.rank = rank;
  layer.alpha = alpha;
  layer.A = ad::Parameter(name + ".A", normal_matrix(rank, d_in, kInitStd, rng));
  layer.B = ad::Parameter(name + ".B", Mat::Zero(d_out, rank));
  return layer;
}

MoELoRALayer make_moe_lora(const std::string& name, int n_experts, int rank,
                           double alpha, int d_in, int d_out,
                           std::mt19937_64& rng) {
  if (n_experts <= 0)
    throw ConfigError("moe-lora needs at least one expert, got " +
                      std::to_string(n_experts));
  MoELoRALayer layer;
  layer.experts.reserve(n_experts);
  for (int e = 0; e < n_experts; ++e)
    layer.experts.push_back(
        make_lora(name + ".e" + std::to_string(e), rank, alpha, d_in, d_out, rng));
  layer.gate = ad::Parameter(name + ".gate",
                             normal_matrix(n_experts, d_in, kInitStd, rng));
  return layer;
}

std::int64_t lora_param_count(int rank, int d_in, int d_out) {
  return static_cast<std::int64_t>(rank) * (d_in + d_out);
}

Vec lora_forward(const LoRALayer& layer, const Vec& x, const Vec& base_out) {
  return base_out + layer.scaling() * (layer.B.value * (layer.A.value * x));
}

std::pair<Vec, Vec> moe_forward(const MoELoRALayer& layer, const Vec& x,
                                const Vec& base_out) {
  const int n = static_cast<int>(layer.experts.size());
  Vec logits = layer.gate.value * x;
  const double mx = logits.maxCoeff();
  Vec weights = (logits.array() - mx).exp().matrix();
  weights /= weights.sum();
  Vec out = base_out;
  for (int e = 0; e < n; ++e) {
    const LoRALayer& ex = layer.experts[e];
    out += weights(e) * (ex.scaling() * (ex.B.value * (ex.A.value * x)));
  }
  return {out, weights};
}

ad::Var lora_delta_node(ad::Tape& tape, ad::Var a, ad::Var b, double scaling,
                        ad::Var x) {
  return tape.scale(tape.matmul(b, tape.matmul(a, x)), scaling);
}

ad::Var lora_forward_node(ad::Tape& tape, LoRALayer& layer, ad::Var x,
                          ad::Var base_out) {
  ad::Var a = tape.param(layer.A);
  ad::Var b = tape.param(layer.B);
  return tape.add(base_out, lora_delta_node(tape, a, b, layer.scaling(), x));
}

ad::Var moe_forward_node(ad::Tape& tape, MoELoRALayer& layer, ad::Var x,
                         ad::Var base_out, Mat* gate_weights_out) {
  ad::Var gate = tape.param(layer.gate);
  ad::Var weights = tape.softmax_cols(tape.matmul(gate, x));
  if (gate_weights_out) *gate_weights_out = tape.value(weights);
  std::vector<ad::Var> terms;
  terms.reserve(layer.experts.size() + 1);
  terms.push_back(base_out);
  for (int e = 0; e < static_cast<int>(layer.experts.size()); ++e) {
    LoRALayer& ex = layer.experts[e];
    ad::Var delta = lora_delta_node(tape, tape.param(ex.A), tape.param(ex.B),
                                    ex.scaling(), x);
    terms.push_back(tape.scale_cols(delta, tape.row(weights, e)));
  }
  return tape.add_n(terms);
}

std::string sublayer_kind_name(SublayerKind kind) {
  return kind == SublayerKind::kAttention ? "attn" : "ffn";
}

AdapterPlacement AdapterPlacement::default_for(int n_layers, int tap_layer) {
  if (n_layers <= 0 || tap_layer <= 0 || tap_layer > n_layers)
    throw ConfigError("invalid adapter placement: n_layers=" +
                      std::to_string(n_layers) +
                      " tap_layer=" + std::to_string(tap_layer));
  AdapterPlacement p;
  p.lower = {1, tap_layer};
  const int gap = n_layers / 8;
  p.upper = {tap_layer + 1 + gap, n_layers};
  return p;
}

namespace {

// Single enumeration route shared by the constructor and the shape audit so
// the two can never drift apart.
template <typename Fn>
void for_each_site(const AdapterPlacement& placement, Fn&& fn) {
  auto visit_layer = [&](int layer, bool upper) {
    if (placement.per_sublayer) fn(layer, SublayerKind::kAttention, upper);
    fn(layer, SublayerKind::kFeedForward, upper);
  };
  for (int l = placement.lower.first; l <= placement.lower.last; ++l)
    visit_layer(l, false);
  for (int l = placement.upper.first; l <= placement.upper.last; ++l)
    visit_layer(l, true);
}

std::string site_prefix(int layer, SublayerKind kind) {
  return "adapter.L" + std::to_string(layer) + "." + sublayer_kind_name(kind);
}

}  // namespace

AdapterStack::AdapterStack(const AdapterPlacement& placement, int d_model,
                           std::mt19937_64& rng)
    : placement_(placement) {
  if (d_model <= 0)
    throw ConfigError("d_model must be positive, got " + std::to_string(d_model));
  if (!placement.lower.empty() && !placement.upper.empty() &&
      placement.upper.first <= placement.lower.last)
    throw ConfigError("adapter ranges overlap: lower ends at layer " +
                      std::to_string(placement.lower.last) +
                      ", upper starts at layer " +
                      std::to_string(placement.upper.first));
  for_each_site(placement, [&](int layer, SublayerKind kind, bool upper) {
    Site site;
    site.layer = layer;
    site.kind = kind;
    const std::string prefix = site_prefix(layer, kind);
    if (upper) {
      site.adapter = make_moe_lora(prefix, placement.n_experts, placement.rank,
                                   placement.alpha, d_model, d_model, rng);
    } else {
      site.adapter = make_lora(prefix, placement.rank, placement.alpha, d_model,
                               d_model, rng);
    }
    sites_.push_back(std::move(site));
  });
}

AdapterStack::Site* AdapterStack::find(int layer, SublayerKind kind) {
  for (auto& site : sites_)
    if (site.layer == layer && site.kind == kind) return &site;
  return nullptr;
}

std::vector<ad::Parameter*> AdapterStack::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& site : sites_) {
    if (auto* lora = std::get_if<LoRALayer>(&site.adapter)) {
      out.push_back(&lora->A);
      out.push_back(&lora->B);
    } else {
      auto& moe = std::get<MoELoRALayer>(site.adapter);
      for (auto& ex : moe.experts) {
        out.push_back(&ex.A);
        out.push_back(&ex.B);
      }
      out.push_back(&moe.gate);
    }
  }
  return out;
}

std::vector<ad::Parameter*> AdapterStack::lower_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& site : sites_) {
    if (!placement_.lower.contains(site.layer)) continue;
    auto& lora = std::get<LoRALayer>(site.adapter);
    out.push_back(&lora.A);
    out.push_back(&lora.B);
  }
  return out;
}

std::vector<ad::Parameter*> AdapterStack::upper_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& site : sites_) {
    if (!placement_.upper.contains(site.layer)) continue;
    auto& moe = std::get<MoELoRALayer>(site.adapter);
    for (auto& ex : moe.experts) {
      out.push_back(&ex.A);
      out.push_back(&ex.B);
    }
    out.push_back(&moe.gate);
  }
  return out;
}

std::int64_t AdapterStack::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& site : sites_) {
    if (const auto* lora = std::get_if<LoRALayer>(&site.adapter)) {
      total += lora->A.value.size() + lora->B.value.size();
    } else {
      const auto& moe = std::get<MoELoRALayer>(site.adapter);
      for (const auto& ex : moe.experts)
        total += ex.A.value.size() + ex.B.value.size();
      total += moe.gate.value.size();
    }
  }
  return total;
}

std::vector<TensorShape> AdapterStack::enumerate_shapes(
    const AdapterPlacement& placement, int d_model) {
  std::vector<TensorShape> shapes;
  const std::int64_t d = d_model;
  const std::int64_t r = placement.rank;
  for_each_site(placement, [&](int layer, SublayerKind kind, bool upper) {
    const std::string prefix = site_prefix(layer, kind);
    auto push_pair = [&](const std::string& base) {
      shapes.push_back({base + ".A", r, d});
      shapes.push_back({base + ".B", d, r});
    };
    if (upper) {
      for (int e = 0; e < placement.n_experts; ++e)
        push_pair(prefix + ".e" + std::to_string(e));
      shapes.push_back({prefix + ".gate", placement.n_experts, d});
    } else {
      push_pair(prefix);
    }
  });
  return shapes;
}

}  // namespace hidac
