#pragma once

#include "hidac/autodiff.hpp"
#include "hidac/common.hpp"
#include "hidac/labels.hpp"

#include <deque>
#include <optional>
#include <random>
#include <vector>

namespace hidac {

// One learnable anchor vector per relation label, rows in canonical order.
struct LabelPrototypes {
  ad::Parameter embeddings;  // kNumLabels x d_proto
  int d_proto = 0;

  static LabelPrototypes init(int d_proto, std::mt19937_64& rng);
};

// Fixed-capacity FIFO of detached key vectors used as contrastive negatives.
class NegativeQueue {
 public:
  explicit NegativeQueue(int capacity);

  int capacity() const { return capacity_; }
  int fill() const { return static_cast<int>(buffer_.size()); }
  const std::deque<Vec>& entries() const { return buffer_; }

  void push(const std::vector<Vec>& keys);

 private:
  int capacity_ = 0;
  std::deque<Vec> buffer_;
};

struct LossWeights {
  double lambda_ce = 1.0;
  double lambda_cl = 0.3;
  double tau = 0.1;
  double smoothing = 0.1;
};

// Plain evaluations (no gradients). All of these delegate to the tape
// builders below so the math exists in exactly one place.
double cross_entropy(const Vec& logits, UnifiedLabel target, double smoothing);
double label_centered_scl(const Vec& h, const LabelPrototypes& prototypes,
                          UnifiedLabel y, double tau);
double instance_scl(const Vec& q, const Vec& k_pos, const NegativeQueue& queue,
                    double tau);
double total_loss(double l_ce, double l_lcl, const LossWeights& w);

// Tape builders producing 1x1 loss nodes.
ad::Var cross_entropy_node(ad::Tape& tape, ad::Var logits, UnifiedLabel target,
                           double smoothing);
ad::Var label_centered_scl_node(ad::Tape& tape, ad::Var h,
                                LabelPrototypes& prototypes, UnifiedLabel y,
                                double tau);
// `exclude_label`: experimental filter dropping queue negatives recorded with
// this label (requires a label-annotated queue maintained by the caller).
ad::Var instance_scl_node(ad::Tape& tape, ad::Var q, const Vec& k_pos,
                          const NegativeQueue& queue, double tau);
ad::Var instance_scl_node(ad::Tape& tape, ad::Var q, const Vec& k_pos,
                          const std::vector<const Vec*>& negatives, double tau);
ad::Var total_loss_node(ad::Tape& tape, ad::Var l_ce, ad::Var l_lcl,
                        const LossWeights& w);

/// key <- m * key + (1 - m) * query, elementwise over aligned lists.
void momentum_update(std::vector<ad::Parameter*>& key_params,
                     const std::vector<ad::Parameter*>& query_params, double m);

}  // namespace hidac
