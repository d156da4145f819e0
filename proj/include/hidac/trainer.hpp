#pragma once

#include "hidac/losses.hpp"
#include "hidac/model.hpp"
#include "hidac/rels.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hidac {

enum class TrainMode {
  kHidacLabelCentered,
  kHidacInstance,
  kBaselineFull,
  kBaselineUnfreeze,
};

std::string train_mode_name(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);
bool is_hidac_mode(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::kHidacLabelCentered;
  double lr_peak = 2e-5;
  int batch_size = 32;
  int max_epochs = 10;
  double warmup_epochs = 2.0;  // dual-adapter modes
  double warmup_ratio = 0.1;   // baseline modes
  double weight_decay = 0.01;
  int patience = 2;
  double clip_norm = 1.0;
  std::uint64_t seed = 42;
  double unfreeze_ratio = 0.0;  // BASELINE_UNFREEZE only
  OrderingStrategy ordering = OrderingStrategy::kNatural;
  LossWeights weights;
  // Strict: each loss updates only its own parameter block (contrastive →
  // lower adapters + prototypes, classification → upper adapters + head).
  // Soft lets both losses flow everywhere, for ablation.
  bool strict_routing = true;
  double momentum = 0.999;          // instance-contrast key encoder
  int queue_capacity = 64;          // scaled down from 4096 for desk runs
  double view_dropout = 0.1;        // stochastic-view strength
  bool filter_queue_by_label = false;  // experimental negative filtering
  int max_steps = 0;                // 0 = epoch budget only
  std::string metrics_path;         // JSON-lines per-epoch metrics, optional

  static TrainConfig defaults_for(TrainMode mode);
};

struct EpochRecord {
  int epoch = 0;
  double l_ce = 0.0;
  double l_lcl = 0.0;
  double l_total = 0.0;
  double dev_accuracy = 0.0;
  double dev_loss = 0.0;
  double lr = 0.0;  // learning rate at the last step of the epoch
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based; 0 when no dev evaluation ran
  std::vector<double> lr_by_step;
  double max_post_clip_norm = 0.0;
  int steps = 0;
  bool stopped_early = false;
};

using Schedule = std::function<double(int)>;

/// Linear warmup 0 → lr_peak over `warmup_steps`, then cosine decay to 0 at
/// `total_steps`.
Schedule make_schedule(double lr_peak, int warmup_steps, int total_steps);

enum class StopCriterion { kDevAccuracy, kDevLoss };

/// True iff the criterion saw no strict improvement in the last `patience`
/// epochs. `values` are per-epoch criterion readings in order.
bool early_stop(const std::vector<double>& values, int patience,
                StopCriterion criterion);

class AdamW {
 public:
  AdamW(std::vector<ad::Parameter*> params, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(double lr);
  const std::vector<ad::Parameter*>& parameters() const { return params_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Mat> m_, v_;
  double weight_decay_, beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clipping norm.
double clip_global_norm(const std::vector<ad::Parameter*>& params,
                        double max_norm);

TrainHistory train(HiDACModel& model, const TrainConfig& config,
                   const std::vector<RelationInstance>& train_data,
                   const std::vector<RelationInstance>& dev_data);
TrainHistory train(BaselineModel& model, const TrainConfig& config,
                   const std::vector<RelationInstance>& train_data,
                   const std::vector<RelationInstance>& dev_data);

// Single-loss backward probe: gradient norms each loss induces on each
// parameter block, with no masking applied. Exposes the routing structure
// directly.
struct RoutingProbe {
  double ce_on_lower = 0.0;
  double ce_on_upper_and_head = 0.0;
  double lcl_on_lower_and_prototypes = 0.0;
  double lcl_on_upper_and_head = 0.0;
};

RoutingProbe probe_routing(HiDACModel& model, const RelationInstance& instance,
                           const LossWeights& weights, bool strict_routing);

// Checkpoints: single file holding a JSON manifest plus raw tensor payload.
// Dual-adapter checkpoints reference the base encoder by spec + checksum and
// store only adapters, head and prototypes; baseline checkpoints store the
// fine-tuned base weights too.
void save_checkpoint(const HiDACModel& model, const std::string& path);
void save_checkpoint(const BaselineModel& model, const std::string& path);

/// "hidac" or "baseline"; inspects the manifest without loading tensors.
std::string checkpoint_model_type(const std::string& path);

HiDACModel load_hidac_checkpoint(const std::string& path);
BaselineModel load_baseline_checkpoint(const std::string& path);

}  // namespace hidac
