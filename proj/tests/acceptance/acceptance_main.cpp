// Acceptance gate: every release-blocking property of the system, one
// pass/fail line each. Exits nonzero if any check fails. Descriptions name
// behavior; tolerances are pinned inline next to the checks they govern.

#include "hidac/adapters.hpp"
#include "hidac/autodiff.hpp"
#include "hidac/common.hpp"
#include "hidac/encoder.hpp"
#include "hidac/errors.hpp"
#include "hidac/evaluation.hpp"
#include "hidac/losses.hpp"
#include "hidac/model.hpp"
#include "hidac/prompting.hpp"
#include "hidac/rels.hpp"
#include "hidac/synthetic.hpp"
#include "hidac/trainer.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace hidac;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    if (!detail.str().empty()) detail << "; ";
    detail << what;
  }
};

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

fs::path scratch_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() /
             ("hidac-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Large shared fixture; generated once, used by several criteria.
const std::vector<RelationInstance>& big_dev_fixture() {
  static const auto data = make_distribution_fixture(28000, 42);
  return data;
}

// ---------------------------------------------------------------------------
// 1. Fresh adapters are an exact identity over the frozen backbone.

void check_zero_init_identity(Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  HiDACConfig mc;
  mc.encoder = EncoderSpec::toy(4, 16, 7);
  mc.seed = 7;
  auto model = HiDACModel::build(mc);

  const int max_tokens = std::max(2, mc.encoder.max_seq_len / 2);
  double worst = 0.0;
  for (const auto& r : make_distribution_fixture(100, 17)) {
    const ForwardOutput out = model.forward(r);

    // Reference path: the same backbone with adapters bypassed, then the
    // model's own fusion and head.
    ad::Tape tape(false);
    EncodeOptions opts;
    opts.max_tokens = max_tokens;
    opts.use_adapters = false;
    const auto e1 = model.encoder().encode_on_tape(tape, r.arg1_text, opts);
    const auto e2 = model.encoder().encode_on_tape(tape, r.arg2_text, opts);
    const Vec u = tape.value(e1.final_cls);
    const Vec v = tape.value(e2.final_cls);
    const Vec fused = fuse(u, v, mc.fusion);

    ad::Tape head_tape(false);
    const ad::Var logits =
        model.head().forward(head_tape, head_tape.constant(Mat(fused)), false,
                             nullptr);
    const Mat reference = head_tape.value(logits);
    worst = std::max(worst,
                     (out.logits - reference.col(0)).cwiseAbs().maxCoeff());
  }
  c.expect(worst <= 1e-6,
           "fresh-adapter logits deviate from the bare backbone by " +
               fmt(worst));
  c.expect(seconds_since(t0) < 60.0, "identity sweep exceeded one minute");
}

// ---------------------------------------------------------------------------
// 2. Loss routing: the anchor loss never touches the upper block, and strict
//    mode keeps the classification loss out of the lower block.

void check_gradient_routing(Criterion& c) {
  HiDACConfig mc;
  mc.encoder = EncoderSpec::toy(4, 16, 11);
  mc.seed = 11;
  auto model = HiDACModel::build(mc);

  // Perturb every adapter so gradients would flow anywhere routing allows.
  auto rng = seeded_rng(11, "routing-perturb");
  std::normal_distribution<double> noise(0.0, 0.05);
  for (ad::Parameter* p : model.adapter_parameters()) {
    for (int i = 0; i < p->value.rows(); ++i) {
      for (int j = 0; j < p->value.cols(); ++j) p->value(i, j) += noise(rng);
    }
  }

  const auto instance = make_separable_fixture(4, 2, 3)[0];
  const LossWeights weights;

  const RoutingProbe strict = probe_routing(model, instance, weights, true);
  c.expect(strict.ce_on_lower == 0.0,
           "strict classification gradient reached the lower block: " +
               fmt(strict.ce_on_lower));
  c.expect(strict.lcl_on_upper_and_head == 0.0,
           "contrastive gradient reached the upper block: " +
               fmt(strict.lcl_on_upper_and_head));
  c.expect(strict.ce_on_upper_and_head > 0.0,
           "classification probe produced no gradient at all");
  c.expect(strict.lcl_on_lower_and_prototypes > 0.0,
           "contrastive probe produced no gradient at all");

  // Soft mode releases only the classification barrier; the contrastive path
  // still cannot reach the upper block, by construction.
  const RoutingProbe soft = probe_routing(model, instance, weights, false);
  c.expect(soft.ce_on_lower > 0.0,
           "soft mode still blocks classification from the lower block");
  c.expect(soft.lcl_on_upper_and_head == 0.0,
           "soft mode let the contrastive loss into the upper block: " +
               fmt(soft.lcl_on_upper_and_head));
}

// ---------------------------------------------------------------------------
// 3. Loss values match independent formula oracles; uniform similarity
//    collapses to ln(17).

void check_loss_oracles(Criterion& c) {
  auto rng = seeded_rng(3, "loss-oracle");
  std::normal_distribution<double> dist(0.0, 1.0);
  double worst_ce = 0.0, worst_lcl = 0.0, worst_inst = 0.0;

  for (int trial = 0; trial < 1000; ++trial) {
    // Smoothed cross-entropy over 2..17 classes.
    {
      const int k = 2 + static_cast<int>(bounded(rng, 16));
      Vec logits(k);
      std::vector<double> raw(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j) {
        logits[j] = dist(rng) * 3.0;
        raw[static_cast<std::size_t>(j)] = logits[j];
      }
      const int target = static_cast<int>(bounded(rng, k));
      const double smoothing = (trial % 3) * 0.1;
      const double got = cross_entropy(
          logits, static_cast<UnifiedLabel>(target), smoothing);
      worst_ce = std::max(
          worst_ce, std::abs(got - oracle::smoothed_ce(raw, target, smoothing)));
    }
    // Prototype-anchored contrast.
    {
      const int d = 2 + static_cast<int>(bounded(rng, 7));
      LabelPrototypes prototypes = LabelPrototypes::init(d, rng);
      Vec h = oracle::random_vec(d, rng);
      const int y = static_cast<int>(bounded(rng, kNumLabels));
      const double tau = 0.1 + 0.3 * (trial % 4);
      const double got = label_centered_scl(
          h, prototypes, static_cast<UnifiedLabel>(y), tau);
      worst_lcl = std::max(
          worst_lcl,
          std::abs(got - oracle::label_centered(h, prototypes.embeddings.value,
                                                y, tau)));
    }
    // Instance-vs-instance contrast with queued negatives.
    {
      const int d = 2 + static_cast<int>(bounded(rng, 7));
      const int n_neg = 1 + static_cast<int>(bounded(rng, 8));
      NegativeQueue queue(n_neg);
      std::vector<Vec> negatives;
      for (int j = 0; j < n_neg; ++j)
        negatives.push_back(oracle::random_vec(d, rng));
      queue.push(negatives);
      const Vec q = oracle::random_vec(d, rng);
      const Vec k_pos = oracle::random_vec(d, rng);
      const double got = instance_scl(q, k_pos, queue, 0.2);
      worst_inst = std::max(
          worst_inst,
          std::abs(got - oracle::instance_contrast(q, k_pos, negatives, 0.2)));
    }
  }
  c.expect(worst_ce <= 1e-6, "cross-entropy off oracle by " + fmt(worst_ce));
  c.expect(worst_lcl <= 1e-6,
           "prototype contrast off oracle by " + fmt(worst_lcl));
  c.expect(worst_inst <= 1e-6,
           "instance contrast off oracle by " + fmt(worst_inst));

  // With all prototypes identical every similarity ties, so the loss is the
  // log of the class count.
  LabelPrototypes uniform = LabelPrototypes::init(6, rng);
  for (int j = 1; j < kNumLabels; ++j)
    uniform.embeddings.value.row(j) = uniform.embeddings.value.row(0);
  const double tied = label_centered_scl(
      oracle::random_vec(6, rng), uniform, UnifiedLabel::kCausal, 0.1);
  c.expect(std::abs(tied - std::log(17.0)) <= 1e-4,
           "uniform-similarity loss is " + fmt(tied) + ", expected ln(17)");
}

// ---------------------------------------------------------------------------
// 4. Analytic gradients match central finite differences.

double max_rel_grad_error(const std::function<ad::Var(ad::Tape&)>& build,
                          const std::vector<ad::Parameter*>& params) {
  for (ad::Parameter* p : params) p->zero_grad();
  {
    ad::Tape tape(true);
    tape.backward(build(tape));
  }
  const auto eval = [&] {
    ad::Tape tape(false);
    return tape.scalar(build(tape));
  };
  const double eps = 1e-5;
  double worst = 0.0;
  for (ad::Parameter* p : params) {
    for (int i = 0; i < p->value.rows(); ++i) {
      for (int j = 0; j < p->value.cols(); ++j) {
        const double saved = p->value(i, j);
        p->value(i, j) = saved + eps;
        const double up = eval();
        p->value(i, j) = saved - eps;
        const double down = eval();
        p->value(i, j) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double rel = std::abs(p->grad(i, j) - numeric) /
                           std::max(1.0, std::abs(numeric));
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

void check_gradient_checks(Criterion& c) {
  auto rng = seeded_rng(4, "acceptance-grad");

  // Prototype-anchored loss w.r.t. the representation and the prototypes.
  {
    LabelPrototypes prototypes = LabelPrototypes::init(6, rng);
    ad::Parameter h("h", Mat(oracle::random_vec(6, rng)));
    const double err = max_rel_grad_error(
        [&](ad::Tape& tape) {
          return label_centered_scl_node(tape, tape.param(h), prototypes,
                                         UnifiedLabel::kTemporal, 0.2);
        },
        {&h, &prototypes.embeddings});
    c.expect(err <= 1e-4, "prototype-contrast gradient off by " + fmt(err));
  }
  // Instance contrast w.r.t. the query.
  {
    NegativeQueue queue(5);
    std::vector<Vec> negatives;
    for (int j = 0; j < 5; ++j) negatives.push_back(oracle::random_vec(6, rng));
    queue.push(negatives);
    const Vec k_pos = oracle::random_vec(6, rng);
    ad::Parameter q("q", Mat(oracle::random_vec(6, rng)));
    const double err = max_rel_grad_error(
        [&](ad::Tape& tape) {
          return instance_scl_node(tape, tape.param(q), k_pos, queue, 0.2);
        },
        {&q});
    c.expect(err <= 1e-4, "instance-contrast gradient off by " + fmt(err));
  }
  // Low-rank adapter delta w.r.t. both factors (random B so the A path is
  // live), reduced to a scalar through fixed random weights.
  {
    LoRALayer lora = make_lora("g.lora", 3, 6.0, 6, 6, rng);
    lora.B.value = oracle::random_mat(6, 3, rng, 0.3);
    const Mat x = oracle::random_mat(6, 2, rng);
    const Mat base = oracle::random_mat(6, 2, rng);
    const Mat wrow = oracle::random_mat(1, 6, rng);
    const Mat wcol = oracle::random_mat(2, 1, rng);
    const double err = max_rel_grad_error(
        [&](ad::Tape& tape) {
          const ad::Var out = lora_forward_node(
              tape, lora, tape.constant(x), tape.constant(base));
          return tape.matmul(tape.matmul(tape.constant(wrow), out),
                             tape.constant(wcol));
        },
        {&lora.A, &lora.B});
    c.expect(err <= 1e-4, "low-rank adapter gradient off by " + fmt(err));
  }
  // Expert mixture w.r.t. the gate and every expert factor.
  {
    MoELoRALayer moe = make_moe_lora("g.moe", 2, 2, 4.0, 4, 4, rng);
    std::vector<ad::Parameter*> params{&moe.gate};
    for (LoRALayer& expert : moe.experts) {
      expert.B.value = oracle::random_mat(4, 2, rng, 0.3);
      params.push_back(&expert.A);
      params.push_back(&expert.B);
    }
    moe.gate.value = oracle::random_mat(2, 4, rng, 0.5);
    const Mat x = oracle::random_mat(4, 3, rng);
    const Mat base = oracle::random_mat(4, 3, rng);
    const Mat wrow = oracle::random_mat(1, 4, rng);
    const Mat wcol = oracle::random_mat(3, 1, rng);
    const double err = max_rel_grad_error(
        [&](ad::Tape& tape) {
          const ad::Var out = moe_forward_node(
              tape, moe, tape.constant(x), tape.constant(base));
          return tape.matmul(tape.matmul(tape.constant(wrow), out),
                             tape.constant(wcol));
        },
        params);
    c.expect(err <= 1e-4, "expert-mixture gradient off by " + fmt(err));
  }
}

// ---------------------------------------------------------------------------
// 5. The full dual-loss objective overfits a small separable set within 200
//    steps, deterministically.

struct OverfitRun {
  double accuracy = 0.0;
  Vec probe_logits;
};

OverfitRun run_overfit(const std::vector<RelationInstance>& data) {
  HiDACConfig mc;
  mc.encoder = EncoderSpec::toy(4, 16, 42);
  mc.seed = 42;
  auto model = HiDACModel::build(mc);

  TrainConfig tc = TrainConfig::defaults_for(TrainMode::kHidacLabelCentered);
  tc.lr_peak = 0.01;  // desk-scale rate; the full-scale default barely moves
                      // a tiny model in 200 steps
  tc.batch_size = 16;
  tc.max_epochs = 50;
  tc.max_steps = 200;
  tc.patience = 0;
  tc.seed = 42;
  train(model, tc, data, {});

  OverfitRun out;
  int correct = 0;
  for (const auto& r : data) {
    if (model.classify(r) == r.label) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  out.probe_logits = model.forward(data[0]).logits;
  return out;
}

void check_overfit(Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = make_separable_fixture(64, 4, 42);
  const OverfitRun first = run_overfit(data);
  c.expect(first.accuracy >= 0.95,
           "training accuracy after 200 steps is " + fmt(first.accuracy));

  const OverfitRun second = run_overfit(data);
  c.expect(second.accuracy == first.accuracy &&
               (second.probe_logits - first.probe_logits).cwiseAbs()
                       .maxCoeff() == 0.0,
           "two identically-seeded runs diverged");
  c.expect(seconds_since(t0) < 300.0, "overfit run exceeded five minutes");
}

// ---------------------------------------------------------------------------
// 6. The base never moves during training, and the full-scale adapter budget
//    is both closed-form-exact and under a tenth of the base parameters.

void check_frozen_base_and_budget(Criterion& c) {
  HiDACConfig mc;
  mc.encoder = EncoderSpec::toy(2, 8, 5);
  mc.seed = 5;
  auto model = HiDACModel::build(mc);
  const std::uint64_t before = model.encoder().base_checksum();

  TrainConfig tc = TrainConfig::defaults_for(TrainMode::kHidacLabelCentered);
  tc.lr_peak = 0.02;
  tc.batch_size = 8;
  tc.max_epochs = 3;
  tc.patience = 0;
  tc.seed = 5;
  train(model, tc, make_separable_fixture(16, 2, 5), {});
  c.expect(model.encoder().base_checksum() == before,
           "base checksum changed during training");

  // Full-scale placement: plain low-rank adapters on layers 1-8, 6-expert
  // mixtures on layers 12-24, both sublayer sites, r=128, alpha=256, d=1024.
  AdapterPlacement full;
  full.lower = {1, 8};
  full.upper = {12, 24};
  full.n_experts = 6;
  full.rank = 128;
  full.alpha = 256.0;
  full.per_sublayer = true;
  std::int64_t enumerated = 0;
  for (const TensorShape& shape : AdapterStack::enumerate_shapes(full, 1024)) {
    enumerated += shape.size();
  }
  const std::int64_t per_site = lora_param_count(128, 1024, 1024);
  const std::int64_t closed_form =
      8 * 2 * per_site + 13 * 2 * (6 * per_site + 6 * 1024);
  c.expect(enumerated == closed_form,
           "enumerated " + std::to_string(enumerated) + " != closed form " +
               std::to_string(closed_form));

  const PretrainedInfo* backbone = find_pretrained("xlm-roberta-large");
  c.expect(backbone != nullptr, "no catalog entry for the target backbone");
  if (backbone != nullptr) {
    const double fraction = static_cast<double>(enumerated) /
                            static_cast<double>(backbone->total_params);
    c.expect(fraction < 0.10,
             "adapter budget is " + fmt(fraction) + " of the base");
  }
}

// ---------------------------------------------------------------------------
// 7. The warmup-cosine schedule hits zero, peak, half-peak and zero at the
//    expected steps.

void check_schedule(Criterion& c) {
  const double peak = 2e-5;
  const int warmup = 100, total = 1100;
  const Schedule schedule = make_schedule(peak, warmup, total);
  const int mid_decay = warmup + (total - warmup) / 2;

  const struct {
    int step;
    double want;
  } points[] = {{0, 0.0}, {warmup, peak}, {mid_decay, peak / 2}, {total, 0.0}};
  for (const auto& point : points) {
    const double got = schedule(point.step);
    c.expect(std::abs(got - point.want) <= 1e-12,
             "lr(" + std::to_string(point.step) + ") = " + fmt(got) +
                 ", expected " + fmt(point.want));
  }
}

// ---------------------------------------------------------------------------
// 8. Unfreeze ratios select the expected top-layer counts.

void check_unfreeze_arithmetic(Criterion& c) {
  const double ratios[] = {0.0, 0.25, 0.5, 0.75};
  const int want24[] = {0, 6, 12, 18};
  const int want12[] = {0, 3, 6, 9};

  Encoder deep = Encoder::load(EncoderSpec::toy(24, 4, 3));
  Encoder shallow = Encoder::load(EncoderSpec::toy(12, 4, 3));
  for (int i = 0; i < 4; ++i) {
    const FreezeReport d = deep.set_trainable(ratios[i]);
    const FreezeReport s = shallow.set_trainable(ratios[i]);
    c.expect(static_cast<int>(d.trainable_layer_indices.size()) == want24[i],
             "24-layer ratio " + fmt(ratios[i]) + " trains " +
                 std::to_string(d.trainable_layer_indices.size()) + " layers");
    c.expect(static_cast<int>(s.trainable_layer_indices.size()) == want12[i],
             "12-layer ratio " + fmt(ratios[i]) + " trains " +
                 std::to_string(s.trainable_layer_indices.size()) + " layers");
    // The trained block is always the top of the stack.
    if (!d.trainable_layer_indices.empty()) {
      c.expect(d.trainable_layer_indices.back() == 24,
               "24-layer selection does not reach the top");
    }
  }
}

// ---------------------------------------------------------------------------
// 9. Argument ordering reproduces the worked example byte-exactly and holds
//    its invariants on random data.

void check_ordering(Criterion& c) {
  RelationInstance example;
  example.id = "ordering-example";
  example.language = "eng";
  example.framework = Framework::kRst;
  example.arg1_text = "We propose a neural network approach";
  example.arg2_text =
      "to benefit from the non-linearity of corpus-wide statistics for "
      "part-of-speech (POS) tagging.";
  example.direction = Direction::kBackward;  // annotated 1<2
  example.label = UnifiedLabel::kPurpose;

  const OrderedPair directed =
      apply_ordering(example, OrderingStrategy::kRelationDirected);
  c.expect(directed.first == example.arg2_text &&
               directed.second == example.arg1_text && directed.swapped,
           "worked example not swapped byte-exactly");
  const OrderedPair natural =
      apply_ordering(example, OrderingStrategy::kNatural);
  c.expect(natural.first == example.arg1_text &&
               natural.second == example.arg2_text && !natural.swapped,
           "text order not preserved");

  int violations = 0;
  for (const auto& r : make_distribution_fixture(1000, 21)) {
    const OrderedPair flat = apply_ordering(r, OrderingStrategy::kNatural);
    if (flat.first != r.arg1_text || flat.second != r.arg2_text) ++violations;

    const OrderedPair ordered =
        apply_ordering(r, OrderingStrategy::kRelationDirected);
    const bool should_swap = r.direction == Direction::kBackward;
    if (ordered.swapped != should_swap) ++violations;
    if (ordered.first != (should_swap ? r.arg2_text : r.arg1_text))
      ++violations;

    // Once in relation order, reordering is a no-op.
    RelationInstance settled = r;
    settled.arg1_text = ordered.first;
    settled.arg2_text = ordered.second;
    settled.direction = Direction::kForward;
    const OrderedPair again =
        apply_ordering(settled, OrderingStrategy::kRelationDirected);
    if (again.first != ordered.first || again.second != ordered.second)
      ++violations;
  }
  c.expect(violations == 0,
           std::to_string(violations) + " ordering invariant violations");
}

// ---------------------------------------------------------------------------
// 10. Stratified folds keep every label within one of proportional, and the
//     fold draw is reproducible.

void check_stratification(Criterion& c) {
  const auto& dev = big_dev_fixture();
  const int k = 27;
  const StratifiedFolds folds = stratified_subsets(dev, k, 42);

  std::array<int, kNumLabels> totals{};
  for (const auto& r : dev) {
    ++totals[static_cast<std::size_t>(label_index(r.label))];
  }
  int out_of_band = 0;
  for (const auto& fold : folds.folds) {
    std::array<int, kNumLabels> counts{};
    for (const int index : fold) {
      ++counts[static_cast<std::size_t>(
          label_index(dev[static_cast<std::size_t>(index)].label))];
    }
    for (int j = 0; j < kNumLabels; ++j) {
      const double share =
          static_cast<double>(totals[static_cast<std::size_t>(j)]) / k;
      const int count = counts[static_cast<std::size_t>(j)];
      if (count < static_cast<int>(std::floor(share)) ||
          count > static_cast<int>(std::ceil(share))) {
        ++out_of_band;
      }
    }
  }
  c.expect(out_of_band == 0,
           std::to_string(out_of_band) +
               " fold/label cells off proportional by more than one");

  const auto again = stratified_subsets(dev, k, 42);
  c.expect(again.folds == folds.folds, "fold assignment not reproducible");
  c.expect(select_fold_indices(k, 4, 42) == select_fold_indices(k, 4, 42),
           "fold selection not reproducible");
}

// ---------------------------------------------------------------------------
// 11. The example pool and the selection policies honor their contracts.

void check_pool_and_selection(Criterion& c) {
  const auto train = make_combo_fixture(3, 42);
  const ExamplePool pool = build_pool(train, 3, 42);
  c.expect(pool.size() == 981,
           "pool holds " + std::to_string(pool.size()) + " examples");
  c.expect(pool.entries.size() == 327,
           "pool covers " + std::to_string(pool.entries.size()) +
               " combinations");

  const std::vector<UnifiedLabel> weak{
      UnifiedLabel::kElaboration, UnifiedLabel::kConjunction,
      UnifiedLabel::kCausal,      UnifiedLabel::kTemporal,
      UnifiedLabel::kQuery,       UnifiedLabel::kContrast};
  const PromptSpec spec1 = PromptSpec::few_shot(Experiment::kExp1SameLanguage,
                                                OrderingStrategy::kNatural);
  const PromptSpec spec2 = PromptSpec::few_shot(Experiment::kExp2English,
                                                OrderingStrategy::kNatural);
  const PromptSpec spec3 = PromptSpec::few_shot(Experiment::kExp3WeakLabels,
                                                OrderingStrategy::kNatural);

  auto rng = seeded_rng(11, "selection-sweep");
  int violations = 0;
  const auto queries = make_distribution_fixture(1000, 33);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const RelationInstance& query = queries[i];
    switch (i % 3) {
      case 0: {
        const auto picked = select_examples(pool, query, spec1, nullptr, rng);
        if (picked.size() != 4) ++violations;
        for (const auto& e : picked) {
          if (e.language != query.language || e.id == query.id) ++violations;
        }
        break;
      }
      case 1: {
        const auto picked = select_examples(pool, query, spec2, nullptr, rng);
        if (picked.size() != 4) ++violations;
        for (const auto& e : picked) {
          if (e.language != "eng" || e.id == query.id) ++violations;
        }
        break;
      }
      default: {
        const auto picked = select_examples(pool, query, spec3, &weak, rng);
        if (picked.size() != 8) ++violations;
        std::set<UnifiedLabel> covered;
        std::set<std::string> ids;
        for (const auto& e : picked) {
          if (e.language != "eng" || e.id == query.id) ++violations;
          covered.insert(e.label);
          if (!ids.insert(e.id).second) ++violations;
        }
        for (const UnifiedLabel w : weak) {
          if (covered.count(w) == 0) ++violations;
        }
        break;
      }
    }
  }
  c.expect(violations == 0,
           std::to_string(violations) + " selection contract violations");
}

// ---------------------------------------------------------------------------
// 12. Metrics match a brute-force confusion oracle; group decompositions are
//     exact; majority-class prediction scores its share.

void check_metrics(Criterion& c) {
  auto rng = seeded_rng(12, "metrics-fuzz");
  double worst_acc = 0.0, worst_f1 = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(bounded(rng, 30));
    std::vector<UnifiedLabel> golds;
    std::vector<PredictedLabel> preds;
    std::vector<int> oracle_golds;
    std::vector<std::optional<int>> oracle_preds;
    for (int i = 0; i < n; ++i) {
      const int g = static_cast<int>(bounded(rng, kNumLabels));
      golds.push_back(static_cast<UnifiedLabel>(g));
      oracle_golds.push_back(g);
      const std::uint64_t roll = bounded(rng, 100);
      if (roll < 15) {
        preds.push_back(std::nullopt);
        oracle_preds.push_back(std::nullopt);
      } else {
        const int p = roll < 55 ? g : static_cast<int>(bounded(rng, kNumLabels));
        preds.push_back(static_cast<UnifiedLabel>(p));
        oracle_preds.push_back(p);
      }
    }
    worst_acc = std::max(worst_acc,
                         std::abs(accuracy(preds, golds) -
                                  oracle::accuracy(oracle_preds, oracle_golds)));
    worst_f1 = std::max(
        worst_f1,
        std::abs(macro_f1(preds, golds) -
                 oracle::confusion_macro_f1(oracle_preds, oracle_golds)
                     .macro_f1));
  }
  c.expect(worst_acc <= 1e-12, "accuracy off oracle by " + fmt(worst_acc));
  c.expect(worst_f1 <= 1e-12, "macro-F1 off oracle by " + fmt(worst_f1));

  // Group decompositions: correct counts per framework and per language both
  // reassemble the overall accuracy exactly.
  {
    const char* langs[] = {"eng", "zho", "tur", "fra"};
    std::vector<UnifiedLabel> golds;
    std::vector<PredictedLabel> preds;
    std::vector<GroupMeta> meta;
    for (int i = 0; i < 500; ++i) {
      const int g = static_cast<int>(bounded(rng, kNumLabels));
      golds.push_back(static_cast<UnifiedLabel>(g));
      preds.push_back(bounded(rng, 2) == 0
                          ? PredictedLabel(static_cast<UnifiedLabel>(g))
                          : PredictedLabel(static_cast<UnifiedLabel>(
                                bounded(rng, kNumLabels))));
      meta.push_back({static_cast<Framework>(bounded(rng, kNumFrameworks)),
                      langs[bounded(rng, 4)]});
    }
    const GroupedReport report = grouped_report(preds, golds, meta);
    int by_fw = 0, fw_support = 0;
    double share_sum = 0.0;
    for (const auto& [fw, stat] : report.by_framework) {
      (void)fw;
      by_fw += stat.correct;
      fw_support += stat.support;
      share_sum += stat.share;
    }
    int by_lang = 0;
    for (const auto& [lang, stat] : report.by_language) {
      (void)lang;
      by_lang += stat.correct;
    }
    c.expect(fw_support == report.total, "framework supports do not add up");
    c.expect(std::abs(share_sum - 1.0) <= 1e-12, "shares do not sum to one");
    c.expect(static_cast<double>(by_fw) / report.total ==
                 report.overall_accuracy,
             "framework decomposition is inexact");
    c.expect(static_cast<double>(by_lang) / report.total ==
                 report.overall_accuracy,
             "language decomposition is inexact");
  }

  // Always predicting the most frequent label scores its share of the
  // reference distribution.
  {
    const auto& dev = big_dev_fixture();
    const LabelDistribution dist = distribution(dev);
    UnifiedLabel majority = UnifiedLabel::kElaboration;
    std::int64_t best = -1;
    for (const auto& [label, count] : dist.counts) {
      if (count > best) {
        best = count;
        majority = label;
      }
    }
    std::vector<UnifiedLabel> golds;
    for (const auto& r : dev) golds.push_back(r.label);
    const std::vector<UnifiedLabel> preds(golds.size(), majority);
    const double score = accuracy(preds, golds);
    c.expect(std::abs(score - 0.233) <= 0.001,
             "majority-class score is " + fmt(score));
  }
}

// ---------------------------------------------------------------------------
// 13. The prompt pipeline runs every mode against the deterministic mocks on
//     a 1000-instance fixture, fast, with exact mock scores.

void check_prompt_pipeline(Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dev = make_distribution_fixture(1000, 13);
  const ExamplePool pool = build_pool(make_combo_fixture(3, 42), 3, 42);
  GoldEchoClient gold(dev);

  const std::vector<UnifiedLabel> weak{
      UnifiedLabel::kElaboration, UnifiedLabel::kConjunction,
      UnifiedLabel::kCausal,      UnifiedLabel::kTemporal,
      UnifiedLabel::kQuery,       UnifiedLabel::kContrast};
  struct ModeRun {
    std::string name;
    PromptSpec spec;
    bool needs_weak = false;
  };
  const ModeRun runs[] = {
      {"zero-shot", PromptSpec::zero_shot(OrderingStrategy::kNatural), false},
      {"few-shot-1", PromptSpec::few_shot(Experiment::kExp1SameLanguage,
                                          OrderingStrategy::kNatural),
       false},
      {"few-shot-2", PromptSpec::few_shot(Experiment::kExp2English,
                                          OrderingStrategy::kNatural),
       false},
      {"few-shot-3", PromptSpec::few_shot(Experiment::kExp3WeakLabels,
                                          OrderingStrategy::kNatural),
       true},
  };
  for (const ModeRun& run : runs) {
    PromptEvalOptions options;
    options.audit_path =
        (scratch_dir() / ("audit-" + run.name + ".jsonl")).string();
    if (run.needs_weak) options.weak_labels = weak;
    const PromptEvalResult result =
        run_prompt_eval(gold, dev, run.spec, pool, options);
    c.expect(result.report.total == 1000,
             run.name + " scored " + std::to_string(result.report.total) +
                 " instances");
    c.expect(std::abs(result.report.overall_accuracy - 1.0) <= 1e-9,
             run.name + " gold accuracy is " +
                 fmt(result.report.overall_accuracy));

    std::ifstream audit(options.audit_path);
    int lines = 0;
    for (std::string line; std::getline(audit, line);) {
      if (!line.empty()) ++lines;
    }
    c.expect(lines == 1000, run.name + " audit log has " +
                                std::to_string(lines) + " lines");
  }

  // A constant guesser scores exactly the guessed label's share.
  FixedLabelClient fixed(UnifiedLabel::kElaboration);
  PromptEvalOptions options;
  const PromptEvalResult result = run_prompt_eval(
      fixed, dev, PromptSpec::zero_shot(OrderingStrategy::kNatural), pool,
      options);
  int n_elaboration = 0;
  for (const auto& r : dev) {
    if (r.label == UnifiedLabel::kElaboration) ++n_elaboration;
  }
  const double share = static_cast<double>(n_elaboration) / 1000.0;
  c.expect(std::abs(result.report.overall_accuracy - share) <= 1e-9,
           "constant guesser scored " + fmt(result.report.overall_accuracy) +
               ", label share is " + fmt(share));

  c.expect(seconds_since(t0) < 60.0, "prompt sweep exceeded one minute");
}

// ---------------------------------------------------------------------------
// 14. Checkpoints round-trip the forward function and reject a mismatched
//     base model.

void check_checkpoint_roundtrip(Criterion& c) {
  HiDACConfig mc;
  mc.encoder = EncoderSpec::toy(4, 16, 23);
  mc.seed = 23;
  auto model = HiDACModel::build(mc);

  // Make the saved state nontrivial.
  auto rng = seeded_rng(23, "checkpoint-perturb");
  std::normal_distribution<double> noise(0.0, 0.05);
  for (ad::Parameter* p : model.trainable_parameters()) {
    for (int i = 0; i < p->value.rows(); ++i) {
      for (int j = 0; j < p->value.cols(); ++j) p->value(i, j) += noise(rng);
    }
  }

  const fs::path path = scratch_dir() / "model.hdc";
  save_checkpoint(model, path.string());
  HiDACModel restored = load_hidac_checkpoint(path.string());

  double worst = 0.0;
  for (const auto& r : make_distribution_fixture(20, 19)) {
    const Vec a = model.forward(r).logits;
    const Vec b = restored.forward(r).logits;
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  c.expect(worst <= 1e-6, "restored logits deviate by " + fmt(worst));

  // Flip one digit of the recorded base fingerprint: the loader must refuse.
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::string bytes = buffer.str();
  const std::string key = "\"base_checksum\":\"";
  const std::size_t pos = bytes.find(key);
  c.expect(pos != std::string::npos, "checkpoint lacks a base fingerprint");
  if (pos != std::string::npos) {
    const std::size_t digit = pos + key.size();
    bytes[digit] = bytes[digit] == '0' ? '1' : '0';
    const fs::path tampered = scratch_dir() / "tampered.hdc";
    std::ofstream out(tampered, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    bool refused = false;
    try {
      load_hidac_checkpoint(tampered.string());
    } catch (const LoadError&) {
      refused = true;
    }
    c.expect(refused, "a mismatched base fingerprint was accepted");
  }
}

}  // namespace

int main() {
  struct Entry {
    std::string description;
    std::function<void(Criterion&)> run;
  };
  const std::vector<Entry> criteria = {
      {"fresh adapters are an exact identity over the frozen backbone",
       check_zero_init_identity},
      {"loss routing isolates the contrastive and classification blocks",
       check_gradient_routing},
      {"loss values match independent formula oracles, ln(17) at uniformity",
       check_loss_oracles},
      {"analytic gradients match central finite differences",
       check_gradient_checks},
      {"the dual-loss objective overfits a separable set within 200 steps",
       check_overfit},
      {"the base stays frozen; the full-scale adapter budget is exact and "
       "under a tenth of the base",
       check_frozen_base_and_budget},
      {"the warmup-cosine schedule hits its anchor points exactly",
       check_schedule},
      {"unfreeze ratios select the expected top-layer counts",
       check_unfreeze_arithmetic},
      {"argument ordering reproduces the worked example and its invariants",
       check_ordering},
      {"stratified folds stay within one of proportional, reproducibly",
       check_stratification},
      {"the example pool and selection policies honor their contracts",
       check_pool_and_selection},
      {"metrics match a confusion oracle with exact group decompositions",
       check_metrics},
      {"the prompt pipeline runs all modes against mocks with exact scores",
       check_prompt_pipeline},
      {"checkpoints round-trip exactly and reject a mismatched base",
       check_checkpoint_roundtrip},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Criterion c;
    try {
      criteria[i].run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("unexpected exception: ") + e.what());
    }
    if (!c.pass) ++failures;
    std::cout << (c.pass ? "PASS" : "FAIL") << " — " << (i + 1) << ". "
              << criteria[i].description;
    if (!c.pass) std::cout << " [" << c.detail.str() << "]";
    std::cout << "\n" << std::flush;
  }

  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/"
            << criteria.size() << " criteria passed\n";
  fs::remove_all(scratch_dir());
  return failures == 0 ? 0 : 1;
}
