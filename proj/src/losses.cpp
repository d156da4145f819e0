#include "hidac/losses.hpp"

#include "hidac/errors.hpp"

#include <string>

namespace hidac {

LabelPrototypes LabelPrototypes::init(int d_proto, std::mt19937_64& rng) {
  if (d_proto <= 0)
    throw ConfigError("prototype dimension must be positive, got " +
                      std::to_string(d_proto));
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat emb(kNumLabels, d_proto);
  for (int i = 0; i < kNumLabels; ++i) {
    for (int j = 0; j < d_proto; ++j) emb(i, j) = dist(rng);
    emb.row(i) /= emb.row(i).norm();
  }
  LabelPrototypes p;
  p.embeddings = ad::Parameter("prototypes", std::move(emb));
  p.d_proto = d_proto;
  return p;
}

NegativeQueue::NegativeQueue(int capacity) : capacity_(capacity) {
  if (capacity <= 0)
    throw ConfigError("negative queue capacity must be positive, got " +
                      std::to_string(capacity));
}

void NegativeQueue::push(const std::vector<Vec>& keys) {
  if (static_cast<int>(keys.size()) > capacity_)
    throw StateError("cannot push " + std::to_string(keys.size()) +
                     " keys into a queue of capacity " +
                     std::to_string(capacity_));
  for (const Vec& k : keys) {
    if (!buffer_.empty() && k.size() != buffer_.front().size())
      throw ShapeError("queue key dim " + std::to_string(k.size()) +
                       " does not match existing entries of dim " +
                       std::to_string(buffer_.front().size()));
    buffer_.push_back(k);
  }
  while (static_cast<int>(buffer_.size()) > capacity_) buffer_.pop_front();
}

namespace {

void check_tau(double tau) {
  if (tau <= 0.0)
    throw ConfigError("temperature must be positive, got " +
                      std::to_string(tau));
}

// Shared core: softmax cross-entropy over [cos(anchor, c_j)/tau] with the
// positive at `target`.
ad::Var cosine_contrast(ad::Tape& tape, ad::Var anchor,
                        const std::vector<ad::Var>& candidates, int target,
                        double tau) {
  std::vector<ad::Var> sims;
  sims.reserve(candidates.size());
  for (ad::Var c : candidates) sims.push_back(tape.cosine(anchor, c));
  ad::Var scaled = tape.scale(tape.concat_rows(sims), 1.0 / tau);
  return tape.cross_entropy(scaled, target, 0.0);
}

}  // namespace

ad::Var cross_entropy_node(ad::Tape& tape, ad::Var logits, UnifiedLabel target,
                           double smoothing) {
  return tape.cross_entropy(logits, label_index(target), smoothing);
}

ad::Var label_centered_scl_node(ad::Tape& tape, ad::Var h,
                                LabelPrototypes& prototypes, UnifiedLabel y,
                                double tau) {
  check_tau(tau);
  ad::Var emb = tape.param(prototypes.embeddings);
  std::vector<ad::Var> protos;
  protos.reserve(kNumLabels);
  for (int j = 0; j < kNumLabels; ++j) protos.push_back(tape.row_t(emb, j));
  return cosine_contrast(tape, h, protos, label_index(y), tau);
}

ad::Var instance_scl_node(ad::Tape& tape, ad::Var q, const Vec& k_pos,
                          const std::vector<const Vec*>& negatives,
                          double tau) {
  check_tau(tau);
  if (negatives.empty())
    throw StateError("instance contrastive loss needs at least one negative");
  std::vector<ad::Var> candidates;
  candidates.reserve(negatives.size() + 1);
  candidates.push_back(tape.constant(k_pos));
  for (const Vec* n : negatives) candidates.push_back(tape.constant(*n));
  return cosine_contrast(tape, q, candidates, 0, tau);
}

ad::Var instance_scl_node(ad::Tape& tape, ad::Var q, const Vec& k_pos,
                          const NegativeQueue& queue, double tau) {
  std::vector<const Vec*> negatives;
  negatives.reserve(queue.entries().size());
  for (const Vec& n : queue.entries()) negatives.push_back(&n);
  return instance_scl_node(tape, q, k_pos, negatives, tau);
}

ad::Var total_loss_node(ad::Tape& tape, ad::Var l_ce, ad::Var l_lcl,
                        const LossWeights& w) {
  return tape.add(tape.scale(l_ce, w.lambda_ce), tape.scale(l_lcl, w.lambda_cl));
}

double cross_entropy(const Vec& logits, UnifiedLabel target, double smoothing) {
  ad::Tape tape(false);
  return tape.scalar(
      cross_entropy_node(tape, tape.constant(logits), target, smoothing));
}

double label_centered_scl(const Vec& h, const LabelPrototypes& prototypes,
                          UnifiedLabel y, double tau) {
  ad::Tape tape(false);
  auto& mutable_protos = const_cast<LabelPrototypes&>(prototypes);
  return tape.scalar(
      label_centered_scl_node(tape, tape.constant(h), mutable_protos, y, tau));
}

double instance_scl(const Vec& q, const Vec& k_pos, const NegativeQueue& queue,
                    double tau) {
  ad::Tape tape(false);
  return tape.scalar(
      instance_scl_node(tape, tape.constant(q), k_pos, queue, tau));
}

double total_loss(double l_ce, double l_lcl, const LossWeights& w) {
  return w.lambda_ce * l_ce + w.lambda_cl * l_lcl;
}

void momentum_update(std::vector<ad::Parameter*>& key_params,
                     const std::vector<ad::Parameter*>& query_params,
                     double m) {
  if (m < 0.0 || m > 1.0)
    throw ConfigError("momentum must lie in [0,1], got " + std::to_string(m));
  if (key_params.size() != query_params.size())
    throw ShapeError("momentum update over misaligned parameter lists: " +
                     std::to_string(key_params.size()) + " vs " +
                     std::to_string(query_params.size()));
  for (std::size_t i = 0; i < key_params.size(); ++i) {
    Mat& key = key_params[i]->value;
    const Mat& query = query_params[i]->value;
    if (key.rows() != query.rows() || key.cols() != query.cols())
      throw ShapeError("momentum update shape mismatch at parameter '" +
                       key_params[i]->name + "'");
    key = m * key + (1.0 - m) * query;
  }
}

}  // namespace hidac
