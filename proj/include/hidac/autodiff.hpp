#pragma once

#include "hidac/common.hpp"

#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace hidac::ad {

// A named trainable tensor. Gradients accumulate across backward passes
// until zero_grad(); the optimizer owns mutation of `value`.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)),
        grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  std::int64_t size() const { return value.size(); }
};

class Tape;

// Handle to a tape node. Only valid for the tape that created it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using ParamFilter = std::function<bool(const Parameter&)>;

// Reverse-mode tape over Eigen matrices. Nodes are appended in topological
// order; backward walks ids in reverse. Column vectors are d x 1 matrices.
class Tape {
 public:
  explicit Tape(bool grads_enabled = true) : grads_enabled_(grads_enabled) {}

  bool grads_enabled() const { return grads_enabled_; }

  Var constant(Mat v);
  Var scalar_constant(double v);
  /// Leaf bound to a parameter; one node per parameter per tape, so shared
  /// weights (e.g. the tied dual encoder) accumulate correctly.
  Var param(Parameter& p);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var matmul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_n(const std::vector<Var>& xs);
  /// M + v * ones(1, cols): broadcasts a column vector over all columns.
  Var add_colvec(Var m, Var v);
  /// Scales column j of `m` by w(0, j); `w` is a 1 x cols row vector.
  Var scale_cols(Var m, Var w);
  Var tanh_(Var a);
  /// Column-wise softmax.
  Var softmax_cols(Var a);
  Var col(Var m, int j);
  Var row(Var m, int i);
  /// Row i of `m`, transposed to a column vector.
  Var row_t(Var m, int i);
  /// Gathers columns of `m` by index (duplicates allowed); grads scatter-add.
  Var gather_cols(Var m, const std::vector<int>& idx);
  Var concat_rows(const std::vector<Var>& xs);
  /// Cosine similarity of two column vectors as a 1x1 node.
  /// Throws NumericError on zero-norm inputs.
  Var cosine(Var a, Var b);
  /// Smoothed cross-entropy over a K x 1 logit vector: -sum_k q_k log p_k
  /// with q = (1-smoothing)*onehot(target) + smoothing/K.
  Var cross_entropy(Var logits, int target, double smoothing);
  /// Inverted dropout; identity when inactive.
  Var dropout(Var a, double rate, std::mt19937_64& rng, bool active);
  /// Identity forward, blocks gradient flow.
  Var stop_gradient(Var a);

  const Mat& value(Var v) const;
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root) = seed and accumulates into Parameter::grad for every
  /// trainable parameter leaf passing `filter` (all when null).
  void backward(Var root, double seed = 1.0, const ParamFilter& filter = nullptr);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    // Pulls this node's gradient into its inputs.
    std::function<void(Tape&, const Mat&)> pull;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_leaves_;
  bool grads_enabled_ = true;

  Var push(Mat value, bool needs_grad,
           std::function<void(Tape&, const Mat&)> pull = nullptr);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  void accum(Var v, const Mat& g);
  const Node& node(Var v) const;
};

}  // namespace hidac::ad
