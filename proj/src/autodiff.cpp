#include "hidac/autodiff.hpp"

#include "hidac/errors.hpp"

#include <cmath>

namespace hidac::ad {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Var Tape::push(Mat value, bool needs_grad,
               std::function<void(Tape&, const Mat&)> pull) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad && grads_enabled_;
  if (node.needs_grad) node.pull = std::move(pull);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
    throw StateError("invalid tape handle");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Mat& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const Mat& m = node(v).value;
  if (m.size() != 1) throw ShapeError("scalar() on non-1x1 node");
  return m(0, 0);
}

void Tape::accum(Var v, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Var Tape::constant(Mat v) { return push(std::move(v), false); }

Var Tape::scalar_constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return push(std::move(m), false);
}

Var Tape::param(Parameter& p) {
  auto it = param_leaves_.find(&p);
  if (it != param_leaves_.end()) return Var{it->second};
  Var v = push(p.value, p.trainable);
  nodes_[static_cast<std::size_t>(v.id)].param = &p;
  param_leaves_[&p] = v.id;
  return v;
}

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  return push(value(a) + value(b), needs(a) || needs(b),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g);
                t.accum(b, g);
              });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  return push(value(a) - value(b), needs(a) || needs(b),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g);
                t.accum(b, Mat(-g));
              });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g.cwiseProduct(t.value(b)));
                t.accum(b, g.cwiseProduct(t.value(a)));
              });
}

Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows()) {
    throw ShapeError("matmul: inner dimensions disagree (" +
                     std::to_string(value(a).cols()) + " vs " +
                     std::to_string(value(b).rows()) + ")");
  }
  return push(value(a) * value(b), needs(a) || needs(b),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g * t.value(b).transpose());
                t.accum(b, t.value(a).transpose() * g);
              });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, needs(a),
              [a, s](Tape& t, const Mat& g) { t.accum(a, Mat(g * s)); });
}

Var Tape::add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("add_n: empty input");
  Mat sum = value(xs[0]);
  bool grad = needs(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    check_same_shape(sum, value(xs[i]), "add_n");
    sum += value(xs[i]);
    grad = grad || needs(xs[i]);
  }
  return push(std::move(sum), grad, [xs](Tape& t, const Mat& g) {
    for (Var x : xs) t.accum(x, g);
  });
}

Var Tape::add_colvec(Var m, Var v) {
  const Mat& mv = value(m);
  const Mat& vv = value(v);
  if (vv.cols() != 1 || vv.rows() != mv.rows()) {
    throw ShapeError("add_colvec: vector must be rows(m) x 1");
  }
  Mat out = mv;
  out.colwise() += vv.col(0);
  return push(std::move(out), needs(m) || needs(v),
              [m, v](Tape& t, const Mat& g) {
                t.accum(m, g);
                t.accum(v, Mat(g.rowwise().sum()));
              });
}

Var Tape::scale_cols(Var m, Var w) {
  const Mat& mv = value(m);
  const Mat& wv = value(w);
  if (wv.rows() != 1 || wv.cols() != mv.cols()) {
    throw ShapeError("scale_cols: weights must be 1 x cols(m)");
  }
  Mat out = (mv.array().rowwise() * wv.row(0).array()).matrix();
  return push(std::move(out), needs(m) || needs(w),
              [m, w](Tape& t, const Mat& g) {
                t.accum(m, Mat((g.array().rowwise() * t.value(w).row(0).array()).matrix()));
                t.accum(w, Mat(g.cwiseProduct(t.value(m)).colwise().sum()));
              });
}

Var Tape::tanh_(Var a) {
  Mat out = value(a).array().tanh().matrix();
  return push(out, needs(a), [a, out](Tape& t, const Mat& g) {
    t.accum(a, Mat((g.array() * (1.0 - out.array().square())).matrix()));
  });
}

Var Tape::softmax_cols(Var a) {
  const Mat& x = value(a);
  Mat out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mx = x.col(j).maxCoeff();
    Eigen::ArrayXd e = (x.col(j).array() - mx).exp();
    out.col(j) = (e / e.sum()).matrix();
  }
  return push(out, needs(a), [a, out](Tape& t, const Mat& g) {
    Mat dx(out.rows(), out.cols());
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double dot = g.col(j).dot(out.col(j));
      dx.col(j) = out.col(j).cwiseProduct(g.col(j) - Vec::Constant(out.rows(), dot));
    }
    t.accum(a, dx);
  });
}

Var Tape::col(Var m, int j) {
  const Mat& mv = value(m);
  if (j < 0 || j >= mv.cols()) throw ShapeError("col: index out of range");
  const Eigen::Index rows = mv.rows();
  const Eigen::Index cols = mv.cols();
  return push(mv.col(j), needs(m), [m, j, rows, cols](Tape& t, const Mat& g) {
    Mat scatter = Mat::Zero(rows, cols);
    scatter.col(j) = g;
    t.accum(m, scatter);
  });
}

Var Tape::row(Var m, int i) {
  const Mat& mv = value(m);
  if (i < 0 || i >= mv.rows()) throw ShapeError("row: index out of range");
  const Eigen::Index rows = mv.rows();
  const Eigen::Index cols = mv.cols();
  return push(mv.row(i), needs(m), [m, i, rows, cols](Tape& t, const Mat& g) {
    Mat scatter = Mat::Zero(rows, cols);
    scatter.row(i) = g;
    t.accum(m, scatter);
  });
}

Var Tape::row_t(Var m, int i) {
  const Mat& mv = value(m);
  if (i < 0 || i >= mv.rows()) throw ShapeError("row_t: index out of range");
  const Eigen::Index rows = mv.rows();
  const Eigen::Index cols = mv.cols();
  return push(mv.row(i).transpose(), needs(m),
              [m, i, rows, cols](Tape& t, const Mat& g) {
                Mat scatter = Mat::Zero(rows, cols);
                scatter.row(i) = g.transpose();
                t.accum(m, scatter);
              });
}

Var Tape::gather_cols(Var m, const std::vector<int>& idx) {
  const Mat& mv = value(m);
  Mat out(mv.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= mv.cols()) {
      throw ShapeError("gather_cols: index out of range");
    }
    out.col(static_cast<Eigen::Index>(k)) = mv.col(idx[k]);
  }
  const Eigen::Index rows = mv.rows();
  const Eigen::Index cols = mv.cols();
  return push(std::move(out), needs(m),
              [m, idx, rows, cols](Tape& t, const Mat& g) {
                Mat scatter = Mat::Zero(rows, cols);
                for (std::size_t k = 0; k < idx.size(); ++k) {
                  scatter.col(idx[k]) += g.col(static_cast<Eigen::Index>(k));
                }
                t.accum(m, scatter);
              });
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_rows: empty input");
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(xs[0]).cols();
  bool grad = false;
  for (Var x : xs) {
    if (value(x).cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += value(x).rows();
    grad = grad || needs(x);
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var x : xs) {
    out.middleRows(at, value(x).rows()) = value(x);
    at += value(x).rows();
  }
  return push(std::move(out), grad, [xs](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Var x : xs) {
      const Eigen::Index r = t.value(x).rows();
      t.accum(x, Mat(g.middleRows(at, r)));
      at += r;
    }
  });
}

Var Tape::cosine(Var a, Var b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.cols() != 1 || bv.cols() != 1) {
    throw ShapeError("cosine: inputs must be column vectors");
  }
  check_same_shape(av, bv, "cosine");
  const double na = av.norm();
  const double nb = bv.norm();
  if (na == 0.0 || nb == 0.0) {
    throw NumericError("cosine similarity undefined for zero-norm vector");
  }
  const double c = av.col(0).dot(bv.col(0)) / (na * nb);
  Mat out(1, 1);
  out(0, 0) = c;
  return push(std::move(out), needs(a) || needs(b),
              [a, b, na, nb, c](Tape& t, const Mat& g) {
                const double gs = g(0, 0);
                const Mat& av = t.value(a);
                const Mat& bv = t.value(b);
                t.accum(a, Mat(gs * (bv / (na * nb) - av * (c / (na * na)))));
                t.accum(b, Mat(gs * (av / (na * nb) - bv * (c / (nb * nb)))));
              });
}

Var Tape::cross_entropy(Var logits, int target, double smoothing) {
  const Mat& x = value(logits);
  if (x.cols() != 1) throw ShapeError("cross_entropy: logits must be K x 1");
  const int k = static_cast<int>(x.rows());
  if (target < 0 || target >= k) throw ShapeError("cross_entropy: target out of range");
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw ConfigError("cross_entropy: smoothing must be in [0, 1)");
  }
  if (!x.allFinite()) throw NumericError("cross_entropy: non-finite logits");

  const double mx = x.col(0).maxCoeff();
  const Eigen::ArrayXd shifted = x.col(0).array() - mx;
  const double lse = std::log(shifted.exp().sum());
  // log p_k = x_k - mx - lse; loss = -sum_k q_k log p_k
  const Eigen::ArrayXd logp = shifted - lse;
  Eigen::ArrayXd q = Eigen::ArrayXd::Constant(k, smoothing / k);
  q(target) += 1.0 - smoothing;
  Mat out(1, 1);
  out(0, 0) = -(q * logp).sum();

  Vec p = logp.exp().matrix();
  Vec qv = q.matrix();
  return push(std::move(out), needs(logits),
              [logits, p, qv](Tape& t, const Mat& g) {
                t.accum(logits, Mat(g(0, 0) * (p - qv)));
              });
}

Var Tape::dropout(Var a, double rate, std::mt19937_64& rng, bool active) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (!active || rate == 0.0) return a;
  const Mat& x = value(a);
  std::bernoulli_distribution keep(1.0 - rate);
  Mat mask(x.rows(), x.cols());
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      mask(i, j) = keep(rng) ? scale : 0.0;
    }
  }
  return push(x.cwiseProduct(mask), needs(a),
              [a, mask](Tape& t, const Mat& g) {
                t.accum(a, g.cwiseProduct(mask));
              });
}

Var Tape::stop_gradient(Var a) { return push(value(a), false); }

void Tape::backward(Var root, double seed, const ParamFilter& filter) {
  if (!grads_enabled_) throw StateError("backward on a no-grad tape");
  const Node& r = node(root);
  if (r.value.size() != 1) throw ShapeError("backward: root must be scalar");
  if (!r.needs_grad) return;  // nothing trainable feeds the root

  Mat seed_m(1, 1);
  seed_m(0, 0) = seed;
  accum(root, seed_m);

  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.pull) n.pull(*this, n.grad);
    if (n.param != nullptr && n.param->trainable) {
      if (!filter || filter(*n.param)) {
        n.param->grad += n.grad;
      }
    }
  }
  // Grads are consumed; reset node grads so repeated backward() calls on the
  // same tape (e.g. the two-loss schedule) start clean.
  for (auto& n : nodes_) {
    if (n.grad.size() != 0) n.grad.setZero();
  }
}

}  // namespace hidac::ad
