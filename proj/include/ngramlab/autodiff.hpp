#pragma once

// Minimal tape-based reverse-mode differentiation over row-major matrices,
// with just the operations the n-gram models need.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ngramlab/core.hpp"
#include "ngramlab/rng.hpp"

namespace ngramlab::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Trainable tensor plus its gradient and Adam moments.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        m(Matrix::Zero(rows, cols)),
        v(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step; `step` counts from 1.
inline void adam_update(Parameter& p, double lr, long step, const AdamConfig& cfg = {}) {
  p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
  p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  p.value.array() -= lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + cfg.eps);
}

class Tape {
 public:
  struct Var {
    std::size_t id = 0;
  };

  const Matrix& value(Var x) const { return nodes_[x.id].value; }
  Matrix& grad(Var x) { return nodes_[x.id].grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  Var constant(Matrix v) { return push(std::move(v), nullptr); }

  /// Row b is the concatenation of table rows ids[b*width .. b*width+width).
  Var embedding_concat(Parameter& table, std::span<const Symbol> ids, std::size_t width) {
    const auto d = table.value.cols();
    const auto batch = static_cast<Eigen::Index>(ids.size() / width);
    Matrix out(batch, d * static_cast<Eigen::Index>(width));
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < width; ++k) {
        out.block(b, static_cast<Eigen::Index>(k) * d, 1, d) =
            table.value.row(ids[static_cast<std::size_t>(b) * width + k]);
      }
    }
    Parameter* tp = &table;
    std::vector<Symbol> saved(ids.begin(), ids.end());
    return push(std::move(out), [this, tp, saved = std::move(saved), width, d, batch](std::size_t self) {
      const Matrix& g = nodes_[self].grad;
      for (Eigen::Index b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < width; ++k) {
          tp->grad.row(saved[static_cast<std::size_t>(b) * width + k]) +=
              g.block(b, static_cast<Eigen::Index>(k) * d, 1, d);
        }
      }
    });
  }

  /// Logits of a linear map over the one-hot concatenation of ids, without
  /// materializing the one-hot input: out[b] = Σ_k W[:, k*vocab + ids[b,k]].
  Var sparse_linear(Parameter& w, std::span<const Symbol> ids, std::size_t width, std::size_t vocab) {
    const auto batch = static_cast<Eigen::Index>(ids.size() / width);
    const auto rows = w.value.rows();
    Matrix out = Matrix::Zero(batch, rows);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < width; ++k) {
        const auto col = static_cast<Eigen::Index>(k * vocab + ids[static_cast<std::size_t>(b) * width + k]);
        out.row(b) += w.value.col(col).transpose();
      }
    }
    Parameter* wp = &w;
    std::vector<Symbol> saved(ids.begin(), ids.end());
    return push(std::move(out), [this, wp, saved = std::move(saved), width, vocab, batch](std::size_t self) {
      const Matrix& g = nodes_[self].grad;
      for (Eigen::Index b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < width; ++k) {
          const auto col = static_cast<Eigen::Index>(k * vocab + saved[static_cast<std::size_t>(b) * width + k]);
          wp->grad.col(col) += g.row(b).transpose();
        }
      }
    });
  }

  /// x · Wᵀ (+ bias).
  Var linear(Var x, Parameter& w, Parameter* bias) {
    Matrix out = value(x) * w.value.transpose();
    if (bias) out.rowwise() += bias->value.row(0);
    Parameter* wp = &w;
    const std::size_t xi = x.id;
    return push(std::move(out), [this, wp, bias, xi](std::size_t self) {
      const Matrix& g = nodes_[self].grad;
      wp->grad.noalias() += g.transpose() * nodes_[xi].value;
      if (bias) bias->grad.row(0) += g.colwise().sum();
      if (nodes_[xi].needs_grad) nodes_[xi].grad.noalias() += g * wp->value;
    });
  }

  Var relu(Var x) {
    Matrix out = value(x).cwiseMax(0.0);
    const std::size_t xi = x.id;
    return push(std::move(out), [this, xi](std::size_t self) {
      nodes_[xi].grad.array() += (nodes_[xi].value.array() > 0.0).cast<double>() * nodes_[self].grad.array();
    });
  }

  /// Inverted dropout: kept units are scaled by 1/(1-rate); rate 1 zeroes all.
  Var dropout(Var x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    Matrix mask(value(x).rows(), value(x).cols());
    const double keep_scale = rate >= 1.0 ? 0.0 : 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() >= rate ? keep_scale : 0.0;
    Matrix out = value(x).cwiseProduct(mask);
    const std::size_t xi = x.id;
    return push(std::move(out), [this, xi, mask = std::move(mask)](std::size_t self) {
      nodes_[xi].grad += nodes_[self].grad.cwiseProduct(mask);
    });
  }

  /// Mean over rows of -log softmax(logits)[target]; a 1x1 result.
  Var softmax_cross_entropy(Var logits, std::span<const Symbol> targets) {
    const Matrix& z = value(logits);
    const auto batch = z.rows();
    Matrix probs(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index b = 0; b < batch; ++b) {
      const double mx = z.row(b).maxCoeff();
      const auto e = (z.row(b).array() - mx).exp();
      const double s = e.sum();
      probs.row(b) = e / s;
      loss -= z(b, targets[static_cast<std::size_t>(b)]) - mx - std::log(s);
    }
    Matrix out(1, 1);
    out(0, 0) = loss / static_cast<double>(batch);
    const std::size_t li = logits.id;
    std::vector<Symbol> saved(targets.begin(), targets.end());
    return push(std::move(out), [this, li, probs = std::move(probs), saved = std::move(saved)](std::size_t self) {
      const double g = nodes_[self].grad(0, 0) / static_cast<double>(probs.rows());
      Matrix d = probs;
      for (Eigen::Index b = 0; b < d.rows(); ++b) d(b, saved[static_cast<std::size_t>(b)]) -= 1.0;
      nodes_[li].grad += g * d;
    });
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward step in
  /// reverse. Parameter gradients accumulate; zero them between steps.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw ModelError("backward() needs a scalar loss");
    for (auto& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(i);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(std::size_t)> back;
    bool needs_grad = true;
  };

  Var push(Matrix v, std::function<void(std::size_t)> back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = static_cast<bool>(back);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace ngramlab::ad
