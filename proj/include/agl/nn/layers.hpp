#pragma once

#include <limits>
#include <span>
#include <string>

#include "agl/nn/tensor.hpp"
#include "agl/tolerances.hpp"

namespace agl::nn {

// y = x W + b, x: [T x in], W: [in x out], b: [1 x out]
template <typename Scalar>
Matrix<Scalar> linear_forward(const Matrix<Scalar>& x, const Matrix<Scalar>& w,
                              const RowVector<Scalar>& b) {
  if (x.cols() != w.rows() || w.cols() != b.cols())
    throw ContractViolation("linear_forward: shape mismatch");
  Matrix<Scalar> y = x * w;
  y.rowwise() += b;
  return y;
}

template <typename Scalar>
struct LinearGrads {
  Matrix<Scalar> dx;
  Matrix<Scalar> dw;
  RowVector<Scalar> db;
};

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& w,
                                    const Matrix<Scalar>& dy) {
  if (dy.rows() != x.rows() || dy.cols() != w.cols())
    throw ContractViolation("linear_backward: shape mismatch");
  return {dy * w.transpose(), x.transpose() * dy, dy.colwise().sum()};
}

struct Linear {
  ParamId weight;
  ParamId bias;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  template <typename Scalar>
  static Linear create(ParamSet<Scalar>& ps, const std::string& prefix, Eigen::Index in,
                       Eigen::Index out) {
    return {ps.add(prefix + ".weight", in, out), ps.add_vector(prefix + ".bias", out), in, out};
  }

  template <typename Scalar>
  void init(ParamSet<Scalar>& ps, Rng& rng) const {
    init_uniform(ps.value(weight), in, rng);
    init_uniform(ps.value(bias), in, rng);
  }

  template <typename Scalar>
  Matrix<Scalar> forward(const ParamSet<Scalar>& ps, const Matrix<Scalar>& x) const {
    Matrix<Scalar> y = x * ps.value(weight);
    y.rowwise() += ps.value(bias).row(0);
    return y;
  }

  // Accumulates parameter gradients, returns dL/dx.
  template <typename Scalar>
  Matrix<Scalar> backward(ParamSet<Scalar>& ps, const Matrix<Scalar>& x,
                          const Matrix<Scalar>& dy) const {
    ps.grad(weight).noalias() += x.transpose() * dy;
    ps.grad(bias).row(0) += dy.colwise().sum();
    return dy * ps.value(weight).transpose();
  }
};

template <typename Scalar>
Matrix<Scalar> tanh_forward(const Matrix<Scalar>& x) {
  return x.array().tanh().matrix();
}

// Takes the forward output y = tanh(x).
template <typename Scalar>
Matrix<Scalar> tanh_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& dy) {
  return (dy.array() * (Scalar(1) - y.array().square())).matrix();
}

struct LayerNorm {
  ParamId gain;
  ParamId bias;
  Eigen::Index dim = 0;

  template <typename Scalar>
  struct Cache {
    Matrix<Scalar> xhat;
    Vector<Scalar> inv_std;
  };

  template <typename Scalar>
  static LayerNorm create(ParamSet<Scalar>& ps, const std::string& prefix, Eigen::Index dim) {
    LayerNorm ln{ps.add_vector(prefix + ".gain", dim), ps.add_vector(prefix + ".bias", dim), dim};
    ps.value(ln.gain).setOnes();
    return ln;
  }

  template <typename Scalar>
  Matrix<Scalar> forward(const ParamSet<Scalar>& ps, const Matrix<Scalar>& x,
                         Cache<Scalar>* cache = nullptr) const {
    const Scalar eps = static_cast<Scalar>(tol::kLayerNormEps);
    Matrix<Scalar> xhat(x.rows(), x.cols());
    Vector<Scalar> inv_std(x.rows());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const Scalar mean = x.row(t).mean();
      const auto centered = (x.row(t).array() - mean).matrix();
      const Scalar var = centered.squaredNorm() / static_cast<Scalar>(x.cols());
      inv_std[t] = Scalar(1) / std::sqrt(var + eps);
      xhat.row(t) = centered * inv_std[t];
    }
    Matrix<Scalar> y = (xhat.array().rowwise() * ps.value(gain).row(0).array()).matrix();
    y.rowwise() += ps.value(bias).row(0);
    if (cache) *cache = {std::move(xhat), std::move(inv_std)};
    return y;
  }

  template <typename Scalar>
  Matrix<Scalar> backward(ParamSet<Scalar>& ps, const Cache<Scalar>& cache,
                          const Matrix<Scalar>& dy) const {
    ps.grad(gain).row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    ps.grad(bias).row(0) += dy.colwise().sum();
    const Matrix<Scalar> dxhat = (dy.array().rowwise() * ps.value(gain).row(0).array()).matrix();
    const Scalar n = static_cast<Scalar>(dy.cols());
    Matrix<Scalar> dx(dy.rows(), dy.cols());
    for (Eigen::Index t = 0; t < dy.rows(); ++t) {
      const Scalar mean_d = dxhat.row(t).sum() / n;
      const Scalar mean_dx = dxhat.row(t).dot(cache.xhat.row(t)) / n;
      dx.row(t) = cache.inv_std[t] *
                  (dxhat.row(t).array() - mean_d - cache.xhat.row(t).array() * mean_dx).matrix();
    }
    return dx;
  }
};

// Softmax over the allowed entries; disallowed entries come out exactly 0.
// An empty mask allows every entry.
template <typename Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& logits, std::span<const bool> mask = {}) {
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != logits.size())
    throw ContractViolation("softmax: mask size mismatch");
  auto allowed = [&](Eigen::Index i) { return mask.empty() || mask[static_cast<std::size_t>(i)]; };
  Scalar max = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (allowed(i)) max = std::max(max, logits[i]);
  if (max == -std::numeric_limits<Scalar>::infinity())
    throw ContractViolation("softmax: every entry is masked");
  Vector<Scalar> p = Vector<Scalar>::Zero(logits.size());
  Scalar sum = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!allowed(i)) continue;
    p[i] = std::exp(logits[i] - max);
    sum += p[i];
  }
  return p / sum;
}

// Log-probabilities of the allowed entries; disallowed entries are -inf.
template <typename Scalar>
Vector<Scalar> log_softmax(const Vector<Scalar>& logits, std::span<const bool> mask = {}) {
  auto allowed = [&](Eigen::Index i) { return mask.empty() || mask[static_cast<std::size_t>(i)]; };
  Scalar max = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (allowed(i)) max = std::max(max, logits[i]);
  if (max == -std::numeric_limits<Scalar>::infinity())
    throw ContractViolation("log_softmax: every entry is masked");
  // The arg-max term contributes exactly 1; log1p of the rest keeps small
  // losses accurate.
  Scalar rest = 0;
  bool skipped = false;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!allowed(i)) continue;
    if (!skipped && logits[i] == max) {
      skipped = true;
      continue;
    }
    rest += std::exp(logits[i] - max);
  }
  const Scalar log_rest = std::log1p(rest);
  Vector<Scalar> out(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    out[i] = allowed(i) ? (logits[i] - max) - log_rest : -std::numeric_limits<Scalar>::infinity();
  return out;
}

// dL/dlogits given p = softmax(logits) and dL/dp.
template <typename Scalar>
Vector<Scalar> softmax_backward(const Vector<Scalar>& p, const Vector<Scalar>& dp) {
  return (p.array() * (dp.array() - p.dot(dp))).matrix();
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
}

}  // namespace agl::nn
