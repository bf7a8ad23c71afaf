#pragma once

#include <array>
#include <span>
#include <vector>

#include "agl/nn/layers.hpp"

namespace agl::nn {

template <typename Scalar>
struct LossGrad {
  Scalar value = 0;
  Matrix<Scalar> grad;  // dL/dlogits, same shape as the logits
};

// Multi-label binary cross-entropy with logits, averaged over the entries whose
// weight is nonzero. Written as max(x,0) - x*y + log1p(exp(-|x|)).
template <typename Scalar>
LossGrad<Scalar> bce_with_logits(const Matrix<Scalar>& logits, const Matrix<Scalar>& targets,
                                 const Matrix<Scalar>& weights) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols() ||
      logits.rows() != weights.rows() || logits.cols() != weights.cols())
    throw ContractViolation("bce_with_logits: shape mismatch");
  LossGrad<Scalar> out{0, Matrix<Scalar>::Zero(logits.rows(), logits.cols())};
  Scalar count = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (weights.data()[i] != 0) count += 1;
  if (count == 0) return out;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (weights.data()[i] == 0) continue;
    const Scalar x = logits.data()[i];
    const Scalar y = targets.data()[i];
    out.value += std::max(x, Scalar(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
    out.grad.data()[i] = (sigmoid(x) - y) / count;
  }
  out.value /= count;
  return out;
}

// Softmax cross-entropy per row against an integer target, averaged over rows
// with target >= 0. `allowed`, when given, masks entries out of each row's softmax.
template <typename Scalar>
LossGrad<Scalar> softmax_cross_entropy(
    const Matrix<Scalar>& logits, std::span<const int> targets,
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>* allowed = nullptr) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw ContractViolation("softmax_cross_entropy: target count mismatch");
  LossGrad<Scalar> out{0, Matrix<Scalar>::Zero(logits.rows(), logits.cols())};
  Scalar count = 0;
  for (int t : targets)
    if (t >= 0) count += 1;
  if (count == 0) return out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    std::array<bool, 64> buf{};
    std::span<const bool> mask;
    if (allowed) {
      if (logits.cols() > 64) throw ContractViolation("softmax_cross_entropy: mask too wide");
      for (Eigen::Index c = 0; c < logits.cols(); ++c) buf[static_cast<std::size_t>(c)] = (*allowed)(r, c);
      mask = std::span<const bool>(buf.data(), static_cast<std::size_t>(logits.cols()));
    }
    const Vector<Scalar> row = logits.row(r).transpose();
    const Vector<Scalar> logp = log_softmax<Scalar>(row, mask);
    if (!std::isfinite(logp[t])) throw ContractViolation("softmax_cross_entropy: target is masked");
    out.value -= logp[t];
    Vector<Scalar> g = Vector<Scalar>::Zero(row.size());
    for (Eigen::Index c = 0; c < row.size(); ++c)
      if (std::isfinite(logp[c])) g[c] = std::exp(logp[c]);
    g[t] -= 1;
    out.grad.row(r) = g.transpose() / count;
  }
  out.value /= count;
  return out;
}

}  // namespace agl::nn
