#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agl/nn/attention.hpp"
#include "agl/nn/losses.hpp"

namespace agl {

struct AlignConfig {
  double temperature = 0.07;
  int batch_size = 128;
  int steps = 2000;
  double lr = 1e-3;
  std::vector<Eigen::Index> encoder_sizes{32, 128, 32};  // {in, hidden..., out}
  std::uint64_t seed = 0;
};

// Mean over rows of -log softmax_j(s_i . f_j / tau)[i]. Rows are expected unit-norm.
template <typename Scalar>
struct InfoNceResult {
  Scalar value = 0;
  nn::Matrix<Scalar> d_encoded;
  nn::Matrix<Scalar> d_target;
};

template <typename Scalar>
InfoNceResult<Scalar> infonce_loss(const nn::Matrix<Scalar>& encoded, const nn::Matrix<Scalar>& target,
                                   Scalar temperature) {
  const Eigen::Index n = encoded.rows();
  if (n < 1) throw ContractViolation("infonce_loss: empty batch");
  if (target.rows() != n || target.cols() != encoded.cols())
    throw ContractViolation("infonce_loss: shape mismatch");
  if (!(temperature > 0)) throw ContractViolation("infonce_loss: temperature must be positive");
  const nn::Matrix<Scalar> logits = encoded * target.transpose() / temperature;
  nn::Matrix<Scalar> dlogits(n, n);
  InfoNceResult<Scalar> out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const nn::Vector<Scalar> row = logits.row(i).transpose();
    const nn::Vector<Scalar> logp = nn::log_softmax<Scalar>(row);
    out.value -= logp[i];
    dlogits.row(i) = logp.array().exp().matrix().transpose();
    dlogits(i, i) -= 1;
  }
  out.value /= static_cast<Scalar>(n);
  dlogits /= static_cast<Scalar>(n) * temperature;
  out.d_encoded = dlogits * target;
  out.d_target = dlogits.transpose() * encoded;
  return out;
}

// y = u / |u| row-wise, and its backward given y.
template <typename Scalar>
nn::Matrix<Scalar> normalize_rows(const nn::Matrix<Scalar>& u, nn::Vector<Scalar>* norms = nullptr) {
  const nn::Vector<Scalar> n = u.rowwise().norm();
  if (norms) *norms = n;
  return (u.array().colwise() / n.array()).matrix();
}

template <typename Scalar>
nn::Matrix<Scalar> normalize_rows_backward(const nn::Matrix<Scalar>& y, const nn::Vector<Scalar>& norms,
                                           const nn::Matrix<Scalar>& dy) {
  const nn::Vector<Scalar> dots = (y.array() * dy.array()).rowwise().sum().matrix();
  return ((dy - (y.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array()).matrix();
}

// s_theta: tanh MLP followed by row normalisation.
struct AlignEncoder {
  nn::Mlp mlp;

  template <typename Scalar>
  static AlignEncoder create(nn::ParamSet<Scalar>& ps, const std::vector<Eigen::Index>& sizes) {
    return {nn::Mlp::create(ps, "align.encoder", sizes)};
  }

  template <typename Scalar>
  nn::Matrix<Scalar> encode(const nn::ParamSet<Scalar>& ps, const nn::Matrix<Scalar>& x) const {
    return normalize_rows<Scalar>(mlp.forward(ps, x));
  }

  // Loss on one batch; accumulates gradients into ps.
  template <typename Scalar>
  Scalar loss_and_grad(nn::ParamSet<Scalar>& ps, const nn::Matrix<Scalar>& source,
                       const nn::Matrix<Scalar>& target, Scalar temperature) const {
    typename nn::Mlp::Cache<Scalar> cache;
    nn::Vector<Scalar> norms;
    const nn::Matrix<Scalar> y = normalize_rows<Scalar>(mlp.forward(ps, source, &cache), &norms);
    const auto r = infonce_loss<Scalar>(y, target, temperature);
    mlp.backward(ps, cache, normalize_rows_backward<Scalar>(y, norms, r.d_encoded));
    return r.value;
  }
};

// Synthetic stand-in for paired aerial / ground data. A frozen target encoder
// f_phi maps ground features to unit target embeddings; the source (aerial)
// features are a fixed random rotation of the ground features plus noise.
struct AlignData {
  nn::Matrix<float> source;  // N x d_in
  nn::Matrix<float> ground;  // N x d, fed to the frozen target encoder
};

struct FrozenTarget {
  nn::ParamSet<float> params;
  nn::Linear proj;

  nn::Matrix<float> embed(const nn::Matrix<float>& ground) const {
    return normalize_rows<float>(proj.forward(params, ground));
  }
};

FrozenTarget make_frozen_target(Eigen::Index dim, std::uint64_t seed);

// `rotation_seed` fixes the planted relation so train and held-out splits share it.
AlignData make_planted_rotation(Eigen::Index n, Eigen::Index dim, double noise, std::uint64_t rotation_seed,
                                std::uint64_t sample_seed);

struct AlignResult {
  nn::ParamSet<float> params;
  AlignEncoder encoder;
  std::vector<double> losses;  // one per step
};

// Only the encoder is updated; `target` is read-only by construction.
AlignResult train_align(const AlignData& data, const FrozenTarget& target, const AlignConfig& config);

// Fraction of rows whose nearest target (cosine) is their own partner.
double retrieval_top1(const nn::Matrix<float>& encoded, const nn::Matrix<float>& target);
double retrieval_top1(const AlignResult& model, const AlignData& held_out, const FrozenTarget& target);

}  // namespace agl
