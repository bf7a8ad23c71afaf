#include "agl/align.hpp"

#include <cmath>

#include "agl/nn/adam.hpp"

namespace agl {

namespace {

nn::Matrix<double> gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  nn::Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

nn::Matrix<double> random_orthogonal(Eigen::Index dim, Rng& rng) {
  const Eigen::MatrixXd g = gaussian(dim, dim, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::VectorXd d = qr.matrixQR().diagonal();
  for (Eigen::Index j = 0; j < dim; ++j)
    if (d[j] < 0) q.col(j) *= -1.0;
  return q;
}

}  // namespace

FrozenTarget make_frozen_target(Eigen::Index dim, std::uint64_t seed) {
  FrozenTarget t;
  t.proj = nn::Linear::create(t.params, "target.proj", dim, dim);
  Rng rng(mix_seed(seed, "align-target"));
  t.proj.init(t.params, rng);
  return t;
}

AlignData make_planted_rotation(Eigen::Index n, Eigen::Index dim, double noise, std::uint64_t rotation_seed,
                                std::uint64_t sample_seed) {
  Rng rot_rng(mix_seed(rotation_seed, "align-rotation"));
  const nn::Matrix<double> rotation = random_orthogonal(dim, rot_rng);
  Rng rng(mix_seed(sample_seed, "align-samples"));
  const nn::Matrix<double> ground = gaussian(n, dim, rng);
  const nn::Matrix<double> source = ground * rotation + noise * gaussian(n, dim, rng);
  return {source.cast<float>(), ground.cast<float>()};
}

AlignResult train_align(const AlignData& data, const FrozenTarget& target, const AlignConfig& config) {
  if (config.encoder_sizes.front() != data.source.cols())
    throw ContractViolation("train_align: encoder input size does not match source features");
  if (data.source.rows() < config.batch_size)
    throw ContractViolation("train_align: dataset smaller than one batch");
  AlignResult out;
  out.encoder = AlignEncoder::create(out.params, config.encoder_sizes);
  Rng rng(mix_seed(config.seed, "align-init"));
  out.encoder.mlp.init(out.params, rng);
  auto adam = nn::make_adam(out.params, config.lr);
  const nn::Matrix<float> targets = target.embed(data.ground);
  const Eigen::Index n = data.source.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::size_t cursor = order.size();
  nn::Matrix<float> src(config.batch_size, data.source.cols()), tgt(config.batch_size, targets.cols());
  for (int step = 0; step < config.steps; ++step) {
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        cursor = 0;
      }
      const Eigen::Index row = order[cursor++];
      src.row(b) = data.source.row(row);
      tgt.row(b) = targets.row(row);
    }
    const float loss =
        out.encoder.loss_and_grad(out.params, src, tgt, static_cast<float>(config.temperature));
    if (!std::isfinite(loss)) throw NumericalError("train_align: non-finite loss at step " + std::to_string(step));
    out.losses.push_back(loss);
    nn::adam_step(out.params, adam);
  }
  return out;
}

double retrieval_top1(const nn::Matrix<float>& encoded, const nn::Matrix<float>& target) {
  if (encoded.rows() < 2) throw ContractViolation("retrieval_top1: need at least two rows");
  const nn::Matrix<float> sims = encoded * target.transpose();
  int hits = 0;
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    Eigen::Index best;
    sims.row(i).maxCoeff(&best);
    hits += best == i;
  }
  return static_cast<double>(hits) / static_cast<double>(sims.rows());
}

double retrieval_top1(const AlignResult& model, const AlignData& held_out, const FrozenTarget& target) {
  return retrieval_top1(model.encoder.encode(model.params, held_out.source), target.embed(held_out.ground));
}

}  // namespace agl
