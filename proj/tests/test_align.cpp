#include <gtest/gtest.h>

#include <cmath>

#include "agl/align.hpp"
#include "agl/checkpoint.hpp"
#include "agl/nn/gradcheck.hpp"

using namespace agl;
using nn::Matrix;

namespace {

Matrix<double> unit_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<double> m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return normalize_rows<double>(m);
}

}  // namespace

TEST(InfoNce, SingleRowIsZero) {
  const Matrix<double> s = unit_rows(1, 4, 1);
  EXPECT_EQ(infonce_loss<double>(s, unit_rows(1, 4, 2), 0.07).value, 0.0);
}

TEST(InfoNce, IdenticalRowsGiveLogN) {
  Matrix<double> s(5, 3);
  s.rowwise() = unit_rows(1, 3, 3).row(0);
  EXPECT_NEAR(infonce_loss<double>(s, s, 0.07).value, std::log(5.0), 1e-12);
}

TEST(InfoNce, GoldenTwoRowValue) {
  Matrix<double> s(2, 2);
  s << 1, 0, -1, 0;
  // log(1 + exp(-2 / 0.07)), evaluated at 30 digits
  EXPECT_NEAR(infonce_loss<double>(s, s, 0.07).value, 3.90468704320075855975e-13, 1e-24);
}

TEST(InfoNce, NonNegativeAndPermutationInvariant) {
  const Matrix<double> s = unit_rows(8, 6, 4), f = unit_rows(8, 6, 5);
  const double base = infonce_loss<double>(s, f, 0.1).value;
  EXPECT_GT(base, 0.0);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(8);
  p.setIdentity();
  std::swap(p.indices()[1], p.indices()[6]);
  std::swap(p.indices()[0], p.indices()[3]);
  const Matrix<double> sp = p * s, fp = p * f;
  EXPECT_NEAR(infonce_loss<double>(sp, fp, 0.1).value, base, 1e-12);
  EXPECT_THROW(infonce_loss<double>(Matrix<double>(0, 6), Matrix<double>(0, 6), 0.1), ContractViolation);
}

TEST(InfoNce, GradientCheck) {
  nn::ParamSet<double> ps;
  const auto sid = ps.add("s", 6, 5), fid = ps.add("f", 6, 5);
  ps.value(sid) = unit_rows(6, 5, 6);
  ps.value(fid) = unit_rows(6, 5, 7);
  const auto report = nn::finite_diff_check(
      ps, [&](nn::ParamSet<double>& p) { return infonce_loss<double>(p.value(sid), p.value(fid), 0.3).value; },
      [&](nn::ParamSet<double>& p) {
        const auto r = infonce_loss<double>(p.value(sid), p.value(fid), 0.3);
        p.grad(sid) += r.d_encoded;
        p.grad(fid) += r.d_target;
      });
  EXPECT_LE(report.max_rel_error, tol::kGradRel);
}

TEST(AlignEncoder, LossGradientCheckThroughNormalisation) {
  nn::ParamSet<double> ps;
  const auto enc = AlignEncoder::create(ps, {6, 8, 5});
  Rng rng(8);
  enc.mlp.init(ps, rng);
  Rng data_rng(9);
  Matrix<double> src(7, 6);
  for (Eigen::Index i = 0; i < src.size(); ++i) src.data()[i] = standard_normal(data_rng);
  const Matrix<double> tgt = unit_rows(7, 5, 10);
  const auto report = nn::finite_diff_check(
      ps,
      [&](nn::ParamSet<double>& p) { return infonce_loss<double>(enc.encode(p, src), tgt, 0.5).value; },
      [&](nn::ParamSet<double>& p) { enc.loss_and_grad(p, src, tgt, 0.5); });
  EXPECT_LE(report.max_rel_error, tol::kGradRel);
}

TEST(Retrieval, PerfectAndChance) {
  const Matrix<double> f = unit_rows(128, 16, 11);
  EXPECT_EQ(retrieval_top1(f.cast<float>(), f.cast<float>()), 1.0);
  double total = 0;
  for (std::uint64_t s = 0; s < 20; ++s)
    total += retrieval_top1(unit_rows(128, 16, 100 + s).cast<float>(), f.cast<float>());
  EXPECT_LT(total / 20, 0.05);
}

TEST(TrainAlign, ZeroStepsKeepsInitialisation) {
  AlignConfig cfg;
  cfg.steps = 0;
  const auto data = make_planted_rotation(256, 32, 0.1, 1, 2);
  const auto target = make_frozen_target(32, 3);
  const auto a = train_align(data, target, cfg);
  nn::ParamSet<float> init;
  const auto enc = AlignEncoder::create(init, cfg.encoder_sizes);
  Rng rng(mix_seed(cfg.seed, "align-init"));
  enc.mlp.init(init, rng);
  EXPECT_TRUE(a.params.values_equal(init));
}

TEST(TrainAlign, LearnsPlantedRotationDeterministically) {
  AlignConfig cfg;
  cfg.steps = 300;
  const auto data = make_planted_rotation(2048, 32, 0.1, 1, 2);
  const auto held = make_planted_rotation(128, 32, 0.1, 1, 99);
  const auto target = make_frozen_target(32, 3);
  const auto target_hash = checkpoint_hash(target.params);
  const auto a = train_align(data, target, cfg);
  const auto b = train_align(data, target, cfg);
  EXPECT_EQ(serialize_checkpoint(a.params), serialize_checkpoint(b.params));
  EXPECT_EQ(checkpoint_hash(target.params), target_hash);
  auto window = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 50; ++i) s += a.losses[i];
    return s / 50;
  };
  EXPECT_LT(window(a.losses.size() - 50), 0.5 * window(0));
  for (std::size_t from = 50; from + 50 <= a.losses.size(); from += 50) EXPECT_LT(window(from), window(from - 50));
  EXPECT_GT(retrieval_top1(a, held, target), 0.5);
}
