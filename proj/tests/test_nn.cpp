#include <gtest/gtest.h>

#include <cmath>

#include "agl/nn/adam.hpp"
#include "agl/nn/attention.hpp"
#include "agl/nn/gradcheck.hpp"
#include "agl/nn/losses.hpp"

using namespace agl;
using namespace agl::nn;

namespace {

Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

// Fixed projection turning a matrix output into a scalar loss.
double project(const Matrix<double>& y, const Matrix<double>& w) { return (y.array() * w.array()).sum(); }

}  // namespace

TEST(Linear, IdentityAndBias) {
  const Matrix<float> x = Matrix<float>::Random(3, 4);
  const Matrix<float> eye = Matrix<float>::Identity(4, 4);
  const RowVector<float> zero = RowVector<float>::Zero(4);
  EXPECT_EQ(linear_forward<float>(x, eye, zero), x);
  RowVector<float> b(4);
  b << 1, 2, 3, 4;
  const Matrix<float> y = linear_forward<float>(Matrix<float>::Zero(2, 4), eye, b);
  EXPECT_EQ(y.row(1), b);
  EXPECT_THROW(linear_forward<float>(x, Matrix<float>::Identity(3, 3), zero), ContractViolation);
}

TEST(Linear, GradientCheck) {
  ParamSet<double> ps;
  Rng rng(1);
  const Linear lin = Linear::create(ps, "lin", 5, 3);
  lin.init(ps, rng);
  const Matrix<double> x = random_matrix(4, 5, 2);
  const Matrix<double> w = random_matrix(4, 3, 3);
  const auto report = finite_diff_check(
      ps, [&](ParamSet<double>& p) { return project(lin.forward(p, x), w); },
      [&](ParamSet<double>& p) { lin.backward(p, x, w); });
  EXPECT_GE(report.coordinates, 18u);
  EXPECT_LE(report.max_rel_error, tol::kGradRelLinear);
}

TEST(Softmax, Examples) {
  Vector<double> z = Vector<double>::Zero(4);
  EXPECT_TRUE(softmax(z).isApprox(Vector<double>::Constant(4, 0.25)));
  const std::array<bool, 2> first{true, false};
  const Vector<double> p = softmax<double>(Vector<double>::Zero(2), first);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 0.0);
  const std::array<bool, 2> none{false, false};
  EXPECT_THROW(softmax<double>(Vector<double>::Zero(2), none), ContractViolation);
}

TEST(Softmax, ShiftInvariantAndNormalised) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    Vector<double> x(4);
    for (int k = 0; k < 4; ++k) x[k] = 5 * standard_normal(rng);
    const std::array<bool, 4> mask{true, i % 2 == 0, true, i % 3 == 0};
    const Vector<double> p = softmax<double>(x, mask);
    const Vector<double> q = softmax<double>((x.array() + 17.5).matrix(), mask);
    EXPECT_NEAR(p.sum(), 1.0, tol::kProbSum);
    EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-6);
    for (int k = 0; k < 4; ++k)
      if (!mask[k]) EXPECT_EQ(p[k], 0.0);
  }
}

TEST(Bce, Examples) {
  const Matrix<double> one = Matrix<double>::Ones(1, 1);
  EXPECT_NEAR(bce_with_logits<double>(Matrix<double>::Zero(1, 1), one, one).value, std::log(2.0), 1e-12);
  EXPECT_LT(bce_with_logits<double>(Matrix<double>::Constant(1, 1, 20.0), one, one).value, 1e-8);
  // masked entries do not contribute
  Matrix<double> logits(1, 2), targets(1, 2), weights(1, 2);
  logits << 0, 100;
  targets << 1, 0;
  weights << 1, 0;
  EXPECT_NEAR(bce_with_logits(logits, targets, weights).value, std::log(2.0), 1e-12);
}

TEST(Bce, GradientCheck) {
  ParamSet<double> ps;
  const ParamId id = ps.add("logits", 5, 4);
  ps.value(id) = random_matrix(5, 4, 7) * 3;
  Matrix<double> targets(5, 4), weights(5, 4);
  Rng rng(8);
  for (Eigen::Index i = 0; i < targets.size(); ++i) {
    targets.data()[i] = static_cast<double>(uniform_index(rng, 2));
    weights.data()[i] = uniform_index(rng, 4) == 0 ? 0.0 : 1.0;
  }
  const auto report = finite_diff_check(
      ps, [&](ParamSet<double>& p) { return bce_with_logits(p.value(id), targets, weights).value; },
      [&](ParamSet<double>& p) { p.grad(id) += bce_with_logits(p.value(id), targets, weights).grad; });
  EXPECT_LE(report.max_rel_error, tol::kGradRel);
}

TEST(CrossEntropy, GradientCheckWithMask) {
  ParamSet<double> ps;
  const ParamId id = ps.add("logits", 6, 4);
  ps.value(id) = random_matrix(6, 4, 9);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> allowed(6, 4);
  allowed.setConstant(true);
  allowed(0, 1) = false;
  allowed(3, 3) = false;
  const std::vector<int> targets{0, 1, -1, 2, 3, 0};
  const auto report = finite_diff_check(
      ps,
      [&](ParamSet<double>& p) { return softmax_cross_entropy<double>(p.value(id), targets, &allowed).value; },
      [&](ParamSet<double>& p) {
        p.grad(id) += softmax_cross_entropy<double>(p.value(id), targets, &allowed).grad;
      });
  EXPECT_LE(report.max_rel_error, tol::kGradRel);
}

TEST(LayerNorm, GradientCheck) {
  ParamSet<double> ps;
  const LayerNorm ln = LayerNorm::create(ps, "ln", 6);
  ps.value(ln.gain) = random_matrix(1, 6, 10);
  ps.value(ln.bias) = random_matrix(1, 6, 11);
  const Matrix<double> x = random_matrix(3, 6, 12);
  const Matrix<double> w = random_matrix(3, 6, 13);
  const auto report = finite_diff_check(
      ps, [&](ParamSet<double>& p) { return project(ln.forward(p, x), w); },
      [&](ParamSet<double>& p) {
        LayerNorm::Cache<double> c;
        ln.forward(p, x, &c);
        ln.backward(p, c, w);
      });
  EXPECT_LE(report.max_rel_error, tol::kGradRel);
}

namespace {

struct BlockFixture {
  ParamSet<double> ps;
  CausalBlock block;
  BlockFixture() {
    Rng rng(20);
    block = CausalBlock::create(ps, "block", 8, 2, 12);
    block.init(ps, rng);
    for (auto& p : ps)
      if (p.path.find(".ln") != std::string::npos)
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.3 * standard_normal(rng);
  }
};

}  // namespace

TEST(CausalBlock, GradientCheckOnFourTokens) {
  BlockFixture f;
  const Matrix<double> x = random_matrix(4, 8, 21);
  const Matrix<double> w = random_matrix(4, 8, 22);
  const auto report = finite_diff_check(
      f.ps, [&](ParamSet<double>& p) { return project(f.block.forward(p, x), w); },
      [&](ParamSet<double>& p) {
        CausalBlock::Cache<double> c;
        f.block.forward(p, x, &c);
        f.block.backward(p, c, w);
      },
      {.sample = 256, .seed = 3});
  EXPECT_LE(report.max_rel_error, tol::kGradRel) << report.worst_path;
}

TEST(CausalBlock, InputGradientCheck) {
  BlockFixture f;
  ParamSet<double> xs;
  const ParamId xid = xs.add("x", 4, 8);
  xs.value(xid) = random_matrix(4, 8, 23);
  const Matrix<double> w = random_matrix(4, 8, 24);
  const auto report = finite_diff_check(
      xs, [&](ParamSet<double>& p) { return project(f.block.forward(f.ps, p.value(xid)), w); },
      [&](ParamSet<double>& p) {
        CausalBlock::Cache<double> c;
        f.block.forward(f.ps, p.value(xid), &c);
        p.grad(xid) += f.block.backward(f.ps, c, w);
      });
  EXPECT_LE(report.max_rel_error, tol::kGradRel);
}

TEST(CausalBlock, SingleTokenAttendsToItself) {
  BlockFixture f;
  const Matrix<double> x = random_matrix(1, 8, 25);
  CausalBlock::Cache<double> c;
  f.block.forward(f.ps, x, &c);
  for (const auto& p : c.probs) EXPECT_EQ(p(0, 0), 1.0);
  EXPECT_EQ(c.attn, c.v);
}

TEST(CausalBlock, FutureTokensDoNotLeak) {
  BlockFixture f;
  const Matrix<double> x = random_matrix(6, 8, 26);
  const Matrix<double> y = f.block.forward(f.ps, x);
  for (Eigen::Index t = 0; t + 1 < 6; ++t) {
    Matrix<double> x2 = x;
    x2.bottomRows(6 - t - 1) += random_matrix(6 - t - 1, 8, 27 + t);
    const Matrix<double> y2 = f.block.forward(f.ps, x2);
    EXPECT_TRUE(y.topRows(t + 1) == y2.topRows(t + 1)) << t;
  }
}

TEST(CausalBlock, IncrementalStepMatchesFullForward) {
  BlockFixture f;
  const Matrix<double> x = random_matrix(5, 8, 30);
  const Matrix<double> y = f.block.forward(f.ps, x);
  CausalBlock::KvCache<double> kv;
  for (Eigen::Index t = 0; t < 5; ++t) {
    const RowVector<double> yt = f.block.step<double>(f.ps, x.row(t), kv);
    EXPECT_LT((yt - y.row(t)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, GradientCheck) {
  ParamSet<double> ps;
  Rng rng(31);
  const Mlp mlp = Mlp::create(ps, "mlp", {5, 7, 7, 3});
  mlp.init(ps, rng);
  const Matrix<double> x = random_matrix(4, 5, 32);
  const Matrix<double> w = random_matrix(4, 3, 33);
  const auto report = finite_diff_check(
      ps, [&](ParamSet<double>& p) { return project(mlp.forward(p, x), w); },
      [&](ParamSet<double>& p) {
        Mlp::Cache<double> c;
        mlp.forward(p, x, &c);
        mlp.backward(p, c, w);
      });
  EXPECT_LE(report.max_rel_error, tol::kGradRel);
}

TEST(GradCheck, QuadraticIsExact) {
  ParamSet<double> ps;
  const ParamId id = ps.add_vector("w", 80);
  ps.value(id) = random_matrix(1, 80, 40);
  const Matrix<double> a = random_matrix(80, 80, 41);
  const Matrix<double> q = a * a.transpose();
  const auto report = finite_diff_check(
      ps, [&](ParamSet<double>& p) { return 0.5 * (p.value(id) * q * p.value(id).transpose())(0, 0); },
      [&](ParamSet<double>& p) { p.grad(id) += p.value(id) * q; });
  EXPECT_EQ(report.coordinates, 80u);
  EXPECT_LE(report.max_rel_error, tol::kGradRelLinear);
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  ParamSet<float> ps;
  const ParamId id = ps.add_vector("w", 3);
  auto st = make_adam(ps, 0.01);
  ps.grad(id) << 0.5f, -2.0f, 1e-3f;
  adam_step(ps, st);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(std::abs(ps.value(id)(0, k)), 0.01, 1e-4);
  EXPECT_TRUE(ps.grad(id).isZero());
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamSet<float> ps;
  const ParamId id = ps.add_vector("w", 3);
  ps.value(id) << 1, 2, 3;
  auto st = make_adam(ps, 0.1);
  adam_step(ps, st);
  EXPECT_EQ(ps.value(id), (Matrix<float>(1, 3) << 1, 2, 3).finished());
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  ParamSet<double> ps;
  const ParamId id = ps.add_vector("w", 1);
  auto st = make_adam(ps, 0.1);
  for (int i = 0; i < 500; ++i) {
    ps.grad(id)(0, 0) = 2 * (ps.value(id)(0, 0) - 3);
    adam_step(ps, st);
  }
  EXPECT_LT(std::abs(ps.value(id)(0, 0) - 3), 0.01);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamSet<float> ps;
  ps.add_vector("first", 2);
  const ParamId id = ps.add_vector("second", 2);
  auto st = make_adam(ps, 0.1);
  ps.grad(id)(0, 1) = std::nanf("");
  try {
    adam_step(ps, st);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
  }
  EXPECT_TRUE(ps.value(id).isZero());
}

TEST(ParamSet, CastPreservesLayoutAndOrder) {
  ParamSet<float> ps;
  ps.add("b.w", 2, 3);
  ps.add_vector("a.bias", 3);
  const auto d = ps.cast<double>();
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].path, "b.w");
  EXPECT_EQ(ps.sorted_order(), (std::vector<std::size_t>{1, 0}));
  EXPECT_THROW(ps.add("b.w", 1, 1), ContractViolation);
}

TEST(CausalBlock, StackedSegmentsMatchSeparateRuns) {
  BlockFixture f;
  const Matrix<double> a = random_matrix(3, 8, 50), b = random_matrix(5, 8, 51);
  Matrix<double> both(8, 8);
  both << a, b;
  const std::vector<Eigen::Index> segs{3, 5};
  CausalBlock::Cache<double> c;
  const Matrix<double> y = f.block.forward(f.ps, both, &c, segs);
  EXPECT_LT((y.topRows(3) - f.block.forward(f.ps, a)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((y.bottomRows(5) - f.block.forward(f.ps, b)).cwiseAbs().maxCoeff(), 1e-12);
  const std::vector<Eigen::Index> bad{3, 4};
  EXPECT_THROW(f.block.forward(f.ps, both, &c, bad), ContractViolation);
}

TEST(CausalBlock, SegmentedGradientCheck) {
  BlockFixture f;
  const Matrix<double> x = random_matrix(7, 8, 52);
  const Matrix<double> w = random_matrix(7, 8, 53);
  const std::vector<Eigen::Index> segs{2, 1, 4};
  const auto report = finite_diff_check(
      f.ps,
      [&](ParamSet<double>& p) {
        CausalBlock::Cache<double> c;
        return project(f.block.forward(p, x, &c, segs), w);
      },
      [&](ParamSet<double>& p) {
        CausalBlock::Cache<double> c;
        f.block.forward(p, x, &c, segs);
        f.block.backward(p, c, w);
      },
      {.sample = 256, .seed = 5});
  EXPECT_LE(report.max_rel_error, tol::kGradRel);
}
