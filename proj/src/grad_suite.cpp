#include "agl/grad_suite.hpp"

#include <cmath>

#include "agl/align.hpp"
#include "agl/gasp.hpp"
#include "agl/nn/gradcheck.hpp"
#include "agl/planner.hpp"

namespace agl {

namespace {

using nn::Matrix;
using nn::ParamSet;

Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(mix_seed(seed, "grad-suite"));
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

Matrix<double> unit_rows(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  return normalize_rows<double>(random_matrix(r, c, seed));
}

double project(const Matrix<double>& y, const Matrix<double>& w) { return (y.array() * w.array()).sum(); }

GradSuiteEntry entry(std::string op, const nn::GradCheckReport& r, double tolerance) {
  return {std::move(op), r.max_rel_error, tolerance, r.coordinates, r.worst_path};
}

// Loss closures must not leave gradients behind; sequence losses accumulate, so they run on a copy.
template <typename F>
auto on_copy(F f) {
  return [f](ParamSet<double>& p) {
    auto copy = p;
    return f(copy);
  };
}

GaspArch tiny_arch() {
  GaspArch a;
  a.model_dim = 8;
  a.heads = 2;
  a.blocks = 2;
  a.mlp_hidden = 12;
  return a;
}

struct SequenceFixture {
  WorldBank bank;
  AglTask task;
  Trajectory random_walk;
  Trajectory optimal;
  Rng rng{mix_seed(0, "grad-suite-seq")};

  SequenceFixture() : bank([] {
      WorldSet s;
      s.grid = {5, 5};
      s.count = 1;
      s.seed = 17;
      return s;
    }()) {
    task = sample_task(bank.spec(0), 5, 10, rng);
    random_walk = gen_random_trajectory(task, 6, rng);
    optimal = gen_optimal_trajectory(task, rng);
  }
  const Embedding& goal() const { return bank.goal(0, task.goal, GoalModality::Aerial); }
};

GaspNet gasp_net(ParamSet<double>& ps, const GaspArch& arch, std::uint64_t seed) {
  GaspNet net = GaspNet::create(ps, arch);
  Rng rng(seed);
  net.init(ps, rng);
  return net;
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite() {
  std::vector<GradSuiteEntry> out;

  {
    ParamSet<double> ps;
    Rng rng(1);
    const nn::Linear lin = nn::Linear::create(ps, "lin", 5, 3);
    lin.init(ps, rng);
    const Matrix<double> x = random_matrix(4, 5, 2), w = random_matrix(4, 3, 3);
    out.push_back(entry("linear",
                        nn::finite_diff_check(
                            ps, [&](ParamSet<double>& p) { return project(lin.forward(p, x), w); },
                            [&](ParamSet<double>& p) { lin.backward(p, x, w); }),
                        tol::kGradRelLinear));
  }
  {
    ParamSet<double> ps;
    const auto id = ps.add_vector("w", 64);
    ps.value(id) = random_matrix(1, 64, 4);
    const Matrix<double> a = random_matrix(64, 64, 5);
    const Matrix<double> q = a * a.transpose();
    out.push_back(entry("quadratic",
                        nn::finite_diff_check(
                            ps, [&](ParamSet<double>& p) { return 0.5 * (p.value(id) * q * p.value(id).transpose())(0, 0); },
                            [&](ParamSet<double>& p) { p.grad(id) += p.value(id) * q; }),
                        tol::kGradRelLinear));
  }
  {
    ParamSet<double> ps;
    const nn::LayerNorm ln = nn::LayerNorm::create(ps, "ln", 6);
    ps.value(ln.gain) = random_matrix(1, 6, 6);
    ps.value(ln.bias) = random_matrix(1, 6, 7);
    const Matrix<double> x = random_matrix(3, 6, 8), w = random_matrix(3, 6, 9);
    out.push_back(entry("layernorm",
                        nn::finite_diff_check(
                            ps, [&](ParamSet<double>& p) { return project(ln.forward(p, x), w); },
                            [&](ParamSet<double>& p) {
                              nn::LayerNorm::Cache<double> c;
                              ln.forward(p, x, &c);
                              ln.backward(p, c, w);
                            }),
                        tol::kGradRel));
  }
  {
    ParamSet<double> ps;
    Rng rng(10);
    const nn::Mlp mlp = nn::Mlp::create(ps, "mlp", {5, 7, 3});
    mlp.init(ps, rng);
    const Matrix<double> x = random_matrix(4, 5, 11), w = random_matrix(4, 3, 12);
    out.push_back(entry("mlp_tanh",
                        nn::finite_diff_check(
                            ps, [&](ParamSet<double>& p) { return project(mlp.forward(p, x), w); },
                            [&](ParamSet<double>& p) {
                              nn::Mlp::Cache<double> c;
                              mlp.forward(p, x, &c);
                              mlp.backward(p, c, w);
                            }),
                        tol::kGradRel));
  }
  {
    ParamSet<double> ps;
    Rng rng(13);
    const nn::CausalBlock block = nn::CausalBlock::create(ps, "block", 8, 2, 12);
    block.init(ps, rng);
    for (auto& p : ps)
      if (p.path.find(".ln") != std::string::npos)
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.3 * standard_normal(rng);
    const Matrix<double> x = random_matrix(5, 8, 14), w = random_matrix(5, 8, 15);
    out.push_back(entry("causal_attention_block",
                        nn::finite_diff_check(
                            ps, [&](ParamSet<double>& p) { return project(block.forward(p, x), w); },
                            [&](ParamSet<double>& p) {
                              nn::CausalBlock::Cache<double> c;
                              block.forward(p, x, &c);
                              block.backward(p, c, w);
                            },
                            {.sample = 256, .seed = 1}),
                        tol::kGradRel));
  }
  {
    ParamSet<double> ps;
    const auto id = ps.add("logits", 5, 4);
    ps.value(id) = 2.0 * random_matrix(5, 4, 16);
    Rng rng(17);
    Matrix<double> targets(5, 4), weights(5, 4);
    for (Eigen::Index i = 0; i < targets.size(); ++i) {
      targets.data()[i] = static_cast<double>(uniform_index(rng, 2));
      weights.data()[i] = uniform_index(rng, 4) == 0 ? 0.0 : 1.0;
    }
    out.push_back(entry("bce_with_logits",
                        nn::finite_diff_check(
                            ps, [&](ParamSet<double>& p) { return nn::bce_with_logits(p.value(id), targets, weights).value; },
                            [&](ParamSet<double>& p) { p.grad(id) += nn::bce_with_logits(p.value(id), targets, weights).grad; }),
                        tol::kGradRel));
  }
  {
    ParamSet<double> ps;
    const auto sid = ps.add("s", 6, 5), fid = ps.add("f", 6, 5);
    ps.value(sid) = unit_rows(6, 5, 18);
    ps.value(fid) = unit_rows(6, 5, 19);
    out.push_back(entry("infonce",
                        nn::finite_diff_check(
                            ps, [&](ParamSet<double>& p) { return infonce_loss<double>(p.value(sid), p.value(fid), 0.3).value; },
                            [&](ParamSet<double>& p) {
                              const auto r = infonce_loss<double>(p.value(sid), p.value(fid), 0.3);
                              p.grad(sid) += r.d_encoded;
                              p.grad(fid) += r.d_target;
                            }),
                        tol::kGradRel));
  }
  {
    ParamSet<double> ps;
    const auto enc = AlignEncoder::create(ps, {6, 8, 5});
    Rng rng(20);
    enc.mlp.init(ps, rng);
    const Matrix<double> src = random_matrix(7, 6, 21), tgt = unit_rows(7, 5, 22);
    out.push_back(entry("align_encoder_infonce",
                        nn::finite_diff_check(
                            ps, [&](ParamSet<double>& p) { return infonce_loss<double>(enc.encode(p, src), tgt, 0.5).value; },
                            [&](ParamSet<double>& p) { enc.loss_and_grad(p, src, tgt, 0.5); }),
                        tol::kGradRel));
  }

  SequenceFixture seq;
  {
    std::vector<GaspExample> batch{
        make_gasp_example(seq.random_walk, label_trajectory(seq.random_walk), seq.bank.table(0), seq.goal())};
    ParamSet<double> ps;
    const GaspNet net = gasp_net(ps, tiny_arch(), 23);
    out.push_back(entry("gasp_loss",
                        nn::finite_diff_check(
                            ps, on_copy([&](ParamSet<double>& p) { return gasp_loss<double>(net, p, batch); }),
                            [&](ParamSet<double>& p) { gasp_loss<double>(net, p, batch); }, {.sample = 256, .seed = 2}),
                        tol::kGradRel));
  }
  {
    std::vector<BcExample> batch{make_bc_example(seq.optimal, seq.bank.table(0), seq.goal())};
    ParamSet<double> ps;
    const GaspNet net = gasp_net(ps, tiny_arch(), 24);
    out.push_back(entry("bc_loss",
                        nn::finite_diff_check(
                            ps, on_copy([&](ParamSet<double>& p) { return bc_loss<double>(net, p, batch); }),
                            [&](ParamSet<double>& p) { bc_loss<double>(net, p, batch); }, {.sample = 256, .seed = 3}),
                        tol::kGradRel));
  }
  {
    const GradientTable cats = enumerate_gradient_categories(seq.bank.set().grid);
    std::vector<RpgExample> batch{make_rpg_example(seq.optimal, seq.bank.table(0), seq.goal(), cats, 0.5, seq.rng)};
    batch[0].masked[1] = batch[0].masked[2] = true;
    GaspArch arch = tiny_arch();
    arch.gradient_categories = static_cast<int>(cats.size());
    ParamSet<double> ps;
    const GaspNet net = gasp_net(ps, arch, 25);
    out.push_back(entry("rpg_loss",
                        nn::finite_diff_check(
                            ps, on_copy([&](ParamSet<double>& p) { return rpg_loss<double>(net, p, batch); }),
                            [&](ParamSet<double>& p) { rpg_loss<double>(net, p, batch); }, {.sample = 256, .seed = 4}),
                        tol::kGradRel));
  }
  {
    // Two-step rollout: one sample inside the clip range, one clipped.
    PlannerArch arch;
    arch.input_dim = 6;
    arch.hidden = 8;
    ParamSet<double> ps;
    const PlannerNet net = PlannerNet::create(ps, arch);
    Rng rng(26);
    net.init(ps, rng);
    PpoBatch<double> batch;
    batch.features = random_matrix(2, 6, 27);
    batch.actions = {1, 2};
    batch.valid.resize(2);
    batch.valid[0].bits = {true, true, false, true};
    batch.valid[1].bits = {true, true, true, true};
    for (int i = 0; i < 2; ++i) {
      const nn::RowVector<double> f = batch.features.row(i);
      const nn::Vector<double> p = policy_dist(net, ps, f, batch.valid[static_cast<std::size_t>(i)]);
      batch.old_log_probs.push_back(std::log(p[batch.actions[static_cast<std::size_t>(i)]]) + (i == 0 ? 0.05 : -std::log(1.5)));
    }
    batch.advantages = {0.8, 1.3};
    batch.returns = {1.5, -0.5};
    const PpoConfig cfg;
    out.push_back(entry("ppo_loss",
                        nn::finite_diff_check(
                            ps, on_copy([&](ParamSet<double>& p) { return ppo_loss<double>(net, p, batch, cfg).total; }),
                            [&](ParamSet<double>& p) { ppo_loss<double>(net, p, batch, cfg); }, {.sample = 256, .seed = 5}),
                        tol::kGradRel));
  }
  return out;
}

}  // namespace agl
