#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "agl/checkpoint.hpp"
#include "agl/gasp.hpp"
#include "agl/nn/gradcheck.hpp"

using namespace agl;

namespace {

WorldSet small_set(int count, std::string tag = "world") {
  WorldSet s;
  s.grid = {5, 5};
  s.count = count;
  s.seed = 11;
  s.tag = std::move(tag);
  return s;
}

GaspArch tiny_arch() {
  GaspArch a;
  a.model_dim = 8;
  a.heads = 2;
  a.blocks = 2;
  a.mlp_hidden = 12;
  return a;
}

GaspExample example_for(const WorldBank& bank, int w, int length, std::uint64_t seed) {
  Rng rng(seed);
  const AglTask task = sample_task(bank.spec(w), 4, 10, rng);
  const Trajectory t = gen_random_trajectory(task, length, rng);
  return make_gasp_example(t, label_trajectory(t), bank.table(w), bank.goal(w, task.goal, GoalModality::Aerial));
}

template <typename S>
GaspNet initialised(nn::ParamSet<S>& ps, const GaspArch& arch, std::uint64_t seed) {
  GaspNet net = GaspNet::create(ps, arch);
  Rng rng(seed);
  net.init(ps, rng);
  return net;
}

}  // namespace

TEST(GaspTokens, OneStepSequenceLayout) {
  const WorldBank bank(small_set(1));
  const auto e3 = example_for(bank, 0, 1, 1);
  EXPECT_EQ(e3.tokens.steps(), 2);
  EXPECT_EQ(e3.tokens.actions.size(), 1u);
  EXPECT_EQ(e3.tokens.token_count(), 4);
  EXPECT_EQ(TokenSequence::obs_token(1), 3);
  EXPECT_EQ(TokenSequence::action_token(0), 2);
  EXPECT_EQ(e3.tokens.obs.cols(), 16 + kPositionEncodingDim);
}

TEST(GaspTokens, ObservationFeatureAppendsPosition) {
  const WorldBank bank(small_set(1));
  const Cell c{2, 3};
  const auto f = observation_feature(bank.table(0), c);
  EXPECT_TRUE(f.head(16).isApprox(bank.table(0).patch(c)));
  EXPECT_TRUE(f.tail(kPositionEncodingDim).isApprox(position_encoding(c)));
}

TEST(GaspTokens, ModalitiesCoincideWithoutNoise) {
  WorldSet s = small_set(1);
  s.noise_sigma = 0.0;
  const WorldBank bank(s);
  const Cell g{1, 4};
  EXPECT_TRUE(bank.goal(0, g, GoalModality::Aerial).isApprox(bank.goal(0, g, GoalModality::Text), 1e-6f));
  EXPECT_TRUE(bank.goal(0, g, GoalModality::Ground).isApprox(bank.table(0).patch(g), 1e-6f));
}

TEST(GaspLoss, SaturatedLogitsGiveNearZeroOrHugeLoss) {
  const WorldBank bank(small_set(1));
  const auto e = example_for(bank, 0, 6, 2);
  nn::Matrix<double> logits(e.tokens.steps(), kNumActions);
  for (int i = 0; i < e.tokens.steps(); ++i)
    for (int a = 0; a < kNumActions; ++a) logits(i, a) = e.targets[static_cast<std::size_t>(i)][a] ? 30.0 : -30.0;
  EXPECT_LT(gasp_bce<double>(logits, std::span(&e, 1)).value, 1e-6);
  EXPECT_GT(gasp_bce<double>(nn::Matrix<double>(-logits), std::span(&e, 1)).value, 10.0);
}

TEST(GaspLoss, ZeroLogitsGiveLogTwo) {
  const WorldBank bank(small_set(1));
  const auto e = example_for(bank, 0, 8, 3);
  const nn::Matrix<double> logits = nn::Matrix<double>::Zero(e.tokens.steps(), kNumActions);
  EXPECT_NEAR(gasp_bce<double>(logits, std::span(&e, 1)).value, std::log(2.0), 1e-12);
}

TEST(GaspLoss, GoalStepsAndInvalidActionsCarryNoWeight) {
  const WorldBank bank(small_set(1));
  const auto e = example_for(bank, 0, 9, 4);
  nn::Matrix<double> logits = nn::Matrix<double>::Zero(e.tokens.steps(), kNumActions);
  const auto base = gasp_bce<double>(logits, std::span(&e, 1));
  for (int i = 0; i < e.tokens.steps(); ++i)
    for (int a = 0; a < kNumActions; ++a) {
      const auto k = static_cast<std::size_t>(i);
      if (!e.labeled[k] || !e.valid[k][a]) {
        EXPECT_EQ(base.grad(i, a), 0.0);
        logits(i, a) = 50.0;
      }
    }
  EXPECT_DOUBLE_EQ(gasp_bce<double>(logits, std::span(&e, 1)).value, base.value);
}

TEST(GaspLoss, GradientCheckThreeSteps) {
  const WorldBank bank(small_set(2));
  std::vector<GaspExample> batch{example_for(bank, 0, 2, 5), example_for(bank, 1, 4, 6)};
  nn::ParamSet<double> ps;
  const GaspNet net = initialised(ps, tiny_arch(), 7);
  const auto report = nn::finite_diff_check(
      ps,
      [&](nn::ParamSet<double>& p) {
        auto copy = p;
        return gasp_loss<double>(net, copy, batch);
      },
      [&](nn::ParamSet<double>& p) { gasp_loss<double>(net, p, batch); }, {.sample = 256, .seed = 1});
  EXPECT_GE(report.coordinates, 64u);
  EXPECT_LE(report.max_rel_error, tol::kGradRel) << report.worst_path;
}

TEST(GaspLoss, MaskedGoalGradientCheck) {
  const WorldBank bank(small_set(1));
  std::vector<GaspExample> batch{example_for(bank, 0, 3, 8)};
  GaspArch arch = tiny_arch();
  arch.mask_goal = true;
  nn::ParamSet<double> ps;
  const GaspNet net = initialised(ps, arch, 9);
  const auto report = nn::finite_diff_check(
      ps,
      [&](nn::ParamSet<double>& p) {
        auto copy = p;
        return gasp_loss<double>(net, copy, batch);
      },
      [&](nn::ParamSet<double>& p) { gasp_loss<double>(net, p, batch); });
  EXPECT_LE(report.max_rel_error, tol::kGradRel) << report.worst_path;
  EXPECT_TRUE((ps.grad(net.goal_proj.weight).array() == 0.0).all());
}

TEST(GaspLoss, BcAndRpgGradientChecks) {
  const WorldBank bank(small_set(1));
  Rng rng(10);
  const AglTask task = sample_task(bank.spec(0), 5, 10, rng);
  const Trajectory opt = gen_optimal_trajectory(task, rng);
  const Embedding& goal = bank.goal(0, task.goal, GoalModality::Ground);
  std::vector<BcExample> bc{make_bc_example(opt, bank.table(0), goal)};
  const GradientTable cats = enumerate_gradient_categories(bank.set().grid);
  std::vector<RpgExample> rpg{make_rpg_example(opt, bank.table(0), goal, cats, 0.5, rng)};
  rpg[0].masked[1] = rpg[0].masked[2] = true;

  nn::ParamSet<double> ps_bc;
  const GaspNet net_bc = initialised(ps_bc, tiny_arch(), 11);
  const auto r_bc = nn::finite_diff_check(
      ps_bc,
      [&](nn::ParamSet<double>& p) {
        auto copy = p;
        return bc_loss<double>(net_bc, copy, bc);
      },
      [&](nn::ParamSet<double>& p) { bc_loss<double>(net_bc, p, bc); });
  EXPECT_LE(r_bc.max_rel_error, tol::kGradRel) << r_bc.worst_path;

  GaspArch arch = tiny_arch();
  arch.gradient_categories = cats.size();
  nn::ParamSet<double> ps_rpg;
  const GaspNet net_rpg = initialised(ps_rpg, arch, 12);
  const auto r_rpg = nn::finite_diff_check(
      ps_rpg,
      [&](nn::ParamSet<double>& p) {
        auto copy = p;
        return rpg_loss<double>(net_rpg, copy, rpg);
      },
      [&](nn::ParamSet<double>& p) { rpg_loss<double>(net_rpg, p, rpg); }, {.sample = 256});
  EXPECT_LE(r_rpg.max_rel_error, tol::kGradRel) << r_rpg.worst_path;
}

TEST(GaspRpg, NothingMaskedGivesZeroLoss) {
  const WorldBank bank(small_set(1));
  Rng rng(13);
  const AglTask task = sample_task(bank.spec(0), 6, 10, rng);
  const Trajectory opt = gen_optimal_trajectory(task, rng);
  const GradientTable cats = enumerate_gradient_categories(bank.set().grid);
  std::vector<RpgExample> rpg{
      make_rpg_example(opt, bank.table(0), bank.goal(0, task.goal, GoalModality::Text), cats, 0.0, rng)};
  GaspArch arch = tiny_arch();
  arch.gradient_categories = cats.size();
  nn::ParamSet<float> ps;
  const GaspNet net = initialised(ps, arch, 14);
  EXPECT_EQ(rpg_loss<float>(net, ps, rpg), 0.0f);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_TRUE((ps[i].grad.array() == 0.0f).all());
}

TEST(GaspRpg, CategoriesMatchReducedDirection) {
  const WorldBank bank(small_set(1));
  Rng rng(15);
  const GradientTable cats = enumerate_gradient_categories(bank.set().grid);
  for (int n = 0; n < 50; ++n) {
    const AglTask task = sample_task(bank.spec(0), 1 + n % 8, 10, rng);
    const Trajectory opt = gen_optimal_trajectory(task, rng);
    const auto e = make_rpg_example(opt, bank.table(0), bank.goal(0, task.goal, GoalModality::Aerial), cats, 0.3, rng);
    ASSERT_EQ(e.obs_categories.size(), opt.cells.size());
    EXPECT_FALSE(e.masked[0]);
    for (std::size_t i = 0; i < opt.cells.size(); ++i) {
      const int dy = task.goal.row - opt.cells[i].row, dx = task.goal.col - opt.cells[i].col;
      const int g = std::gcd(std::abs(dy), std::abs(dx));
      const int id = cats.id_of(g == 0 ? 0 : dy / g, g == 0 ? 0 : dx / g);
      EXPECT_EQ(e.obs_categories[i], id);
    }
  }
}

TEST(GaspBc, ExampleDropsGoalObservation) {
  const WorldBank bank(small_set(1));
  Rng rng(16);
  const AglTask task = sample_task(bank.spec(0), 3, 10, rng);
  const Trajectory opt = gen_optimal_trajectory(task, rng);
  const auto e = make_bc_example(opt, bank.table(0), bank.goal(0, task.goal, GoalModality::Aerial));
  EXPECT_EQ(e.tokens.steps(), 3);
  EXPECT_EQ(e.actions.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(e.actions[i], index_of(opt.actions[i]));
    EXPECT_TRUE(optimal_actions(opt.cells[i], task.goal, task.world.grid)[e.actions[i]]);
  }
}

TEST(GaspNetwork, LogitsAreCausal) {
  const WorldBank bank(small_set(1));
  const auto e = example_for(bank, 0, 6, 17);
  GaspModel model(tiny_arch());
  Rng rng(18);
  model.net.init(model.params, rng);
  const auto base = gasp_logits(model, std::span(&e.tokens, 1));
  TokenSequence changed = e.tokens;
  changed.obs.row(4).setRandom();
  changed.actions[4] = (changed.actions[4] + 1) % kNumActions;
  const auto after = gasp_logits(model, std::span(&changed, 1));
  EXPECT_TRUE(base.topRows(4).isApprox(after.topRows(4), 1e-6f));
  EXPECT_FALSE(base.row(4).isApprox(after.row(4), 1e-3f));
}

TEST(GaspNetwork, BatchedEqualsSingle) {
  const WorldBank bank(small_set(2));
  std::vector<TokenSequence> seqs{example_for(bank, 0, 3, 19).tokens, example_for(bank, 1, 7, 20).tokens};
  GaspModel model(tiny_arch());
  Rng rng(21);
  model.net.init(model.params, rng);
  const auto both = gasp_logits(model, seqs);
  const auto a = gasp_logits(model, std::span(&seqs[0], 1));
  const auto b = gasp_logits(model, std::span(&seqs[1], 1));
  EXPECT_TRUE(both.topRows(4).isApprox(a, 1e-6f));
  EXPECT_TRUE(both.bottomRows(8).isApprox(b, 1e-6f));
}

TEST(GaspNetwork, SessionMatchesFullForward) {
  const WorldBank bank(small_set(1));
  Rng rng(22);
  const AglTask task = sample_task(bank.spec(0), 5, 10, rng);
  const Trajectory t = gen_random_trajectory(task, 6, rng);
  const Embedding& goal = bank.goal(0, task.goal, GoalModality::Aerial);
  const TokenSequence seq = encode_tokens(t, bank.table(0), goal);
  for (bool mask_goal : {false, true}) {
    GaspArch arch;
    arch.mask_goal = mask_goal;
    GaspModel model(arch);
    Rng init(23);
    model.net.init(model.params, init);
    GaspSession<float> session(model.net, model.params, goal);
    for (int i = 0; i < seq.steps(); ++i) {
      const auto e = session.observe(observation_feature(bank.table(0), t.cells[static_cast<std::size_t>(i)]));
      EXPECT_TRUE(e.isApprox(latent(model, seq, i), 1e-4f)) << "step " << i;
      if (i + 1 < seq.steps()) session.act(t.actions[static_cast<std::size_t>(i)]);
    }
    EXPECT_THROW(session.observe(seq.obs.row(0).transpose()), ContractViolation);
  }
}

TEST(GaspNetwork, RejectsMalformedSequences) {
  GaspModel model(tiny_arch());
  TokenSequence bad;
  bad.goal = nn::Matrix<float>::Zero(1, 16);
  bad.obs = nn::Matrix<float>::Zero(2, 16 + kPositionEncodingDim);
  EXPECT_THROW(gasp_logits(model, std::span(&bad, 1)), ContractViolation);
}

TEST(GaspModelIo, SaveLoadRoundTrip) {
  GaspArch arch = tiny_arch();
  arch.gradient_categories = 49;
  GaspModel model(arch);
  Rng rng(24);
  model.net.init(model.params, rng);
  const auto dir = std::filesystem::temp_directory_path() / "agl_test_gasp_io";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "gasp.aglw").string();
  save_gasp_model(path, model);
  const GaspModel loaded = load_gasp_model(path);
  EXPECT_EQ(loaded.net.arch, arch);
  EXPECT_TRUE(loaded.params.values_equal(model.params));
  EXPECT_THROW(load_gasp_model((dir / "missing.aglw").string()), MissingArtifact);
  EXPECT_THROW(gasp_arch_from_json(nlohmann::json{{"model_dims", 3}}), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(GaspData, RecordsAreDeterministicAndLabeledByOracle) {
  GaspDatasetSpec spec;
  spec.worlds = small_set(3);
  spec.trajectories_per_world = 4;
  spec.seed = 25;
  for (int w = 0; w < 3; ++w)
    for (int k = 0; k < 4; ++k) {
      const auto a = gasp_record(spec, w, k), b = gasp_record(spec, w, k);
      EXPECT_EQ(a.trajectory.cells, b.trajectory.cells);
      EXPECT_EQ(a.modality, b.modality);
      EXPECT_EQ(a.trajectory.length(), spec.sequence_length);
      EXPECT_NE(a.trajectory.task.start, a.trajectory.task.goal);
      for (std::size_t i = 0; i < a.labels.size(); ++i) {
        const Cell c = a.trajectory.cells[i];
        EXPECT_EQ(a.labels[i].at_goal, c == a.trajectory.task.goal);
        if (!a.labels[i].at_goal)
          EXPECT_EQ(a.labels[i].mask.bits, optimal_actions(c, a.trajectory.task.goal, a.trajectory.task.world.grid).bits);
      }
    }
}

TEST(GaspData, DatasetFileRoundTrips) {
  GaspDatasetSpec spec;
  spec.worlds = small_set(2);
  spec.trajectories_per_world = 3;
  const auto path = (std::filesystem::temp_directory_path() / "agl_test_gasp.jsonl").string();
  write_gasp_dataset(path, spec);
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto [traj, labels] = trajectory_from_json(nlohmann::json::parse(line));
    const auto rec = gasp_record(spec, n / 3, n % 3);
    EXPECT_EQ(traj.cells, rec.trajectory.cells);
    EXPECT_EQ(labels.size(), rec.labels.size());
    ++n;
  }
  EXPECT_EQ(n, 6);
  std::filesystem::remove(path);
}

TEST(GaspTraining, ZeroStepsEqualsInit) {
  GaspDatasetSpec data;
  data.worlds = small_set(4);
  const WorldBank train(data.worlds), hold(small_set(2, "holdout"));
  GaspTrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.steps = 0;
  cfg.seed = 26;
  const auto result = train_gasp(data, train, hold, cfg);
  GaspModel fresh(cfg.arch);
  Rng rng(mix_seed(26, "gasp-init"));
  fresh.net.init(fresh.params, rng);
  EXPECT_TRUE(result.model.params.values_equal(fresh.params));
  EXPECT_TRUE(result.log.empty());
}

TEST(GaspTraining, ShortRunLearnsAndIsDeterministic) {
  GaspDatasetSpec data;
  data.worlds = small_set(20);
  data.trajectories_per_world = 16;
  const WorldBank train(data.worlds), hold(small_set(5, "holdout"));
  GaspTrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.arch.model_dim = 16;
  cfg.steps = 200;
  cfg.log_every = 50;
  cfg.eval_every = 100;
  cfg.holdout_sequences = 32;
  cfg.seed = 27;
  const auto a = train_gasp(data, train, hold, cfg);
  const auto b = train_gasp(data, train, hold, cfg);
  EXPECT_EQ(checkpoint_hash(a.model.params), checkpoint_hash(b.model.params));
  ASSERT_EQ(a.log.size(), 4u);
  EXPECT_LT(a.log.back().loss, a.log.front().loss);
  EXPECT_TRUE(a.log[1].holdout_acc.has_value());
  EXPECT_FALSE(a.log[0].holdout_acc.has_value());
}

TEST(GaspTraining, BcAndRpgObjectivesRun) {
  GaspDatasetSpec data;
  data.worlds = small_set(4);
  const WorldBank train(data.worlds), hold(small_set(2, "holdout"));
  GaspTrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.steps = 5;
  cfg.holdout_sequences = 8;
  cfg.objective = GaspObjective::Rpg;
  const auto rpg = train_gasp(data, train, hold, cfg);
  EXPECT_EQ(rpg.model.net.arch.gradient_categories, 49);
  cfg.objective = parse_gasp_objective("bc");
  const auto bc = train_gasp(data, train, hold, cfg);
  EXPECT_EQ(bc.model.net.arch.gradient_categories, 0);
  EXPECT_THROW(parse_gasp_objective("nope"), ConfigError);
}
