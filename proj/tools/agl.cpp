#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "agl/agents.hpp"
#include "agl/checkpoint.hpp"
#include "agl/error.hpp"
#include "agl/eval.hpp"
#include "agl/grad_suite.hpp"
#include "agl/run_config.hpp"

namespace fs = std::filesystem;
using namespace agl;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kMissingArtifact = 2, kConfigError = 3, kNumericalError = 4 };

struct GlobalOptions {
  std::string config;
  std::string out;
  int threads = 0;
};

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  localtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// Loads and resolves the config, creates the run directory and writes the
// resolved config into it.
struct Run {
  RunConfig cfg;
  fs::path dir;

  explicit Run(const GlobalOptions& opt) {
    if (!opt.config.empty()) cfg = read_run_config(opt.config);
    if (const char* env = std::getenv("AGL_SEED")) {
      try {
        std::size_t used = 0;
        cfg.seed = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
      } catch (const std::logic_error&) {
        throw ConfigError(std::string("AGL_SEED must be an unsigned integer, got '") + env + "'");
      }
    }
    apply_seed(cfg);
    if (opt.threads > 0) cfg.eval.threads = opt.threads;
    if (!opt.out.empty()) cfg.run_dir = opt.out;
    if (cfg.run_dir.empty()) cfg.run_dir = (fs::path("runs") / timestamp()).string();
    dir = cfg.run_dir;
    fs::create_directories(dir);
    write_run_config((dir / "config.resolved.json").string(), cfg);
  }

  std::string path(const std::string& file) const { return (dir / file).string(); }
  std::string existing(const std::string& file) const {
    const std::string p = path(file);
    if (!fs::exists(p)) throw MissingArtifact(p);
    return p;
  }
};

void print_done(const std::string& what, const std::string& path) { std::printf("%s: %s\n", what.c_str(), path.c_str()); }

int cmd_gen_world(const GlobalOptions& opt) {
  const Run run(opt);
  nlohmann::json worlds = {{"train", to_json(run.cfg.train_worlds)},
                           {"holdout", to_json(run.cfg.holdout_worlds)},
                           {"eval", to_json(run.cfg.eval.worlds)}};
  std::ofstream(run.path("worlds.json"), std::ios::binary) << worlds.dump(2) << '\n';
  const WorldBank bank(run.cfg.eval.worlds);
  std::vector<AglTask> tasks;
  for (int c : run.cfg.eval.distances)
    for (int trial = 0; trial < run.cfg.eval.trials; ++trial)
      for (const auto& t : eval_suite(bank, run.cfg.eval, c, trial)) tasks.push_back(t.task);
  write_tasks_jsonl(run.path("eval_tasks.jsonl"), tasks);
  print_done("worlds", run.path("worlds.json"));
  print_done("eval tasks", run.path("eval_tasks.jsonl"));
  return kOk;
}

int cmd_gasp_data(const GlobalOptions& opt) {
  const Run run(opt);
  write_gasp_dataset(run.path("gasp_data.jsonl"), run.cfg.gasp_data());
  print_done("gasp dataset", run.path("gasp_data.jsonl"));
  return kOk;
}

int cmd_train_align(const GlobalOptions& opt) {
  const Run run(opt);
  const AlignConfig acfg = run.cfg.align_train();
  const Eigen::Index dim = acfg.encoder_sizes.front();
  const std::uint64_t data_seed = run.cfg.align_data_seed();
  const FrozenTarget target = make_frozen_target(dim, mix_seed(data_seed, "target"));
  const AlignData train = make_planted_rotation(run.cfg.align.train_pairs, dim, run.cfg.align.noise, data_seed,
                                                mix_seed(data_seed, "train"));
  const AlignData held = make_planted_rotation(run.cfg.align.holdout_pairs, dim, run.cfg.align.noise, data_seed,
                                               mix_seed(data_seed, "holdout"));
  const std::uint64_t before = checkpoint_hash(target.params);
  const AlignResult result = train_align(train, target, acfg);
  if (checkpoint_hash(target.params) != before) throw ContractViolation("train-align: frozen target changed");
  write_checkpoint(run.path("align.aglw"), result.params);
  std::ofstream log(run.path("align_log.csv"), std::ios::binary);
  log << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i + 1, result.losses[i]);
    log << buf;
  }
  std::printf("held-out top-1 (N=%d): %.4f\n", run.cfg.align.holdout_pairs, retrieval_top1(result, held, target));
  print_done("checkpoint", run.path("align.aglw"));
  return kOk;
}

int train_sequence_model(const GlobalOptions& opt, GaspObjective objective, bool mask_goal) {
  const Run run(opt);
  const std::string stem = objective == GaspObjective::BehaviorCloning ? "bc"
                           : objective == GaspObjective::Rpg           ? "gasp_rpg"
                           : mask_goal                                 ? "gasp_mask"
                                                                       : "gasp";
  const GaspDatasetSpec data = run.cfg.gasp_data();
  const WorldBank train(run.cfg.train_worlds), holdout(run.cfg.holdout_worlds);
  const GaspTrainResult result = train_gasp(data, train, holdout, run.cfg.gasp_train(objective, mask_goal));
  save_gasp_model(run.path(stem + ".aglw"), result.model);
  write_gasp_log_csv(run.path(stem + "_log.csv"), result.log);
  for (auto it = result.log.rbegin(); it != result.log.rend(); ++it)
    if (it->holdout_acc) {
      std::printf("final held-out accuracy: %.4f\n", *it->holdout_acc);
      break;
    }
  print_done("checkpoint", run.path(stem + ".aglw"));
  return kOk;
}

int cmd_train_ppo(const GlobalOptions& opt, const std::string& agent) {
  const Run run(opt);
  const AgentRecipe& recipe = agent_recipe(agent);
  if (recipe.planner.empty()) throw ConfigError("agent '" + agent + "' has no planner to train");
  std::unique_ptr<FeatureEncoder> encoder;
  if (recipe.sequence_model.empty()) {
    encoder = std::make_unique<MemorylessEncoder>(run.cfg.train_worlds.embed_dim);
  } else {
    encoder = std::make_unique<GaspEncoder>(
        std::make_shared<const GaspModel>(load_gasp_model(run.existing(recipe.sequence_model))));
  }
  PpoConfig pcfg = run.cfg.ppo;
  if (agent == "gomaa-sparse") pcfg.reward = RewardKind::Sparse;
  std::printf("training %s planner: %d epochs, %s reward\n", agent.c_str(), pcfg.epochs,
              std::string(to_string(pcfg.reward)).c_str());
  const WorldBank train(run.cfg.train_worlds);
  const PpoTrainResult result = train_ppo(*encoder, train, pcfg);
  save_planner_model(run.path(recipe.planner), result.model);
  const std::string log = "ppo_" + agent + "_log.csv";
  write_ppo_log_csv(run.path(log), result.log);
  print_done("checkpoint", run.path(recipe.planner));
  print_done("log", run.path(log));
  return kOk;
}

int cmd_eval(const GlobalOptions& opt, const std::vector<std::string>& names) {
  const Run run(opt);
  std::vector<std::unique_ptr<Agent>> agents;
  for (const auto& n : names) agents.push_back(make_agent(n, run.dir.string()));
  std::vector<const Agent*> ptrs;
  for (const auto& a : agents) ptrs.push_back(a.get());
  const WorldBank bank(run.cfg.eval.worlds);
  const SrTable table = sweep(ptrs, bank, run.cfg.eval);
  write_sr_csv(run.path("eval.csv"), table);
  write_sr_json(run.path("eval.json"), table);
  for (const auto& [agent, by_c] : table.aggregates()) {
    std::printf("%-15s", agent.c_str());
    for (const auto& [c, s] : by_c) std::printf("  C=%d %.4f", c, s.mean);
    std::printf("\n");
  }
  print_done("csv", run.path("eval.csv"));
  print_done("json", run.path("eval.json"));
  return kOk;
}

int cmd_trace(const GlobalOptions& opt, const std::string& name, int c, int trial, int index) {
  const Run run(opt);
  const auto agent = make_agent(name, run.dir.string());
  const WorldBank bank(run.cfg.eval.worlds);
  if (trial < 0 || trial >= run.cfg.eval.trials) throw ConfigError("--trial outside [0, eval.trials)");
  const auto suite = eval_suite(bank, run.cfg.eval, c, trial);
  if (index < 0 || index >= static_cast<int>(suite.size())) throw ConfigError("--index outside the eval suite");
  const SuiteTask& t = suite[static_cast<std::size_t>(index)];
  Rng rng(episode_seed(run.cfg.eval, agent->name(), c, trial, index));
  TraceRecord trace = run_episode(*agent, t.task, bank.table(t.world), bank.goal(t.world, t.task.goal, t.modality),
                                  run.cfg.eval.mode, run.cfg.eval.reward, rng);
  trace.modality = t.modality;
  char file[128];
  std::snprintf(file, sizeof file, "trace_%s_C%d_t%d_i%d.json", name.c_str(), c, trial, index);
  write_trace(run.path(file), trace);
  std::printf("%s after %zu steps\n", trace.success ? "reached goal" : "failed", trace.actions.size());
  print_done("trace", run.path(file));
  return kOk;
}

int cmd_grad_check(const std::vector<std::string>& ops) {
  bool all_ok = true;
  bool matched = false;
  for (const auto& e : run_grad_suite()) {
    if (!ops.empty() && std::find(ops.begin(), ops.end(), e.op) == ops.end()) continue;
    matched = true;
    all_ok = all_ok && e.passed();
    std::printf("%-24s max_rel_error=%.3e tol=%.0e coords=%zu %s\n", e.op.c_str(), e.max_rel_error, e.tolerance,
                e.coordinates, e.passed() ? "ok" : "FAIL");
  }
  if (!matched) throw ConfigError("grad-check: no op matches --op");
  return all_ok ? kOk : kFailure;
}

GridSpec parse_grid(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t a = 0, b = 0;
    GridSpec g{std::stoi(s.substr(0, x), &a), std::stoi(s.substr(x + 1), &b)};
    if (a != x || b != s.size() - x - 1 || g.rows < 1 || g.cols < 1) throw std::invalid_argument(s);
    return g;
  } catch (const std::logic_error&) {
    throw ConfigError("--grid must look like 5x5, got '" + s + "'");
  }
}

int cmd_sr_oracle(const std::string& grid_s, int c, int b, const std::string& convention, int mc, std::uint64_t seed) {
  const GridSpec grid = parse_grid(grid_s);
  const WalkConvention conv = parse_walk_convention(convention);
  if (c < 1 || c > grid.max_distance()) throw ConfigError("--C infeasible on this grid");
  if (b < 0) throw ConfigError("--B must be non-negative");
  std::printf("%.7f\n", random_policy_sr_exact(grid, c, b, conv));
  if (mc > 0) {
    const auto pairs = pairs_at_distance(grid, c);
    Rng rng(seed);
    int hits = 0;
    for (int i = 0; i < mc; ++i) {
      const auto& [s, g] = pairs[uniform_index(rng, pairs.size())];
      hits += simulate_random_walk(grid, s, g, b, conv, rng);
    }
    std::printf("monte carlo (%d episodes): %.7f\n", mc, static_cast<double>(hits) / mc);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active geo-localization toolkit: environment, GASP pretraining, PPO planning and evaluation"};
  app.require_subcommand(1);
  GlobalOptions opt;
  app.add_option("--config", opt.config, "Run config JSON; omitted sections keep their defaults")->check(CLI::ExistingFile);
  app.add_option("--out", opt.out, "Run directory for inputs and outputs (default: paths.run_dir, else runs/<timestamp>)");
  app.add_option("--threads", opt.threads, "Cap on worker threads (overrides eval.threads)")->check(CLI::PositiveNumber);
  app.footer("Environment: AGL_SEED overrides the config seed.\n"
             "Exit codes: 0 ok, 1 failed check, 2 missing artifact, 3 config error, 4 numerical failure.");

  auto* gen_world = app.add_subcommand("gen-world", "Write world sets and the eval task suite (worlds.json, eval_tasks.jsonl)");
  auto* gasp_data = app.add_subcommand("gasp-data", "Write the GASP pretraining dataset (gasp_data.jsonl)");
  auto* train_align_cmd = app.add_subcommand("train-align", "Train the InfoNCE aligner on planted-rotation pairs (align.aglw)");

  auto* train_gasp_cmd = app.add_subcommand("train-gasp", "Pretrain the sequence model (gasp.aglw, gasp_mask.aglw or bc.aglw)");
  std::string objective = "gasp";
  bool mask_goal = false;
  train_gasp_cmd->add_option("--objective", objective, "gasp (multi-label optimal actions) or bc (behaviour cloning)")
      ->check(CLI::IsMember({"gasp", "bc"}));
  train_gasp_cmd->add_flag("--mask-goal", mask_goal, "Replace the goal token by zeros (Mask-GOMAA encoder)");

  auto* train_rpg = app.add_subcommand("train-rpg", "Pretrain with masked gradient-category prediction (gasp_rpg.aglw)");

  auto* train_ppo_cmd = app.add_subcommand("train-ppo", "Train a PPO planner for an agent (planner_*.aglw)");
  std::string ppo_agent;
  train_ppo_cmd->add_option("--agent", ppo_agent, "gomaa, gomaa-mask, gomaa-sparse, gomaa-rpg or ppo-memoryless")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Success ratios over the eval suite (eval.csv, eval.json)");
  std::vector<std::string> eval_agents;
  eval_cmd->add_option("--agents", eval_agents, "Comma-separated agent names")->delimiter(',')->required();

  auto* trace_cmd = app.add_subcommand("trace", "Record one eval episode as JSON (trace_<agent>_C<c>_t<trial>_i<index>.json)");
  std::string trace_agent;
  int trace_c = 0, trace_trial = 0, trace_index = 0;
  trace_cmd->add_option("--agent", trace_agent, "Agent name")->required();
  trace_cmd->add_option("--C", trace_c, "Start-goal distance")->required();
  trace_cmd->add_option("--trial", trace_trial, "Eval trial (default 0)");
  trace_cmd->add_option("--index", trace_index, "Task index within the suite (default 0)");

  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of every differentiable op");
  bool grad_all = false;
  std::vector<std::string> grad_ops;
  auto* all_flag = grad_cmd->add_flag("--all", grad_all, "Run every check");
  grad_cmd->add_option("--op", grad_ops, "Run only the named checks (repeatable)")->excludes(all_flag);

  auto* oracle_cmd = app.add_subcommand("sr-oracle", "Exact success ratio of the random policy (dynamic programming)");
  std::string grid = "5x5", convention = "masked";
  int oracle_c = 0, oracle_b = 10, oracle_mc = 0;
  std::uint64_t oracle_seed = 0;
  oracle_cmd->add_option("--grid", grid, "Grid as ROWSxCOLS (default 5x5)");
  oracle_cmd->add_option("--C", oracle_c, "Start-goal distance")->required();
  oracle_cmd->add_option("--B", oracle_b, "Step budget (default 10)");
  oracle_cmd->add_option("--convention", convention, "masked (uniform over valid moves) or noop (off-grid draws waste the step)")
      ->check(CLI::IsMember({"masked", "noop"}));
  oracle_cmd->add_option("--mc", oracle_mc, "Also print a Monte Carlo estimate from this many episodes (default 0)");
  oracle_cmd->add_option("--mc-seed", oracle_seed, "Seed of the Monte Carlo estimate (default 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*gen_world) return cmd_gen_world(opt);
    if (*gasp_data) return cmd_gasp_data(opt);
    if (*train_align_cmd) return cmd_train_align(opt);
    if (*train_gasp_cmd)
      return train_sequence_model(opt, parse_gasp_objective(objective), mask_goal);
    if (*train_rpg) return train_sequence_model(opt, GaspObjective::Rpg, false);
    if (*train_ppo_cmd) return cmd_train_ppo(opt, ppo_agent);
    if (*eval_cmd) return cmd_eval(opt, eval_agents);
    if (*trace_cmd) return cmd_trace(opt, trace_agent, trace_c, trace_trial, trace_index);
    if (*grad_cmd) {
      if (!grad_all && grad_ops.empty()) throw ConfigError("grad-check: pass --all or --op");
      return cmd_grad_check(grad_ops);
    }
    if (*oracle_cmd) return cmd_sr_oracle(grid, oracle_c, oracle_b, convention, oracle_mc, oracle_seed);
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMissingArtifact;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
