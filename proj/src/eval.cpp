#include "agl/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "agl/error.hpp"
#include "agl/json_util.hpp"

namespace agl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

json to_json(const EvalConfig& c) {
  return {{"worlds", to_json(c.worlds)},
          {"distances", c.distances},
          {"budget", c.budget},
          {"pairs_per_world", c.pairs_per_world},
          {"mode", to_string(c.mode)},
          {"reward", to_string(c.reward)},
          {"trials", c.trials},
          {"seed", c.seed},
          {"threads", c.threads}};
}

EvalConfig eval_config_from_json(const json& j) {
  reject_unknown_keys(j, {"worlds", "distances", "budget", "pairs_per_world", "mode", "reward", "trials", "seed", "threads"},
                      "eval section");
  EvalConfig c = parse_section("eval section", [&] {
    EvalConfig e;
    if (j.contains("worlds")) e.worlds = world_set_from_json(j.at("worlds"));
    e.distances = j.value("distances", e.distances);
    e.budget = j.value("budget", e.budget);
    e.pairs_per_world = j.value("pairs_per_world", e.pairs_per_world);
    e.mode = parse_policy_mode(j.value("mode", std::string(to_string(e.mode))));
    e.reward = parse_reward_kind(j.value("reward", std::string(to_string(e.reward))));
    e.trials = j.value("trials", e.trials);
    e.seed = j.value("seed", e.seed);
    e.threads = j.value("threads", e.threads);
    return e;
  });
  validate(c);
  return c;
}

void validate(const EvalConfig& c) {
  if (c.trials < 1) throw ConfigError("eval: trials must be >= 1");
  if (c.pairs_per_world < 1) throw ConfigError("eval: pairs_per_world must be >= 1");
  if (c.threads < 1) throw ConfigError("eval: threads must be >= 1");
  if (c.distances.empty()) throw ConfigError("eval: distances must not be empty");
  for (int d : c.distances)
    if (d < 1 || d > c.worlds.grid.max_distance() || d > c.budget)
      throw ConfigError("eval: distance " + std::to_string(d) + " infeasible on the grid or above the budget");
}

std::vector<SuiteTask> eval_suite(const WorldBank& worlds, const EvalConfig& cfg, int distance, int trial) {
  std::vector<SuiteTask> suite;
  suite.reserve(static_cast<std::size_t>(worlds.size() * cfg.pairs_per_world));
  for (int w = 0; w < worlds.size(); ++w)
    for (int k = 0; k < cfg.pairs_per_world; ++k) {
      Rng rng(mix_seed(cfg.seed, "eval-task",
                       {static_cast<std::uint64_t>(distance), static_cast<std::uint64_t>(trial),
                        static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(k)}));
      SuiteTask t;
      t.world = w;
      t.task = sample_task(worlds.spec(w), distance, cfg.budget, rng);
      t.modality = kAllModalities[uniform_index(rng, 3)];
      suite.push_back(std::move(t));
    }
  return suite;
}

std::uint64_t episode_seed(const EvalConfig& cfg, const std::string& agent, int distance, int trial, int index) {
  return mix_seed(cfg.seed, "eval-agent:" + agent,
                  {static_cast<std::uint64_t>(distance), static_cast<std::uint64_t>(trial),
                   static_cast<std::uint64_t>(index)});
}

// ---------------------------------------------------------------------------
// Episodes and traces

TraceRecord run_episode(const Agent& agent, const AglTask& task, const EmbeddingTable& table, const Embedding& goal,
                        PolicyMode mode, RewardKind reward, Rng& rng) {
  EpisodeState state = start_episode(task);
  auto policy = agent.begin(EpisodeContext{task, table, goal, mode});
  TraceRecord trace;
  trace.agent = agent.name();
  trace.task = task;
  trace.mode = mode;
  trace.reward = reward;
  trace.cells.push_back(state.current);
  while (!state.done) {
    const ActionMask valid = valid_actions(task.world.grid, state.current);
    const Action a = policy->act(state.current, valid, rng);
    if (!valid[a])
      throw ContractViolation("agent '" + agent.name() + "' chose invalid action '" + std::string(to_string(a)) + "'");
    const StepOutcome out = step_inplace(state, a, reward);
    trace.actions.push_back(a);
    trace.rewards.push_back(out.reward);
    trace.cells.push_back(out.next);
  }
  trace.success = state.success;
  return trace;
}

bool replay_matches(const TraceRecord& trace) {
  if (trace.cells.size() != trace.actions.size() + 1 || trace.rewards.size() != trace.actions.size()) return false;
  try {
    EpisodeState state = start_episode(trace.task);
    if (trace.cells.front() != state.current) return false;
    for (std::size_t i = 0; i < trace.actions.size(); ++i) {
      if (state.done) return false;
      const StepOutcome out = step_inplace(state, trace.actions[i], trace.reward);
      if (out.next != trace.cells[i + 1] || out.reward != trace.rewards[i]) return false;
    }
    return state.done && state.success == trace.success;
  } catch (const ContractViolation&) {
    return false;
  }
}

json to_json(const TraceRecord& t) {
  json path = json::array(), actions = json::array();
  for (Cell c : t.cells) path.push_back({c.row, c.col});
  for (Action a : t.actions) actions.push_back(to_string(a));
  return {{"agent", t.agent},
          {"grid", {{"rows", t.task.world.grid.rows}, {"cols", t.task.world.grid.cols}}},
          {"task", to_json(t.task)},
          {"start", {t.task.start.row, t.task.start.col}},
          {"goal", {t.task.goal.row, t.task.goal.col}},
          {"modality", to_string(t.modality)},
          {"mode", to_string(t.mode)},
          {"reward_kind", to_string(t.reward)},
          {"path", path},
          {"actions", actions},
          {"rewards", t.rewards},
          {"success", t.success}};
}

TraceRecord trace_from_json(const json& j) {
  return parse_section("trace", [&] {
    TraceRecord t;
    t.agent = j.at("agent").get<std::string>();
    t.task = task_from_json(j.at("task"));
    t.modality = parse_goal_modality(j.at("modality").get<std::string>());
    t.mode = parse_policy_mode(j.at("mode").get<std::string>());
    t.reward = parse_reward_kind(j.at("reward_kind").get<std::string>());
    for (const auto& c : j.at("path")) t.cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    for (const auto& a : j.at("actions")) t.actions.push_back(parse_action(a.get<std::string>()));
    t.rewards = j.at("rewards").get<std::vector<int>>();
    t.success = j.at("success").get<bool>();
    return t;
  });
}

void write_trace(const std::string& path, const TraceRecord& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json(trace).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

TraceRecord read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  try {
    return trace_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Success ratios

namespace {

// Runs f(i) for i in [0, n) on up to `threads` workers with contiguous chunks.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * n / workers; i < (w + 1) * n / workers; ++i) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double quantile(std::vector<double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<SrRow> success_ratio(const Agent& agent, const WorldBank& worlds, const EvalConfig& cfg) {
  validate(cfg);
  if (to_json(worlds.set()) != to_json(cfg.worlds))
    throw ContractViolation("success_ratio: world bank does not match the eval config");
  std::vector<SrRow> rows;
  const std::string name = agent.name();
  for (int c : cfg.distances)
    for (int trial = 0; trial < cfg.trials; ++trial) {
      const auto suite = eval_suite(worlds, cfg, c, trial);
      std::vector<char> success(suite.size(), 0);
      parallel_for(suite.size(), cfg.threads, [&](std::size_t i) {
        const SuiteTask& t = suite[i];
        Rng rng(episode_seed(cfg, name, c, trial, static_cast<int>(i)));
        const auto trace = run_episode(agent, t.task, worlds.table(t.world), worlds.goal(t.world, t.task.goal, t.modality),
                                       cfg.mode, cfg.reward, rng);
        success[i] = trace.success ? 1 : 0;
      });
      SrRow row{name, c, cfg.budget, trial, static_cast<int>(std::count(success.begin(), success.end(), 1)),
                static_cast<int>(suite.size())};
      rows.push_back(row);
    }
  return rows;
}

SrTable sweep(std::span<const Agent* const> agents, const WorldBank& worlds, const EvalConfig& cfg) {
  SrTable table;
  for (const Agent* a : agents) {
    auto rows = success_ratio(*a, worlds, cfg);
    table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  }
  return table;
}

std::map<std::string, std::map<int, SrStats>> SrTable::aggregates() const {
  std::map<std::string, std::map<int, std::vector<double>>> groups;
  for (const auto& r : rows) groups[r.agent][r.distance].push_back(r.sr());
  std::map<std::string, std::map<int, SrStats>> out;
  for (auto& [agent, by_c] : groups)
    for (auto& [c, values] : by_c) {
      std::sort(values.begin(), values.end());
      SrStats s;
      for (double v : values) s.mean += v;
      s.mean /= static_cast<double>(values.size());
      s.min = values.front();
      s.max = values.back();
      s.q1 = quantile(values, 0.25);
      s.median = quantile(values, 0.5);
      s.q3 = quantile(values, 0.75);
      out[agent][c] = s;
    }
  return out;
}

double SrTable::mean_sr(const std::string& agent, int distance) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.agent == agent && r.distance == distance) {
      sum += r.sr();
      ++n;
    }
  if (n == 0) throw ContractViolation("mean_sr: no rows for " + agent + " at C=" + std::to_string(distance));
  return sum / n;
}

void write_sr_csv(const std::string& path, const SrTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "agent,C,B,trial,successes,total,sr\n";
  char buf[64];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.sr());
    out << r.agent << ',' << r.distance << ',' << r.budget << ',' << r.trial << ',' << r.successes << ','
        << r.total << ',' << buf << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

SrTable read_sr_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  std::string line;
  if (!std::getline(in, line) || line != "agent,C,B,trial,successes,total,sr")
    throw ConfigError(path + ": unexpected CSV header");
  SrTable table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw ConfigError(path + ": expected 7 fields in '" + line + "'");
    try {
      SrRow r{f[0], std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]), std::stoi(f[5])};
      if (r.total < 0 || r.successes < 0 || r.successes > r.total || std::abs(std::stod(f[6]) - r.sr()) > 1e-6)
        throw ConfigError(path + ": inconsistent row '" + line + "'");
      table.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ConfigError(path + ": malformed row '" + line + "'");
    }
  }
  return table;
}

json aggregates_json(const SrTable& table) {
  json out = json::object();
  for (const auto& [agent, by_c] : table.aggregates())
    for (const auto& [c, s] : by_c)
      out[agent][std::to_string(c)] = {{"mean", s.mean},     {"min", s.min}, {"q1", s.q1},
                                       {"median", s.median}, {"q3", s.q3},   {"max", s.max}};
  return out;
}

void write_sr_json(const std::string& path, const SrTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << aggregates_json(table).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<std::string> check_sr_order(const SrTable& table, std::span<const std::string> order,
                                        std::span<const int> distances) {
  std::vector<std::string> violations;
  for (int c : distances)
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const double hi = table.mean_sr(order[i], c), lo = table.mean_sr(order[i + 1], c);
      if (hi < lo) {
        char buf[192];
        std::snprintf(buf, sizeof buf, "C=%d: %s %.4f < %s %.4f", c, order[i].c_str(), hi, order[i + 1].c_str(), lo);
        violations.emplace_back(buf);
      }
    }
  return violations;
}

}  // namespace agl
