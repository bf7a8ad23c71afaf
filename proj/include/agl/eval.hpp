#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "agl/agents.hpp"

namespace agl {

struct EvalConfig {
  WorldSet worlds{.grid = {5, 5}, .tag = "eval"};
  std::vector<int> distances{4, 5, 6, 7, 8};
  int budget = 10;
  int pairs_per_world = 25;
  PolicyMode mode = PolicyMode::Stochastic;
  RewardKind reward = RewardKind::Dense;  // only affects recorded rewards
  int trials = 3;
  std::uint64_t seed = 0;
  int threads = 1;
};

nlohmann::json to_json(const EvalConfig& cfg);
EvalConfig eval_config_from_json(const nlohmann::json& j);
void validate(const EvalConfig& cfg);

struct SuiteTask {
  int world = 0;
  GoalModality modality = GoalModality::Aerial;
  AglTask task;
};

// Tasks for one (C, trial): pairs_per_world per world, derived from
// (seed, C, trial, world, pair) only, so every agent and every budget >= C
// sees the same start/goal pairs.
std::vector<SuiteTask> eval_suite(const WorldBank& worlds, const EvalConfig& cfg, int distance, int trial);

// RNG stream of one episode; depends on the agent name, not on the budget.
std::uint64_t episode_seed(const EvalConfig& cfg, const std::string& agent, int distance, int trial, int index);

struct TraceRecord {
  std::string agent;
  AglTask task;
  GoalModality modality = GoalModality::Aerial;
  PolicyMode mode = PolicyMode::Stochastic;
  RewardKind reward = RewardKind::Dense;
  std::vector<Cell> cells;  // visited cells in order, starting with the start cell
  std::vector<Action> actions;
  std::vector<int> rewards;
  bool success = false;
};

// Throws ContractViolation if the agent returns an invalid action.
TraceRecord run_episode(const Agent& agent, const AglTask& task, const EmbeddingTable& table, const Embedding& goal,
                        PolicyMode mode, RewardKind reward, Rng& rng);

// Re-simulates the actions; true iff cells, rewards and success all match.
bool replay_matches(const TraceRecord& trace);

nlohmann::json to_json(const TraceRecord& trace);
TraceRecord trace_from_json(const nlohmann::json& j);
void write_trace(const std::string& path, const TraceRecord& trace);
TraceRecord read_trace(const std::string& path);

// ---------------------------------------------------------------------------
// Success ratios

struct SrRow {
  std::string agent;
  int distance = 0;
  int budget = 0;
  int trial = 0;
  int successes = 0;
  int total = 0;

  double sr() const noexcept { return total > 0 ? static_cast<double>(successes) / total : 0.0; }
  bool operator==(const SrRow&) const = default;
};

struct SrStats {
  double mean = 0, min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

struct SrTable {
  std::vector<SrRow> rows;

  // agent -> C -> statistics over trials (quartiles by linear interpolation)
  std::map<std::string, std::map<int, SrStats>> aggregates() const;
  double mean_sr(const std::string& agent, int distance) const;  // ContractViolation if absent
};

// One row per (C, trial). Episodes run on cfg.threads workers; results are
// reduced in task order.
std::vector<SrRow> success_ratio(const Agent& agent, const WorldBank& worlds, const EvalConfig& cfg);

SrTable sweep(std::span<const Agent* const> agents, const WorldBank& worlds, const EvalConfig& cfg);

void write_sr_csv(const std::string& path, const SrTable& table);
SrTable read_sr_csv(const std::string& path);
nlohmann::json aggregates_json(const SrTable& table);
void write_sr_json(const std::string& path, const SrTable& table);

// For each C, mean SR must be non-increasing along `order` (ties allowed).
// Returns one message per violated adjacent pair; empty when the order holds.
std::vector<std::string> check_sr_order(const SrTable& table, std::span<const std::string> order,
                                        std::span<const int> distances);

}  // namespace agl
