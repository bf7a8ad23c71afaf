#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "agl/align.hpp"
#include "agl/eval.hpp"
#include "agl/gasp.hpp"
#include "agl/planner.hpp"

namespace agl {

struct AlignRunConfig {
  AlignConfig train = [] {
    AlignConfig a;
    a.steps = 5000;
    return a;
  }();
  int train_pairs = 2048;
  int holdout_pairs = 128;
  double noise = 0.1;
};

struct GaspRunConfig {
  int trajectories_per_world = 128;
  int sequence_length = 10;
  GaspTrainConfig train = [] {
    GaspTrainConfig t;
    t.steps = 12000;
    return t;
  }();
  int bc_steps = 4000;
  int rpg_steps = 12000;
};

// Every stage of a run. Module seeds are not configurable one by one: they are
// derived from `seed`, so a resolved config reproduces the run on its own.
struct RunConfig {
  static WorldSet worlds(int count, std::string tag) {
    WorldSet s;
    s.count = count;
    s.tag = std::move(tag);
    return s;
  }

  WorldSet train_worlds = worlds(500, "train");
  WorldSet holdout_worlds = worlds(100, "holdout");
  AlignRunConfig align;
  GaspRunConfig gasp;
  PpoConfig ppo = [] {
    PpoConfig p;
    p.epochs = 1000;
    return p;
  }();
  EvalConfig eval;
  std::string run_dir;  // empty: a timestamped directory under runs/
  std::uint64_t seed = 0;

  // Derived module configs.
  GaspDatasetSpec gasp_data() const;
  GaspTrainConfig gasp_train(GaspObjective objective, bool mask_goal) const;
  AlignConfig align_train() const;
  std::uint64_t align_data_seed() const;
};

// Rejects unknown keys and per-section seeds (ConfigError naming the key).
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

// Rewrites every module seed from cfg.seed.
void apply_seed(RunConfig& cfg);

RunConfig read_run_config(const std::string& path);
void write_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace agl
