#include "agl/run_config.hpp"

#include <fstream>

#include "agl/error.hpp"
#include "agl/json_util.hpp"

namespace agl {

using nlohmann::json;

namespace {

void reject_seed(const json& j, const std::string& section) {
  if (j.is_object() && j.contains("seed"))
    throw ConfigError("key '" + section + ".seed' is not allowed: module seeds derive from the top-level seed");
}

json without_seed(json j) {
  j.erase("seed");
  return j;
}

WorldSet worlds_from(const json& j, const std::string& section, WorldSet fallback) {
  reject_seed(j, section);
  json merged = without_seed(to_json(fallback));
  for (const auto& [k, v] : j.items()) merged[k] = v;
  try {
    return world_set_from_json(merged);
  } catch (const ConfigError& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

json align_to_json(const AlignRunConfig& a) {
  return {{"temperature", a.train.temperature}, {"batch_size", a.train.batch_size},
          {"steps", a.train.steps},             {"lr", a.train.lr},
          {"encoder_sizes", a.train.encoder_sizes}, {"train_pairs", a.train_pairs},
          {"holdout_pairs", a.holdout_pairs},   {"noise", a.noise}};
}

AlignRunConfig align_from_json(const json& j) {
  reject_seed(j, "align");
  reject_unknown_keys(j, {"temperature", "batch_size", "steps", "lr", "encoder_sizes", "train_pairs", "holdout_pairs", "noise"},
                      "align");
  AlignRunConfig a = parse_section("align", [&] {
    AlignRunConfig r;
    r.train.temperature = j.value("temperature", r.train.temperature);
    r.train.batch_size = j.value("batch_size", r.train.batch_size);
    r.train.steps = j.value("steps", r.train.steps);
    r.train.lr = j.value("lr", r.train.lr);
    r.train.encoder_sizes = j.value("encoder_sizes", r.train.encoder_sizes);
    r.train_pairs = j.value("train_pairs", r.train_pairs);
    r.holdout_pairs = j.value("holdout_pairs", r.holdout_pairs);
    r.noise = j.value("noise", r.noise);
    return r;
  });
  if (!(a.train.temperature > 0)) throw ConfigError("align.temperature must be positive");
  if (a.train.encoder_sizes.size() < 2 || a.train.encoder_sizes.front() != a.train.encoder_sizes.back())
    throw ConfigError("align.encoder_sizes must have at least two entries and equal input and output sizes");
  if (a.train_pairs < a.train.batch_size || a.train.batch_size < 2 || a.holdout_pairs < 2 || a.train.steps < 0)
    throw ConfigError("align: need train_pairs >= batch_size >= 2, holdout_pairs >= 2 and steps >= 0");
  return a;
}

json gasp_to_json(const GaspRunConfig& g) {
  const GaspTrainConfig& t = g.train;
  return {{"trajectories_per_world", g.trajectories_per_world},
          {"sequence_length", g.sequence_length},
          {"arch", to_json(t.arch)},
          {"steps", t.steps},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"rpg_mask_prob", t.rpg_mask_prob},
          {"bc_distances", t.bc_distances},
          {"log_every", t.log_every},
          {"eval_every", t.eval_every},
          {"holdout_sequences", t.holdout_sequences},
          {"bc_steps", g.bc_steps},
          {"rpg_steps", g.rpg_steps}};
}

GaspRunConfig gasp_from_json(const json& j) {
  reject_seed(j, "gasp");
  reject_unknown_keys(j,
                      {"trajectories_per_world", "sequence_length", "arch", "steps", "batch_size", "lr", "rpg_mask_prob",
                       "bc_distances", "log_every", "eval_every", "holdout_sequences", "bc_steps", "rpg_steps"},
                      "gasp");
  GaspRunConfig g = parse_section("gasp", [&] {
    GaspRunConfig r;
    GaspTrainConfig& t = r.train;
    r.trajectories_per_world = j.value("trajectories_per_world", r.trajectories_per_world);
    r.sequence_length = j.value("sequence_length", r.sequence_length);
    if (j.contains("arch")) t.arch = gasp_arch_from_json(j.at("arch"));
    t.steps = j.value("steps", t.steps);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.lr = j.value("lr", t.lr);
    t.rpg_mask_prob = j.value("rpg_mask_prob", t.rpg_mask_prob);
    t.bc_distances = j.value("bc_distances", t.bc_distances);
    t.log_every = j.value("log_every", t.log_every);
    t.eval_every = j.value("eval_every", t.eval_every);
    t.holdout_sequences = j.value("holdout_sequences", t.holdout_sequences);
    r.bc_steps = j.value("bc_steps", r.bc_steps);
    r.rpg_steps = j.value("rpg_steps", r.rpg_steps);
    return r;
  });
  if (g.trajectories_per_world < 1 || g.sequence_length < 1 || g.train.steps < 0 || g.bc_steps < 0 ||
      g.rpg_steps < 0 || g.train.batch_size < 1 || !(g.train.lr > 0) || g.train.holdout_sequences < 1)
    throw ConfigError("gasp: counts must be positive and lr > 0");
  if (!(g.train.rpg_mask_prob >= 0 && g.train.rpg_mask_prob <= 1)) throw ConfigError("gasp.rpg_mask_prob must lie in [0, 1]");
  if (g.train.arch.mask_goal || g.train.arch.gradient_categories != 0)
    throw ConfigError("gasp.arch: mask_goal and gradient_categories are set by the command, not the config");
  return g;
}

}  // namespace

GaspDatasetSpec RunConfig::gasp_data() const {
  GaspDatasetSpec s;
  s.worlds = train_worlds;
  s.trajectories_per_world = gasp.trajectories_per_world;
  s.sequence_length = gasp.sequence_length;
  s.seed = mix_seed(seed, "gasp-data");
  return s;
}

GaspTrainConfig RunConfig::gasp_train(GaspObjective objective, bool mask_goal) const {
  GaspTrainConfig t = gasp.train;
  t.objective = objective;
  t.arch.mask_goal = mask_goal;
  t.steps = objective == GaspObjective::BehaviorCloning ? gasp.bc_steps
            : objective == GaspObjective::Rpg           ? gasp.rpg_steps
                                                        : gasp.train.steps;
  t.seed = mix_seed(seed, "gasp-train");
  return t;
}

AlignConfig RunConfig::align_train() const {
  AlignConfig a = align.train;
  a.seed = mix_seed(seed, "align-train");
  return a;
}

std::uint64_t RunConfig::align_data_seed() const { return mix_seed(seed, "align-data"); }

void apply_seed(RunConfig& cfg) {
  const std::uint64_t worlds = mix_seed(cfg.seed, "worlds");
  cfg.train_worlds.seed = worlds;
  cfg.holdout_worlds.seed = worlds;
  cfg.eval.worlds.seed = worlds;
  cfg.align.train.seed = mix_seed(cfg.seed, "align-train");
  cfg.gasp.train.seed = mix_seed(cfg.seed, "gasp-train");
  cfg.ppo.seed = mix_seed(cfg.seed, "ppo");
  cfg.eval.seed = mix_seed(cfg.seed, "eval");
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown_keys(j, {"world", "align", "gasp", "ppo", "eval", "paths", "seed"}, "run config");
  RunConfig cfg;
  cfg.seed = parse_section("seed", [&] { return j.value("seed", cfg.seed); });
  if (j.contains("world")) {
    const json& w = j.at("world");
    reject_unknown_keys(w, {"train", "holdout"}, "world");
    if (w.contains("train")) cfg.train_worlds = worlds_from(w.at("train"), "world.train", cfg.train_worlds);
    if (w.contains("holdout")) cfg.holdout_worlds = worlds_from(w.at("holdout"), "world.holdout", cfg.holdout_worlds);
  }
  if (j.contains("align")) cfg.align = align_from_json(j.at("align"));
  if (j.contains("gasp")) cfg.gasp = gasp_from_json(j.at("gasp"));
  if (j.contains("ppo")) {
    reject_seed(j.at("ppo"), "ppo");
    json merged = to_json(cfg.ppo);
    for (const auto& [k, v] : j.at("ppo").items()) merged[k] = v;
    cfg.ppo = ppo_config_from_json(merged);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_seed(e, "eval");
    if (e.is_object() && e.contains("worlds")) reject_seed(e.at("worlds"), "eval.worlds");
    json merged = to_json(cfg.eval);
    for (const auto& [k, v] : e.items())
      if (k != "worlds") merged[k] = v;
    if (e.is_object() && e.contains("worlds"))
      merged["worlds"] = to_json(worlds_from(e.at("worlds"), "eval.worlds", cfg.eval.worlds));
    cfg.eval = eval_config_from_json(merged);
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    reject_unknown_keys(p, {"run_dir"}, "paths");
    cfg.run_dir = parse_section("paths", [&] { return p.value("run_dir", cfg.run_dir); });
  }
  const int shared_dim = cfg.train_worlds.embed_dim;
  if (cfg.holdout_worlds.embed_dim != shared_dim || cfg.eval.worlds.embed_dim != shared_dim)
    throw ConfigError("world.train, world.holdout and eval.worlds must share embed_dim");
  if (cfg.holdout_worlds.grid != cfg.train_worlds.grid)
    throw ConfigError("world.holdout must use the training grid");
  apply_seed(cfg);
  validate(cfg.eval);
  validate(cfg.ppo);
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json eval = without_seed(to_json(cfg.eval));
  eval["worlds"] = without_seed(eval["worlds"]);
  return {{"seed", cfg.seed},
          {"world", {{"train", without_seed(to_json(cfg.train_worlds))}, {"holdout", without_seed(to_json(cfg.holdout_worlds))}}},
          {"align", align_to_json(cfg.align)},
          {"gasp", gasp_to_json(cfg.gasp)},
          {"ppo", without_seed(to_json(cfg.ppo))},
          {"eval", eval},
          {"paths", {{"run_dir", cfg.run_dir}}}};
}

RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void write_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json(cfg).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace agl
