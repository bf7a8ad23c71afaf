#pragma once

#include <memory>
#include <string>
#include <vector>

#include "agl/gasp.hpp"
#include "agl/planner.hpp"

namespace agl {

struct EpisodeContext {
  const AglTask& task;
  const EmbeddingTable& table;
  const Embedding& goal;
  PolicyMode mode;
};

// Per-episode decision state. act() is called once per step with the current
// cell; the policy remembers its own previous choice.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action act(Cell current, const ActionMask& valid, Rng& rng) = 0;
};

// Immutable after construction; begin() may be called concurrently.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::string name() const = 0;
  virtual std::unique_ptr<Policy> begin(const EpisodeContext& ctx) const = 0;
};

// Uniform over the valid actions of the current cell, whatever the mode.
std::unique_ptr<Agent> random_agent();

// Shortest-path agent that reads the true goal cell (uniform tie-breaking, or
// the first optimal action in Argmax mode).
std::unique_ptr<Agent> oracle_agent();

// Actor over the features of `encoder` (GOMAA variants and memoryless PPO).
std::unique_ptr<Agent> planner_agent(std::string name, std::shared_ptr<const FeatureEncoder> encoder,
                                     std::shared_ptr<const PlannerModel> planner);

// Acts from the sequence model's own action head.
enum class HeadKind {
  Sigmoid,  // multi-label GASP head; probabilities proportional to sigmoid(logit) (LLM-Geo)
  Softmax,  // behaviour-cloning head; masked softmax
};
std::unique_ptr<Agent> head_agent(std::string name, std::shared_ptr<const GaspModel> model, HeadKind kind);

// ---------------------------------------------------------------------------
// Registry

// How each named agent is built from artifacts in a run directory.
struct AgentRecipe {
  std::string name;
  std::string sequence_model;  // checkpoint file name, empty if none
  std::string planner;         // planner checkpoint file name, empty if none
  HeadKind head = HeadKind::Sigmoid;
};

const std::vector<AgentRecipe>& agent_recipes();
const AgentRecipe& agent_recipe(const std::string& name);  // ConfigError if unknown

// Loads the artifacts of `name` from `dir`. MissingArtifact names the first absent file.
std::unique_ptr<Agent> make_agent(const std::string& name, const std::string& dir);

}  // namespace agl
