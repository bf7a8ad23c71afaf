#include "agl/agents.hpp"

#include <filesystem>

#include "agl/error.hpp"

namespace agl {

namespace {

int pick(const Eigen::VectorXf& probs, PolicyMode mode, Rng& rng) {
  return choose_action(nn::Vector<float>(probs), mode, rng);
}

class RandomPolicy final : public Policy {
 public:
  Action act(Cell, const ActionMask& valid, Rng& rng) override {
    const auto actions = valid.actions();
    if (actions.empty()) throw ContractViolation("random policy: no valid action");
    return actions[uniform_index(rng, actions.size())];
  }
};

class RandomAgent final : public Agent {
 public:
  std::string name() const override { return "random"; }
  std::unique_ptr<Policy> begin(const EpisodeContext&) const override { return std::make_unique<RandomPolicy>(); }
};

class OraclePolicy final : public Policy {
 public:
  OraclePolicy(const AglTask& task, PolicyMode mode) : task_(task), mode_(mode) {}
  Action act(Cell current, const ActionMask& valid, Rng& rng) override {
    const auto best = optimal_actions(current, task_.goal, task_.world.grid).actions();
    if (best.empty()) return valid.actions().front();
    return mode_ == PolicyMode::Argmax ? best.front() : best[uniform_index(rng, best.size())];
  }

 private:
  AglTask task_;
  PolicyMode mode_;
};

class OracleAgent final : public Agent {
 public:
  std::string name() const override { return "oracle"; }
  std::unique_ptr<Policy> begin(const EpisodeContext& ctx) const override {
    return std::make_unique<OraclePolicy>(ctx.task, ctx.mode);
  }
};

class PlannerPolicy final : public Policy {
 public:
  PlannerPolicy(std::unique_ptr<FeatureStream> stream, const PlannerModel& planner, PolicyMode mode)
      : stream_(std::move(stream)), planner_(&planner), mode_(mode) {}

  Action act(Cell current, const ActionMask& valid, Rng& rng) override {
    if (previous_) stream_->act(*previous_);
    const nn::RowVector<float> f = stream_->observe(current).transpose();
    const int a = choose_action(policy_dist(planner_->net, planner_->params, f, valid), mode_, rng);
    previous_ = action_at(a);
    return *previous_;
  }

 private:
  std::unique_ptr<FeatureStream> stream_;
  const PlannerModel* planner_;
  PolicyMode mode_;
  std::optional<Action> previous_;
};

class PlannerAgent final : public Agent {
 public:
  PlannerAgent(std::string name, std::shared_ptr<const FeatureEncoder> encoder,
               std::shared_ptr<const PlannerModel> planner)
      : name_(std::move(name)), encoder_(std::move(encoder)), planner_(std::move(planner)) {
    if (!encoder_ || !planner_) throw ContractViolation("planner agent: null component");
    if (planner_->net.arch.input_dim != encoder_->dim())
      throw ConfigError("planner agent '" + name_ + "': planner input dimension " +
                        std::to_string(planner_->net.arch.input_dim) + " does not match encoder dimension " +
                        std::to_string(encoder_->dim()));
  }
  std::string name() const override { return name_; }
  std::unique_ptr<Policy> begin(const EpisodeContext& ctx) const override {
    return std::make_unique<PlannerPolicy>(encoder_->start(ctx.table, ctx.goal), *planner_, ctx.mode);
  }

 private:
  std::string name_;
  std::shared_ptr<const FeatureEncoder> encoder_;
  std::shared_ptr<const PlannerModel> planner_;
};

class HeadPolicy final : public Policy {
 public:
  HeadPolicy(const GaspModel& model, const EpisodeContext& ctx, HeadKind kind)
      : table_(&ctx.table), session_(model.net, model.params, ctx.goal), kind_(kind), mode_(ctx.mode) {}

  Action act(Cell current, const ActionMask& valid, Rng& rng) override {
    if (previous_) session_.act(*previous_);
    const auto latent = session_.observe(observation_feature(*table_, current));
    const Eigen::VectorXf logits = session_.action_logits(latent).transpose();
    Eigen::VectorXf probs;
    if (kind_ == HeadKind::Softmax) {
      probs = nn::softmax<float>(logits, valid.bits);
    } else {
      probs = Eigen::VectorXf::Zero(kNumActions);
      for (int a = 0; a < kNumActions; ++a)
        if (valid[a]) probs[a] = nn::sigmoid(logits[a]);
      if (!(probs.sum() > 0)) throw ContractViolation("head policy: no valid action");
      probs /= probs.sum();
    }
    previous_ = action_at(pick(probs, mode_, rng));
    return *previous_;
  }

 private:
  const EmbeddingTable* table_;
  GaspSession<float> session_;
  HeadKind kind_;
  PolicyMode mode_;
  std::optional<Action> previous_;
};

class HeadAgent final : public Agent {
 public:
  HeadAgent(std::string name, std::shared_ptr<const GaspModel> model, HeadKind kind)
      : name_(std::move(name)), model_(std::move(model)), kind_(kind) {
    if (!model_) throw ContractViolation("head agent: null model");
  }
  std::string name() const override { return name_; }
  std::unique_ptr<Policy> begin(const EpisodeContext& ctx) const override {
    return std::make_unique<HeadPolicy>(*model_, ctx, kind_);
  }

 private:
  std::string name_;
  std::shared_ptr<const GaspModel> model_;
  HeadKind kind_;
};

}  // namespace

std::unique_ptr<Agent> random_agent() { return std::make_unique<RandomAgent>(); }

std::unique_ptr<Agent> oracle_agent() { return std::make_unique<OracleAgent>(); }

std::unique_ptr<Agent> planner_agent(std::string name, std::shared_ptr<const FeatureEncoder> encoder,
                                     std::shared_ptr<const PlannerModel> planner) {
  return std::make_unique<PlannerAgent>(std::move(name), std::move(encoder), std::move(planner));
}

std::unique_ptr<Agent> head_agent(std::string name, std::shared_ptr<const GaspModel> model, HeadKind kind) {
  return std::make_unique<HeadAgent>(std::move(name), std::move(model), kind);
}

const std::vector<AgentRecipe>& agent_recipes() {
  static const std::vector<AgentRecipe> recipes{
      {"random", "", "", HeadKind::Sigmoid},
      {"ppo-memoryless", "", "planner_memoryless.aglw", HeadKind::Sigmoid},
      {"bc", "bc.aglw", "", HeadKind::Softmax},
      {"gomaa", "gasp.aglw", "planner_gomaa.aglw", HeadKind::Sigmoid},
      {"gomaa-mask", "gasp_mask.aglw", "planner_gomaa_mask.aglw", HeadKind::Sigmoid},
      {"llm-geo", "gasp.aglw", "", HeadKind::Sigmoid},
      {"gomaa-sparse", "gasp.aglw", "planner_gomaa_sparse.aglw", HeadKind::Sigmoid},
      {"gomaa-rpg", "gasp_rpg.aglw", "planner_gomaa_rpg.aglw", HeadKind::Sigmoid},
  };
  return recipes;
}

const AgentRecipe& agent_recipe(const std::string& name) {
  for (const auto& r : agent_recipes())
    if (r.name == name) return r;
  throw ConfigError("unknown agent '" + name + "'");
}

std::unique_ptr<Agent> make_agent(const std::string& name, const std::string& dir) {
  const AgentRecipe& recipe = agent_recipe(name);
  if (name == "random") return random_agent();
  const auto path = [&](const std::string& file) {
    const std::string p = (std::filesystem::path(dir) / file).string();
    if (!std::filesystem::exists(p)) throw MissingArtifact(p);
    return p;
  };
  std::shared_ptr<const GaspModel> model;
  if (!recipe.sequence_model.empty())
    model = std::make_shared<const GaspModel>(load_gasp_model(path(recipe.sequence_model)));
  if (recipe.planner.empty()) return head_agent(name, model, recipe.head);
  auto planner = std::make_shared<const PlannerModel>(load_planner_model(path(recipe.planner)));
  std::shared_ptr<const FeatureEncoder> encoder;
  if (planner->net.arch.encoder == "memoryless") {
    encoder = std::make_shared<MemorylessEncoder>(planner->net.arch.input_dim / 2);
  } else if (planner->net.arch.encoder == "gasp" && model) {
    encoder = std::make_shared<GaspEncoder>(model);
  } else {
    throw ConfigError("agent '" + name + "': planner expects encoder '" + planner->net.arch.encoder + "'");
  }
  return planner_agent(name, encoder, planner);
}

}  // namespace agl
