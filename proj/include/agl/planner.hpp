#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "agl/env.hpp"
#include "agl/gasp.hpp"
#include "agl/nn/attention.hpp"
#include "agl/worlds.hpp"

namespace agl {

enum class PolicyMode { Stochastic, Argmax };
std::string_view to_string(PolicyMode m) noexcept;
PolicyMode parse_policy_mode(std::string_view name);

// ---------------------------------------------------------------------------
// Planner inputs

// Per-episode feature stream: one feature per observation, fed the chosen
// action between observations.
class FeatureStream {
 public:
  virtual ~FeatureStream() = default;
  virtual Eigen::VectorXf observe(Cell cell) = 0;
  virtual void act(Action a) = 0;
};

class FeatureEncoder {
 public:
  virtual ~FeatureEncoder() = default;
  virtual std::string kind() const = 0;
  virtual int dim() const = 0;
  // `table` and `goal` must outlive the stream.
  virtual std::unique_ptr<FeatureStream> start(const EmbeddingTable& table, const Embedding& goal) const = 0;
  // Hash of any frozen parameters the encoder reads; 0 when there are none.
  virtual std::uint64_t frozen_hash() const { return 0; }
};

// Latent e_t of a frozen GASP model, computed incrementally.
class GaspEncoder final : public FeatureEncoder {
 public:
  explicit GaspEncoder(std::shared_ptr<const GaspModel> model);
  std::string kind() const override { return "gasp"; }
  int dim() const override { return model_->net.arch.model_dim; }
  std::unique_ptr<FeatureStream> start(const EmbeddingTable& table, const Embedding& goal) const override;
  std::uint64_t frozen_hash() const override;
  const GaspModel& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const GaspModel> model_;
};

// [current patch embedding ++ goal embedding]; no history, no position.
class MemorylessEncoder final : public FeatureEncoder {
 public:
  explicit MemorylessEncoder(int embed_dim) : embed_dim_(embed_dim) {}
  std::string kind() const override { return "memoryless"; }
  int dim() const override { return 2 * embed_dim_; }
  std::unique_ptr<FeatureStream> start(const EmbeddingTable& table, const Embedding& goal) const override;

 private:
  int embed_dim_;
};

// ---------------------------------------------------------------------------
// Actor and critic

struct PlannerArch {
  int input_dim = 64;
  int hidden = 64;
  int hidden_layers = 3;
  std::string encoder = "gasp";  // FeatureEncoder::kind() the planner was trained on

  bool operator==(const PlannerArch&) const = default;
};

nlohmann::json to_json(const PlannerArch& arch);
PlannerArch planner_arch_from_json(const nlohmann::json& j);

struct PlannerNet {
  PlannerArch arch;
  nn::Mlp actor;   // -> 4 logits
  nn::Mlp critic;  // -> scalar value

  template <typename Scalar>
  static PlannerNet create(nn::ParamSet<Scalar>& ps, const PlannerArch& arch);

  template <typename Scalar>
  void init(nn::ParamSet<Scalar>& ps, Rng& rng) const {
    actor.init(ps, rng);
    critic.init(ps, rng);
  }
};

struct PlannerModel {
  nn::ParamSet<float> params;  // declared first: the net registers into it
  PlannerNet net;

  explicit PlannerModel(const PlannerArch& arch = {});
};

void save_planner_model(const std::string& checkpoint_path, const PlannerModel& model);
PlannerModel load_planner_model(const std::string& checkpoint_path);

// Masked softmax over the actor logits; invalid actions get probability exactly 0.
template <typename Scalar>
nn::Vector<Scalar> policy_dist(const PlannerNet& net, const nn::ParamSet<Scalar>& ps,
                               const nn::RowVector<Scalar>& feature, const ActionMask& valid);

template <typename Scalar>
Scalar critic_value(const PlannerNet& net, const nn::ParamSet<Scalar>& ps, const nn::RowVector<Scalar>& feature);

// Inverse-CDF draw, or the first maximum in Argmax mode. Never returns an action with probability 0.
int choose_action(const nn::Vector<float>& probs, PolicyMode mode, Rng& rng);

// ---------------------------------------------------------------------------
// Rollouts and returns

struct RolloutBuffer {
  std::vector<Eigen::VectorXf> features;
  std::vector<int> actions;
  std::vector<float> log_probs;  // under the behaviour policy
  std::vector<float> rewards;
  std::vector<float> values;     // critic estimate at collection time
  std::vector<ActionMask> valid;
  std::vector<bool> done;
  std::vector<std::size_t> episode_begin;  // first step index of each episode
  std::vector<int> task_ids;
  std::vector<bool> success;
  std::vector<double> episode_reward;

  std::size_t size() const noexcept { return actions.size(); }
  std::size_t episodes() const noexcept { return episode_begin.size(); }
};

struct ReturnsAdvantages {
  std::vector<double> returns;
  std::vector<double> advantages;
};

// Discounted return within each episode minus the stored value; no bootstrap.
ReturnsAdvantages compute_returns_advantages(const RolloutBuffer& buffer, double gamma);

struct PpoConfig {
  double alpha = 0.5;
  double beta = 0.01;
  double clip_eps = 0.2;
  double gamma = 0.99;
  double lr = 1e-3;
  int old_sync_every = 4;
  int epochs = 1500;
  int episodes_per_epoch = 64;
  int minibatch = 16;
  int hidden = 64;
  int budget = 10;
  std::vector<int> distances{2, 3, 4, 5, 6, 7, 8};
  RewardKind reward = RewardKind::Dense;
  bool normalize_advantages = false;
  int divergence_epochs = 10;
  int log_every = 1;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const PpoConfig& cfg);
PpoConfig ppo_config_from_json(const nlohmann::json& j);
void validate(const PpoConfig& cfg);

// Episodes on tasks drawn by sample_training_task over `distances`. Actions come
// from `actor_params`; values from `critic_params`. Episode i uses its own RNG
// stream mix_seed(seed, "rollout", {i}).
RolloutBuffer collect_rollout(const FeatureEncoder& encoder, const WorldBank& worlds, const PlannerNet& net,
                              const nn::ParamSet<float>& actor_params, const nn::ParamSet<float>& critic_params,
                              int n_episodes, PolicyMode mode, const PpoConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Loss

template <typename Scalar>
struct PpoBatch {
  nn::Matrix<Scalar> features;
  std::vector<int> actions;
  std::vector<Scalar> old_log_probs;
  std::vector<Scalar> advantages;
  std::vector<Scalar> returns;
  std::vector<ActionMask> valid;
};

struct PpoLossParts {
  double total = 0.0;
  double policy = 0.0;   // mean L_clip
  double value = 0.0;    // mean (V - R)^2
  double entropy = 0.0;  // mean H
};

// mean[-L_clip + alpha (V - R)^2 - beta H]; accumulates parameter gradients.
template <typename Scalar>
PpoLossParts ppo_loss(const PlannerNet& net, nn::ParamSet<Scalar>& ps, const PpoBatch<Scalar>& batch,
                      const PpoConfig& cfg);

// ---------------------------------------------------------------------------
// Training

// Trips once the mean episode reward has stayed below -budget for `limit`
// consecutive epochs.
class DivergenceGuard {
 public:
  DivergenceGuard(int budget, int limit) : threshold_(-static_cast<double>(budget)), limit_(limit) {}
  bool update(double mean_reward) noexcept {
    below_ = mean_reward < threshold_ ? below_ + 1 : 0;
    return below_ >= limit_;
  }
  int consecutive() const noexcept { return below_; }

 private:
  double threshold_;
  int limit_;
  int below_ = 0;
};

struct PpoLogRow {
  int epoch = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  PpoLossParts loss;
};

struct PpoTrainResult {
  PlannerModel model;
  std::vector<PpoLogRow> log;
};

// Each epoch collects episodes_per_epoch episodes with the old policy, then
// makes one shuffled pass over them. The old policy copies the current actor
// every old_sync_every epochs. Throws NumericalError on a non-finite loss or
// when the mean episode reward stays below -budget for divergence_epochs epochs;
// ContractViolation if the encoder's frozen parameters change.
PpoTrainResult train_ppo(const FeatureEncoder& encoder, const WorldBank& worlds, const PpoConfig& cfg);

void write_ppo_log_csv(const std::string& path, const std::vector<PpoLogRow>& log);

}  // namespace agl
