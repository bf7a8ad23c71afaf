#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "agl/nn/attention.hpp"
#include "agl/nn/losses.hpp"
#include "agl/oracle.hpp"
#include "agl/worlds.hpp"

namespace agl {

// ---------------------------------------------------------------------------
// Tokens

// Layout: [goal, obs_0, act_0, obs_1, act_1, ..., obs_N-1].
struct TokenSequence {
  nn::Matrix<float> goal;     // 1 x D
  nn::Matrix<float> obs;      // N x (D + 8): patch embedding then relative-position encoding
  std::vector<int> actions;   // N - 1 action indices

  int steps() const noexcept { return static_cast<int>(obs.rows()); }
  Eigen::Index token_count() const noexcept { return 2 * obs.rows(); }
  static constexpr Eigen::Index obs_token(int i) noexcept { return 1 + 2 * i; }
  static constexpr Eigen::Index action_token(int i) noexcept { return 2 + 2 * i; }
};

Eigen::VectorXf observation_feature(const EmbeddingTable& table, Cell cell);

TokenSequence encode_tokens(const Trajectory& traj, const EmbeddingTable& table, const Embedding& goal);

// ---------------------------------------------------------------------------
// Network

struct GaspArch {
  int embed_dim = 16;
  int model_dim = 64;
  int heads = 4;
  int blocks = 2;
  int mlp_hidden = 128;
  int gradient_categories = 0;  // > 0 adds the RPG head and a learned mask token
  bool mask_goal = false;       // goal token replaced by a zero vector

  bool operator==(const GaspArch&) const = default;
};

nlohmann::json to_json(const GaspArch& arch);
GaspArch gasp_arch_from_json(const nlohmann::json& j);

template <typename Scalar>
struct GaspCache {
  std::vector<Eigen::Index> segments;
  std::vector<Eigen::Index> offsets;  // first token row of every sequence
  nn::Matrix<Scalar> goals, obs, actions;
  std::vector<Eigen::Index> goal_rows, obs_rows, action_rows, masked_rows;
  std::vector<typename nn::CausalBlock::Cache<Scalar>> blocks;
  typename nn::LayerNorm::Cache<Scalar> final_ln;
};

struct GaspNet {
  GaspArch arch;
  nn::Linear goal_proj;
  nn::Linear obs_proj;
  nn::Linear act_proj;
  std::vector<nn::CausalBlock> blocks;
  nn::LayerNorm final_ln;
  nn::Linear action_head;
  nn::Linear rpg_head;
  nn::ParamId mask_token;

  template <typename Scalar>
  static GaspNet create(nn::ParamSet<Scalar>& ps, const GaspArch& arch);

  template <typename Scalar>
  void init(nn::ParamSet<Scalar>& ps, Rng& rng) const;

  // Hidden states after the final layer norm for every token of every
  // sequence, stacked. `token_masks[s][t]` replaces token t of sequence s by
  // the learned mask token (RPG only).
  template <typename Scalar>
  nn::Matrix<Scalar> forward(const nn::ParamSet<Scalar>& ps, std::span<const TokenSequence> seqs,
                             GaspCache<Scalar>& cache,
                             std::span<const std::vector<bool>> token_masks = {}) const;

  template <typename Scalar>
  void backward(nn::ParamSet<Scalar>& ps, const GaspCache<Scalar>& cache,
                const nn::Matrix<Scalar>& d_hidden) const;

  // Rows of the stacked hidden matrix holding observation tokens, in order.
  template <typename Scalar>
  static std::vector<Eigen::Index> obs_token_rows(const GaspCache<Scalar>& cache,
                                                  std::span<const TokenSequence> seqs);
};

struct GaspModel {
  nn::ParamSet<float> params;  // declared first: the net registers into it
  GaspNet net;

  explicit GaspModel(const GaspArch& arch = {});
};

// Checkpoint (AGLW) plus a JSON sidecar with the architecture.
void save_gasp_model(const std::string& checkpoint_path, const GaspModel& model);
GaspModel load_gasp_model(const std::string& checkpoint_path);

// Token-by-token inference with cached keys and values. Each observe() returns
// the latent e_t of the new observation token.
template <typename Scalar>
class GaspSession {
 public:
  GaspSession(const GaspNet& net, const nn::ParamSet<Scalar>& ps, const Embedding& goal);

  nn::RowVector<Scalar> observe(const Eigen::VectorXf& feature);
  void act(Action a);
  nn::RowVector<Scalar> action_logits(const nn::RowVector<Scalar>& latent) const;

 private:
  nn::RowVector<Scalar> push(nn::RowVector<Scalar> token);

  const GaspNet* net_;
  const nn::ParamSet<Scalar>* ps_;
  std::vector<typename nn::CausalBlock::KvCache<Scalar>> kv_;
  bool expect_obs_ = true;
};

// Latent at observation i of a full sequence, computed without a cache.
Eigen::RowVectorXf latent(const GaspModel& model, const TokenSequence& seq, int step);

// ---------------------------------------------------------------------------
// Objectives

// Multi-label GASP example: one label set per observation.
struct GaspExample {
  TokenSequence tokens;
  std::vector<ActionMask> valid;
  std::vector<ActionMask> targets;
  std::vector<bool> labeled;  // false when the observation sits on the goal
};

// Behaviour cloning example: imitate the recorded optimal action at each observation.
struct BcExample {
  TokenSequence tokens;
  std::vector<ActionMask> valid;
  std::vector<int> actions;  // one per observation
};

// RPG example: optimal trajectory with masked tokens.
struct RpgExample {
  TokenSequence tokens;
  std::vector<ActionMask> valid;    // per observation
  std::vector<bool> masked;         // per token; the goal token is never masked
  std::vector<int> obs_categories;  // gradient-category id per observation
};

GaspExample make_gasp_example(const Trajectory& traj, const std::vector<OptimalLabel>& labels,
                              const EmbeddingTable& table, const Embedding& goal);
// Observations exclude the final (goal) cell; targets are the recorded actions.
BcExample make_bc_example(const Trajectory& optimal, const EmbeddingTable& table, const Embedding& goal);
RpgExample make_rpg_example(const Trajectory& optimal, const EmbeddingTable& table, const Embedding& goal,
                            const GradientTable& categories, double mask_prob, Rng& rng);

// BCE over valid actions at labeled steps; rows follow the examples' observations.
template <typename Scalar>
nn::LossGrad<Scalar> gasp_bce(const nn::Matrix<Scalar>& logits, std::span<const GaspExample> batch);

// Loss over the batch; accumulates parameter gradients.
template <typename Scalar>
Scalar gasp_loss(const GaspNet& net, nn::ParamSet<Scalar>& ps, std::span<const GaspExample> batch);
template <typename Scalar>
Scalar bc_loss(const GaspNet& net, nn::ParamSet<Scalar>& ps, std::span<const BcExample> batch);
template <typename Scalar>
Scalar rpg_loss(const GaspNet& net, nn::ParamSet<Scalar>& ps, std::span<const RpgExample> batch);

// Action-head logits at every observation, stacked over the batch.
nn::Matrix<float> gasp_logits(const GaspModel& model, std::span<const TokenSequence> seqs);

struct GaspAccuracy {
  double full = 0.0;            // argmax over valid actions lies in the label set
  double history_masked = 0.0;  // same, seeing only the goal and the current observation
  std::size_t steps = 0;
};

GaspAccuracy gasp_accuracy(const GaspModel& model, std::span<const GaspExample> examples,
                           bool with_history_masked = true);

// ---------------------------------------------------------------------------
// Data and training

struct GaspDatasetSpec {
  WorldSet worlds;
  int trajectories_per_world = 128;
  int sequence_length = 10;
  std::uint64_t seed = 0;
};

struct GaspRecord {
  int world = 0;
  GoalModality modality = GoalModality::Aerial;
  Trajectory trajectory;
  std::vector<OptimalLabel> labels;
};

// Record k of world w: uniform start, uniform goal != start, random walk, random goal modality.
GaspRecord gasp_record(const GaspDatasetSpec& spec, int world, int k);

void write_gasp_dataset(const std::string& path, const GaspDatasetSpec& spec);

enum class GaspObjective { Gasp, BehaviorCloning, Rpg };
std::string_view to_string(GaspObjective o) noexcept;
GaspObjective parse_gasp_objective(std::string_view name);

struct GaspTrainConfig {
  GaspArch arch;
  GaspObjective objective = GaspObjective::Gasp;
  int steps = 4000;
  int batch_size = 16;
  double lr = 1e-3;
  double rpg_mask_prob = 0.25;
  std::vector<int> bc_distances{1, 2, 3, 4, 5, 6, 7, 8};
  int log_every = 100;
  int eval_every = 500;
  int holdout_sequences = 256;
  std::uint64_t seed = 0;
};

struct GaspLogRow {
  int step = 0;
  double loss = 0.0;
  std::optional<double> holdout_acc;
};

struct GaspTrainResult {
  GaspModel model;
  std::vector<GaspLogRow> log;
};

// Held-out GASP examples drawn from `worlds` (independent of the training stream).
std::vector<GaspExample> gasp_holdout(const WorldBank& worlds, int count, int sequence_length,
                                      std::uint64_t seed);

GaspTrainResult train_gasp(const GaspDatasetSpec& data, const WorldBank& train_worlds,
                           const WorldBank& holdout_worlds, const GaspTrainConfig& config);

void write_gasp_log_csv(const std::string& path, const std::vector<GaspLogRow>& log);

}  // namespace agl
