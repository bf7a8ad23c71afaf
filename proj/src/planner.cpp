#include "agl/planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "agl/checkpoint.hpp"
#include "agl/error.hpp"
#include "agl/json_util.hpp"
#include "agl/nn/adam.hpp"

namespace agl {

using nlohmann::json;

std::string_view to_string(PolicyMode m) noexcept { return m == PolicyMode::Argmax ? "argmax" : "stochastic"; }

PolicyMode parse_policy_mode(std::string_view name) {
  if (name == "argmax") return PolicyMode::Argmax;
  if (name == "stochastic") return PolicyMode::Stochastic;
  throw ConfigError("unknown policy mode '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Encoders

namespace {

class GaspStream final : public FeatureStream {
 public:
  GaspStream(const GaspModel& model, const EmbeddingTable& table, const Embedding& goal)
      : table_(&table), session_(model.net, model.params, goal) {}

  Eigen::VectorXf observe(Cell cell) override {
    return session_.observe(observation_feature(*table_, cell)).transpose();
  }
  void act(Action a) override { session_.act(a); }

 private:
  const EmbeddingTable* table_;
  GaspSession<float> session_;
};

class MemorylessStream final : public FeatureStream {
 public:
  MemorylessStream(const EmbeddingTable& table, const Embedding& goal) : table_(&table), goal_(&goal) {}

  Eigen::VectorXf observe(Cell cell) override {
    Eigen::VectorXf f(table_->dim() + goal_->size());
    f << table_->patch(cell), *goal_;
    return f;
  }
  void act(Action) override {}

 private:
  const EmbeddingTable* table_;
  const Embedding* goal_;
};

}  // namespace

GaspEncoder::GaspEncoder(std::shared_ptr<const GaspModel> model) : model_(std::move(model)) {
  if (!model_) throw ContractViolation("GaspEncoder: null model");
}

std::unique_ptr<FeatureStream> GaspEncoder::start(const EmbeddingTable& table, const Embedding& goal) const {
  return std::make_unique<GaspStream>(*model_, table, goal);
}

std::uint64_t GaspEncoder::frozen_hash() const { return checkpoint_hash(model_->params); }

std::unique_ptr<FeatureStream> MemorylessEncoder::start(const EmbeddingTable& table, const Embedding& goal) const {
  if (table.dim() != embed_dim_ || goal.size() != embed_dim_)
    throw ContractViolation("MemorylessEncoder: embedding dimension mismatch");
  return std::make_unique<MemorylessStream>(table, goal);
}

// ---------------------------------------------------------------------------
// Actor and critic

json to_json(const PlannerArch& a) {
  return {{"input_dim", a.input_dim}, {"hidden", a.hidden}, {"hidden_layers", a.hidden_layers}, {"encoder", a.encoder}};
}

PlannerArch planner_arch_from_json(const json& j) {
  reject_unknown_keys(j, {"input_dim", "hidden", "hidden_layers", "encoder"}, "planner architecture");
  PlannerArch a = parse_section("planner architecture", [&] {
    PlannerArch p;
    p.input_dim = j.value("input_dim", p.input_dim);
    p.hidden = j.value("hidden", p.hidden);
    p.hidden_layers = j.value("hidden_layers", p.hidden_layers);
    p.encoder = j.value("encoder", p.encoder);
    return p;
  });
  if (a.input_dim < 1 || a.hidden < 1 || a.hidden_layers < 1)
    throw ConfigError("planner architecture: invalid sizes");
  return a;
}

template <typename Scalar>
PlannerNet PlannerNet::create(nn::ParamSet<Scalar>& ps, const PlannerArch& arch) {
  std::vector<Eigen::Index> sizes{arch.input_dim};
  for (int i = 0; i < arch.hidden_layers; ++i) sizes.push_back(arch.hidden);
  PlannerNet net;
  net.arch = arch;
  sizes.push_back(kNumActions);
  net.actor = nn::Mlp::create(ps, "actor", sizes);
  sizes.back() = 1;
  net.critic = nn::Mlp::create(ps, "critic", sizes);
  return net;
}

PlannerModel::PlannerModel(const PlannerArch& arch) : net(PlannerNet::create(params, arch)) {}

void save_planner_model(const std::string& checkpoint_path, const PlannerModel& model) {
  write_checkpoint(checkpoint_path, model.params);
  std::ofstream out(checkpoint_path + ".json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + checkpoint_path + ".json for writing");
  out << to_json(model.net.arch).dump(2) << '\n';
}

PlannerModel load_planner_model(const std::string& checkpoint_path) {
  const std::string arch_path = checkpoint_path + ".json";
  std::ifstream in(arch_path, std::ios::binary);
  if (!in) throw MissingArtifact(arch_path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(arch_path + ": " + e.what());
  }
  PlannerModel model(planner_arch_from_json(j));
  read_checkpoint_into(checkpoint_path, model.params);
  return model;
}

template <typename Scalar>
nn::Vector<Scalar> policy_dist(const PlannerNet& net, const nn::ParamSet<Scalar>& ps,
                               const nn::RowVector<Scalar>& feature, const ActionMask& valid) {
  if (valid.count() == 0) throw ContractViolation("policy_dist: no valid action");
  const nn::Matrix<Scalar> x = feature;
  const nn::Vector<Scalar> logits = net.actor.forward(ps, x).row(0).transpose();
  if (!logits.allFinite()) throw NumericalError("policy_dist: non-finite actor output");
  return nn::softmax<Scalar>(logits, valid.bits);
}

template <typename Scalar>
Scalar critic_value(const PlannerNet& net, const nn::ParamSet<Scalar>& ps, const nn::RowVector<Scalar>& feature) {
  const nn::Matrix<Scalar> x = feature;
  return net.critic.forward(ps, x)(0, 0);
}

int choose_action(const nn::Vector<float>& probs, PolicyMode mode, Rng& rng) {
  int last = -1;
  if (mode == PolicyMode::Argmax) {
    for (int a = 0; a < probs.size(); ++a)
      if (probs[a] > 0 && (last < 0 || probs[a] > probs[last])) last = a;
  } else {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (int a = 0; a < probs.size(); ++a) {
      if (probs[a] <= 0) continue;
      last = a;
      acc += probs[a];
      if (u < acc) break;
    }
  }
  if (last < 0) throw ContractViolation("choose_action: empty distribution");
  return last;
}

// ---------------------------------------------------------------------------
// Rollouts

ReturnsAdvantages compute_returns_advantages(const RolloutBuffer& buffer, double gamma) {
  ReturnsAdvantages out;
  const std::size_t n = buffer.size();
  out.returns.assign(n, 0.0);
  out.advantages.assign(n, 0.0);
  for (std::size_t e = 0; e < buffer.episodes(); ++e) {
    const std::size_t begin = buffer.episode_begin[e];
    const std::size_t end = e + 1 < buffer.episodes() ? buffer.episode_begin[e + 1] : n;
    if (end == begin || !buffer.done[end - 1])
      throw ContractViolation("compute_returns_advantages: incomplete episode");
    double g = 0.0;
    for (std::size_t t = end; t-- > begin;) {
      g = buffer.rewards[t] + gamma * g;
      out.returns[t] = g;
      out.advantages[t] = g - buffer.values[t];
    }
  }
  return out;
}

json to_json(const PpoConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"clip_eps", c.clip_eps},
          {"gamma", c.gamma},
          {"lr", c.lr},
          {"old_sync_every", c.old_sync_every},
          {"epochs", c.epochs},
          {"episodes_per_epoch", c.episodes_per_epoch},
          {"minibatch", c.minibatch},
          {"hidden", c.hidden},
          {"budget", c.budget},
          {"distances", c.distances},
          {"reward", to_string(c.reward)},
          {"normalize_advantages", c.normalize_advantages},
          {"divergence_epochs", c.divergence_epochs},
          {"log_every", c.log_every},
          {"seed", c.seed}};
}

PpoConfig ppo_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"alpha", "beta", "clip_eps", "gamma", "lr", "old_sync_every", "epochs", "episodes_per_epoch",
                       "minibatch", "hidden", "budget", "distances", "reward", "normalize_advantages",
                       "divergence_epochs", "log_every", "seed"},
                      "ppo section");
  PpoConfig c = parse_section("ppo section", [&] {
    PpoConfig p;
    p.alpha = j.value("alpha", p.alpha);
    p.beta = j.value("beta", p.beta);
    p.clip_eps = j.value("clip_eps", p.clip_eps);
    p.gamma = j.value("gamma", p.gamma);
    p.lr = j.value("lr", p.lr);
    p.old_sync_every = j.value("old_sync_every", p.old_sync_every);
    p.epochs = j.value("epochs", p.epochs);
    p.episodes_per_epoch = j.value("episodes_per_epoch", p.episodes_per_epoch);
    p.minibatch = j.value("minibatch", p.minibatch);
    p.hidden = j.value("hidden", p.hidden);
    p.budget = j.value("budget", p.budget);
    p.distances = j.value("distances", p.distances);
    p.reward = parse_reward_kind(j.value("reward", std::string(to_string(p.reward))));
    p.normalize_advantages = j.value("normalize_advantages", p.normalize_advantages);
    p.divergence_epochs = j.value("divergence_epochs", p.divergence_epochs);
    p.log_every = j.value("log_every", p.log_every);
    p.seed = j.value("seed", p.seed);
    return p;
  });
  validate(c);
  return c;
}

void validate(const PpoConfig& c) {
  if (!(c.clip_eps > 0 && c.clip_eps < 1)) throw ConfigError("ppo: clip_eps must lie in (0, 1)");
  if (!(c.gamma > 0 && c.gamma <= 1)) throw ConfigError("ppo: gamma must lie in (0, 1]");
  if (!(c.lr > 0)) throw ConfigError("ppo: lr must be positive");
  if (c.old_sync_every < 1 || c.epochs < 0 || c.episodes_per_epoch < 1 || c.minibatch < 1 || c.hidden < 1 ||
      c.budget < 1 || c.divergence_epochs < 1)
    throw ConfigError("ppo: counts must be positive");
  if (c.distances.empty()) throw ConfigError("ppo: distances must not be empty");
  for (int d : c.distances)
    if (d < 1 || d > c.budget) throw ConfigError("ppo: distance " + std::to_string(d) + " outside [1, budget]");
}

RolloutBuffer collect_rollout(const FeatureEncoder& encoder, const WorldBank& worlds, const PlannerNet& net,
                              const nn::ParamSet<float>& actor_params, const nn::ParamSet<float>& critic_params,
                              int n_episodes, PolicyMode mode, const PpoConfig& cfg, std::uint64_t seed) {
  if (net.arch.input_dim != encoder.dim()) throw ContractViolation("collect_rollout: encoder/planner dimension mismatch");
  RolloutBuffer buf;
  for (int i = 0; i < n_episodes; ++i) {
    Rng rng(mix_seed(seed, "rollout", {static_cast<std::uint64_t>(i)}));
    const int w = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(worlds.size())));
    const GoalModality modality = kAllModalities[uniform_index(rng, 3)];
    const AglTask task = sample_training_task(worlds.spec(w), cfg.distances, cfg.budget, rng);
    const Embedding& goal = worlds.goal(w, task.goal, modality);
    auto stream = encoder.start(worlds.table(w), goal);
    EpisodeState state = start_episode(task);
    buf.episode_begin.push_back(buf.size());
    buf.task_ids.push_back(i);
    double total = 0.0;
    while (!state.done) {
      const Eigen::VectorXf f = stream->observe(state.current);
      const ActionMask valid = valid_actions(task.world.grid, state.current);
      const nn::RowVector<float> row = f.transpose();
      const nn::Vector<float> probs = policy_dist(net, actor_params, row, valid);
      const int a = choose_action(probs, mode, rng);
      const StepOutcome out = step_inplace(state, action_at(a), cfg.reward);
      buf.features.push_back(f);
      buf.actions.push_back(a);
      buf.log_probs.push_back(std::log(probs[a]));
      buf.rewards.push_back(static_cast<float>(out.reward));
      buf.values.push_back(critic_value(net, critic_params, row));
      buf.valid.push_back(valid);
      buf.done.push_back(out.done);
      total += out.reward;
      if (!out.done) stream->act(action_at(a));
    }
    buf.success.push_back(state.success);
    buf.episode_reward.push_back(total);
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Loss

template <typename Scalar>
PpoLossParts ppo_loss(const PlannerNet& net, nn::ParamSet<Scalar>& ps, const PpoBatch<Scalar>& batch,
                      const PpoConfig& cfg) {
  const Eigen::Index n = batch.features.rows();
  const auto un = static_cast<std::size_t>(n);
  if (n == 0 || batch.actions.size() != un || batch.old_log_probs.size() != un || batch.advantages.size() != un ||
      batch.returns.size() != un || batch.valid.size() != un)
    throw ContractViolation("ppo_loss: malformed batch");
  typename nn::Mlp::Cache<Scalar> actor_cache, critic_cache;
  const nn::Matrix<Scalar> logits = net.actor.forward(ps, batch.features, &actor_cache);
  const nn::Matrix<Scalar> values = net.critic.forward(ps, batch.features, &critic_cache);
  nn::Matrix<Scalar> d_logits = nn::Matrix<Scalar>::Zero(n, kNumActions);
  nn::Matrix<Scalar> d_values(n, 1);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  const Scalar alpha = static_cast<Scalar>(cfg.alpha), beta = static_cast<Scalar>(cfg.beta);
  const Scalar lo = static_cast<Scalar>(1 - cfg.clip_eps), hi = static_cast<Scalar>(1 + cfg.clip_eps);
  PpoLossParts parts;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const auto& valid = batch.valid[k];
    const int a = batch.actions[k];
    if (a < 0 || a >= kNumActions || !valid[a]) throw ContractViolation("ppo_loss: action outside the valid mask");
    const nn::Vector<Scalar> lp = nn::log_softmax<Scalar>(logits.row(i).transpose(), valid.bits);
    nn::Vector<Scalar> p = nn::Vector<Scalar>::Zero(kNumActions);
    Scalar entropy = 0;
    for (int j = 0; j < kNumActions; ++j)
      if (valid[j]) {
        p[j] = std::exp(lp[j]);
        entropy -= p[j] * lp[j];
      }
    const Scalar adv = batch.advantages[k];
    const Scalar ratio = std::exp(lp[a] - batch.old_log_probs[k]);
    const Scalar unclipped = ratio * adv;
    const Scalar clipped = std::clamp(ratio, lo, hi) * adv;
    const bool use_unclipped = unclipped <= clipped;
    const Scalar l_clip = use_unclipped ? unclipped : clipped;
    // dL_clip / dlog pi(a): the clipped branch is constant in the parameters
    const Scalar dclip_dlp = use_unclipped ? unclipped : Scalar(0);
    const Scalar diff = values(i, 0) - batch.returns[k];
    for (int j = 0; j < kNumActions; ++j) {
      if (!valid[j]) continue;
      const Scalar dlp_a = (j == a ? Scalar(1) : Scalar(0)) - p[j];
      const Scalar d_entropy = -p[j] * (lp[j] + entropy);
      d_logits(i, j) = (-dclip_dlp * dlp_a - beta * d_entropy) * inv_n;
    }
    d_values(i, 0) = Scalar(2) * alpha * diff * inv_n;
    parts.policy += static_cast<double>(l_clip);
    parts.value += static_cast<double>(diff * diff);
    parts.entropy += static_cast<double>(entropy);
  }
  net.actor.backward(ps, actor_cache, d_logits);
  net.critic.backward(ps, critic_cache, d_values);
  const double dn = static_cast<double>(n);
  parts.policy /= dn;
  parts.value /= dn;
  parts.entropy /= dn;
  parts.total = -parts.policy + cfg.alpha * parts.value - cfg.beta * parts.entropy;
  return parts;
}

// ---------------------------------------------------------------------------
// Training

PpoTrainResult train_ppo(const FeatureEncoder& encoder, const WorldBank& worlds, const PpoConfig& cfg) {
  validate(cfg);
  PlannerArch arch;
  arch.input_dim = encoder.dim();
  arch.hidden = cfg.hidden;
  arch.encoder = encoder.kind();
  PpoTrainResult out{PlannerModel(arch), {}};
  PlannerModel& model = out.model;
  Rng init_rng(mix_seed(cfg.seed, "ppo-init"));
  model.net.init(model.params, init_rng);
  nn::ParamSet<float> old = model.params;
  auto adam = nn::make_adam(model.params, cfg.lr);
  Rng shuffle_rng(mix_seed(cfg.seed, "ppo-shuffle"));
  const std::uint64_t frozen = encoder.frozen_hash();
  DivergenceGuard guard(cfg.budget, cfg.divergence_epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const RolloutBuffer buf =
        collect_rollout(encoder, worlds, model.net, old, model.params, cfg.episodes_per_epoch, PolicyMode::Stochastic,
                        cfg, mix_seed(cfg.seed, "ppo-rollout", {static_cast<std::uint64_t>(epoch)}));
    ReturnsAdvantages ra = compute_returns_advantages(buf, cfg.gamma);
    if (cfg.normalize_advantages && ra.advantages.size() > 1) {
      const double mean = std::accumulate(ra.advantages.begin(), ra.advantages.end(), 0.0) /
                          static_cast<double>(ra.advantages.size());
      double var = 0.0;
      for (double a : ra.advantages) var += (a - mean) * (a - mean);
      const double sd = std::sqrt(var / static_cast<double>(ra.advantages.size())) + 1e-8;
      for (double& a : ra.advantages) a = (a - mean) / sd;
    }
    std::vector<std::size_t> order(buf.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    PpoLossParts sum;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.minibatch));
      PpoBatch<float> batch;
      batch.features.resize(static_cast<Eigen::Index>(end - begin), arch.input_dim);
      for (std::size_t r = begin; r < end; ++r) {
        const std::size_t s = order[r];
        batch.features.row(static_cast<Eigen::Index>(r - begin)) = buf.features[s].transpose();
        batch.actions.push_back(buf.actions[s]);
        batch.old_log_probs.push_back(buf.log_probs[s]);
        batch.advantages.push_back(static_cast<float>(ra.advantages[s]));
        batch.returns.push_back(static_cast<float>(ra.returns[s]));
        batch.valid.push_back(buf.valid[s]);
      }
      const PpoLossParts parts = ppo_loss<float>(model.net, model.params, batch, cfg);
      if (!std::isfinite(parts.total))
        throw NumericalError("train_ppo: non-finite loss at epoch " + std::to_string(epoch));
      nn::adam_step(model.params, adam);
      const double w = static_cast<double>(end - begin) / static_cast<double>(order.size());
      sum.total += w * parts.total;
      sum.policy += w * parts.policy;
      sum.value += w * parts.value;
      sum.entropy += w * parts.entropy;
    }
    if ((epoch + 1) % cfg.old_sync_every == 0) old.copy_values_from(model.params);

    PpoLogRow row;
    row.epoch = epoch + 1;
    row.mean_reward = std::accumulate(buf.episode_reward.begin(), buf.episode_reward.end(), 0.0) /
                      static_cast<double>(buf.episodes());
    row.success_rate = static_cast<double>(std::count(buf.success.begin(), buf.success.end(), true)) /
                       static_cast<double>(buf.episodes());
    row.loss = sum;
    if (guard.update(row.mean_reward))
      throw NumericalError("train_ppo: mean episode reward below -budget for " +
                           std::to_string(guard.consecutive()) + " consecutive epochs");
    if (cfg.log_every > 0 && ((epoch + 1) % cfg.log_every == 0 || epoch + 1 == cfg.epochs)) out.log.push_back(row);
  }
  if (encoder.frozen_hash() != frozen) throw ContractViolation("train_ppo: frozen encoder parameters changed");
  return out;
}

void write_ppo_log_csv(const std::string& path, const std::vector<PpoLogRow>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "epoch,mean_reward,success_rate,loss,policy_loss,value_loss,entropy\n";
  char buf[192];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.mean_reward, r.success_rate,
                  r.loss.total, r.loss.policy, r.loss.value, r.loss.entropy);
    out << buf;
  }
}

#define AGL_PLANNER_INSTANTIATE(S)                                                                              \
  template PlannerNet PlannerNet::create<S>(nn::ParamSet<S>&, const PlannerArch&);                             \
  template nn::Vector<S> policy_dist<S>(const PlannerNet&, const nn::ParamSet<S>&, const nn::RowVector<S>&,    \
                                        const ActionMask&);                                                     \
  template S critic_value<S>(const PlannerNet&, const nn::ParamSet<S>&, const nn::RowVector<S>&);              \
  template PpoLossParts ppo_loss<S>(const PlannerNet&, nn::ParamSet<S>&, const PpoBatch<S>&, const PpoConfig&);

AGL_PLANNER_INSTANTIATE(float)
AGL_PLANNER_INSTANTIATE(double)

#undef AGL_PLANNER_INSTANTIATE

}  // namespace agl
