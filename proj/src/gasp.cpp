#include "agl/gasp.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <fstream>

#include "agl/checkpoint.hpp"
#include "agl/error.hpp"
#include "agl/nn/adam.hpp"

namespace agl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tokens

Eigen::VectorXf observation_feature(const EmbeddingTable& table, Cell cell) {
  Eigen::VectorXf f(table.dim() + kPositionEncodingDim);
  f << table.patch(cell), position_encoding(cell);
  return f;
}

TokenSequence encode_tokens(const Trajectory& traj, const EmbeddingTable& table, const Embedding& goal) {
  validate(traj);
  if (goal.size() != table.dim()) throw ContractViolation("encode_tokens: goal/patch dimension mismatch");
  TokenSequence seq;
  seq.goal = goal.transpose();
  seq.obs.resize(static_cast<Eigen::Index>(traj.cells.size()), table.dim() + kPositionEncodingDim);
  for (std::size_t i = 0; i < traj.cells.size(); ++i)
    seq.obs.row(static_cast<Eigen::Index>(i)) = observation_feature(table, traj.cells[i]).transpose();
  for (Action a : traj.actions) seq.actions.push_back(index_of(a));
  return seq;
}

// ---------------------------------------------------------------------------
// Network

json to_json(const GaspArch& a) {
  return {{"embed_dim", a.embed_dim}, {"model_dim", a.model_dim},   {"heads", a.heads},
          {"blocks", a.blocks},       {"mlp_hidden", a.mlp_hidden}, {"gradient_categories", a.gradient_categories},
          {"mask_goal", a.mask_goal}};
}

GaspArch gasp_arch_from_json(const json& j) {
  static const std::vector<std::string> known{"embed_dim", "model_dim",           "heads",    "blocks",
                                              "mlp_hidden", "gradient_categories", "mask_goal"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in GASP architecture");
  GaspArch a;
  try {
    a.embed_dim = j.value("embed_dim", a.embed_dim);
    a.model_dim = j.value("model_dim", a.model_dim);
    a.heads = j.value("heads", a.heads);
    a.blocks = j.value("blocks", a.blocks);
    a.mlp_hidden = j.value("mlp_hidden", a.mlp_hidden);
    a.gradient_categories = j.value("gradient_categories", a.gradient_categories);
    a.mask_goal = j.value("mask_goal", a.mask_goal);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("GASP architecture: ") + e.what());
  }
  if (a.embed_dim < 4 || a.model_dim < 1 || a.heads < 1 || a.model_dim % a.heads != 0 || a.blocks < 1 ||
      a.mlp_hidden < 1 || a.gradient_categories < 0)
    throw ConfigError("GASP architecture: invalid sizes");
  return a;
}

template <typename Scalar>
GaspNet GaspNet::create(nn::ParamSet<Scalar>& ps, const GaspArch& arch) {
  GaspNet net;
  net.arch = arch;
  const Eigen::Index d = arch.embed_dim, m = arch.model_dim;
  net.goal_proj = nn::Linear::create(ps, "gasp.goal_proj", d, m);
  net.obs_proj = nn::Linear::create(ps, "gasp.obs_proj", d + kPositionEncodingDim, m);
  net.act_proj = nn::Linear::create(ps, "gasp.act_proj", kNumActions, m);
  for (int b = 0; b < arch.blocks; ++b)
    net.blocks.push_back(
        nn::CausalBlock::create(ps, "gasp.block" + std::to_string(b), m, arch.heads, arch.mlp_hidden));
  net.final_ln = nn::LayerNorm::create(ps, "gasp.final_ln", m);
  net.action_head = nn::Linear::create(ps, "gasp.action_head", m, kNumActions);
  if (arch.gradient_categories > 0) {
    net.rpg_head = nn::Linear::create(ps, "gasp.rpg_head", m, arch.gradient_categories);
    net.mask_token = ps.add_vector("gasp.mask_token", m);
  }
  return net;
}

template <typename Scalar>
void GaspNet::init(nn::ParamSet<Scalar>& ps, Rng& rng) const {
  goal_proj.init(ps, rng);
  obs_proj.init(ps, rng);
  act_proj.init(ps, rng);
  for (const auto& b : blocks) b.init(ps, rng);
  action_head.init(ps, rng);
  if (arch.gradient_categories > 0) {
    rpg_head.init(ps, rng);
    nn::init_uniform(ps.value(mask_token), arch.model_dim, rng);
  }
}

template <typename Scalar>
nn::Matrix<Scalar> GaspNet::forward(const nn::ParamSet<Scalar>& ps, std::span<const TokenSequence> seqs,
                                    GaspCache<Scalar>& c,
                                    std::span<const std::vector<bool>> token_masks) const {
  if (!token_masks.empty() && token_masks.size() != seqs.size())
    throw ContractViolation("GaspNet::forward: one token mask per sequence required");
  if (!token_masks.empty() && arch.gradient_categories == 0)
    throw ContractViolation("GaspNet::forward: token masking needs the RPG mask token");
  const Eigen::Index d = arch.embed_dim, m = arch.model_dim;
  c = GaspCache<Scalar>{};
  Eigen::Index total = 0, n_obs = 0, n_act = 0;
  for (const auto& s : seqs) {
    const Eigen::Index n = s.obs.rows();
    if (n < 1 || s.goal.rows() != 1 || s.goal.cols() != d || s.obs.cols() != d + kPositionEncodingDim ||
        static_cast<Eigen::Index>(s.actions.size()) != n - 1)
      throw ContractViolation("GaspNet::forward: malformed token sequence");
    c.offsets.push_back(total);
    c.segments.push_back(2 * n);
    total += 2 * n;
    n_obs += n;
    n_act += n - 1;
  }
  c.goals.resize(static_cast<Eigen::Index>(seqs.size()), d);
  c.obs.resize(n_obs, d + kPositionEncodingDim);
  c.actions = nn::Matrix<Scalar>::Zero(n_act, kNumActions);
  Eigen::Index gi = 0, oi = 0, ai = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    const Eigen::Index off = c.offsets[s];
    auto masked = [&](Eigen::Index t) {
      return !token_masks.empty() && token_masks[s][static_cast<std::size_t>(t)];
    };
    if (!token_masks.empty() && static_cast<Eigen::Index>(token_masks[s].size()) != 2 * seq.obs.rows())
      throw ContractViolation("GaspNet::forward: token mask length mismatch");
    if (!arch.mask_goal) {
      c.goals.row(gi++) = seq.goal.row(0).template cast<Scalar>();
      c.goal_rows.push_back(off);
    }
    for (Eigen::Index t = 1; t < 2 * seq.obs.rows(); ++t) {
      if (masked(t)) {
        c.masked_rows.push_back(off + t);
      } else if (t % 2 == 1) {
        c.obs.row(oi++) = seq.obs.row((t - 1) / 2).template cast<Scalar>();
        c.obs_rows.push_back(off + t);
      } else {
        c.actions(ai++, seq.actions[static_cast<std::size_t>((t - 2) / 2)]) = Scalar(1);
        c.action_rows.push_back(off + t);
      }
    }
  }
  c.goals.conservativeResize(gi, d);
  c.obs.conservativeResize(oi, d + kPositionEncodingDim);
  c.actions.conservativeResize(ai, kNumActions);

  nn::Matrix<Scalar> x = nn::Matrix<Scalar>::Zero(total, m);
  auto scatter = [&](const nn::Matrix<Scalar>& rows, const std::vector<Eigen::Index>& where) {
    for (std::size_t i = 0; i < where.size(); ++i) x.row(where[i]) = rows.row(static_cast<Eigen::Index>(i));
  };
  scatter(goal_proj.forward(ps, c.goals), c.goal_rows);
  scatter(obs_proj.forward(ps, c.obs), c.obs_rows);
  scatter(act_proj.forward(ps, c.actions), c.action_rows);
  for (Eigen::Index r : c.masked_rows) x.row(r) = ps.value(mask_token).row(0);

  c.blocks.resize(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) x = blocks[b].forward(ps, x, &c.blocks[b], c.segments);
  return final_ln.forward(ps, x, &c.final_ln);
}

template <typename Scalar>
void GaspNet::backward(nn::ParamSet<Scalar>& ps, const GaspCache<Scalar>& c,
                       const nn::Matrix<Scalar>& d_hidden) const {
  nn::Matrix<Scalar> dx = final_ln.backward(ps, c.final_ln, d_hidden);
  for (std::size_t b = blocks.size(); b-- > 0;) dx = blocks[b].backward(ps, c.blocks[b], dx);
  auto gather = [&](const std::vector<Eigen::Index>& where) {
    nn::Matrix<Scalar> out(static_cast<Eigen::Index>(where.size()), dx.cols());
    for (std::size_t i = 0; i < where.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = dx.row(where[i]);
    return out;
  };
  goal_proj.backward(ps, c.goals, gather(c.goal_rows));
  obs_proj.backward(ps, c.obs, gather(c.obs_rows));
  act_proj.backward(ps, c.actions, gather(c.action_rows));
  for (Eigen::Index r : c.masked_rows) ps.grad(mask_token).row(0) += dx.row(r);
}

template <typename Scalar>
std::vector<Eigen::Index> GaspNet::obs_token_rows(const GaspCache<Scalar>& c, std::span<const TokenSequence> seqs) {
  std::vector<Eigen::Index> rows;
  for (std::size_t s = 0; s < seqs.size(); ++s)
    for (int i = 0; i < seqs[s].steps(); ++i) rows.push_back(c.offsets[s] + TokenSequence::obs_token(i));
  return rows;
}

GaspModel::GaspModel(const GaspArch& arch) : net(GaspNet::create(params, arch)) {}

void save_gasp_model(const std::string& checkpoint_path, const GaspModel& model) {
  write_checkpoint(checkpoint_path, model.params);
  std::ofstream out(checkpoint_path + ".json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + checkpoint_path + ".json for writing");
  out << to_json(model.net.arch).dump(2) << '\n';
}

GaspModel load_gasp_model(const std::string& checkpoint_path) {
  const std::string arch_path = checkpoint_path + ".json";
  std::ifstream in(arch_path, std::ios::binary);
  if (!in) throw MissingArtifact(arch_path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(arch_path + ": " + e.what());
  }
  GaspModel model(gasp_arch_from_json(j));
  read_checkpoint_into(checkpoint_path, model.params);
  return model;
}

// ---------------------------------------------------------------------------
// Session

template <typename Scalar>
GaspSession<Scalar>::GaspSession(const GaspNet& net, const nn::ParamSet<Scalar>& ps, const Embedding& goal)
    : net_(&net), ps_(&ps), kv_(net.blocks.size()) {
  if (goal.size() != net.arch.embed_dim) throw ContractViolation("GaspSession: goal dimension mismatch");
  nn::RowVector<Scalar> token = nn::RowVector<Scalar>::Zero(net.arch.model_dim);
  if (!net.arch.mask_goal) {
    const nn::Matrix<Scalar> g = goal.transpose().cast<Scalar>();
    token = net.goal_proj.forward(ps, g).row(0);
  }
  push(token);
}

template <typename Scalar>
nn::RowVector<Scalar> GaspSession<Scalar>::push(nn::RowVector<Scalar> token) {
  for (std::size_t b = 0; b < net_->blocks.size(); ++b) token = net_->blocks[b].step(*ps_, token, kv_[b]);
  const nn::Matrix<Scalar> h = token;
  return net_->final_ln.forward(*ps_, h).row(0);
}

template <typename Scalar>
nn::RowVector<Scalar> GaspSession<Scalar>::observe(const Eigen::VectorXf& feature) {
  if (!expect_obs_) throw ContractViolation("GaspSession: observation after observation");
  const nn::Matrix<Scalar> f = feature.transpose().cast<Scalar>();
  expect_obs_ = false;
  return push(net_->obs_proj.forward(*ps_, f).row(0));
}

template <typename Scalar>
void GaspSession<Scalar>::act(Action a) {
  if (expect_obs_) throw ContractViolation("GaspSession: action without a preceding observation");
  nn::Matrix<Scalar> onehot = nn::Matrix<Scalar>::Zero(1, kNumActions);
  onehot(0, index_of(a)) = Scalar(1);
  push(net_->act_proj.forward(*ps_, onehot).row(0));
  expect_obs_ = true;
}

template <typename Scalar>
nn::RowVector<Scalar> GaspSession<Scalar>::action_logits(const nn::RowVector<Scalar>& latent) const {
  const nn::Matrix<Scalar> l = latent;
  return net_->action_head.forward(*ps_, l).row(0);
}

Eigen::RowVectorXf latent(const GaspModel& model, const TokenSequence& seq, int step) {
  if (step < 0 || step >= seq.steps()) throw ContractViolation("latent: step outside sequence");
  GaspCache<float> cache;
  const nn::Matrix<float> h = model.net.forward(model.params, std::span<const TokenSequence>(&seq, 1), cache);
  return h.row(TokenSequence::obs_token(step));
}

// ---------------------------------------------------------------------------
// Objectives

namespace {

std::vector<ActionMask> valid_masks(const Trajectory& traj, std::size_t count) {
  std::vector<ActionMask> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(valid_actions(traj.task.world.grid, traj.cells[i]));
  return out;
}

template <typename Example>
std::vector<TokenSequence> tokens_of(std::span<const Example> batch) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(batch.size());
  for (const auto& e : batch) seqs.push_back(e.tokens);
  return seqs;
}

template <typename Scalar>
nn::Matrix<Scalar> gather_rows(const nn::Matrix<Scalar>& m, const std::vector<Eigen::Index>& rows) {
  nn::Matrix<Scalar> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

template <typename Scalar>
void scatter_add(nn::Matrix<Scalar>& m, const std::vector<Eigen::Index>& rows, const nn::Matrix<Scalar>& src) {
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(rows[i]) += src.row(static_cast<Eigen::Index>(i));
}

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int masked_argmax(const Eigen::RowVectorXf& logits, const ActionMask& valid) {
  int best = -1;
  for (int a = 0; a < kNumActions; ++a)
    if (valid[a] && (best < 0 || logits[a] > logits[best])) best = a;
  return best;
}

}  // namespace

GaspExample make_gasp_example(const Trajectory& traj, const std::vector<OptimalLabel>& labels,
                              const EmbeddingTable& table, const Embedding& goal) {
  if (labels.size() != traj.cells.size()) throw ContractViolation("make_gasp_example: one label per observation");
  GaspExample e;
  e.tokens = encode_tokens(traj, table, goal);
  e.valid = valid_masks(traj, traj.cells.size());
  for (const auto& l : labels) {
    e.targets.push_back(l.mask);
    e.labeled.push_back(!l.at_goal);
  }
  return e;
}

BcExample make_bc_example(const Trajectory& optimal, const EmbeddingTable& table, const Embedding& goal) {
  if (optimal.actions.empty()) throw ContractViolation("make_bc_example: empty trajectory");
  Trajectory prefix = optimal;
  prefix.cells.pop_back();
  prefix.actions.pop_back();
  BcExample e;
  e.tokens = encode_tokens(prefix, table, goal);
  e.valid = valid_masks(optimal, prefix.cells.size());
  for (Action a : optimal.actions) e.actions.push_back(index_of(a));
  return e;
}

RpgExample make_rpg_example(const Trajectory& optimal, const EmbeddingTable& table, const Embedding& goal,
                            const GradientTable& categories, double mask_prob, Rng& rng) {
  RpgExample e;
  e.tokens = encode_tokens(optimal, table, goal);
  e.valid = valid_masks(optimal, optimal.cells.size());
  e.masked.assign(static_cast<std::size_t>(e.tokens.token_count()), false);
  for (std::size_t t = 1; t < e.masked.size(); ++t) e.masked[t] = uniform01(rng) < mask_prob;
  for (Cell c : optimal.cells) e.obs_categories.push_back(gradient_category(c, optimal.task.goal, categories).id);
  return e;
}

template <typename Scalar>
nn::LossGrad<Scalar> gasp_bce(const nn::Matrix<Scalar>& logits, std::span<const GaspExample> batch) {
  nn::Matrix<Scalar> targets = nn::Matrix<Scalar>::Zero(logits.rows(), kNumActions);
  nn::Matrix<Scalar> weights = nn::Matrix<Scalar>::Zero(logits.rows(), kNumActions);
  Eigen::Index r = 0;
  for (const auto& e : batch)
    for (int i = 0; i < e.tokens.steps(); ++i, ++r) {
      if (r >= logits.rows()) throw ContractViolation("gasp_bce: fewer logit rows than observations");
      if (!e.labeled[static_cast<std::size_t>(i)]) continue;
      for (int a = 0; a < kNumActions; ++a) {
        weights(r, a) = e.valid[static_cast<std::size_t>(i)][a] ? Scalar(1) : Scalar(0);
        targets(r, a) = e.targets[static_cast<std::size_t>(i)][a] ? Scalar(1) : Scalar(0);
      }
    }
  if (r != logits.rows()) throw ContractViolation("gasp_bce: more logit rows than observations");
  return nn::bce_with_logits<Scalar>(logits, targets, weights);
}

template <typename Scalar>
Scalar gasp_loss(const GaspNet& net, nn::ParamSet<Scalar>& ps, std::span<const GaspExample> batch) {
  const auto seqs = tokens_of(batch);
  GaspCache<Scalar> cache;
  const nn::Matrix<Scalar> h = net.forward(ps, std::span<const TokenSequence>(seqs), cache);
  const auto rows = GaspNet::obs_token_rows(cache, std::span<const TokenSequence>(seqs));
  const nn::Matrix<Scalar> hobs = gather_rows(h, rows);
  const auto loss = gasp_bce<Scalar>(net.action_head.forward(ps, hobs), batch);
  nn::Matrix<Scalar> dh = nn::Matrix<Scalar>::Zero(h.rows(), h.cols());
  scatter_add(dh, rows, net.action_head.backward(ps, hobs, loss.grad));
  net.backward(ps, cache, dh);
  return loss.value;
}

template <typename Scalar>
Scalar bc_loss(const GaspNet& net, nn::ParamSet<Scalar>& ps, std::span<const BcExample> batch) {
  const auto seqs = tokens_of(batch);
  GaspCache<Scalar> cache;
  const nn::Matrix<Scalar> h = net.forward(ps, std::span<const TokenSequence>(seqs), cache);
  const auto rows = GaspNet::obs_token_rows(cache, std::span<const TokenSequence>(seqs));
  const nn::Matrix<Scalar> hobs = gather_rows(h, rows);
  std::vector<int> targets;
  BoolMatrix allowed(static_cast<Eigen::Index>(rows.size()), kNumActions);
  for (const auto& e : batch)
    for (int i = 0; i < e.tokens.steps(); ++i) {
      for (int a = 0; a < kNumActions; ++a)
        allowed(static_cast<Eigen::Index>(targets.size()), a) = e.valid[static_cast<std::size_t>(i)][a];
      targets.push_back(e.actions[static_cast<std::size_t>(i)]);
    }
  const auto loss = nn::softmax_cross_entropy<Scalar>(net.action_head.forward(ps, hobs), targets, &allowed);
  nn::Matrix<Scalar> dh = nn::Matrix<Scalar>::Zero(h.rows(), h.cols());
  scatter_add(dh, rows, net.action_head.backward(ps, hobs, loss.grad));
  net.backward(ps, cache, dh);
  return loss.value;
}

template <typename Scalar>
Scalar rpg_loss(const GaspNet& net, nn::ParamSet<Scalar>& ps, std::span<const RpgExample> batch) {
  if (net.arch.gradient_categories == 0) throw ContractViolation("rpg_loss: model has no RPG head");
  const auto seqs = tokens_of(batch);
  std::vector<std::vector<bool>> masks;
  for (const auto& e : batch) masks.push_back(e.masked);
  GaspCache<Scalar> cache;
  const nn::Matrix<Scalar> h =
      net.forward(ps, std::span<const TokenSequence>(seqs), cache, std::span<const std::vector<bool>>(masks));
  std::vector<Eigen::Index> obs_rows, act_rows;
  std::vector<int> obs_targets, act_targets;
  std::vector<ActionMask> act_valid;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& e = batch[s];
    const Eigen::Index off = cache.offsets[s];
    for (int i = 0; i < e.tokens.steps(); ++i) {
      if (e.masked[static_cast<std::size_t>(TokenSequence::obs_token(i))]) {
        obs_rows.push_back(off + TokenSequence::obs_token(i));
        obs_targets.push_back(e.obs_categories[static_cast<std::size_t>(i)]);
      }
      if (i + 1 < e.tokens.steps() && e.masked[static_cast<std::size_t>(TokenSequence::action_token(i))]) {
        act_rows.push_back(off + TokenSequence::action_token(i));
        act_targets.push_back(e.tokens.actions[static_cast<std::size_t>(i)]);
        act_valid.push_back(e.valid[static_cast<std::size_t>(i)]);
      }
    }
  }
  const double n_obs = static_cast<double>(obs_rows.size()), n_act = static_cast<double>(act_rows.size());
  if (n_obs + n_act == 0) return Scalar(0);
  nn::Matrix<Scalar> dh = nn::Matrix<Scalar>::Zero(h.rows(), h.cols());
  Scalar value = 0;
  if (n_obs > 0) {
    const nn::Matrix<Scalar> ho = gather_rows(h, obs_rows);
    const auto l = nn::softmax_cross_entropy<Scalar>(net.rpg_head.forward(ps, ho), obs_targets);
    const Scalar w = static_cast<Scalar>(n_obs / (n_obs + n_act));
    value += w * l.value;
    scatter_add(dh, obs_rows, net.rpg_head.backward(ps, ho, nn::Matrix<Scalar>(l.grad * w)));
  }
  if (n_act > 0) {
    const nn::Matrix<Scalar> ha = gather_rows(h, act_rows);
    BoolMatrix allowed(static_cast<Eigen::Index>(act_rows.size()), kNumActions);
    for (std::size_t i = 0; i < act_valid.size(); ++i)
      for (int a = 0; a < kNumActions; ++a) allowed(static_cast<Eigen::Index>(i), a) = act_valid[i][a];
    const auto l = nn::softmax_cross_entropy<Scalar>(net.action_head.forward(ps, ha), act_targets, &allowed);
    const Scalar w = static_cast<Scalar>(n_act / (n_obs + n_act));
    value += w * l.value;
    scatter_add(dh, act_rows, net.action_head.backward(ps, ha, nn::Matrix<Scalar>(l.grad * w)));
  }
  net.backward(ps, cache, dh);
  return value;
}

nn::Matrix<float> gasp_logits(const GaspModel& model, std::span<const TokenSequence> seqs) {
  GaspCache<float> cache;
  const nn::Matrix<float> h = model.net.forward(model.params, seqs, cache);
  return model.net.action_head.forward(model.params, gather_rows(h, GaspNet::obs_token_rows(cache, seqs)));
}

GaspAccuracy gasp_accuracy(const GaspModel& model, std::span<const GaspExample> examples,
                           bool with_history_masked) {
  GaspAccuracy acc;
  const auto seqs = tokens_of(examples);
  const nn::Matrix<float> full = gasp_logits(model, seqs);
  std::vector<TokenSequence> singles;
  if (with_history_masked) {
    for (const auto& e : examples)
      for (int i = 0; i < e.tokens.steps(); ++i) {
        TokenSequence t;
        t.goal = e.tokens.goal;
        t.obs = e.tokens.obs.row(i);
        singles.push_back(std::move(t));
      }
  }
  const nn::Matrix<float> masked =
      with_history_masked ? gasp_logits(model, singles) : nn::Matrix<float>(full.rows(), full.cols());
  std::size_t hit_full = 0, hit_masked = 0;
  Eigen::Index r = 0;
  for (const auto& e : examples)
    for (int i = 0; i < e.tokens.steps(); ++i, ++r) {
      const auto k = static_cast<std::size_t>(i);
      if (!e.labeled[k]) continue;
      ++acc.steps;
      hit_full += e.targets[k][masked_argmax(full.row(r), e.valid[k])];
      if (with_history_masked) hit_masked += e.targets[k][masked_argmax(masked.row(r), e.valid[k])];
    }
  if (acc.steps > 0) {
    acc.full = static_cast<double>(hit_full) / static_cast<double>(acc.steps);
    acc.history_masked = static_cast<double>(hit_masked) / static_cast<double>(acc.steps);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Data and training

GaspRecord gasp_record(const GaspDatasetSpec& spec, int world, int k) {
  if (k < 0 || k >= spec.trajectories_per_world) throw ContractViolation("gasp_record: index out of range");
  Rng rng(mix_seed(spec.seed, "gasp-record",
                   {static_cast<std::uint64_t>(world), static_cast<std::uint64_t>(k)}));
  const WorldSpec w = spec.worlds.world(world);
  const int cells = w.grid.cell_count();
  const int s = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cells)));
  int g = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cells - 1)));
  if (g >= s) ++g;
  AglTask task;
  task.world = w;
  task.start = {s / w.grid.cols, s % w.grid.cols};
  task.goal = {g / w.grid.cols, g % w.grid.cols};
  task.distance = manhattan(task.start, task.goal);
  task.budget = std::max(spec.sequence_length, task.distance);
  GaspRecord rec;
  rec.world = world;
  rec.modality = kAllModalities[uniform_index(rng, 3)];
  rec.trajectory = gen_random_trajectory(task, spec.sequence_length, rng);
  rec.labels = label_trajectory(rec.trajectory);
  return rec;
}

void write_gasp_dataset(const std::string& path, const GaspDatasetSpec& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (int w = 0; w < spec.worlds.count; ++w)
    for (int k = 0; k < spec.trajectories_per_world; ++k) {
      const auto rec = gasp_record(spec, w, k);
      out << to_json(rec.trajectory, rec.labels).dump() << '\n';
    }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string_view to_string(GaspObjective o) noexcept {
  switch (o) {
    case GaspObjective::Gasp: return "gasp";
    case GaspObjective::BehaviorCloning: return "bc";
    case GaspObjective::Rpg: return "rpg";
  }
  return "?";
}

GaspObjective parse_gasp_objective(std::string_view name) {
  for (auto o : {GaspObjective::Gasp, GaspObjective::BehaviorCloning, GaspObjective::Rpg})
    if (to_string(o) == name) return o;
  throw ConfigError("unknown GASP objective '" + std::string(name) + "'");
}

std::vector<GaspExample> gasp_holdout(const WorldBank& worlds, int count, int sequence_length,
                                      std::uint64_t seed) {
  GaspDatasetSpec spec;
  spec.worlds = worlds.set();
  spec.sequence_length = sequence_length;
  spec.seed = seed;
  spec.trajectories_per_world = (count + worlds.size() - 1) / worlds.size();
  std::vector<GaspExample> out;
  for (int k = 0; k < count; ++k) {
    const int w = k % worlds.size();
    const auto rec = gasp_record(spec, w, k / worlds.size());
    out.push_back(make_gasp_example(rec.trajectory, rec.labels, worlds.table(w),
                                    worlds.goal(w, rec.trajectory.task.goal, rec.modality)));
  }
  return out;
}

GaspTrainResult train_gasp(const GaspDatasetSpec& data, const WorldBank& train_worlds,
                           const WorldBank& holdout_worlds, const GaspTrainConfig& config) {
  if (to_json(data.worlds) != to_json(train_worlds.set()))
    throw ContractViolation("train_gasp: world bank does not match the dataset spec");
  if (config.batch_size < 1 || config.steps < 0) throw ConfigError("train_gasp: invalid batch size or steps");
  GaspArch arch = config.arch;
  arch.embed_dim = data.worlds.embed_dim;
  GradientTable categories;
  if (config.objective == GaspObjective::Rpg) {
    categories = enumerate_gradient_categories(data.worlds.grid);
    arch.gradient_categories = categories.size();
  }
  GaspTrainResult out{GaspModel(arch), {}};
  GaspModel& model = out.model;
  Rng init_rng(mix_seed(config.seed, "gasp-init"));
  model.net.init(model.params, init_rng);
  auto adam = nn::make_adam(model.params, config.lr);
  Rng rng(mix_seed(config.seed, "gasp-batches"));
  const auto holdout = gasp_holdout(holdout_worlds, config.holdout_sequences, data.sequence_length,
                                    mix_seed(config.seed, "gasp-holdout"));
  const int max_distance = data.worlds.grid.max_distance();

  auto optimal_sample = [&](int& w, GoalModality& m) {
    w = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(train_worlds.size())));
    m = kAllModalities[uniform_index(rng, 3)];
    const AglTask task = sample_training_task(train_worlds.spec(w), config.bc_distances, max_distance, rng);
    return gen_optimal_trajectory(task, rng);
  };

  double window = 0.0;
  int window_count = 0;
  for (int step = 0; step < config.steps; ++step) {
    double loss = 0.0;
    if (config.objective == GaspObjective::Gasp) {
      std::vector<GaspExample> batch;
      for (int b = 0; b < config.batch_size; ++b) {
        const int w = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(train_worlds.size())));
        const int k = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(data.trajectories_per_world)));
        const auto rec = gasp_record(data, w, k);
        batch.push_back(make_gasp_example(rec.trajectory, rec.labels, train_worlds.table(w),
                                          train_worlds.goal(w, rec.trajectory.task.goal, rec.modality)));
      }
      loss = gasp_loss<float>(model.net, model.params, batch);
    } else if (config.objective == GaspObjective::BehaviorCloning) {
      std::vector<BcExample> batch;
      for (int b = 0; b < config.batch_size; ++b) {
        int w;
        GoalModality m;
        const Trajectory t = optimal_sample(w, m);
        batch.push_back(make_bc_example(t, train_worlds.table(w), train_worlds.goal(w, t.task.goal, m)));
      }
      loss = bc_loss<float>(model.net, model.params, batch);
    } else {
      std::vector<RpgExample> batch;
      for (int b = 0; b < config.batch_size; ++b) {
        int w;
        GoalModality m;
        const Trajectory t = optimal_sample(w, m);
        batch.push_back(make_rpg_example(t, train_worlds.table(w), train_worlds.goal(w, t.task.goal, m),
                                         categories, config.rpg_mask_prob, rng));
      }
      loss = rpg_loss<float>(model.net, model.params, batch);
    }
    if (!std::isfinite(loss)) throw NumericalError("train_gasp: non-finite loss at step " + std::to_string(step));
    nn::adam_step(model.params, adam);
    window += loss;
    ++window_count;
    const bool last = step + 1 == config.steps;
    if ((config.log_every > 0 && (step + 1) % config.log_every == 0) || last) {
      GaspLogRow row{step + 1, window / window_count, std::nullopt};
      if ((config.eval_every > 0 && (step + 1) % config.eval_every == 0) || last)
        row.holdout_acc = gasp_accuracy(model, holdout, false).full;
      out.log.push_back(row);
      window = 0.0;
      window_count = 0;
    }
  }
  return out;
}

void write_gasp_log_csv(const std::string& path, const std::vector<GaspLogRow>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "step,loss,holdout_acc\n";
  char buf[96];
  for (const auto& r : log) {
    if (r.holdout_acc) {
      std::snprintf(buf, sizeof buf, "%d,%.9g,%.6f\n", r.step, r.loss, *r.holdout_acc);
    } else {
      std::snprintf(buf, sizeof buf, "%d,%.9g,\n", r.step, r.loss);
    }
    out << buf;
  }
}

// ---------------------------------------------------------------------------

#define AGL_GASP_INSTANTIATE(S)                                                                           \
  template GaspNet GaspNet::create<S>(nn::ParamSet<S>&, const GaspArch&);                                \
  template void GaspNet::init<S>(nn::ParamSet<S>&, Rng&) const;                                           \
  template nn::Matrix<S> GaspNet::forward<S>(const nn::ParamSet<S>&, std::span<const TokenSequence>,      \
                                             GaspCache<S>&, std::span<const std::vector<bool>>) const;    \
  template void GaspNet::backward<S>(nn::ParamSet<S>&, const GaspCache<S>&, const nn::Matrix<S>&) const; \
  template std::vector<Eigen::Index> GaspNet::obs_token_rows<S>(const GaspCache<S>&,                     \
                                                                std::span<const TokenSequence>);         \
  template class GaspSession<S>;                                                                          \
  template nn::LossGrad<S> gasp_bce<S>(const nn::Matrix<S>&, std::span<const GaspExample>);              \
  template S gasp_loss<S>(const GaspNet&, nn::ParamSet<S>&, std::span<const GaspExample>);               \
  template S bc_loss<S>(const GaspNet&, nn::ParamSet<S>&, std::span<const BcExample>);                   \
  template S rpg_loss<S>(const GaspNet&, nn::ParamSet<S>&, std::span<const RpgExample>);

AGL_GASP_INSTANTIATE(float)
AGL_GASP_INSTANTIATE(double)

#undef AGL_GASP_INSTANTIATE

}  // namespace agl
