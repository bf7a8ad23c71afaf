#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "agl/nn/layers.hpp"

namespace agl::nn {

// Pre-norm causal transformer block:
//   x1 = x + W_o · MultiHeadAttention(LN1(x))   (row t attends to rows 0..t)
//   y  = x1 + W_2 · tanh(W_1 · LN2(x1))
struct CausalBlock {
  LayerNorm ln1;
  LayerNorm ln2;
  Linear query;
  Linear key;
  Linear value;
  Linear proj;
  Linear fc1;
  Linear fc2;
  int heads = 1;
  Eigen::Index dim = 0;

  template <typename Scalar>
  struct Cache {
    typename LayerNorm::Cache<Scalar> ln1;
    typename LayerNorm::Cache<Scalar> ln2;
    Matrix<Scalar> h1, q, k, v;
    std::vector<Eigen::Index> segments;  // row count of each stacked sequence
    std::vector<Matrix<Scalar>> probs;   // [segment * heads + head], zero above the diagonal
    Matrix<Scalar> attn;                 // heads concatenated, before the output projection
    Matrix<Scalar> h2, z;                // z = tanh(fc1(h2))
  };

  // Keys/values of the rows seen so far, for token-by-token inference.
  template <typename Scalar>
  struct KvCache {
    Matrix<Scalar> k;
    Matrix<Scalar> v;
  };

  template <typename Scalar>
  static CausalBlock create(ParamSet<Scalar>& ps, const std::string& prefix, Eigen::Index dim,
                            int heads, Eigen::Index hidden) {
    if (heads < 1 || dim % heads != 0)
      throw ContractViolation("CausalBlock: dim must be divisible by heads");
    CausalBlock b;
    b.ln1 = LayerNorm::create(ps, prefix + ".ln1", dim);
    b.query = Linear::create(ps, prefix + ".attn.query", dim, dim);
    b.key = Linear::create(ps, prefix + ".attn.key", dim, dim);
    b.value = Linear::create(ps, prefix + ".attn.value", dim, dim);
    b.proj = Linear::create(ps, prefix + ".attn.proj", dim, dim);
    b.ln2 = LayerNorm::create(ps, prefix + ".ln2", dim);
    b.fc1 = Linear::create(ps, prefix + ".mlp.fc1", dim, hidden);
    b.fc2 = Linear::create(ps, prefix + ".mlp.fc2", hidden, dim);
    b.heads = heads;
    b.dim = dim;
    return b;
  }

  template <typename Scalar>
  void init(ParamSet<Scalar>& ps, Rng& rng) const {
    for (const Linear* l : {&query, &key, &value, &proj, &fc1, &fc2}) l->init(ps, rng);
  }

  // `segments` splits the rows of x into independent sequences stacked on top
  // of each other; empty means one sequence. Attention never crosses segments.
  template <typename Scalar>
  Matrix<Scalar> forward(const ParamSet<Scalar>& ps, const Matrix<Scalar>& x,
                         Cache<Scalar>* cache = nullptr,
                         std::span<const Eigen::Index> segments = {}) const {
    Cache<Scalar> local;
    Cache<Scalar>& c = cache ? *cache : local;
    const Eigen::Index dh = dim / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    c.segments.assign(segments.begin(), segments.end());
    if (c.segments.empty()) c.segments.push_back(x.rows());

    c.h1 = ln1.forward(ps, x, &c.ln1);
    c.q = query.forward(ps, c.h1);
    c.k = key.forward(ps, c.h1);
    c.v = value.forward(ps, c.h1);
    c.attn.resize(x.rows(), dim);
    c.probs.assign(c.segments.size() * static_cast<std::size_t>(heads), Matrix<Scalar>());
    Eigen::Index off = 0;
    for (std::size_t s = 0; s < c.segments.size(); ++s) {
      const Eigen::Index T = c.segments[s];
      for (int h = 0; h < heads; ++h) {
        const auto qh = c.q.block(off, h * dh, T, dh);
        const auto kh = c.k.block(off, h * dh, T, dh);
        const Matrix<Scalar> scores = (qh * kh.transpose()) * scale;
        Matrix<Scalar>& p = c.probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
        p = Matrix<Scalar>::Zero(T, T);
        for (Eigen::Index t = 0; t < T; ++t) {
          const Scalar m = scores.row(t).head(t + 1).maxCoeff();
          p.row(t).head(t + 1) = (scores.row(t).head(t + 1).array() - m).exp().matrix();
          p.row(t).head(t + 1) /= p.row(t).head(t + 1).sum();
        }
        c.attn.block(off, h * dh, T, dh).noalias() = p * c.v.block(off, h * dh, T, dh);
      }
      off += T;
    }
    if (off != x.rows()) throw ContractViolation("CausalBlock: segments do not cover the input");
    Matrix<Scalar> x1 = x + proj.forward(ps, c.attn);
    c.h2 = ln2.forward(ps, x1, &c.ln2);
    c.z = tanh_forward<Scalar>(fc1.forward(ps, c.h2));
    return x1 + fc2.forward(ps, c.z);
  }

  template <typename Scalar>
  Matrix<Scalar> backward(ParamSet<Scalar>& ps, const Cache<Scalar>& c,
                          const Matrix<Scalar>& dy) const {
    const Eigen::Index rows = dy.rows();
    const Eigen::Index dh = dim / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    const Matrix<Scalar> dz = fc2.backward(ps, c.z, dy);
    const Matrix<Scalar> du = tanh_backward<Scalar>(c.z, dz);
    const Matrix<Scalar> dh2 = fc1.backward(ps, c.h2, du);
    const Matrix<Scalar> dx1 = dy + ln2.backward(ps, c.ln2, dh2);

    const Matrix<Scalar> dattn = proj.backward(ps, c.attn, dx1);
    Matrix<Scalar> dq(rows, dim), dk(rows, dim), dv(rows, dim);
    Eigen::Index off = 0;
    for (std::size_t s = 0; s < c.segments.size(); ++s) {
      const Eigen::Index T = c.segments[s];
      for (int h = 0; h < heads; ++h) {
        const Matrix<Scalar>& p = c.probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
        const auto doh = dattn.block(off, h * dh, T, dh);
        const Matrix<Scalar> dp = doh * c.v.block(off, h * dh, T, dh).transpose();
        dv.block(off, h * dh, T, dh).noalias() = p.transpose() * doh;
        const Vector<Scalar> rowdot = (p.array() * dp.array()).rowwise().sum().matrix();
        const Matrix<Scalar> ds = (p.array() * (dp.colwise() - rowdot).array()).matrix() * scale;
        dq.block(off, h * dh, T, dh).noalias() = ds * c.k.block(off, h * dh, T, dh);
        dk.block(off, h * dh, T, dh).noalias() = ds.transpose() * c.q.block(off, h * dh, T, dh);
      }
      off += T;
    }
    Matrix<Scalar> dh1 = query.backward(ps, c.h1, dq);
    dh1 += key.backward(ps, c.h1, dk);
    dh1 += value.backward(ps, c.h1, dv);
    return dx1 + ln1.backward(ps, c.ln1, dh1);
  }

  // Processes one new row given the keys/values of all earlier rows and
  // appends its own key/value to `kv`.
  template <typename Scalar>
  RowVector<Scalar> step(const ParamSet<Scalar>& ps, const RowVector<Scalar>& x,
                         KvCache<Scalar>& kv) const {
    const Eigen::Index dh = dim / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const Matrix<Scalar> xm = x;
    const Matrix<Scalar> h1 = ln1.forward(ps, xm);
    const Matrix<Scalar> q = query.forward(ps, h1);
    const Eigen::Index n = kv.k.rows();
    kv.k.conservativeResize(n + 1, dim);
    kv.v.conservativeResize(n + 1, dim);
    kv.k.row(n) = key.forward(ps, h1).row(0);
    kv.v.row(n) = value.forward(ps, h1).row(0);
    Matrix<Scalar> attn(1, dim);
    for (int h = 0; h < heads; ++h) {
      RowVector<Scalar> scores =
          (q.middleCols(h * dh, dh) * kv.k.middleCols(h * dh, dh).transpose()) * scale;
      scores = (scores.array() - scores.maxCoeff()).exp().matrix();
      scores /= scores.sum();
      attn.middleCols(h * dh, dh).noalias() = scores * kv.v.middleCols(h * dh, dh);
    }
    const Matrix<Scalar> x1 = xm + proj.forward(ps, attn);
    const Matrix<Scalar> z = tanh_forward<Scalar>(fc1.forward(ps, ln2.forward(ps, x1)));
    return (x1 + fc2.forward(ps, z)).row(0);
  }
};

// Tanh MLP with a linear output layer.
struct Mlp {
  std::vector<Linear> layers;

  template <typename Scalar>
  struct Cache {
    std::vector<Matrix<Scalar>> inputs;  // input of every layer
  };

  // sizes = {in, hidden..., out}
  template <typename Scalar>
  static Mlp create(ParamSet<Scalar>& ps, const std::string& prefix,
                    const std::vector<Eigen::Index>& sizes) {
    if (sizes.size() < 2) throw ContractViolation("Mlp: need at least input and output sizes");
    Mlp m;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
      m.layers.push_back(
          Linear::create(ps, prefix + ".layer" + std::to_string(i), sizes[i], sizes[i + 1]));
    return m;
  }

  template <typename Scalar>
  void init(ParamSet<Scalar>& ps, Rng& rng) const {
    for (const auto& l : layers) l.init(ps, rng);
  }

  Eigen::Index in() const { return layers.front().in; }
  Eigen::Index out() const { return layers.back().out; }

  template <typename Scalar>
  Matrix<Scalar> forward(const ParamSet<Scalar>& ps, const Matrix<Scalar>& x,
                         Cache<Scalar>* cache = nullptr) const {
    if (cache) cache->inputs.clear();
    Matrix<Scalar> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (cache) cache->inputs.push_back(h);
      h = layers[i].forward(ps, h);
      if (i + 1 < layers.size()) h = tanh_forward<Scalar>(h);
    }
    return h;
  }

  template <typename Scalar>
  Matrix<Scalar> backward(ParamSet<Scalar>& ps, const Cache<Scalar>& cache,
                          const Matrix<Scalar>& dy) const {
    Matrix<Scalar> d = dy;
    for (std::size_t i = layers.size(); i-- > 0;) {
      d = layers[i].backward(ps, cache.inputs[i], d);
      // inputs[i] is the tanh output of layer i-1
      if (i > 0) d = tanh_backward<Scalar>(cache.inputs[i], d);
    }
    return d;
  }
};

}  // namespace agl::nn
