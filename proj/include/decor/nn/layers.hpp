// Attention and MLP building blocks on top of Graph.
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "decor/nn/graph.hpp"

namespace decor::nn {

struct AttentionOutput {
  Var output;
  std::vector<Var> weights;  // one (queries x keys) row-stochastic matrix per head
};

// Multi-head scaled dot-product attention with queries from `xq` and
// keys/values from `x`. Heads split the projected features into equal
// contiguous blocks of d_k = h / num_heads and are concatenated back.
inline AttentionOutput cross_attention(Graph& g, Var xq, Var x, Var wq, Var wk, Var wv, std::size_t num_heads) {
  const std::size_t h = g.value(wq).cols();
  if (num_heads == 0 || h % num_heads != 0) {
    throw Error("attention: width " + std::to_string(h) + " not divisible by " + std::to_string(num_heads) +
                " heads");
  }
  if (g.value(xq).cols() != g.value(x).cols()) throw Error("attention: query/key width mismatch");
  const std::size_t dk = h / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  Var q = g.matmul(xq, wq);
  Var k = g.matmul(x, wk);
  Var v = g.matmul(x, wv);
  AttentionOutput out;
  std::vector<Var> heads;
  for (std::size_t hd = 0; hd < num_heads; ++hd) {
    Var qh = num_heads == 1 ? q : g.slice_cols(q, hd * dk, (hd + 1) * dk);
    Var kh = num_heads == 1 ? k : g.slice_cols(k, hd * dk, (hd + 1) * dk);
    Var vh = num_heads == 1 ? v : g.slice_cols(v, hd * dk, (hd + 1) * dk);
    Var p = g.softmax(g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt), 1);
    out.weights.push_back(p);
    heads.push_back(g.matmul(p, vh));
  }
  out.output = num_heads == 1 ? heads.front() : g.concat_cols(heads);
  return out;
}

inline AttentionOutput self_attention(Graph& g, Var x, Var wq, Var wk, Var wv, std::size_t num_heads) {
  return cross_attention(g, x, x, wq, wk, wv, num_heads);
}

// Affine + ReLU for every layer but the last, which is affine only.
inline Var mlp(Graph& g, Var x, const std::vector<std::pair<Var, Var>>& layers) {
  if (layers.empty()) throw Error("mlp: no layers");
  Var y = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& [w, b] = layers[i];
    if (g.value(y).cols() != g.value(w).rows()) {
      throw Error("mlp: layer " + std::to_string(i) + " expects width " + std::to_string(g.value(w).rows()) +
                  ", got " + std::to_string(g.value(y).cols()));
    }
    y = g.add_row(g.matmul(y, w), b);
    if (i + 1 < layers.size()) y = g.relu(y);
  }
  return y;
}

// Parameter names "<prefix>.<i>.w" / "<prefix>.<i>.b".
inline std::vector<std::pair<Var, Var>> mlp_params(Graph& g, const ParamStore& ps, const std::string& prefix,
                                                   std::size_t num_layers) {
  std::vector<std::pair<Var, Var>> layers;
  for (std::size_t i = 0; i < num_layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    layers.emplace_back(g.param(ps, p + ".w"), g.param(ps, p + ".b"));
  }
  return layers;
}

inline Tensor glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t({in, out});
  for (double& x : t.data) x = u(rng);
  return t;
}

// Registers an MLP with widths dims[0] -> dims[1] -> ... ; the last layer
// is zero-initialized when zero_last is set.
inline void add_mlp(ParamStore& ps, const std::string& prefix, const std::vector<std::size_t>& dims,
                    std::mt19937_64& rng, bool zero_last) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    const bool last = i + 2 == dims.size();
    ps.add(p + ".w", last && zero_last ? Tensor({dims[i], dims[i + 1]}) : glorot(dims[i], dims[i + 1], rng));
    ps.add(p + ".b", Tensor({dims[i + 1]}));
  }
}

// Tensor-level conveniences (no gradient bookkeeping kept).

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph g;
  return g.value(g.matmul(g.constant(a), g.constant(b)));
}

inline Tensor softmax(const Tensor& x, int axis = 1) {
  Graph g;
  return g.value(g.softmax(g.constant(x), axis));
}

inline Tensor cross_attention(const Tensor& xq, const Tensor& x, const Tensor& wq, const Tensor& wk,
                              const Tensor& wv, std::size_t num_heads) {
  Graph g;
  auto out = cross_attention(g, g.constant(xq), g.constant(x), g.constant(wq), g.constant(wk), g.constant(wv),
                             num_heads);
  return g.value(out.output);
}

inline Tensor self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                             std::size_t num_heads) {
  return cross_attention(x, x, wq, wk, wv, num_heads);
}

inline Tensor mlp(const Tensor& x, const std::vector<std::pair<Tensor, Tensor>>& layers) {
  Graph g;
  std::vector<std::pair<Var, Var>> vars;
  for (const auto& [w, b] : layers) vars.emplace_back(g.constant(w), g.constant(b));
  return g.value(mlp(g, g.constant(x), vars));
}

}  // namespace decor::nn
