// Coarse-to-fine policy network.
//
// Coarse: per-feedback weights w = sigmoid(MLP(F + SelfAttn(F))) and
// pi_c = softmax(w^T M) over the whole database, M being the feedback x item
// cosine-similarity matrix. The k most probable eligible items form the
// candidate set. Fine: the interleaved history [f_0, a_0, ..., f_t] plus
// modality and position encodings goes through a self-attention layer (h_t);
// candidates attend to h_t and an MLP scores each one, pi_f = softmax over
// the k scores.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "decor/embedding.hpp"
#include "decor/nn/layers.hpp"
#include "decor/nn/param_store.hpp"

namespace decor {

struct PolicyConfig {
  std::size_t dim = 32;
  std::size_t num_heads = 4;
  std::size_t hidden = 32;
  std::size_t k = 4;
  bool exclusion = true;
  // Weight MLP reads F + SelfAttn(F) instead of SelfAttn(F) alone.
  bool coarse_residual = true;
  // Fine scores are added to the candidates' coarse logits.
  bool fine_adds_coarse = true;
  // Multiplies w^T M before the softmax, like the logit scale applied to
  // cosine similarities in contrastive encoders. Argmax is unaffected.
  double logit_scale = 1.0;
};

struct PolicyModel {
  PolicyConfig config;
  nn::ParamStore params;

  static PolicyModel init(const PolicyConfig& cfg, std::uint64_t seed) {
    if (cfg.num_heads == 0 || cfg.dim % cfg.num_heads != 0) throw Error("policy: dim not divisible by num_heads");
    if (cfg.k == 0) throw Error("policy: k must be >= 1");
    std::mt19937_64 rng(mix_seed(seed, 0x706f6c6963ULL));
    PolicyModel m{cfg, {}};
    const std::size_t h = cfg.dim;
    auto& ps = m.params;
    ps.add("coarse.attn.wq", nn::glorot(h, h, rng));
    ps.add("coarse.attn.wk", nn::glorot(h, h, rng));
    ps.add("coarse.attn.wv", nn::glorot(h, h, rng));
    nn::add_mlp(ps, "coarse.mlp", {h, cfg.hidden, 1}, rng, true);
    {
      std::normal_distribution<double> gauss(0.0, 0.02);
      nn::Tensor type({2, h});
      for (double& x : type.data) x = gauss(rng);
      ps.add("fine.type", std::move(type));
    }
    ps.add("fine.fuse.wq", nn::glorot(h, h, rng));
    ps.add("fine.fuse.wk", nn::glorot(h, h, rng));
    ps.add("fine.fuse.wv", nn::glorot(h, h, rng));
    ps.add("fine.cross.wq", nn::glorot(h, h, rng));
    ps.add("fine.cross.wk", nn::glorot(h, h, rng));
    ps.add("fine.cross.wv", nn::glorot(h, h, rng));
    nn::add_mlp(ps, "fine.mlp", {h, cfg.hidden, 1}, rng, true);
    return m;
  }
};

// s_t in embedded form: t feedback embeddings, the t-1 recommended items'
// embeddings, and the database indices already recommended this episode.
struct PolicyState {
  std::vector<Embedding> feedback;
  std::vector<Embedding> actions;
  std::vector<std::size_t> excluded;

  std::size_t round() const { return feedback.size(); }

  void validate() const {
    if (feedback.empty()) throw Error("policy state: at least one feedback is required");
    if (actions.size() + 1 != feedback.size()) {
      throw Error("policy state: expected " + std::to_string(feedback.size() - 1) + " actions, got " +
                  std::to_string(actions.size()));
    }
  }
};

struct CandidateSet {
  std::vector<std::size_t> indices;   // database indices, descending coarse probability
  std::vector<Embedding> embeddings;
  std::vector<double> coarse_logits;  // w^T M at each candidate
  std::size_t size() const { return indices.size(); }
};

inline std::vector<bool> eligibility_mask(std::size_t n, std::span<const std::size_t> excluded, bool exclusion) {
  std::vector<bool> mask(n, true);
  if (exclusion) {
    for (std::size_t i : excluded) {
      if (i < n) mask[i] = false;
    }
  }
  return mask;
}

/// Indices of the k largest entries of `scores` among eligible ones, sorted
/// descending; ties go to the lower index.
inline std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k, const std::vector<bool>& mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask.empty() || mask[i]) idx.push_back(i);
  }
  auto better = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  const std::size_t take = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), better);
  idx.resize(take);
  return idx;
}

inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw Error("argmax: empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// The k highest-probability items not in `excluded`.
inline std::vector<std::size_t> select_candidates(std::span<const double> pi_c, std::size_t k,
                                                  std::span<const std::size_t> excluded) {
  if (k == 0) throw Error("select_candidates: k must be >= 1");
  auto mask = eligibility_mask(pi_c.size(), excluded, true);
  auto out = top_k(pi_c, k, mask);
  if (out.empty()) throw Error("select_candidates: no eligible item");
  return out;
}

struct ActionMode {
  enum class Kind { kGreedy, kEpsilon } kind = Kind::kGreedy;
  double epsilon = 1.0;
  std::mt19937_64* rng = nullptr;

  static ActionMode greedy() { return {}; }
  static ActionMode eps(double e, std::mt19937_64& r) { return {Kind::kEpsilon, e, &r}; }
};

// Greedy: argmax, lowest index on ties. Epsilon: the greedy action with
// probability epsilon, otherwise a uniform pick among the other actions with
// nonzero probability (epsilon = 1 is pure exploitation).
inline std::size_t select_action(std::span<const double> pi, const ActionMode& mode) {
  const std::size_t best = argmax(pi);
  if (mode.kind == ActionMode::Kind::kGreedy) return best;
  if (!mode.rng) throw Error("select_action: epsilon mode needs an rng");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (u01(*mode.rng) < mode.epsilon) return best;
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (i != best && pi[i] > 0.0) others.push_back(i);
  }
  if (others.empty()) return best;
  std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
  return others[pick(*mode.rng)];
}

inline nn::Tensor position_encoding(std::size_t len, std::size_t dim) {
  nn::Tensor pe({len, dim});
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      pe.at(p, i) = s * (i % 2 == 0 ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq));
    }
  }
  return pe;
}

// Graph-level forward pieces. Every function reads parameters through
// g.param(), so gradients reach the ParamStore entries.
namespace net {

inline nn::Var coarse_weights(nn::Graph& g, const PolicyModel& m, const PolicyState& s) {
  const auto& ps = m.params;
  nn::Var f = g.constant(nn::Tensor::from_rows(s.feedback));
  auto att = nn::self_attention(g, f, g.param(ps, "coarse.attn.wq"), g.param(ps, "coarse.attn.wk"),
                                g.param(ps, "coarse.attn.wv"), m.config.num_heads);
  nn::Var x = m.config.coarse_residual ? g.add(f, att.output) : att.output;
  return g.sigmoid(nn::mlp(g, x, nn::mlp_params(g, ps, "coarse.mlp", 2)));  // t x 1
}

// 1 x N coarse logits w^T M.
inline nn::Var coarse_logits(nn::Graph& g, nn::Var weights, const SimilarityMatrix& sims, double scale = 1.0) {
  nn::Var mat = g.constant(nn::Tensor({sims.rows, sims.cols}, sims.data));
  nn::Var z = g.matmul(g.transpose(weights), mat);
  return scale == 1.0 ? z : g.scale(z, scale);
}

inline nn::Var fuse_history(nn::Graph& g, const PolicyModel& m, const PolicyState& s) {
  const auto& ps = m.params;
  std::vector<Embedding> seq;
  std::vector<std::size_t> types;
  for (std::size_t i = 0; i < s.feedback.size(); ++i) {
    seq.push_back(s.feedback[i]);
    types.push_back(0);
    if (i < s.actions.size()) {
      seq.push_back(s.actions[i]);
      types.push_back(1);
    }
  }
  nn::Var x = g.constant(nn::Tensor::from_rows(seq));
  x = g.add(x, g.gather_rows(g.param(ps, "fine.type"), types));
  x = g.add(x, g.constant(position_encoding(seq.size(), m.config.dim)));
  return nn::self_attention(g, x, g.param(ps, "fine.fuse.wq"), g.param(ps, "fine.fuse.wk"),
                            g.param(ps, "fine.fuse.wv"), m.config.num_heads)
      .output;
}

// 1 x k fine logits. `coarse_at_candidates` (1 x k) is added when the model
// is configured to build on the coarse ranking.
inline nn::Var fine_logits(nn::Graph& g, const PolicyModel& m, nn::Var history, const CandidateSet& cands,
                           std::optional<nn::Var> coarse_at_candidates) {
  if (cands.size() == 0) throw Error("fine_distribution: empty candidate set");
  const auto& ps = m.params;
  nn::Var c = g.constant(nn::Tensor::from_rows(cands.embeddings));
  auto att = nn::cross_attention(g, c, history, g.param(ps, "fine.cross.wq"), g.param(ps, "fine.cross.wk"),
                                 g.param(ps, "fine.cross.wv"), m.config.num_heads);
  nn::Var scores = g.transpose(nn::mlp(g, att.output, nn::mlp_params(g, ps, "fine.mlp", 2)));
  if (m.config.fine_adds_coarse) {
    nn::Var base = coarse_at_candidates ? *coarse_at_candidates
                                        : g.constant(nn::Tensor::row(cands.coarse_logits));
    scores = g.add(scores, base);
  }
  return scores;
}

}  // namespace net

inline std::vector<double> exp_row(const nn::Tensor& logp) {
  std::vector<double> p(logp.numel());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logp.data[i]);
  return p;
}

inline CandidateSet make_candidates(std::span<const double> pi_c, std::span<const double> logits,
                                    const PolicyState& s, const ItemDatabase& db, std::size_t k, bool exclusion) {
  CandidateSet cs;
  auto mask = eligibility_mask(pi_c.size(), s.excluded, exclusion);
  cs.indices = top_k(pi_c, k, mask);
  if (cs.indices.empty()) throw Error("select_candidates: no eligible item");
  for (std::size_t i : cs.indices) {
    cs.embeddings.push_back(db.item(i).embedding);
    cs.coarse_logits.push_back(logits[i]);
  }
  return cs;
}

// One round of the full network recorded on a graph.
struct RoundForward {
  nn::Var weights;
  nn::Var coarse_logits;
  nn::Var coarse_logp;  // 1 x N, -inf at excluded items
  std::vector<double> pi_c;
  CandidateSet candidates;
  std::optional<nn::Var> fine_logp;  // 1 x k
  std::vector<double> pi_f;
};

inline RoundForward forward_round(nn::Graph& g, const PolicyModel& m, const PolicyState& s,
                                  const SimilarityMatrix& sims, const ItemDatabase& db, bool with_fine) {
  s.validate();
  if (sims.rows != s.feedback.size() || sims.cols != db.size()) throw Error("forward: similarity matrix shape");
  RoundForward r;
  r.weights = net::coarse_weights(g, m, s);
  r.coarse_logits = net::coarse_logits(g, r.weights, sims, m.config.logit_scale);
  auto mask = eligibility_mask(db.size(), s.excluded, m.config.exclusion);
  r.coarse_logp = g.log_softmax(r.coarse_logits, mask);
  r.pi_c = exp_row(g.value(r.coarse_logp));
  r.candidates = make_candidates(r.pi_c, g.value(r.coarse_logits).data, s, db, m.config.k, m.config.exclusion);
  if (with_fine) {
    nn::Var h = net::fuse_history(g, m, s);
    nn::Var base = g.select_cols(r.coarse_logits, r.candidates.indices);
    r.fine_logp = g.log_softmax(net::fine_logits(g, m, h, r.candidates, base));
    r.pi_f = exp_row(g.value(*r.fine_logp));
  }
  return r;
}

// ---- tensor-level operations ----------------------------------------------

inline std::vector<double> coarse_weights(const PolicyState& s, const PolicyModel& m) {
  s.validate();
  nn::Graph g;
  return g.value(net::coarse_weights(g, m, s)).data;
}

inline std::vector<double> coarse_distribution(const PolicyState& s, const PolicyModel& m, const ItemDatabase& db) {
  s.validate();
  auto sims = similarity_matrix(s.feedback, db);
  nn::Graph g;
  nn::Var logits = net::coarse_logits(g, net::coarse_weights(g, m, s), sims, m.config.logit_scale);
  auto mask = eligibility_mask(db.size(), s.excluded, m.config.exclusion);
  return exp_row(g.value(g.log_softmax(logits, mask)));
}

inline nn::Tensor fuse_history(const PolicyState& s, const PolicyModel& m) {
  s.validate();
  nn::Graph g;
  return g.value(net::fuse_history(g, m, s));
}

inline std::vector<double> fine_distribution(const nn::Tensor& history, const CandidateSet& cands,
                                             const PolicyModel& m) {
  nn::Graph g;
  nn::Var logits = net::fine_logits(g, m, g.constant(history), cands, std::nullopt);
  return exp_row(g.value(g.log_softmax(logits)));
}

}  // namespace decor
