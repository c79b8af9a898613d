// Agents (learned and baseline), feedback sources and the episode loop
// shared by training, evaluation and the session service.
#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "decor/embedding.hpp"
#include "decor/policy.hpp"
#include "decor/simulator.hpp"

namespace decor {

enum class PolicyKind { kRandom, kGreedy, kGreedyTopkRandom, kCoarseOnly, kCoarseFine };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kRandom: return "random";
    case PolicyKind::kGreedy: return "greedy";
    case PolicyKind::kGreedyTopkRandom: return "greedy_topk_random";
    case PolicyKind::kCoarseOnly: return "coarse_only";
    case PolicyKind::kCoarseFine: return "coarse_fine";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
  for (auto k : {PolicyKind::kRandom, PolicyKind::kGreedy, PolicyKind::kGreedyTopkRandom, PolicyKind::kCoarseOnly,
                 PolicyKind::kCoarseFine}) {
    if (s == to_string(k)) return k;
  }
  throw Error("unknown policy kind '" + std::string(s) + "'");
}

inline bool is_learned(PolicyKind k) { return k == PolicyKind::kCoarseOnly || k == PolicyKind::kCoarseFine; }

struct AgentConfig {
  PolicyKind kind = PolicyKind::kCoarseFine;
  std::size_t k = 4;
  bool exclusion = true;
  std::size_t rank_depth = 2;  // length of the recorded per-round ranking
};

// Running policy input: the embedded state plus its similarity matrix,
// grown one row per feedback.
struct AgentState {
  PolicyState policy;
  SimilarityMatrix sims;

  void add_feedback(Embedding e, const ItemDatabase& db) {
    auto row = similarity_row(e, db);
    if (sims.rows == 0) sims.cols = db.size();
    sims.data.insert(sims.data.end(), row.begin(), row.end());
    ++sims.rows;
    policy.feedback.push_back(std::move(e));
  }

  void add_action(std::size_t index, const ItemDatabase& db) {
    policy.actions.push_back(db.item(index).embedding);
    policy.excluded.push_back(index);
  }
};

struct Decision {
  std::size_t action = 0;
  std::vector<std::size_t> ranking;  // action's ranking, most preferred first
  std::optional<nn::Var> coarse_logp;  // log pi_c(action)
  std::optional<nn::Var> fine_logp;    // log pi_f(action)
  std::vector<double> weights;         // coarse feedback weights (learned kinds)
};

inline std::vector<double> equal_weight_scores(const SimilarityMatrix& sims) {
  std::vector<double> s(sims.cols, 0.0);
  for (std::size_t i = 0; i < sims.rows; ++i) {
    for (std::size_t j = 0; j < sims.cols; ++j) s[j] += sims(i, j);
  }
  return s;
}

// Moves `first` to the front of `order`, keeping the rest in place.
inline void move_to_front(std::vector<std::size_t>& order, std::size_t first) {
  auto it = std::find(order.begin(), order.end(), first);
  if (it == order.end()) {
    order.insert(order.begin(), first);
  } else {
    std::rotate(order.begin(), it, it + 1);
  }
}

// One decision. `g` records the learned networks (log-probs are returned as
// graph nodes); `mode` is greedy at evaluation and epsilon during training.
// Learned kinds explore inside the candidate set.
inline Decision decide(const AgentConfig& cfg, const PolicyModel* model, const AgentState& st,
                       const ItemDatabase& db, const ActionMode& mode, std::mt19937_64& rng, nn::Graph& g) {
  Decision d;
  const auto mask = eligibility_mask(db.size(), st.policy.excluded, cfg.exclusion);
  const std::size_t depth = std::max(cfg.rank_depth, std::size_t{1});
  switch (cfg.kind) {
    case PolicyKind::kRandom: {
      std::vector<std::size_t> eligible;
      for (std::size_t i = 0; i < db.size(); ++i) {
        if (mask[i]) eligible.push_back(i);
      }
      if (eligible.empty()) throw Error("agent: no eligible item");
      const std::size_t n = std::min(depth, eligible.size());
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
        std::swap(eligible[i], eligible[pick(rng)]);
      }
      eligible.resize(n);
      d.ranking = eligible;
      d.action = d.ranking.front();
      return d;
    }
    case PolicyKind::kGreedy:
    case PolicyKind::kGreedyTopkRandom: {
      const auto scores = equal_weight_scores(st.sims);
      d.ranking = top_k(scores, std::max(depth, cfg.k), mask);
      if (d.ranking.empty()) throw Error("agent: no eligible item");
      d.action = d.ranking.front();
      if (cfg.kind == PolicyKind::kGreedyTopkRandom) {
        const std::size_t n = std::min(cfg.k, d.ranking.size());
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        d.action = d.ranking[pick(rng)];
        move_to_front(d.ranking, d.action);
      }
      d.ranking.resize(std::min(depth, d.ranking.size()));
      return d;
    }
    case PolicyKind::kCoarseOnly:
    case PolicyKind::kCoarseFine: break;
  }
  if (!model) throw Error("agent: learned policy requires a model");
  const PolicyModel* mp = model;
  PolicyModel local;
  if (model->config.k != cfg.k || model->config.exclusion != cfg.exclusion) {
    local = *model;
    local.config.k = cfg.k;
    local.config.exclusion = cfg.exclusion;
    mp = &local;
  }
  const PolicyModel& m = *mp;
  const bool fine = cfg.kind == PolicyKind::kCoarseFine;
  RoundForward r = forward_round(g, m, st.policy, st.sims, db, fine);
  d.weights = g.value(r.weights).data;
  const auto& cand = r.candidates.indices;
  std::size_t pos = 0;
  if (fine) {
    pos = select_action(r.pi_f, mode);
  } else {
    std::vector<double> restricted;
    for (std::size_t i : cand) restricted.push_back(r.pi_c[i]);
    pos = select_action(restricted, mode);
  }
  d.action = cand[pos];
  d.coarse_logp = g.pick(r.coarse_logp, 0, d.action);
  if (fine) {
    d.fine_logp = g.pick(*r.fine_logp, 0, pos);
    std::vector<std::size_t> order(cand.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.pi_f[a] > r.pi_f[b]; });
    for (std::size_t i : order) d.ranking.push_back(cand[i]);
  } else {
    d.ranking = cand;
  }
  move_to_front(d.ranking, d.action);
  if (d.ranking.size() < depth) {
    for (std::size_t i : top_k(r.pi_c, depth + d.ranking.size(), mask)) {
      if (d.ranking.size() >= depth) break;
      if (std::find(d.ranking.begin(), d.ranking.end(), i) == d.ranking.end()) d.ranking.push_back(i);
    }
  }
  d.ranking.resize(std::min(depth, d.ranking.size()));
  return d;
}

// ---- feedback sources -------------------------------------------------------

struct Response {
  std::vector<std::string> feedback;  // empty once done
  double reward = 0.0;
  std::size_t rank = 0;
  bool done = false;
  DoneReason reason = DoneReason::kNone;
  std::vector<FeedbackEvent> events;
};

class FeedbackSource {
 public:
  virtual ~FeedbackSource() = default;
  virtual std::string begin() = 0;
  virtual Response respond(std::size_t action) = 0;
  virtual std::optional<std::size_t> target() const { return std::nullopt; }
};

// The simulated user for one episode.
class SimulatedUser final : public FeedbackSource {
 public:
  SimulatedUser(const Simulator& sim, std::size_t target, std::mt19937_64& rng)
      : sim_(&sim), rng_(&rng), target_(target) {}

  std::string begin() override {
    ctx_ = sim_->start(target_, *rng_);
    return ctx_.initial_request;
  }

  Response respond(std::size_t action) override {
    StepResult s = sim_->step(ctx_, action, *rng_);
    Response r;
    r.reward = s.reward;
    r.rank = s.rank;
    r.done = s.done;
    r.reason = ctx_.reason;
    for (const auto& f : s.feedback) r.feedback.push_back(f.text);
    r.events = std::move(s.feedback);
    return r;
  }

  std::optional<std::size_t> target() const override { return target_; }
  const EpisodeContext& context() const { return ctx_; }

 private:
  const Simulator* sim_;
  std::mt19937_64* rng_;
  std::size_t target_;
  EpisodeContext ctx_;
};

// Fixed request and feedback sequence, e.g. a recorded live session. Ends
// when the script runs out or the round limit is reached.
class ScriptedUser final : public FeedbackSource {
 public:
  ScriptedUser(std::string request, std::vector<std::string> feedback, std::size_t t_max)
      : request_(std::move(request)), feedback_(std::move(feedback)), t_max_(t_max) {}

  std::string begin() override {
    next_ = 0;
    return request_;
  }

  Response respond(std::size_t) override {
    Response r;
    if (next_ >= feedback_.size() || next_ + 1 >= t_max_) {
      r.done = true;
      r.reason = DoneReason::kExhausted;
      return r;
    }
    r.feedback.push_back(feedback_[next_++]);
    return r;
  }

 private:
  std::string request_;
  std::vector<std::string> feedback_;
  std::size_t t_max_;
  std::size_t next_ = 0;
};

// Several sentences in one round are merged into their normalized mean.
inline Embedding encode_feedback(const std::vector<std::string>& texts, const TextEncoder& enc) {
  if (texts.empty()) throw Error("encode_feedback: no text");
  if (texts.size() == 1) return enc.encode(texts.front());
  std::vector<double> acc;
  for (const auto& t : texts) {
    Embedding e = enc.encode(t);
    const double n = norm(e.values);
    if (acc.empty()) acc.assign(e.dim(), 0.0);
    for (std::size_t i = 0; i < e.dim(); ++i) acc[i] += e.values[i] / n;
  }
  detail::normalize(acc);
  return Embedding(std::vector<float>(acc.begin(), acc.end()));
}

// ---- episode loop -----------------------------------------------------------

struct RoundRecord {
  std::size_t action = 0;
  std::vector<std::size_t> ranking;
  std::vector<std::string> feedback;  // given after this action
  double reward = 0.0;
  double ret = 0.0;
  std::size_t rank = 0;
  double coarse_logp = 0.0;
  double fine_logp = 0.0;
  std::vector<double> weights;
};

struct EpisodeTrace {
  std::optional<std::size_t> target;
  std::string request;
  std::vector<RoundRecord> rounds;
  bool success = false;
  DoneReason reason = DoneReason::kNone;
  // Graph nodes of log pi_c(a_t), log pi_f(a_t), when recorded.
  std::vector<nn::Var> coarse_nodes;
  std::vector<nn::Var> fine_nodes;

  std::size_t length() const { return rounds.size(); }
  std::vector<double> rewards() const {
    std::vector<double> r;
    for (const auto& x : rounds) r.push_back(x.reward);
    return r;
  }
};

inline std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw Error("discounted_returns: gamma must lie in [0, 1]");
  std::vector<double> v(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    v[t] = acc;
  }
  return v;
}

// Runs one episode to termination. `policy_rng` drives exploration and the
// random baselines; the source owns its own randomness.
inline EpisodeTrace rollout(const AgentConfig& cfg, const PolicyModel* model, FeedbackSource& user,
                            const TextEncoder& encoder, const ItemDatabase& db, const ActionMode& mode,
                            std::mt19937_64& policy_rng, nn::Graph& g, double gamma, std::size_t max_rounds) {
  EpisodeTrace tr;
  tr.target = user.target();
  tr.request = user.begin();
  AgentState st;
  st.add_feedback(encoder.encode(tr.request), db);
  for (std::size_t t = 0; t < max_rounds; ++t) {
    Decision d = decide(cfg, model, st, db, mode, policy_rng, g);
    Response resp = user.respond(d.action);
    RoundRecord rec;
    rec.action = d.action;
    rec.ranking = std::move(d.ranking);
    rec.reward = resp.reward;
    rec.rank = resp.rank;
    rec.weights = std::move(d.weights);
    rec.feedback = resp.feedback;
    if (d.coarse_logp) {
      rec.coarse_logp = g.value(*d.coarse_logp).item();
      tr.coarse_nodes.push_back(*d.coarse_logp);
    }
    if (d.fine_logp) {
      rec.fine_logp = g.value(*d.fine_logp).item();
      tr.fine_nodes.push_back(*d.fine_logp);
    }
    tr.rounds.push_back(std::move(rec));
    if (resp.done) {
      tr.reason = resp.reason;
      tr.success = resp.reason == DoneReason::kSuccess;
      break;
    }
    st.add_action(d.action, db);
    st.add_feedback(encode_feedback(resp.feedback, encoder), db);
  }
  auto v = discounted_returns(tr.rewards(), gamma);
  for (std::size_t t = 0; t < v.size(); ++t) tr.rounds[t].ret = v[t];
  return tr;
}

}  // namespace decor
