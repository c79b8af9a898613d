// Seed-paired evaluation of learned and baseline policies: recall@k,
// per-round success curves, coarse weight reports and the reward/return
// ablation.
#pragma once

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "decor/rollout.hpp"
#include "decor/trainer.hpp"

namespace decor {

struct EvalConfig {
  std::size_t episodes = 2000;
  std::size_t t_max = 10;
  std::vector<std::size_t> ks{1, 2};
  PolicyKind kind = PolicyKind::kGreedy;
  std::uint64_t seed = 2024;
  std::size_t k = 4;
  bool exclusion = true;
  std::size_t threads = 1;

  void validate() const {
    if (episodes == 0) throw Error("eval: episodes must be >= 1");
    if (t_max == 0) throw Error("eval: max rounds must be >= 1");
    if (ks.empty()) throw Error("eval: no recall cutoffs");
    for (std::size_t x : ks) {
      if (x == 0) throw Error("eval: recall cutoff must be >= 1");
    }
  }

  std::size_t max_k() const { return *std::max_element(ks.begin(), ks.end()); }
};

// Outcome of one evaluation episode. target_pos[t] is the 1-based position
// of the target in round t's ranking, 0 when absent.
struct EpisodeOutcome {
  std::size_t target = 0;
  std::vector<std::size_t> target_pos;
  std::vector<std::size_t> actions;
  bool success = false;

  std::size_t rounds() const { return target_pos.size(); }
  // 1-based round of success, 0 if none.
  std::size_t success_round() const {
    for (std::size_t t = 0; t < target_pos.size(); ++t) {
      if (target_pos[t] == 1) return t + 1;
    }
    return 0;
  }
  // 1-based first round with the target in the top k, 0 if none.
  std::size_t first_hit(std::size_t k) const {
    for (std::size_t t = 0; t < target_pos.size(); ++t) {
      if (target_pos[t] >= 1 && target_pos[t] <= k) return t + 1;
    }
    return 0;
  }
};

inline double recall_at_k(std::span<const EpisodeOutcome> outcomes, std::size_t k) {
  if (outcomes.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& o : outcomes) hits += o.first_hit(k) > 0 ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

// Entry t-1 is the fraction of episodes that succeeded within t rounds.
inline std::vector<double> per_round_curve(std::span<const EpisodeOutcome> outcomes, std::size_t t_max) {
  std::vector<double> curve(t_max, 0.0);
  if (outcomes.empty()) return curve;
  for (const auto& o : outcomes) {
    const std::size_t r = o.success_round();
    if (r == 0) continue;
    for (std::size_t t = r; t <= t_max; ++t) curve[t - 1] += 1.0;
  }
  for (double& c : curve) c /= static_cast<double>(outcomes.size());
  return curve;
}

struct EvalResult {
  std::string policy;
  EvalConfig config;
  std::map<std::size_t, double> recall;
  std::vector<double> curve;
  double mean_rounds_to_success = 0.0;
  std::vector<EpisodeOutcome> outcomes;
};

inline EpisodeOutcome outcome_of(const EpisodeTrace& tr) {
  EpisodeOutcome o;
  o.target = tr.target.value_or(0);
  o.success = tr.success;
  for (const auto& r : tr.rounds) {
    o.actions.push_back(r.action);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < r.ranking.size(); ++i) {
      if (tr.target && r.ranking[i] == *tr.target) {
        pos = i + 1;
        break;
      }
    }
    o.target_pos.push_back(pos);
  }
  return o;
}

inline EvalResult summarize(std::string policy, const EvalConfig& cfg, std::vector<EpisodeOutcome> outcomes) {
  EvalResult r;
  r.policy = std::move(policy);
  r.config = cfg;
  for (std::size_t k : cfg.ks) r.recall[k] = recall_at_k(outcomes, k);
  r.curve = per_round_curve(outcomes, cfg.t_max);
  double rounds = 0.0;
  std::size_t n = 0;
  for (const auto& o : outcomes) {
    if (const auto s = o.success_round()) {
      rounds += static_cast<double>(s);
      ++n;
    }
  }
  r.mean_rounds_to_success = n ? rounds / static_cast<double>(n) : 0.0;
  r.outcomes = std::move(outcomes);
  return r;
}

// Every policy sees the same episode i: target, opening request and the
// simulator's random stream all derive from (seed, i). Actions are greedy.
inline EvalResult run_policy(const EvalConfig& cfg, const ItemDatabase& db, const TextEncoder& encoder,
                             SimulatorConfig sim_cfg, const PolicyModel* model) {
  cfg.validate();
  if (is_learned(cfg.kind) && !model) throw Error("eval: policy " + std::string(to_string(cfg.kind)) + " needs a model");
  sim_cfg.t_max = cfg.t_max;
  Simulator sim(db, encoder, sim_cfg);
  AgentConfig agent{cfg.kind, cfg.k, cfg.exclusion, cfg.max_k()};
  std::vector<EpisodeOutcome> outcomes(cfg.episodes);
  parallel_for(cfg.episodes, cfg.threads, [&](std::size_t i) {
    auto sim_rng = episode_rng(cfg.seed, i, 0);
    auto pol_rng = episode_rng(cfg.seed, i, 1);
    SimulatedUser user(sim, sample_target(db, sim_rng), sim_rng);
    nn::Graph g;
    auto tr = rollout(agent, model, user, sim.encoder(), db, ActionMode::greedy(), pol_rng, g, 1.0, cfg.t_max);
    outcomes[i] = outcome_of(tr);
  });
  return summarize(to_string(cfg.kind), cfg, std::move(outcomes));
}

inline std::string fmt_double(double x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

inline nlohmann::json report_json(const EvalResult& r) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : r.recall) recall["r@" + std::to_string(k)] = v;
  return {{"policy", r.policy},
          {"episodes", r.config.episodes},
          {"max_rounds", r.config.t_max},
          {"seed", r.config.seed},
          {"k", r.config.k},
          {"exclusion", r.config.exclusion},
          {"recall", recall},
          {"curve", r.curve},
          {"mean_rounds_to_success", r.mean_rounds_to_success},
          {"metadata",
           {{"recall_definition", "target among the policy's k highest-ranked eligible actions at any round"},
            {"seed_paired", true},
            {"action_selection", "greedy"}}}};
}

inline std::string report_table(std::span<const EvalResult> results) {
  std::ostringstream os;
  std::vector<std::size_t> ks;
  if (!results.empty()) ks = results.front().config.ks;
  os << "policy               ";
  for (std::size_t k : ks) os << "  r@" << k << "    ";
  os << "  rounds\n";
  for (const auto& r : results) {
    std::string name = r.policy;
    name.resize(std::max<std::size_t>(name.size(), 21), ' ');
    os << name;
    for (std::size_t k : ks) os << "  " << fmt_double(100.0 * r.recall.at(k), 2) << "%";
    os << "  " << fmt_double(r.mean_rounds_to_success, 2) << "\n";
  }
  return os.str();
}

inline std::string outcomes_csv(const EvalResult& r, const ItemDatabase& db) {
  std::ostringstream os;
  os << "episode,target,success,rounds,success_round";
  for (std::size_t k : r.config.ks) os << ",first_hit_k" << k;
  os << "\n";
  for (std::size_t i = 0; i < r.outcomes.size(); ++i) {
    const auto& o = r.outcomes[i];
    os << i << "," << db.item(o.target).id << "," << (o.success ? 1 : 0) << "," << o.rounds() << ","
       << o.success_round();
    for (std::size_t k : r.config.ks) os << "," << o.first_hit(k);
    os << "\n";
  }
  return os.str();
}

// ---- weight analysis --------------------------------------------------------

struct WeightRow {
  std::string text;
  double weight = 0.0;
  double baseline = 1.0;  // equal-weight greedy
};

inline std::vector<std::string> default_weight_fixtures(const ItemDatabase& db) {
  const auto& d = db.dictionary();
  if (d.size() < 4) throw Error("weight fixtures need at least four attributes");
  return {d[0], "a room with " + d[0] + " and " + d[1],
          "a spacious room with " + d[0] + ", " + d[1] + ", " + d[2] + " and " + d[3]};
}

// Coarse weights of the fixtures read as one feedback sequence; the
// intervening recommendations are the greedy choices of the model itself.
inline std::vector<WeightRow> weight_report(const PolicyModel& model, const ItemDatabase& db,
                                            const TextEncoder& encoder, std::span<const std::string> fixtures) {
  if (fixtures.empty()) throw Error("weight report: no fixtures");
  AgentState st;
  AgentConfig agent{PolicyKind::kCoarseOnly, model.config.k, model.config.exclusion, 1};
  std::mt19937_64 rng(0);
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    if (i > 0) {
      nn::Graph g;
      st.add_action(decide(agent, &model, st, db, ActionMode::greedy(), rng, g).action, db);
    }
    st.add_feedback(encoder.encode(fixtures[i]), db);
  }
  auto w = coarse_weights(st.policy, model);
  std::vector<WeightRow> rows;
  for (std::size_t i = 0; i < fixtures.size(); ++i) rows.push_back({fixtures[i], w[i], 1.0});
  return rows;
}

// ---- reward vs return ablation ----------------------------------------------

struct AblationRow {
  std::string loss;  // "loss_c" | "loss_cf"
  double gamma = 0.0;
  std::uint64_t seed = 0;
  double recall1 = 0.0;
};

inline std::vector<AblationRow> ablation_reward_vs_return(const TrainConfig& base, const ItemDatabase& db,
                                                          const TextEncoder& encoder, const EvalConfig& eval,
                                                          std::span<const std::uint64_t> seeds) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (PolicyKind mode : {PolicyKind::kCoarseOnly, PolicyKind::kCoarseFine}) {
      for (double gamma : {0.0, base.gamma}) {
        TrainConfig c = base;
        c.seed = seed;
        c.mode = mode;
        c.gamma = gamma;
        Simulator sim(db, encoder, c.simulator);
        auto model = train(c, db, sim).model;
        nn::round_to_float(model.params);
        EvalConfig ec = eval;
        ec.kind = mode;
        auto r = run_policy(ec, db, encoder, c.simulator, &model);
        rows.push_back({mode == PolicyKind::kCoarseOnly ? "loss_c" : "loss_cf", gamma, seed, r.recall.at(1)});
      }
    }
  }
  return rows;
}

}  // namespace decor
