// REINFORCE training of the coarse-to-fine policy against the simulator.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "decor/config_file.hpp"
#include "decor/nn/param_store.hpp"
#include "decor/rollout.hpp"

namespace decor {

enum class LossKind { kCoarse, kCoarseFine };

struct TrainConfig {
  double epsilon = 0.8;
  double gamma = 0.8;
  double alpha = 0.1;
  std::size_t k = 4;
  double lr = 1e-5;
  std::size_t t_max = 10;
  std::size_t episodes = 0;
  std::size_t batch_episodes = 16;
  std::uint64_t seed = 1;
  bool exclusion = true;
  bool standardize_returns = false;
  PolicyKind mode = PolicyKind::kCoarseFine;
  double clip_norm = 5.0;
  std::size_t threads = 1;
  std::size_t epoch_episodes = 1024;
  // Episodes trained with the coarse loss alone before the main phase.
  std::size_t coarse_pretrain_episodes = 0;
  PolicyConfig policy;
  SimulatorConfig simulator;

  void validate() const {
    auto unit = [](double x, const char* what) {
      if (!(x >= 0.0 && x <= 1.0)) throw Error(std::string("train config: ") + what + " must lie in [0, 1]");
    };
    unit(epsilon, "epsilon");
    unit(gamma, "gamma");
    unit(alpha, "alpha");
    if (k == 0) throw Error("train config: k must be >= 1");
    if (!(lr > 0.0)) throw Error("train config: lr must be > 0");
    if (t_max == 0) throw Error("train config: t_max must be >= 1");
    if (batch_episodes == 0) throw Error("train config: batch_episodes must be >= 1");
    if (!is_learned(mode)) throw Error("train config: mode must be coarse_only or coarse_fine");
    if (!(clip_norm > 0.0)) throw Error("train config: clip_norm must be > 0");
    if (epoch_episodes == 0) throw Error("train config: epoch_episodes must be >= 1");
  }

  LossKind loss() const { return mode == PolicyKind::kCoarseOnly ? LossKind::kCoarse : LossKind::kCoarseFine; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["train"] = {{"epsilon", c.epsilon},
                {"gamma", c.gamma},
                {"alpha", c.alpha},
                {"k", c.k},
                {"lr", c.lr},
                {"t_max", c.t_max},
                {"episodes", c.episodes},
                {"batch_episodes", c.batch_episodes},
                {"seed", c.seed},
                {"exclusion", c.exclusion},
                {"standardize_returns", c.standardize_returns},
                {"mode", to_string(c.mode)},
                {"clip_norm", c.clip_norm},
                {"threads", c.threads},
                {"epoch_episodes", c.epoch_episodes},
                {"coarse_pretrain_episodes", c.coarse_pretrain_episodes}};
  j["policy"] = {{"num_heads", c.policy.num_heads},
                 {"hidden", c.policy.hidden},
                 {"coarse_residual", c.policy.coarse_residual},
                 {"fine_adds_coarse", c.policy.fine_adds_coarse},
                 {"logit_scale", c.policy.logit_scale}};
  const auto& s = c.simulator;
  j["simulator"] = {{"thresholds", s.thresholds},
                    {"contrast_margin", s.contrast_margin},
                    {"success_reward", s.success_reward},
                    {"prefer_template", s.prefer_template},
                    {"dislike_template", s.dislike_template},
                    {"feedback_per_round", s.feedback_per_round},
                    {"sentence_source", s.source == SentenceSource::kGenerated ? "generated" : "manifest"},
                    {"detect_top_m", s.detect_top_m},
                    {"request_max_tags", s.request_max_tags}};
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto check_keys = [](const nlohmann::json& obj, const nlohmann::json& known, const std::string& section) {
    if (!obj.is_object()) throw Error("config: [" + section + "] must be a table");
    for (const auto& [key, _] : obj.items()) {
      if (!known.contains(key)) throw Error("config: unknown key '" + key + "' in [" + section + "]");
    }
  };
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw Error("config: unknown section [" + key + "]");
  }
  try {
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, defaults["train"], "train");
      c.epsilon = t.value("epsilon", c.epsilon);
      c.gamma = t.value("gamma", c.gamma);
      c.alpha = t.value("alpha", c.alpha);
      c.k = t.value("k", c.k);
      c.lr = t.value("lr", c.lr);
      c.t_max = t.value("t_max", c.t_max);
      c.episodes = t.value("episodes", c.episodes);
      c.batch_episodes = t.value("batch_episodes", c.batch_episodes);
      c.seed = t.value("seed", c.seed);
      c.exclusion = t.value("exclusion", c.exclusion);
      c.standardize_returns = t.value("standardize_returns", c.standardize_returns);
      if (t.contains("mode")) c.mode = parse_policy_kind(t["mode"].get<std::string>());
      c.clip_norm = t.value("clip_norm", c.clip_norm);
      c.threads = t.value("threads", c.threads);
      c.epoch_episodes = t.value("epoch_episodes", c.epoch_episodes);
      c.coarse_pretrain_episodes = t.value("coarse_pretrain_episodes", c.coarse_pretrain_episodes);
    }
    if (j.contains("policy")) {
      const auto& p = j["policy"];
      check_keys(p, defaults["policy"], "policy");
      c.policy.num_heads = p.value("num_heads", c.policy.num_heads);
      c.policy.hidden = p.value("hidden", c.policy.hidden);
      c.policy.coarse_residual = p.value("coarse_residual", c.policy.coarse_residual);
      c.policy.fine_adds_coarse = p.value("fine_adds_coarse", c.policy.fine_adds_coarse);
      c.policy.logit_scale = p.value("logit_scale", c.policy.logit_scale);
    }
    if (j.contains("simulator")) {
      const auto& s = j["simulator"];
      check_keys(s, defaults["simulator"], "simulator");
      auto& sc = c.simulator;
      if (s.contains("thresholds")) {
        auto v = s["thresholds"].get<std::vector<std::size_t>>();
        if (v.size() != 4) throw Error("config: simulator.thresholds needs four entries");
        std::copy(v.begin(), v.end(), sc.thresholds.begin());
      }
      sc.contrast_margin = s.value("contrast_margin", sc.contrast_margin);
      sc.success_reward = s.value("success_reward", sc.success_reward);
      sc.prefer_template = s.value("prefer_template", sc.prefer_template);
      sc.dislike_template = s.value("dislike_template", sc.dislike_template);
      sc.feedback_per_round = s.value("feedback_per_round", sc.feedback_per_round);
      sc.detect_top_m = s.value("detect_top_m", sc.detect_top_m);
      sc.request_max_tags = s.value("request_max_tags", sc.request_max_tags);
      if (s.contains("sentence_source")) {
        const auto src = s["sentence_source"].get<std::string>();
        if (src == "manifest") {
          sc.source = SentenceSource::kManifest;
        } else if (src == "generated") {
          sc.source = SentenceSource::kGenerated;
        } else {
          throw Error("config: sentence_source must be 'manifest' or 'generated'");
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.policy.k = c.k;
  c.policy.exclusion = c.exclusion;
  c.simulator.t_max = c.t_max;
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  return train_config_from_json(load_config_document(path));
}

// ---- losses -----------------------------------------------------------------

// Per-round policy-gradient coefficients: the loss of an episode is
// -sum_t (a_c * log pi_c + a_f * log pi_f) * v_t.
inline std::pair<double, double> loss_coefficients(LossKind kind, double alpha) {
  return kind == LossKind::kCoarse ? std::pair{1.0, 0.0} : std::pair{alpha, 1.0};
}

// Recorded episode loss, multiplied by `scale` (1/B for the batch mean).
inline nn::Var episode_loss(nn::Graph& g, const EpisodeTrace& tr, std::span<const double> returns, LossKind kind,
                            double alpha, double scale) {
  if (returns.size() != tr.length()) throw Error("episode_loss: returns do not match the trace");
  const auto [ac, af] = loss_coefficients(kind, alpha);
  if (tr.coarse_nodes.size() != tr.length()) throw Error("episode_loss: trace lacks coarse log-probabilities");
  if (af != 0.0 && tr.fine_nodes.size() != tr.length()) throw Error("episode_loss: trace lacks fine log-probabilities");
  std::optional<nn::Var> total;
  for (std::size_t t = 0; t < tr.length(); ++t) {
    nn::Var term = g.scale(tr.coarse_nodes[t], -ac * returns[t] * scale);
    if (af != 0.0) term = g.add(term, g.scale(tr.fine_nodes[t], -af * returns[t] * scale));
    total = total ? g.add(*total, term) : term;
  }
  if (!total) throw Error("episode_loss: empty trace");
  return *total;
}

inline double episode_loss_value(const EpisodeTrace& tr, std::span<const double> returns, LossKind kind,
                                 double alpha) {
  const auto [ac, af] = loss_coefficients(kind, alpha);
  double l = 0.0;
  for (std::size_t t = 0; t < tr.length(); ++t) {
    l -= (ac * tr.rounds[t].coarse_logp + af * tr.rounds[t].fine_logp) * returns[t];
  }
  return l;
}

inline std::vector<double> trace_returns(const EpisodeTrace& tr) {
  std::vector<double> v;
  for (const auto& r : tr.rounds) v.push_back(r.ret);
  return v;
}

// Batch-mean losses over recorded traces.
inline double loss_coarse(std::span<const EpisodeTrace> traces) {
  if (traces.empty()) throw Error("loss_coarse: no traces");
  double s = 0.0;
  for (const auto& tr : traces) s += episode_loss_value(tr, trace_returns(tr), LossKind::kCoarse, 0.0);
  return s / static_cast<double>(traces.size());
}

inline double loss_cf(std::span<const EpisodeTrace> traces, double alpha) {
  if (traces.empty()) throw Error("loss_cf: no traces");
  double s = 0.0;
  for (const auto& tr : traces) s += episode_loss_value(tr, trace_returns(tr), LossKind::kCoarseFine, alpha);
  return s / static_cast<double>(traces.size());
}

// ---- training loop ------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t episodes = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double loss = 0.0;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"episodes", m.episodes},
          {"success_rate", m.success_rate},
          {"mean_return", m.mean_return},
          {"loss", m.loss}};
}

// Runs fn(i) for i in [0, n) over `threads` workers; every index is
// processed exactly once and results go to caller-owned slots, so the
// outcome does not depend on the thread count.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Per-episode random streams: the simulator's (target, request, feedback)
// and the agent's (exploration) are separate, so baselines and learned
// policies see the same targets.
inline std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t episode, std::uint64_t stream) {
  return std::mt19937_64(mix_seed(mix_seed(seed, episode), stream));
}

struct TrainResult {
  PolicyModel model;
  std::vector<EpochMetrics> epochs;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

inline TrainResult train(const TrainConfig& cfg_in, const ItemDatabase& db, const Simulator& sim,
                         std::optional<PolicyModel> init = std::nullopt, const EpochCallback& on_epoch = {}) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  cfg.policy.dim = db.dim();
  cfg.policy.k = cfg.k;
  cfg.policy.exclusion = cfg.exclusion;
  TrainResult out{init ? std::move(*init) : PolicyModel::init(cfg.policy, cfg.seed), {}};
  PolicyModel& model = out.model;
  nn::Adam adam(nn::AdamConfig{cfg.lr});
  const TextEncoder& enc = sim.encoder();

  EpochMetrics acc;
  std::size_t in_epoch = 0;
  std::size_t loss_batches = 0;
  auto flush = [&](bool force) {
    if (in_epoch == 0 || (!force && in_epoch < cfg.epoch_episodes)) return;
    acc.success_rate /= static_cast<double>(in_epoch);
    acc.mean_return /= static_cast<double>(in_epoch);
    acc.loss /= static_cast<double>(std::max<std::size_t>(loss_batches, 1));
    out.epochs.push_back(acc);
    if (on_epoch) on_epoch(acc);
    const std::size_t done = acc.episodes;
    acc = EpochMetrics{};
    acc.epoch = out.epochs.size();
    acc.episodes = done;
    in_epoch = 0;
    loss_batches = 0;
  };

  for (std::size_t start = 0; start < cfg.episodes; start += cfg.batch_episodes) {
    const std::size_t n = std::min(cfg.batch_episodes, cfg.episodes - start);
    const bool pretrain = start < cfg.coarse_pretrain_episodes;
    AgentConfig agent{pretrain ? PolicyKind::kCoarseOnly : cfg.mode, cfg.k, cfg.exclusion, 1};
    const LossKind kind = pretrain ? LossKind::kCoarse : cfg.loss();

    std::vector<std::unique_ptr<nn::Graph>> graphs(n);
    std::vector<EpisodeTrace> traces(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      const std::size_t ep = start + i;
      auto sim_rng = episode_rng(cfg.seed, ep, 0);
      auto pol_rng = episode_rng(cfg.seed, ep, 1);
      graphs[i] = std::make_unique<nn::Graph>();
      SimulatedUser user(sim, sample_target(db, sim_rng), sim_rng);
      traces[i] = rollout(agent, &model, user, enc, db, ActionMode::eps(cfg.epsilon, pol_rng), pol_rng, *graphs[i],
                          cfg.gamma, cfg.t_max);
    });

    std::vector<std::vector<double>> returns(n);
    for (std::size_t i = 0; i < n; ++i) returns[i] = trace_returns(traces[i]);
    if (cfg.standardize_returns) {
      double sum = 0.0, sq = 0.0;
      std::size_t count = 0;
      for (const auto& v : returns) {
        for (double x : v) {
          sum += x;
          sq += x * x;
          ++count;
        }
      }
      const double mean = sum / static_cast<double>(count);
      const double sd = std::sqrt(std::max(0.0, sq / static_cast<double>(count) - mean * mean));
      for (auto& v : returns) {
        for (double& x : v) x = sd > 1e-12 ? (x - mean) / sd : x - mean;
      }
    }

    const double scale = 1.0 / static_cast<double>(n);
    std::vector<double> losses(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      nn::Var l = episode_loss(*graphs[i], traces[i], returns[i], kind, cfg.alpha, scale);
      losses[i] = graphs[i]->value(l).item();
      graphs[i]->backward(l);
    });
    double batch_loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      batch_loss += losses[i];
      graphs[i]->accumulate_into(model.params);
      graphs[i].reset();
    }
    if (!std::isfinite(batch_loss)) {
      throw Error("training diverged: non-finite loss at episode " + std::to_string(start));
    }
    const double gn = model.params.clip_grad_norm(cfg.clip_norm);
    if (!std::isfinite(gn)) {
      throw Error("training diverged: non-finite gradient norm at episode " + std::to_string(start));
    }
    adam.step(model.params);

    for (const auto& tr : traces) {
      acc.success_rate += tr.success ? 1.0 : 0.0;
      acc.mean_return += tr.rounds.front().ret;
      ++acc.episodes;
      ++in_epoch;
    }
    acc.loss += batch_loss;
    ++loss_batches;
    flush(false);
  }
  flush(true);
  return out;
}

// ---- model files ----------------------------------------------------------------

inline std::filesystem::path model_meta_path(const std::filesystem::path& model) {
  auto p = model;
  p += ".json";
  return p;
}

inline void save_model(const PolicyModel& m, const std::filesystem::path& path, nlohmann::json meta = {}) {
  nn::save_checkpoint(m.params, path);
  meta["policy"] = {{"dim", m.config.dim},
                    {"num_heads", m.config.num_heads},
                    {"hidden", m.config.hidden},
                    {"k", m.config.k},
                    {"exclusion", m.config.exclusion},
                    {"coarse_residual", m.config.coarse_residual},
                    {"fine_adds_coarse", m.config.fine_adds_coarse},
                    {"logit_scale", m.config.logit_scale}};
  io::write_file(model_meta_path(path), meta.dump(2) + "\n");
}

// Loads a checkpoint; architecture flags come from the sidecar file when
// present, otherwise from the tensor shapes and defaults.
inline PolicyModel load_model(const std::filesystem::path& path) {
  PolicyModel m;
  m.params = nn::load_checkpoint(path);
  if (!m.params.contains("coarse.attn.wq") || !m.params.contains("coarse.mlp.0.w")) {
    throw Error("model: checkpoint lacks coarse parameters");
  }
  m.config.dim = m.params.value("coarse.attn.wq").rows();
  m.config.hidden = m.params.value("coarse.mlp.0.w").cols();
  const auto meta = model_meta_path(path);
  if (std::filesystem::exists(meta)) {
    try {
      auto j = nlohmann::json::parse(io::read_file(meta)).value("policy", nlohmann::json::object());
      m.config.num_heads = j.value("num_heads", m.config.num_heads);
      m.config.k = j.value("k", m.config.k);
      m.config.exclusion = j.value("exclusion", m.config.exclusion);
      m.config.coarse_residual = j.value("coarse_residual", m.config.coarse_residual);
      m.config.fine_adds_coarse = j.value("fine_adds_coarse", m.config.fine_adds_coarse);
      m.config.logit_scale = j.value("logit_scale", m.config.logit_scale);
    } catch (const nlohmann::json::exception& e) {
      throw Error("model: bad metadata file: " + std::string(e.what()));
    }
  }
  if (m.config.dim % m.config.num_heads != 0) throw Error("model: dim not divisible by num_heads");
  return m;
}

}  // namespace decor
