// Acceptance run on the desk environment. One PASS/FAIL line per criterion;
// the exit status is nonzero unless every FAIL was named with --allow-fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "decor/decor.hpp"

#ifndef DECOR_SOURCE_DIR
#define DECOR_SOURCE_DIR "."
#endif

using namespace decor;

namespace {

// Pinned tolerances.
constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr int kOracleInstances = 1000;
constexpr double kOracleSeconds = 60.0;
constexpr std::size_t kMaxTrainEpisodes = 50000;
constexpr double kTrainSeconds = 600.0;
constexpr std::size_t kEvalEpisodes = 2000;
constexpr std::size_t kEvalRounds = 10;
constexpr double kRandomCeiling = 0.05;
constexpr double kCoarseOverGreedy = 0.03;
constexpr std::size_t kSeedsNeeded = 4;
constexpr std::size_t kServiceSessions = 25;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string pct(double x) { return fmt_double(100.0 * x, 2); }

// ---- gradient fidelity ----------------------------------------------------------

nn::Tensor rand_t(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  nn::Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& x : t.data) x = n(rng);
  return t;
}

nn::Var contract(nn::Graph& g, nn::Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& v = g.value(out);
  return g.sum(g.mul(out, g.constant(rand_t({v.rows(), v.cols()}, rng))));
}

struct GradCase {
  std::string name;
  nn::ParamStore params;
  nn::LossFn fn;
};

std::vector<GradCase> op_cases() {
  using nn::Graph;
  using nn::ParamStore;
  using nn::Var;
  std::mt19937_64 rng(101);
  auto ps2 = [&](std::vector<std::size_t> a, std::vector<std::size_t> b) {
    ParamStore p;
    p.add("a", rand_t(std::move(a), rng));
    p.add("b", rand_t(std::move(b), rng));
    return p;
  };
  std::vector<GradCase> cs;
  cs.push_back({"matmul", ps2({3, 4}, {4, 5}),
                [](Graph& g, const ParamStore& p) { return contract(g, g.matmul(g.param(p, "a"), g.param(p, "b")), 1); }});
  cs.push_back({"transpose/add/sub/scale", ps2({3, 2}, {2, 3}), [](Graph& g, const ParamStore& p) {
                  Var a = g.param(p, "a"), b = g.param(p, "b");
                  return contract(g, g.sub(g.scale(g.transpose(a), 1.7), g.add(b, b)), 2);
                }});
  cs.push_back({"add_row/mul", ps2({4, 3}, {3}), [](Graph& g, const ParamStore& p) {
                  Var a = g.param(p, "a");
                  return contract(g, g.mul(g.add_row(a, g.param(p, "b")), a), 3);
                }});
  {
    ParamStore p;
    nn::Tensor a({3, 4});
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (std::size_t i = 0; i < a.numel(); ++i) a.data[i] = (i % 2 ? -1.0 : 1.0) * u(rng);
    p.add("a", a);
    cs.push_back({"relu", p, [](Graph& g, const ParamStore& q) { return contract(g, g.relu(g.param(q, "a")), 4); }});
  }
  cs.push_back({"sigmoid/log/sum", ps2({2, 5}, {1}), [](Graph& g, const ParamStore& p) {
                  Var s = g.sigmoid(g.param(p, "a"));
                  return g.add(g.sum(g.log(s)), contract(g, s, 5));
                }});
  cs.push_back({"softmax", ps2({3, 4}, {1}), [](Graph& g, const ParamStore& p) {
                  Var a = g.param(p, "a");
                  return g.add(contract(g, g.softmax(a, 1), 6), contract(g, g.softmax(a, 0), 7));
                }});
  cs.push_back({"log_softmax/pick", ps2({2, 5}, {1}), [](Graph& g, const ParamStore& p) {
                  Var ls = g.log_softmax(g.param(p, "a"), {true, false, true, true, false});
                  return g.add(g.pick(ls, 0, 2), g.scale(g.pick(ls, 1, 3), 0.5));
                }});
  cs.push_back({"slice/select/gather/concat", ps2({2, 4}, {3, 5}), [](Graph& g, const ParamStore& p) {
                  Var a = g.param(p, "a"), b = g.param(p, "b");
                  Var cc = g.concat_cols({g.slice_cols(a, 1, 3), g.select_cols(a, {3, 0, 3})});
                  Var r = g.gather_rows(b, {2, 0, 2, 1});
                  return contract(g, g.concat_rows({g.gather_rows(cc, {0, 1}), g.slice_cols(r, 0, 5)}), 8);
                }});
  {
    ParamStore p;
    p.add("x", rand_t({5, 6}, rng));
    p.add("xq", rand_t({3, 6}, rng));
    for (const char* w : {"wq", "wk", "wv"}) p.add(w, rand_t({6, 4}, rng, 0.5));
    nn::add_mlp(p, "m", {4, 7, 2}, rng, false);
    cs.push_back({"attention/mlp", p, [](Graph& g, const ParamStore& q) {
                    auto att = nn::cross_attention(g, g.param(q, "xq"), g.param(q, "x"), g.param(q, "wq"),
                                                   g.param(q, "wk"), g.param(q, "wv"), 2);
                    return contract(g, nn::mlp(g, att.output, nn::mlp_params(g, q, "m", 2)), 9);
                  }});
  }
  return cs;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  bool ok = true;
  std::size_t n = 0;
  auto record = [&](const std::string& name, nn::ParamStore ps, const nn::LossFn& fn) {
    auto rep = nn::grad_check(fn, ps, kGradStep, kGradTol);
    ok = ok && rep.passed && rep.checked > 0 && rep.max_rel_error < kGradTol;
    if (rep.max_rel_error >= worst) {
      worst = rep.max_rel_error;
      worst_name = name;
    }
    ++n;
  };
  for (auto& c : op_cases()) record(c.name, c.params, c.fn);

  // full loss over a fixed two-round episode
  SynthConfig sc;
  sc.items = 24;
  sc.attributes = 8;
  sc.dim = 12;
  sc.min_tags = 2;
  sc.max_tags = 4;
  sc.seed = 5;
  auto env = synth_database(sc);
  SyntheticTextEncoder enc(env.space);
  PolicyConfig pc;
  pc.dim = 12;
  pc.num_heads = 2;
  pc.hidden = 5;
  auto model = PolicyModel::init(pc, 3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> jit(0.0, 0.2);
  for (auto& [_, p] : model.params)
    for (double& x : p.value.data) x += jit(rng);
  for (auto kind : {PolicyKind::kCoarseOnly, PolicyKind::kCoarseFine}) {
    nn::LossFn fn = [&](nn::Graph& g, const nn::ParamStore& ps) {
      PolicyModel m{pc, ps};
      ScriptedUser user("a room with " + env.db.dictionary()[0], {"I prefer " + env.db.dictionary()[1]}, 10);
      std::mt19937_64 r(0);
      auto tr = rollout({kind, pc.k, true, 1}, &m, user, enc, env.db, ActionMode::greedy(), r, g, 0.8, 2);
      if (tr.length() != 2) throw Error("fixture episode must last two rounds");
      const std::vector<double> v{1.7, -0.6};
      return episode_loss(g, tr, v, kind == PolicyKind::kCoarseOnly ? LossKind::kCoarse : LossKind::kCoarseFine, 0.1,
                          1.0);
    };
    record(std::string("episode loss ") + to_string(kind), model.params, fn);
  }
  const double secs = since(t0);
  ok = ok && secs < kGradSeconds;
  return {ok, std::to_string(n) + " checks, max rel err " + fmt_double(worst, 10) + " (" + worst_name + "), " +
                  fmt_double(secs, 1) + " s"};
}

// ---- arithmetic oracles -----------------------------------------------------------

// Integer vectors with integer norms: cosines reduce to one correctly rounded division.
const std::vector<std::pair<std::array<int, 4>, int>> kPythagorean{
    {{1, 2, 2, 0}, 3}, {{2, 3, 6, 0}, 7}, {{1, 4, 8, 0}, 9}, {{2, 4, 4, 0}, 6},
    {{3, 4, 0, 0}, 5}, {{1, 1, 1, 1}, 2}, {{2, 2, 1, 4}, 5}, {{0, 0, 0, 1}, 1}};

std::pair<Embedding, int> exact_vector(std::mt19937_64& rng) {
  auto [v, n] = kPythagorean[rng() % kPythagorean.size()];
  std::shuffle(v.begin(), v.end(), rng);
  std::vector<float> f;
  for (int x : v) f.push_back(static_cast<float>(rng() % 2 ? x : -x));
  return {Embedding(std::move(f)), n};
}

double exact_cos(const Embedding& a, int na, const Embedding& b, int nb) {
  long long d = 0;
  for (std::size_t i = 0; i < 4; ++i) d += static_cast<long long>(a.values[i]) * static_cast<long long>(b.values[i]);
  return static_cast<double>(d) / static_cast<double>(na * nb);
}

Outcome arithmetic_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::map<std::string, std::size_t> bad;

  for (int i = 0; i < kOracleInstances; ++i) {
    // dyadic discounts and integer rewards keep every partial sum exact
    const double gamma = static_cast<double>(rng() % 9) / 8.0;
    std::vector<double> r(1 + rng() % 10);
    for (double& x : r) x = static_cast<double>(static_cast<int>(rng() % 13) - 2);
    auto v = discounted_returns(r, gamma);
    for (std::size_t t = 0; t < r.size(); ++t) {
      double s = 0.0, p = 1.0;
      for (std::size_t k = t; k < r.size(); ++k, p *= gamma) s += p * r[k];
      if (v[t] != s) ++bad["discounted_returns"];
    }
  }

  for (int i = 0; i < kOracleInstances; ++i) {
    const std::size_t n = 2 + rng() % 8, m = 1 + rng() % 4;
    std::vector<Item> items;
    std::vector<int> norms;
    for (std::size_t j = 0; j < n; ++j) {
      auto [e, nn] = exact_vector(rng);
      items.push_back({"i" + std::to_string(j), e, {}, {}, {}});
      norms.push_back(nn);
    }
    ItemDatabase db(4, items, {}, {});
    std::vector<Embedding> fb;
    std::vector<int> fn;
    for (std::size_t q = 0; q < m; ++q) {
      auto [e, nn] = exact_vector(rng);
      fb.push_back(e);
      fn.push_back(nn);
    }
    auto sm = similarity_matrix(fb, db);
    for (std::size_t q = 0; q < m; ++q)
      for (std::size_t j = 0; j < n; ++j)
        if (sm(q, j) != exact_cos(fb[q], fn[q], items[j].embedding, norms[j])) ++bad["similarity_matrix"];

    // rank: target first, then descending similarity, ties by index
    const std::size_t t = rng() % n;
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (x == t || y == t) return x == t && y != t;
      return exact_cos(items[t].embedding, norms[t], items[x].embedding, norms[x]) >
             exact_cos(items[t].embedding, norms[t], items[y].embedding, norms[y]);
    });
    for (std::size_t pos = 0; pos < n; ++pos)
      if (rank_of(db.item(order[pos]), db.item(t), db) != pos + 1) ++bad["rank_of"];
  }

  for (int i = 0; i < kOracleInstances; ++i) {
    std::array<std::size_t, 4> l{};
    std::size_t acc = 0;
    for (auto& x : l) x = acc += 1 + rng() % 20;
    for (std::size_t rank : {std::size_t{1}, l[0], l[0] + 1, l[1], l[1] + 1, l[2], l[2] + 1, l[3], l[3] + 1,
                             1 + rng() % (l[3] + 10)}) {
      int s = 2;
      for (auto x : l) s -= rank > x;
      if (satisfaction(rank, l) != s) ++bad["satisfaction"];
    }
  }

  for (int i = 0; i < kOracleInstances; ++i) {
    std::vector<EpisodeOutcome> os(1 + rng() % 15);
    for (auto& o : os) {
      const std::size_t len = 1 + rng() % 10;
      for (std::size_t t = 0; t < len; ++t) {
        o.target_pos.push_back(rng() % 5);  // 0 = outside the shown ranking
        o.actions.push_back(t);
        if (o.target_pos.back() == 1) break;
      }
      o.success = o.target_pos.back() == 1;
    }
    for (std::size_t k = 1; k <= 3; ++k) {
      std::size_t hits = 0;
      for (const auto& o : os)
        hits += std::any_of(o.target_pos.begin(), o.target_pos.end(), [&](std::size_t p) { return p >= 1 && p <= k; });
      if (recall_at_k(os, k) != static_cast<double>(hits) / static_cast<double>(os.size())) ++bad["recall_at_k"];
    }
  }

  const double secs = since(t0);
  std::string detail = std::to_string(kOracleInstances) + " instances each, ";
  for (const auto& [k, v] : bad) detail += k + " mismatches " + std::to_string(v) + ", ";
  detail += fmt_double(secs, 1) + " s";
  return {bad.empty() && secs < kOracleSeconds, detail};
}

// ---- simulator contract -----------------------------------------------------------

Outcome simulator_contract(const SynthResult& env, const TextEncoder& enc, const SimulatorConfig& sc) {
  std::size_t checked = 0, violations = 0;
  bool ok = true;
  Simulator sim(env.db, enc, sc);
  std::mt19937_64 rng(303);
  for (int ep = 0; ep < 300; ++ep) {
    auto ctx = sim.reset(rng);
    while (!ctx.done) {
      const std::size_t a = rng() % env.db.size();
      auto r = sim.step(ctx, a, rng);
      if (r.rank == 1) ok = ok && r.reward == sc.success_reward && r.done && ctx.reason == DoneReason::kSuccess;
      else ok = ok && r.reward == satisfaction(r.rank, sc.thresholds);
      for (const auto& f : r.feedback) {
        if (f.polarity == Polarity::kNone) continue;  // neutral fallback carries no contrast claim
        const Embedding e = enc.encode(f.core);
        const double gap = cosine_sim(e, env.db.item(ctx.target).embedding) - cosine_sim(e, env.db.item(a).embedding);
        ++checked;
        if ((f.polarity == Polarity::kPrefer ? gap : -gap) <= sc.contrast_margin) ++violations;
      }
    }
  }
  // success on every round index, including the last
  for (std::size_t last = 1; last <= sc.t_max; ++last) {
    auto ctx = sim.start(0, rng);
    for (std::size_t t = 1; t < last; ++t) sim.step(ctx, t, rng);
    auto r = sim.step(ctx, 0, rng);
    ok = ok && r.reward == 10.0 && r.done && r.feedback.empty();
  }
  const std::array<std::size_t, 4> l{10, 20, 30, 50};
  const std::map<std::size_t, int> table{{10, 2}, {11, 1}, {20, 1}, {21, 0}, {30, 0}, {31, -1}, {50, -1}, {51, -2}};
  std::size_t boundary_bad = 0;
  for (auto [rank, s] : table) boundary_bad += satisfaction(rank, l) != s;
  ok = ok && violations == 0 && boundary_bad == 0 && checked > 0 && sc.success_reward == 10.0;
  return {ok, std::to_string(checked) + " feedback checked, " + std::to_string(violations) +
                  " contrast violations, boundary mismatches " + std::to_string(boundary_bad)};
}

// ---- trained runs -----------------------------------------------------------------

struct Run {
  PolicyModel model;
  EvalResult eval;
  double train_seconds = 0.0;
};

struct Desk {
  SynthResult env;
  SyntheticTextEncoder enc;
  TrainConfig cfg;
  std::vector<std::uint64_t> seeds;
  std::map<std::tuple<std::uint64_t, PolicyKind, double>, Run> runs;
  std::map<PolicyKind, EvalResult> baselines;

  Desk(TrainConfig c, std::vector<std::uint64_t> s)
      : env(synth_database(SynthConfig{})), enc(env.space), cfg(std::move(c)), seeds(std::move(s)) {}

  EvalConfig eval_cfg(PolicyKind kind) const {
    EvalConfig e;
    e.episodes = kEvalEpisodes;
    e.t_max = kEvalRounds;
    e.kind = kind;
    e.k = cfg.k;
    e.exclusion = cfg.exclusion;
    return e;
  }

  const Run& run(std::uint64_t seed, PolicyKind mode, double gamma) {
    auto key = std::make_tuple(seed, mode, gamma);
    if (auto it = runs.find(key); it != runs.end()) return it->second;
    TrainConfig c = cfg;
    c.seed = seed;
    c.mode = mode;
    c.gamma = gamma;
    Simulator sim(env.db, enc, c.simulator);
    const auto t0 = Clock::now();
    auto model = train(c, env.db, sim).model;
    const double secs = since(t0);
    nn::round_to_float(model.params);  // what a saved checkpoint holds
    auto ev = run_policy(eval_cfg(mode), env.db, enc, c.simulator, &model);
    std::cerr << "  seed " << seed << " " << to_string(mode) << " gamma " << gamma << ": r@1 " << pct(ev.recall.at(1))
              << "%  (" << fmt_double(secs, 1) << " s)\n";
    return runs.emplace(key, Run{std::move(model), std::move(ev), secs}).first->second;
  }

  const EvalResult& baseline(PolicyKind kind) {
    if (auto it = baselines.find(kind); it != baselines.end()) return it->second;
    return baselines.emplace(kind, run_policy(eval_cfg(kind), env.db, enc, cfg.simulator, nullptr)).first->second;
  }
};

bool recall_monotone(const EvalResult& r) { return r.recall.at(1) <= r.recall.at(2); }

Outcome baseline_ordering(Desk& d) {
  const auto& rnd = d.baseline(PolicyKind::kRandom);
  const auto& greedy = d.baseline(PolicyKind::kGreedy);
  std::size_t good = 0;
  bool budget = d.cfg.episodes <= kMaxTrainEpisodes;
  std::string detail = "random " + pct(rnd.recall.at(1)) + ", greedy " + pct(greedy.recall.at(1)) + "; ";
  for (auto s : d.seeds) {
    const auto& co = d.run(s, PolicyKind::kCoarseOnly, d.cfg.gamma);
    const auto& cf = d.run(s, PolicyKind::kCoarseFine, d.cfg.gamma);
    budget = budget && co.train_seconds < kTrainSeconds && cf.train_seconds < kTrainSeconds;
    const double c1 = co.eval.recall.at(1), f1 = cf.eval.recall.at(1);
    const bool ok = rnd.recall.at(1) < kRandomCeiling && c1 - greedy.recall.at(1) >= kCoarseOverGreedy && f1 >= c1 &&
                    recall_monotone(rnd) && recall_monotone(greedy) && recall_monotone(co.eval) &&
                    recall_monotone(cf.eval);
    good += ok;
    detail += "s" + std::to_string(s) + " co " + pct(c1) + " cf " + pct(f1) + (ok ? "" : " x") + "; ";
  }
  detail += std::to_string(good) + "/" + std::to_string(d.seeds.size()) + " seeds";
  return {budget && good >= kSeedsNeeded, detail};
}

Outcome ablation_ordering(Desk& d) {
  std::size_t good = 0;
  std::string detail;
  for (auto s : d.seeds) {
    bool ok = true;
    detail += "s" + std::to_string(s);
    for (auto mode : {PolicyKind::kCoarseOnly, PolicyKind::kCoarseFine}) {
      const double r0 = d.run(s, mode, 0.0).eval.recall.at(1);
      const double rg = d.run(s, mode, d.cfg.gamma).eval.recall.at(1);
      ok = ok && rg >= r0;
      detail += std::string(mode == PolicyKind::kCoarseOnly ? " loss_c " : " loss_cf ") + pct(r0) + "->" + pct(rg);
    }
    good += ok;
    detail += ok ? "; " : " x; ";
  }
  detail += std::to_string(good) + "/" + std::to_string(d.seeds.size()) + " seeds";
  return {good >= kSeedsNeeded, detail};
}

Outcome per_round_curves(Desk& d) {
  bool nondecreasing = true;
  auto check = [&](const EvalResult& r) {
    for (std::size_t t = 1; t < r.curve.size(); ++t) nondecreasing = nondecreasing && r.curve[t - 1] <= r.curve[t];
  };
  check(d.baseline(PolicyKind::kRandom));
  check(d.baseline(PolicyKind::kGreedy));
  for (const auto& [_, run] : d.runs) check(run.eval);
  const auto& c = d.run(d.seeds.front(), PolicyKind::kCoarseFine, d.cfg.gamma).eval.curve;
  bool strict = c.size() == kEvalRounds;
  std::string detail = "coarse_fine";
  for (std::size_t t = 0; t < c.size(); ++t) {
    if (t > 0) strict = strict && c[t] > c[t - 1];
    detail += " " + pct(c[t]);
  }
  detail += nondecreasing ? "; all curves nondecreasing" : "; a curve decreases";
  return {nondecreasing && strict, detail};
}

Outcome weight_analysis(Desk& d) {
  const auto& m = d.run(d.seeds.front(), PolicyKind::kCoarseFine, d.cfg.gamma).model;
  auto fx = default_weight_fixtures(d.env.db);
  auto rows = weight_report(m, d.env.db, d.enc, fx);
  bool in_range = true;
  std::string detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    in_range = in_range && rows[i].weight > 0.0 && rows[i].weight < 1.0;
    detail += (i ? ", " : "") + std::to_string(d.enc.parse(fx[i]).tags.size()) + " attr " + fmt_double(rows[i].weight, 6);
  }
  return {in_range && rows.back().weight > rows.front().weight, detail};
}

Outcome determinism(Desk& d) {
  TrainConfig c = d.cfg;
  c.episodes = 1024;
  c.epoch_episodes = 256;
  auto bytes = [&](std::size_t threads) {
    c.threads = threads;
    Simulator sim(d.env.db, d.enc, c.simulator);
    return train(c, d.env.db, sim).model;
  };
  auto a = bytes(1), b = bytes(1), t = bytes(3);
  const bool ckpt = nn::checkpoint_bytes(a.params) == nn::checkpoint_bytes(b.params) &&
                    nn::checkpoint_bytes(a.params) == nn::checkpoint_bytes(t.params);
  auto report = [&](std::size_t threads) {
    auto e = d.eval_cfg(PolicyKind::kCoarseFine);
    e.episodes = 400;
    e.threads = threads;
    auto r = run_policy(e, d.env.db, d.enc, c.simulator, &a);
    auto j = report_json(r);
    j.erase("threads");
    return j.dump() + outcomes_csv(r, d.env.db);
  };
  const bool eval = report(1) == report(1) && report(1) == report(4);
  return {ckpt && eval, std::string("checkpoint ") + (ckpt ? "identical" : "differs") + " across runs and threads 1/3, " +
                            "eval report " + (eval ? "identical" : "differs") + " across threads 1/4"};
}

Outcome service_equivalence(Desk& d) {
  const auto& model = d.run(d.seeds.front(), PolicyKind::kCoarseFine, d.cfg.gamma).model;
  auto dir = std::filesystem::temp_directory_path() / ("decor-acceptance-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  ServiceConfig sc;
  sc.sessions_dir = dir;
  sc.t_max = kEvalRounds;
  Service svc(d.env.db, d.enc, model, sc);
  const int port = svc.bind_any("127.0.0.1");
  std::thread th([&] { svc.listen_after_bind(); });
  while (!svc.server().is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  httplib::Client cli("127.0.0.1", port);

  auto cfg = d.cfg.simulator;
  cfg.t_max = kEvalRounds;
  Simulator sim(d.env.db, d.enc, cfg);
  std::size_t matched = 0, rounds = 0;
  for (std::size_t i = 0; i < kServiceSessions; ++i) {
    auto rng = episode_rng(404, i, 0);
    auto ctx = sim.reset(rng);
    std::vector<std::string> live, texts;
    auto res = cli.Post("/sessions", nlohmann::json{{"request", ctx.initial_request}}.dump(), "application/json");
    auto j = nlohmann::json::parse(res->body);
    const std::string id = j["session_id"];
    while (!j["done"].get<bool>()) {
      live.push_back(j["item_id"]);
      auto r = sim.step(ctx, d.env.db.require_index(live.back()), rng);
      nlohmann::json body{{"satisfaction", std::clamp(static_cast<int>(r.reward), -2, 2)}};
      if (r.rank == 1) body["accept"] = true;
      else if (!r.feedback.empty()) body["text"] = r.feedback.front().text;
      else body["text"] = kNeutralFeedback;
      if (body.contains("text")) texts.push_back(body["text"]);
      j = nlohmann::json::parse(cli.Post("/sessions/" + id + "/feedback", body.dump(), "application/json")->body);
    }
    ScriptedUser user(ctx.initial_request, texts, kEvalRounds);
    std::mt19937_64 unused(0);
    nn::Graph g;
    auto tr = rollout(svc.sessions().agent(), &model, user, d.enc, d.env.db, ActionMode::greedy(), unused, g, 1.0,
                      kEvalRounds);
    std::vector<std::string> offline;
    for (const auto& r : tr.rounds) offline.push_back(d.env.db.item(r.action).id);
    matched += offline == live;
    rounds += live.size();
  }
  svc.stop();
  th.join();
  std::filesystem::remove_all(dir);
  return {matched == kServiceSessions, std::to_string(matched) + "/" + std::to_string(kServiceSessions) +
                                           " sessions identical, " + std::to_string(rounds) + " rounds"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run on the desk environment"};
  std::filesystem::path config = std::filesystem::path(DECOR_SOURCE_DIR) / "configs" / "train.json";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::string> allow_fail, only;
  std::size_t episodes = 0;
  app.add_option("--config", config, "training config");
  app.add_option("--seeds", seeds, "training seeds");
  app.add_option("--episodes", episodes, "override training episodes");
  app.add_option("--allow-fail", allow_fail, "criteria whose FAIL does not fail the run");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  try {
    Desk d(load_train_config(config), seeds);
    if (episodes) d.cfg.episodes = episodes;

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient_fidelity", gradient_fidelity},
        {"arithmetic_oracles", arithmetic_oracles},
        {"simulator_contract", [&] { return simulator_contract(d.env, d.enc, d.cfg.simulator); }},
        {"baseline_ordering", [&] { return baseline_ordering(d); }},
        {"ablation_ordering", [&] { return ablation_ordering(d); }},
        {"per_round_curves", [&] { return per_round_curves(d); }},
        {"weight_analysis", [&] { return weight_analysis(d); }},
        {"determinism", [&] { return determinism(d); }},
        {"service_equivalence", [&] { return service_equivalence(d); }},
    };
    std::size_t passed = 0, ran = 0, unexpected = 0;
    for (const auto& [name, fn] : criteria) {
      if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
      Outcome o;
      try {
        o = fn();
      } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
      }
      ++ran;
      passed += o.pass;
      const bool allowed = std::find(allow_fail.begin(), allow_fail.end(), name) != allow_fail.end();
      if (!o.pass && !allowed) ++unexpected;
      std::cout << (o.pass ? "PASS " : "FAIL ") << name << "  " << o.detail
                << (!o.pass && allowed ? "  [known failure]" : "") << std::endl;
    }
    std::cout << passed << "/" << ran << " criteria passed" << std::endl;
    return unexpected == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
