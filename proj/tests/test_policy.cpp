#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace decor;
using decor::testing::random_db;
using decor::testing::random_embedding;

namespace {

PolicyConfig small_config(std::size_t dim = 8) {
  PolicyConfig c;
  c.dim = dim;
  c.num_heads = 2;
  c.hidden = 6;
  c.k = 3;
  return c;
}

// Zero-initialized output layers make a fresh model trivial; jitter every
// parameter so the tests see a generic network.
void jitter(PolicyModel& m, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [_, p] : m.params) {
    for (double& x : p.value.data) x += n(rng);
  }
}

PolicyState random_state(std::size_t rounds, std::size_t dim, std::mt19937_64& rng, std::size_t n_items) {
  PolicyState s;
  for (std::size_t t = 0; t < rounds; ++t) {
    s.feedback.push_back(random_embedding(dim, rng));
    if (t + 1 < rounds) {
      s.actions.push_back(random_embedding(dim, rng));
      s.excluded.push_back((t * 7 + 1) % n_items);
    }
  }
  return s;
}

// Brute force: every eligible index ordered by (score desc, index asc).
std::vector<std::size_t> oracle_top_k(const std::vector<double>& s, std::size_t k, const std::vector<std::size_t>& ex) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (std::find(ex.begin(), ex.end(), i) == ex.end()) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

}  // namespace

TEST(PolicyModel, InitIsDeterministicAndValidated) {
  auto a = PolicyModel::init(small_config(), 5);
  auto b = PolicyModel::init(small_config(), 5);
  auto c = PolicyModel::init(small_config(), 6);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_FALSE(a.params == c.params);
  auto bad = small_config();
  bad.num_heads = 3;
  EXPECT_THROW(PolicyModel::init(bad, 1), Error);
  bad = small_config();
  bad.k = 0;
  EXPECT_THROW(PolicyModel::init(bad, 1), Error);
}

TEST(CoarseWeights, FreshModelIsNeutral) {
  std::mt19937_64 rng(1);
  auto m = PolicyModel::init(small_config(), 1);
  auto s = random_state(3, 8, rng, 10);
  for (double w : coarse_weights(s, m)) EXPECT_DOUBLE_EQ(w, 0.5);
}

TEST(CoarseWeights, OpenIntervalAndPermutationEquivariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    auto m = PolicyModel::init(small_config(), trial);
    jitter(m, trial, 0.3);
    auto s = random_state(4, 8, rng, 10);
    auto w = coarse_weights(s, m);
    ASSERT_EQ(w.size(), 4u);
    for (double x : w) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
    // no position signal on the coarse side: reordering feedback reorders weights
    PolicyState r = s;
    std::swap(r.feedback[0], r.feedback[3]);
    auto wr = coarse_weights(r, m);
    EXPECT_NEAR(wr[0], w[3], 1e-12);
    EXPECT_NEAR(wr[3], w[0], 1e-12);
    EXPECT_NEAR(wr[1], w[1], 1e-12);
  }
}

TEST(CoarseDistribution, MatchesSoftmaxOracleAndExcludes) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    auto cfg = small_config();
    cfg.logit_scale = trial % 2 ? 1.0 : 7.5;
    auto m = PolicyModel::init(cfg, trial);
    jitter(m, trial + 100);
    auto db = random_db(10, 8, rng);
    auto s = random_state(3, 8, rng, 10);
    auto pi = coarse_distribution(s, m, db);
    auto w = coarse_weights(s, m);
    std::vector<double> z(10, 0.0);
    for (std::size_t j = 0; j < 10; ++j) {
      for (std::size_t i = 0; i < 3; ++i) z[j] += w[i] * cosine_sim(s.feedback[i], db.item(j).embedding);
      z[j] *= cfg.logit_scale;
    }
    double mx = -1e300, tot = 0.0;
    for (std::size_t j = 0; j < 10; ++j)
      if (std::find(s.excluded.begin(), s.excluded.end(), j) == s.excluded.end()) mx = std::max(mx, z[j]);
    std::vector<double> expect(10, 0.0);
    for (std::size_t j = 0; j < 10; ++j) {
      if (std::find(s.excluded.begin(), s.excluded.end(), j) != s.excluded.end()) continue;
      tot += expect[j] = std::exp(z[j] - mx);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < 10; ++j) {
      EXPECT_NEAR(pi[j], expect[j] / tot, 1e-12);
      sum += pi[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (std::size_t e : s.excluded) EXPECT_EQ(pi[e], 0.0);
  }
}

TEST(CoarseDistribution, LogitScaleKeepsArgmax) {
  std::mt19937_64 rng(4);
  auto db = random_db(30, 8, rng);
  auto s = random_state(2, 8, rng, 30);
  auto base = PolicyModel::init(small_config(), 9);
  jitter(base, 9);
  auto scaled = base;
  scaled.config.logit_scale = 30.0;
  auto a = coarse_distribution(s, base, db);
  auto b = coarse_distribution(s, scaled, db);
  EXPECT_EQ(argmax(a), argmax(b));
  EXPECT_GT(*std::max_element(b.begin(), b.end()), *std::max_element(a.begin(), a.end()));
}

TEST(ExclusionOff, PreviouslyShownItemsStayEligible) {
  std::mt19937_64 rng(5);
  auto db = random_db(6, 8, rng);
  auto s = random_state(3, 8, rng, 6);
  auto cfg = small_config();
  cfg.exclusion = false;
  auto m = PolicyModel::init(cfg, 1);
  for (double p : coarse_distribution(s, m, db)) EXPECT_GT(p, 0.0);
}

TEST(TopK, MatchesBruteForce) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> small(0, 4);  // many ties
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 9;
    std::vector<double> s(n);
    for (double& x : s) x = small(rng) / 4.0;
    std::vector<std::size_t> ex;
    for (std::size_t i = 0; i < n; ++i)
      if (small(rng) == 0) ex.push_back(i);
    const std::size_t k = 1 + trial % 5;
    auto mask = eligibility_mask(n, ex, true);
    EXPECT_EQ(top_k(s, k, mask), oracle_top_k(s, k, ex));
    if (ex.size() < n) {
      EXPECT_EQ(select_candidates(s, k, ex), oracle_top_k(s, k, ex));
    }
  }
  std::vector<double> one{0.5};
  std::vector<std::size_t> all{0};
  EXPECT_THROW(select_candidates(one, 1, all), Error);
  EXPECT_THROW(select_candidates(one, 0, {}), Error);
}

TEST(SelectAction, GreedyAndEpsilon) {
  std::vector<double> pi{0.1, 0.6, 0.3, 0.0};
  EXPECT_EQ(select_action(pi, ActionMode::greedy()), 1u);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(select_action(pi, ActionMode::eps(1.0, rng)), 1u);
  for (int i = 0; i < 200; ++i) {
    auto a = select_action(pi, ActionMode::eps(0.0, rng));
    EXPECT_TRUE(a == 0 || a == 2) << a;  // never greedy, never a zero-probability item
  }
  int greedy = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) greedy += select_action(pi, ActionMode::eps(0.8, rng)) == 1 ? 1 : 0;
  EXPECT_NEAR(greedy / double(n), 0.8, 0.015);
  std::vector<double> single{1.0};
  EXPECT_EQ(select_action(single, ActionMode::eps(0.0, rng)), 0u);
  ActionMode broken{ActionMode::Kind::kEpsilon, 0.5, nullptr};
  EXPECT_THROW(select_action(pi, broken), Error);
  EXPECT_THROW(select_action(std::vector<double>{}, ActionMode::greedy()), Error);
}

TEST(PolicyState, Validation) {
  PolicyState s;
  EXPECT_THROW(s.validate(), Error);
  s.feedback.push_back(Embedding({1, 0}));
  s.actions.push_back(Embedding({1, 0}));
  EXPECT_THROW(s.validate(), Error);
}

TEST(FineDistribution, SumsToOneOverCandidates) {
  std::mt19937_64 rng(8);
  auto db = random_db(12, 8, rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = PolicyModel::init(small_config(), trial);
    jitter(m, trial);
    auto s = random_state(1 + trial % 4, 8, rng, 12);
    nn::Graph g;
    auto r = forward_round(g, m, s, similarity_matrix(s.feedback, db), db, true);
    ASSERT_EQ(r.candidates.size(), 3u);
    ASSERT_EQ(r.pi_f.size(), 3u);
    EXPECT_NEAR(std::accumulate(r.pi_f.begin(), r.pi_f.end(), 0.0), 1.0, 1e-12);
    // candidates are the coarse top-k, excluded items never among them
    std::vector<std::size_t> ex = s.excluded;
    EXPECT_EQ(r.candidates.indices, oracle_top_k(r.pi_c, 3, ex));
    // tensor-level path agrees with the graph path
    auto pf = fine_distribution(fuse_history(s, m), r.candidates, m);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(pf[i], r.pi_f[i], 1e-12);
  }
}

TEST(FineDistribution, FreshModelFollowsCoarseRanking) {
  std::mt19937_64 rng(9);
  auto db = random_db(12, 8, rng);
  auto m = PolicyModel::init(small_config(), 3);
  auto s = random_state(2, 8, rng, 12);
  nn::Graph g;
  auto r = forward_round(g, m, s, similarity_matrix(s.feedback, db), db, true);
  // zero fine output layer: pi_f is the coarse softmax renormalized over the candidates
  double z = 0.0;
  for (std::size_t i : r.candidates.indices) z += r.pi_c[i];
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(r.pi_f[c], r.pi_c[r.candidates.indices[c]] / z, 1e-12);
}

TEST(FineHistory, OrderAndModalityMatter) {
  std::mt19937_64 rng(10);
  auto m = PolicyModel::init(small_config(), 4);
  jitter(m, 4);
  auto s = random_state(3, 8, rng, 10);
  auto h = fuse_history(s, m);
  EXPECT_EQ(h.rows(), 5u);  // f0 a0 f1 a1 f2
  PolicyState r = s;
  std::swap(r.feedback[0], r.feedback[2]);
  EXPECT_FALSE(fuse_history(r, m) == h);
}

TEST(PositionEncoding, BoundedAndDistinct) {
  auto pe = position_encoding(10, 8);
  for (double x : pe.data) EXPECT_LE(std::abs(x), 1.0 / std::sqrt(8.0) + 1e-12);
  for (std::size_t p = 1; p < 10; ++p) {
    bool differ = false;
    for (std::size_t i = 0; i < 8; ++i) differ = differ || pe.at(p, i) != pe.at(p - 1, i);
    EXPECT_TRUE(differ);
  }
}

TEST(ForwardRound, GradientReachesEveryParameter) {
  std::mt19937_64 rng(11);
  auto db = random_db(12, 8, rng);
  auto m = PolicyModel::init(small_config(), 5);
  jitter(m, 5);
  auto s = random_state(3, 8, rng, 12);
  auto sims = similarity_matrix(s.feedback, db);
  nn::LossFn fn = [&](nn::Graph& g, const nn::ParamStore& ps) {
    PolicyModel local{m.config, ps};
    auto r = forward_round(g, local, s, sims, db, true);
    return g.add(g.pick(r.coarse_logp, 0, r.candidates.indices[1]), g.pick(*r.fine_logp, 0, 2));
  };
  auto ps = m.params;
  auto rep = nn::grad_check(fn, ps);
  EXPECT_TRUE(rep.passed) << rep.worst_param << " " << rep.max_rel_error;
  nn::Graph g;
  g.backward(fn(g, m.params));
  for (const auto& [name, grad] : g.param_grads()) {
    double n = 0.0;
    for (double x : grad->data) n += x * x;
    EXPECT_GT(n, 0.0) << name;
  }
  EXPECT_EQ(g.param_grads().size(), m.params.size());
}

TEST(ForwardRound, ShapeErrors) {
  std::mt19937_64 rng(12);
  auto db = random_db(5, 8, rng);
  auto m = PolicyModel::init(small_config(), 1);
  auto s = random_state(2, 8, rng, 5);
  auto wrong = similarity_matrix(std::span<const Embedding>(s.feedback.data(), 1), db);
  nn::Graph g;
  EXPECT_THROW(forward_round(g, m, s, wrong, db, false), Error);
}
