// Rule-based simulated user: hidden target, templated difference feedback,
// rank-based satisfaction and episode termination.
#pragma once

#include <array>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "decor/embedding.hpp"
#include "decor/feedback_gen.hpp"

namespace decor {

enum class SentenceSource { kManifest, kGenerated };

inline constexpr std::string_view kNeutralFeedback = "show me something different";

struct SimulatorConfig {
  std::size_t t_max = 10;
  std::array<std::size_t, 4> thresholds{10, 20, 30, 50};
  double contrast_margin = 0.1;
  double success_reward = 10.0;
  std::string prefer_template = "I prefer {f}";
  std::string dislike_template = "I don't like {f}";
  std::size_t feedback_per_round = 1;
  SentenceSource source = SentenceSource::kManifest;
  std::size_t detect_top_m = 10;
  Grammar grammar = Grammar::defaults();
  // Upper bound on attributes named in the opening request (never more
  // than |target tags| - 1); 0 means |target tags| - 1.
  std::size_t request_max_tags = 4;

  void validate(std::size_t n_items) const {
    if (t_max == 0) throw Error("simulator: t_max must be >= 1");
    if (thresholds[0] < 1) throw Error("simulator: thresholds must be >= 1");
    for (std::size_t i = 1; i < 4; ++i) {
      if (thresholds[i] <= thresholds[i - 1]) throw Error("simulator: thresholds must be strictly increasing");
    }
    if (thresholds[3] > n_items) throw Error("simulator: l_3 exceeds the database size");
    if (!(contrast_margin > 0.0)) throw Error("simulator: contrast margin must be > 0");
    if (feedback_per_round == 0) throw Error("simulator: feedback_per_round must be >= 1");
  }
};

/// 1 + the number of items ranked ahead of `a` by cosine similarity to the
/// target. The target itself is always first; equal similarities are
/// ordered by manifest index.
inline std::size_t rank_from_sims(std::span<const double> sims_to_target, std::size_t a, std::size_t target) {
  if (a == target) return 1;
  std::size_t ahead = 1;  // the target
  const double sa = sims_to_target[a];
  for (std::size_t j = 0; j < sims_to_target.size(); ++j) {
    if (j == a || j == target) continue;
    if (sims_to_target[j] > sa || (sims_to_target[j] == sa && j < a)) ++ahead;
  }
  return ahead + 1;
}

inline std::vector<double> sims_to(std::size_t target, const ItemDatabase& db) {
  return similarity_row(db.item(target).embedding, db);
}

inline std::size_t rank_of(const Item& a, const Item& target, const ItemDatabase& db) {
  const std::size_t ai = db.require_index(a.id);
  const std::size_t ti = db.require_index(target.id);
  return rank_from_sims(sims_to(ti, db), ai, ti);
}

inline int satisfaction(std::size_t rank, const std::array<std::size_t, 4>& l) {
  if (rank <= l[0]) return 2;
  if (rank <= l[1]) return 1;
  if (rank <= l[2]) return 0;
  if (rank <= l[3]) return -1;
  return -2;
}

inline std::size_t sample_target(const ItemDatabase& db, std::mt19937_64& rng) {
  if (db.size() < 2) throw Error("sample_target: database needs at least two items");
  std::uniform_int_distribution<std::size_t> pick(0, db.size() - 1);
  return pick(rng);
}

inline std::string apply_template(std::string_view tmpl, std::string_view sentence) {
  std::string out(tmpl);
  const auto pos = out.find("{f}");
  if (pos == std::string::npos) throw Error("template without {f}: " + out);
  out.replace(pos, 3, sentence);
  return out;
}

struct FeedbackPool {
  std::vector<std::string> prefer;   // templated
  std::vector<std::string> dislike;  // templated
  std::vector<std::string> prefer_core;
  std::vector<std::string> dislike_core;
  std::size_t size() const { return prefer.size() + dislike.size(); }
};

inline FeedbackPool build_feedback_pool(const Item& action, const Item& target, std::span<const std::string> sentences,
                                        const TextEncoder& encoder, double margin, const SimulatorConfig& cfg) {
  FilterResult f = filter_differences(sentences, action, target, margin, encoder);
  FeedbackPool p;
  for (auto& s : f.prefer) {
    p.prefer.push_back(apply_template(cfg.prefer_template, s));
    p.prefer_core.push_back(std::move(s));
  }
  for (auto& s : f.dislike) {
    p.dislike.push_back(apply_template(cfg.dislike_template, s));
    p.dislike_core.push_back(std::move(s));
  }
  return p;
}

// Text encoder with a precomputed table in front of another encoder. The
// table is filled before use and never mutated afterwards, so a single bank
// can be shared between threads.
class SentenceBank final : public TextEncoder {
 public:
  explicit SentenceBank(const TextEncoder& base) : base_(&base) {}

  void add(const std::string& s) {
    if (!table_.contains(s)) table_.emplace(s, base_->encode(s));
  }

  Embedding encode(std::string_view text) const override {
    auto it = table_.find(std::string(text));
    if (it != table_.end()) return it->second;
    return base_->encode(text);
  }

  std::size_t size() const { return table_.size(); }

 private:
  const TextEncoder* base_;
  std::unordered_map<std::string, Embedding> table_;
};

enum class DoneReason { kNone, kSuccess, kExhausted };

inline const char* to_string(DoneReason r) {
  switch (r) {
    case DoneReason::kSuccess: return "success";
    case DoneReason::kExhausted: return "exhausted";
    case DoneReason::kNone: break;
  }
  return "none";
}

struct EpisodeContext {
  std::size_t target = 0;
  std::size_t round = 0;  // actions served so far
  std::vector<std::size_t> served;
  bool done = false;
  DoneReason reason = DoneReason::kNone;
  std::string initial_request;
  std::vector<double> target_sims;
};

struct FeedbackEvent {
  std::string text;
  std::string core;
  Polarity polarity = Polarity::kNone;
  bool fallback = false;
};

struct StepResult {
  std::vector<FeedbackEvent> feedback;  // empty once done
  double reward = 0.0;
  std::size_t rank = 0;
  bool done = false;
};

class Simulator {
 public:
  Simulator(const ItemDatabase& db, const TextEncoder& encoder, SimulatorConfig cfg)
      : db_(&db), cfg_(std::move(cfg)), bank_(encoder) {
    cfg_.validate(db.size());
    sentences_.resize(db.size());
    for (std::size_t i = 0; i < db.size(); ++i) {
      const Item& it = db.item(i);
      if (cfg_.source == SentenceSource::kGenerated && !db.dictionary().empty()) {
        sentences_[i] = generated_texts(it, db, cfg_.grammar, cfg_.detect_top_m);
      } else {
        sentences_[i] = it.sentences;
      }
      for (const auto& s : sentences_[i]) {
        bank_.add(s);
        bank_.add(apply_template(cfg_.prefer_template, s));
        bank_.add(apply_template(cfg_.dislike_template, s));
      }
    }
  }

  const SimulatorConfig& config() const { return cfg_; }
  const ItemDatabase& db() const { return *db_; }
  // Encoder with every simulator sentence precomputed; equal to the base
  // encoder on all inputs.
  const TextEncoder& encoder() const { return bank_; }
  const std::vector<std::string>& sentences_of(std::size_t i) const { return sentences_[i]; }

  EpisodeContext reset(std::mt19937_64& rng) const { return start(sample_target(*db_, rng), rng); }

  EpisodeContext start(std::size_t target, std::mt19937_64& rng) const {
    EpisodeContext ctx;
    ctx.target = target;
    ctx.target_sims = sims_to(target, *db_);
    ctx.initial_request = initial_request(db_->item(target), rng);
    return ctx;
  }

  std::size_t rank(const EpisodeContext& ctx, std::size_t action) const {
    return rank_from_sims(ctx.target_sims, action, ctx.target);
  }

  StepResult step(EpisodeContext& ctx, std::size_t action, std::mt19937_64& rng) const {
    if (ctx.done) throw Error("simulator: step after episode end");
    if (action >= db_->size()) throw Error("simulator: action out of range");
    StepResult r;
    ctx.served.push_back(action);
    ++ctx.round;
    r.rank = rank(ctx, action);
    if (action == ctx.target) {
      r.reward = cfg_.success_reward;
      r.done = ctx.done = true;
      ctx.reason = DoneReason::kSuccess;
      return r;
    }
    r.reward = satisfaction(r.rank, cfg_.thresholds);
    if (ctx.round >= cfg_.t_max) {
      r.done = ctx.done = true;
      ctx.reason = DoneReason::kExhausted;
      return r;
    }
    r.feedback = sample_feedback(action, ctx.target, rng);
    return r;
  }

  FeedbackPool pool(std::size_t action, std::size_t target) const {
    std::vector<std::string> cands = sentences_[action];
    for (const auto& s : sentences_[target]) {
      if (std::find(cands.begin(), cands.end(), s) == cands.end()) cands.push_back(s);
    }
    return build_feedback_pool(db_->item(action), db_->item(target), cands, bank_, cfg_.contrast_margin, cfg_);
  }

  std::vector<FeedbackEvent> sample_feedback(std::size_t action, std::size_t target, std::mt19937_64& rng) const {
    FeedbackPool p = pool(action, target);
    std::vector<FeedbackEvent> out;
    if (p.size() == 0) {
      out.push_back(fallback(db_->item(action), db_->item(target), rng));
      return out;
    }
    std::vector<std::size_t> order(p.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t n = std::min(cfg_.feedback_per_round, order.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
      const std::size_t k = order[i];
      if (k < p.prefer.size()) {
        out.push_back({p.prefer[k], p.prefer_core[k], Polarity::kPrefer, false});
      } else {
        const std::size_t d = k - p.prefer.size();
        out.push_back({p.dislike[d], p.dislike_core[d], Polarity::kDislike, false});
      }
    }
    return out;
  }

  // Opening request naming a random subset of the target's tags.
  std::string initial_request(const Item& target, std::mt19937_64& rng) const {
    std::vector<std::string> tags = target.objects;
    if (tags.empty()) {
      if (target.sentences.empty()) return "a beautiful room";
      std::uniform_int_distribution<std::size_t> pick(0, target.sentences.size() - 1);
      return target.sentences[pick(rng)];
    }
    std::size_t max_n = cfg_.request_max_tags ? cfg_.request_max_tags : (tags.size() > 1 ? tags.size() - 1 : 1);
    max_n = std::clamp<std::size_t>(max_n, 1, tags.size());
    std::uniform_int_distribution<std::size_t> count(1, max_n);
    const std::size_t n = count(rng);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, tags.size() - 1);
      std::swap(tags[i], tags[pick(rng)]);
    }
    tags.resize(n);
    return describe(tags);
  }

  static std::string describe(const std::vector<std::string>& tags) {
    std::string s = "a room with ";
    for (std::size_t i = 0; i < tags.size(); ++i) {
      if (i > 0) s += i + 1 == tags.size() ? " and " : ", ";
      s += tags[i];
    }
    return s;
  }

 private:
  // Used when no sentence passes the contrast filter: name a single
  // attribute that differs (still subject to the contrast rule), or fall
  // back to a neutral request when the two items cannot be told apart.
  FeedbackEvent fallback(const Item& action, const Item& target, std::mt19937_64& rng) const {
    auto missing = [](const std::vector<std::string>& from, const std::vector<std::string>& in) {
      std::vector<std::string> out;
      for (const auto& t : from) {
        if (std::find(in.begin(), in.end(), t) == in.end()) out.push_back(t);
      }
      return out;
    };
    std::vector<FeedbackEvent> options;
    for (const auto& core : missing(target.objects, action.objects)) {
      if (classify_contrast(cosine_sim(bank_.encode(core), target.embedding),
                            cosine_sim(bank_.encode(core), action.embedding),
                            cfg_.contrast_margin) == Contrast::kPrefer) {
        options.push_back({apply_template(cfg_.prefer_template, core), core, Polarity::kPrefer, true});
      }
    }
    if (options.empty()) {
      for (const auto& core : missing(action.objects, target.objects)) {
        if (classify_contrast(cosine_sim(bank_.encode(core), target.embedding),
                              cosine_sim(bank_.encode(core), action.embedding),
                              cfg_.contrast_margin) == Contrast::kDislike) {
          options.push_back({apply_template(cfg_.dislike_template, core), core, Polarity::kDislike, true});
        }
      }
    }
    if (options.empty()) return {std::string(kNeutralFeedback), std::string(kNeutralFeedback), Polarity::kNone, true};
    std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
    return options[pick(rng)];
  }

  const ItemDatabase* db_;
  SimulatorConfig cfg_;
  SentenceBank bank_;
  std::vector<std::vector<std::string>> sentences_;
};

}  // namespace decor
