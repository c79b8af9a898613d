// Object detection by embedding similarity, grammar-based sentence
// composition over detected objects, and difference filtering.
#pragma once

#include <algorithm>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "decor/database_io.hpp"
#include "decor/embedding.hpp"

namespace decor {

struct ObjectDetection {
  std::string item_id;
  std::vector<std::pair<std::string, double>> objects;  // nonincreasing score
};

// Top-m dictionary objects by cosine similarity to the item embedding;
// ties keep dictionary order. m larger than the dictionary returns it whole.
inline ObjectDetection detect_objects(const Item& item, std::span<const std::string> dictionary,
                                      std::span<const Embedding> dictionary_embeddings, std::size_t m) {
  if (dictionary.empty()) throw Error("detect_objects: empty object dictionary");
  if (dictionary.size() != dictionary_embeddings.size()) throw Error("detect_objects: dictionary size mismatch");
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(dictionary.size());
  for (std::size_t i = 0; i < dictionary.size(); ++i) {
    scored.emplace_back(cosine_sim(item.embedding, dictionary_embeddings[i]), i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  ObjectDetection d{item.id, {}};
  for (std::size_t i = 0; i < std::min(m, scored.size()); ++i) {
    d.objects.emplace_back(dictionary[scored[i].second], scored[i].first);
  }
  return d;
}

inline ObjectDetection detect_objects(const Item& item, const ItemDatabase& db, std::size_t m) {
  return detect_objects(item, db.dictionary(), db.dictionary_embeddings(), m);
}

struct GeneratedSentence {
  enum class Source { kTemplate, kCorpus };
  std::string text;
  std::string focus;
  Source source = Source::kTemplate;
};

// Pattern strings with an "{object}" placeholder.
struct Grammar {
  std::vector<std::string> patterns;

  static Grammar defaults() {
    return {{"a room with {object}", "{object} that catches the eye", "plenty of {object} throughout"}};
  }

  static Grammar from_json(const nlohmann::json& j) {
    Grammar g;
    for (const auto& p : j) {
      auto s = p.get<std::string>();
      if (s.find("{object}") == std::string::npos) throw Error("grammar: pattern without {object}: " + s);
      g.patterns.push_back(std::move(s));
    }
    return g;
  }

  static Grammar load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("grammar: " + std::string(e.what()));
    }
  }
};

inline std::string fill_pattern(std::string_view pattern, std::string_view object) {
  std::string out(pattern);
  const std::string key = "{object}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + object.size())) {
    out.replace(pos, key.size(), object);
  }
  return out;
}

// One sentence per (detected object, pattern), objects in detection order.
inline std::vector<GeneratedSentence> compose_sentences(const ObjectDetection& detection, const Grammar& grammar) {
  if (detection.objects.empty()) throw Error("compose_sentences: empty detection");
  std::vector<GeneratedSentence> out;
  for (const auto& [obj, _] : detection.objects) {
    for (const auto& p : grammar.patterns) {
      out.push_back({fill_pattern(p, obj), obj, GeneratedSentence::Source::kTemplate});
    }
  }
  return out;
}

enum class Contrast { kPrefer, kDislike, kDropped };

// A sentence describes a difference when it is closer to one image than to
// the other by more than `margin`.
inline Contrast classify_contrast(double sim_target, double sim_action, double margin) {
  if (sim_target - sim_action > margin) return Contrast::kPrefer;
  if (sim_action - sim_target > margin) return Contrast::kDislike;
  return Contrast::kDropped;
}

struct FilterResult {
  std::vector<std::string> prefer;
  std::vector<std::string> dislike;
  std::vector<std::string> dropped;
};

inline FilterResult filter_differences(std::span<const std::string> sentences, const Item& action, const Item& target,
                                       double margin, const TextEncoder& encoder) {
  FilterResult r;
  for (const auto& s : sentences) {
    const Embedding e = encoder.encode(s);
    switch (classify_contrast(cosine_sim(e, target.embedding), cosine_sim(e, action.embedding), margin)) {
      case Contrast::kPrefer: r.prefer.push_back(s); break;
      case Contrast::kDislike: r.dislike.push_back(s); break;
      case Contrast::kDropped: r.dropped.push_back(s); break;
    }
  }
  return r;
}

// Generated sentence texts for one item (detection + grammar).
inline std::vector<std::string> generated_texts(const Item& item, const ItemDatabase& db, const Grammar& grammar,
                                                std::size_t m) {
  std::vector<std::string> out;
  for (auto& s : compose_sentences(detect_objects(item, db, m), grammar)) out.push_back(std::move(s.text));
  return out;
}

// Copy of `db` whose items' sentence lists are extended with generated
// sentences (duplicates skipped).
inline ItemDatabase augment_with_generated(const ItemDatabase& db, const Grammar& grammar, std::size_t m) {
  std::vector<Item> items = db.items();
  for (auto& it : items) {
    for (auto& s : generated_texts(it, db, grammar, m)) {
      if (std::find(it.sentences.begin(), it.sentences.end(), s) == it.sentences.end()) {
        it.sentences.push_back(std::move(s));
      }
    }
  }
  return ItemDatabase(db.dim(), std::move(items), db.dictionary(), db.dictionary_embeddings());
}

}  // namespace decor
