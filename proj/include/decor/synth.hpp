// Synthetic desk-scale database: items are random attribute subsets encoded
// by the attribute-space encoder.
#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "decor/database_io.hpp"
#include "decor/embedding.hpp"

namespace decor {

inline const std::vector<std::string>& default_attribute_names() {
  static const std::vector<std::string> names{
      "white", "wooden",    "marble",    "velvet",   "linen",      "brass",      "ceramic", "plants",
      "rug",   "pendant",   "skylight",  "bookshelf", "fireplace", "minimalist", "industrial", "navy"};
  return names;
}

inline std::vector<std::string> attribute_names(std::size_t count) {
  const auto& base = default_attribute_names();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(i < base.size() ? base[i] : "attr" + std::to_string(i + 1));
  }
  return out;
}

struct SynthConfig {
  std::size_t items = 512;
  std::size_t attributes = 16;
  std::size_t dim = 32;
  std::uint64_t seed = 7;
  double noise_scale = 0.05;
  double marker_scale = 0.5;
  std::size_t min_tags = 6;
  std::size_t max_tags = 10;
  bool pair_sentences = true;

  void validate() const {
    if (items < 2) throw Error("synth: need at least two items");
    if (attributes == 0 || dim == 0) throw Error("synth: attributes and dim must be positive");
    if (min_tags == 0 || min_tags > max_tags || max_tags > attributes) throw Error("synth: bad tag count range");
  }

  EncoderConfig encoder() const { return {seed, noise_scale, marker_scale}; }
};

struct SynthResult {
  ItemDatabase db;
  AttributeSpace space;
};

inline SynthResult synth_database(const SynthConfig& cfg) {
  cfg.validate();
  AttributeSpace space =
      AttributeSpace::generate(attribute_names(cfg.attributes), cfg.dim, cfg.seed, cfg.noise_scale, cfg.marker_scale);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x6974656d73ULL));
  std::uniform_int_distribution<std::size_t> count(cfg.min_tags, cfg.max_tags);
  std::vector<std::size_t> order(cfg.attributes);
  std::vector<Item> items;
  items.reserve(cfg.items);
  const std::size_t width = std::to_string(cfg.items - 1).size();
  for (std::size_t i = 0; i < cfg.items; ++i) {
    for (std::size_t a = 0; a < order.size(); ++a) order[a] = a;
    const std::size_t n = count(rng);
    for (std::size_t j = 0; j < n; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, order.size() - 1);
      std::swap(order[j], order[pick(rng)]);
    }
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(chosen.begin(), chosen.end());
    Item it;
    std::string num = std::to_string(i);
    it.id = "room-" + std::string(width - num.size(), '0') + num;
    for (std::size_t a : chosen) it.objects.push_back(space.names[a]);
    for (const auto& t : it.objects) it.sentences.push_back("a room with " + t);
    if (cfg.pair_sentences) {
      for (std::size_t j = 0; j + 1 < it.objects.size(); ++j) {
        it.sentences.push_back(it.objects[j] + " with " + it.objects[j + 1]);
      }
    }
    it.embedding = synth_encode(std::span<const std::string>(it.objects), space, Polarity::kNone, it.id);
    items.push_back(std::move(it));
  }
  ItemDatabase db(cfg.dim, std::move(items), space.names, space.basis);
  return {std::move(db), std::move(space)};
}

}  // namespace decor
