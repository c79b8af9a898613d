// Shared fixtures for the test binaries.
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "decor/decor.hpp"

namespace decor::testing {

inline Embedding random_embedding(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (auto& x : v) x = n(rng);
  return Embedding(std::move(v));
}

inline nn::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  nn::Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& x : t.data) x = n(rng);
  return t;
}

// Database of n items with random embeddings and no dictionary.
inline ItemDatabase random_db(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::vector<Item> items;
  for (std::size_t i = 0; i < n; ++i) {
    Item it;
    it.id = "item" + std::to_string(i);
    it.embedding = random_embedding(dim, rng);
    items.push_back(std::move(it));
  }
  return ItemDatabase(dim, std::move(items), {}, {});
}

// Small synthetic environment shared by policy/simulator/trainer tests.
struct SmallEnv {
  SynthResult synth;
  SyntheticTextEncoder encoder;

  explicit SmallEnv(std::size_t items = 64, std::uint64_t seed = 3, std::size_t dim = 32)
      : synth(make(items, seed, dim)), encoder(synth.space) {}

  const ItemDatabase& db() const { return synth.db; }

  static SynthResult make(std::size_t items, std::uint64_t seed, std::size_t dim) {
    SynthConfig c;
    c.items = items;
    c.seed = seed;
    c.dim = dim;
    return synth_database(c);
  }
};

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("decor-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace decor::testing
