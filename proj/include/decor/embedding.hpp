// Item database, embeddings, cosine similarity and the synthetic attribute
// space encoder.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace decor {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a. Used wherever a seed has to be derived from strings so
/// that results do not depend on std::hash.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Embedding {
  std::vector<float> values;

  Embedding() = default;
  explicit Embedding(std::vector<float> v) : values(std::move(v)) {}

  std::size_t dim() const { return values.size(); }
  bool operator==(const Embedding&) const = default;
};

inline double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline double cosine_sim(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error("cosine_sim: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error("cosine_sim: zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline double cosine_sim(const Embedding& a, const Embedding& b) {
  return cosine_sim(std::span<const float>(a.values), std::span<const float>(b.values));
}

struct Item {
  std::string id;
  Embedding embedding;
  std::optional<std::string> image_path;
  std::vector<std::string> sentences;
  std::vector<std::string> objects;

  bool operator==(const Item&) const = default;
};

// Immutable after construction. Item embeddings are frozen: nothing in the
// library hands out a mutable reference to them.
class ItemDatabase {
 public:
  ItemDatabase(std::size_t dim, std::vector<Item> items, std::vector<std::string> dictionary,
               std::vector<Embedding> dictionary_embeddings)
      : dim_(dim),
        items_(std::move(items)),
        dictionary_(std::move(dictionary)),
        dictionary_embeddings_(std::move(dictionary_embeddings)) {
    if (dim_ == 0) throw Error("database: dim must be positive");
    if (items_.size() < 2) throw Error("database: at least two items are required");
    if (dictionary_.size() != dictionary_embeddings_.size()) {
      throw Error("database: object dictionary and its embeddings differ in length");
    }
    for (std::size_t i = 0; i < dictionary_.size(); ++i) {
      check_embedding(dictionary_embeddings_[i], "object '" + dictionary_[i] + "'");
      if (!dictionary_index_.emplace(dictionary_[i], i).second) {
        throw Error("database: duplicate object tag '" + dictionary_[i] + "'");
      }
    }
    norms_.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const Item& it = items_[i];
      check_embedding(it.embedding, "item '" + it.id + "'");
      if (!index_.emplace(it.id, i).second) throw Error("database: duplicate item id '" + it.id + "'");
      for (const auto& o : it.objects) {
        if (!dictionary_index_.contains(o)) {
          throw Error("database: item '" + it.id + "' uses unknown object '" + o + "'");
        }
      }
      norms_.push_back(norm(it.embedding.values));
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<Item>& items() const { return items_; }
  const Item& item(std::size_t i) const { return items_.at(i); }
  const std::vector<std::string>& dictionary() const { return dictionary_; }
  const std::vector<Embedding>& dictionary_embeddings() const { return dictionary_embeddings_; }
  double item_norm(std::size_t i) const { return norms_[i]; }

  std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t require_index(std::string_view id) const {
    auto idx = index_of(id);
    if (!idx) throw Error("unknown item '" + std::string(id) + "'");
    return *idx;
  }
  std::optional<std::size_t> object_index(std::string_view tag) const {
    auto it = dictionary_index_.find(std::string(tag));
    if (it == dictionary_index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const ItemDatabase& o) const {
    return dim_ == o.dim_ && items_ == o.items_ && dictionary_ == o.dictionary_ &&
           dictionary_embeddings_ == o.dictionary_embeddings_;
  }

 private:
  void check_embedding(const Embedding& e, const std::string& what) const {
    if (e.dim() != dim_) {
      throw Error("database: " + what + " has dimension " + std::to_string(e.dim()) + ", expected " +
                  std::to_string(dim_));
    }
    for (float x : e.values) {
      if (!std::isfinite(x)) throw Error("database: " + what + " has a non-finite entry");
    }
    if (norm(e.values) == 0.0) throw Error("database: " + what + " is the zero vector");
  }

  std::size_t dim_;
  std::vector<Item> items_;
  std::vector<std::string> dictionary_;
  std::vector<Embedding> dictionary_embeddings_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::size_t> dictionary_index_;
  std::vector<double> norms_;
};

struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

/// Cosine similarity of one query against every item, in manifest order.
inline std::vector<double> similarity_row(const Embedding& query, const ItemDatabase& db) {
  if (query.dim() != db.dim()) throw Error("similarity: query dimension mismatch");
  const double qn = norm(query.values);
  if (qn == 0.0) throw Error("similarity: zero-norm query");
  std::vector<double> out(db.size());
  for (std::size_t j = 0; j < db.size(); ++j) {
    // same operation order as cosine_sim so results agree bit for bit
    const double c = dot(query.values, db.item(j).embedding.values) / (qn * db.item_norm(j));
    out[j] = std::clamp(c, -1.0, 1.0);
  }
  return out;
}

inline SimilarityMatrix similarity_matrix(std::span<const Embedding> feedback, const ItemDatabase& db) {
  if (feedback.empty()) throw Error("similarity_matrix: empty feedback list");
  SimilarityMatrix m{feedback.size(), db.size(), {}};
  m.data.reserve(m.rows * m.cols);
  for (const auto& f : feedback) {
    auto r = similarity_row(f, db);
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

enum class Polarity { kNone, kPrefer, kDislike };

// Synthetic stand-in for a pre-trained multimodal encoder: every attribute
// tag owns a basis vector, and template phrases ("I prefer", "I don't like")
// own marker vectors. When attributes + markers fit in `dim` the basis is
// orthonormal.
struct AttributeSpace {
  std::vector<std::string> names;
  std::size_t dim = 0;
  std::vector<Embedding> basis;
  Embedding prefer_marker;
  Embedding dislike_marker;
  double noise_scale = 0.0;
  double marker_scale = 0.5;
  std::uint64_t seed = 0;

  std::size_t num_attributes() const { return names.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    return std::nullopt;
  }

  static AttributeSpace generate(std::vector<std::string> names, std::size_t dim, std::uint64_t seed,
                                 double noise_scale, double marker_scale = 0.5) {
    if (dim == 0) throw Error("attribute space: dim must be positive");
    auto basis = directions(names.size(), dim, seed, {});
    return from_dictionary(std::move(names), std::move(basis), seed, noise_scale, marker_scale);
  }

  // Builds a space around existing object embeddings; only the marker
  // vectors are generated (orthogonal to the dictionary when they fit).
  static AttributeSpace from_dictionary(std::vector<std::string> names, std::vector<Embedding> embeddings,
                                        std::uint64_t seed, double noise_scale, double marker_scale = 0.5) {
    if (names.empty() || names.size() != embeddings.size()) {
      throw Error("attribute space: dictionary names and embeddings must be non-empty and aligned");
    }
    if (noise_scale < 0.0) throw Error("attribute space: noise_scale must be >= 0");
    const std::size_t dim = embeddings.front().dim();
    auto markers = directions(2, dim, mix_seed(seed, 0x6d61726bULL), embeddings);
    AttributeSpace s;
    s.names = std::move(names);
    s.dim = dim;
    s.basis = std::move(embeddings);
    s.prefer_marker = std::move(markers[0]);
    s.dislike_marker = std::move(markers[1]);
    s.noise_scale = noise_scale;
    s.marker_scale = marker_scale;
    s.seed = seed;
    s.validate();
    return s;
  }

  void validate() const {
    if (basis.size() != names.size()) throw Error("attribute space: basis/name count mismatch");
    for (std::size_t i = 0; i < basis.size(); ++i) {
      if (basis[i].dim() != dim) throw Error("attribute space: basis dimension mismatch");
      for (std::size_t j = 0; j < i; ++j) {
        if (basis[i] == basis[j]) throw Error("attribute space: duplicate basis vectors");
        if (names[i] == names[j]) throw Error("attribute space: duplicate attribute '" + names[i] + "'");
      }
    }
  }

  // Unit Gaussian directions. While the total count (including `against`)
  // fits in `dim` they are Gram-Schmidt orthonormalized against `against`
  // and each other.
  static std::vector<Embedding> directions(std::size_t count, std::size_t dim, std::uint64_t seed,
                                           std::span<const Embedding> against) {
    std::mt19937_64 rng(mix_seed(seed, 0xba515ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const bool orthogonal = against.size() + count <= dim;
    std::vector<std::vector<double>> done;
    if (orthogonal) {
      for (const auto& e : against) {
        std::vector<double> u(e.values.begin(), e.values.end());
        for (const auto& w : done) {
          double d = 0.0;
          for (std::size_t k = 0; k < dim; ++k) d += u[k] * w[k];
          for (std::size_t k = 0; k < dim; ++k) u[k] -= d * w[k];
        }
        double n = 0.0;
        for (double x : u) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-9) continue;
        for (auto& x : u) x /= n;
        done.push_back(std::move(u));
      }
    }
    std::vector<Embedding> out;
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<double> v(dim);
      for (auto& x : v) x = gauss(rng);
      if (orthogonal) {
        // two passes for numerical orthogonality
        for (int pass = 0; pass < 2; ++pass) {
          for (const auto& u : done) {
            double d = 0.0;
            for (std::size_t k = 0; k < dim; ++k) d += v[k] * u[k];
            for (std::size_t k = 0; k < dim; ++k) v[k] -= d * u[k];
          }
        }
      }
      double n = 0.0;
      for (double x : v) n += x * x;
      n = std::sqrt(n);
      for (auto& x : v) x /= n;
      out.emplace_back(std::vector<float>(v.begin(), v.end()));
      done.push_back(std::move(v));
    }
    return out;
  }
};

namespace detail {

inline std::vector<double> unit_noise(std::uint64_t seed, std::size_t dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> n(dim);
  double s = 0.0;
  for (auto& x : n) {
    x = gauss(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  for (auto& x : n) x /= s;
  return n;
}

inline void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  if (s == 0.0) throw Error("synth_encode: degenerate (zero) encoding");
  for (auto& x : v) x /= s;
}

}  // namespace detail

/// L2-normalized sum of the tags' basis vectors (plus an optional template
/// marker), perturbed by seed-derived noise of norm `noise_scale` and
/// renormalized. Pure: identical inputs give bit-identical output. `salt`
/// distinguishes items that share a tag set.
inline Embedding synth_encode(std::span<const std::string> tags, const AttributeSpace& space,
                              Polarity polarity = Polarity::kNone, std::string_view salt = {}) {
  if (tags.empty()) throw Error("synth_encode: empty tag list");
  std::vector<std::size_t> idx;
  for (const auto& t : tags) {
    auto i = space.index_of(t);
    if (!i) throw Error("synth_encode: unknown tag '" + t + "'");
    idx.push_back(*i);
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());

  std::vector<double> v(space.dim, 0.0);
  std::uint64_t h = mix_seed(space.seed, fnv1a(salt));
  for (std::size_t i : idx) {
    for (std::size_t k = 0; k < space.dim; ++k) v[k] += space.basis[i].values[k];
    h = mix_seed(h, fnv1a(space.names[i]));
  }
  detail::normalize(v);
  if (polarity != Polarity::kNone) {
    const Embedding& m = polarity == Polarity::kPrefer ? space.prefer_marker : space.dislike_marker;
    for (std::size_t k = 0; k < space.dim; ++k) v[k] += space.marker_scale * m.values[k];
    detail::normalize(v);
    h = mix_seed(h, polarity == Polarity::kPrefer ? 1 : 2);
  }
  if (space.noise_scale > 0.0) {
    auto n = detail::unit_noise(h, space.dim);
    for (std::size_t k = 0; k < space.dim; ++k) v[k] += space.noise_scale * n[k];
    detail::normalize(v);
  }
  return Embedding(std::vector<float>(v.begin(), v.end()));
}

inline Embedding synth_encode(std::initializer_list<std::string> tags, const AttributeSpace& space,
                              Polarity polarity = Polarity::kNone, std::string_view salt = {}) {
  std::vector<std::string> v(tags);
  return synth_encode(std::span<const std::string>(v), space, polarity, salt);
}

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Embedding encode(std::string_view text) const = 0;
};

inline constexpr std::string_view kPreferPrefix = "I prefer ";
inline constexpr std::string_view kDislikePrefix = "I don't like ";

// Lowercased alphanumeric tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '_' || c == '-') {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Bag-of-attributes text encoder over an AttributeSpace. Sentences are
// reduced to the attribute tags they mention plus the template polarity;
// text that mentions no known attribute maps to a hashed direction.
class SyntheticTextEncoder final : public TextEncoder {
 public:
  explicit SyntheticTextEncoder(AttributeSpace space) : space_(std::move(space)) {}

  const AttributeSpace& space() const { return space_; }

  struct Parsed {
    Polarity polarity = Polarity::kNone;
    std::vector<std::string> tags;
  };

  Parsed parse(std::string_view text) const {
    Parsed p;
    std::string_view body = text;
    auto starts_with_ci = [](std::string_view s, std::string_view prefix) {
      if (s.size() < prefix.size()) return false;
      for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i]))) {
          return false;
        }
      }
      return true;
    };
    if (starts_with_ci(body, kPreferPrefix)) {
      p.polarity = Polarity::kPrefer;
      body.remove_prefix(kPreferPrefix.size());
    } else if (starts_with_ci(body, kDislikePrefix)) {
      p.polarity = Polarity::kDislike;
      body.remove_prefix(kDislikePrefix.size());
    }
    for (const auto& tok : tokenize(body)) {
      if (space_.index_of(tok) && std::find(p.tags.begin(), p.tags.end(), tok) == p.tags.end()) {
        p.tags.push_back(tok);
      }
    }
    return p;
  }

  Embedding encode(std::string_view text) const override {
    Parsed p = parse(text);
    if (!p.tags.empty()) return synth_encode(std::span<const std::string>(p.tags), space_, p.polarity);
    auto n = detail::unit_noise(mix_seed(space_.seed, fnv1a(text)), space_.dim);
    return Embedding(std::vector<float>(n.begin(), n.end()));
  }

 private:
  AttributeSpace space_;
};

}  // namespace decor
