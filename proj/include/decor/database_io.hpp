// Manifest (JSON) + embedding binary ("EMB1") persistence for ItemDatabase.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "decor/embedding.hpp"

namespace decor {

namespace io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  out.append(b.data(), b.size());
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::array<char, sizeof(T)> b;
    std::memcpy(b.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(what_ + ": truncated file");
  }

  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace io

inline constexpr std::string_view kEmbeddingMagic = "EMB1";

namespace detail {

inline void write_embedding_section(std::string& out, const std::vector<const Embedding*>& embs, std::size_t dim) {
  out.append(kEmbeddingMagic);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(embs.size()));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  for (const Embedding* e : embs) {
    for (float x : e->values) io::put_le<float>(out, x);
  }
}

inline std::vector<Embedding> read_embedding_section(io::Reader& r, std::size_t expected_count,
                                                     std::size_t expected_dim, const char* section) {
  if (r.bytes(4) != kEmbeddingMagic) throw Error(std::string("embeddings: bad magic in ") + section + " section");
  const auto count = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  if (dim != expected_dim) {
    throw Error(std::string("embeddings: dimension mismatch in ") + section + " section (manifest " +
                std::to_string(expected_dim) + ", binary " + std::to_string(dim) + ")");
  }
  if (count != expected_count) {
    throw Error(std::string("embeddings: ") + section + " count " + std::to_string(count) +
                " does not match manifest " + std::to_string(expected_count));
  }
  std::vector<Embedding> out(count);
  for (auto& e : out) {
    e.values.resize(dim);
    for (auto& x : e.values) x = r.get<float>();
  }
  return out;
}

}  // namespace detail

inline nlohmann::json manifest_json(const ItemDatabase& db) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : db.items()) {
    nlohmann::json j{{"id", it.id}, {"sentences", it.sentences}, {"objects", it.objects}};
    if (it.image_path) j["image_path"] = *it.image_path;
    items.push_back(std::move(j));
  }
  return {{"dim", db.dim()}, {"items", std::move(items)}, {"object_dictionary", db.dictionary()}};
}

inline std::string embeddings_bytes(const ItemDatabase& db) {
  std::string out;
  std::vector<const Embedding*> items;
  for (const auto& it : db.items()) items.push_back(&it.embedding);
  detail::write_embedding_section(out, items, db.dim());
  std::vector<const Embedding*> dict;
  for (const auto& e : db.dictionary_embeddings()) dict.push_back(&e);
  detail::write_embedding_section(out, dict, db.dim());
  return out;
}

inline void save_database(const ItemDatabase& db, const std::filesystem::path& manifest_path,
                          const std::filesystem::path& embeddings_path) {
  io::write_file(manifest_path, manifest_json(db).dump(2) + "\n");
  io::write_file(embeddings_path, embeddings_bytes(db));
}

inline ItemDatabase load_database(const std::filesystem::path& manifest_path,
                                  const std::filesystem::path& embeddings_path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest: " + std::string(e.what()));
  }
  try {
    const std::size_t dim = m.at("dim").get<std::size_t>();
    std::vector<std::string> dict = m.value("object_dictionary", std::vector<std::string>{});
    std::vector<Item> items;
    for (const auto& j : m.at("items")) {
      Item it;
      it.id = j.at("id").get<std::string>();
      if (j.contains("image_path") && !j["image_path"].is_null()) it.image_path = j["image_path"].get<std::string>();
      it.sentences = j.value("sentences", std::vector<std::string>{});
      it.objects = j.value("objects", std::vector<std::string>{});
      items.push_back(std::move(it));
    }
    const std::string bytes = io::read_file(embeddings_path);
    io::Reader r(bytes, "embeddings");
    auto item_embs = detail::read_embedding_section(r, items.size(), dim, "item");
    auto dict_embs = detail::read_embedding_section(r, dict.size(), dim, "object dictionary");
    if (!r.at_end()) throw Error("embeddings: trailing bytes after object dictionary section");
    for (std::size_t i = 0; i < items.size(); ++i) items[i].embedding = std::move(item_embs[i]);
    return ItemDatabase(dim, std::move(items), std::move(dict), std::move(dict_embs));
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest: " + std::string(e.what()));
  }
}

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kEmbeddingsFile = "embeddings.bin";
inline constexpr const char* kEncoderFile = "encoder.json";

// Parameters of the bag-of-attributes text encoder that accompanies a
// database directory. Absent file -> defaults.
struct EncoderConfig {
  std::uint64_t seed = 0;
  double noise_scale = 0.05;
  double marker_scale = 0.5;
};

inline void save_encoder_config(const EncoderConfig& c, const std::filesystem::path& dir) {
  nlohmann::json j{{"kind", "synthetic"}, {"seed", c.seed}, {"noise_scale", c.noise_scale},
                   {"marker_scale", c.marker_scale}};
  io::write_file(dir / kEncoderFile, j.dump(2) + "\n");
}

inline EncoderConfig load_encoder_config(const std::filesystem::path& dir) {
  EncoderConfig c;
  const auto p = dir / kEncoderFile;
  if (!std::filesystem::exists(p)) return c;
  auto j = nlohmann::json::parse(io::read_file(p));
  c.seed = j.value("seed", c.seed);
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  c.marker_scale = j.value("marker_scale", c.marker_scale);
  return c;
}

inline AttributeSpace text_space(const ItemDatabase& db, const EncoderConfig& c) {
  return AttributeSpace::from_dictionary(db.dictionary(), db.dictionary_embeddings(), c.seed, c.noise_scale,
                                         c.marker_scale);
}

inline void save_database_dir(const ItemDatabase& db, const EncoderConfig& enc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_database(db, dir / kManifestFile, dir / kEmbeddingsFile);
  save_encoder_config(enc, dir);
}

inline ItemDatabase load_database_dir(const std::filesystem::path& dir) {
  return load_database(dir / kManifestFile, dir / kEmbeddingsFile);
}

}  // namespace decor
