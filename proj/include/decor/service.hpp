// Live recommendation sessions over HTTP with append-only JSONL transcripts.
#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include "decor/config_file.hpp"
#include "decor/rollout.hpp"

namespace decor {

struct ServiceConfig {
  std::size_t t_max = 10;
  std::filesystem::path sessions_dir = "sessions";
  std::filesystem::path image_root;  // base for relative image paths
};

enum class SessionStatus { kActive, kAccepted, kExhausted };

inline const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kActive: return "active";
    case SessionStatus::kAccepted: return "accepted";
    case SessionStatus::kExhausted: return "exhausted";
  }
  return "?";
}

struct TranscriptRecord {
  std::string session_id;
  std::size_t round = 0;
  std::string event;  // request | feedback | accept | exhausted
  std::string text;
  std::optional<int> satisfaction;
  std::optional<std::string> item_id;  // recommendation shown after this record
  std::string timestamp;
};

inline nlohmann::json to_json(const TranscriptRecord& r) {
  nlohmann::json j{{"session_id", r.session_id}, {"round", r.round}, {"event", r.event},
                   {"text", r.text},             {"timestamp", r.timestamp}};
  j["satisfaction"] = r.satisfaction ? nlohmann::json(*r.satisfaction) : nlohmann::json(nullptr);
  j["item_id"] = r.item_id ? nlohmann::json(*r.item_id) : nlohmann::json(nullptr);
  return j;
}

inline TranscriptRecord record_from_json(const nlohmann::json& j) {
  TranscriptRecord r;
  r.session_id = j.at("session_id").get<std::string>();
  r.round = j.at("round").get<std::size_t>();
  r.event = j.at("event").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.timestamp = j.value("timestamp", "");
  if (!j.at("satisfaction").is_null()) r.satisfaction = j["satisfaction"].get<int>();
  if (!j.at("item_id").is_null()) r.item_id = j["item_id"].get<std::string>();
  return r;
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp = std::chrono::system_clock::now()) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// 128 random bits, hex encoded.
inline std::string new_session_token() {
  static std::mutex mu;
  static std::random_device rd;
  std::lock_guard lock(mu);
  std::string s;
  char buf[9];
  for (int i = 0; i < 4; ++i) {
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(rd()));
    s += buf;
  }
  return s;
}

// Appends lines to <dir>/<YYYY-MM-DD>.jsonl and syncs before returning.
class TranscriptLog {
 public:
  explicit TranscriptLog(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  void append(const TranscriptRecord& r) {
    const std::string line = to_json(r).dump() + "\n";
    std::lock_guard lock(mu_);
    const auto path = dir_ / (r.timestamp.substr(0, 10) + ".jsonl");
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw Error("transcript: cannot open " + path.string());
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n = ::write(fd, line.data() + off, line.size() - off);
      if (n <= 0) {
        ::close(fd);
        throw Error("transcript: write failed for " + path.string());
      }
      off += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
  }

  // Every record in the directory, files in name (date) order.
  std::vector<TranscriptRecord> read_all() const {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      if (e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<TranscriptRecord> out;
    for (const auto& f : files) {
      std::istringstream in(io::read_file(f));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
          out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception&) {
          // a torn final line from a crash mid-append carries no acknowledged round
        }
      }
    }
    return out;
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
};

// HTTP-facing error with a status code.
struct ServiceError : Error {
  int status;
  ServiceError(int s, const std::string& msg) : Error(msg), status(s) {}
};

struct Recommendation {
  std::string session_id;
  std::size_t round = 0;
  std::optional<std::string> item_id;
  bool done = false;
  std::string reason;
};

class SessionManager {
 public:
  SessionManager(const ItemDatabase& db, const TextEncoder& encoder, const PolicyModel& model, ServiceConfig cfg)
      : db_(&db), encoder_(&encoder), model_(&model), cfg_(std::move(cfg)), log_(cfg_.sessions_dir) {
    if (cfg_.t_max == 0) throw Error("service: t_max must be >= 1");
    recover();
  }

  const ServiceConfig& config() const { return cfg_; }
  AgentConfig agent() const { return {PolicyKind::kCoarseFine, model_->config.k, model_->config.exclusion, 1}; }

  Recommendation create(const std::string& request) {
    if (detail::trim(request).empty()) throw ServiceError(400, "request text must not be empty");
    auto s = std::make_shared<Session>();
    s->id = new_session_token();
    s->request = request;
    std::lock_guard lock(s->mu);
    s->state.add_feedback(encoder_->encode(request), *db_);
    const std::size_t item = next_item(*s);
    s->round = 1;
    s->current = item;
    TranscriptRecord r{s->id, 1, "request", request, std::nullopt, db_->item(item).id, utc_timestamp()};
    log_.append(r);
    s->records.push_back(r);
    {
      std::unique_lock ml(map_mu_);
      sessions_.emplace(s->id, s);
    }
    return {s->id, 1, db_->item(item).id, false, ""};
  }

  Recommendation feedback(const std::string& id, const std::string& text, int satisfaction, bool accept) {
    if (satisfaction < -2 || satisfaction > 2) throw ServiceError(400, "satisfaction must lie in [-2, 2]");
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->status != SessionStatus::kActive) throw ServiceError(409, "session is " + std::string(to_string(s->status)));
    if (!accept && detail::trim(text).empty()) throw ServiceError(400, "feedback text must not be empty");
    TranscriptRecord r{s->id, s->round + 1, "", text, satisfaction, std::nullopt, utc_timestamp()};
    if (accept) {
      r.event = "accept";
      log_.append(r);
      s->records.push_back(r);
      s->status = SessionStatus::kAccepted;
      return {s->id, s->round, std::nullopt, true, "accepted"};
    }
    if (s->round >= cfg_.t_max) {
      r.event = "exhausted";
      log_.append(r);
      s->records.push_back(r);
      s->status = SessionStatus::kExhausted;
      return {s->id, s->round, std::nullopt, true, "exhausted"};
    }
    AgentState next = s->state;
    next.add_action(s->current, *db_);
    next.add_feedback(encoder_->encode(text), *db_);
    Session trial;
    trial.state = std::move(next);
    const std::size_t item = next_item(trial);
    r.event = "feedback";
    r.item_id = db_->item(item).id;
    log_.append(r);
    s->state = std::move(trial.state);
    s->records.push_back(r);
    s->round += 1;
    s->current = item;
    return {s->id, s->round, db_->item(item).id, false, ""};
  }

  nlohmann::json transcript(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : s->records) recs.push_back(to_json(r));
    return {{"session_id", s->id}, {"status", to_string(s->status)}, {"round", s->round},
            {"request", s->request}, {"records", recs}};
  }

  std::vector<TranscriptRecord> records(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    return s->records;
  }

  std::size_t size() const {
    std::shared_lock lock(map_mu_);
    return sessions_.size();
  }

 private:
  struct Session {
    std::mutex mu;
    std::string id;
    std::string request;
    AgentState state;
    std::size_t round = 0;
    std::size_t current = 0;
    SessionStatus status = SessionStatus::kActive;
    std::vector<TranscriptRecord> records;
  };

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(map_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "unknown session");
    return it->second;
  }

  std::size_t next_item(const Session& s) const {
    nn::Graph g;
    std::mt19937_64 unused(0);
    return decide(agent(), model_, s.state, *db_, ActionMode::greedy(), unused, g).action;
  }

  // Rebuilds sessions from the persisted records.
  void recover() {
    for (auto& r : log_.read_all()) {
      auto it = sessions_.find(r.session_id);
      if (r.event == "request") {
        if (it != sessions_.end() || !r.item_id) continue;
        auto s = std::make_shared<Session>();
        s->id = r.session_id;
        s->request = r.text;
        s->state.add_feedback(encoder_->encode(r.text), *db_);
        s->round = 1;
        s->current = db_->require_index(*r.item_id);
        s->records.push_back(r);
        sessions_.emplace(s->id, s);
        continue;
      }
      if (it == sessions_.end()) continue;
      Session& s = *it->second;
      if (s.status != SessionStatus::kActive || r.round != s.round + 1) continue;
      s.records.push_back(r);
      if (r.event == "accept") {
        s.status = SessionStatus::kAccepted;
      } else if (r.event == "exhausted") {
        s.status = SessionStatus::kExhausted;
      } else if (r.event == "feedback" && r.item_id) {
        s.state.add_action(s.current, *db_);
        s.state.add_feedback(encoder_->encode(r.text), *db_);
        s.round += 1;
        s.current = db_->require_index(*r.item_id);
      }
    }
  }

  const ItemDatabase* db_;
  const TextEncoder* encoder_;
  const PolicyModel* model_;
  ServiceConfig cfg_;
  TranscriptLog log_;
  mutable std::shared_mutex map_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// Deterministic SVG card: background colour from the id hash, tags listed.
inline std::string placeholder_svg(const Item& item) {
  const std::uint64_t h = fnv1a(item.id);
  char colour[8];
  std::snprintf(colour, sizeof colour, "#%02x%02x%02x", static_cast<unsigned>(96 + (h & 0x7f)),
                static_cast<unsigned>(96 + ((h >> 8) & 0x7f)), static_cast<unsigned>(96 + ((h >> 16) & 0x7f)));
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      switch (c) {
        case '&': o += "&amp;"; break;
        case '<': o += "&lt;"; break;
        case '>': o += "&gt;"; break;
        case '"': o += "&quot;"; break;
        default: o.push_back(c);
      }
    }
    return o;
  };
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"320\" height=\"240\" viewBox=\"0 0 320 240\">";
  svg += "<rect width=\"320\" height=\"240\" fill=\"" + std::string(colour) + "\"/>";
  svg += "<text x=\"16\" y=\"32\" font-family=\"sans-serif\" font-size=\"18\" fill=\"#111\">" + esc(item.id) + "</text>";
  int y = 64;
  for (const auto& t : item.objects) {
    svg += "<text x=\"16\" y=\"" + std::to_string(y) + "\" font-family=\"sans-serif\" font-size=\"16\" fill=\"#222\">" +
           esc(t) + "</text>";
    y += 24;
  }
  svg += "</svg>";
  return svg;
}

inline std::string content_type_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

inline std::string model_checksum(const PolicyModel& m) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(nn::checkpoint_bytes(m.params))));
  return buf;
}

class Service {
 public:
  Service(const ItemDatabase& db, const TextEncoder& encoder, const PolicyModel& model, ServiceConfig cfg)
      : db_(&db), manager_(db, encoder, model, cfg), checksum_(model_checksum(model)) {
    routes();
  }

  SessionManager& sessions() { return manager_; }
  httplib::Server& server() { return server_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

  std::string image_url(const std::string& item_id) const { return "/items/" + item_id + "/image"; }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  nlohmann::json recommendation_json(const Recommendation& r) const {
    if (r.done) return {{"session_id", r.session_id}, {"done", true}, {"reason", r.reason}, {"round", r.round}};
    return {{"session_id", r.session_id},
            {"round", r.round},
            {"item_id", *r.item_id},
            {"image_url", image_url(*r.item_id)},
            {"done", false}};
  }

  template <class F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const ServiceError& e) {
      send_json(res, e.status, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  }

  void routes() {
    server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto body = nlohmann::json::parse(req.body);
        if (!body.is_object() || !body.contains("request") || !body["request"].is_string()) {
          throw ServiceError(400, "body must be {\"request\": text}");
        }
        auto r = manager_.create(body["request"].get<std::string>());
        send_json(res, 201, recommendation_json(r));
      });
    });
    server_.Post(R"(/sessions/([0-9a-f]+)/feedback)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto body = nlohmann::json::parse(req.body);
        if (!body.is_object()) throw ServiceError(400, "body must be an object");
        const bool accept = body.value("accept", false);
        if (!body.contains("satisfaction") || !body["satisfaction"].is_number_integer()) {
          throw ServiceError(400, "satisfaction must be an integer in [-2, 2]");
        }
        const std::string text = body.value("text", "");
        auto r = manager_.feedback(req.matches[1], text, body["satisfaction"].get<int>(), accept);
        send_json(res, 200, recommendation_json(r));
      });
    });
    server_.Get(R"(/sessions/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, manager_.transcript(req.matches[1])); });
    });
    server_.Get(R"(/items/([^/]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto idx = db_->index_of(std::string(req.matches[1]));
        if (!idx) throw ServiceError(404, "unknown item");
        const Item& it = db_->item(*idx);
        if (it.image_path) {
          std::filesystem::path p = *it.image_path;
          if (p.is_relative() && !manager_.config().image_root.empty()) p = manager_.config().image_root / p;
          if (std::filesystem::exists(p)) {
            res.status = 200;
            res.set_content(io::read_file(p), content_type_for(p));
            return;
          }
        }
        res.status = 200;
        res.set_content(placeholder_svg(it), "image/svg+xml");
      });
    });
    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}, {"model", checksum_}});
    });
  }

  const ItemDatabase* db_;
  SessionManager manager_;
  std::string checksum_;
  httplib::Server server_;
};

}  // namespace decor
