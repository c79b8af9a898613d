// Command-line front end: database synthesis, training, evaluation,
// sentence generation and the session server.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "decor/decor.hpp"

namespace fs = std::filesystem;
using namespace decor;

namespace {

struct Context {
  ItemDatabase db;
  EncoderConfig enc;
  SyntheticTextEncoder encoder;
};

Context open_db(const fs::path& dir) {
  auto db = load_database_dir(dir);
  auto enc = load_encoder_config(dir);
  SyntheticTextEncoder encoder(text_space(db, enc));
  return {std::move(db), enc, std::move(encoder)};
}

// Flags fall back to DECOR_<NAME> environment variables.
template <class T>
CLI::Option* opt(CLI::App* app, const std::string& name, T& value, const std::string& help) {
  std::string env = "DECOR_";
  for (char c : name) env.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return app->add_option("--" + name, value, help)->envname(env);
}

int cmd_synth(const SynthConfig& cfg, const fs::path& out) {
  auto r = synth_database(cfg);
  save_database_dir(r.db, cfg.encoder(), out);
  std::cout << "wrote " << r.db.size() << " items (dim " << r.db.dim() << ", " << r.db.dictionary().size()
            << " attributes) to " << out << "\n";
  return 0;
}

int cmd_train(const fs::path& config, const fs::path& db_dir, const fs::path& out, std::optional<std::size_t> episodes,
              std::optional<std::uint64_t> seed, std::optional<std::string> mode, std::optional<double> gamma,
              std::size_t threads, const fs::path& metrics) {
  TrainConfig cfg = config.empty() ? TrainConfig{} : load_train_config(config);
  if (episodes) cfg.episodes = *episodes;
  if (seed) cfg.seed = *seed;
  if (mode) cfg.mode = parse_policy_kind(*mode);
  if (gamma) cfg.gamma = *gamma;
  if (threads) cfg.threads = threads;
  cfg.validate();
  auto ctx = open_db(db_dir);
  Simulator sim(ctx.db, ctx.encoder, cfg.simulator);
  fs::path log = metrics.empty() ? fs::path(out.string() + ".metrics.jsonl") : metrics;
  std::ofstream mlog(log, std::ios::trunc);
  if (!mlog) throw Error("cannot open metrics log " + log.string());
  auto res = train(cfg, ctx.db, sim, std::nullopt, [&](const EpochMetrics& m) {
    mlog << to_json(m).dump() << "\n";
    mlog.flush();
    std::cerr << "epoch " << m.epoch << "  episodes " << m.episodes << "  success " << fmt_double(m.success_rate, 3)
              << "  return " << fmt_double(m.mean_return, 3) << "  loss " << fmt_double(m.loss, 4) << "\n";
  });
  nlohmann::json meta = to_json(cfg);
  meta["database"] = {{"items", ctx.db.size()}, {"dim", ctx.db.dim()}};
  meta["note"] = "desk-scale run; episode budget and learning rate are not claimed to match any original setting";
  save_model(res.model, out, meta);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_eval(const fs::path& db_dir, const fs::path& model_path, const std::string& policy, EvalConfig cfg,
             const fs::path& csv, const fs::path& json_out, const SimulatorConfig& sim_cfg) {
  auto ctx = open_db(db_dir);
  std::vector<std::string> kinds;
  if (policy == "all") {
    kinds = {"random", "greedy", "greedy_topk_random", "coarse_only", "coarse_fine"};
  } else {
    kinds = {policy};
  }
  std::optional<PolicyModel> model;
  if (!model_path.empty()) model = load_model(model_path);
  std::vector<EvalResult> results;
  nlohmann::json report = nlohmann::json::array();
  for (const auto& k : kinds) {
    cfg.kind = parse_policy_kind(k);
    if (is_learned(cfg.kind) && !model) {
      if (policy == "all") continue;
      throw Error("eval: --model is required for policy " + k);
    }
    results.push_back(run_policy(cfg, ctx.db, ctx.encoder, sim_cfg, model ? &*model : nullptr));
    report.push_back(report_json(results.back()));
  }
  std::cout << report_table(results);
  const std::string body = (kinds.size() == 1 ? report[0] : report).dump(2) + "\n";
  if (!json_out.empty()) {
    io::write_file(json_out, body);
  } else {
    std::cout << body;
  }
  if (!csv.empty()) {
    if (results.size() != 1) throw Error("--csv needs a single policy");
    io::write_file(csv, outcomes_csv(results.front(), ctx.db));
  }
  return 0;
}

int cmd_weights(const fs::path& db_dir, const fs::path& model_path) {
  auto ctx = open_db(db_dir);
  auto model = load_model(model_path);
  auto fixtures = default_weight_fixtures(ctx.db);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : weight_report(model, ctx.db, ctx.encoder, fixtures)) {
    std::cout << fmt_double(r.baseline, 4) << "  " << fmt_double(r.weight, 4) << "  " << r.text << "\n";
    out.push_back({{"feedback", r.text}, {"weight", r.weight}, {"equal_weight", r.baseline}});
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_gen_feedback(const fs::path& db_dir, const fs::path& grammar_path, const fs::path& out, std::size_t m) {
  auto ctx = open_db(db_dir);
  Grammar grammar = grammar_path.empty() ? Grammar::defaults() : Grammar::load(grammar_path);
  auto augmented = augment_with_generated(ctx.db, grammar, m);
  save_database_dir(augmented, ctx.enc, out);
  std::size_t before = 0, after = 0;
  for (const auto& it : ctx.db.items()) before += it.sentences.size();
  for (const auto& it : augmented.items()) after += it.sentences.size();
  std::cout << "sentences " << before << " -> " << after << ", wrote " << out << "\n";
  return 0;
}

int cmd_serve(const fs::path& db_dir, const fs::path& model_path, int port, const fs::path& sessions_dir,
              const std::string& host, std::size_t t_max) {
  auto ctx = open_db(db_dir);
  auto model = load_model(model_path);
  ServiceConfig sc;
  sc.t_max = t_max;
  sc.sessions_dir = sessions_dir;
  sc.image_root = db_dir;
  Service service(ctx.db, ctx.encoder, model, sc);
  std::cerr << "serving on " << host << ":" << port << "\n";
  if (!service.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interactive decoration recommender"};
  app.require_subcommand(1);

  SynthConfig synth;
  fs::path synth_out;
  auto* s = app.add_subcommand("synth-db", "generate a synthetic item database");
  opt(s, "items", synth.items, "number of items");
  opt(s, "attrs", synth.attributes, "number of attributes");
  opt(s, "dim", synth.dim, "embedding dimension");
  opt(s, "seed", synth.seed, "generator seed");
  opt(s, "noise", synth.noise_scale, "embedding noise scale");
  opt(s, "marker", synth.marker_scale, "template marker scale");
  opt(s, "min-tags", synth.min_tags, "fewest attributes per item");
  opt(s, "max-tags", synth.max_tags, "most attributes per item");
  opt(s, "out", synth_out, "output directory")->required();

  fs::path train_config, train_db, train_out, train_metrics;
  std::optional<std::size_t> train_episodes;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> train_mode;
  std::optional<double> train_gamma;
  std::size_t train_threads = 0;
  auto* t = app.add_subcommand("train", "train a policy against the simulated user");
  opt(t, "config", train_config, "run configuration (.json or .toml)");
  opt(t, "db", train_db, "database directory")->required();
  opt(t, "out", train_out, "checkpoint path")->required();
  opt(t, "episodes", train_episodes, "override episode count");
  opt(t, "seed", train_seed, "override seed");
  opt(t, "mode", train_mode, "override mode (coarse_only | coarse_fine)");
  opt(t, "gamma", train_gamma, "override discount");
  opt(t, "threads", train_threads, "rollout workers");
  opt(t, "metrics", train_metrics, "metrics log path (default <out>.metrics.jsonl)");

  fs::path eval_db, eval_model, eval_csv, eval_json;
  std::string eval_policy = "all";
  EvalConfig eval;
  SimulatorConfig eval_sim;
  auto* e = app.add_subcommand("eval", "evaluate policies on seed-paired simulated episodes");
  opt(e, "db", eval_db, "database directory")->required();
  opt(e, "model", eval_model, "checkpoint (learned policies)");
  opt(e, "policy", eval_policy, "random | greedy | greedy_topk_random | coarse_only | coarse_fine | all");
  opt(e, "episodes", eval.episodes, "episodes");
  opt(e, "max-rounds", eval.t_max, "round limit");
  opt(e, "seed", eval.seed, "episode seed");
  opt(e, "threads", eval.threads, "workers");
  opt(e, "csv", eval_csv, "per-episode CSV output");
  opt(e, "json", eval_json, "JSON report path (default stdout)");

  fs::path w_db, w_model;
  auto* w = app.add_subcommand("weights", "coarse weights of the fixture feedback sequence");
  opt(w, "db", w_db, "database directory")->required();
  opt(w, "model", w_model, "checkpoint")->required();

  fs::path g_db, g_grammar, g_out;
  std::size_t g_m = 10;
  auto* g = app.add_subcommand("gen-feedback", "add grammar sentences over detected objects to a database");
  opt(g, "db", g_db, "database directory")->required();
  opt(g, "grammar", g_grammar, "grammar file (JSON list of patterns)");
  opt(g, "out", g_out, "output directory")->required();
  opt(g, "objects", g_m, "objects detected per item");

  fs::path v_db, v_model, v_sessions = "sessions";
  int v_port = 8080;
  std::string v_host = "127.0.0.1";
  std::size_t v_tmax = 10;
  auto* v = app.add_subcommand("serve", "run the HTTP session service");
  opt(v, "db", v_db, "database directory")->required();
  opt(v, "model", v_model, "checkpoint")->required();
  opt(v, "port", v_port, "port");
  opt(v, "host", v_host, "bind address");
  opt(v, "sessions-dir", v_sessions, "transcript directory");
  opt(v, "max-rounds", v_tmax, "round limit per session");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return cmd_synth(synth, synth_out);
    if (*t) {
      return cmd_train(train_config, train_db, train_out, train_episodes, train_seed, train_mode, train_gamma,
                       train_threads, train_metrics);
    }
    if (*e) return cmd_eval(eval_db, eval_model, eval_policy, eval, eval_csv, eval_json, eval_sim);
    if (*w) return cmd_weights(w_db, w_model);
    if (*g) return cmd_gen_feedback(g_db, g_grammar, g_out, g_m);
    if (*v) return cmd_serve(v_db, v_model, v_port, v_sessions, v_host, v_tmax);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
