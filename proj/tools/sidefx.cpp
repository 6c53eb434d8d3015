// sidefx: command-line driver for the pipeline stages and the annotation API.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 data error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sidefx/server.hpp"
#include "sidefx/sidefx.hpp"

namespace fs = std::filesystem;
using namespace sidefx;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<double> threshold;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

PipelineConfig load(const CommonOptions& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  auto cfg = load_config(o.config);
  if (o.threshold) cfg.matcher.similarity_threshold = *o.threshold;
  if (o.alpha) cfg.stats.alpha = *o.alpha;
  if (o.seed) {
    cfg.grid.seed = *o.seed;
    cfg.stats.seed = *o.seed;
    cfg.gold_seed = *o.seed;
  }
  if (o.out) cfg.paths.outputs = fs::absolute(*o.out).lexically_normal().string();
  validate(cfg);
  return cfg;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "pipeline config (JSON)")->required();
  cmd->add_option("--threshold", o.threshold, "matcher similarity threshold");
  cmd->add_option("--alpha", o.alpha, "significance level");
  cmd->add_option("--seed", o.seed, "seed for folds, permutations and gold sampling");
  cmd->add_option("-o,--out", o.out, "output directory");
}

void write_jsonl(const fs::path& p, const std::vector<nlohmann::json>& rows) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  for (const auto& r : rows) out << r.dump() << "\n";
}

void run_synth(const std::string& dir, std::size_t n, std::uint64_t seed) {
  const auto corpus = make_synthetic_corpus(n, seed);
  fs::create_directories(dir);
  std::vector<nlohmann::json> posts, labels, training;
  for (const auto& p : corpus.posts)
    posts.push_back({{"id", p.id}, {"user_id", p.user_id}, {"timestamp", format_timestamp(p.timestamp)}, {"text", p.text}});
  for (const auto& l : corpus.labels) labels.push_back({{"post_id", l.post_id}, {"label", to_string(l.label)}});
  for (const auto& t : corpus.training) training.push_back({{"text", t.text}, {"label", to_string(t.label)}});
  write_jsonl(fs::path(dir) / "posts.jsonl", posts);
  write_jsonl(fs::path(dir) / "labels.jsonl", labels);
  write_jsonl(fs::path(dir) / "training.jsonl", training);
  std::cout << "synth: " << posts.size() << " posts, " << training.size() << " training examples in " << dir << "\n";
}

void run_init(const PipelineConfig& cfg) {
  if (cfg.paths.workspace.empty()) throw ConfigError("paths.workspace not configured");
  const fs::path cohort = fs::path(cfg.paths.outputs) / "cohort.jsonl";
  require_file(cohort.string(), "cohort store (run classify first)");
  require_file(cfg.paths.lexicon, "lexicon");
  const auto profiles = read_profiles(cohort.string());
  const auto lexicon = load_lexicon(cfg.paths.lexicon);
  const auto gold = sample_gold(profiles, std::min(cfg.gold_size, profiles.size()), cfg.gold_seed);
  Workspace::create(cfg.paths.workspace, profiles, lexicon, gold, cfg.annotators);
  std::cout << "init: workspace " << cfg.paths.workspace << " with " << profiles.size() << " profiles, "
            << gold.profiles.size() << " gold profiles, round 1 open\n";
}

void run_serve(const PipelineConfig& cfg, std::optional<int> port) {
  if (cfg.paths.workspace.empty()) throw ConfigError("paths.workspace not configured");
  Workspace ws(cfg.paths.workspace, cfg.matcher);
  AnnotationServer server(ws);
  const int bound = server.bind(cfg.host, port.value_or(cfg.port));
  std::cout << "serving " << cfg.paths.workspace << " on http://" << cfg.host << ":" << bound << "\n" << std::flush;
  server.listen();
}

void run_diff(const std::string& a, const std::string& b) {
  const auto va = load_lexicon(a);
  const auto vb = load_lexicon(b);
  for (const auto& d : diff(va, vb)) {
    nlohmann::json j = {{"kind", to_string(d.kind)}, {"entry_id", d.entry_id}};
    if (!d.added_synonyms.empty()) j["added_synonyms"] = d.added_synonyms;
    if (!d.removed_synonyms.empty()) j["removed_synonyms"] = d.removed_synonyms;
    if (!d.changed_fields.empty()) j["changed_fields"] = d.changed_fields;
    std::cout << j.dump() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Side-effect mining over breast-cancer social-media posts"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  CommonOptions common;
  std::function<void()> action;

  struct Stage {
    const char* name;
    const char* help;
    void (*fn)(const PipelineConfig&, std::ostream&);
  };
  const Stage stages[] = {
      {"ingest", "read raw posts, filter by keyword, collapse per user", run_ingest},
      {"classify", "label posts S/NR and select the cohort", run_classify},
      {"match", "match cohort profiles against the lexicon", run_match},
      {"stats", "prevalence tables and pattern association tests", run_stats},
      {"eval", "score matches against the gold set", run_eval},
      {"agree", "pairwise Cohen's kappa for an annotation round", run_agree},
  };
  for (const auto& s : stages) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, common);
    cmd->callback([&action, &common, fn = s.fn] { action = [&common, fn] { fn(load(common), std::cout); }; });
  }

  auto* run = app.add_subcommand("run", "ingest, classify, match and stats in sequence");
  add_common(run, common);
  run->callback([&] {
    action = [&] {
      const auto cfg = load(common);
      for (auto fn : {run_ingest, run_classify, run_match, run_stats}) fn(cfg, std::cout);
    };
  });

  auto* init = app.add_subcommand("init", "create an annotation workspace from the cohort");
  add_common(init, common);
  init->callback([&] { action = [&] { run_init(load(common)); }; });

  std::optional<int> port;
  auto* serve = app.add_subcommand("serve", "serve the annotation API for a workspace");
  add_common(serve, common);
  serve->add_option("--port", port, "listen port (0 picks a free one)");
  serve->callback([&] { action = [&] { run_serve(load(common), port); }; });

  std::string synth_dir;
  std::size_t synth_posts = 500;
  std::uint64_t synth_seed = 2024;
  auto* synth = app.add_subcommand("synth", "write a synthetic post corpus with labels");
  synth->add_option("-o,--out", synth_dir, "output directory")->required();
  synth->add_option("--posts", synth_posts, "number of posts");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->callback([&] { action = [&] { run_synth(synth_dir, synth_posts, synth_seed); }; });

  std::string diff_a, diff_b;
  auto* diffcmd = app.add_subcommand("diff", "compare two lexicon versions");
  diffcmd->add_option("old", diff_a, "older lexicon file")->required();
  diffcmd->add_option("new", diff_b, "newer lexicon file")->required();
  diffcmd->callback([&] { action = [&] { run_diff(diff_a, diff_b); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (action) action();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
