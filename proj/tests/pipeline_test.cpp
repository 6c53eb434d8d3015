#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>

#include "helpers.hpp"

using namespace sidefx;
using testing_support::data_path;
using testing_support::read_text;
using testing_support::TempDir;
using testing_support::write_text;
namespace fs = std::filesystem;

namespace {

PipelineConfig bundled_config(const fs::path& out) {
  auto cfg = load_config(data_path("config.json"));
  cfg.paths.outputs = out.string();
  return cfg;
}

void run_all(const PipelineConfig& cfg) {
  std::ostringstream log;
  run_ingest(cfg, log);
  run_classify(cfg, log);
  run_match(cfg, log);
  run_stats(cfg, log);
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_text(e.path());
  return out;
}

nlohmann::json manifest(const fs::path& dir, const std::string& stage) {
  return nlohmann::json::parse(read_text(dir / ("manifest." + stage + ".json")));
}

int cli(const std::string& args) {
  const std::string cmd = std::string(SIDEFX_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string post(const std::string& id, const std::string& user, const std::string& text) {
  return nlohmann::json{{"id", id}, {"user_id", user}, {"timestamp", "2023-10-01T00:00:00Z"}, {"text", text}}.dump() +
         "\n";
}

// A tiny corpus on disk with a config pointing at it.
struct MiniProject {
  TempDir dir;
  nlohmann::json config;

  explicit MiniProject(const std::vector<std::string>& texts) {
    std::string posts, labels;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const std::string id = "p" + std::to_string(i);
      posts += post(id, "u" + std::to_string(i), texts[i]);
      labels += nlohmann::json{{"post_id", id}, {"label", "S"}}.dump() + "\n";
    }
    write_text(dir.path() / "posts.jsonl", posts);
    write_text(dir.path() / "labels.jsonl", labels);
    config = {{"paths",
               {{"posts", "posts.jsonl"},
                {"labels", "labels.jsonl"},
                {"lexicon", data_path("lexicon_seed.json")},
                {"negation_triggers", data_path("negation_triggers.txt")},
                {"outputs", "out"}}}};
    save();
  }
  void save() const { write_text(dir.path() / "config.json", config.dump(2)); }
  std::string config_path() const { return dir.str("config.json"); }
  fs::path out() const { return dir.path() / "out"; }
};

}  // namespace

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  const auto cfg = parse_config({{"paths", {{"posts", "a.jsonl"}, {"lexicon", "/abs/lex.json"}}}}, "/base/dir");
  ASSERT_EQ(cfg.paths.posts.size(), 1u);
  EXPECT_EQ(cfg.paths.posts[0], "/base/dir/a.jsonl");
  EXPECT_EQ(cfg.paths.lexicon, "/abs/lex.json");
  EXPECT_EQ(cfg.paths.outputs, "/base/dir/out");
}

TEST(Config, BundledConfigLoads) {
  const auto cfg = load_config(data_path("config.json"));
  EXPECT_EQ(cfg.mode, ClassifierMode::external_labels);
  EXPECT_EQ(cfg.matcher.similarity_threshold, 0.85);
  EXPECT_EQ(cfg.matcher.negation_triggers.size(), 13u);
  EXPECT_NO_THROW(validate(cfg));
}

TEST(Config, WorkspaceEnvironmentOverride) {
  ::setenv("SIDEFX_WORKSPACE", "/tmp/elsewhere", 1);
  const auto cfg = parse_config({{"paths", {{"workspace", "ws"}}}}, "/base");
  ::unsetenv("SIDEFX_WORKSPACE");
  EXPECT_EQ(cfg.paths.workspace, "/tmp/elsewhere");
  EXPECT_EQ(parse_config({{"paths", {{"workspace", "ws"}}}}, "/base").paths.workspace, "/base/ws");
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config({{"classifier", {{"mode", "bert"}}}}, "/"), ConfigError);
  EXPECT_THROW(parse_config({{"matcher", {{"window_min", "one"}}}}, "/"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
  TempDir dir;
  write_text(dir.path() / "c.json", "{not json");
  EXPECT_THROW(load_config(dir.str("c.json")), ConfigError);
  auto cfg = parse_config(nlohmann::json::object(), "/");
  cfg.stats.alpha = 2;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(Config, SnapshotLeavesOutOutputDir) {
  auto a = parse_config(nlohmann::json::object(), "/x");
  auto b = parse_config(nlohmann::json::object(), "/y");
  b.paths.outputs = "/elsewhere";
  a.paths = b.paths;
  a.paths.outputs = "/another";
  EXPECT_EQ(a.snapshot(), b.snapshot());
}

TEST(OutputSet, UncommittedFilesRemoved) {
  TempDir dir;
  {
    OutputSet out(dir.path());
    out.write("a.txt", "x");
    out.write("sub/b.txt", "y");
    EXPECT_TRUE(fs::exists(dir.path() / "sub/b.txt"));
  }
  EXPECT_FALSE(fs::exists(dir.path() / "a.txt"));
  EXPECT_FALSE(fs::exists(dir.path() / "sub/b.txt"));
  {
    OutputSet out(dir.path());
    out.write("a.txt", "x");
    out.commit();
  }
  EXPECT_EQ(read_text(dir.path() / "a.txt"), "x");
}

TEST(EndToEnd, DeterministicAcrossOutputDirs) {
  TempDir a, b;
  const auto t0 = std::chrono::steady_clock::now();
  run_all(bundled_config(a.path()));
  const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run_all(bundled_config(b.path()));
  EXPECT_LT(elapsed, 60.0);

  const auto ta = tree(a.path()), tb = tree(b.path());
  ASSERT_EQ(ta.size(), tb.size());
  for (const auto& [name, content] : ta) {
    ASSERT_TRUE(tb.count(name)) << name;
    if (name.rfind("manifest.", 0) == 0) {
      auto ma = nlohmann::json::parse(content), mb = nlohmann::json::parse(tb.at(name));
      ma.erase("created_at");
      mb.erase("created_at");
      EXPECT_EQ(ma, mb) << name;
    } else {
      EXPECT_EQ(content, tb.at(name)) << name;
    }
  }
  for (const char* f : {"stats/medications.csv", "stats/side_effects.csv", "stats/patterns.csv",
                        "stats/association.csv", "stats/pairwise.csv", "stats/heatmap.csv", "stats/report.json"})
    EXPECT_TRUE(ta.count(f)) << f;
}

TEST(EndToEnd, ManifestsChainByDigest) {
  TempDir dir;
  run_all(bundled_config(dir.path()));
  const char* chain[] = {"ingest", "classify", "match", "stats"};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto m = manifest(dir.path(), chain[i]);
    EXPECT_EQ(m["digest"], manifest_digest(m)) << chain[i];
    EXPECT_EQ(m["stage"], chain[i]);
    for (const auto& [name, digest] : m["outputs"].items())
      EXPECT_EQ(digest, sha256_hex(read_text(dir.path() / name))) << name;
    if (i == 0) continue;
    const auto up = manifest(dir.path(), chain[i - 1]);
    EXPECT_EQ(m["upstream"]["stage"], chain[i - 1]);
    EXPECT_EQ(m["upstream"]["digest"], up["digest"]);
  }
  EXPECT_EQ(manifest(dir.path(), "match")["lexicon_version"], 1);
}

TEST(EndToEnd, TrainModeWritesModel) {
  TempDir dir;
  auto cfg = bundled_config(dir.path());
  cfg.mode = ClassifierMode::train;
  cfg.grid.l2_penalties = {0.01};
  cfg.grid.folds = 3;
  std::ostringstream log;
  run_ingest(cfg, log);
  run_classify(cfg, log);
  EXPECT_TRUE(fs::exists(dir.path() / "model.json"));
  EXPECT_TRUE(fs::exists(dir.path() / "cv_report.json"));
  EXPECT_TRUE(fs::exists(dir.path() / "cohort.jsonl"));
}

TEST(Stages, MissingUpstreamIsConfigError) {
  TempDir dir;
  std::ostringstream log;
  EXPECT_THROW(run_match(bundled_config(dir.path()), log), ConfigError);
  EXPECT_THROW(run_stats(bundled_config(dir.path()), log), ConfigError);
}

TEST(Stages, LexiconVersionMismatchRejected) {
  TempDir dir;
  auto cfg = bundled_config(dir.path());
  std::ostringstream log;
  run_ingest(cfg, log);
  run_classify(cfg, log);
  run_match(cfg, log);
  auto lex = load_lexicon(cfg.paths.lexicon);
  lex = enrich(lex, {}, 1);
  save_lexicon(dir.str("v2.json"), lex);
  cfg.paths.lexicon = dir.str("v2.json");
  EXPECT_THROW(run_stats(cfg, log), DataError);
  EXPECT_FALSE(fs::exists(dir.path() / "stats"));
}

TEST(Stages, EvalAgainstGold) {
  TempDir dir;
  auto cfg = bundled_config(dir.path());
  std::ostringstream log;
  run_ingest(cfg, log);
  run_classify(cfg, log);
  run_match(cfg, log);
  const auto mf = read_match_file(dir.str("matches.jsonl"));
  GoldSet gold{"g", {}, {}};
  for (const auto& [user, recs] : mf.matches) {
    gold.profiles.push_back(user);
    for (const auto& m : recs) gold.truth[user].insert({m.category, m.entry_id, m.negated});
  }
  write_text(dir.path() / "gold.json", gold_to_json(gold).dump());
  cfg.paths.gold = dir.str("gold.json");
  run_eval(cfg, log);
  const auto ev = nlohmann::json::parse(read_text(dir.path() / "eval.json"));
  EXPECT_EQ(ev["overall"]["display"], "P=1.00, R=1.00, F1=1.00");
  EXPECT_EQ(manifest(dir.path(), "eval")["upstream"]["stage"], "match");
}

TEST(Stages, AgreeWritesMatrix) {
  TempDir dir;
  auto cfg = bundled_config(dir.path());
  AnnotationRound r;
  r.tasks = {"u1"};
  r.submit("a1", "u1", {{{Category::side_effect, "se_nausea", false}, std::nullopt}});
  r.submit("a2", "u1", {{{Category::side_effect, "se_nausea", false}, std::nullopt}});
  write_text(dir.path() / "round.json", round_to_json(r).dump());
  cfg.paths.round = dir.str("round.json");
  std::ostringstream log;
  run_agree(cfg, log);
  const auto j = nlohmann::json::parse(read_text(dir.path() / "agreement.json"));
  EXPECT_EQ(j["mean"], 1.0);
  EXPECT_NE(log.str().find("mean kappa 1.00"), std::string::npos);
}

TEST(Cli, ExternalLabelsWithoutLabelsFileExitsOne) {
  MiniProject p({"started tamoxifen, nausea all day"});
  p.config["paths"].erase("labels");
  p.save();
  EXPECT_EQ(cli("ingest -c " + p.config_path()), 0);
  EXPECT_EQ(cli("classify -c " + p.config_path()), 1);
  EXPECT_FALSE(fs::exists(p.out() / "cohort.jsonl"));
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("stats"), 1);  // --config missing
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("stats -c /nonexistent/config.json"), 1);
}

TEST(Cli, DataErrorExitsTwoAndLeavesNoPartialOutput) {
  MiniProject p({"started tamoxifen, nausea all day"});
  TempDir lex;
  write_text(lex.path() / "bad.json", R"({"version": 1, "entries": [{"entry_id": "x"}]})");
  p.config["paths"]["lexicon"] = lex.str("bad.json");
  p.save();
  EXPECT_EQ(cli("run -c " + p.config_path()), 2);
  EXPECT_TRUE(fs::exists(p.out() / "cohort.jsonl"));
  EXPECT_FALSE(fs::exists(p.out() / "matches.jsonl"));
  EXPECT_FALSE(fs::exists(p.out() / "manifest.match.json"));
}

TEST(Cli, SinglePatternStatsSucceedWithSkipReason) {
  MiniProject p({"started tamoxifen, nausea all day", "on letrozole for breast cancer now, hot flashes", "tamoxifen day 3 and tired"});
  EXPECT_EQ(cli("run -c " + p.config_path()), 0);
  const auto report = nlohmann::json::parse(read_text(p.out() / "stats/report.json"));
  EXPECT_EQ(report["skip_reason"], "single_pattern");
  EXPECT_EQ(report["patterns"], nlohmann::json::array({"hormone_therapy"}));
  EXPECT_EQ(report["cohort_with_medication"], 3);
}

TEST(Cli, NoMedicationCohortIsDataError) {
  MiniProject p({"breast cancer nausea all day"});
  EXPECT_EQ(cli("run -c " + p.config_path()), 2);
  EXPECT_FALSE(fs::exists(p.out() / "stats/report.json"));
}

TEST(Cli, OverridesReachManifest) {
  MiniProject p({"started tamoxifen, nausea all day"});
  const std::string out = p.dir.str("custom");
  EXPECT_EQ(cli("ingest -c " + p.config_path() + " -o " + out), 0);
  EXPECT_EQ(cli("classify -c " + p.config_path() + " -o " + out), 0);
  EXPECT_EQ(cli("match -c " + p.config_path() + " -o " + out + " --threshold 0.9"), 0);
  EXPECT_EQ(manifest(out, "match")["config"]["matcher"]["similarity_threshold"], 0.9);
  EXPECT_EQ(cli("match -c " + p.config_path() + " -o " + out + " --threshold 1.5"), 1);
}

TEST(Cli, SynthIsDeterministic) {
  TempDir a, b;
  ASSERT_EQ(cli("synth -o " + a.str("s") + " --posts 50 --seed 3"), 0);
  ASSERT_EQ(cli("synth -o " + b.str("s") + " --posts 50 --seed 3"), 0);
  EXPECT_EQ(tree(a.path()), tree(b.path()));
}

TEST(Cli, LexiconDiff) {
  TempDir dir;
  const auto seed = load_lexicon(data_path("lexicon_seed.json"));
  LexiconEntry fog;
  fog.entry_id = "se_brain_fog";
  fog.canonical = "brain fog";
  fog.category = Category::side_effect;
  save_lexicon(dir.str("v2.json"), enrich(seed, {normalize_entry(fog)}, 1));
  const std::string cmd = std::string(SIDEFX_CLI) + " diff " + data_path("lexicon_seed.json") + " " +
                          dir.str("v2.json") + " > " + dir.str("diff.txt");
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_EQ(read_text(dir.path() / "diff.txt"), "{\"entry_id\":\"se_brain_fog\",\"kind\":\"add\"}\n");
}
