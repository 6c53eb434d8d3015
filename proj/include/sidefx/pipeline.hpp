#pragma once

// Stage runners behind the command-line tool. Every stage reads flat files,
// writes flat files into the output directory, and records a manifest with
// input digests and the effective configuration.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sidefx/annotation.hpp"
#include "sidefx/classifier.hpp"
#include "sidefx/corpus.hpp"
#include "sidefx/digest.hpp"
#include "sidefx/error.hpp"
#include "sidefx/lexicon.hpp"
#include "sidefx/matcher.hpp"
#include "sidefx/parallel.hpp"
#include "sidefx/stats.hpp"

namespace sidefx {

inline constexpr const char* kToolVersion = "0.3.0";

namespace fs = std::filesystem;

enum class ClassifierMode { train, external_labels };

struct PipelinePaths {
  std::vector<std::string> posts;
  std::string lexicon;
  std::string negation_triggers;  // empty: built-in trigger list
  std::string labels;             // external_labels mode
  std::string training;           // train mode
  std::string gold;
  std::string round;
  std::string workspace;
  std::string outputs = "out";
};

struct PipelineConfig {
  PipelinePaths paths;
  KeywordFilterConfig keywords;
  FeatureConfig features;
  GridSearchSpec grid;
  MatcherConfig matcher;
  StatsConfig stats;
  ClassifierMode mode = ClassifierMode::external_labels;
  std::size_t gold_size = 20;
  std::uint64_t gold_seed = 7;
  std::vector<std::string> annotators{"a1", "a2", "a3"};
  std::string host = "127.0.0.1";
  int port = 8080;

  // Effective configuration as recorded in manifests. The output directory
  // is left out so identical runs into different directories compare equal.
  nlohmann::json snapshot() const {
    nlohmann::json grid_json = {{"l2_penalties", grid.l2_penalties},
                                {"ngram_ranges", grid.ngram_ranges},
                                {"folds", grid.folds},
                                {"seed", grid.seed},
                                {"max_iter", grid.max_iter},
                                {"tol", grid.tol}};
    return {{"paths",
             {{"posts", paths.posts},
              {"lexicon", paths.lexicon},
              {"negation_triggers", paths.negation_triggers},
              {"labels", paths.labels},
              {"training", paths.training},
              {"gold", paths.gold},
              {"round", paths.round},
              {"workspace", paths.workspace}}},
            {"keywords", keywords.keywords},
            {"include_hashtag_forms", keywords.include_hashtag_forms},
            {"features", features},
            {"classifier", {{"mode", mode == ClassifierMode::train ? "train" : "external_labels"}, {"grid", grid_json}}},
            {"matcher",
             {{"window_min", matcher.window_min},
              {"window_max", matcher.window_max},
              {"stride", matcher.stride},
              {"similarity_threshold", matcher.similarity_threshold},
              {"negation_window", matcher.negation_window},
              {"negation_triggers", matcher.negation_triggers}}},
            {"stats",
             {{"alpha", stats.alpha},
              {"min_group_size", stats.min_group_size},
              {"exclude_negated", stats.exclude_negated},
              {"permutations", stats.permutations},
              {"seed", stats.seed}}},
            {"gold", {{"size", gold_size}, {"seed", gold_seed}}},
            {"annotators", annotators}};
  }
};

namespace detail {

inline std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

}  // namespace detail

/// Parse a JSON config. Relative paths are taken relative to the config
/// file's directory; SIDEFX_WORKSPACE, when set, replaces the workspace path.
inline PipelineConfig parse_config(const nlohmann::json& j, const fs::path& base_dir) {
  using detail::read_opt;
  using detail::resolve;
  PipelineConfig c;
  try {
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      if (p.contains("posts")) {
        if (p["posts"].is_string()) c.paths.posts = {p["posts"].get<std::string>()};
        else c.paths.posts = p["posts"].get<std::vector<std::string>>();
      }
      read_opt(p, "lexicon", c.paths.lexicon);
      read_opt(p, "negation_triggers", c.paths.negation_triggers);
      read_opt(p, "labels", c.paths.labels);
      read_opt(p, "training", c.paths.training);
      read_opt(p, "gold", c.paths.gold);
      read_opt(p, "round", c.paths.round);
      read_opt(p, "workspace", c.paths.workspace);
      read_opt(p, "outputs", c.paths.outputs);
    }
    read_opt(j, "keywords", c.keywords.keywords);
    read_opt(j, "include_hashtag_forms", c.keywords.include_hashtag_forms);
    if (j.contains("features")) c.features = j["features"].get<FeatureConfig>();
    if (j.contains("classifier")) {
      const auto& cl = j["classifier"];
      const auto mode = cl.value("mode", std::string("external_labels"));
      if (mode == "train") c.mode = ClassifierMode::train;
      else if (mode == "external_labels") c.mode = ClassifierMode::external_labels;
      else throw ConfigError("classifier.mode must be 'train' or 'external_labels'");
      if (cl.contains("grid")) {
        const auto& g = cl["grid"];
        read_opt(g, "l2_penalties", c.grid.l2_penalties);
        read_opt(g, "ngram_ranges", c.grid.ngram_ranges);
        read_opt(g, "folds", c.grid.folds);
        read_opt(g, "seed", c.grid.seed);
        read_opt(g, "max_iter", c.grid.max_iter);
        read_opt(g, "tol", c.grid.tol);
      }
    }
    if (j.contains("matcher")) {
      const auto& m = j["matcher"];
      read_opt(m, "window_min", c.matcher.window_min);
      read_opt(m, "window_max", c.matcher.window_max);
      read_opt(m, "stride", c.matcher.stride);
      read_opt(m, "similarity_threshold", c.matcher.similarity_threshold);
      read_opt(m, "negation_window", c.matcher.negation_window);
    }
    if (j.contains("stats")) {
      const auto& s = j["stats"];
      read_opt(s, "alpha", c.stats.alpha);
      read_opt(s, "min_group_size", c.stats.min_group_size);
      read_opt(s, "exclude_negated", c.stats.exclude_negated);
      read_opt(s, "permutations", c.stats.permutations);
      read_opt(s, "seed", c.stats.seed);
    }
    if (j.contains("gold")) {
      read_opt(j["gold"], "size", c.gold_size);
      read_opt(j["gold"], "seed", c.gold_seed);
    }
    read_opt(j, "annotators", c.annotators);
    if (j.contains("server")) {
      read_opt(j["server"], "host", c.host);
      read_opt(j["server"], "port", c.port);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  for (auto& p : c.paths.posts) p = resolve(base_dir, p);
  for (std::string* p : {&c.paths.lexicon, &c.paths.negation_triggers, &c.paths.labels, &c.paths.training,
                         &c.paths.gold, &c.paths.round, &c.paths.workspace, &c.paths.outputs})
    *p = resolve(base_dir, *p);
  if (const char* ws = std::getenv("SIDEFX_WORKSPACE"); ws && *ws) c.paths.workspace = ws;
  if (!c.paths.negation_triggers.empty()) c.matcher.negation_triggers = load_negation_triggers(c.paths.negation_triggers);
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("config '" + path + "': " + ex.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

inline void validate(const PipelineConfig& c) {
  c.keywords.validate();
  c.features.validate();
  c.grid.validate();
  c.matcher.validate();
  c.stats.validate();
}

// --- Output handling -------------------------------------------------------

/// Files written by one stage. Unless commit() is called, everything written
/// is removed again when the set goes out of scope.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;
  ~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : written_) fs::remove(dir_ / f, ec);
  }

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& content) {
    const fs::path target = dir_ / name;
    fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw IoError("cannot write '" + target.string() + "'");
      out << content;
      if (!out) throw IoError("write failed for '" + target.string() + "'");
    }
    fs::rename(tmp, target);
    written_.push_back(name);
    digests_[name] = sha256_hex(content);
  }

  const std::map<std::string, std::string>& digests() const { return digests_; }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<std::string> written_;
  std::map<std::string, std::string> digests_;
  bool committed_ = false;
};

inline std::string utc_now() {
  return format_timestamp(std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now()));
}

// Digest of a manifest with its timestamp removed; this is what downstream
// manifests reference, so reruns on identical inputs chain identically.
inline std::string manifest_digest(nlohmann::json m) {
  m.erase("created_at");
  m.erase("digest");
  return sha256_hex(m.dump());
}

struct StageInput {
  std::string role;
  std::string path;
};

inline void write_manifest(OutputSet& out, const std::string& stage, const PipelineConfig& cfg,
                           const std::vector<StageInput>& inputs, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json m;
  m["stage"] = stage;
  m["tool_version"] = kToolVersion;
  nlohmann::json ins = nlohmann::json::array();
  // Inputs produced by earlier stages are recorded relative to the output
  // directory so runs into different directories give the same manifest.
  const auto out_dir = fs::weakly_canonical(fs::absolute(out.dir()));
  for (const auto& in : inputs) {
    const auto abs = fs::weakly_canonical(fs::absolute(in.path));
    const auto rel = abs.lexically_relative(out_dir);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    ins.push_back({{"role", in.role}, {"path", inside ? rel.string() : in.path}, {"sha256", sha256_file(in.path)}});
  }
  m["inputs"] = ins;
  nlohmann::json outs = nlohmann::json::object();
  for (const auto& [name, digest] : out.digests()) outs[name] = digest;
  m["outputs"] = outs;
  m["config"] = cfg.snapshot();
  for (auto& [k, v] : extra.items()) m[k] = v;
  m["digest"] = manifest_digest(m);
  m["created_at"] = utc_now();
  out.write("manifest." + stage + ".json", m.dump(2) + "\n");
}

// Reference to an upstream stage's manifest, for chaining.
inline nlohmann::json upstream_ref(const fs::path& dir, const std::string& stage) {
  const fs::path p = dir / ("manifest." + stage + ".json");
  std::ifstream in(p);
  if (!in) return nullptr;
  try {
    auto m = nlohmann::json::parse(in);
    return {{"stage", stage}, {"manifest", p.filename().string()}, {"digest", m.value("digest", std::string{})}};
  } catch (const nlohmann::json::exception&) {
    throw DataError("unreadable manifest '" + p.string() + "'");
  }
}

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path not configured");
  if (!fs::exists(path)) throw ConfigError(what + " '" + path + "' does not exist");
}

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

// --- Match file ------------------------------------------------------------

struct MatchFile {
  ProfileMatches matches;  // every profile, including those without matches
  std::optional<int> lexicon_version;
};

inline std::string write_match_lines(const std::vector<UserProfile>& profiles,
                                     const std::vector<std::vector<MatchRecord>>& results,
                                     const std::vector<std::size_t>& token_counts, int lexicon_version) {
  std::string out;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    std::size_t negated = 0;
    for (const auto& m : results[i]) {
      auto j = match_to_json(m);
      nlohmann::json line = {{"type", "match"}, {"user_id", profiles[i].user_id}};
      line.update(j);
      out += line.dump() + "\n";
      negated += m.negated;
    }
    nlohmann::json summary = {{"type", "summary"},           {"user_id", profiles[i].user_id},
                              {"tokens", token_counts[i]},   {"matches", results[i].size()},
                              {"negated", negated},          {"lexicon_version", lexicon_version}};
    out += summary.dump() + "\n";
  }
  return out;
}

inline MatchFile read_match_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read matches '" + path + "'");
  MatchFile mf;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      const auto user = j.at("user_id").get<std::string>();
      const auto type = j.at("type").get<std::string>();
      if (type == "match") {
        mf.matches[user].push_back(match_from_json(j));
      } else if (type == "summary") {
        mf.matches.try_emplace(user);
        const int v = j.at("lexicon_version").get<int>();
        if (mf.lexicon_version && *mf.lexicon_version != v) throw DataError("mixed lexicon versions in match file");
        mf.lexicon_version = v;
      } else {
        throw DataError("unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("matches line " + std::to_string(n) + ": " + ex.what());
    }
  }
  return mf;
}

// --- Stages ----------------------------------------------------------------

inline void run_ingest(const PipelineConfig& cfg, std::ostream& log) {
  if (cfg.paths.posts.empty()) throw ConfigError("paths.posts not configured");
  for (const auto& p : cfg.paths.posts) require_file(p, "posts source");
  cfg.keywords.validate();

  auto result = ingest_files(cfg.paths.posts);
  const auto filtered = keyword_filter(result.posts, cfg.keywords);
  const auto profiles = collapse_by_user(filtered);

  std::ostringstream store;
  write_profiles(store, profiles);
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& e : result.report.errors) errors.push_back({{"line", e.line}, {"reason", e.reason}});
  nlohmann::json report = {{"lines", result.report.lines},
                           {"accepted", result.report.accepted},
                           {"rejected", result.report.rejected},
                           {"duplicates", result.report.duplicates},
                           {"after_keyword_filter", filtered.size()},
                           {"profiles", profiles.size()},
                           {"errors", errors}};

  OutputSet out(cfg.paths.outputs);
  out.write("profiles.jsonl", store.str());
  out.write("ingest_report.json", report.dump(2) + "\n");
  std::vector<StageInput> inputs;
  for (const auto& p : cfg.paths.posts) inputs.push_back({"posts", p});
  write_manifest(out, "ingest", cfg, inputs);
  out.commit();
  log << "ingest: " << result.report.accepted << " posts accepted, " << result.report.rejected << " rejected, "
      << result.report.duplicates << " duplicate ids, " << filtered.size() << " after keyword filter, "
      << profiles.size() << " profiles\n";
}

inline std::vector<TrainingExample> read_training_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read training file '" + path + "'");
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto label = parse_label(j.at("label").get<std::string>());
      if (!label) throw DataError("training line " + std::to_string(n) + ": label outside {S, NR}");
      out.push_back({j.at("text").get<std::string>(), *label});
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("training line " + std::to_string(n) + ": " + ex.what());
    }
  }
  return out;
}

inline void run_classify(const PipelineConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.paths.outputs;
  const std::string profiles_path = (dir / "profiles.jsonl").string();
  require_file(profiles_path, "profile store (run ingest first)");
  std::vector<StageInput> inputs{{"profiles", profiles_path}};
  if (cfg.mode == ClassifierMode::external_labels) {
    require_file(cfg.paths.labels, "external labels file");
    inputs.push_back({"labels", cfg.paths.labels});
  } else {
    require_file(cfg.paths.training, "training file");
    inputs.push_back({"training", cfg.paths.training});
  }

  const auto profiles = read_profiles(profiles_path);
  std::set<std::string> post_ids;
  for (const auto& p : profiles)
    for (const auto& post : p.posts) post_ids.insert(post.id);

  OutputSet out(dir);
  std::map<std::string, LabeledPost> labels;
  nlohmann::json report;
  if (cfg.mode == ClassifierMode::external_labels) {
    auto imported = import_external_labels(cfg.paths.labels, &post_ids);
    labels = std::move(imported.labels);
    report = {{"mode", "external_labels"},
              {"lines", imported.lines},
              {"rejected", imported.rejected},
              {"duplicates", imported.duplicates},
              {"unknown_post_ids", imported.unknown_post_ids}};
  } else {
    validate(cfg);
    const auto data = read_training_file(cfg.paths.training);
    const auto trained = train(data, cfg.grid, cfg.features);
    for (const auto& p : profiles) {
      for (const auto& post : p.posts) {
        const auto pred = predict(trained.model, post.text);
        labels[post.id] = {post.id, pred.label, pred.score};
      }
    }
    out.write("model.json", model_to_json(trained.model).dump() + "\n");
    out.write("cv_report.json", cv_report_to_json(trained.cv).dump(2) + "\n");
    report = {{"mode", "train"}, {"training_examples", data.size()}, {"selected", trained.cv.best}};
  }

  std::string label_lines;
  std::vector<UserProfile> cohort;
  std::size_t s_posts = 0, unlabeled = 0;
  for (const auto& p : profiles) {
    bool member = false;
    for (const auto& post : p.posts) {
      auto it = labels.find(post.id);
      if (it == labels.end()) {
        ++unlabeled;
        continue;
      }
      nlohmann::json line = {{"post_id", post.id}, {"user_id", p.user_id}, {"label", to_string(it->second.label)}};
      if (it->second.score) line["score"] = *it->second.score;
      label_lines += line.dump() + "\n";
      if (it->second.label == Label::S) {
        member = true;
        ++s_posts;
      }
    }
    if (member) cohort.push_back(p);
  }
  report["s_posts"] = s_posts;
  report["unlabeled_posts"] = unlabeled;
  report["cohort_size"] = cohort.size();

  std::ostringstream cohort_store;
  write_profiles(cohort_store, cohort);
  out.write("post_labels.jsonl", label_lines);
  out.write("cohort.jsonl", cohort_store.str());
  out.write("classify_report.json", report.dump(2) + "\n");
  write_manifest(out, "classify", cfg, inputs, {{"upstream", upstream_ref(dir, "ingest")}});
  out.commit();
  log << "classify: " << s_posts << " S posts, cohort of " << cohort.size() << " users\n";
}

inline void run_match(const PipelineConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.paths.outputs;
  const std::string cohort_path = (dir / "cohort.jsonl").string();
  require_file(cohort_path, "cohort store (run classify first)");
  require_file(cfg.paths.lexicon, "lexicon");
  cfg.matcher.validate();
  std::vector<StageInput> inputs{{"cohort", cohort_path}, {"lexicon", cfg.paths.lexicon}};
  if (!cfg.paths.negation_triggers.empty()) inputs.push_back({"negation_triggers", cfg.paths.negation_triggers});

  const auto profiles = read_profiles(cohort_path);
  const auto lexicon = load_lexicon(cfg.paths.lexicon);
  if (lexicon.entries.empty()) throw DataError("lexicon is empty");
  const LexiconIndex index(lexicon);

  std::vector<std::vector<MatchRecord>> results(profiles.size());
  std::vector<std::size_t> token_counts(profiles.size());
  parallel_for(profiles.size(), [&](std::size_t i) {
    const auto tokens = normalize(profiles[i].collapsed_text);
    token_counts[i] = tokens.size();
    results[i] = match_tokens(tokens, index, cfg.matcher);
  });
  std::size_t total = 0;
  for (const auto& r : results) total += r.size();

  OutputSet out(dir);
  out.write("matches.jsonl", write_match_lines(profiles, results, token_counts, lexicon.version));
  write_manifest(out, "match", cfg, inputs,
                 {{"lexicon_version", lexicon.version}, {"upstream", upstream_ref(dir, "classify")}});
  out.commit();
  log << "match: " << total << " matches over " << profiles.size() << " profiles (lexicon v" << lexicon.version
      << ")\n";
}

inline std::string count_table_csv(const std::vector<CountRow>& rows, const char* key_header) {
  std::string s = std::string(key_header) + ",label,count,proportion,display\n";
  for (const auto& r : rows)
    s += csv_field(r.key) + "," + csv_field(r.label) + "," + std::to_string(r.count) + "," + fmt_num(r.proportion) +
         "," + csv_field(r.display) + "\n";
  return s;
}

inline nlohmann::json count_rows_json(const std::vector<CountRow>& rows) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rows)
    a.push_back({{"key", r.key}, {"label", r.label}, {"count", r.count}, {"proportion", r.proportion}, {"display", r.display}});
  return a;
}

struct StatsOutputs {
  std::map<std::string, std::string> files;  // name -> content
  std::size_t cohort = 0;
  std::size_t significant = 0;
  std::optional<std::string> skip_reason;
};

/// Render every statistics artifact for a set of matches.
inline StatsOutputs render_stats(const ProfileMatches& matches, const LexiconVersion& lexicon, const StatsConfig& cfg) {
  const auto sigs = build_signatures(matches, lexicon, cfg);
  StatsOutputs out;
  out.cohort = sigs.size();
  if (sigs.empty()) throw DataError("no cohort member mentions a named medication");
  const auto table = prevalence_table(sigs, &lexicon);

  std::vector<std::string> side_effects;
  for (const auto* e : lexicon.of_category(Category::side_effect)) side_effects.push_back(e->entry_id);
  const auto rep = association_report(sigs, side_effects, cfg);
  out.skip_reason = rep.skip_reason;

  std::string assoc = "side_effect,label,tested,H,p,p_adjusted,significant\n";
  std::string pairwise = "side_effect,pattern_a,pattern_b,z,p,p_adjusted\n";
  nlohmann::json results = nlohmann::json::array();
  for (const auto& r : rep.results) {
    const auto* e = lexicon.find(r.side_effect);
    const std::string label = e ? e->canonical : r.side_effect;
    assoc += csv_field(r.side_effect) + "," + csv_field(label) + "," + (r.tested ? "1" : "0") + "," + fmt_num(r.H) +
             "," + fmt_num(r.p) + "," + fmt_num(r.p_adjusted) + "," + (r.significant ? "1" : "0") + "\n";
    nlohmann::json pw = nlohmann::json::array();
    for (const auto& c : r.pairwise) {
      pairwise += csv_field(r.side_effect) + "," + c.pattern_a + "," + c.pattern_b + "," + fmt_num(c.z) + "," +
                  fmt_num(c.p) + "," + fmt_num(c.p_adjusted) + "\n";
      pw.push_back({{"pattern_a", c.pattern_a}, {"pattern_b", c.pattern_b}, {"z", c.z}, {"p", c.p}, {"p_adjusted", c.p_adjusted}});
    }
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [pat, pres] : r.groups) counts[pat] = std::accumulate(pres.begin(), pres.end(), 0);
    results.push_back({{"side_effect", r.side_effect}, {"label", label}, {"tested", r.tested}, {"H", r.H},
                       {"p", r.p}, {"p_adjusted", r.p_adjusted}, {"significant", r.significant},
                       {"present_by_pattern", counts}, {"pairwise", pw}});
    out.significant += r.significant;
  }

  std::string heat = "side_effect";
  for (const auto& c : rep.heatmap.columns) heat += "," + csv_field(c);
  heat += "\n";
  for (std::size_t i = 0; i < rep.heatmap.rows.size(); ++i) {
    heat += csv_field(rep.heatmap.rows[i]);
    for (double v : rep.heatmap.prevalence[i]) heat += "," + fmt_num(v);
    heat += "\n";
  }

  nlohmann::json sizes = nlohmann::json::object();
  for (const auto& [p, n] : rep.pattern_sizes) sizes[p] = n;
  nlohmann::json report = {{"lexicon_version", lexicon.version},
                           {"cohort_with_medication", sigs.size()},
                           {"alpha", cfg.alpha},
                           {"skip_reason", rep.skip_reason ? nlohmann::json(*rep.skip_reason) : nlohmann::json()},
                           {"patterns", rep.patterns},
                           {"pattern_sizes", sizes},
                           {"medications", count_rows_json(table.medications)},
                           {"side_effects", count_rows_json(table.side_effects)},
                           {"pattern_counts", count_rows_json(table.patterns)},
                           {"associations", results},
                           {"heatmap", {{"rows", rep.heatmap.rows}, {"columns", rep.heatmap.columns},
                                        {"prevalence", rep.heatmap.prevalence}}}};

  out.files["stats/medications.csv"] = count_table_csv(table.medications, "medication");
  out.files["stats/side_effects.csv"] = count_table_csv(table.side_effects, "side_effect");
  out.files["stats/patterns.csv"] = count_table_csv(table.patterns, "pattern");
  out.files["stats/association.csv"] = assoc;
  out.files["stats/pairwise.csv"] = pairwise;
  out.files["stats/heatmap.csv"] = heat;
  out.files["stats/report.json"] = report.dump(2) + "\n";
  return out;
}

inline void run_stats(const PipelineConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.paths.outputs;
  const std::string matches_path = (dir / "matches.jsonl").string();
  require_file(matches_path, "match records (run match first)");
  require_file(cfg.paths.lexicon, "lexicon");
  cfg.stats.validate();

  const auto mf = read_match_file(matches_path);
  const auto lexicon = load_lexicon(cfg.paths.lexicon);
  if (mf.lexicon_version && *mf.lexicon_version != lexicon.version)
    throw DataError("matches were produced with lexicon v" + std::to_string(*mf.lexicon_version) + ", config has v" +
                    std::to_string(lexicon.version));
  const auto rendered = render_stats(mf.matches, lexicon, cfg.stats);

  OutputSet out(dir);
  for (const auto& [name, content] : rendered.files) out.write(name, content);
  write_manifest(out, "stats", cfg, {{"matches", matches_path}, {"lexicon", cfg.paths.lexicon}},
                 {{"lexicon_version", lexicon.version}, {"upstream", upstream_ref(dir, "match")}});
  out.commit();
  log << "stats: " << rendered.cohort << " users with a named medication, " << rendered.significant
      << " significant side effects";
  if (rendered.skip_reason) log << " (tests skipped: " << *rendered.skip_reason << ")";
  log << "\n";
}

inline void run_eval(const PipelineConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.paths.outputs;
  const std::string matches_path = (dir / "matches.jsonl").string();
  require_file(matches_path, "match records (run match first)");
  require_file(cfg.paths.gold, "gold set");
  const auto mf = read_match_file(matches_path);
  const auto gold = load_gold(cfg.paths.gold);
  const auto ev = evaluate_matcher(mf.matches, gold);

  OutputSet out(dir);
  auto j = evaluation_to_json(ev);
  j["lexicon_version"] = mf.lexicon_version ? nlohmann::json(*mf.lexicon_version) : nlohmann::json();
  out.write("eval.json", j.dump(2) + "\n");
  write_manifest(out, "eval", cfg, {{"matches", matches_path}, {"gold", cfg.paths.gold}},
                 {{"upstream", upstream_ref(dir, "match")}});
  out.commit();
  log << "eval: " << format_prf(ev.overall) << "\n";
}

inline void run_agree(const PipelineConfig& cfg, std::ostream& log) {
  require_file(cfg.paths.round, "annotation round");
  const auto round = load_round(cfg.paths.round);
  const auto m = pairwise_agreement(round);
  OutputSet out(cfg.paths.outputs);
  auto j = agreement_to_json(m);
  j["round"] = round.round;
  out.write("agreement.json", j.dump(2) + "\n");
  write_manifest(out, "agree", cfg, {{"round", cfg.paths.round}});
  out.commit();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", m.mean.value_or(0.0));
  log << "agree: round " << round.round << ", " << m.pairs.size() << " pairs, mean kappa "
      << (m.mean ? buf : "undefined") << "\n";
  for (const auto& w : m.warnings) log << "warning: " << w << "\n";
}

}  // namespace sidefx
