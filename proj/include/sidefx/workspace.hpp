#pragma once

// Annotation workspace: the on-disk state behind the annotation API.
//
//   <dir>/profiles.jsonl          profiles available for annotation
//   <dir>/lexicon/v000001.json    one file per lexicon version
//   <dir>/rounds/round_001.json   one file per annotation round
//   <dir>/gold.json               gold profile sample and reconciled truth
//   <dir>/eval_history.json       matcher scores per lexicon version
//
// One writer at a time; readers share. Every file is replaced atomically.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sidefx/annotation.hpp"
#include "sidefx/corpus.hpp"
#include "sidefx/error.hpp"
#include "sidefx/lexicon.hpp"
#include "sidefx/matcher.hpp"
#include "sidefx/metrics.hpp"

namespace sidefx {

/// Error carrying the HTTP status and machine-readable code for the API.
struct ApiError : Error {
  int status;
  std::string code;
  ApiError(int status_, std::string code_, const std::string& msg)
      : Error(msg), status(status_), code(std::move(code_)) {}
};

inline void write_file_atomic(const std::filesystem::path& target, const std::string& content) {
  std::filesystem::create_directories(target.parent_path());
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + target.string() + "'");
    out << content;
    if (!out) throw IoError("write failed for '" + target.string() + "'");
  }
  std::filesystem::rename(tmp, target);
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("'" + p.string() + "': " + ex.what());
  }
}

class Workspace {
 public:
  /// Lay out a fresh workspace with round 1 covering the gold profiles.
  static void create(const std::filesystem::path& dir, const std::vector<UserProfile>& profiles,
                     const LexiconVersion& lexicon, const GoldSet& gold, const std::vector<std::string>& annotators) {
    namespace fs = std::filesystem;
    if (fs::exists(dir / "profiles.jsonl")) throw ConfigError("workspace '" + dir.string() + "' already exists");
    std::ostringstream store;
    write_profiles(store, profiles);
    write_file_atomic(dir / "profiles.jsonl", store.str());
    write_file_atomic(lexicon_path(dir, lexicon.version), lexicon_to_json(lexicon).dump(2) + "\n");
    write_file_atomic(dir / "gold.json", gold_to_json(gold).dump(2) + "\n");
    AnnotationRound r;
    r.round = 1;
    r.annotators = annotators;
    r.tasks = gold.profiles;
    write_file_atomic(round_path(dir, 1), round_to_json(r).dump(2) + "\n");
    write_file_atomic(dir / "eval_history.json", "[]\n");
  }

  Workspace(std::filesystem::path dir, MatcherConfig matcher) : dir_(std::move(dir)), matcher_(std::move(matcher)) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir_ / "profiles.jsonl"))
      throw ConfigError("'" + dir_.string() + "' is not a workspace (no profiles.jsonl)");
    for (auto& p : read_profiles((dir_ / "profiles.jsonl").string())) {
      auto id = p.user_id;
      profiles_.emplace(std::move(id), std::move(p));
    }
    if (fs::exists(dir_ / "lexicon"))
      for (const auto& f : fs::directory_iterator(dir_ / "lexicon"))
        if (f.path().extension() == ".json") {
          auto v = load_lexicon(f.path().string());
          lexicons_.emplace(v.version, std::move(v));
        }
    if (lexicons_.empty()) throw ConfigError("workspace has no lexicon version");
    if (fs::exists(dir_ / "rounds"))
      for (const auto& f : fs::directory_iterator(dir_ / "rounds"))
        if (f.path().extension() == ".json") {
          auto r = load_round(f.path().string());
          rounds_.emplace(r.round, std::move(r));
        }
    if (fs::exists(dir_ / "gold.json")) gold_ = load_gold((dir_ / "gold.json").string());
    if (fs::exists(dir_ / "eval_history.json")) history_ = read_json_file(dir_ / "eval_history.json");
    if (!history_.is_array()) history_ = nlohmann::json::array();
  }

  const std::filesystem::path& dir() const { return dir_; }

  nlohmann::json health() const {
    std::shared_lock lock(mu_);
    return {{"status", "ok"},
            {"profiles", profiles_.size()},
            {"lexicon_version", latest().version},
            {"rounds", rounds_.size()}};
  }

  nlohmann::json rounds() const {
    std::shared_lock lock(mu_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [n, r] : rounds_) out.push_back(round_summary(r));
    return out;
  }

  /// Open a new round. Tasks default to the gold profiles, annotators to
  /// those of the previous round.
  nlohmann::json create_round(const nlohmann::json& body) {
    std::unique_lock lock(mu_);
    AnnotationRound r;
    r.round = rounds_.empty() ? 1 : rounds_.rbegin()->first + 1;
    try {
      if (body.contains("tasks")) r.tasks = body["tasks"].get<std::vector<std::string>>();
      else r.tasks = gold_.profiles;
      if (body.contains("annotators")) r.annotators = body["annotators"].get<std::vector<std::string>>();
      else if (!rounds_.empty()) r.annotators = rounds_.rbegin()->second.annotators;
    } catch (const nlohmann::json::exception& ex) {
      throw ApiError(400, "bad_request", ex.what());
    }
    for (const auto& t : r.tasks)
      if (!profiles_.count(t)) throw ApiError(400, "unknown_profile", "unknown profile '" + t + "'");
    write_file_atomic(round_path(dir_, r.round), round_to_json(r).dump(2) + "\n");
    auto summary = round_summary(r);
    rounds_.emplace(r.round, std::move(r));
    return summary;
  }

  /// Task list with collapsed text, tokens and pre-annotations from the
  /// current lexicon.
  nlohmann::json tasks(int round) {
    AnnotationRound r;
    int version = 0;
    {
      std::shared_lock lock(mu_);
      r = get_round(round);
      version = latest().version;
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& id : r.tasks) {
      auto view = task_view(id, version);
      std::vector<std::string> done;
      for (const auto& a : r.annotators)
        if (r.labels.count({a, id})) done.push_back(a);
      view["annotators"] = r.annotators;
      view["annotated_by"] = done;
      view["status"] = r.status == RoundStatus::reconciled ? "locked" : done.empty() ? "open" : "in_progress";
      out.push_back(std::move(view));
    }
    return {{"round", round}, {"lexicon_version", version}, {"tasks", out}};
  }

  nlohmann::json submit(int round, const std::string& annotator, const nlohmann::json& body) {
    if (annotator.empty()) throw ApiError(400, "missing_annotator", "X-Annotator-Id header is required");
    std::string user;
    std::vector<AnnotatedSpan> spans;
    try {
      user = body.at("user_id").get<std::string>();
      for (const auto& s : body.at("labels")) spans.push_back(span_from_json(s));
    } catch (const nlohmann::json::exception& ex) {
      throw ApiError(400, "bad_request", ex.what());
    } catch (const DataError& ex) {
      throw ApiError(400, "bad_request", ex.what());
    }
    std::unique_lock lock(mu_);
    auto& r = get_round(round);
    if (r.status == RoundStatus::reconciled)
      throw ApiError(409, "round_reconciled", "round " + std::to_string(round) + " is reconciled");
    if (!r.has_task(user)) throw ApiError(400, "unknown_task", "'" + user + "' is not a task of this round");
    for (const auto& s : spans) {
      if (!s.span) continue;
      const auto n = token_count(user);
      if (s.span->start >= s.span->end || s.span->end > n)
        throw ApiError(400, "bad_span", "span outside the profile's " + std::to_string(n) + " tokens");
    }
    AnnotationRound next = r;
    next.submit(annotator, user, std::move(spans));
    write_file_atomic(round_path(dir_, round), round_to_json(next).dump(2) + "\n");
    r = std::move(next);
    return {{"round", round}, {"annotator", annotator}, {"user_id", user}, {"labels", r.labels.at({annotator, user}).size()}};
  }

  nlohmann::json annotations(int round, const std::string& annotator) const {
    std::shared_lock lock(mu_);
    const auto& r = get_round(round);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [key, spans] : r.labels) {
      if (!annotator.empty() && key.first != annotator) continue;
      nlohmann::json ls = nlohmann::json::array();
      for (const auto& s : spans) ls.push_back(span_to_json(s));
      out.push_back({{"annotator", key.first}, {"user_id", key.second}, {"labels", ls}});
    }
    return out;
  }

  /// Close a round, derive gold truth from it by majority vote and report
  /// agreement.
  nlohmann::json reconcile(int round) {
    std::unique_lock lock(mu_);
    auto& r = get_round(round);
    if (r.status == RoundStatus::reconciled)
      throw ApiError(409, "round_reconciled", "round " + std::to_string(round) + " is already reconciled");
    AnnotationRound next = r;
    next.status = RoundStatus::reconciled;
    auto gold = gold_from_round(next, gold_, latest());
    write_file_atomic(round_path(dir_, round), round_to_json(next).dump(2) + "\n");
    write_file_atomic(dir_ / "gold.json", gold_to_json(gold).dump(2) + "\n");
    r = std::move(next);
    gold_ = std::move(gold);
    auto agreement = agreement_to_json(pairwise_agreement(r));
    return {{"round", round}, {"status", "reconciled"}, {"agreement", agreement}};
  }

  nlohmann::json agreement(int round) const {
    std::shared_lock lock(mu_);
    return agreement_to_json(pairwise_agreement(get_round(round)));
  }

  nlohmann::json candidates(int round) const {
    std::shared_lock lock(mu_);
    const auto& r = get_round(round);
    if (r.status != RoundStatus::reconciled)
      throw ApiError(409, "round_open", "round " + std::to_string(round) + " is not reconciled yet");
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : propose_candidates(r, latest(), matcher_.similarity_threshold)) {
      nlohmann::json e = c.entry;
      e["count"] = c.count;
      out.push_back(e);
    }
    return out;
  }

  /// Apply approved entries from a reconciled round as a new lexicon version.
  nlohmann::json approve(const nlohmann::json& body) {
    int round = 0;
    std::vector<LexiconEntry> entries;
    try {
      round = body.at("round").get<int>();
      for (const auto& e : body.at("entries")) entries.push_back(entry_from_json(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ApiError(400, "bad_request", ex.what());
    } catch (const DataError& ex) {
      throw ApiError(400, "bad_entry", ex.what());
    }
    if (entries.empty()) throw ApiError(400, "bad_request", "no entries to approve");
    std::unique_lock lock(mu_);
    const auto& r = get_round(round);
    if (r.status != RoundStatus::reconciled)
      throw ApiError(409, "round_open", "round " + std::to_string(round) + " is not reconciled yet");
    LexiconVersion next;
    try {
      next = enrich(latest(), entries, round);
    } catch (const DataError& ex) {
      throw ApiError(409, "lexicon_conflict", ex.what());
    }
    // The round's free-text marks for approved terms now count as truth.
    std::map<std::pair<Category, std::string>, std::string> ids;
    for (const auto& e : entries) ids[{e.category, canonical_term(e.canonical)}] = e.entry_id;
    auto gold = gold_from_round(resolve_terms(r, ids), gold_, next);
    write_file_atomic(lexicon_path(dir_, next.version), lexicon_to_json(next).dump(2) + "\n");
    write_file_atomic(dir_ / "gold.json", gold_to_json(gold).dump(2) + "\n");
    gold_ = std::move(gold);
    auto hist = history_;
    hist.push_back({{"lexicon_version", next.version}, {"round", round}, {"status", "pending"}});
    write_file_atomic(dir_ / "eval_history.json", hist.dump(2) + "\n");
    history_ = std::move(hist);
    nlohmann::json changes = next.changelog;
    const int v = next.version;
    lexicons_.emplace(v, std::move(next));
    return {{"lexicon_version", v}, {"changes", changes}};
  }

  nlohmann::json eval_history() const {
    std::shared_lock lock(mu_);
    return history_;
  }

  /// Score the current lexicon on the gold profiles and record it.
  nlohmann::json run_eval() {
    std::unique_lock lock(mu_);
    if (gold_.profiles.empty()) throw ApiError(409, "no_gold", "workspace has no gold profiles");
    const auto& lex = latest();
    const LexiconIndex index(lex);
    ProfileMatches matches;
    for (const auto& id : gold_.profiles) {
      auto it = profiles_.find(id);
      if (it == profiles_.end()) throw ApiError(409, "missing_profile", "gold profile '" + id + "' not in workspace");
      matches[id] = match_profile(it->second, index, matcher_);
    }
    const auto ev = evaluate_matcher(matches, gold_);
    nlohmann::json entry = evaluation_to_json(ev);
    entry["lexicon_version"] = lex.version;
    entry["status"] = "done";
    auto hist = history_;
    bool replaced = false;
    for (auto& h : hist)
      if (h.value("lexicon_version", 0) == lex.version) {
        if (h.contains("round")) entry["round"] = h["round"];
        h = entry;
        replaced = true;
      }
    if (!replaced) hist.push_back(entry);
    write_file_atomic(dir_ / "eval_history.json", hist.dump(2) + "\n");
    history_ = std::move(hist);
    return entry;
  }

  int lexicon_version() const {
    std::shared_lock lock(mu_);
    return latest().version;
  }

  static std::filesystem::path lexicon_path(const std::filesystem::path& dir, int version) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%06d.json", version);
    return dir / "lexicon" / buf;
  }

  static std::filesystem::path round_path(const std::filesystem::path& dir, int round) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "round_%03d.json", round);
    return dir / "rounds" / buf;
  }

 private:
  const LexiconVersion& latest() const { return lexicons_.rbegin()->second; }

  const AnnotationRound& get_round(int round) const {
    auto it = rounds_.find(round);
    if (it == rounds_.end()) throw ApiError(404, "unknown_round", "no round " + std::to_string(round));
    return it->second;
  }
  AnnotationRound& get_round(int round) {
    auto it = rounds_.find(round);
    if (it == rounds_.end()) throw ApiError(404, "unknown_round", "no round " + std::to_string(round));
    return it->second;
  }

  std::size_t token_count(const std::string& user) const {
    auto it = profiles_.find(user);
    return it == profiles_.end() ? 0 : normalize(it->second.collapsed_text).size();
  }

  static nlohmann::json round_summary(const AnnotationRound& r) {
    std::set<std::string> done;
    for (const auto& [key, _] : r.labels) done.insert(key.second);
    return {{"round", r.round},
            {"status", r.status == RoundStatus::open ? "open" : "reconciled"},
            {"annotators", r.annotators},
            {"tasks", r.tasks.size()},
            {"annotated_tasks", done.size()},
            {"submissions", r.labels.size()}};
  }

  // Pre-annotations are cached per (lexicon version, profile).
  nlohmann::json task_view(const std::string& user, int version) {
    {
      std::lock_guard lock(cache_mu_);
      if (auto it = cache_.find({version, user}); it != cache_.end()) return it->second;
    }
    nlohmann::json view;
    {
      std::shared_lock lock(mu_);
      const auto& profile = profiles_.at(user);
      const auto seq = normalize(profile.collapsed_text);
      const LexiconIndex& index = index_for(version);
      nlohmann::json pre = nlohmann::json::array();
      for (const auto& m : match_tokens(seq, index, matcher_)) pre.push_back(match_to_json(m));
      std::string display = profile.collapsed_text;
      for (std::size_t p; (p = display.find(kPostBoundaryJoin)) != std::string::npos;)
        display.replace(p, std::string_view(kPostBoundaryJoin).size(), "\n");
      view = {{"user_id", user},
              {"posts", profile.posts.size()},
              {"collapsed_text", profile.collapsed_text},
              {"display_text", display},
              {"tokens", seq.tokens},
              {"lexicon_version", version},
              {"pre_annotations", pre}};
    }
    std::lock_guard lock(cache_mu_);
    cache_[{version, user}] = view;
    return view;
  }

  const LexiconIndex& index_for(int version) {
    std::lock_guard lock(index_mu_);
    auto it = indexes_.find(version);
    if (it == indexes_.end()) it = indexes_.emplace(version, LexiconIndex(lexicons_.at(version))).first;
    return it->second;
  }

  std::filesystem::path dir_;
  MatcherConfig matcher_;
  mutable std::shared_mutex mu_;
  std::map<std::string, UserProfile> profiles_;
  std::map<int, LexiconVersion> lexicons_;
  std::map<int, AnnotationRound> rounds_;
  GoldSet gold_;
  nlohmann::json history_ = nlohmann::json::array();

  std::mutex cache_mu_;
  std::map<std::pair<int, std::string>, nlohmann::json> cache_;
  std::mutex index_mu_;
  std::map<int, LexiconIndex> indexes_;
};

}  // namespace sidefx
