#pragma once

// Post ingestion, keyword filtering and per-user collapsing.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "sidefx/error.hpp"
#include "sidefx/text.hpp"

namespace sidefx {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Parse an ISO-8601 instant: YYYY-MM-DDTHH:MM:SS[.fff][Z|+HH:MM|-HH:MM].
/// A missing zone designator is read as UTC.
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  using namespace std::chrono;
  auto digits = [&](std::size_t pos, std::size_t n) -> std::optional<int> {
    if (pos + n > s.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' || s[16] != ':')
    return std::nullopt;
  auto Y = digits(0, 4), M = digits(5, 2), D = digits(8, 2), h = digits(11, 2), m = digits(14, 2), sec = digits(17, 2);
  if (!Y || !M || !D || !h || !m || !sec) return std::nullopt;
  const year_month_day ymd{year{*Y}, month{static_cast<unsigned>(*M)}, day{static_cast<unsigned>(*D)}};
  if (!ymd.ok() || *h > 23 || *m > 59 || *sec > 60) return std::nullopt;

  std::size_t pos = 19;
  int millis = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int scale = 100, ndig = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (ndig < 3) millis += (s[pos] - '0') * scale;
      scale /= 10;
      ++ndig;
      ++pos;
    }
    if (ndig == 0) return std::nullopt;
  }
  minutes offset{0};
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      ++pos;
    } else if ((s[pos] == '+' || s[pos] == '-') && s.size() == pos + 6 && s[pos + 3] == ':') {
      auto oh = digits(pos + 1, 2), om = digits(pos + 4, 2);
      if (!oh || !om || *oh > 23 || *om > 59) return std::nullopt;
      offset = hours{*oh} + minutes{*om};
      if (s[pos] == '-') offset = -offset;
      pos = s.size();
    } else {
      return std::nullopt;
    }
  }
  const auto tp = sys_days{ymd} + hours{*h} + minutes{*m} + seconds{*sec} + milliseconds{millis} - offset;
  return time_point_cast<milliseconds>(tp);
}

inline std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{t - day_point};
  char buf[40];
  const auto ms = static_cast<int>(hms.subseconds().count());
  if (ms == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()), ms);
  }
  return buf;
}

struct Post {
  std::string id;
  std::string user_id;
  Timestamp timestamp{};
  std::string text;

  friend bool operator==(const Post&, const Post&) = default;
};

using PostCollection = std::vector<Post>;

struct LineError {
  std::size_t line = 0;
  std::string reason;
};

struct IngestReport {
  std::size_t lines = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t duplicates = 0;
  std::vector<LineError> errors;  // first kMaxErrors only
  static constexpr std::size_t kMaxErrors = 100;

  void reject(std::size_t line, std::string reason) {
    ++rejected;
    if (errors.size() < kMaxErrors) errors.push_back({line, std::move(reason)});
  }
};

struct IngestResult {
  PostCollection posts;
  IngestReport report;
};

namespace detail {

inline std::optional<std::string> string_field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

// Strip the reserved separator so a post can never forge a post boundary.
inline std::string scrub_boundary(std::string s) {
  std::replace(s.begin(), s.end(), kPostBoundary, ' ');
  return s;
}

}  // namespace detail

/// Read line-delimited JSON posts. Malformed lines are tallied, duplicate ids
/// keep their first occurrence. `seen` lets several sources share one id space.
inline void ingest_posts(std::istream& in, IngestResult& result, std::unordered_set<std::string>& seen) {
  std::string line;
  auto& rep = result.report;
  while (std::getline(in, line)) {
    ++rep.lines;
    if (trim(line).empty()) {
      --rep.lines;
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      rep.reject(rep.lines, "invalid json");
      continue;
    }
    if (!j.is_object()) {
      rep.reject(rep.lines, "not an object");
      continue;
    }
    auto id = detail::string_field(j, "id");
    auto user = detail::string_field(j, "user_id");
    auto ts = detail::string_field(j, "timestamp");
    auto text = detail::string_field(j, "text");
    if (!id || id->empty()) {
      rep.reject(rep.lines, "missing id");
      continue;
    }
    if (!user || user->empty()) {
      rep.reject(rep.lines, "missing user_id");
      continue;
    }
    if (!text || trim(*text).empty()) {
      rep.reject(rep.lines, "missing text");
      continue;
    }
    std::optional<Timestamp> when = ts ? parse_timestamp(*ts) : std::nullopt;
    if (!when) {
      rep.reject(rep.lines, "bad timestamp");
      continue;
    }
    if (!seen.insert(*id).second) {
      ++rep.duplicates;
      continue;
    }
    result.posts.push_back({std::move(*id), std::move(*user), *when, detail::scrub_boundary(std::move(*text))});
    ++rep.accepted;
  }
}

inline IngestResult ingest_posts(std::istream& in) {
  IngestResult r;
  std::unordered_set<std::string> seen;
  ingest_posts(in, r, seen);
  return r;
}

inline IngestResult ingest_files(const std::vector<std::string>& paths) {
  IngestResult r;
  std::unordered_set<std::string> seen;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read posts source '" + p + "'");
    ingest_posts(in, r, seen);
  }
  return r;
}

struct KeywordFilterConfig {
  std::vector<std::string> keywords{"cancer", "breastcancer", "tamoxifen", "survivor"};
  bool include_hashtag_forms = true;

  void validate() const {
    if (keywords.empty()) throw ConfigError("keyword filter: no keywords");
    std::set<std::string> seen;
    for (const auto& k : keywords) {
      if (k.empty() || ascii_lower(k) != k) throw ConfigError("keyword filter: keyword '" + k + "' is not lowercase");
      if (!seen.insert(k).second) throw ConfigError("keyword filter: duplicate keyword '" + k + "'");
    }
  }
};

namespace detail {

struct KeywordToken {
  std::string text;
  bool hashtag = false;
};

inline std::vector<KeywordToken> keyword_tokens(std::string_view text) {
  std::vector<KeywordToken> out;
  const std::string lower = ascii_lower(text);
  KeywordToken cur;
  bool pending_hash = false;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    const auto c = static_cast<unsigned char>(lower[i]);
    const bool next_word = i + 1 < lower.size() && is_word_byte(static_cast<unsigned char>(lower[i + 1]));
    if (is_word_byte(c) || ((c == '-' || c == '\'') && !cur.text.empty() && next_word)) {
      if (cur.text.empty()) cur.hashtag = pending_hash;
      cur.text.push_back(static_cast<char>(c));
      continue;
    }
    if (!cur.text.empty()) out.push_back(std::move(cur));
    cur = {};
    pending_hash = c == '#';
  }
  if (!cur.text.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

inline bool keyword_hit(std::string_view text, const KeywordFilterConfig& cfg) {
  for (const auto& tok : detail::keyword_tokens(text)) {
    if (tok.hashtag && !cfg.include_hashtag_forms) continue;
    if (std::find(cfg.keywords.begin(), cfg.keywords.end(), tok.text) != cfg.keywords.end()) return true;
  }
  return false;
}

inline PostCollection keyword_filter(const PostCollection& posts, const KeywordFilterConfig& cfg) {
  cfg.validate();
  PostCollection out;
  std::copy_if(posts.begin(), posts.end(), std::back_inserter(out),
               [&](const Post& p) { return keyword_hit(p.text, cfg); });
  return out;
}

struct UserProfile {
  std::string user_id;
  std::vector<Post> posts;  // timestamp ascending, ties by id
  std::string collapsed_text;

  std::size_t post_count() const { return posts.size(); }
  Timestamp first_timestamp() const { return posts.front().timestamp; }
  Timestamp last_timestamp() const { return posts.back().timestamp; }

  friend bool operator==(const UserProfile&, const UserProfile&) = default;
};

inline std::string collapse_text(const std::vector<Post>& posts) {
  std::string out;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    if (i) out.append(kPostBoundaryJoin);
    out.append(posts[i].text);
  }
  return out;
}

/// One profile per user, sorted by user_id.
inline std::vector<UserProfile> collapse_by_user(const PostCollection& posts) {
  std::map<std::string, std::vector<Post>> groups;
  for (const auto& p : posts) groups[p.user_id].push_back(p);
  std::vector<UserProfile> out;
  out.reserve(groups.size());
  for (auto& [user, list] : groups) {
    std::sort(list.begin(), list.end(), [](const Post& a, const Post& b) {
      return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
    });
    UserProfile prof{user, std::move(list), {}};
    prof.collapsed_text = collapse_text(prof.posts);
    out.push_back(std::move(prof));
  }
  return out;
}

// --- Profile store (one JSON profile per line) -----------------------------

inline nlohmann::json profile_to_json(const UserProfile& p) {
  nlohmann::json posts = nlohmann::json::array();
  for (const auto& post : p.posts)
    posts.push_back({{"id", post.id}, {"timestamp", format_timestamp(post.timestamp)}, {"text", post.text}});
  return {{"user_id", p.user_id},
          {"post_count", p.post_count()},
          {"first_timestamp", format_timestamp(p.first_timestamp())},
          {"last_timestamp", format_timestamp(p.last_timestamp())},
          {"posts", std::move(posts)},
          {"collapsed_text", p.collapsed_text}};
}

inline UserProfile profile_from_json(const nlohmann::json& j) {
  UserProfile p;
  p.user_id = j.at("user_id").get<std::string>();
  for (const auto& pj : j.at("posts")) {
    auto ts = parse_timestamp(pj.at("timestamp").get<std::string>());
    if (!ts) throw DataError("profile '" + p.user_id + "': bad timestamp");
    p.posts.push_back({pj.at("id").get<std::string>(), p.user_id, *ts, pj.at("text").get<std::string>()});
  }
  if (p.posts.empty()) throw DataError("profile '" + p.user_id + "': no posts");
  if (j.contains("post_count") && j["post_count"].get<std::size_t>() != p.posts.size())
    throw DataError("profile '" + p.user_id + "': post_count mismatch");
  p.collapsed_text = collapse_text(p.posts);
  return p;
}

inline void write_profiles(std::ostream& out, const std::vector<UserProfile>& profiles) {
  for (const auto& p : profiles) out << profile_to_json(p).dump() << '\n';
}

inline std::vector<UserProfile> read_profiles(std::istream& in) {
  std::vector<UserProfile> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(profile_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("profile store line " + std::to_string(n) + ": " + ex.what());
    }
  }
  return out;
}

inline std::vector<UserProfile> read_profiles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read profile store '" + path + "'");
  return read_profiles(in);
}

}  // namespace sidefx
