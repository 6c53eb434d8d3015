#pragma once

// Multi-window fuzzy lexicon matcher with longest-match consumption and
// trigger-based negation.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sidefx/corpus.hpp"
#include "sidefx/error.hpp"
#include "sidefx/lexicon.hpp"
#include "sidefx/text.hpp"

namespace sidefx {

/// Edit distance (insertions, deletions, substitutions) over code points.
inline std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  return levenshtein(utf8_decode(a), utf8_decode(b));
}

inline double similarity(std::u32string_view a, std::u32string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

inline double similarity(std::string_view a, std::string_view b) {
  return similarity(utf8_decode(a), utf8_decode(b));
}

inline std::vector<std::string> default_negation_triggers() {
  return {"no",   "not",  "never",   "without", "none", "didn't", "don't",
          "doesn't", "wasn't", "isn't", "stopped", "quit", "free of"};
}

/// One trigger per line; blank lines and lines starting with '#' are skipped.
inline std::vector<std::string> load_negation_triggers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read negation triggers '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.emplace_back(t);
  }
  return out;
}

struct MatcherConfig {
  int window_min = 1;
  int window_max = 9;
  int stride = 1;
  double similarity_threshold = 0.85;
  int negation_window = 3;
  std::vector<std::string> negation_triggers = default_negation_triggers();

  void validate() const {
    if (window_min < 1 || window_min > window_max) throw ConfigError("matcher: need 1 <= window_min <= window_max");
    if (stride < 1) throw ConfigError("matcher: stride must be >= 1");
    if (!(similarity_threshold > 0.0 && similarity_threshold <= 1.0))
      throw ConfigError("matcher: similarity_threshold must be in (0, 1]");
    if (negation_window < 0) throw ConfigError("matcher: negation_window must be >= 0");
  }
};

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - start; }
  friend auto operator<=>(const Span&, const Span&) = default;
};

struct MatchRecord {
  std::string entry_id;
  Category category = Category::medication;
  Span span;
  int window_size = 0;
  std::string surface;       // the window text as matched
  std::string matched_term;  // the lexicon string it was scored against
  double similarity = 0.0;
  bool negated = false;

  friend bool operator==(const MatchRecord&, const MatchRecord&) = default;
};

inline nlohmann::json match_to_json(const MatchRecord& m) {
  return {{"entry_id", m.entry_id},     {"category", to_string(m.category)}, {"start", m.span.start},
          {"end", m.span.end},          {"window_size", m.window_size},      {"surface", m.surface},
          {"matched_term", m.matched_term}, {"similarity", m.similarity},    {"negated", m.negated}};
}

inline MatchRecord match_from_json(const nlohmann::json& j) {
  MatchRecord m;
  m.entry_id = j.at("entry_id").get<std::string>();
  auto cat = parse_category(j.at("category").get<std::string>());
  if (!cat) throw DataError("match record: unknown category");
  m.category = *cat;
  m.span = {j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
  m.window_size = j.at("window_size").get<int>();
  m.surface = j.at("surface").get<std::string>();
  m.matched_term = j.value("matched_term", std::string{});
  m.similarity = j.at("similarity").get<double>();
  m.negated = j.at("negated").get<bool>();
  return m;
}

// user_id -> matches, the unit every downstream stage consumes.
using ProfileMatches = std::map<std::string, std::vector<MatchRecord>>;

/// A window may end on a boundary token but must not contain one earlier.
inline bool window_crosses_boundary(const TokenSequence& seq, Span span) {
  for (std::size_t i = span.start; i + 1 < span.end; ++i)
    if (seq.boundary_flags[i]) return true;
  return false;
}

/// True when a trigger lies within `negation_window` tokens before the span,
/// scanning backwards and stopping at the previous sentence or post boundary.
/// Multi-word triggers must fit entirely inside that scope.
inline bool detect_negation(const TokenSequence& seq, Span span, const MatcherConfig& cfg) {
  std::size_t scope_begin = span.start;
  for (int k = 0; k < cfg.negation_window && scope_begin > 0; ++k) {
    if (seq.boundary_flags[scope_begin - 1]) break;
    --scope_begin;
  }
  for (const auto& trig : cfg.negation_triggers) {
    const auto words = normalize(trig).tokens;
    if (words.empty() || words.size() > span.start - scope_begin) continue;
    for (std::size_t p = scope_begin; p + words.size() <= span.start; ++p) {
      if (std::equal(words.begin(), words.end(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(p))) return true;
    }
  }
  return false;
}

/// Lexicon surface forms pre-decoded and ordered by length for pruning.
class LexiconIndex {
 public:
  struct Term {
    std::u32string chars;
    std::string text;
    std::size_t entry;  // index into entries()
  };

  explicit LexiconIndex(const LexiconVersion& lex) : entries_(lex.entries) {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      for (auto& form : entries_[i].surface_forms()) terms_.push_back({utf8_decode(form), form, i});
    std::stable_sort(terms_.begin(), terms_.end(),
                     [](const Term& a, const Term& b) { return a.chars.size() < b.chars.size(); });
  }

  const std::vector<LexiconEntry>& entries() const { return entries_; }
  const std::vector<Term>& terms() const { return terms_; }

  // Terms whose length could reach `threshold` similarity against a window
  // of `len` code points: threshold*len <= |term| <= len/threshold.
  std::pair<std::size_t, std::size_t> candidate_range(std::size_t len, double threshold) const {
    const double slack = 1e-9;
    const auto lo = static_cast<std::size_t>(std::max(0.0, std::ceil(threshold * len - slack)));
    const auto hi = static_cast<std::size_t>(std::floor(len / threshold + slack));
    auto first = std::lower_bound(terms_.begin(), terms_.end(), lo,
                                  [](const Term& t, std::size_t v) { return t.chars.size() < v; });
    auto last = std::upper_bound(terms_.begin(), terms_.end(), hi,
                                 [](std::size_t v, const Term& t) { return v < t.chars.size(); });
    return {static_cast<std::size_t>(first - terms_.begin()), static_cast<std::size_t>(last - terms_.begin())};
  }

 private:
  std::vector<LexiconEntry> entries_;
  std::vector<Term> terms_;
};

namespace detail {

struct Candidate {
  double similarity = -1.0;
  std::size_t term_length = 0;
  const LexiconIndex::Term* term = nullptr;
};

// Ranking among terms that clear the threshold: similarity, then longer
// lexicon string, then smaller entry_id.
inline bool better_candidate(const Candidate& a, const Candidate& b, const std::vector<LexiconEntry>& entries) {
  if (!b.term) return true;
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  if (a.term_length != b.term_length) return a.term_length > b.term_length;
  return entries[a.term->entry].entry_id < entries[b.term->entry].entry_id;
}

}  // namespace detail

/// Match a normalized token sequence against the lexicon.
///
/// Window sizes run from window_max down to window_min; at each size windows
/// slide left to right with the configured stride. A window that touches an
/// already-consumed token, or spans a boundary, is skipped. Results are
/// ordered by span start.
inline std::vector<MatchRecord> match_tokens(const TokenSequence& seq, const LexiconIndex& index,
                                             const MatcherConfig& cfg) {
  cfg.validate();
  std::vector<MatchRecord> out;
  const std::size_t n = seq.size();
  std::vector<bool> consumed(n, false);
  const auto& entries = index.entries();
  const auto& terms = index.terms();

  for (int w = cfg.window_max; w >= cfg.window_min; --w) {
    const auto width = static_cast<std::size_t>(w);
    if (width > n) continue;
    for (std::size_t s = 0; s + width <= n; s += static_cast<std::size_t>(cfg.stride)) {
      const Span span{s, s + width};
      if (std::any_of(consumed.begin() + static_cast<std::ptrdiff_t>(s),
                      consumed.begin() + static_cast<std::ptrdiff_t>(s + width), [](bool c) { return c; }))
        continue;
      if (window_crosses_boundary(seq, span)) continue;

      std::string window = seq.tokens[s];
      for (std::size_t i = s + 1; i < s + width; ++i) window.append(" ").append(seq.tokens[i]);
      const std::u32string chars = utf8_decode(window);

      detail::Candidate best;
      const auto [first, last] = index.candidate_range(chars.size(), cfg.similarity_threshold);
      for (std::size_t t = first; t < last; ++t) {
        const double sim = similarity(chars, terms[t].chars);
        if (sim < cfg.similarity_threshold) continue;
        detail::Candidate c{sim, terms[t].chars.size(), &terms[t]};
        if (detail::better_candidate(c, best, entries)) best = c;
      }
      if (!best.term) continue;

      const auto& entry = entries[best.term->entry];
      std::fill(consumed.begin() + static_cast<std::ptrdiff_t>(s),
                consumed.begin() + static_cast<std::ptrdiff_t>(s + width), true);
      out.push_back({entry.entry_id, entry.category, span, w, window, best.term->text, best.similarity,
                     detect_negation(seq, span, cfg)});
    }
  }
  std::sort(out.begin(), out.end(), [](const MatchRecord& a, const MatchRecord& b) { return a.span < b.span; });
  return out;
}

inline std::vector<MatchRecord> match_profile(const UserProfile& profile, const LexiconIndex& index,
                                              const MatcherConfig& cfg) {
  return match_tokens(normalize(profile.collapsed_text), index, cfg);
}

inline std::vector<MatchRecord> match_profile(const UserProfile& profile, const LexiconVersion& lexicon,
                                              const MatcherConfig& cfg) {
  return match_profile(profile, LexiconIndex(lexicon), cfg);
}

}  // namespace sidefx
