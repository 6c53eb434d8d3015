#pragma once

// Gold sets, annotation rounds, inter-annotator agreement, matcher
// evaluation and lexicon candidate proposals.

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sidefx/corpus.hpp"
#include "sidefx/error.hpp"
#include "sidefx/lexicon.hpp"
#include "sidefx/matcher.hpp"
#include "sidefx/metrics.hpp"
#include "sidefx/random.hpp"

namespace sidefx {

// One fact about a profile: a term (entry_id, or free text for candidates)
// of a category, optionally negated.
struct TruthItem {
  Category category = Category::side_effect;
  std::string term;
  bool negated = false;

  std::string key() const { return std::string(to_string(category)) + ":" + term + (negated ? ":neg" : ""); }
  friend auto operator<=>(const TruthItem&, const TruthItem&) = default;
};

inline void to_json(nlohmann::json& j, const TruthItem& t) {
  j = {{"category", to_string(t.category)}, {"term", t.term}, {"negated", t.negated}};
}

// Lowercase and collapse whitespace; punctuation is kept so entry ids such
// as "se_hair_loss" survive unchanged.
inline std::string canonical_term(std::string_view term) {
  std::istringstream words(ascii_lower(term));
  std::string out, w;
  while (words >> w) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

inline void from_json(const nlohmann::json& j, TruthItem& t) {
  auto cat = parse_category(j.at("category").get<std::string>());
  if (!cat) throw DataError("annotation: unknown category");
  t.category = *cat;
  t.term = canonical_term(j.at("term").get<std::string>());
  if (t.term.empty()) throw DataError("annotation: empty term");
  t.negated = j.value("negated", false);
}

struct GoldSet {
  std::string name;
  std::vector<std::string> profiles;
  std::map<std::string, std::set<TruthItem>> truth;  // user_id -> items
};

inline nlohmann::json gold_to_json(const GoldSet& g) {
  nlohmann::json truth = nlohmann::json::object();
  for (const auto& [user, items] : g.truth) truth[user] = items;
  return {{"name", g.name}, {"profiles", g.profiles}, {"truth", truth}};
}

inline GoldSet gold_from_json(const nlohmann::json& j) {
  GoldSet g;
  try {
    g.name = j.value("name", std::string{});
    g.profiles = j.at("profiles").get<std::vector<std::string>>();
    if (j.contains("truth"))
      for (const auto& [user, items] : j["truth"].items()) g.truth[user] = items.get<std::set<TruthItem>>();
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("gold set: ") + ex.what());
  }
  std::set<std::string> seen;
  for (const auto& p : g.profiles)
    if (!seen.insert(p).second) throw DataError("gold set: duplicate profile '" + p + "'");
  return g;
}

inline GoldSet load_gold(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read gold set '" + path + "'");
  try {
    return gold_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("gold set '" + path + "': " + ex.what());
  }
}

/// Seeded sample of n users without replacement (partial Fisher-Yates over
/// the user ids in sorted order). Returned ids are sorted.
inline GoldSet sample_gold(const std::vector<UserProfile>& profiles, std::size_t n, std::uint64_t seed,
                           std::string name = "gold") {
  std::vector<std::string> ids;
  for (const auto& p : profiles) ids.push_back(p.user_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (n > ids.size()) throw DataError("sample_gold: n exceeds population");
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return {std::move(name), std::move(ids), {}};
}

// --- Rounds ----------------------------------------------------------------

enum class RoundStatus { open, reconciled };

struct AnnotatedSpan {
  TruthItem item;
  std::optional<Span> span;  // token range in the collapsed text, if given
};

struct AnnotationRound {
  int round = 1;
  std::vector<std::string> annotators;
  std::vector<std::string> tasks;  // user ids
  // (annotator, user) -> labels
  std::map<std::pair<std::string, std::string>, std::vector<AnnotatedSpan>> labels;
  RoundStatus status = RoundStatus::open;

  bool has_task(const std::string& user) const { return std::find(tasks.begin(), tasks.end(), user) != tasks.end(); }

  /// Replace one annotator's labels for one task (last write wins).
  void submit(const std::string& annotator, const std::string& user, std::vector<AnnotatedSpan> spans) {
    if (status != RoundStatus::open) throw DataError("round " + std::to_string(round) + " is closed");
    if (!has_task(user)) throw DataError("user '" + user + "' is not a task of round " + std::to_string(round));
    if (std::find(annotators.begin(), annotators.end(), annotator) == annotators.end()) annotators.push_back(annotator);
    labels[{annotator, user}] = std::move(spans);
  }

  std::set<TruthItem> items_of(const std::string& annotator, const std::string& user) const {
    std::set<TruthItem> out;
    if (auto it = labels.find({annotator, user}); it != labels.end())
      for (const auto& s : it->second) out.insert(s.item);
    return out;
  }
};

inline nlohmann::json span_to_json(const AnnotatedSpan& s) {
  nlohmann::json j = s.item;
  if (s.span) {
    j["start"] = s.span->start;
    j["end"] = s.span->end;
  }
  return j;
}

inline AnnotatedSpan span_from_json(const nlohmann::json& j) {
  AnnotatedSpan s{j.get<TruthItem>(), std::nullopt};
  if (j.contains("start") || j.contains("end")) {
    Span sp{j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
    if (sp.end <= sp.start) throw DataError("annotation: empty span");
    s.span = sp;
  }
  return s;
}

inline nlohmann::json round_to_json(const AnnotationRound& r) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& [key, spans] : r.labels) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : spans) arr.push_back(span_to_json(s));
    labels.push_back({{"annotator", key.first}, {"user_id", key.second}, {"spans", arr}});
  }
  return {{"round", r.round},
          {"annotators", r.annotators},
          {"tasks", r.tasks},
          {"status", r.status == RoundStatus::open ? "open" : "reconciled"},
          {"labels", labels}};
}

inline AnnotationRound round_from_json(const nlohmann::json& j) {
  AnnotationRound r;
  try {
    r.round = j.at("round").get<int>();
    r.annotators = j.value("annotators", std::vector<std::string>{});
    r.tasks = j.at("tasks").get<std::vector<std::string>>();
    const auto status = j.value("status", std::string("open"));
    if (status != "open" && status != "reconciled") throw DataError("round: unknown status '" + status + "'");
    r.status = status == "open" ? RoundStatus::open : RoundStatus::reconciled;
    if (j.contains("labels")) {
      for (const auto& l : j["labels"]) {
        const auto user = l.at("user_id").get<std::string>();
        if (!r.has_task(user)) throw DataError("round: label for user '" + user + "' outside the task list");
        std::vector<AnnotatedSpan> spans;
        for (const auto& s : l.at("spans")) spans.push_back(span_from_json(s));
        const auto annotator = l.at("annotator").get<std::string>();
        if (std::find(r.annotators.begin(), r.annotators.end(), annotator) == r.annotators.end())
          r.annotators.push_back(annotator);
        r.labels[{annotator, user}] = std::move(spans);
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("round: ") + ex.what());
  }
  if (r.round < 1) throw DataError("round: number must be >= 1");
  return r;
}

inline AnnotationRound load_round(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read round '" + path + "'");
  try {
    return round_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("round '" + path + "': " + ex.what());
  }
}

// --- Agreement -------------------------------------------------------------

/// Cohen's kappa from a 2x2 table. Perfect agreement with degenerate
/// marginals (chance agreement 1) is defined as 1.
inline double kappa_from_table(double both_yes, double a_yes_b_no, double a_no_b_yes, double both_no) {
  const double n = both_yes + a_yes_b_no + a_no_b_yes + both_no;
  if (n <= 0) throw DataError("cohens_kappa: no items");
  const double po = (both_yes + both_no) / n;
  const double a_yes = (both_yes + a_yes_b_no) / n;
  const double b_yes = (both_yes + a_no_b_yes) / n;
  const double pe = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
  if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

inline double cohens_kappa(std::span<const bool> a, std::span<const bool> b) {
  if (a.size() != b.size()) throw DataError("cohens_kappa: label vectors differ in length");
  if (a.empty()) throw DataError("cohens_kappa: no items");
  double t[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < a.size(); ++i) t[(a[i] ? 0 : 2) + (b[i] ? 0 : 1)] += 1;
  return kappa_from_table(t[0], t[1], t[2], t[3]);
}

/// Kappa over the items both maps label; disjoint item sets are an error.
inline double cohens_kappa(const std::map<std::string, bool>& a, const std::map<std::string, bool>& b) {
  double t[4] = {0, 0, 0, 0};
  bool any = false;
  for (const auto& [item, label] : a) {
    if (auto it = b.find(item); it != b.end()) {
      t[(label ? 0 : 2) + (it->second ? 0 : 1)] += 1;
      any = true;
    }
  }
  if (!any) throw DataError("cohens_kappa: annotators share no items");
  return kappa_from_table(t[0], t[1], t[2], t[3]);
}

struct PairAgreement {
  std::string a;
  std::string b;
  std::optional<double> kappa;  // empty when the pair shares no tasks
  std::size_t shared_tasks = 0;
  std::size_t items = 0;
};

struct AgreementMatrix {
  std::vector<std::string> annotators;
  std::vector<std::vector<std::optional<double>>> kappa;  // symmetric, diagonal 1
  std::vector<PairAgreement> pairs;
  std::optional<double> mean;
  std::vector<std::string> warnings;
};

/// Binary (profile, term) presence agreement. For a pair, items are the
/// tasks both annotators labeled crossed with every term seen in the round.
inline AgreementMatrix pairwise_agreement(const AnnotationRound& round) {
  AgreementMatrix out;
  out.annotators = round.annotators;
  std::sort(out.annotators.begin(), out.annotators.end());
  const std::size_t k = out.annotators.size();
  if (k < 2) throw DataError("pairwise_agreement: need at least 2 annotators");
  std::set<TruthItem> universe;
  std::map<std::string, std::set<std::string>> tasks_of;
  for (const auto& [key, spans] : round.labels) {
    tasks_of[key.first].insert(key.second);
    for (const auto& s : spans) universe.insert(s.item);
  }
  out.kappa.assign(k, std::vector<std::optional<double>>(k));
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t i = 0; i < k; ++i) {
    out.kappa[i][i] = 1.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      const auto& a = out.annotators[i];
      const auto& b = out.annotators[j];
      std::vector<std::string> shared;
      std::set_intersection(tasks_of[a].begin(), tasks_of[a].end(), tasks_of[b].begin(), tasks_of[b].end(),
                            std::back_inserter(shared));
      PairAgreement pa{a, b, std::nullopt, shared.size(), 0};
      if (shared.empty()) {
        out.warnings.push_back("annotators '" + a + "' and '" + b + "' share no tasks");
        out.pairs.push_back(pa);
        continue;
      }
      double t[4] = {0, 0, 0, 0};
      for (const auto& user : shared) {
        const auto ia = round.items_of(a, user), ib = round.items_of(b, user);
        for (const auto& item : universe) {
          const bool ya = ia.count(item) > 0, yb = ib.count(item) > 0;
          t[(ya ? 0 : 2) + (yb ? 0 : 1)] += 1;
        }
      }
      pa.items = shared.size() * universe.size();
      // No terms anywhere: both annotators agree there is nothing to label.
      pa.kappa = universe.empty() ? 1.0 : kappa_from_table(t[0], t[1], t[2], t[3]);
      out.kappa[i][j] = out.kappa[j][i] = pa.kappa;
      sum += *pa.kappa;
      ++defined;
      out.pairs.push_back(pa);
    }
  }
  if (defined) out.mean = sum / static_cast<double>(defined);
  return out;
}

inline nlohmann::json agreement_to_json(const AgreementMatrix& m) {
  nlohmann::json matrix = nlohmann::json::array();
  for (const auto& row : m.kappa) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& v : row) r.push_back(v ? nlohmann::json(*v) : nlohmann::json());
    matrix.push_back(r);
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : m.pairs)
    pairs.push_back({{"a", p.a},
                     {"b", p.b},
                     {"kappa", p.kappa ? nlohmann::json(*p.kappa) : nlohmann::json()},
                     {"shared_tasks", p.shared_tasks},
                     {"items", p.items}});
  return {{"annotators", m.annotators},
          {"matrix", matrix},
          {"pairs", pairs},
          {"mean", m.mean ? nlohmann::json(*m.mean) : nlohmann::json()},
          {"warnings", m.warnings}};
}

/// Majority vote of the annotators who labeled each gold profile; only
/// lexicon entry ids enter the truth. Profiles nobody labeled in this round
/// keep their previous truth.
inline GoldSet gold_from_round(const AnnotationRound& round, GoldSet gold, const LexiconVersion& lexicon) {
  for (const auto& user : gold.profiles) {
    std::map<TruthItem, std::size_t> votes;
    std::size_t voters = 0;
    for (const auto& a : round.annotators) {
      if (!round.labels.count({a, user})) continue;
      ++voters;
      for (const auto& item : round.items_of(a, user)) ++votes[item];
    }
    if (!voters) continue;
    auto& truth = gold.truth[user];
    truth.clear();
    for (const auto& [item, n] : votes)
      if (2 * n > voters && lexicon.find(item.term)) truth.insert(item);
  }
  return gold;
}

/// Rewrite free-text labels that now have a lexicon entry to that entry's
/// id, keyed by (category, canonical term).
inline AnnotationRound resolve_terms(AnnotationRound round, const std::map<std::pair<Category, std::string>, std::string>& ids) {
  for (auto& [key, spans] : round.labels)
    for (auto& s : spans)
      if (auto it = ids.find({s.item.category, s.item.term}); it != ids.end()) s.item.term = it->second;
  return round;
}

// --- Matcher evaluation ----------------------------------------------------

struct MatcherEvaluation {
  PRF overall;
  std::map<Category, PRF> per_category;
  std::size_t ignored_profiles = 0;
};

/// Set semantics over (profile, category, entry, negated): a prediction is a
/// true positive iff the same item is in that profile's truth. Profiles
/// outside the gold set are ignored and counted.
inline MatcherEvaluation evaluate_matcher(const ProfileMatches& matches, const GoldSet& gold) {
  MatcherEvaluation out;
  out.per_category[Category::medication] = {};
  out.per_category[Category::side_effect] = {};
  const std::set<std::string> in_gold(gold.profiles.begin(), gold.profiles.end());
  for (const auto& [user, _] : matches)
    if (!in_gold.count(user)) ++out.ignored_profiles;

  for (const auto& user : gold.profiles) {
    std::set<TruthItem> predicted;
    if (auto it = matches.find(user); it != matches.end())
      for (const auto& m : it->second) predicted.insert({m.category, m.entry_id, m.negated});
    static const std::set<TruthItem> kNone;
    auto t = gold.truth.find(user);
    const auto& truth = t == gold.truth.end() ? kNone : t->second;
    for (const auto& item : predicted) {
      auto& cat = out.per_category[item.category];
      if (truth.count(item)) ++cat.tp;
      else ++cat.fp;
    }
    for (const auto& item : truth)
      if (!predicted.count(item)) ++out.per_category[item.category].fn;
  }
  for (const auto& [cat, prf] : out.per_category) out.overall += prf;
  return out;
}

inline nlohmann::json prf_to_json(const PRF& m) {
  return {{"tp", m.tp},
          {"fp", m.fp},
          {"fn", m.fn},
          {"precision", m.precision()},
          {"recall", m.recall()},
          {"f1", m.f1()},
          {"display", format_prf(m)}};
}

inline nlohmann::json evaluation_to_json(const MatcherEvaluation& e) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [cat, prf] : e.per_category) per[std::string(to_string(cat))] = prf_to_json(prf);
  return {{"overall", prf_to_json(e.overall)}, {"per_category", per}, {"ignored_profiles", e.ignored_profiles}};
}

// --- Lexicon candidates ----------------------------------------------------

struct Candidate {
  LexiconEntry entry;  // functional_class still unset for medications
  std::size_t count = 0;  // distinct profiles where the term was marked
};

inline std::string candidate_entry_id(Category c, const std::string& term) {
  std::string id = c == Category::medication ? "med_" : "se_";
  for (char ch : term) id.push_back(ch == ' ' || ch == '-' || ch == '\'' ? '_' : ch);
  return id;
}

/// Free-text terms from a reconciled round that no lexicon surface form
/// reaches at `threshold` similarity, counted by distinct profile and
/// sorted by count descending, then term.
inline std::vector<Candidate> propose_candidates(const AnnotationRound& round, const LexiconVersion& lexicon,
                                                 double threshold = 0.85) {
  if (round.status != RoundStatus::reconciled)
    throw DataError("propose_candidates: round " + std::to_string(round.round) + " is not reconciled");
  std::vector<std::u32string> forms;
  for (const auto& e : lexicon.entries)
    for (const auto& f : e.surface_forms()) forms.push_back(utf8_decode(f));

  std::map<std::pair<Category, std::string>, std::set<std::string>> seen_in;
  for (const auto& [key, spans] : round.labels)
    for (const auto& s : spans) seen_in[{s.item.category, s.item.term}].insert(key.second);

  std::vector<Candidate> out;
  for (const auto& [ct, users] : seen_in) {
    const auto& [cat, term] = ct;
    if (lexicon.find(term)) continue;
    const auto chars = utf8_decode(term);
    const bool known = std::any_of(forms.begin(), forms.end(),
                                   [&](const std::u32string& f) { return similarity(chars, f) >= threshold; });
    if (known) continue;
    LexiconEntry e;
    e.entry_id = candidate_entry_id(cat, term);
    e.canonical = term;
    e.category = cat;
    e.provenance = Provenance::from_round(round.round);
    out.push_back({std::move(e), users.size()});
  }
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    return a.count != b.count ? a.count > b.count : a.entry.canonical < b.entry.canonical;
  });
  return out;
}

}  // namespace sidefx
