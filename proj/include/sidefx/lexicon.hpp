#pragma once

// Versioned medication / side-effect lexicons with provenance.

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sidefx/error.hpp"
#include "sidefx/text.hpp"

namespace sidefx {

enum class Category { medication, side_effect };

// Declaration order is the fixed rendering order of medication patterns.
enum class FunctionalClass { hormone_therapy, chemotherapy, immune_checkpoint_inhibitor, kinase_inhibitor };

inline constexpr FunctionalClass kAllFunctionalClasses[] = {
    FunctionalClass::hormone_therapy, FunctionalClass::chemotherapy,
    FunctionalClass::immune_checkpoint_inhibitor, FunctionalClass::kinase_inhibitor};

inline std::string_view to_string(Category c) {
  return c == Category::medication ? "medication" : "side_effect";
}

inline std::optional<Category> parse_category(std::string_view s) {
  if (s == "medication") return Category::medication;
  if (s == "side_effect") return Category::side_effect;
  return std::nullopt;
}

inline std::string_view to_string(FunctionalClass f) {
  switch (f) {
    case FunctionalClass::hormone_therapy: return "hormone_therapy";
    case FunctionalClass::chemotherapy: return "chemotherapy";
    case FunctionalClass::immune_checkpoint_inhibitor: return "immune_checkpoint_inhibitor";
    case FunctionalClass::kinase_inhibitor: return "kinase_inhibitor";
  }
  return "";
}

inline std::optional<FunctionalClass> parse_functional_class(std::string_view s) {
  for (auto f : kAllFunctionalClasses) {
    if (to_string(f) == s) return f;
  }
  return std::nullopt;
}

struct Provenance {
  enum class Source { nci_medication_library, nci_side_effects, covid_symptom_lexicon, annotation_round };
  Source source = Source::nci_medication_library;
  int round = 0;  // only meaningful for annotation_round

  static Provenance from_round(int r) { return {Source::annotation_round, r}; }

  std::string str() const {
    switch (source) {
      case Source::nci_medication_library: return "nci_medication_library";
      case Source::nci_side_effects: return "nci_side_effects";
      case Source::covid_symptom_lexicon: return "covid_symptom_lexicon";
      case Source::annotation_round: return "annotation_round(" + std::to_string(round) + ")";
    }
    return {};
  }

  static std::optional<Provenance> parse(std::string_view s) {
    if (s == "nci_medication_library") return Provenance{Source::nci_medication_library, 0};
    if (s == "nci_side_effects") return Provenance{Source::nci_side_effects, 0};
    if (s == "covid_symptom_lexicon") return Provenance{Source::covid_symptom_lexicon, 0};
    constexpr std::string_view prefix = "annotation_round(";
    if (s.size() > prefix.size() + 1 && s.substr(0, prefix.size()) == prefix && s.back() == ')') {
      const std::string digits(s.substr(prefix.size(), s.size() - prefix.size() - 1));
      if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }))
        return std::nullopt;
      return Provenance{Source::annotation_round, std::stoi(digits)};
    }
    return std::nullopt;
  }

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct LexiconEntry {
  std::string entry_id;
  std::string canonical;
  std::vector<std::string> synonyms;  // sorted, unique after normalization
  Category category = Category::side_effect;
  std::optional<FunctionalClass> functional_class;
  Provenance provenance;

  // Canonical first, then synonyms.
  std::vector<std::string> surface_forms() const {
    std::vector<std::string> out{canonical};
    out.insert(out.end(), synonyms.begin(), synonyms.end());
    return out;
  }

  friend bool operator==(const LexiconEntry&, const LexiconEntry&) = default;
};

// Raised for schema violations; carries the offending entry id.
struct LexiconError : DataError {
  LexiconError(std::string id, const std::string& what)
      : DataError("lexicon entry '" + id + "': " + what), entry_id(std::move(id)) {}
  std::string entry_id;
};

inline LexiconEntry normalize_entry(LexiconEntry e) {
  e.canonical = normalize_term(e.canonical);
  std::set<std::string> syn;
  for (const auto& s : e.synonyms) {
    auto n = normalize_term(s);
    if (!n.empty() && n != e.canonical) syn.insert(std::move(n));
  }
  e.synonyms.assign(syn.begin(), syn.end());
  return e;
}

inline void validate_entry(const LexiconEntry& e) {
  if (e.entry_id.empty()) throw LexiconError(e.entry_id, "empty entry_id");
  if (e.canonical.empty()) throw LexiconError(e.entry_id, "empty canonical term");
  if (normalize_term(e.canonical) != e.canonical) throw LexiconError(e.entry_id, "canonical not normalized");
  std::set<std::string> seen;
  for (const auto& s : e.synonyms) {
    if (normalize_term(s) != s || s.empty()) throw LexiconError(e.entry_id, "synonym not normalized: '" + s + "'");
    if (s == e.canonical) throw LexiconError(e.entry_id, "synonym equals canonical");
    if (!seen.insert(s).second) throw LexiconError(e.entry_id, "duplicate synonym '" + s + "'");
  }
  if (e.category == Category::medication && !e.functional_class)
    throw LexiconError(e.entry_id, "medication without functional_class");
  if (e.category == Category::side_effect && e.functional_class)
    throw LexiconError(e.entry_id, "side effect carries a functional_class");
}

enum class ChangeKind { add, modify };

struct ChangeRecord {
  ChangeKind kind = ChangeKind::add;
  std::string entry_id;
  std::optional<int> source_round;
  std::vector<std::string> added_synonyms;
  LexiconEntry entry;  // state of the entry after the change

  friend bool operator==(const ChangeRecord&, const ChangeRecord&) = default;
};

struct LexiconVersion {
  int version = 1;
  std::optional<int> parent;
  std::vector<LexiconEntry> entries;  // sorted by entry_id
  std::vector<ChangeRecord> changelog;

  const LexiconEntry* find(std::string_view id) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), id,
                               [](const LexiconEntry& e, std::string_view k) { return e.entry_id < k; });
    return it != entries.end() && it->entry_id == id ? &*it : nullptr;
  }

  std::vector<const LexiconEntry*> of_category(Category c) const {
    std::vector<const LexiconEntry*> out;
    for (const auto& e : entries)
      if (e.category == c) out.push_back(&e);
    return out;
  }
};

// --- JSON -----------------------------------------------------------------

inline void to_json(nlohmann::json& j, const LexiconEntry& e) {
  j = nlohmann::json{{"entry_id", e.entry_id},
                     {"canonical", e.canonical},
                     {"synonyms", e.synonyms},
                     {"category", to_string(e.category)},
                     {"provenance", e.provenance.str()}};
  j["functional_class"] = e.functional_class ? nlohmann::json(to_string(*e.functional_class)) : nlohmann::json();
}

// Parses without normalizing; callers run normalize_entry/validate_entry.
inline LexiconEntry entry_from_json(const nlohmann::json& j) {
  LexiconEntry e;
  const std::string id = j.contains("entry_id") && j["entry_id"].is_string() ? j["entry_id"].get<std::string>() : "";
  try {
    e.entry_id = j.at("entry_id").get<std::string>();
    e.canonical = j.at("canonical").get<std::string>();
    if (j.contains("synonyms")) e.synonyms = j.at("synonyms").get<std::vector<std::string>>();
    auto cat = parse_category(j.at("category").get<std::string>());
    if (!cat) throw LexiconError(id, "unknown category");
    e.category = *cat;
    if (j.contains("functional_class") && !j["functional_class"].is_null()) {
      auto fc = parse_functional_class(j["functional_class"].get<std::string>());
      if (!fc) throw LexiconError(id, "unknown functional_class");
      e.functional_class = fc;
    }
    if (j.contains("provenance")) {
      auto p = Provenance::parse(j["provenance"].get<std::string>());
      if (!p) throw LexiconError(id, "unknown provenance");
      e.provenance = *p;
    } else {
      e.provenance = e.category == Category::medication
                         ? Provenance{Provenance::Source::nci_medication_library, 0}
                         : Provenance{Provenance::Source::nci_side_effects, 0};
    }
  } catch (const nlohmann::json::exception& ex) {
    throw LexiconError(id, std::string("schema violation: ") + ex.what());
  }
  return e;
}

inline void to_json(nlohmann::json& j, const ChangeRecord& c) {
  j = nlohmann::json{{"kind", c.kind == ChangeKind::add ? "add" : "modify"},
                     {"entry_id", c.entry_id},
                     {"added_synonyms", c.added_synonyms},
                     {"entry", c.entry}};
  j["source_round"] = c.source_round ? nlohmann::json(*c.source_round) : nlohmann::json();
}

inline ChangeRecord change_from_json(const nlohmann::json& j) {
  ChangeRecord c;
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "add" && kind != "modify") throw DataError("changelog: unknown kind '" + kind + "'");
  c.kind = kind == "add" ? ChangeKind::add : ChangeKind::modify;
  c.entry_id = j.at("entry_id").get<std::string>();
  if (j.contains("source_round") && !j["source_round"].is_null()) c.source_round = j["source_round"].get<int>();
  if (j.contains("added_synonyms")) c.added_synonyms = j["added_synonyms"].get<std::vector<std::string>>();
  c.entry = entry_from_json(j.at("entry"));
  return c;
}

inline nlohmann::json lexicon_to_json(const LexiconVersion& v) {
  nlohmann::json j;
  j["version"] = v.version;
  j["parent"] = v.parent ? nlohmann::json(*v.parent) : nlohmann::json();
  j["entries"] = v.entries;
  j["changelog"] = v.changelog;
  return j;
}

inline LexiconVersion lexicon_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("lexicon: document is not an object");
  LexiconVersion v;
  try {
    v.version = j.at("version").get<int>();
    if (j.contains("parent") && !j["parent"].is_null()) v.parent = j["parent"].get<int>();
    if (!j.at("entries").is_array()) throw DataError("lexicon: entries is not an array");
    if (j.contains("changelog"))
      for (const auto& c : j["changelog"]) v.changelog.push_back(change_from_json(c));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("lexicon: schema violation: ") + ex.what());
  }
  std::set<std::string> ids;
  for (const auto& ej : j["entries"]) {
    auto e = normalize_entry(entry_from_json(ej));
    validate_entry(e);
    if (!ids.insert(e.entry_id).second) throw LexiconError(e.entry_id, "duplicate entry_id");
    v.entries.push_back(std::move(e));
  }
  std::sort(v.entries.begin(), v.entries.end(),
            [](const LexiconEntry& a, const LexiconEntry& b) { return a.entry_id < b.entry_id; });
  return v;
}

inline LexiconVersion load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("lexicon '" + path + "': " + ex.what());
  }
  return lexicon_from_json(j);
}

inline void save_lexicon(const std::string& path, const LexiconVersion& v) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write lexicon '" + path + "'");
  out << lexicon_to_json(v).dump(2) << '\n';
}

// --- Enrichment -----------------------------------------------------------

/// Produce the next version from annotation-round additions.
///
/// An addition whose entry_id already exists is a synonym extension: its
/// canonical and category must match, and new synonyms are recorded as a
/// modify change. A new entry whose canonical collides with any surface form
/// of another entry is rejected.
inline LexiconVersion enrich(const LexiconVersion& base, const std::vector<LexiconEntry>& additions, int round) {
  std::map<std::string, LexiconEntry> by_id;
  for (const auto& e : base.entries) by_id.emplace(e.entry_id, e);

  LexiconVersion next;
  next.version = base.version + 1;
  next.parent = base.version;

  for (const auto& raw : additions) {
    LexiconEntry add = normalize_entry(raw);
    if (auto it = by_id.find(add.entry_id); it != by_id.end()) {
      LexiconEntry& cur = it->second;
      if (cur.canonical != add.canonical || cur.category != add.category)
        throw LexiconError(add.entry_id, "entry_id collision with a different term");
      if (add.functional_class && add.functional_class != cur.functional_class)
        throw LexiconError(add.entry_id, "functional_class conflict");
      std::set<std::string> syn(cur.synonyms.begin(), cur.synonyms.end());
      std::vector<std::string> added;
      for (const auto& s : add.synonyms)
        if (syn.insert(s).second) added.push_back(s);
      if (added.empty()) continue;
      cur.synonyms.assign(syn.begin(), syn.end());
      next.changelog.push_back({ChangeKind::modify, cur.entry_id, round, added, cur});
      continue;
    }
    add.provenance = Provenance::from_round(round);
    validate_entry(add);
    for (const auto& [id, other] : by_id) {
      for (const auto& form : other.surface_forms()) {
        if (form != add.canonical) continue;
        if (other.category != add.category)
          throw LexiconError(add.entry_id, "canonical '" + add.canonical + "' collides across categories with '" + id + "'");
        throw LexiconError(add.entry_id, "canonical '" + add.canonical + "' already present in '" + id + "'");
      }
    }
    next.changelog.push_back({ChangeKind::add, add.entry_id, round, {}, add});
    by_id.emplace(add.entry_id, add);
  }
  for (auto& [id, e] : by_id) next.entries.push_back(std::move(e));
  return next;
}

/// Rebuild an entry set by applying changelogs, in order, on top of a seed.
inline std::vector<LexiconEntry> replay(const LexiconVersion& seed, const std::vector<std::vector<ChangeRecord>>& logs) {
  std::map<std::string, LexiconEntry> by_id;
  for (const auto& e : seed.entries) by_id.emplace(e.entry_id, e);
  for (const auto& log : logs)
    for (const auto& c : log) by_id.insert_or_assign(c.entry_id, c.entry);
  std::vector<LexiconEntry> out;
  for (auto& [id, e] : by_id) out.push_back(std::move(e));
  return out;
}

enum class DiffKind { add, remove, modify };

struct DiffRecord {
  DiffKind kind;
  std::string entry_id;
  std::vector<std::string> added_synonyms;
  std::vector<std::string> removed_synonyms;
  std::vector<std::string> changed_fields;
};

inline std::string_view to_string(DiffKind k) {
  switch (k) {
    case DiffKind::add: return "add";
    case DiffKind::remove: return "remove";
    case DiffKind::modify: return "modify";
  }
  return "";
}

inline std::vector<DiffRecord> diff(const LexiconVersion& a, const LexiconVersion& b) {
  std::vector<DiffRecord> out;
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  while (ia != a.entries.end() || ib != b.entries.end()) {
    if (ib == b.entries.end() || (ia != a.entries.end() && ia->entry_id < ib->entry_id)) {
      out.push_back({DiffKind::remove, ia->entry_id, {}, {}, {}});
      ++ia;
    } else if (ia == a.entries.end() || ib->entry_id < ia->entry_id) {
      out.push_back({DiffKind::add, ib->entry_id, {}, {}, {}});
      ++ib;
    } else {
      DiffRecord d{DiffKind::modify, ia->entry_id, {}, {}, {}};
      std::set_difference(ib->synonyms.begin(), ib->synonyms.end(), ia->synonyms.begin(), ia->synonyms.end(),
                          std::back_inserter(d.added_synonyms));
      std::set_difference(ia->synonyms.begin(), ia->synonyms.end(), ib->synonyms.begin(), ib->synonyms.end(),
                          std::back_inserter(d.removed_synonyms));
      if (ia->canonical != ib->canonical) d.changed_fields.push_back("canonical");
      if (ia->category != ib->category) d.changed_fields.push_back("category");
      if (ia->functional_class != ib->functional_class) d.changed_fields.push_back("functional_class");
      if (ia->provenance != ib->provenance) d.changed_fields.push_back("provenance");
      if (!d.added_synonyms.empty() || !d.removed_synonyms.empty() || !d.changed_fields.empty())
        out.push_back(std::move(d));
      ++ia;
      ++ib;
    }
  }
  return out;
}

}  // namespace sidefx
