#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace sidefx;
using testing_support::effect;
using testing_support::lexicon_of;
using testing_support::med;

namespace {

nlohmann::json entry_json(const std::string& id, const std::string& canonical, const std::string& category,
                          nlohmann::json fc = nullptr) {
  return {{"entry_id", id}, {"canonical", canonical}, {"synonyms", nlohmann::json::array()},
          {"category", category}, {"functional_class", fc}};
}

}  // namespace

TEST(LexiconLoad, SeedWithTamoxifen) {
  nlohmann::json j = {{"version", 1},
                      {"entries", {entry_json("med_tamoxifen", "Tamoxifen", "medication", "hormone_therapy")}}};
  const auto v = lexicon_from_json(j);
  ASSERT_EQ(v.entries.size(), 1u);
  EXPECT_EQ(v.entries[0].canonical, "tamoxifen");
  EXPECT_EQ(v.entries[0].functional_class, FunctionalClass::hormone_therapy);
  EXPECT_EQ(v.entries[0].provenance.str(), "nci_medication_library");
}

TEST(LexiconLoad, SideEffectWithClassRejectedWithId) {
  nlohmann::json j = {{"version", 1}, {"entries", {entry_json("se_x", "nausea", "side_effect", "chemotherapy")}}};
  try {
    lexicon_from_json(j);
    FAIL() << "expected LexiconError";
  } catch (const LexiconError& e) {
    EXPECT_EQ(e.entry_id, "se_x");
  }
}

TEST(LexiconLoad, MedicationWithoutClassRejected) {
  nlohmann::json j = {{"version", 1}, {"entries", {entry_json("m", "tamoxifen", "medication")}}};
  EXPECT_THROW(lexicon_from_json(j), LexiconError);
}

TEST(LexiconLoad, EmptyEntriesIsValid) {
  const auto v = lexicon_from_json({{"version", 1}, {"entries", nlohmann::json::array()}});
  EXPECT_TRUE(v.entries.empty());
}

TEST(LexiconLoad, DuplicateIdRejected) {
  nlohmann::json j = {{"version", 1},
                      {"entries", {entry_json("se", "nausea", "side_effect"), entry_json("se", "fatigue", "side_effect")}}};
  EXPECT_THROW(lexicon_from_json(j), LexiconError);
}

TEST(LexiconLoad, SchemaViolations) {
  EXPECT_THROW(lexicon_from_json(nlohmann::json::array()), DataError);
  EXPECT_THROW(lexicon_from_json({{"entries", nlohmann::json::array()}}), DataError);
  nlohmann::json bad_cat = {{"version", 1}, {"entries", {entry_json("x", "nausea", "symptom")}}};
  EXPECT_THROW(lexicon_from_json(bad_cat), LexiconError);
  nlohmann::json empty_canonical = {{"version", 1}, {"entries", {entry_json("x", " !! ", "side_effect")}}};
  EXPECT_THROW(lexicon_from_json(empty_canonical), LexiconError);
  EXPECT_THROW(load_lexicon("/nonexistent/lexicon.json"), IoError);
}

TEST(LexiconLoad, SynonymsNormalizedAndDeduplicated) {
  auto ej = entry_json("se_hf", "Hot Flashes", "side_effect");
  ej["synonyms"] = {"Night Sweats", "night  sweats", "hot flashes", "hot-flashes"};
  const auto v = lexicon_from_json({{"version", 1}, {"entries", {ej}}});
  EXPECT_EQ(v.entries[0].synonyms, (std::vector<std::string>{"hot-flashes", "night sweats"}));
}

TEST(LexiconLoad, BundledSeedIsValid) {
  const auto v = load_lexicon(testing_support::data_path("lexicon_seed.json"));
  EXPECT_EQ(v.version, 1);
  ASSERT_NE(v.find("med_tamoxifen"), nullptr);
  EXPECT_EQ(v.find("med_tamoxifen")->functional_class, FunctionalClass::hormone_therapy);
  ASSERT_NE(v.find("se_body_ache_pain"), nullptr);
  for (auto fc : kAllFunctionalClasses) {
    const auto meds = v.of_category(Category::medication);
    EXPECT_TRUE(std::any_of(meds.begin(), meds.end(), [&](const auto* e) { return e->functional_class == fc; }));
  }
}

TEST(LexiconJson, RoundTrip) {
  auto v = lexicon_of({med("tamoxifen", FunctionalClass::hormone_therapy, {"nolvadex"}), effect("se_n", "nausea")});
  v = enrich(v, {effect("se_bf", "brain fog")}, 2);
  const auto back = lexicon_from_json(lexicon_to_json(v));
  EXPECT_EQ(back.entries, v.entries);
  EXPECT_EQ(back.changelog, v.changelog);
  EXPECT_EQ(back.version, 2);
  EXPECT_EQ(back.parent, 1);
  EXPECT_EQ(back.find("se_bf")->provenance.str(), "annotation_round(2)");
}

TEST(Provenance, ParseAndPrint) {
  for (const char* s : {"nci_medication_library", "nci_side_effects", "covid_symptom_lexicon", "annotation_round(12)"})
    EXPECT_EQ(Provenance::parse(s)->str(), s);
  EXPECT_FALSE(Provenance::parse("annotation_round(x)"));
  EXPECT_FALSE(Provenance::parse("wikipedia"));
}

TEST(Enrich, AddNewSideEffect) {
  const auto base = lexicon_of({effect("se_n", "nausea")});
  LexiconEntry e = effect("se_nec", "generalized side effect or negative emotion, NEC");
  const auto next = enrich(base, {e}, 1);
  EXPECT_EQ(next.version, base.version + 1);
  EXPECT_EQ(next.entries.size(), 2u);
  ASSERT_EQ(next.changelog.size(), 1u);
  EXPECT_EQ(next.changelog[0].kind, ChangeKind::add);
  EXPECT_EQ(next.find("se_nec")->canonical, "generalized side effect or negative emotion nec");
}

TEST(Enrich, EmptyAdditionsStillBumpVersion) {
  const auto base = lexicon_of({effect("se_n", "nausea")});
  const auto next = enrich(base, {}, 1);
  EXPECT_EQ(next.version, 2);
  EXPECT_EQ(next.entries, base.entries);
  EXPECT_TRUE(next.changelog.empty());
}

TEST(Enrich, SynonymExtensionIsModify) {
  const auto base = lexicon_of({med("tamoxifen", FunctionalClass::hormone_therapy)});
  auto ext = med("tamoxifen", FunctionalClass::hormone_therapy, {"tamox"});
  const auto next = enrich(base, {ext}, 3);
  ASSERT_EQ(next.changelog.size(), 1u);
  EXPECT_EQ(next.changelog[0].kind, ChangeKind::modify);
  EXPECT_EQ(next.changelog[0].added_synonyms, (std::vector<std::string>{"tamox"}));
  EXPECT_EQ(next.changelog[0].source_round, 3);
  EXPECT_EQ(next.find("med_tamoxifen")->synonyms, (std::vector<std::string>{"tamox"}));
  // The original provenance is kept on a synonym extension.
  EXPECT_EQ(next.find("med_tamoxifen")->provenance.str(), "nci_medication_library");
}

TEST(Enrich, CrossCategoryCollisionRejected) {
  const auto base = lexicon_of({effect("se_fatigue", "fatigue")});
  LexiconEntry m = med("fatigue", FunctionalClass::chemotherapy);
  EXPECT_THROW(enrich(base, {m}, 1), LexiconError);
}

TEST(Enrich, CanonicalEqualToExistingSynonymRejected) {
  const auto base = lexicon_of({effect("se_fatigue", "fatigue", {"tired"})});
  EXPECT_THROW(enrich(base, {effect("se_tired", "tired")}, 1), LexiconError);
}

TEST(Enrich, InvalidAdditionRejected) {
  const auto base = lexicon_of({});
  LexiconEntry bad = effect("se_bad", "x");
  bad.functional_class = FunctionalClass::chemotherapy;
  EXPECT_THROW(enrich(base, {bad}, 1), LexiconError);
}

TEST(Diff, Cases) {
  const auto a = lexicon_of({effect("se_n", "nausea"), effect("se_f", "fatigue")});
  EXPECT_TRUE(diff(a, a).empty());

  const auto b = enrich(a, {effect("se_bf", "brain fog")}, 1);
  auto d = diff(a, b);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].kind, DiffKind::add);
  EXPECT_EQ(d[0].entry_id, "se_bf");

  const auto c = enrich(a, {effect("se_f", "fatigue", {"exhausted"})}, 1);
  d = diff(a, c);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].kind, DiffKind::modify);
  EXPECT_EQ(d[0].added_synonyms, (std::vector<std::string>{"exhausted"}));

  d = diff(b, a);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].kind, DiffKind::remove);
}

// Random enrichment chains: replaying the changelogs over the seed gives
// back the final entry set, versions increase by one, and entry sets only
// grow.
TEST(LexiconProperty, ReplayReconstructsChain) {
  static const std::vector<std::string> words = {"fog", "ache", "cramps", "rash", "chills", "dizzy", "itch", "blur"};
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto seed = lexicon_of({effect("se_n", "nausea"), med("tamoxifen", FunctionalClass::hormone_therapy)});
    auto cur = seed;
    std::vector<std::vector<ChangeRecord>> logs;
    for (int round = 1; round <= 5; ++round) {
      std::vector<LexiconEntry> adds;
      const auto k = uniform_index(rng, 3);
      for (std::uint64_t i = 0; i < k; ++i) {
        const auto& w = words[uniform_index(rng, words.size())];
        if (uniform_index(rng, 3) == 0) adds.push_back(effect("se_n", "nausea", {w + " stomach"}));
        else adds.push_back(effect("se_" + w, w));
      }
      LexiconVersion next;
      try {
        next = enrich(cur, adds, round);
      } catch (const LexiconError&) {
        continue;  // duplicate canonical drawn; not a chain step
      }
      ASSERT_EQ(next.version, cur.version + 1);
      ASSERT_GE(next.entries.size(), cur.entries.size());
      for (const auto& e : cur.entries) ASSERT_NE(next.find(e.entry_id), nullptr);
      logs.push_back(next.changelog);
      cur = next;
    }
    ASSERT_EQ(replay(seed, logs), cur.entries);
  }
}

TEST(LexiconSave, WritesLoadableFile) {
  testing_support::TempDir dir;
  const auto v = lexicon_of({effect("se_n", "nausea")}, 4);
  save_lexicon(dir.str("lex.json"), v);
  EXPECT_EQ(load_lexicon(dir.str("lex.json")).entries, v.entries);
}
