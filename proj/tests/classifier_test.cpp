#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace sidefx;

namespace {

FeatureConfig unigrams(bool tfidf) {
  FeatureConfig c;
  c.ngram_min = c.ngram_max = 1;
  c.use_tfidf = tfidf;
  c.use_length = false;
  c.vocab_min_df = 1;
  return c;
}

std::vector<std::vector<std::string>> docs_of(std::initializer_list<const char*> texts) {
  std::vector<std::vector<std::string>> out;
  for (const char* t : texts) out.push_back(normalize(t).tokens);
  return out;
}

GridSearchSpec small_grid() {
  GridSearchSpec g;
  g.l2_penalties = {1e-3};
  g.ngram_ranges = {{1, 2}};
  g.max_iter = 3000;
  return g;
}

}  // namespace

TEST(Features, IdfValues) {
  const auto v = fit_vocabulary(docs_of({"a b", "a c"}), unigrams(true));
  EXPECT_NEAR(v.idf[v.index.at("a")], 1.0, 1e-12);
  EXPECT_NEAR(v.idf[v.index.at("b")], std::log(1.5) + 1.0, 1e-12);
  EXPECT_NEAR(v.idf[v.index.at("b")], 1.405, 1e-3);
  for (double x : v.idf) EXPECT_GE(x, 0.0);
}

TEST(Features, EmptyTextIsZeroVector) {
  const auto v = fit_vocabulary(docs_of({"a b", "a c"}), unigrams(true));
  EXPECT_TRUE(featurize("", unigrams(true), v).empty());
  FeatureConfig with_len = unigrams(true);
  with_len.use_length = true;
  // log1p(0) = 0, so the length slot is also zero.
  for (auto [i, x] : featurize("", with_len, v)) EXPECT_EQ(x, 0.0);
}

TEST(Features, RawCounts) {
  const auto counts = ngram_counts("a a b", unigrams(false));
  EXPECT_EQ(counts, (std::map<std::string, double>{{"a", 2.0}, {"b", 1.0}}));
  const auto v = fit_vocabulary(docs_of({"a b"}), unigrams(false));
  const auto x = featurize("a a b", unigrams(false), v);
  ASSERT_EQ(x.size(), 2u);
  EXPECT_EQ(x[0].second, 2.0);
  EXPECT_EQ(x[1].second, 1.0);
}

TEST(Features, NgramsAndLengthSlot) {
  EXPECT_EQ(extract_ngrams({"a", "b", "c"}, 1, 2), (std::vector<std::string>{"a", "b", "c", "a b", "b c"}));
  EXPECT_TRUE(extract_ngrams({"a"}, 2, 3).empty());
  FeatureConfig c = unigrams(false);
  c.use_length = true;
  const auto v = fit_vocabulary(docs_of({"x y"}), c);
  EXPECT_EQ(feature_dimension(v, c), 3u);
  const auto x = featurize("x y z", c, v);
  ASSERT_FALSE(x.empty());
  EXPECT_EQ(x.back().first, 2u);
  EXPECT_NEAR(x.back().second, std::log1p(3.0), 1e-12);
}

TEST(Features, MinDfPrunesRareTerms) {
  FeatureConfig c = unigrams(true);
  c.vocab_min_df = 2;
  const auto v = fit_vocabulary(docs_of({"a b", "a c"}), c);
  EXPECT_EQ(v.terms, (std::vector<std::string>{"a"}));
}

TEST(Features, ConfigValidation) {
  FeatureConfig c;
  c.ngram_min = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.ngram_min = 3;
  c.ngram_max = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Predict, ZeroModelScoresHalfAndLabelsS) {
  LinearModel m;
  m.feature_config = unigrams(true);
  const auto p = predict(m, "anything at all");
  EXPECT_DOUBLE_EQ(p.score, 0.5);
  EXPECT_EQ(p.label, Label::S);
}

TEST(Predict, LargeMarginSaturates) {
  LinearModel m;
  m.feature_config = unigrams(false);
  m.vocabulary = fit_vocabulary(docs_of({"tamoxifen"}), m.feature_config);
  m.weights = {50.0};
  EXPECT_GT(predict(m, "tamoxifen").score, 1.0 - 1e-12);
  m.weights = {-800.0};
  EXPECT_EQ(predict(m, "tamoxifen").score, 0.0);
}

TEST(Predict, UnseenNgramsScoreIsSigmoidOfBias) {
  LinearModel m;
  m.feature_config = unigrams(true);
  m.vocabulary = fit_vocabulary(docs_of({"tamoxifen"}), m.feature_config);
  m.weights = {3.0};
  m.bias = -0.7;
  EXPECT_DOUBLE_EQ(predict(m, "weather report").score, sigmoid(-0.7));
  EXPECT_EQ(predict(m, "weather report").label, Label::NR);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  Rng rng(17);
  for (int i = 0; i < 50; ++i) EXPECT_LE(oracle::gradient_check(rng), 1e-5) << "instance " << i;
}

TEST(Objective, StableForExtremeMargins) {
  const std::vector<SparseVector> rows = {{{0, 1.0}}};
  const std::vector<double> w = {1000.0};
  const auto o = logistic_objective(rows, {0}, w, 0.0, 0.0);
  EXPECT_TRUE(std::isfinite(o.loss));
  EXPECT_NEAR(o.loss, 1000.0, 1e-9);
}

TEST(Folds, DisjointCoveringAndStratified) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 10 + uniform_index(rng, 90);
    std::vector<Label> labels;
    for (std::uint64_t i = 0; i < n; ++i) labels.push_back(uniform_index(rng, 3) == 0 ? Label::S : Label::NR);
    const int k = 2 + static_cast<int>(uniform_index(rng, 5));
    const auto folds = stratified_folds(labels, k, trial);
    ASSERT_EQ(folds.size(), labels.size());
    std::vector<std::size_t> size(k), s_count(k);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_GE(folds[i], 0);
      ASSERT_LT(folds[i], k);
      ++size[folds[i]];
      s_count[folds[i]] += labels[i] == Label::S;
    }
    // Every index lands in exactly one fold by construction of the vector;
    // sizes and class counts are balanced within one.
    ASSERT_LE(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()), 1u);
    ASSERT_LE(*std::max_element(s_count.begin(), s_count.end()) - *std::min_element(s_count.begin(), s_count.end()),
              1u);
    ASSERT_EQ(stratified_folds(labels, k, trial), folds);
  }
  EXPECT_THROW(stratified_folds({Label::S, Label::NR}, 1, 0), ConfigError);
}

TEST(Train, SeparableSetFitsPerfectly) {
  const auto data = oracle::separable_posts(4);
  ASSERT_TRUE(oracle::separable_by_one_token(data));
  const auto r = train(data, small_grid());
  for (const auto& ex : data) EXPECT_EQ(predict(r.model, ex.text).label, ex.label) << ex.text;
  EXPECT_EQ(r.model.weights.size(), feature_dimension(r.model.vocabulary, r.model.feature_config));
}

TEST(Train, IdenticalTextsMatchMajorityBaseline) {
  std::vector<TrainingExample> data;
  std::vector<Label> labels;
  for (int i = 0; i < 50; ++i) {
    const Label l = i < 30 ? Label::S : Label::NR;
    data.push_back({"same words every time", l});
    labels.push_back(l);
  }
  GridSearchSpec g = small_grid();
  const auto r = train(data, g);
  // Baseline: each fold predicts its training majority for every test post.
  const auto folds = stratified_folds(labels, g.folds, g.seed);
  double baseline = 0.0;
  for (int f = 0; f < g.folds; ++f) {
    std::size_t train_s = 0, train_n = 0;
    PRF prf;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (folds[i] != f) {
        ++train_n;
        train_s += labels[i] == Label::S;
      }
    const bool predict_s = 2 * train_s >= train_n;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (folds[i] != f) continue;
      const bool gold = labels[i] == Label::S;
      prf.tp += predict_s && gold;
      prf.fp += predict_s && !gold;
      prf.fn += !predict_s && gold;
    }
    baseline += prf.f1() / g.folds;
  }
  EXPECT_NEAR(r.cv.rows[0].mean_f1, baseline, 1e-12);
}

TEST(Train, TiesKeepFirstGridCell) {
  const auto data = oracle::separable_posts(5);
  GridSearchSpec g = small_grid();
  g.l2_penalties = {1e-3, 1e-3};
  const auto r = train(data, g);
  ASSERT_EQ(r.cv.rows.size(), 2u);
  EXPECT_EQ(r.cv.rows[0].mean_f1, r.cv.rows[1].mean_f1);
  EXPECT_EQ(r.cv.best, 0u);
  g.l2_penalties = {1e-3};
  EXPECT_EQ(model_to_json(train(data, g).model), model_to_json(r.model));
}

TEST(Train, Errors) {
  std::vector<TrainingExample> one_class(10, {"text", Label::S});
  EXPECT_THROW(train(one_class, small_grid()), DataError);
  std::vector<TrainingExample> tiny = {{"a", Label::S}, {"b", Label::NR}};
  EXPECT_THROW(train(tiny, small_grid()), DataError);
  GridSearchSpec bad = small_grid();
  bad.l2_penalties.clear();
  EXPECT_THROW(train(oracle::separable_posts(1), bad), ConfigError);
}

TEST(Train, Deterministic) {
  const auto data = oracle::separable_posts(9);
  EXPECT_EQ(cv_report_to_json(train(data, small_grid()).cv), cv_report_to_json(train(data, small_grid()).cv));
}

TEST(ModelJson, RoundTrip) {
  const auto r = train(oracle::separable_posts(2), small_grid());
  const auto back = model_from_json(model_to_json(r.model));
  for (const auto& ex : oracle::separable_posts(3))
    EXPECT_DOUBLE_EQ(predict(back, ex.text).score, predict(r.model, ex.text).score);
  auto j = model_to_json(r.model);
  j["weights"].push_back(1.0);
  EXPECT_THROW(model_from_json(j), DataError);
}

TEST(Evaluate, ConfusionCounts) {
  std::vector<LabeledPost> gold, pred;
  auto add = [&](Label g, Label p, int count) {
    for (int i = 0; i < count; ++i) {
      const auto id = "p" + std::to_string(gold.size());
      gold.push_back({id, g, std::nullopt});
      pred.push_back({id, p, std::nullopt});
    }
  };
  add(Label::S, Label::S, 16);
  add(Label::NR, Label::S, 9);
  add(Label::S, Label::NR, 9);
  add(Label::NR, Label::NR, 66);
  const auto m = evaluate(pred, gold);
  EXPECT_EQ(m.total(), gold.size());
  EXPECT_NEAR(m.precision(), 0.64, 1e-12);
  EXPECT_NEAR(m.recall(), 0.64, 1e-12);
  EXPECT_NEAR(m.f1(), 0.64, 1e-12);
  EXPECT_EQ(format_prf(m.prf()), "P=0.64, R=0.64, F1=0.64");

  // Order of the inputs does not matter.
  std::reverse(pred.begin(), pred.end());
  const auto m2 = evaluate(pred, gold);
  EXPECT_EQ(m2.tp, m.tp);
  EXPECT_EQ(m2.tn, m.tn);
}

TEST(Evaluate, DegenerateCases) {
  std::vector<LabeledPost> gold = {{"1", Label::S, {}}, {"2", Label::NR, {}}};
  auto m = evaluate(gold, gold);
  EXPECT_EQ(m.accuracy(), 1.0);
  EXPECT_EQ(m.f1(), 1.0);
  std::vector<LabeledPost> none = {{"1", Label::NR, {}}, {"2", Label::NR, {}}};
  m = evaluate(none, gold);
  EXPECT_EQ(m.precision(), 0.0);
  EXPECT_EQ(m.recall(), 0.0);
  EXPECT_EQ(m.f1(), 0.0);
}

TEST(Evaluate, IdMismatchIsError) {
  std::vector<LabeledPost> gold = {{"1", Label::S, {}}, {"2", Label::NR, {}}};
  EXPECT_THROW(evaluate({{"1", Label::S, {}}}, gold), DataError);
  EXPECT_THROW(evaluate({{"1", Label::S, {}}, {"3", Label::S, {}}}, gold), DataError);
  EXPECT_THROW(evaluate({{"1", Label::S, {}}, {"1", Label::S, {}}}, gold), DataError);
}

TEST(ExternalLabels, Import) {
  std::istringstream in(R"({"post_id":"1","label":"S"})" "\n"
                        R"({"post_id":"2","label":"NR","score":0.1})" "\n"
                        R"({"post_id":"3","label":"S"})" "\n"
                        R"({"post_id":"4","label":"NR"})" "\n"
                        R"({"post_id":"5","label":"S"})" "\n");
  const auto r = import_external_labels(in);
  EXPECT_EQ(r.labels.size(), 5u);
  EXPECT_EQ(r.rejected, 0u);
  EXPECT_DOUBLE_EQ(*r.labels.at("2").score, 0.1);
}

TEST(ExternalLabels, RejectsUnknownLabelAndMalformedLines) {
  std::istringstream in(R"({"post_id":"1","label":"MAYBE"})" "\n"
                        "{oops\n"
                        R"({"post_id":"2"})" "\n"
                        R"({"post_id":"3","label":"S","score":"high"})" "\n");
  const auto r = import_external_labels(in);
  EXPECT_TRUE(r.labels.empty());
  EXPECT_EQ(r.rejected, 4u);
  EXPECT_EQ(r.errors[0].second, "label outside {S, NR}");
}

TEST(ExternalLabels, DuplicateLastWriteWins) {
  std::istringstream in(R"({"post_id":"1","label":"S"})" "\n" R"({"post_id":"1","label":"NR"})" "\n");
  const std::set<std::string> known = {"2"};
  const auto r = import_external_labels(in, &known);
  EXPECT_EQ(r.labels.at("1").label, Label::NR);
  EXPECT_EQ(r.duplicates, 1u);
  EXPECT_EQ(r.unknown_post_ids, (std::vector<std::string>{"1"}));
  EXPECT_THROW(import_external_labels(std::string("/nonexistent/labels.jsonl")), IoError);
}
