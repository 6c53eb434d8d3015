#pragma once

// Self-report (S) vs not-relevant (NR) post classifier: n-gram TF-IDF
// features, L2-regularized logistic regression, seeded stratified k-fold
// grid search. Labels from an external model can be imported instead.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sidefx/error.hpp"
#include "sidefx/metrics.hpp"
#include "sidefx/random.hpp"
#include "sidefx/text.hpp"

namespace sidefx {

enum class Label { S, NR };

inline std::string_view to_string(Label l) { return l == Label::S ? "S" : "NR"; }

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "S") return Label::S;
  if (s == "NR") return Label::NR;
  return std::nullopt;
}

struct LabeledPost {
  std::string post_id;
  Label label = Label::NR;
  std::optional<double> score;
};

struct FeatureConfig {
  int ngram_min = 1;
  int ngram_max = 3;
  bool use_tfidf = true;
  bool use_length = true;
  int vocab_min_df = 2;

  void validate() const {
    if (ngram_min < 1 || ngram_min > ngram_max) throw ConfigError("features: need 1 <= ngram_min <= ngram_max");
    if (vocab_min_df < 1) throw ConfigError("features: vocab_min_df must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = {{"ngram_min", c.ngram_min},
       {"ngram_max", c.ngram_max},
       {"use_tfidf", c.use_tfidf},
       {"use_length", c.use_length},
       {"vocab_min_df", c.vocab_min_df}};
}

inline void from_json(const nlohmann::json& j, FeatureConfig& c) {
  c.ngram_min = j.value("ngram_min", c.ngram_min);
  c.ngram_max = j.value("ngram_max", c.ngram_max);
  c.use_tfidf = j.value("use_tfidf", c.use_tfidf);
  c.use_length = j.value("use_length", c.use_length);
  c.vocab_min_df = j.value("vocab_min_df", c.vocab_min_df);
}

using SparseVector = std::vector<std::pair<std::size_t, double>>;  // sorted by index

inline std::vector<std::string> extract_ngrams(const std::vector<std::string>& tokens, int nmin, int nmax) {
  std::vector<std::string> out;
  for (int n = nmin; n <= nmax; ++n) {
    const auto width = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + width <= tokens.size(); ++i) {
      std::string g = tokens[i];
      for (std::size_t k = i + 1; k < i + width; ++k) g.append(" ").append(tokens[k]);
      out.push_back(std::move(g));
    }
  }
  return out;
}

// Raw n-gram counts of a text, before any vocabulary is applied.
inline std::map<std::string, double> ngram_counts(std::string_view text, const FeatureConfig& cfg) {
  std::map<std::string, double> out;
  for (auto& g : extract_ngrams(normalize(text).tokens, cfg.ngram_min, cfg.ngram_max)) out[g] += 1.0;
  return out;
}

struct Vocabulary {
  std::vector<std::string> terms;  // lexicographic
  std::vector<double> idf;
  std::map<std::string, std::size_t, std::less<>> index;

  std::size_t size() const { return terms.size(); }

  void rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < terms.size(); ++i) index.emplace(terms[i], i);
  }
};

/// Document frequencies over tokenized docs; idf = ln((1+N)/(1+df)) + 1.
inline Vocabulary fit_vocabulary(const std::vector<std::vector<std::string>>& docs, const FeatureConfig& cfg) {
  std::map<std::string, std::size_t> df;
  for (const auto& tokens : docs) {
    auto grams = extract_ngrams(tokens, cfg.ngram_min, cfg.ngram_max);
    std::sort(grams.begin(), grams.end());
    grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
    for (auto& g : grams) ++df[g];
  }
  Vocabulary v;
  const double n = static_cast<double>(docs.size());
  for (const auto& [term, count] : df) {
    if (count < static_cast<std::size_t>(cfg.vocab_min_df)) continue;
    v.terms.push_back(term);
    v.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  v.rebuild_index();
  return v;
}

inline std::size_t feature_dimension(const Vocabulary& v, const FeatureConfig& cfg) {
  return v.size() + (cfg.use_length ? 1 : 0);
}

/// TF-IDF weighted n-gram counts plus an optional log(1 + token count)
/// length feature in the last slot. N-grams outside the vocabulary are dropped.
inline SparseVector featurize_tokens(const std::vector<std::string>& tokens, const FeatureConfig& cfg,
                                     const Vocabulary& vocab) {
  std::map<std::size_t, double> acc;
  for (const auto& g : extract_ngrams(tokens, cfg.ngram_min, cfg.ngram_max)) {
    auto it = vocab.index.find(g);
    if (it != vocab.index.end()) acc[it->second] += 1.0;
  }
  SparseVector out;
  out.reserve(acc.size() + 1);
  for (auto [i, tf] : acc) out.emplace_back(i, cfg.use_tfidf ? tf * vocab.idf[i] : tf);
  if (cfg.use_length && !tokens.empty())
    out.emplace_back(vocab.size(), std::log1p(static_cast<double>(tokens.size())));
  return out;
}

inline SparseVector featurize(std::string_view text, const FeatureConfig& cfg, const Vocabulary& vocab) {
  return featurize_tokens(normalize(text).tokens, cfg, vocab);
}

inline double dot(const SparseVector& x, std::span<const double> w) {
  double s = 0.0;
  for (auto [i, v] : x) s += w[i] * v;
  return s;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Objective {
  double loss = 0.0;
  std::vector<double> grad_w;
  double grad_b = 0.0;
};

/// Mean logistic loss plus (l2/2)·|w|² (bias unpenalized), with gradient.
/// y[i] is 1 for S, 0 for NR.
inline Objective logistic_objective(const std::vector<SparseVector>& rows, const std::vector<int>& y,
                                    std::span<const double> w, double b, double l2) {
  Objective o;
  o.grad_w.assign(w.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double z = dot(rows[r], w) + b;
    // softplus(z) - y*z, computed without overflow
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    o.loss += (softplus - y[r] * z) * inv_n;
    const double residual = (sigmoid(z) - y[r]) * inv_n;
    for (auto [i, v] : rows[r]) o.grad_w[i] += residual * v;
    o.grad_b += residual;
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    sq += w[i] * w[i];
    o.grad_w[i] += l2 * w[i];
  }
  o.loss += 0.5 * l2 * sq;
  return o;
}

struct FitOptions {
  double l2 = 1e-3;
  int max_iter = 2000;
  double tol = 1e-6;  // on the max-abs gradient component
};

struct FitResult {
  std::vector<double> weights;
  double bias = 0.0;
  int iterations = 0;
};

/// Full-batch gradient descent with the fixed step 1/L, where
/// L = max_i(|x_i|² + 1)/4 + l2 bounds the Hessian.
inline FitResult fit_logistic(const std::vector<SparseVector>& rows, const std::vector<int>& y, std::size_t dim,
                              const FitOptions& opt) {
  FitResult fit;
  fit.weights.assign(dim, 0.0);
  if (rows.empty()) return fit;
  double max_norm = 0.0;
  for (const auto& r : rows) {
    double s = 1.0;
    for (auto [i, v] : r) s += v * v;
    max_norm = std::max(max_norm, s);
  }
  const double step = 1.0 / (0.25 * max_norm + opt.l2);
  for (fit.iterations = 0; fit.iterations < opt.max_iter; ++fit.iterations) {
    auto obj = logistic_objective(rows, y, fit.weights, fit.bias, opt.l2);
    double gmax = std::abs(obj.grad_b);
    for (double g : obj.grad_w) gmax = std::max(gmax, std::abs(g));
    if (gmax < opt.tol) break;
    for (std::size_t i = 0; i < dim; ++i) fit.weights[i] -= step * obj.grad_w[i];
    fit.bias -= step * obj.grad_b;
  }
  return fit;
}

struct LinearModel {
  FeatureConfig feature_config;
  Vocabulary vocabulary;
  std::vector<double> weights;  // vocabulary order, then the length feature if enabled
  double bias = 0.0;
  double l2 = 0.0;
};

struct Prediction {
  Label label = Label::NR;
  double score = 0.5;
};

inline Prediction predict(const LinearModel& model, std::string_view text) {
  const double score = sigmoid(dot(featurize(text, model.feature_config, model.vocabulary), model.weights) + model.bias);
  return {score >= 0.5 ? Label::S : Label::NR, score};
}

inline nlohmann::json model_to_json(const LinearModel& m) {
  return {{"feature_config", m.feature_config}, {"vocabulary", m.vocabulary.terms}, {"idf", m.vocabulary.idf},
          {"weights", m.weights},               {"bias", m.bias},                   {"l2", m.l2}};
}

inline LinearModel model_from_json(const nlohmann::json& j) {
  LinearModel m;
  try {
    m.feature_config = j.at("feature_config").get<FeatureConfig>();
    m.vocabulary.terms = j.at("vocabulary").get<std::vector<std::string>>();
    m.vocabulary.idf = j.at("idf").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.l2 = j.value("l2", 0.0);
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("model: ") + ex.what());
  }
  m.feature_config.validate();
  if (m.vocabulary.idf.size() != m.vocabulary.terms.size()) throw DataError("model: idf/vocabulary size mismatch");
  if (m.weights.size() != feature_dimension(m.vocabulary, m.feature_config))
    throw DataError("model: weight dimension mismatch");
  if (std::any_of(m.vocabulary.idf.begin(), m.vocabulary.idf.end(), [](double v) { return v < 0; }))
    throw DataError("model: negative idf");
  m.vocabulary.rebuild_index();
  return m;
}

// --- Cross-validation ------------------------------------------------------

/// Fold id per sample. Each class is shuffled with the seed and dealt
/// round-robin, continuing the rotation across classes so fold sizes differ
/// by at most one and each class is spread within ±1 per fold.
inline std::vector<int> stratified_folds(const std::vector<Label>& labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("folds must be >= 2");
  std::vector<int> out(labels.size(), -1);
  Rng rng(seed);
  int next = 0;
  for (Label cls : {Label::S, Label::NR}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    seeded_shuffle(idx, rng);
    for (auto i : idx) {
      out[i] = next;
      next = (next + 1) % folds;
    }
  }
  return out;
}

struct GridSearchSpec {
  std::vector<double> l2_penalties{1e-4, 1e-3, 1e-2};
  std::vector<std::pair<int, int>> ngram_ranges{{1, 3}};
  int folds = 5;
  std::uint64_t seed = 42;
  int max_iter = 2000;
  double tol = 1e-6;

  void validate() const {
    if (folds < 2) throw ConfigError("grid search: folds must be >= 2");
    if (l2_penalties.empty() || ngram_ranges.empty()) throw ConfigError("grid search: empty parameter list");
    for (double l : l2_penalties)
      if (!(l > 0)) throw ConfigError("grid search: l2 penalties must be positive");
    for (auto [a, b] : ngram_ranges)
      if (a < 1 || a > b) throw ConfigError("grid search: bad ngram range");
  }
};

struct CVRow {
  double l2 = 0.0;
  int ngram_min = 1;
  int ngram_max = 1;
  std::vector<double> fold_f1;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
};

struct CVReport {
  std::vector<CVRow> rows;  // grid order: ngram ranges outer, penalties inner
  std::size_t best = 0;
};

inline nlohmann::json cv_report_to_json(const CVReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"l2", row.l2},
                    {"ngram_min", row.ngram_min},
                    {"ngram_max", row.ngram_max},
                    {"fold_f1", row.fold_f1},
                    {"mean_f1", row.mean_f1},
                    {"std_f1", row.std_f1}});
  return {{"rows", rows}, {"best", r.best}};
}

struct TrainingExample {
  std::string text;
  Label label = Label::NR;
};

struct TrainResult {
  LinearModel model;
  CVReport cv;
};

namespace detail {

inline LinearModel fit_model(const std::vector<std::vector<std::string>>& docs, const std::vector<Label>& labels,
                             const FeatureConfig& fc, const FitOptions& fo) {
  LinearModel m;
  m.feature_config = fc;
  m.vocabulary = fit_vocabulary(docs, fc);
  std::vector<SparseVector> rows;
  std::vector<int> y;
  rows.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    rows.push_back(featurize_tokens(docs[i], fc, m.vocabulary));
    y.push_back(labels[i] == Label::S ? 1 : 0);
  }
  auto fit = fit_logistic(rows, y, feature_dimension(m.vocabulary, fc), fo);
  m.weights = std::move(fit.weights);
  m.bias = fit.bias;
  m.l2 = fo.l2;
  return m;
}

}  // namespace detail

/// Grid search over (n-gram range × L2 penalty) by mean k-fold F1 on class S,
/// then refit on all data. Ties keep the earliest grid cell.
inline TrainResult train(const std::vector<TrainingExample>& data, const GridSearchSpec& spec,
                         FeatureConfig base = {}) {
  spec.validate();
  base.validate();
  std::vector<Label> labels;
  std::vector<std::vector<std::string>> docs;
  for (const auto& ex : data) {
    labels.push_back(ex.label);
    docs.push_back(normalize(ex.text).tokens);
  }
  const bool has_s = std::count(labels.begin(), labels.end(), Label::S) > 0;
  const bool has_nr = std::count(labels.begin(), labels.end(), Label::NR) > 0;
  if (!has_s || !has_nr) throw DataError("training data must contain both S and NR examples");
  if (data.size() < static_cast<std::size_t>(spec.folds)) throw DataError("fewer training samples than folds");

  const auto fold_of = stratified_folds(labels, spec.folds, spec.seed);
  TrainResult result;
  for (auto [nmin, nmax] : spec.ngram_ranges) {
    FeatureConfig fc = base;
    fc.ngram_min = nmin;
    fc.ngram_max = nmax;
    for (double l2 : spec.l2_penalties) {
      CVRow row{l2, nmin, nmax, {}, 0.0, 0.0};
      for (int f = 0; f < spec.folds; ++f) {
        std::vector<std::vector<std::string>> tr_docs;
        std::vector<Label> tr_labels;
        for (std::size_t i = 0; i < data.size(); ++i) {
          if (fold_of[i] == f) continue;
          tr_docs.push_back(docs[i]);
          tr_labels.push_back(labels[i]);
        }
        const auto model = detail::fit_model(tr_docs, tr_labels, fc, {l2, spec.max_iter, spec.tol});
        PRF prf;
        for (std::size_t i = 0; i < data.size(); ++i) {
          if (fold_of[i] != f) continue;
          const double score = sigmoid(dot(featurize_tokens(docs[i], fc, model.vocabulary), model.weights) + model.bias);
          const bool pred_s = score >= 0.5;
          const bool gold_s = labels[i] == Label::S;
          if (pred_s && gold_s) ++prf.tp;
          if (pred_s && !gold_s) ++prf.fp;
          if (!pred_s && gold_s) ++prf.fn;
        }
        row.fold_f1.push_back(prf.f1());
      }
      const double k = static_cast<double>(row.fold_f1.size());
      row.mean_f1 = std::accumulate(row.fold_f1.begin(), row.fold_f1.end(), 0.0) / k;
      double var = 0.0;
      for (double v : row.fold_f1) var += (v - row.mean_f1) * (v - row.mean_f1);
      row.std_f1 = std::sqrt(var / k);
      result.cv.rows.push_back(std::move(row));
    }
  }
  for (std::size_t i = 1; i < result.cv.rows.size(); ++i)
    if (result.cv.rows[i].mean_f1 > result.cv.rows[result.cv.best].mean_f1) result.cv.best = i;

  const auto& best = result.cv.rows[result.cv.best];
  FeatureConfig fc = base;
  fc.ngram_min = best.ngram_min;
  fc.ngram_max = best.ngram_max;
  result.model = detail::fit_model(docs, labels, fc, {best.l2, spec.max_iter, spec.tol});
  return result;
}

// --- Evaluation ------------------------------------------------------------

struct ClassificationMetrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  double accuracy() const { return total() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total()); }
  PRF prf() const { return {tp, fp, fn}; }
  double precision() const { return prf().precision(); }
  double recall() const { return prf().recall(); }
  double f1() const { return prf().f1(); }
};

/// Metrics for class S. Both lists must cover the same post ids exactly.
inline ClassificationMetrics evaluate(const std::vector<LabeledPost>& predictions, const std::vector<LabeledPost>& gold) {
  std::map<std::string, Label> truth;
  for (const auto& g : gold)
    if (!truth.emplace(g.post_id, g.label).second) throw DataError("gold: duplicate post_id '" + g.post_id + "'");
  if (predictions.size() != truth.size()) throw DataError("predictions and gold cover different post ids");
  ClassificationMetrics m;
  std::set<std::string> seen;
  for (const auto& p : predictions) {
    auto it = truth.find(p.post_id);
    if (it == truth.end()) throw DataError("prediction for unknown post_id '" + p.post_id + "'");
    if (!seen.insert(p.post_id).second) throw DataError("predictions: duplicate post_id '" + p.post_id + "'");
    const bool ps = p.label == Label::S, gs = it->second == Label::S;
    if (ps && gs) ++m.tp;
    else if (ps) ++m.fp;
    else if (gs) ++m.fn;
    else ++m.tn;
  }
  return m;
}

// --- External labels -------------------------------------------------------

struct LabelImport {
  std::map<std::string, LabeledPost> labels;  // by post_id
  std::size_t lines = 0;
  std::size_t rejected = 0;
  std::size_t duplicates = 0;
  std::vector<std::string> unknown_post_ids;
  std::vector<std::pair<std::size_t, std::string>> errors;  // (line, reason)
};

/// Line-delimited {post_id, label, score?}. Duplicate ids: last write wins.
inline LabelImport import_external_labels(std::istream& in, const std::set<std::string>* known_ids = nullptr) {
  LabelImport out;
  std::string line;
  auto reject = [&](std::string why) {
    ++out.rejected;
    if (out.errors.size() < 100) out.errors.emplace_back(out.lines, std::move(why));
  };
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++out.lines;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      reject("invalid json");
      continue;
    }
    if (!j.is_object() || !j.contains("post_id") || !j["post_id"].is_string() || !j.contains("label") ||
        !j["label"].is_string()) {
      reject("missing post_id or label");
      continue;
    }
    auto label = parse_label(j["label"].get<std::string>());
    if (!label) {
      reject("label outside {S, NR}");
      continue;
    }
    LabeledPost lp{j["post_id"].get<std::string>(), *label, std::nullopt};
    if (j.contains("score")) {
      if (!j["score"].is_number()) {
        reject("score is not a number");
        continue;
      }
      lp.score = j["score"].get<double>();
    }
    auto [it, inserted] = out.labels.insert_or_assign(lp.post_id, lp);
    if (!inserted) ++out.duplicates;
  }
  if (known_ids) {
    for (const auto& [id, lp] : out.labels)
      if (!known_ids->count(id)) out.unknown_post_ids.push_back(id);
  }
  return out;
}

inline LabelImport import_external_labels(const std::string& path, const std::set<std::string>* known_ids = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read labels file '" + path + "'");
  return import_external_labels(in, known_ids);
}

}  // namespace sidefx
