#pragma once

// Medication-pattern signatures, prevalence tables, and the
// Kruskal-Wallis -> Benjamini-Hochberg -> Dunn association pipeline.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sidefx/error.hpp"
#include "sidefx/lexicon.hpp"
#include "sidefx/matcher.hpp"
#include "sidefx/parallel.hpp"
#include "sidefx/random.hpp"

namespace sidefx {

// --- Distributions ---------------------------------------------------------

/// Regularized upper incomplete gamma Q(a, x): power series for x < a + 1,
/// Lentz continued fraction otherwise.
inline double regularized_gamma_q(double a, double x) {
  if (a <= 0) throw DataError("regularized_gamma_q: a must be positive");
  if (x <= 0) return 1.0;
  constexpr double eps = 1e-16;
  constexpr int max_iter = 10000;
  const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < max_iter; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * eps) break;
    }
    return std::clamp(1.0 - sum * std::exp(log_prefix), 0.0, 1.0);
  }
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < max_iter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::clamp(std::exp(log_prefix) * h, 0.0, 1.0);
}

inline double chi_square_sf(double x, int df) {
  if (df < 1) throw DataError("chi_square_sf: df must be >= 1");
  if (!(x >= 0)) throw DataError("chi_square_sf: x must be >= 0");
  return regularized_gamma_q(0.5 * df, 0.5 * x);
}

// Upper tail of the standard normal.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// --- Ranking ---------------------------------------------------------------

struct PooledRanks {
  std::vector<std::vector<double>> ranks;  // per group, same shape as input
  double tie_sum = 0.0;                    // Σ (t³ − t) over tie blocks
  std::size_t n = 0;
};

inline PooledRanks pooled_mid_ranks(const std::vector<std::vector<double>>& groups) {
  std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> pooled;
  PooledRanks out;
  out.ranks.resize(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.ranks[g].resize(groups[g].size());
    for (std::size_t i = 0; i < groups[g].size(); ++i) pooled.push_back({groups[g][i], {g, i}});
  }
  std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  out.n = pooled.size();
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) out.ranks[pooled[k].second.first][pooled[k].second.second] = mid;
    const double t = static_cast<double>(j - i);
    out.tie_sum += t * t * t - t;
    i = j;
  }
  return out;
}

// --- Kruskal-Wallis --------------------------------------------------------

struct KruskalWallis {
  double H = 0.0;
  double p = 1.0;
  int df = 0;
};

namespace detail {

inline double kw_statistic(const PooledRanks& r) {
  const double n = static_cast<double>(r.n);
  const double correction = 1.0 - r.tie_sum / (n * n * n - n);
  if (correction <= 0.0) return 0.0;
  double s = 0.0;
  for (const auto& g : r.ranks) {
    if (g.empty()) continue;
    const double sum = std::accumulate(g.begin(), g.end(), 0.0);
    s += sum * sum / static_cast<double>(g.size());
  }
  const double h = (12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction;
  return std::max(0.0, h);
}

inline void check_groups(const std::vector<std::vector<double>>& groups, const char* what) {
  const auto nonempty = std::count_if(groups.begin(), groups.end(), [](const auto& g) { return !g.empty(); });
  if (nonempty < 2) throw DataError(std::string(what) + ": need at least 2 nonempty groups");
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  if (n < 3) throw DataError(std::string(what) + ": need at least 3 observations");
}

}  // namespace detail

/// H with tie correction, p from the chi-square tail on k − 1 degrees of
/// freedom (k = nonempty groups). All-tied data gives H = 0, p = 1.
inline KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  detail::check_groups(groups, "kruskal_wallis");
  const auto ranks = pooled_mid_ranks(groups);
  KruskalWallis out;
  out.df = static_cast<int>(std::count_if(groups.begin(), groups.end(), [](const auto& g) { return !g.empty(); })) - 1;
  out.H = detail::kw_statistic(ranks);
  out.p = out.H > 0.0 ? chi_square_sf(out.H, out.df) : 1.0;
  return out;
}

/// Monte-Carlo permutation p-value for H: (1 + #{H* >= H}) / (1 + permutations).
inline double kruskal_wallis_permutation_p(const std::vector<std::vector<double>>& groups, int permutations,
                                           std::uint64_t seed) {
  detail::check_groups(groups, "kruskal_wallis_permutation_p");
  const double observed = detail::kw_statistic(pooled_mid_ranks(groups));
  std::vector<double> pooled;
  for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
  Rng rng(seed);
  int at_least = 0;
  std::vector<std::vector<double>> shuffled(groups.size());
  for (int k = 0; k < permutations; ++k) {
    seeded_shuffle(pooled, rng);
    std::size_t pos = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      shuffled[g].assign(pooled.begin() + static_cast<std::ptrdiff_t>(pos),
                         pooled.begin() + static_cast<std::ptrdiff_t>(pos + groups[g].size()));
      pos += groups[g].size();
    }
    if (detail::kw_statistic(pooled_mid_ranks(shuffled)) >= observed - 1e-12) ++at_least;
  }
  return (1.0 + at_least) / (1.0 + permutations);
}

// --- Benjamini-Hochberg ----------------------------------------------------

/// Step-up FDR adjustment; output in input order.
inline std::vector<double> benjamini_hochberg(const std::vector<double>& p) {
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("benjamini_hochberg: p-value outside [0, 1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adjusted(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    const double v = static_cast<double>(m) * p[order[k]] / static_cast<double>(k + 1);
    running = std::min(running, v);
    // running >= p in exact arithmetic; the max absorbs m * p / m rounding.
    adjusted[order[k]] = std::min(1.0, std::max(running, p[order[k]]));
  }
  return adjusted;
}

// --- Dunn ------------------------------------------------------------------

struct DunnComparison {
  std::size_t group_a = 0;
  std::size_t group_b = 0;
  double z = 0.0;  // (mean rank a − mean rank b) / se
  double p = 1.0;  // two-sided
  double p_adjusted = 1.0;
};

/// All pairs a < b with tie-corrected standard errors, BH-adjusted within
/// the family of pairs.
inline std::vector<DunnComparison> dunn_test(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw DataError("dunn_test: need at least 2 groups");
  for (const auto& g : groups)
    if (g.empty()) throw DataError("dunn_test: empty group");
  const auto r = pooled_mid_ranks(groups);
  const double n = static_cast<double>(r.n);
  const double base_var = n * (n + 1.0) / 12.0 - r.tie_sum / (12.0 * (n - 1.0));
  std::vector<double> mean_rank;
  for (const auto& g : r.ranks) mean_rank.push_back(std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size()));

  std::vector<DunnComparison> out;
  for (std::size_t a = 0; a < groups.size(); ++a) {
    for (std::size_t b = a + 1; b < groups.size(); ++b) {
      DunnComparison c{a, b, 0.0, 1.0, 1.0};
      if (base_var > 0.0) {
        const double se = std::sqrt(base_var * (1.0 / groups[a].size() + 1.0 / groups[b].size()));
        c.z = (mean_rank[a] - mean_rank[b]) / se;
        c.p = std::min(1.0, 2.0 * normal_sf(std::abs(c.z)));
      }
      out.push_back(c);
    }
  }
  std::vector<double> raw;
  for (const auto& c : out) raw.push_back(c.p);
  const auto adj = benjamini_hochberg(raw);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].p_adjusted = adj[i];
  return out;
}

// --- Signatures and prevalence --------------------------------------------

struct StatsConfig {
  double alpha = 0.05;
  int min_group_size = 1;
  bool exclude_negated = true;
  int permutations = 0;  // > 0 replaces the chi-square p with a permutation p
  std::uint64_t seed = 1;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("stats: alpha must be in (0, 1)");
    if (min_group_size < 1) throw ConfigError("stats: min_group_size must be >= 1");
    if (permutations < 0) throw ConfigError("stats: permutations must be >= 0");
  }
};

using Pattern = std::vector<FunctionalClass>;  // sorted, distinct

inline std::string pattern_label(const Pattern& p) {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) out.push_back('+');
    out.append(to_string(p[i]));
  }
  return out;
}

struct UserSignature {
  std::string user_id;
  std::set<std::string> medications;
  std::set<std::string> side_effects;
  Pattern pattern;

  std::string pattern_label() const { return sidefx::pattern_label(pattern); }
};

/// Unique non-negated medications and side effects per user. Users without
/// a named medication are dropped.
inline std::vector<UserSignature> build_signatures(const ProfileMatches& matches, const LexiconVersion& lexicon,
                                                   const StatsConfig& cfg) {
  std::vector<UserSignature> out;
  for (const auto& [user, records] : matches) {
    UserSignature sig{user, {}, {}, {}};
    std::set<FunctionalClass> classes;
    for (const auto& m : records) {
      const LexiconEntry* e = lexicon.find(m.entry_id);
      if (!e) throw DataError("entry '" + m.entry_id + "' not in lexicon v" + std::to_string(lexicon.version));
      if (m.negated && cfg.exclude_negated) continue;
      if (e->category == Category::medication) {
        sig.medications.insert(e->entry_id);
        classes.insert(*e->functional_class);
      } else {
        sig.side_effects.insert(e->entry_id);
      }
    }
    if (sig.medications.empty()) continue;
    sig.pattern.assign(classes.begin(), classes.end());
    out.push_back(std::move(sig));
  }
  return out;
}

inline std::string format_percent(std::size_t count, std::size_t total) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", total ? 100.0 * static_cast<double>(count) / static_cast<double>(total) : 0.0);
  return buf;
}

// "109 (55.1%)" for medications and patterns, "34 [17.2%]" for side effects.
inline std::string format_count_paren(std::size_t count, std::size_t total) {
  return std::to_string(count) + " (" + format_percent(count, total) + "%)";
}

inline std::string format_count_bracket(std::size_t count, std::size_t total) {
  return std::to_string(count) + " [" + format_percent(count, total) + "%]";
}

struct CountRow {
  std::string key;
  std::string label;
  std::size_t count = 0;
  double proportion = 0.0;
  std::string display;
};

struct PrevalenceTable {
  std::size_t cohort_size = 0;  // users with at least one named medication
  std::vector<CountRow> medications;
  std::vector<CountRow> side_effects;
  std::vector<CountRow> patterns;
};

/// Per-user counts, sorted by count descending then key. Proportions are
/// over the medication cohort.
inline PrevalenceTable prevalence_table(const std::vector<UserSignature>& sigs, const LexiconVersion* lexicon = nullptr) {
  if (sigs.empty()) throw DataError("prevalence_table: no users with a named medication");
  PrevalenceTable t;
  t.cohort_size = sigs.size();
  std::map<std::string, std::size_t> meds, effects, patterns;
  for (const auto& s : sigs) {
    for (const auto& m : s.medications) ++meds[m];
    for (const auto& e : s.side_effects) ++effects[e];
    ++patterns[s.pattern_label()];
  }
  auto rows = [&](const std::map<std::string, std::size_t>& counts, bool bracket) {
    std::vector<CountRow> out;
    for (const auto& [key, n] : counts) {
      std::string label = key;
      if (lexicon)
        if (const auto* e = lexicon->find(key)) label = e->canonical;
      out.push_back({key, label, n, static_cast<double>(n) / static_cast<double>(t.cohort_size),
                     bracket ? format_count_bracket(n, t.cohort_size) : format_count_paren(n, t.cohort_size)});
    }
    std::stable_sort(out.begin(), out.end(), [](const CountRow& a, const CountRow& b) { return a.count > b.count; });
    return out;
  };
  t.medications = rows(meds, false);
  t.side_effects = rows(effects, true);
  t.patterns = rows(patterns, false);
  return t;
}

// --- Association report ----------------------------------------------------

struct PairwiseResult {
  std::string pattern_a;
  std::string pattern_b;
  double z = 0.0;
  double p = 1.0;
  double p_adjusted = 1.0;
};

struct AssociationResult {
  std::string side_effect;
  std::map<std::string, std::vector<int>> groups;  // pattern label -> presence per user
  bool tested = false;
  double H = 0.0;
  double p = 1.0;
  double p_adjusted = 1.0;
  bool significant = false;
  std::vector<PairwiseResult> pairwise;
};

struct Heatmap {
  std::vector<std::string> rows;     // significant side effects
  std::vector<std::string> columns;  // patterns
  std::vector<std::vector<double>> prevalence;
};

struct AssociationReport {
  std::vector<std::string> patterns;  // analysis order
  std::map<std::string, std::size_t> pattern_sizes;
  std::vector<AssociationResult> results;  // one per requested side effect, input order
  std::optional<std::string> skip_reason;  // set when no test could be run
  Heatmap heatmap;
};

/// Test each side effect's per-user presence across medication patterns.
/// Kruskal-Wallis p-values are BH-adjusted across side effects; significant
/// ones get Dunn pairwise comparisons adjusted within that side effect.
inline AssociationReport association_report(const std::vector<UserSignature>& sigs,
                                            const std::vector<std::string>& side_effects, const StatsConfig& cfg) {
  cfg.validate();
  AssociationReport rep;

  std::map<Pattern, std::vector<const UserSignature*>> by_pattern;
  for (const auto& s : sigs) by_pattern[s.pattern].push_back(&s);
  std::vector<std::pair<std::string, std::vector<const UserSignature*>>> groups;
  for (auto& [pat, users] : by_pattern) {
    if (users.size() < static_cast<std::size_t>(cfg.min_group_size)) continue;
    rep.patterns.push_back(pattern_label(pat));
    rep.pattern_sizes[pattern_label(pat)] = users.size();
    groups.emplace_back(pattern_label(pat), std::move(users));
  }
  std::size_t total = 0;
  for (const auto& g : groups) total += g.second.size();
  if (groups.size() < 2) rep.skip_reason = "single_pattern";
  else if (total < 3) rep.skip_reason = "too_few_users";

  rep.results.resize(side_effects.size());
  parallel_for(side_effects.size(), [&](std::size_t k) {
    AssociationResult& r = rep.results[k];
    r.side_effect = side_effects[k];
    std::vector<std::vector<double>> samples;
    for (const auto& [label, users] : groups) {
      auto& presence = r.groups[label];
      std::vector<double> sample;
      for (const auto* u : users) {
        const int has = u->side_effects.count(side_effects[k]) ? 1 : 0;
        presence.push_back(has);
        sample.push_back(has);
      }
      samples.push_back(std::move(sample));
    }
    if (rep.skip_reason) return;
    const auto kw = kruskal_wallis(samples);
    r.tested = true;
    r.H = kw.H;
    r.p = kw.p;
    if (cfg.permutations > 0 && kw.H > 0.0)
      r.p = kruskal_wallis_permutation_p(samples, cfg.permutations, cfg.seed + k);
  });
  if (rep.skip_reason) return rep;

  std::vector<double> raw;
  for (const auto& r : rep.results) raw.push_back(r.p);
  const auto adj = benjamini_hochberg(raw);
  for (std::size_t k = 0; k < rep.results.size(); ++k) {
    auto& r = rep.results[k];
    r.p_adjusted = std::max(adj[k], r.p);
    r.significant = r.p_adjusted < cfg.alpha;
    if (!r.significant) continue;
    std::vector<std::vector<double>> samples;
    for (const auto& label : rep.patterns) {
      const auto& pres = r.groups.at(label);
      samples.emplace_back(pres.begin(), pres.end());
    }
    for (const auto& d : dunn_test(samples))
      r.pairwise.push_back({rep.patterns[d.group_a], rep.patterns[d.group_b], d.z, d.p, d.p_adjusted});

    rep.heatmap.rows.push_back(r.side_effect);
    std::vector<double> row;
    for (const auto& label : rep.patterns) {
      const auto& pres = r.groups.at(label);
      row.push_back(static_cast<double>(std::accumulate(pres.begin(), pres.end(), 0)) / static_cast<double>(pres.size()));
    }
    rep.heatmap.prevalence.push_back(std::move(row));
  }
  rep.heatmap.columns = rep.patterns;
  return rep;
}

}  // namespace sidefx
