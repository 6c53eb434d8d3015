#pragma once

// Deterministic synthetic social-media corpus used for demos, fixtures and
// the end-to-end tests. Vocabulary mirrors data/lexicon_seed.json.

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "sidefx/classifier.hpp"
#include "sidefx/corpus.hpp"
#include "sidefx/random.hpp"

namespace sidefx {

struct SyntheticCorpus {
  std::vector<Post> posts;
  std::vector<LabeledPost> labels;        // one per post
  std::vector<TrainingExample> training;  // disjoint texts for train mode
};

namespace detail {

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[static_cast<std::size_t>(uniform_index(rng, v.size()))];
}

// One substitution somewhere past the first two letters.
inline std::string misspell(std::string word, Rng& rng) {
  if (word.size() < 7) return word;
  const auto pos = 2 + static_cast<std::size_t>(uniform_index(rng, word.size() - 3));
  word[pos] = word[pos] == 'e' ? 'i' : 'e';
  return word;
}

}  // namespace detail

inline SyntheticCorpus make_synthetic_corpus(std::size_t n_posts = 500, std::uint64_t seed = 2024) {
  using detail::pick;
  Rng rng(seed);
  const std::vector<std::vector<std::string>> med_regimens = {
      {"tamoxifen"}, {"tamoxifen"}, {"tamoxifen"}, {"letrozole"}, {"anastrozole"}, {"exemestane"},
      {"paclitaxel"}, {"docetaxel"}, {"tamoxifen", "paclitaxel"}, {"letrozole", "palbociclib"},
      {"anastrozole", "doxorubicin"}, {"pembrolizumab"}, {"letrozole", "ribociclib"}};
  const std::vector<std::string> effects = {
      "hot flashes", "joint pain", "nausea",   "hair loss",   "fatigue",      "anxiety",   "insomnia",
      "neuropathy",  "fever",      "headache", "mood swings", "worst feeling", "brain fog", "body aches"};
  const std::vector<std::string> disclosures = {
      "I was diagnosed with breast cancer in march",
      "my mom is a breast cancer survivor and my hero",
      "one year cancer free today #breastcancer survivor",
      "finished my last radiation for breast cancer",
      "my sister just started treatment for breast cancer",
  };
  const std::vector<std::string> awareness = {
      "October is #breastcancer awareness month, get screened http://t.co/abc",
      "donate to cancer research today @charity",
      "great article on cancer survivor stories https://example.org/story",
      "pink ribbons everywhere for #BreastCancer month",
      "new study on tamoxifen published http://t.co/xyz",
      "wear pink friday for cancer awareness!",
  };
  const std::vector<std::string> chatter = {"lovely weather today", "coffee first", "watching the game tonight"};

  SyntheticCorpus out;
  const auto base = std::chrono::sys_days{std::chrono::year{2023} / std::chrono::October / 1};
  std::size_t user_no = 0, post_no = 0;

  auto emit = [&](const std::string& user, std::string text, Label label) {
    const auto minutes = static_cast<int>(uniform_index(rng, 30 * 24 * 60));
    Post p;
    p.id = "p" + std::to_string(100000 + post_no++);
    p.user_id = user;
    p.timestamp = std::chrono::time_point_cast<std::chrono::milliseconds>(base + std::chrono::minutes{minutes});
    p.text = std::move(text);
    out.labels.push_back({p.id, label, std::nullopt});
    out.posts.push_back(std::move(p));
  };

  while (out.posts.size() < n_posts) {
    const std::string user = "u" + std::to_string(1000 + user_no++);
    const bool patient = uniform_index(rng, 100) < 65;
    const auto n = std::min<std::size_t>(2 + uniform_index(rng, 5), n_posts - out.posts.size());
    if (!patient) {
      for (std::size_t i = 0; i < n; ++i)
        emit(user, uniform_index(rng, 4) == 0 ? pick(chatter, rng) : pick(awareness, rng), Label::NR);
      continue;
    }
    const auto& regimen = pick(med_regimens, rng);
    const bool named = uniform_index(rng, 100) < 80;
    for (std::size_t i = 0; i < n; ++i) {
      const auto roll = uniform_index(rng, 100);
      const std::string& med = pick(regimen, rng);
      const std::string med_text = uniform_index(rng, 10) == 0 ? detail::misspell(med, rng) : med;
      const std::string& fx = pick(effects, rng);
      if (i == 0 || roll < 15) {
        emit(user, pick(disclosures, rng), Label::S);
      } else if (!named) {
        emit(user, "these cancer meds are making me feel " + std::string(roll % 2 ? "weird" : "off") + " #breastcancer",
             Label::S);
      } else if (roll < 45) {
        emit(user, "Day " + std::to_string(roll) + " on " + med_text + " and the " + fx + " is real. #breastcancer", Label::S);
      } else if (roll < 60) {
        emit(user, "No " + fx + " so far on " + med_text + ", fingers crossed! #cancer", Label::S);
      } else if (roll < 75) {
        emit(user, "Started " + med_text + " this week for my cancer. " + fx + " already @oncdoc", Label::S);
      } else if (roll < 85) {
        emit(user, "cancer survivor life: " + fx + " and " + pick(effects, rng) + " again today", Label::S);
      } else {
        emit(user, pick(chatter, rng), Label::NR);
      }
    }
  }

  Rng train_rng(seed ^ 0x9E3779B97F4A7C15ULL);
  for (int i = 0; i < 120; ++i) {
    const bool s = i % 2 == 0;
    std::string text = s ? pick(disclosures, train_rng) : pick(awareness, train_rng);
    text += " " + std::to_string(i);
    out.training.push_back({std::move(text), s ? Label::S : Label::NR});
  }
  return out;
}

}  // namespace sidefx
