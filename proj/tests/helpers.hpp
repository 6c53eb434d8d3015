#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sidefx/sidefx.hpp"

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("sidefx_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& content) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline sidefx::LexiconEntry med(const std::string& canonical, sidefx::FunctionalClass fc,
                                std::vector<std::string> synonyms = {}) {
  sidefx::LexiconEntry e;
  e.entry_id = "med_" + canonical;
  e.canonical = canonical;
  e.synonyms = std::move(synonyms);
  e.category = sidefx::Category::medication;
  e.functional_class = fc;
  return sidefx::normalize_entry(e);
}

inline sidefx::LexiconEntry effect(const std::string& id, const std::string& canonical,
                                   std::vector<std::string> synonyms = {}) {
  sidefx::LexiconEntry e;
  e.entry_id = id;
  e.canonical = canonical;
  e.synonyms = std::move(synonyms);
  e.category = sidefx::Category::side_effect;
  e.provenance = {sidefx::Provenance::Source::nci_side_effects, 0};
  return sidefx::normalize_entry(e);
}

inline sidefx::LexiconVersion lexicon_of(std::vector<sidefx::LexiconEntry> entries, int version = 1) {
  sidefx::LexiconVersion v;
  v.version = version;
  v.entries = std::move(entries);
  std::sort(v.entries.begin(), v.entries.end(),
            [](const auto& a, const auto& b) { return a.entry_id < b.entry_id; });
  return v;
}

inline std::string data_path(const std::string& name) { return std::string(SIDEFX_DATA_DIR) + "/" + name; }

}  // namespace testing_support
