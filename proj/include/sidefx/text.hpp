#pragma once

// Text normalization shared by the matcher, the lexicon and the classifier.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sidefx {

// Reserved separator placed between posts when a user's timeline is collapsed.
// It is a control character, so it never survives normalization as a token;
// it only marks a boundary on the preceding token.
inline constexpr char kPostBoundary = '\x1E';
inline constexpr std::string_view kPostBoundaryJoin = " \x1E ";

struct TokenSequence {
  std::vector<std::string> tokens;
  // boundary_flags[i] is true when tokens[i] ends a sentence or a post.
  std::vector<bool> boundary_flags;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

namespace detail {

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_ascii_alnum(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

// Word bytes: ASCII letters and digits plus any byte of a multi-byte UTF-8
// sequence, so non-Latin scripts pass through untouched.
inline bool is_word_byte(unsigned char c) { return is_ascii_alnum(c) || c >= 0x80; }

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace detail

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && detail::is_ascii_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && detail::is_ascii_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Replace the typographic apostrophe (U+2019) with ASCII so "didn’t" and
// "didn't" normalize the same way.
inline std::string fold_apostrophes(std::string_view s) {
  static constexpr std::string_view kRightQuote = "\xE2\x80\x99";
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (s.compare(i, kRightQuote.size(), kRightQuote) == 0) {
      out.push_back('\'');
      i += kRightQuote.size();
    } else {
      out.push_back(s[i++]);
    }
  }
  return out;
}

/// Tokenize social-media text for matching.
///
/// Case-folds, drops URLs and @-mentions, turns "#word" into "word", records
/// sentence ends (. ! ?) and post separators as boundary flags on the last
/// kept token, and strips other punctuation. Hyphens and apostrophes survive
/// only between word characters; a '.' between digits is kept ("2.5").
inline TokenSequence normalize(std::string_view text) {
  using namespace detail;
  TokenSequence out;
  auto mark_boundary = [&] {
    if (!out.boundary_flags.empty()) out.boundary_flags.back() = true;
  };

  const std::string folded = ascii_lower(fold_apostrophes(text));
  std::string_view rest = folded;

  while (!rest.empty()) {
    std::size_t b = 0;
    while (b < rest.size() && is_ascii_space(static_cast<unsigned char>(rest[b]))) ++b;
    std::size_t e = b;
    while (e < rest.size() && !is_ascii_space(static_cast<unsigned char>(rest[e]))) ++e;
    const std::string_view raw = rest.substr(b, e - b);
    rest.remove_prefix(e);
    if (raw.empty()) continue;

    if (starts_with(raw, "http://") || starts_with(raw, "https://") || starts_with(raw, "www.")) {
      if (raw.find(kPostBoundary) != std::string_view::npos) mark_boundary();
      continue;
    }
    if (raw.front() == '@') {
      if (raw.find(kPostBoundary) != std::string_view::npos) mark_boundary();
      continue;
    }

    std::string word;
    auto flush = [&] {
      if (!word.empty()) {
        out.tokens.push_back(std::move(word));
        out.boundary_flags.push_back(false);
        word.clear();
      }
    };
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto c = static_cast<unsigned char>(raw[i]);
      const bool next_is_word = i + 1 < raw.size() && is_word_byte(static_cast<unsigned char>(raw[i + 1]));
      if (is_word_byte(c)) {
        word.push_back(static_cast<char>(c));
      } else if ((c == '-' || c == '\'') && !word.empty() && next_is_word) {
        word.push_back(static_cast<char>(c));
      } else if (c == '.' && !word.empty() && is_digit(static_cast<unsigned char>(word.back())) &&
                 i + 1 < raw.size() && is_digit(static_cast<unsigned char>(raw[i + 1]))) {
        word.push_back('.');
      } else if (c == '.' || c == '!' || c == '?' || c == static_cast<unsigned char>(kPostBoundary)) {
        flush();
        mark_boundary();
      } else {
        flush();
      }
    }
    flush();
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

// Canonical form of a lexicon term or keyword: its normalized tokens joined
// by single spaces. Idempotent.
inline std::string normalize_term(std::string_view term) {
  return join(normalize(term).tokens, " ");
}

/// Decode UTF-8 into code points; invalid sequences become U+FFFD.
inline std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (int k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (cc & 0x3F);
      }
    }
    if (!ok) {
      out.push_back(U'\uFFFD');
      ++i;
    } else {
      out.push_back(cp);
      i += len;
    }
  }
  return out;
}

}  // namespace sidefx
