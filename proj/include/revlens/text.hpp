#pragma once

// UTF-8 helpers shared by the corpus, scorer and embedder.
//
// Case mapping covers ASCII, Latin-1, Latin Extended-A, basic Greek and basic
// Cyrillic; every other code point is treated as uncased. Whitespace follows
// the set Python's str.split() uses, so token boundaries agree with the
// reference lexicon scorer.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace revlens::text {

struct Decoded {
  char32_t cp;
  std::size_t len;
};

// Invalid sequences decode as U+FFFD consuming one byte.
inline Decoded decode_one(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto byte = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    char32_t cp = (static_cast<char32_t>(b0 & 0x1F) << 6) | byte(1);
    if (cp >= 0x80) return {cp, 2};
  } else if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    char32_t cp = (static_cast<char32_t>(b0 & 0x0F) << 12) | (byte(1) << 6) | byte(2);
    if (cp >= 0x800 && (cp < 0xD800 || cp > 0xDFFF)) return {cp, 3};
  } else if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    char32_t cp = (static_cast<char32_t>(b0 & 0x07) << 18) | (byte(1) << 12) | (byte(2) << 6) | byte(3);
    if (cp >= 0x10000 && cp <= 0x10FFFF) return {cp, 4};
  }
  return {0xFFFD, 1};
}

inline std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    auto d = decode_one(s, i);
    out.push_back(d.cp);
    i += d.len;
  }
  return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) append_utf8(out, cp);
  return out;
}

inline std::size_t codepoint_count(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++n) i += decode_one(s, i).len;
  return n;
}

inline bool is_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
    case 0x1C: case 0x1D: case 0x1E: case 0x1F: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

inline bool is_ascii_punct(char32_t cp) {
  return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
         (cp >= 0x7B && cp <= 0x7E);
}

enum class Case { none, lower, upper };

inline Case case_of(char32_t cp) {
  if (cp < 0x80) {
    if (cp >= 'a' && cp <= 'z') return Case::lower;
    if (cp >= 'A' && cp <= 'Z') return Case::upper;
    return Case::none;
  }
  if (cp == 0xAA || cp == 0xB5 || cp == 0xBA) return Case::lower;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return Case::upper;
  if (cp >= 0xDF && cp <= 0xFF && cp != 0xF7) return Case::lower;
  if (cp >= 0x100 && cp <= 0x17F) {
    if (cp == 0x130 || cp == 0x178) return Case::upper;
    if (cp == 0x131 || cp == 0x138 || cp == 0x149 || cp == 0x17F) return Case::lower;
    bool odd_upper = (cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E);
    return ((cp % 2 == 1) == odd_upper) ? Case::upper : Case::lower;
  }
  if (cp == 0x386 || (cp >= 0x388 && cp <= 0x38F && cp != 0x38B && cp != 0x38D)) return Case::upper;
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return Case::upper;
  if (cp >= 0x3AC && cp <= 0x3CE) return Case::lower;
  if (cp >= 0x400 && cp <= 0x42F) return Case::upper;
  if (cp >= 0x430 && cp <= 0x45F) return Case::lower;
  return Case::none;
}

inline void append_lower(std::u32string& out, char32_t cp) {
  if (case_of(cp) != Case::upper) {
    out.push_back(cp);
    return;
  }
  if (cp < 0x80 || (cp >= 0xC0 && cp <= 0xDE) || (cp >= 0x391 && cp <= 0x3AB) || (cp >= 0x410 && cp <= 0x42F)) {
    out.push_back(cp + 0x20);
  } else if (cp == 0x130) {
    out.push_back(U'i');
    out.push_back(0x307);
  } else if (cp == 0x178) {
    out.push_back(0xFF);
  } else if (cp >= 0x100 && cp <= 0x17F) {
    out.push_back(cp + 1);
  } else if (cp == 0x386) {
    out.push_back(0x3AC);
  } else if (cp >= 0x388 && cp <= 0x38A) {
    out.push_back(cp + 0x25);
  } else if (cp == 0x38C) {
    out.push_back(0x3CC);
  } else if (cp == 0x38E || cp == 0x38F) {
    out.push_back(cp + 0x3F);
  } else if (cp >= 0x400 && cp <= 0x40F) {
    out.push_back(cp + 0x50);
  } else {
    out.push_back(cp);
  }
}

inline std::string to_lower(std::string_view s) {
  bool ascii = std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; });
  if (ascii) {
    std::string out(s);
    for (char& c : out)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
  }
  std::u32string out;
  for (char32_t cp : decode(s)) append_lower(out, cp);
  return encode(out);
}

// Python str.isupper(): at least one cased character and none lowercase.
inline bool is_upper(std::string_view s) {
  bool any_cased = false;
  for (std::size_t i = 0; i < s.size();) {
    auto d = decode_one(s, i);
    i += d.len;
    switch (case_of(d.cp)) {
      case Case::lower: return false;
      case Case::upper: any_cased = true; break;
      case Case::none: break;
    }
  }
  return any_cased;
}

// Python str.split() with no separator.
inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = std::string_view::npos;
  for (std::size_t i = 0; i < s.size();) {
    auto d = decode_one(s, i);
    if (is_space(d.cp)) {
      if (start != std::string_view::npos) {
        out.emplace_back(s.substr(start, i - start));
        start = std::string_view::npos;
      }
    } else if (start == std::string_view::npos) {
      start = i;
    }
    i += d.len;
  }
  if (start != std::string_view::npos) out.emplace_back(s.substr(start));
  return out;
}

inline std::string strip(std::string_view s) {
  std::size_t begin = s.size();
  std::size_t end = 0;
  for (std::size_t i = 0; i < s.size();) {
    auto d = decode_one(s, i);
    if (!is_space(d.cp)) {
      if (begin == s.size()) begin = i;
      end = i + d.len;
    }
    i += d.len;
  }
  if (begin == s.size()) return {};
  return std::string(s.substr(begin, end - begin));
}

inline std::string strip_ascii_punct(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_ascii_punct(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_ascii_punct(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Lowercased, whitespace-collapsed, trimmed shadow of a text.
inline std::string normalize(std::string_view s) {
  std::string out;
  for (const auto& tok : split_whitespace(s)) {
    if (!out.empty()) out.push_back(' ');
    out += to_lower(tok);
  }
  return out;
}

inline bool is_ascii_alnum(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

// Lowercase word tokens: runs of ASCII letters, digits and inner apostrophes.
inline std::vector<std::string> word_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && cur.back() == '\'') cur.pop_back();
    std::size_t lead = 0;
    while (lead < cur.size() && cur[lead] == '\'') ++lead;
    if (lead < cur.size()) out.push_back(cur.substr(lead));
    cur.clear();
  };
  for (char c : s) {
    if (is_ascii_alnum(c)) {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
    } else if (c == '\'' && !cur.empty()) {
      cur.push_back(c);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

// 100 high-frequency English function words.
inline const std::unordered_set<std::string>& english_stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",     "about",  "after", "all",   "also",   "am",    "an",    "and",   "any",   "are",
      "as",    "at",     "be",    "been",  "but",    "by",    "can",   "could", "did",   "do",
      "does",  "for",    "from",  "had",   "has",    "have",  "he",    "her",   "here",  "him",
      "his",   "how",    "i",     "if",    "in",     "into",  "is",    "it",    "its",   "just",
      "me",    "more",   "my",    "no",    "not",    "now",   "of",    "on",    "one",   "only",
      "or",    "other",  "our",   "out",   "over",   "she",   "so",    "some",  "than",  "that",
      "the",   "their",  "them",  "then",  "there",  "these", "they",  "this",  "those", "to",
      "too",   "up",     "us",    "very",  "was",    "we",    "were",  "what",  "when",  "where",
      "which", "while",  "who",   "why",   "will",   "with",  "would", "you",   "your",  "being",
      "each",  "even",   "get",   "got",   "it's",   "i'm",   "don't", "should", "really", "because"};
  return words;
}

}  // namespace revlens::text
