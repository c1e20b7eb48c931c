#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "ctrleval/core.hpp"

namespace ctrleval {

namespace utf8 {

struct Decoded {
  char32_t cp;
  std::size_t length;
};

/// Decodes one code point at pos. Malformed sequences decode as U+FFFD with
/// length 1 so scanning always makes progress.
inline Decoded decode(std::string_view s, std::size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  auto cont = [&](std::size_t k) -> int {
    if (pos + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[pos + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 < 0 || b0 < 0xC2) return {0xFFFD, 1};
    return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
  }
  if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 < 0 || c2 < 0) return {0xFFFD, 1};
    const char32_t cp = ((b0 & 0x0F) << 12) | (c1 << 6) | c2;
    if (cp < 0x800) return {0xFFFD, 1};
    return {cp, 3};
  }
  if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 < 0 || c2 < 0 || c3 < 0) return {0xFFFD, 1};
    const char32_t cp = ((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3;
    if (cp < 0x10000 || cp > 0x10FFFF) return {0xFFFD, 1};
    return {cp, 4};
  }
  return {0xFFFD, 1};
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

/// Simple lowercase mapping for ASCII, Latin-1, Latin Extended-A, Greek and
/// Cyrillic. Other scripts pass through unchanged.
inline char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp < 0x80) return cp;
  if ((cp >= 0xC0 && cp <= 0xDE) && cp != 0xD7) return cp + 32;
  if (cp >= 0x100 && cp <= 0x137 && cp % 2 == 0) return cp + 1;
  if (cp >= 0x139 && cp <= 0x148 && cp % 2 == 1) return cp + 1;
  if (cp >= 0x14A && cp <= 0x177 && cp % 2 == 0) return cp + 1;
  if (cp == 0x178) return 0xFF;
  if (cp >= 0x179 && cp <= 0x17E && cp % 2 == 1) return cp + 1;
  if (cp >= 0x391 && cp <= 0x3AB && cp != 0x3A2) return cp + 32;
  if (cp >= 0x410 && cp <= 0x42F) return cp + 32;
  if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
  return cp;
}

inline bool is_upper(char32_t cp) { return to_lower(cp) != cp; }

inline bool is_space(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
         cp == 0xA0 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 ||
         cp == 0x202F || cp == 0x3000;
}

/// Letters and digits. Non-ASCII code points count as word characters unless
/// they fall in a known punctuation, symbol or space block.
inline bool is_word_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
  }
  if (cp == 0xFFFD) return false;
  if (cp <= 0xBF) return cp == 0xAA || cp == 0xB2 || cp == 0xB3 || cp == 0xB5 || cp == 0xB9 || cp == 0xBA;
  if (cp == 0xD7 || cp == 0xF7) return false;
  if (cp >= 0x2000 && cp <= 0x2BFF) return false;  // punctuation, symbols, arrows, shapes
  if (cp >= 0x3000 && cp <= 0x303F) return false;  // CJK punctuation
  if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
  if (cp >= 0xFF00 && cp <= 0xFF0F) return false;
  if (cp >= 0x1F000 && cp <= 0x1FAFF) return false;  // emoji
  return true;
}

inline bool is_apostrophe(char32_t cp) { return cp == '\'' || cp == 0x2019; }

}  // namespace utf8

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && is_ascii_space(s[begin])) ++begin;
  while (end > begin && is_ascii_space(s[end - 1])) --end;
  return s.substr(begin, end - begin);
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
  }
  return out;
}

/// Words whose trailing period does not end a sentence. Entries are stored
/// lowercase without the final period ("dr", "e.g").
class AbbreviationList {
 public:
  AbbreviationList() = default;
  AbbreviationList(std::initializer_list<std::string_view> entries) {
    for (auto e : entries) add(e);
  }

  void add(std::string_view entry) {
    auto t = trim(entry);
    if (t.empty() || t.front() == '#') return;
    if (t.back() == '.') t.remove_suffix(1);
    if (!t.empty()) entries_.insert(ascii_lower(t));
  }

  [[nodiscard]] bool contains(std::string_view word) const {
    return entries_.count(ascii_lower(word)) != 0;
  }

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const std::unordered_set<std::string>& entries() const noexcept { return entries_; }

  /// Plain-text file, one abbreviation per line, '#' starts a comment line.
  static AbbreviationList load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open abbreviation list: " + path);
    AbbreviationList list;
    std::string line;
    while (std::getline(in, line)) list.add(line);
    return list;
  }

  /// Same content as data/abbreviations.txt.
  static const AbbreviationList& builtin() {
    static const AbbreviationList list{
        "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "rev", "hon",
        "gen", "col", "lt", "sgt", "capt", "cmdr", "adm", "gov", "sen", "rep", "pres",
        "vs", "etc", "e.g", "i.e", "cf", "al", "approx", "dept", "est", "fig",
        "vol", "inc", "ltd", "co", "corp", "bros", "jan", "feb", "apr", "jun",
        "jul", "aug", "sep", "sept", "oct", "nov", "dec", "mon", "tue", "wed", "thu",
        "fri", "u.s", "u.k", "u.n", "a.m", "p.m", "ph.d", "b.a", "m.a"};
    return list;
  }

 private:
  std::unordered_set<std::string> entries_;
};

namespace detail {

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

inline bool is_closing(char32_t cp) {
  return cp == '"' || cp == '\'' || cp == ')' || cp == ']' || cp == 0x201D || cp == 0x2019;
}

inline bool is_opening(char32_t cp) {
  return cp == '"' || cp == '\'' || cp == '(' || cp == '[' || cp == 0x201C || cp == 0x2018;
}

/// True when the period at dot_pos ends a listed abbreviation.
inline bool is_abbreviation_period(std::string_view text, std::size_t dot_pos,
                                   const AbbreviationList& abbreviations) {
  std::size_t begin = dot_pos;
  while (begin > 0 && !is_ascii_space(text[begin - 1])) --begin;
  std::string_view word = text.substr(begin, dot_pos - begin);
  while (!word.empty() && (word.front() == '(' || word.front() == '"' || word.front() == '\'')) {
    word.remove_prefix(1);
  }
  return !word.empty() && abbreviations.contains(word);
}

}  // namespace detail

/// Rule-based sentence splitter: a boundary follows a run of . ! ? (plus any
/// closing quotes or brackets) when whitespace follows and the next sentence
/// opens with an uppercase letter or an opening quote. A lone period after a
/// listed abbreviation does not split.
inline Segmentation segment_sentences(std::string_view text,
                                      const AbbreviationList& abbreviations = AbbreviationList::builtin()) {
  if (trim(text).empty()) throw Error(ErrorCode::empty_text, "empty text");

  Segmentation seg;
  std::size_t pos = 0;
  while (pos < text.size() && is_ascii_space(text[pos])) ++pos;
  seg.separators.emplace_back(text.substr(0, pos));

  std::size_t sentence_begin = pos;
  std::size_t i = pos;
  while (i < text.size()) {
    if (!detail::is_terminator(text[i])) {
      i += utf8::decode(text, i).length;
      continue;
    }
    const std::size_t run_begin = i;
    while (i < text.size() && detail::is_terminator(text[i])) ++i;
    const bool lone_period = (i - run_begin == 1 && text[run_begin] == '.');
    std::size_t end = i;
    while (end < text.size()) {
      const auto d = utf8::decode(text, end);
      if (!detail::is_closing(d.cp)) break;
      end += d.length;
    }
    std::size_t next = end;
    while (next < text.size() && is_ascii_space(text[next])) ++next;
    if (next == end || next >= text.size()) {
      i = end;
      continue;
    }
    const auto following = utf8::decode(text, next);
    const bool opens_sentence = utf8::is_upper(following.cp) || detail::is_opening(following.cp);
    const bool abbreviation = lone_period && end == i &&
                              detail::is_abbreviation_period(text, run_begin, abbreviations);
    if (opens_sentence && !abbreviation) {
      seg.sentences.push_back({std::string(text.substr(sentence_begin, end - sentence_begin)),
                               seg.sentences.size()});
      seg.separators.emplace_back(text.substr(end, next - end));
      sentence_begin = next;
    }
    i = end;
  }

  std::size_t tail_end = text.size();
  while (tail_end > sentence_begin && is_ascii_space(text[tail_end - 1])) --tail_end;
  seg.sentences.push_back({std::string(text.substr(sentence_begin, tail_end - sentence_begin)),
                           seg.sentences.size()});
  seg.separators.emplace_back(text.substr(tail_end));
  return seg;
}

/// Lowercased word tokens: maximal runs of letters and digits, keeping
/// apostrophes that sit between two word characters ("it's").
inline std::vector<std::string> tokenize_words(std::string_view sentence) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < sentence.size()) {
    const auto d = utf8::decode(sentence, i);
    if (utf8::is_word_char(d.cp)) {
      utf8::append(current, utf8::to_lower(d.cp));
    } else if (utf8::is_apostrophe(d.cp) && !current.empty() && i + d.length < sentence.size() &&
               utf8::is_word_char(utf8::decode(sentence, i + d.length).cp)) {
      current += '\'';
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
    i += d.length;
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Removes prefix from the start of text and returns the left-trimmed rest.
/// Runs of whitespace compare equal to a single space; case must match.
inline std::string strip_prefix(std::string_view text, std::string_view prefix) {
  const std::string_view p = trim(prefix);
  std::size_t ti = 0;
  while (ti < text.size() && is_ascii_space(text[ti])) ++ti;
  std::size_t pi = 0;
  while (pi < p.size()) {
    if (is_ascii_space(p[pi])) {
      if (ti >= text.size() || !is_ascii_space(text[ti])) {
        throw Error(ErrorCode::prefix_mismatch, "prefix mismatch");
      }
      while (pi < p.size() && is_ascii_space(p[pi])) ++pi;
      while (ti < text.size() && is_ascii_space(text[ti])) ++ti;
      continue;
    }
    if (ti >= text.size() || text[ti] != p[pi]) throw Error(ErrorCode::prefix_mismatch, "prefix mismatch");
    ++ti;
    ++pi;
  }
  while (ti < text.size() && is_ascii_space(text[ti])) ++ti;
  std::string rest(trim(text.substr(ti)));
  if (rest.empty()) throw Error(ErrorCode::empty_continuation, "empty continuation");
  return rest;
}

inline bool ends_complete(std::string_view sentence) {
  std::size_t end = sentence.size();
  while (end > 0) {
    const char c = sentence[end - 1];
    if (c == '"' || c == '\'' || c == ')' || c == ']') {
      --end;
    } else if (end >= 3 && (sentence.substr(end - 3, 3) == "\xE2\x80\x9D" ||
                            sentence.substr(end - 3, 3) == "\xE2\x80\x99")) {
      end -= 3;
    } else {
      break;
    }
  }
  return end > 0 && detail::is_terminator(sentence[end - 1]);
}

/// Drops the final sentence when it lacks terminal punctuation, as done for
/// length-capped generations. Single-sentence texts are returned unchanged.
inline std::string trim_incomplete_last_sentence(std::string_view text,
                                                 const AbbreviationList& abbreviations = AbbreviationList::builtin()) {
  const auto seg = segment_sentences(text, abbreviations);
  if (seg.size() < 2 || ends_complete(seg.sentences.back().text)) return std::string(text);
  std::string out = seg.separators.front();
  for (std::size_t j = 0; j + 1 < seg.size(); ++j) {
    if (j > 0) out += seg.separators[j];
    out += seg.sentences[j].text;
  }
  return out;
}

inline EvalInstance make_instance(std::string prefix, std::string label, std::string text,
                                  const AbbreviationList& abbreviations = AbbreviationList::builtin()) {
  EvalInstance instance;
  instance.segmentation = segment_sentences(text, abbreviations);
  instance.continuation = strip_prefix(text, prefix);
  instance.prefix = std::move(prefix);
  instance.label = std::move(label);
  instance.generated_text = std::move(text);
  return instance;
}

}  // namespace ctrleval
