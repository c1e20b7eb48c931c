#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrleval/core.hpp"
#include "ctrleval/textproc.hpp"

namespace ctrleval {

/// Sentence count |C| and per-word sentence frequencies f_w of a corpus.
class IwfTable {
 public:
  static constexpr std::string_view kMagic = "IWF1";

  IwfTable() = default;
  IwfTable(std::uint64_t sentence_count, std::unordered_map<std::string, std::uint64_t> counts)
      : sentence_count_(sentence_count), counts_(std::move(counts)) {}

  [[nodiscard]] std::uint64_t sentence_count() const noexcept { return sentence_count_; }
  [[nodiscard]] std::size_t vocabulary_size() const noexcept { return counts_.size(); }
  [[nodiscard]] const std::unordered_map<std::string, std::uint64_t>& counts() const noexcept {
    return counts_;
  }
  [[nodiscard]] bool usable() const noexcept { return sentence_count_ >= 1; }

  [[nodiscard]] std::uint64_t frequency(std::string_view word) const {
    auto it = counts_.find(std::string(word));
    return it == counts_.end() ? 0 : it->second;
  }

  /// Merging tables of disjoint corpora: |C| and every f_w add.
  void merge(const IwfTable& other) {
    sentence_count_ += other.sentence_count_;
    for (const auto& [word, count] : other.counts_) counts_[word] += count;
  }

  friend bool operator==(const IwfTable& a, const IwfTable& b) {
    return a.sentence_count_ == b.sentence_count_ && a.counts_ == b.counts_;
  }

 private:
  std::uint64_t sentence_count_ = 0;
  std::unordered_map<std::string, std::uint64_t> counts_;
};

enum class CorpusMode {
  sentence_per_line,  // each non-empty line is one sentence
  document_per_line,  // each line is segmented into sentences first
};

/// Single-pass counter. Memory grows with the vocabulary only.
class IwfBuilder {
 public:
  explicit IwfBuilder(CorpusMode mode = CorpusMode::sentence_per_line) : mode_(mode) {}

  void add_sentence(std::string_view sentence) {
    if (trim(sentence).empty()) return;
    ++sentence_count_;
    seen_.clear();
    for (auto& word : tokenize_words(sentence)) {
      if (seen_.insert(word).second) ++counts_[std::move(word)];
    }
  }

  void add_line(std::string_view line) {
    if (trim(line).empty()) return;
    if (mode_ == CorpusMode::sentence_per_line) {
      add_sentence(line);
      return;
    }
    for (const auto& sentence : segment_sentences(line).sentences) add_sentence(sentence.text);
  }

  [[nodiscard]] std::uint64_t sentence_count() const noexcept { return sentence_count_; }

  [[nodiscard]] IwfTable finish() && {
    if (sentence_count_ == 0) throw Error(ErrorCode::empty_corpus, "empty corpus");
    return IwfTable(sentence_count_, std::move(counts_));
  }

 private:
  CorpusMode mode_;
  std::uint64_t sentence_count_ = 0;
  std::unordered_map<std::string, std::uint64_t> counts_;
  std::unordered_set<std::string> seen_;
};

inline IwfTable build_iwf_table(std::istream& corpus, CorpusMode mode = CorpusMode::sentence_per_line) {
  IwfBuilder builder(mode);
  std::string line;
  while (std::getline(corpus, line)) builder.add_line(line);
  return std::move(builder).finish();
}

inline IwfTable build_iwf_table(std::span<const std::string> lines,
                                CorpusMode mode = CorpusMode::sentence_per_line) {
  IwfBuilder builder(mode);
  for (const auto& line : lines) builder.add_line(line);
  return std::move(builder).finish();
}

/// Splits lines into contiguous shards, counts each on its own thread and
/// merges. Equal to the single-pass build for any shard count.
inline IwfTable build_iwf_table_sharded(std::span<const std::string> lines, std::size_t shards,
                                        CorpusMode mode = CorpusMode::sentence_per_line) {
  shards = std::max<std::size_t>(1, std::min(shards, lines.size()));
  std::vector<IwfBuilder> builders(shards, IwfBuilder(mode));
  {
    std::vector<std::jthread> workers;
    const std::size_t chunk = (lines.size() + shards - 1) / std::max<std::size_t>(shards, 1);
    for (std::size_t s = 0; s < shards; ++s) {
      const std::size_t begin = std::min(lines.size(), s * chunk);
      const std::size_t end = std::min(lines.size(), begin + chunk);
      workers.emplace_back([&builders, lines, s, begin, end] {
        for (std::size_t i = begin; i < end; ++i) builders[s].add_line(lines[i]);
      });
    }
  }
  IwfTable merged;
  for (auto& builder : builders) {
    if (builder.sentence_count() > 0) merged.merge(std::move(builder).finish());
  }
  if (!merged.usable()) throw Error(ErrorCode::empty_corpus, "empty corpus");
  return merged;
}

/// log(1 + |C|) / f_w, with f_w floored at 1 for unseen words.
inline double iwf(const IwfTable& table, std::string_view word) {
  const auto f = std::max<std::uint64_t>(table.frequency(word), 1);
  return std::log1p(static_cast<double>(table.sentence_count())) / static_cast<double>(f);
}

/// Maximum IWF over the words of a sentence.
inline double isf(const IwfTable& table, std::string_view sentence) {
  const auto words = tokenize_words(sentence);
  if (words.empty()) {
    throw Error(ErrorCode::untokenizable_sentence, "untokenizable sentence: \"" + std::string(sentence) + "\"");
  }
  double best = 0.0;
  for (const auto& w : words) best = std::max(best, iwf(table, w));
  return best;
}

/// ISF of each unit divided by the ISF total over all units.
inline std::vector<double> nisf_weights(const IwfTable& table, std::span<const std::string> units) {
  if (units.empty()) throw Error(ErrorCode::invalid_argument, "nisf_weights needs at least one unit");
  std::vector<double> isfs;
  isfs.reserve(units.size());
  for (const auto& unit : units) isfs.push_back(isf(table, unit));
  return normalize_weights(isfs);
}

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

inline void write_varint(std::ostream& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.put(static_cast<char>((v & 0x7F) | 0x80));
    v >>= 7;
  }
  out.put(static_cast<char>(v));
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw Error(ErrorCode::truncated_file, "truncated IWF table");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

inline std::uint64_t read_varint(std::istream& in) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw Error(ErrorCode::truncated_file, "truncated IWF table");
    v |= static_cast<std::uint64_t>(c & 0x7F) << shift;
    if ((c & 0x80) == 0) return v;
  }
  throw Error(ErrorCode::malformed_header, "malformed varint in IWF table");
}

}  // namespace detail

/// Binary layout: "IWF1" | u64 |C| | u64 vocab size | (varint len, word, u64
/// count)*, integers little-endian, words in byte order.
inline void write_table(const IwfTable& table, std::ostream& out) {
  out.write(IwfTable::kMagic.data(), static_cast<std::streamsize>(IwfTable::kMagic.size()));
  detail::write_u64(out, table.sentence_count());
  detail::write_u64(out, table.vocabulary_size());
  std::vector<const std::pair<const std::string, std::uint64_t>*> entries;
  entries.reserve(table.vocabulary_size());
  for (const auto& entry : table.counts()) entries.push_back(&entry);
  std::sort(entries.begin(), entries.end(), [](auto* a, auto* b) { return a->first < b->first; });
  for (const auto* entry : entries) {
    detail::write_varint(out, entry->first.size());
    out.write(entry->first.data(), static_cast<std::streamsize>(entry->first.size()));
    detail::write_u64(out, entry->second);
  }
}

inline IwfTable read_table(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw Error(ErrorCode::malformed_header, "malformed header: file too short");
  const std::string_view got(magic, 4);
  if (got != IwfTable::kMagic) {
    if (got.substr(0, 3) == "IWF") {
      throw Error(ErrorCode::version_mismatch,
                  "version mismatch: table is " + std::string(got) + ", expected " + std::string(IwfTable::kMagic));
    }
    throw Error(ErrorCode::malformed_header, "malformed header: bad magic");
  }
  const std::uint64_t sentence_count = detail::read_u64(in);
  const std::uint64_t vocab = detail::read_u64(in);
  std::unordered_map<std::string, std::uint64_t> counts;
  counts.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(vocab, 1u << 24)));
  for (std::uint64_t k = 0; k < vocab; ++k) {
    const std::uint64_t length = detail::read_varint(in);
    if (length == 0 || length > (1u << 20)) throw Error(ErrorCode::malformed_header, "malformed word entry");
    std::string word(static_cast<std::size_t>(length), '\0');
    if (!in.read(word.data(), static_cast<std::streamsize>(length))) {
      throw Error(ErrorCode::truncated_file, "truncated IWF table");
    }
    const std::uint64_t count = detail::read_u64(in);
    if (count == 0 || count > sentence_count) {
      throw Error(ErrorCode::malformed_header, "word frequency out of range for \"" + word + "\"");
    }
    if (!counts.emplace(std::move(word), count).second) {
      throw Error(ErrorCode::malformed_header, "duplicate word in IWF table");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::malformed_header, "trailing bytes after IWF table");
  }
  return IwfTable(sentence_count, std::move(counts));
}

inline void save_table(const IwfTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  write_table(table, out);
  if (!out) throw Error(ErrorCode::io, "write failed: " + path);
}

inline IwfTable load_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  return read_table(in);
}

/// Debug export: {"corpus_size": n, "counts": {word: f_w}} with sorted keys.
inline nlohmann::json table_to_json(const IwfTable& table) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [word, count] : table.counts()) counts[word] = count;
  return {{"corpus_size", table.sentence_count()}, {"counts", std::move(counts)}};
}

}  // namespace ctrleval
