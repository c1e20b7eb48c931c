#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "ctrleval/error.hpp"

namespace ctrleval {

/// Placeholder for the masked span at the pattern layer. Backends render it
/// into their model's own sentinel.
inline constexpr std::string_view kMask = "\xC2\xAB" "MASK" "\xC2\xBB";  // «MASK»

inline constexpr double kWeightSumTolerance = 1e-9;

enum class Aspect { coherence, consistency, attribute_relevance };

inline std::string_view to_string(Aspect aspect) {
  switch (aspect) {
    case Aspect::coherence: return "coherence";
    case Aspect::consistency: return "consistency";
    case Aspect::attribute_relevance: return "attr_rel";
  }
  return "unknown";
}

inline std::optional<Aspect> parse_aspect(std::string_view name) {
  if (name == "coherence" || name == "coh") return Aspect::coherence;
  if (name == "consistency" || name == "cons") return Aspect::consistency;
  if (name == "attr_rel" || name == "attribute_relevance" || name == "attr-rel") {
    return Aspect::attribute_relevance;
  }
  return std::nullopt;
}

/// One sentence of a segmented text.
struct Sentence {
  std::string text;  // trimmed, never empty
  std::size_t index = 0;
};

/// Sentences plus the whitespace around them. separators has size M + 1:
/// separators[0] leads the text, separators[j] sits between sentence j-1 and
/// j, separators[M] trails.
struct Segmentation {
  std::vector<Sentence> sentences;
  std::vector<std::string> separators;

  [[nodiscard]] std::size_t size() const noexcept { return sentences.size(); }

  [[nodiscard]] std::string reconstruct() const {
    std::string out = separators.empty() ? std::string{} : separators.front();
    for (std::size_t j = 0; j < sentences.size(); ++j) {
      out += sentences[j].text;
      out += separators[j + 1];
    }
    return out;
  }
};

/// Input triple (prefix X, attribute label a, generated text Y) with the
/// segmentation of Y and the continuation Y\X. Build with make_instance().
struct EvalInstance {
  std::string prefix;
  std::string label;
  std::string generated_text;
  Segmentation segmentation;
  std::string continuation;

  [[nodiscard]] std::size_t sentence_count() const noexcept { return segmentation.size(); }
  [[nodiscard]] const std::vector<Sentence>& sentences() const noexcept {
    return segmentation.sentences;
  }
};

class AttributeSet {
 public:
  explicit AttributeSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) {
      throw Error(ErrorCode::invalid_argument, "attribute set needs at least two labels");
    }
    std::unordered_set<std::string> seen;
    for (const auto& label : labels_) {
      if (!seen.insert(label).second) {
        throw Error(ErrorCode::invalid_argument, "duplicate attribute label: " + label);
      }
    }
  }

  [[nodiscard]] const std::vector<std::string>& labels() const noexcept { return labels_; }
  [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }

  [[nodiscard]] bool contains(std::string_view label) const {
    return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
  }

  [[nodiscard]] std::size_t index_of(std::string_view label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) {
      throw Error(ErrorCode::invalid_argument, "unknown attribute label: " + std::string(label));
    }
    return static_cast<std::size_t>(it - labels_.begin());
  }

 private:
  std::vector<std::string> labels_;
};

/// Label word per attribute label, aligned with an AttributeSet.
struct LabelWords {
  std::vector<std::string> labels;
  std::vector<std::string> words;
};

/// A rendered text-infilling task: the masked input pattern and what the
/// model is asked to produce in the mask slot.
struct PatternEvaluator {
  std::string id;
  std::string input_pattern;
  std::variant<std::string, LabelWords> output_target;

  [[nodiscard]] bool has_span_target() const noexcept {
    return std::holds_alternative<std::string>(output_target);
  }
  [[nodiscard]] const std::string& target_span() const { return std::get<std::string>(output_target); }
  [[nodiscard]] const LabelWords& target_words() const { return std::get<LabelWords>(output_target); }
};

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t count = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

inline void validate(const PatternEvaluator& evaluator) {
  if (count_occurrences(evaluator.input_pattern, kMask) != 1) {
    throw Error(ErrorCode::invalid_request,
                "evaluator " + evaluator.id + ": input pattern must contain the mask exactly once");
  }
  const bool empty_target = evaluator.has_span_target() ? evaluator.target_span().empty()
                                                        : evaluator.target_words().words.empty();
  if (empty_target) {
    throw Error(ErrorCode::invalid_request, "evaluator " + evaluator.id + ": empty output target");
  }
}

struct WeightedScore {
  std::string evaluator_id;
  double raw_score = 0.0;
  double weight = 0.0;
};

struct AspectScore {
  Aspect aspect = Aspect::coherence;
  double value = 0.0;
  std::vector<WeightedScore> parts;
};

/// Rescales nonnegative weights to a distribution, preserving order.
inline std::vector<double> normalize_weights(std::span<const double> raw) {
  if (raw.empty()) throw Error(ErrorCode::degenerate_weights, "degenerate weights: empty input");
  double total = 0.0;
  for (double w : raw) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::degenerate_weights, "degenerate weights: negative or non-finite entry");
    }
    total += w;
  }
  if (total <= 0.0) throw Error(ErrorCode::degenerate_weights, "degenerate weights: all zero");
  std::vector<double> out;
  out.reserve(raw.size());
  for (double w : raw) out.push_back(w / total);
  return out;
}

/// Weighted sum of evaluator scores. Weights must already form a distribution.
inline double ensemble(std::span<const WeightedScore> parts) {
  if (parts.empty()) throw Error(ErrorCode::no_evaluators, "no evaluators");
  double weight_sum = 0.0;
  for (const auto& part : parts) {
    if (!(part.weight >= 0.0)) {
      throw Error(ErrorCode::unnormalized_weights,
                  "unnormalized weights: negative weight for " + part.evaluator_id);
    }
    weight_sum += part.weight;
  }
  if (std::abs(weight_sum - 1.0) > kWeightSumTolerance) {
    throw Error(ErrorCode::unnormalized_weights, "unnormalized weights: sum is " + std::to_string(weight_sum));
  }
  double value = 0.0;
  for (const auto& part : parts) value += part.weight * part.raw_score;
  return value;
}

/// Pairs raw scores with raw weights, normalizes the weights, and combines.
inline AspectScore make_aspect_score(Aspect aspect, std::vector<std::string> ids,
                                     std::span<const double> raw_scores,
                                     std::span<const double> raw_weights) {
  const auto weights = normalize_weights(raw_weights);
  AspectScore score;
  score.aspect = aspect;
  score.parts.reserve(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    score.parts.push_back({std::move(ids[j]), raw_scores[j], weights[j]});
  }
  score.value = ensemble(score.parts);
  return score;
}

}  // namespace ctrleval
