#pragma once

#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrleval/core.hpp"
#include "ctrleval/corpus_stats.hpp"
#include "ctrleval/scorer.hpp"
#include "ctrleval/textproc.hpp"

namespace ctrleval {

inline constexpr std::string_view kTextSlot = "TEXT";
inline constexpr std::string_view kMaskSlot = "MASK";

enum class Placement { text_first, prompt_first };

inline std::string_view to_string(Placement placement) {
  return placement == Placement::text_first ? "text_first" : "prompt_first";
}

/// Prompt with one TEXT slot (the generated text) and one MASK slot (the
/// label word). The TEXT slot sits at the start (text_first) or the end
/// (prompt_first) of the template.
struct PromptTemplate {
  std::string id;
  std::string text;
  Placement placement = Placement::text_first;

  [[nodiscard]] std::string render(std::string_view generated_text) const {
    std::string out;
    const std::string_view t = text;
    std::size_t pos = 0;
    while (pos < t.size()) {
      if (t.compare(pos, kTextSlot.size(), kTextSlot) == 0) {
        out += trim(generated_text);
        pos += kTextSlot.size();
      } else if (t.compare(pos, kMaskSlot.size(), kMaskSlot) == 0) {
        out += kMask;
        pos += kMaskSlot.size();
      } else {
        out += t[pos++];
      }
    }
    return out;
  }
};

inline void validate(const PromptTemplate& prompt) {
  const std::string_view t = prompt.text;
  if (count_occurrences(t, kTextSlot) != 1 || count_occurrences(t, kMaskSlot) != 1) {
    throw Error(ErrorCode::catalog, "prompt " + prompt.id + ": needs exactly one TEXT and one MASK slot");
  }
  const bool starts = t.starts_with(kTextSlot);
  const bool ends = t.ends_with(kTextSlot);
  if ((prompt.placement == Placement::text_first && !starts) ||
      (prompt.placement == Placement::prompt_first && !ends)) {
    throw Error(ErrorCode::catalog, "prompt " + prompt.id + ": TEXT slot position disagrees with placement " +
                                        std::string(to_string(prompt.placement)));
  }
}

/// Maps every attribute label to one label word.
struct Verbalizer {
  std::string id;
  std::vector<std::pair<std::string, std::string>> mapping;  // label -> word, catalog label order

  [[nodiscard]] std::vector<std::string> words() const {
    std::vector<std::string> out;
    out.reserve(mapping.size());
    for (const auto& [label, word] : mapping) out.push_back(word);
    return out;
  }
};

class AspectCatalog {
 public:
  AspectCatalog(std::string task, std::vector<PromptTemplate> prompts, std::vector<Verbalizer> verbalizers)
      : task_(std::move(task)),
        labels_(collect_labels(verbalizers)),
        prompts_(std::move(prompts)),
        verbalizers_(std::move(verbalizers)) {
    if (prompts_.empty()) throw Error(ErrorCode::catalog, "catalog has no prompts");
    std::unordered_set<std::string> ids;
    for (const auto& p : prompts_) {
      validate(p);
      if (!ids.insert(p.id).second) throw Error(ErrorCode::catalog, "duplicate prompt id: " + p.id);
    }
    ids.clear();
    for (auto& v : verbalizers_) {
      if (!ids.insert(v.id).second) throw Error(ErrorCode::catalog, "duplicate verbalizer id: " + v.id);
      align(v);
    }
  }

  [[nodiscard]] const std::string& task() const noexcept { return task_; }
  [[nodiscard]] const AttributeSet& labels() const noexcept { return labels_; }
  [[nodiscard]] const std::vector<PromptTemplate>& prompts() const noexcept { return prompts_; }
  [[nodiscard]] const std::vector<Verbalizer>& verbalizers() const noexcept { return verbalizers_; }
  [[nodiscard]] std::size_t evaluator_count() const noexcept { return prompts_.size() * verbalizers_.size(); }

  /// Index of an instance label: exact match first, then a unique
  /// case-insensitive match.
  [[nodiscard]] std::size_t resolve_label(std::string_view label) const {
    const auto& all = labels_.labels();
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i] == label) return i;
    }
    std::optional<std::size_t> found;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (ascii_lower(all[i]) == ascii_lower(label)) {
        if (found) throw Error(ErrorCode::catalog, "ambiguous label: " + std::string(label));
        found = i;
      }
    }
    if (!found) throw Error(ErrorCode::catalog, "label '" + std::string(label) + "' not in catalog " + task_);
    return *found;
  }

 private:
  static AttributeSet collect_labels(const std::vector<Verbalizer>& verbalizers) {
    if (verbalizers.empty()) throw Error(ErrorCode::catalog, "catalog has no verbalizers");
    std::vector<std::string> labels;
    for (const auto& [label, word] : verbalizers.front().mapping) labels.push_back(label);
    try {
      return AttributeSet(std::move(labels));
    } catch (const Error& e) {
      throw Error(ErrorCode::catalog, std::string("verbalizer labels: ") + e.what());
    }
  }

  /// Checks label coverage and word uniqueness; reorders the mapping into
  /// catalog label order.
  void align(Verbalizer& v) const {
    if (v.mapping.size() != labels_.size()) {
      throw Error(ErrorCode::catalog, "verbalizer " + v.id + " does not cover every label");
    }
    std::vector<std::pair<std::string, std::string>> ordered;
    std::unordered_set<std::string> words;
    for (const auto& label : labels_.labels()) {
      auto it = std::find_if(v.mapping.begin(), v.mapping.end(), [&](const auto& m) { return m.first == label; });
      if (it == v.mapping.end()) {
        throw Error(ErrorCode::catalog, "verbalizer " + v.id + " is missing label " + label);
      }
      if (trim(it->second).empty()) throw Error(ErrorCode::catalog, "verbalizer " + v.id + " has an empty word");
      if (!words.insert(it->second).second) {
        throw Error(ErrorCode::catalog, "verbalizer " + v.id + " maps two labels to " + it->second);
      }
      ordered.push_back(*it);
    }
    v.mapping = std::move(ordered);
  }

  std::string task_;
  AttributeSet labels_;
  std::vector<PromptTemplate> prompts_;
  std::vector<Verbalizer> verbalizers_;
};

inline AspectCatalog parse_catalog(const nlohmann::ordered_json& j) {
  try {
    std::vector<PromptTemplate> prompts;
    for (const auto& p : j.at("prompts")) {
      const auto placement = p.at("placement").get<std::string>();
      if (placement != "text_first" && placement != "prompt_first") {
        throw Error(ErrorCode::catalog, "unknown placement: " + placement);
      }
      prompts.push_back({p.at("id").get<std::string>(), p.at("template").get<std::string>(),
                         placement == "text_first" ? Placement::text_first : Placement::prompt_first});
    }
    std::vector<Verbalizer> verbalizers;
    for (const auto& v : j.at("verbalizers")) {
      Verbalizer verbalizer{v.at("id").get<std::string>(), {}};
      for (const auto& [label, word] : v.at("mapping").items()) {
        verbalizer.mapping.emplace_back(label, word.get<std::string>());
      }
      verbalizers.push_back(std::move(verbalizer));
    }
    return AspectCatalog(j.at("task").get<std::string>(), std::move(prompts), std::move(verbalizers));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::catalog, std::string("malformed catalog: ") + e.what());
  }
}

inline AspectCatalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open catalog: " + path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::catalog, "catalog " + path + " is not valid JSON: " + e.what());
  }
  return parse_catalog(j);
}

// ---------------------------------------------------------------------------
// Coherence

/// One evaluator per sentence: that sentence masked, the rest kept with
/// their original separators.
inline std::vector<PatternEvaluator> coherence_patterns(const EvalInstance& instance) {
  const auto& seg = instance.segmentation;
  std::vector<PatternEvaluator> evaluators;
  evaluators.reserve(seg.size());
  for (std::size_t j = 0; j < seg.size(); ++j) {
    std::string input;
    for (std::size_t k = 0; k < seg.size(); ++k) {
      if (k > 0) input += seg.separators[k];
      input += (k == j) ? std::string(kMask) : seg.sentences[k].text;
    }
    evaluators.push_back({"coh-" + std::to_string(j), std::move(input), seg.sentences[j].text});
  }
  return evaluators;
}

namespace detail {

inline std::vector<double> score_span_evaluators(std::span<const PatternEvaluator> evaluators,
                                                 ScorerBackend& backend) {
  std::vector<ScorerRequest> requests;
  requests.reserve(evaluators.size());
  for (const auto& e : evaluators) requests.emplace_back(InfillRequest{e.id, e.input_pattern, e.target_span()});
  const auto results = score_requests(backend, requests);
  std::vector<double> scores;
  scores.reserve(results.size());
  for (const auto& r : results) scores.push_back(std::get<double>(r));
  return scores;
}

inline std::vector<std::string> evaluator_ids(std::span<const PatternEvaluator> evaluators) {
  std::vector<std::string> ids;
  for (const auto& e : evaluators) ids.push_back(e.id);
  return ids;
}

}  // namespace detail

/// Sum over sentences of NISF(Y_j) * log P(Y_j | Y with Y_j masked).
inline AspectScore score_coherence(const EvalInstance& instance, const IwfTable& table, ScorerBackend& backend) {
  const auto evaluators = coherence_patterns(instance);
  std::vector<std::string> units;
  for (const auto& s : instance.sentences()) units.push_back(s.text);
  const auto weights = nisf_weights(table, units);
  const auto scores = detail::score_span_evaluators(evaluators, backend);
  return make_aspect_score(Aspect::coherence, detail::evaluator_ids(evaluators), scores, weights);
}

// ---------------------------------------------------------------------------
// Consistency

/// Prefix-to-continuation and continuation-to-prefix evaluators, in that
/// order.
inline std::vector<PatternEvaluator> consistency_patterns(const EvalInstance& instance) {
  const std::string prefix(trim(instance.prefix));
  if (prefix.empty()) throw Error(ErrorCode::prefix_mismatch, "consistency needs a non-empty prefix");
  if (instance.continuation.empty()) throw Error(ErrorCode::empty_continuation, "empty continuation");
  return {
      {"cons-x2y", prefix + " " + std::string(kMask), instance.continuation},
      {"cons-y2x", std::string(kMask) + " " + instance.continuation, prefix},
  };
}

/// NISF(Y\X) log P(Y\X | X «MASK») + NISF(X) log P(X | «MASK» Y\X), with NISF
/// normalized over the two units.
inline AspectScore score_consistency(const EvalInstance& instance, const IwfTable& table, ScorerBackend& backend) {
  const auto evaluators = consistency_patterns(instance);
  const std::vector<std::string> units{evaluators[0].target_span(), evaluators[1].target_span()};
  const auto weights = nisf_weights(table, units);
  const auto scores = detail::score_span_evaluators(evaluators, backend);
  return make_aspect_score(Aspect::consistency, detail::evaluator_ids(evaluators), scores, weights);
}

// ---------------------------------------------------------------------------
// Attribute relevance

struct AttributeEvaluator {
  PatternEvaluator pattern;
  std::size_t prompt_index = 0;
  std::size_t verbalizer_index = 0;
};

/// One evaluator per (prompt, verbalizer) pair, prompt-major.
inline std::vector<AttributeEvaluator> attribute_patterns(const AspectCatalog& catalog, const EvalInstance& instance) {
  static_cast<void>(catalog.resolve_label(instance.label));
  std::vector<AttributeEvaluator> out;
  out.reserve(catalog.evaluator_count());
  for (std::size_t p = 0; p < catalog.prompts().size(); ++p) {
    const auto& prompt = catalog.prompts()[p];
    const auto input = prompt.render(instance.generated_text);
    for (std::size_t v = 0; v < catalog.verbalizers().size(); ++v) {
      const auto& verbalizer = catalog.verbalizers()[v];
      out.push_back({{prompt.id + "/" + verbalizer.id, input,
                      LabelWords{catalog.labels().labels(), verbalizer.words()}},
                     p,
                     v});
    }
  }
  return out;
}

/// Label-word probabilities of one evaluator, aligned with catalog labels.
struct AttributeEvaluatorOutput {
  std::string evaluator_id;
  std::vector<double> probs;
};

inline std::vector<AttributeEvaluatorOutput> attribute_evaluator_outputs(const AspectCatalog& catalog,
                                                                         const EvalInstance& instance,
                                                                         ScorerBackend& backend) {
  const auto evaluators = attribute_patterns(catalog, instance);
  std::vector<ScorerRequest> requests;
  requests.reserve(evaluators.size());
  for (const auto& e : evaluators) {
    requests.emplace_back(LabelWordsRequest{e.pattern.id, e.pattern.input_pattern, e.pattern.target_words().words});
  }
  auto results = score_requests(backend, requests);
  std::vector<AttributeEvaluatorOutput> out;
  out.reserve(evaluators.size());
  for (std::size_t j = 0; j < evaluators.size(); ++j) {
    out.push_back({evaluators[j].pattern.id, std::move(std::get<std::vector<double>>(results[j]))});
  }
  return out;
}

/// Per evaluator: s = P(v(a)) / sum_a' P(v(a')), w = sum_a' P(v(a')); the
/// weights are normalized across evaluators. subset selects evaluators by
/// index (all when empty); they are combined in ascending index order.
inline AspectScore combine_attribute_relevance(std::span<const AttributeEvaluatorOutput> outputs,
                                               std::size_t label_index,
                                               std::span<const std::size_t> subset = {}) {
  std::vector<std::size_t> chosen(subset.begin(), subset.end());
  if (chosen.empty()) {
    chosen.resize(outputs.size());
    for (std::size_t j = 0; j < outputs.size(); ++j) chosen[j] = j;
  } else {
    std::sort(chosen.begin(), chosen.end());
  }
  if (chosen.empty()) throw Error(ErrorCode::no_evaluators, "no evaluators");
  std::vector<std::string> ids;
  std::vector<double> scores, raw_weights;
  for (const auto j : chosen) {
    const auto& o = outputs[j];
    if (label_index >= o.probs.size()) throw Error(ErrorCode::invalid_argument, "label index out of range");
    double mass = 0.0;
    for (double p : o.probs) mass += p;
    if (!(mass > 0.0)) throw Error(ErrorCode::degenerate_weights, "degenerate weights: zero label-word mass");
    ids.push_back(o.evaluator_id);
    scores.push_back(o.probs[label_index] / mass);
    raw_weights.push_back(mass);
  }
  return make_aspect_score(Aspect::attribute_relevance, std::move(ids), scores, raw_weights);
}

inline AspectScore score_attribute_relevance(const AspectCatalog& catalog, const EvalInstance& instance,
                                             ScorerBackend& backend) {
  const auto label = catalog.resolve_label(instance.label);
  const auto outputs = attribute_evaluator_outputs(catalog, instance, backend);
  return combine_attribute_relevance(outputs, label);
}

/// Resources an aspect may need; coherence and consistency need the table,
/// attribute relevance the catalog.
struct ScoringContext {
  const IwfTable* iwf = nullptr;
  const AspectCatalog* catalog = nullptr;
  ScorerBackend* backend = nullptr;
};

inline AspectScore score_aspect(Aspect aspect, const EvalInstance& instance, const ScoringContext& ctx) {
  if (ctx.backend == nullptr) throw Error(ErrorCode::invalid_argument, "no scorer backend");
  switch (aspect) {
    case Aspect::coherence:
    case Aspect::consistency:
      if (ctx.iwf == nullptr) throw Error(ErrorCode::invalid_argument, "coherence and consistency need an IWF table");
      return aspect == Aspect::coherence ? score_coherence(instance, *ctx.iwf, *ctx.backend)
                                         : score_consistency(instance, *ctx.iwf, *ctx.backend);
    case Aspect::attribute_relevance:
      if (ctx.catalog == nullptr) throw Error(ErrorCode::invalid_argument, "attribute relevance needs a catalog");
      return score_attribute_relevance(*ctx.catalog, instance, *ctx.backend);
  }
  throw Error(ErrorCode::invalid_argument, "unknown aspect");
}

}  // namespace ctrleval
