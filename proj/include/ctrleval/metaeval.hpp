#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrleval/aspects.hpp"
#include "ctrleval/core.hpp"
#include "ctrleval/rng.hpp"
#include "ctrleval/textproc.hpp"

namespace ctrleval {

// ---------------------------------------------------------------------------
// Records

/// One rated sample of an evaluation set. Ratings are keyed by aspect name
/// ("coherence", "consistency", "attr_rel") and may be absent for unrated
/// inputs such as perturbed negatives.
struct EvalSetRecord {
  std::string id;
  std::string prefix;
  std::string label;
  std::string text;
  std::string model;
  std::map<std::string, std::vector<int>> ratings;

  [[nodiscard]] EvalInstance instance() const { return make_instance(prefix, label, text); }

  [[nodiscard]] bool has_ratings(Aspect aspect) const {
    auto it = ratings.find(std::string(to_string(aspect)));
    return it != ratings.end() && !it->second.empty();
  }

  [[nodiscard]] double mean_rating(Aspect aspect) const {
    auto it = ratings.find(std::string(to_string(aspect)));
    if (it == ratings.end() || it->second.empty()) {
      throw Error(ErrorCode::invalid_argument, "record " + id + " has no " + std::string(to_string(aspect)) + " ratings");
    }
    double sum = 0.0;
    for (int r : it->second) sum += r;
    return sum / static_cast<double>(it->second.size());
  }
};

inline EvalSetRecord parse_eval_record(const nlohmann::json& j) {
  try {
    EvalSetRecord r;
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.prefix = j.at("prefix").get<std::string>();
    r.label = j.value("label", std::string{});
    r.text = j.at("text").get<std::string>();
    r.model = j.value("model", std::string{});
    if (j.contains("ratings")) {
      for (const auto& [aspect, values] : j.at("ratings").items()) {
        if (!parse_aspect(aspect)) throw Error(ErrorCode::invalid_argument, "unknown rating aspect: " + aspect);
        const std::string key(to_string(*parse_aspect(aspect)));
        auto& list = r.ratings[key];
        for (const auto& v : values) {
          const int rating = v.get<int>();
          if (rating < 1 || rating > 5 || v.get<double>() != rating) {
            throw Error(ErrorCode::invalid_argument, "record " + r.id + ": rating outside 1..5");
          }
          list.push_back(rating);
        }
        if (list.empty()) throw Error(ErrorCode::invalid_argument, "record " + r.id + ": empty rating list for " + key);
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("malformed evaluation record: ") + e.what());
  }
}

inline nlohmann::ordered_json to_json(const EvalSetRecord& r) {
  nlohmann::ordered_json j{{"id", r.id}, {"prefix", r.prefix}, {"label", r.label}, {"text", r.text}, {"model", r.model}};
  if (!r.ratings.empty()) {
    nlohmann::ordered_json ratings = nlohmann::ordered_json::object();
    for (const auto& [aspect, values] : r.ratings) ratings[aspect] = values;
    j["ratings"] = std::move(ratings);
  }
  return j;
}

/// True for lines that carry a run header instead of data.
inline bool is_header_line(const nlohmann::json& j) { return j.is_object() && j.contains("header"); }

template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::invalid_argument, path + ":" + std::to_string(line_number) + ": invalid JSON");
    }
    if (is_header_line(j)) continue;
    fn(j, line_number);
  }
}

inline std::vector<EvalSetRecord> read_eval_set(const std::string& path) {
  std::vector<EvalSetRecord> records;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_number) {
    try {
      records.push_back(parse_eval_record(j));
    } catch (const Error& e) {
      throw Error(e.code(), path + ":" + std::to_string(line_number) + ": " + e.what());
    }
  });
  return records;
}

struct ScoreRecord {
  std::string id;
  AspectScore score;
};

inline nlohmann::ordered_json to_json(const ScoreRecord& r) {
  nlohmann::ordered_json parts = nlohmann::ordered_json::array();
  for (const auto& p : r.score.parts) {
    parts.push_back({{"evaluator_id", p.evaluator_id}, {"weight", p.weight}, {"raw", p.raw_score}});
  }
  return {{"id", r.id}, {"aspect", to_string(r.score.aspect)}, {"score", r.score.value}, {"parts", std::move(parts)}};
}

inline ScoreRecord parse_score_record(const nlohmann::json& j) {
  try {
    ScoreRecord r;
    r.id = j.at("id").get<std::string>();
    const auto aspect = parse_aspect(j.at("aspect").get<std::string>());
    if (!aspect) throw Error(ErrorCode::invalid_argument, "unknown aspect in score record " + r.id);
    r.score.aspect = *aspect;
    r.score.value = j.at("score").get<double>();
    if (j.contains("parts")) {
      for (const auto& p : j.at("parts")) {
        r.score.parts.push_back({p.at("evaluator_id").get<std::string>(), p.at("raw").get<double>(),
                                 p.at("weight").get<double>()});
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("malformed score record: ") + e.what());
  }
}

/// Scores of one aspect keyed by sample id.
inline std::unordered_map<std::string, double> read_scores(const std::string& path, Aspect aspect) {
  std::unordered_map<std::string, double> scores;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
    const auto r = parse_score_record(j);
    if (r.score.aspect != aspect) return;
    if (!scores.emplace(r.id, r.score.value).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate score for id " + r.id);
    }
  });
  return scores;
}

// ---------------------------------------------------------------------------
// Correlation

namespace detail {

inline void check_pair(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::invalid_argument, "correlation inputs differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::invalid_argument, "correlation needs at least two samples");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(xs) || constant(ys)) throw Error(ErrorCode::zero_variance, "zero variance");
}

inline double clamp_unit(double r) { return std::clamp(r, -1.0, 1.0); }

}  // namespace detail

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  detail::check_pair(xs, ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::zero_variance, "zero variance");
  return detail::clamp_unit(sxy / std::sqrt(sxx * syy));
}

/// 1-based ranks, ties share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  detail::check_pair(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

/// Kendall tau-b in O(n log n) (Knight's merge-sort method).
inline double kendall(std::span<const double> xs, std::span<const double> ys) {
  detail::check_pair(xs, ys);
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return xs[a] != xs[b] ? xs[a] < xs[b] : ys[a] < ys[b];
  });

  auto tie_pairs = [](std::int64_t t) { return t * (t - 1) / 2; };
  std::int64_t x_ties = 0, joint_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && xs[order[j]] == xs[order[i]]) ++j;
    x_ties += tie_pairs(static_cast<std::int64_t>(j - i));
    for (std::size_t a = i; a < j;) {
      std::size_t b = a + 1;
      while (b < j && ys[order[b]] == ys[order[a]]) ++b;
      joint_ties += tie_pairs(static_cast<std::int64_t>(b - a));
      a = b;
    }
    i = j;
  }

  // Count inversions of y in x-order: each is a discordant pair.
  std::vector<double> y(n), buffer(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = ys[order[i]];
  std::int64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (y[j] < y[i]) {
          swaps += static_cast<std::int64_t>(mid - i);
          buffer[k++] = y[j++];
        } else {
          buffer[k++] = y[i++];
        }
      }
      while (i < mid) buffer[k++] = y[i++];
      while (j < hi) buffer[k++] = y[j++];
    }
    std::swap(y, buffer);
  }

  std::int64_t y_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && y[j] == y[i]) ++j;
    y_ties += tie_pairs(static_cast<std::int64_t>(j - i));
    i = j;
  }

  const std::int64_t total = tie_pairs(static_cast<std::int64_t>(n));
  const std::int64_t numerator = total - x_ties - y_ties + joint_ties - 2 * swaps;
  const double denominator = std::sqrt(static_cast<double>(total - x_ties) * static_cast<double>(total - y_ties));
  return detail::clamp_unit(static_cast<double>(numerator) / denominator);
}

struct CorrelationReport {
  std::string aspect;
  double pearson_r = 0.0;
  double spearman_rho = 0.0;
  double kendall_tau = 0.0;
  std::size_t n = 0;
};

inline CorrelationReport correlate(std::string aspect, std::span<const double> metric, std::span<const double> human) {
  return {std::move(aspect), pearson(metric, human), spearman(metric, human), kendall(metric, human), metric.size()};
}

inline nlohmann::ordered_json to_json(const CorrelationReport& r) {
  return {{"aspect", r.aspect}, {"pearson_r", r.pearson_r}, {"spearman_rho", r.spearman_rho},
          {"kendall_tau", r.kendall_tau}, {"n", r.n}};
}

// ---------------------------------------------------------------------------
// Inter-annotator agreement

enum class AlphaLevel { interval, ordinal };

/// Krippendorff's alpha from the coincidence matrix. ratings[u][c] is coder
/// c's value for unit u; nullopt marks a missing rating. Units with fewer
/// than two ratings are not pairable and are ignored.
inline double krippendorff_alpha(const std::vector<std::vector<std::optional<double>>>& ratings,
                                 AlphaLevel level = AlphaLevel::interval) {
  std::vector<double> values;
  std::vector<std::vector<double>> units;
  for (const auto& row : ratings) {
    std::vector<double> present;
    for (const auto& v : row) {
      if (v) present.push_back(*v);
    }
    if (present.size() >= 2) {
      values.insert(values.end(), present.begin(), present.end());
      units.push_back(std::move(present));
    }
  }
  if (units.empty()) throw Error(ErrorCode::invalid_argument, "alpha needs at least one unit with two ratings");
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() < 2) throw Error(ErrorCode::invalid_argument, "alpha needs at least two distinct values");

  const std::size_t k = values.size();
  auto index = [&](double v) {
    return static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), v) - values.begin());
  };
  std::vector<double> o(k * k, 0.0);
  for (const auto& unit : units) {
    const double m = static_cast<double>(unit.size());
    for (std::size_t a = 0; a < unit.size(); ++a) {
      for (std::size_t b = 0; b < unit.size(); ++b) {
        if (a != b) o[index(unit[a]) * k + index(unit[b])] += 1.0 / (m - 1.0);
      }
    }
  }
  std::vector<double> marginal(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < k; ++d) marginal[c] += o[c * k + d];
  }
  const double n = std::accumulate(marginal.begin(), marginal.end(), 0.0);

  auto delta2 = [&](std::size_t c, std::size_t d) {
    if (level == AlphaLevel::interval) {
      const double diff = values[c] - values[d];
      return diff * diff;
    }
    const auto [lo, hi] = std::minmax(c, d);
    double sum = 0.0;
    for (std::size_t g = lo; g <= hi; ++g) sum += marginal[g];
    const double diff = sum - (marginal[lo] + marginal[hi]) / 2.0;
    return diff * diff;
  };

  double observed = 0.0, expected = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < k; ++d) {
      const double d2 = delta2(c, d);
      observed += o[c * k + d] * d2;
      expected += marginal[c] * marginal[d] * d2;
    }
  }
  observed /= n;
  expected /= n * (n - 1.0);
  if (expected == 0.0) throw Error(ErrorCode::invalid_argument, "alpha undefined: no expected disagreement");
  return 1.0 - observed / expected;
}

/// Annotation quality control: a survey is kept only if the perturbed
/// negative sample is rated no higher than every genuine sample.
inline bool passes_negative_check(std::span<const int> genuine_ratings, int negative_rating) {
  return std::all_of(genuine_ratings.begin(), genuine_ratings.end(),
                     [&](int r) { return negative_rating <= r; });
}

// ---------------------------------------------------------------------------
// Drift analyses

/// Metric scores joined with mean human ratings by sample id.
struct AlignedSample {
  std::string id;
  std::string model;
  double metric = 0.0;
  double human = 0.0;
};

/// Joins scores to rated records. Records of other aspects' ratings are
/// ignored; a score without a rated record, or (unless allow_missing) a
/// rated record without a score, is an error listing the ids.
inline std::vector<AlignedSample> align_scores(std::span<const EvalSetRecord> records,
                                               const std::unordered_map<std::string, double>& scores,
                                               Aspect aspect, bool allow_missing = false) {
  std::vector<AlignedSample> out;
  std::unordered_map<std::string, bool> rated;
  std::vector<std::string> unscored;
  for (const auto& r : records) {
    if (!r.has_ratings(aspect)) continue;
    rated[r.id] = true;
    auto it = scores.find(r.id);
    if (it == scores.end()) {
      unscored.push_back(r.id);
      continue;
    }
    out.push_back({r.id, r.model, it->second, r.mean_rating(aspect)});
  }
  std::vector<std::string> unrated;
  for (const auto& [id, value] : scores) {
    if (!rated.count(id)) unrated.push_back(id);
  }
  std::sort(unrated.begin(), unrated.end());
  auto join = [](const std::vector<std::string>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? ", " : "") + ids[i];
    if (ids.size() > 20) s += ", ...";
    return s;
  };
  if (!unrated.empty()) {
    throw Error(ErrorCode::invalid_argument, "scores without ratings for ids: " + join(unrated));
  }
  if (!unscored.empty() && !allow_missing) {
    throw Error(ErrorCode::invalid_argument, "ratings without scores for ids: " + join(unscored));
  }
  return out;
}

struct ModelDriftReport {
  std::vector<std::pair<std::string, CorrelationReport>> per_model;  // sorted by model name
  std::vector<std::string> skipped;                                  // models with too few samples
  double mean_pearson = 0.0;
  double variance_pearson = 0.0;  // population variance over models
};

inline ModelDriftReport model_drift_report(std::span<const AlignedSample> samples, const std::string& aspect) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& s : samples) {
    auto& [metric, human] = groups[s.model];
    metric.push_back(s.metric);
    human.push_back(s.human);
  }
  ModelDriftReport report;
  for (const auto& [model, group] : groups) {
    try {
      report.per_model.emplace_back(model, correlate(aspect, group.first, group.second));
    } catch (const Error&) {
      report.skipped.push_back(model);
    }
  }
  if (!report.per_model.empty()) {
    double sum = 0.0;
    for (const auto& [model, r] : report.per_model) sum += r.pearson_r;
    report.mean_pearson = sum / static_cast<double>(report.per_model.size());
    double ss = 0.0;
    for (const auto& [model, r] : report.per_model) ss += (r.pearson_r - report.mean_pearson) * (r.pearson_r - report.mean_pearson);
    report.variance_pearson = ss / static_cast<double>(report.per_model.size());
  }
  return report;
}

inline double quality_drift_inclusion_probability(int source_quartile, int subset) {
  return 1.0 / (std::abs(subset - source_quartile) + 1.0);
}

struct QualityDriftSplit {
  std::vector<int> quartile;                     // source quartile per item
  std::array<std::vector<std::size_t>, 4> subsets;  // item indices, ascending
};

/// Sorts items by (key, id), splits them into quartiles by rank and builds
/// four biased subsets: subset j keeps each item of quartile i with
/// probability 1 / (|j - i| + 1).
inline QualityDriftSplit quality_drift_subsets(std::span<const std::string> ids, std::span<const double> keys,
                                               std::uint64_t seed) {
  if (ids.size() != keys.size()) throw Error(ErrorCode::invalid_argument, "ids and keys differ in length");
  if (ids.size() < 8) throw Error(ErrorCode::too_short, "quality drift needs at least 8 records");
  const std::size_t n = ids.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : ids[a] < ids[b];
  });
  QualityDriftSplit split;
  split.quartile.resize(n);
  for (std::size_t rank = 0; rank < n; ++rank) split.quartile[order[rank]] = static_cast<int>(4 * rank / n);
  for (int j = 0; j < 4; ++j) {
    CounterRng rng(seed, static_cast<std::uint64_t>(j));
    for (std::size_t item = 0; item < n; ++item) {
      if (rng.bernoulli(quality_drift_inclusion_probability(split.quartile[item], j))) {
        split.subsets[static_cast<std::size_t>(j)].push_back(item);
      }
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Evaluator-count analysis

struct SubsampleStats {
  std::size_t k = 0;
  double mean_pearson = 0.0;
  double stddev_pearson = 0.0;  // sample standard deviation, 0 for one trial
  std::vector<double> trial_pearsons;
};

/// Draws k distinct indices from [0, n).
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, CounterRng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.next_below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Pearson of attribute relevance against mean human ratings when only k
/// randomly drawn evaluators are kept, over several trials per k. Backend
/// outputs are computed once per record and reused by every trial.
inline std::vector<SubsampleStats> evaluator_subsample_report(const AspectCatalog& catalog,
                                                              std::span<const EvalSetRecord> records,
                                                              ScorerBackend& backend,
                                                              std::span<const std::size_t> k_values,
                                                              std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw Error(ErrorCode::invalid_argument, "trials must be at least 1");
  const std::size_t total = catalog.evaluator_count();
  for (const auto k : k_values) {
    if (k < 1 || k > total) {
      throw Error(ErrorCode::invalid_argument,
                  "k=" + std::to_string(k) + " outside 1.." + std::to_string(total) + " evaluators");
    }
  }
  std::vector<std::vector<AttributeEvaluatorOutput>> outputs;
  std::vector<std::size_t> labels;
  std::vector<double> human;
  for (const auto& record : records) {
    if (!record.has_ratings(Aspect::attribute_relevance)) continue;
    const auto instance = record.instance();
    labels.push_back(catalog.resolve_label(instance.label));
    outputs.push_back(attribute_evaluator_outputs(catalog, instance, backend));
    human.push_back(record.mean_rating(Aspect::attribute_relevance));
  }

  std::vector<SubsampleStats> report;
  for (const auto k : k_values) {
    SubsampleStats stats;
    stats.k = k;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      CounterRng rng(seed, hash_combine(k, t));
      const auto subset = sample_indices(total, k, rng);
      std::vector<double> metric;
      metric.reserve(outputs.size());
      for (std::size_t r = 0; r < outputs.size(); ++r) {
        metric.push_back(combine_attribute_relevance(outputs[r], labels[r], subset).value);
      }
      const double p = pearson(metric, human);
      stats.trial_pearsons.push_back(p);
      const double delta = p - mean;
      mean += delta / static_cast<double>(t + 1);
      m2 += delta * (p - mean);
    }
    stats.mean_pearson = mean;
    stats.stddev_pearson = trials > 1 ? std::sqrt(m2 / static_cast<double>(trials - 1)) : 0.0;
    report.push_back(std::move(stats));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Negative samples

enum class PerturbStrategy { shuffle, drop };

inline std::optional<PerturbStrategy> parse_strategy(std::string_view name) {
  if (name == "shuffle") return PerturbStrategy::shuffle;
  if (name == "drop") return PerturbStrategy::drop;
  return std::nullopt;
}

/// Builds a negative sample from the sentences of the continuation: shuffle
/// applies a random non-identity permutation, drop removes one uniformly
/// chosen sentence. The prefix stays verbatim at the front.
inline EvalInstance perturb_negative(const EvalInstance& instance, PerturbStrategy strategy, std::uint64_t seed) {
  const auto seg = segment_sentences(instance.continuation);
  const std::size_t m = seg.size();
  if (m < 2) throw Error(ErrorCode::too_short, "too short to perturb");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed);
  if (strategy == PerturbStrategy::shuffle) {
    do {
      rng.shuffle(std::span<std::size_t>(order));
    } while (std::is_sorted(order.begin(), order.end()));
  } else {
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(rng.next_below(m)));
  }
  std::string text(trim(instance.prefix));
  for (const auto index : order) {
    text += ' ';
    text += seg.sentences[index].text;
  }
  return make_instance(instance.prefix, instance.label, std::move(text));
}

}  // namespace ctrleval
