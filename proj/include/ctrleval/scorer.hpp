#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "ctrleval/core.hpp"
#include "ctrleval/rng.hpp"
#include "ctrleval/textproc.hpp"

namespace ctrleval {

/// Asks for log P(target | input) where input holds one «MASK».
struct InfillRequest {
  std::string request_id;
  std::string input_pattern;
  std::string output_target;
};

/// Asks for P(word | input) of each candidate placed in the mask slot.
struct LabelWordsRequest {
  std::string request_id;
  std::string input_pattern;
  std::vector<std::string> candidate_words;
};

using ScorerRequest = std::variant<InfillRequest, LabelWordsRequest>;
/// log_prob for infill requests, per-candidate probabilities for label words.
using ScorerResult = std::variant<double, std::vector<double>>;

inline const std::string& request_id(const ScorerRequest& request) {
  return std::visit([](const auto& r) -> const std::string& { return r.request_id; }, request);
}

inline void validate(const InfillRequest& request) {
  if (count_occurrences(request.input_pattern, kMask) != 1) {
    throw ScorerError(ErrorCode::invalid_request, request.request_id,
                      "input pattern must contain the mask exactly once");
  }
  if (trim(request.output_target).empty()) {
    throw ScorerError(ErrorCode::invalid_request, request.request_id, "empty output target");
  }
}

inline void validate(const LabelWordsRequest& request) {
  if (count_occurrences(request.input_pattern, kMask) != 1) {
    throw ScorerError(ErrorCode::invalid_request, request.request_id,
                      "input pattern must contain the mask exactly once");
  }
  if (request.candidate_words.size() < 2) {
    throw ScorerError(ErrorCode::invalid_request, request.request_id, "need at least two candidate words");
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& word : request.candidate_words) {
    if (trim(word).empty()) {
      throw ScorerError(ErrorCode::invalid_request, request.request_id, "empty candidate word");
    }
    if (!seen.insert(word).second) {
      throw ScorerError(ErrorCode::invalid_request, request.request_id, "duplicate candidate word: " + word);
    }
  }
}

inline void validate(const ScorerRequest& request) {
  std::visit([](const auto& r) { validate(r); }, request);
}

inline void check_log_prob(const std::string& id, double log_prob) {
  if (!std::isfinite(log_prob) || log_prob > 0.0) {
    throw ScorerError(ErrorCode::protocol, id, "log_prob out of range: " + std::to_string(log_prob));
  }
}

inline void check_probs(const std::string& id, std::span<const double> probs, std::size_t expected) {
  if (probs.size() != expected) {
    throw ScorerError(ErrorCode::protocol, id, "probability count does not match candidates");
  }
  for (double p : probs) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw ScorerError(ErrorCode::protocol, id, "probability out of (0,1]: " + std::to_string(p));
    }
  }
}

/// Text-infilling model P_theta. Implementations must be deterministic and
/// safe to call from several threads.
class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;

  [[nodiscard]] virtual std::string model_name() const = 0;

  virtual double infill_log_prob(const InfillRequest& request) = 0;
  virtual std::vector<double> label_word_probs(const LabelWordsRequest& request) = 0;

  /// Results come back aligned with requests whatever the completion order.
  virtual std::vector<ScorerResult> score_batch(std::span<const ScorerRequest> requests) {
    std::vector<ScorerResult> results;
    results.reserve(requests.size());
    for (const auto& request : requests) {
      if (const auto* infill = std::get_if<InfillRequest>(&request)) {
        results.emplace_back(infill_log_prob(*infill));
      } else {
        results.emplace_back(label_word_probs(std::get<LabelWordsRequest>(request)));
      }
    }
    return results;
  }
};

inline double score_infill(ScorerBackend& backend, const InfillRequest& request) {
  validate(request);
  const double log_prob = backend.infill_log_prob(request);
  check_log_prob(request.request_id, log_prob);
  return log_prob;
}

inline std::vector<double> score_label_words(ScorerBackend& backend, const LabelWordsRequest& request) {
  validate(request);
  auto probs = backend.label_word_probs(request);
  check_probs(request.request_id, probs, request.candidate_words.size());
  return probs;
}

/// Validates every request, scores them as one batch and range-checks the
/// results.
inline std::vector<ScorerResult> score_requests(ScorerBackend& backend, std::span<const ScorerRequest> requests) {
  for (const auto& request : requests) validate(request);
  auto results = backend.score_batch(requests);
  if (results.size() != requests.size()) {
    throw Error(ErrorCode::protocol, "backend returned a result count that does not match the batch");
  }
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (const auto* infill = std::get_if<InfillRequest>(&requests[i])) {
      const auto* log_prob = std::get_if<double>(&results[i]);
      if (log_prob == nullptr) throw ScorerError(ErrorCode::protocol, infill->request_id, "wrong result kind");
      check_log_prob(infill->request_id, *log_prob);
    } else {
      const auto& lw = std::get<LabelWordsRequest>(requests[i]);
      const auto* probs = std::get_if<std::vector<double>>(&results[i]);
      if (probs == nullptr) throw ScorerError(ErrorCode::protocol, lw.request_id, "wrong result kind");
      check_probs(lw.request_id, *probs, lw.candidate_words.size());
    }
  }
  return results;
}

/// Deterministic smoothed bigram model over a fixed vocabulary.
///
/// Text is split with tokenize_words(). The first target token is conditioned
/// on the last token before the mask (or a start symbol); later tokens on
/// their predecessor. For a known token
///
///   P(w | c) = eps + (1 - V eps) * g(c, w) / sum_u g(c, u),  eps = 1e-6 / V,
///
/// where g is a positive weight hashed from (seed, c, w). Tokens outside the
/// vocabulary always get eps. In uniform mode every known token gets 1 / V.
class MockBackend final : public ScorerBackend {
 public:
  MockBackend(std::uint64_t seed, std::vector<std::string> vocab, bool uniform = false)
      : seed_(seed), uniform_(uniform), vocab_(std::move(vocab)) {
    if (vocab_.empty()) throw Error(ErrorCode::invalid_argument, "mock backend needs a non-empty vocabulary");
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
      const auto tokens = tokenize_words(vocab_[i]);
      if (tokens.size() != 1 || tokens.front() != vocab_[i]) {
        throw Error(ErrorCode::invalid_argument, "mock vocabulary entry is not a single lowercase token: " + vocab_[i]);
      }
      if (!ids_.emplace(vocab_[i], static_cast<std::uint32_t>(i)).second) {
        throw Error(ErrorCode::invalid_argument, "duplicate mock vocabulary entry: " + vocab_[i]);
      }
    }
    const double v = static_cast<double>(vocab_.size());
    epsilon_ = 1e-6 / v;
    if (!uniform_) {
      normalizers_.resize(vocab_.size() + 2);
      for (std::uint32_t c = 0; c < normalizers_.size(); ++c) {
        double z = 0.0;
        for (std::uint32_t w = 0; w < vocab_.size(); ++w) z += weight(c, w);
        normalizers_[c] = z;
      }
    }
  }

  [[nodiscard]] std::string model_name() const override {
    return std::string(uniform_ ? "mock-uniform" : "mock-bigram") + ":" + std::to_string(seed_) + ":V" +
           std::to_string(vocab_.size());
  }

  [[nodiscard]] std::size_t vocabulary_size() const noexcept { return vocab_.size(); }
  [[nodiscard]] const std::vector<std::string>& vocabulary() const noexcept { return vocab_; }
  [[nodiscard]] double smoothing_floor() const noexcept { return epsilon_; }

  /// Context id used for a token string: vocabulary index, start symbol or
  /// the unknown-context id.
  [[nodiscard]] std::uint32_t context_id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? unknown_context() : it->second;
  }
  [[nodiscard]] std::uint32_t start_context() const noexcept { return static_cast<std::uint32_t>(vocab_.size()); }
  [[nodiscard]] std::uint32_t unknown_context() const noexcept {
    return static_cast<std::uint32_t>(vocab_.size() + 1);
  }

  /// P(token | context).
  [[nodiscard]] double next_token_prob(std::uint32_t context, std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return epsilon_;
    if (uniform_) return 1.0 / static_cast<double>(vocab_.size());
    const double v = static_cast<double>(vocab_.size());
    return epsilon_ + (1.0 - v * epsilon_) * weight(context, it->second) / normalizers_[context];
  }

  /// Sum of log P over tokens, chaining each token into the next context.
  [[nodiscard]] double sequence_log_prob(std::uint32_t context, std::span<const std::string> tokens) const {
    double total = 0.0;
    for (const auto& token : tokens) {
      total += std::log(next_token_prob(context, token));
      context = context_id(token);
    }
    return total;
  }

  /// Context for the first token in the mask slot.
  [[nodiscard]] std::uint32_t mask_context(std::string_view input_pattern) const {
    const auto mask_pos = input_pattern.find(kMask);
    const auto before = tokenize_words(input_pattern.substr(0, mask_pos));
    return before.empty() ? start_context() : context_id(before.back());
  }

  double infill_log_prob(const InfillRequest& request) override {
    validate(request);
    const auto tokens = tokenize_words(request.output_target);
    if (tokens.empty()) throw ScorerError(ErrorCode::not_encodable, request.request_id, "target has no tokens");
    return sequence_log_prob(mask_context(request.input_pattern), tokens);
  }

  std::vector<double> label_word_probs(const LabelWordsRequest& request) override {
    validate(request);
    const auto context = mask_context(request.input_pattern);
    std::vector<double> probs;
    probs.reserve(request.candidate_words.size());
    for (const auto& word : request.candidate_words) {
      const auto tokens = tokenize_words(word);
      if (tokens.empty()) {
        throw ScorerError(ErrorCode::not_encodable, request.request_id, "candidate not encodable: " + word);
      }
      probs.push_back(std::exp(sequence_log_prob(context, tokens)));
    }
    return probs;
  }

 private:
  [[nodiscard]] double weight(std::uint32_t context, std::uint32_t word) const {
    const std::uint64_t h = hash_combine(hash_combine(seed_, context), word);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return std::exp(4.0 * u);
  }

  std::uint64_t seed_;
  bool uniform_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<double> normalizers_;
  double epsilon_ = 0.0;
};

/// A few hundred frequent English words, used when no vocabulary is given.
inline const std::vector<std::string>& default_mock_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    static constexpr std::string_view words =
        "the of and to a in is was it that he she they we you i for on with as at by this be "
        "had not are but from or have an one all were her his their there been if more when will "
        "would who so no what up out about into than them can only other new some could time "
        "these two may then do first any my now such like our over man me even most made after "
        "also did many before must through back years where much your way well down should "
        "because each just those people how too little state good very make world still own see "
        "men work long get here between both life being under never day same another know while "
        "last might us great old year off come since against go came right used take three "
        "movie film book story food place city house country government president war law "
        "computers computer software internet technology data science research study scientists "
        "politics political election vote party religion religious church god faith believe "
        "positive negative bad terrible great wonderful happy sad love hate amazing awful fun "
        "boring beautiful ugly best worst news article summary report really actually seems "
        "appears becomes it's lake chicken potato horse pizza road tunnel country year";
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    std::size_t pos = 0;
    while (pos < words.size()) {
      auto end = words.find(' ', pos);
      if (end == std::string_view::npos) end = words.size();
      std::string w(words.substr(pos, end - pos));
      if (!w.empty() && seen.insert(w).second) out.push_back(std::move(w));
      pos = end + 1;
    }
    return out;
  }();
  return vocab;
}

}  // namespace ctrleval
