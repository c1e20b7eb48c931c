#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctrleval {

enum class ErrorCode {
  // core
  no_evaluators,
  unnormalized_weights,
  degenerate_weights,
  // textproc
  empty_text,
  prefix_mismatch,
  empty_continuation,
  // corpus_stats
  empty_corpus,
  untokenizable_sentence,
  version_mismatch,
  truncated_file,
  malformed_header,
  // scorer
  invalid_request,
  not_encodable,
  protocol,
  transport,
  // aspects
  catalog,
  evaluator_failed,
  // metaeval
  zero_variance,
  too_short,
  // generic
  invalid_argument,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::no_evaluators: return "no_evaluators";
    case ErrorCode::unnormalized_weights: return "unnormalized_weights";
    case ErrorCode::degenerate_weights: return "degenerate_weights";
    case ErrorCode::empty_text: return "empty_text";
    case ErrorCode::prefix_mismatch: return "prefix_mismatch";
    case ErrorCode::empty_continuation: return "empty_continuation";
    case ErrorCode::empty_corpus: return "empty_corpus";
    case ErrorCode::untokenizable_sentence: return "untokenizable_sentence";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::truncated_file: return "truncated_file";
    case ErrorCode::malformed_header: return "malformed_header";
    case ErrorCode::invalid_request: return "invalid_request";
    case ErrorCode::not_encodable: return "not_encodable";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::transport: return "transport";
    case ErrorCode::catalog: return "catalog";
    case ErrorCode::evaluator_failed: return "evaluator_failed";
    case ErrorCode::zero_variance: return "zero_variance";
    case ErrorCode::too_short: return "too_short";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code next to
/// the human message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

  /// Transport failures may succeed when retried; everything else is fatal.
  [[nodiscard]] bool retriable() const noexcept { return code_ == ErrorCode::transport; }

 private:
  ErrorCode code_;
};

/// Scorer failure tied to a specific request.
class ScorerError : public Error {
 public:
  ScorerError(ErrorCode code, std::string request_id, const std::string& message)
      : Error(code, message + (request_id.empty() ? "" : " [request " + request_id + "]")),
        request_id_(std::move(request_id)) {}

  [[nodiscard]] const std::string& request_id() const noexcept { return request_id_; }

 private:
  std::string request_id_;
};

}  // namespace ctrleval
