#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrleval/scorer.hpp"

namespace ctrleval {

inline constexpr std::string_view kProtocolName = "ctrleval-scorer/1";

// ---------------------------------------------------------------------------
// Wire encoding

inline nlohmann::json encode_request(const ScorerRequest& request, const std::string& wire_id) {
  if (const auto* infill = std::get_if<InfillRequest>(&request)) {
    return {{"id", wire_id}, {"op", "infill"}, {"input", infill->input_pattern}, {"target", infill->output_target}};
  }
  const auto& lw = std::get<LabelWordsRequest>(request);
  return {{"id", wire_id}, {"op", "label_words"}, {"input", lw.input_pattern}, {"candidates", lw.candidate_words}};
}

/// Parses one request line. Throws ScorerError(protocol) on malformed input,
/// carrying whatever id could be recovered.
inline ScorerRequest decode_request(const nlohmann::json& j) {
  std::string id;
  if (j.is_object() && j.contains("id") && j["id"].is_string()) id = j["id"].get<std::string>();
  if (!j.is_object() || id.empty()) throw ScorerError(ErrorCode::protocol, id, "request without string id");
  const auto op = j.value("op", std::string{});
  if (!j.contains("input") || !j["input"].is_string()) {
    throw ScorerError(ErrorCode::protocol, id, "request without string input");
  }
  if (op == "infill") {
    if (!j.contains("target") || !j["target"].is_string()) {
      throw ScorerError(ErrorCode::protocol, id, "infill request without string target");
    }
    return InfillRequest{id, j["input"].get<std::string>(), j["target"].get<std::string>()};
  }
  if (op == "label_words") {
    if (!j.contains("candidates") || !j["candidates"].is_array()) {
      throw ScorerError(ErrorCode::protocol, id, "label_words request without candidates");
    }
    LabelWordsRequest request{id, j["input"].get<std::string>(), {}};
    for (const auto& c : j["candidates"]) {
      if (!c.is_string()) throw ScorerError(ErrorCode::protocol, id, "non-string candidate");
      request.candidate_words.push_back(c.get<std::string>());
    }
    return request;
  }
  throw ScorerError(ErrorCode::protocol, id, "unknown op: " + op);
}

inline nlohmann::json encode_result(const std::string& wire_id, const ScorerResult& result) {
  if (const auto* log_prob = std::get_if<double>(&result)) return {{"id", wire_id}, {"log_prob", *log_prob}};
  return {{"id", wire_id}, {"probs", std::get<std::vector<double>>(result)}};
}

inline nlohmann::json encode_error(const std::string& wire_id, std::string_view code, std::string_view message) {
  return {{"id", wire_id}, {"error", {{"code", code}, {"message", message}}}};
}

inline ErrorCode error_code_from_wire(std::string_view code) {
  if (code == "not_encodable") return ErrorCode::not_encodable;
  if (code == "invalid_request") return ErrorCode::invalid_request;
  return ErrorCode::protocol;
}

// ---------------------------------------------------------------------------
// Line channels

/// Bidirectional newline-delimited text stream.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(std::string_view line) = 0;
  /// Next line without the newline; nullopt at end of stream. Throws a
  /// transport error when nothing arrives within timeout_ms (negative waits
  /// forever).
  virtual std::optional<std::string> read_line(int timeout_ms) = 0;
  /// True if a complete line can be read without blocking.
  virtual bool line_ready() = 0;
};

/// Channel over a pair of file descriptors (pipes or a socket).
class FdChannel : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd, bool owns = true) : read_fd_(read_fd), write_fd_(write_fd), owns_(owns) {}
  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;
  ~FdChannel() override { close_fds(); }

  void write_line(std::string_view line) override {
    std::string buffer(line);
    buffer += '\n';
    std::size_t sent = 0;
    while (sent < buffer.size()) {
      const ssize_t n = write_some(buffer.data() + sent, buffer.size() - sent);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::transport, std::string("write failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line(int timeout_ms) override {
    for (;;) {
      if (auto line = take_line()) return line;
      if (eof_) {
        if (buffer_.empty()) return std::nullopt;
        std::string rest = std::move(buffer_);
        buffer_.clear();
        return rest;
      }
      if (!wait_readable(timeout_ms)) throw Error(ErrorCode::transport, "timed out waiting for scorer response");
      fill();
    }
  }

  bool line_ready() override {
    if (buffer_.find('\n') != std::string::npos) return true;
    while (!eof_ && wait_readable(0)) {
      fill();
      if (buffer_.find('\n') != std::string::npos) return true;
    }
    return false;
  }

  void close_write() {
    if (owns_ && write_fd_ >= 0 && write_fd_ != read_fd_) {
      ::close(write_fd_);
      write_fd_ = -1;
    }
  }

 protected:
  virtual ssize_t write_some(const char* data, std::size_t size) { return ::write(write_fd_, data, size); }

  void close_fds() {
    if (!owns_) return;
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    read_fd_ = write_fd_ = -1;
  }

  int read_fd_;
  int write_fd_;

 private:
  std::optional<std::string> take_line() {
    const auto pos = buffer_.find('\n');
    if (pos == std::string::npos) return std::nullopt;
    std::string line = buffer_.substr(0, pos);
    buffer_.erase(0, pos + 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  bool wait_readable(int timeout_ms) {
    pollfd pfd{read_fd_, POLLIN, 0};
    for (;;) {
      const int rc = ::poll(&pfd, 1, timeout_ms);
      if (rc < 0 && errno == EINTR) continue;
      if (rc < 0) throw Error(ErrorCode::transport, std::string("poll failed: ") + std::strerror(errno));
      return rc > 0;
    }
  }

  void fill() {
    char chunk[65536];
    for (;;) {
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw Error(ErrorCode::transport, std::string("read failed: ") + std::strerror(errno));
      if (n == 0) eof_ = true;
      buffer_.append(chunk, static_cast<std::size_t>(n));
      return;
    }
  }

  bool owns_;
  std::string buffer_;
  bool eof_ = false;
};

/// Runs `/bin/sh -c command` and talks to its stdin/stdout.
class SubprocessChannel final : public FdChannel {
 public:
  explicit SubprocessChannel(const std::string& command) : FdChannel(-1, -1) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0) throw Error(ErrorCode::transport, "pipe failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw Error(ErrorCode::transport, "pipe failed");
    }
    pid_ = ::fork();
    if (pid_ < 0) throw Error(ErrorCode::transport, "fork failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
    ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
    read_fd_ = from_child[0];
    write_fd_ = to_child[1];
  }

  ~SubprocessChannel() override {
    close_write();
    for (int i = 0; i < 200; ++i) {
      int status = 0;
      if (::waitpid(pid_, &status, WNOHANG) != 0) {
        close_fds();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    close_fds();
  }

 private:
  pid_t pid_ = -1;
};

class SocketChannel final : public FdChannel {
 public:
  explicit SocketChannel(int fd) : FdChannel(fd, fd) {}

  static std::unique_ptr<SocketChannel> connect(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw Error(ErrorCode::transport, "cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw Error(ErrorCode::transport, "cannot connect to " + host + ":" + port);
    return std::make_unique<SocketChannel>(fd);
  }

 protected:
  ssize_t write_some(const char* data, std::size_t size) override {
    return ::send(write_fd_, data, size, MSG_NOSIGNAL);
  }
};

// ---------------------------------------------------------------------------
// Remote backend

struct RemoteOptions {
  std::size_t window = 32;     // max requests in flight
  int timeout_ms = 120000;     // per response
};

/// Client side of the JSON-lines protocol. Requests go out with wire ids
/// "q<n>"; responses may arrive in any order and are matched back by id.
class RemoteBackend final : public ScorerBackend {
 public:
  explicit RemoteBackend(std::unique_ptr<LineChannel> channel, RemoteOptions options = {})
      : channel_(std::move(channel)), options_(options) {
    if (options_.window == 0) options_.window = 1;
    auto line = channel_->read_line(options_.timeout_ms);
    if (!line) throw Error(ErrorCode::transport, "scorer closed the stream before the handshake");
    nlohmann::json hello;
    try {
      hello = nlohmann::json::parse(*line);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::protocol, "malformed handshake: " + *line);
    }
    if (!hello.is_object() || hello.value("protocol", std::string{}) != kProtocolName) {
      throw Error(ErrorCode::protocol, "unexpected handshake: " + *line);
    }
    model_ = hello.value("model", std::string{"unknown"});
  }

  [[nodiscard]] std::string model_name() const override { return model_; }

  double infill_log_prob(const InfillRequest& request) override {
    const ScorerRequest r = request;
    return std::get<double>(exchange({&r, 1}).front());
  }

  std::vector<double> label_word_probs(const LabelWordsRequest& request) override {
    const ScorerRequest r = request;
    return std::get<std::vector<double>>(exchange({&r, 1}).front());
  }

  std::vector<ScorerResult> score_batch(std::span<const ScorerRequest> requests) override {
    return exchange(requests);
  }

 private:
  std::vector<ScorerResult> exchange(std::span<const ScorerRequest> requests) {
    std::lock_guard lock(mutex_);
    if (broken_) throw Error(ErrorCode::transport, "scorer connection is broken: " + broken_reason_);

    std::vector<std::optional<ScorerResult>> results(requests.size());
    std::unordered_map<std::string, std::size_t> in_flight;
    std::optional<ScorerError> first_error;
    std::size_t next = 0, answered = 0;

    try {
      while (answered < requests.size()) {
        while (!first_error && next < requests.size() && in_flight.size() < options_.window) {
          const std::string wire_id = "q" + std::to_string(sequence_++);
          channel_->write_line(encode_request(requests[next], wire_id).dump());
          in_flight.emplace(wire_id, next++);
        }
        if (in_flight.empty()) break;
        auto line = channel_->read_line(options_.timeout_ms);
        if (!line) throw Error(ErrorCode::transport, "scorer closed the stream");
        if (trim(*line).empty()) continue;
        nlohmann::json response;
        try {
          response = nlohmann::json::parse(*line);
        } catch (const nlohmann::json::exception&) {
          throw Error(ErrorCode::protocol, "malformed response line: " + *line);
        }
        const auto wire_id = response.is_object() ? response.value("id", std::string{}) : std::string{};
        auto it = in_flight.find(wire_id);
        if (it == in_flight.end()) throw Error(ErrorCode::protocol, "response for unknown id '" + wire_id + "'");
        const std::size_t index = it->second;
        in_flight.erase(it);
        ++answered;
        const auto& caller_id = request_id(requests[index]);
        try {
          results[index] = decode_result(response, requests[index], caller_id);
        } catch (const ScorerError& e) {
          if (!first_error) first_error = e;
        }
      }
    } catch (const ScorerError&) {
      throw;
    } catch (const Error& e) {
      broken_ = true;
      broken_reason_ = e.what();
      const std::string id = next > 0 && next <= requests.size() ? request_id(requests[next - 1]) : std::string{};
      throw ScorerError(e.code(), id, e.what());
    }
    if (first_error) throw *first_error;

    std::vector<ScorerResult> out;
    out.reserve(results.size());
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
  }

  static ScorerResult decode_result(const nlohmann::json& response, const ScorerRequest& request,
                                    const std::string& caller_id) {
    if (response.contains("error")) {
      const auto& err = response["error"];
      const auto code = err.is_object() ? err.value("code", std::string{"protocol"}) : std::string{"protocol"};
      const auto message = err.is_object() ? err.value("message", std::string{}) : err.dump();
      throw ScorerError(error_code_from_wire(code), caller_id, "scorer error " + code + ": " + message);
    }
    if (const auto* lw = std::get_if<LabelWordsRequest>(&request)) {
      if (!response.contains("probs") || !response["probs"].is_array()) {
        throw ScorerError(ErrorCode::protocol, caller_id, "response without probs");
      }
      std::vector<double> probs;
      for (const auto& p : response["probs"]) {
        if (!p.is_number()) throw ScorerError(ErrorCode::protocol, caller_id, "non-numeric probability");
        probs.push_back(p.get<double>());
      }
      check_probs(caller_id, probs, lw->candidate_words.size());
      return probs;
    }
    if (!response.contains("log_prob") || !response["log_prob"].is_number()) {
      throw ScorerError(ErrorCode::protocol, caller_id, "response without log_prob");
    }
    const double log_prob = response["log_prob"].get<double>();
    check_log_prob(caller_id, log_prob);
    return log_prob;
  }

  std::unique_ptr<LineChannel> channel_;
  RemoteOptions options_;
  std::string model_;
  std::mutex mutex_;
  std::uint64_t sequence_ = 0;
  bool broken_ = false;
  std::string broken_reason_;
};

// ---------------------------------------------------------------------------
// Server side

struct ServeOptions {
  /// Answer every batch of immediately available requests in reverse order.
  /// Exercises id correlation in clients.
  bool reverse_batches = false;
};

/// Answers protocol requests from a backend until the stream ends.
inline void serve_protocol(ScorerBackend& backend, LineChannel& channel, ServeOptions options = {}) {
  channel.write_line(nlohmann::json{{"protocol", kProtocolName}, {"model", backend.model_name()}}.dump());
  auto answer = [&backend](const std::string& line) -> nlohmann::json {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      return encode_error("", "protocol", "malformed JSON");
    }
    std::string id;
    try {
      const auto request = decode_request(j);
      id = request_id(request);
      const auto results = score_requests(backend, {&request, 1});
      return encode_result(id, results.front());
    } catch (const ScorerError& e) {
      return encode_error(e.request_id().empty() ? id : e.request_id(), to_string(e.code()), e.what());
    } catch (const Error& e) {
      return encode_error(id, to_string(e.code()), e.what());
    }
  };

  for (;;) {
    auto first = channel.read_line(-1);
    if (!first) return;
    std::vector<std::string> batch{std::move(*first)};
    if (options.reverse_batches) {
      while (channel.line_ready()) {
        auto more = channel.read_line(-1);
        if (!more) break;
        batch.push_back(std::move(*more));
      }
    }
    std::vector<std::string> responses;
    for (const auto& line : batch) {
      if (!trim(line).empty()) responses.push_back(answer(line).dump());
    }
    if (options.reverse_batches) std::reverse(responses.begin(), responses.end());
    for (const auto& r : responses) channel.write_line(r);
  }
}

// ---------------------------------------------------------------------------
// Backend specs

inline std::vector<std::string> load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open vocabulary file: " + path);
  std::vector<std::string> vocab;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    for (auto& token : tokenize_words(line)) {
      if (seen.insert(token).second) vocab.push_back(std::move(token));
    }
  }
  return vocab;
}

/// Parses a backend spec:
///   mock:<seed>[:<vocab-file>]      deterministic bigram mock
///   remote:exec:<shell command>     sidecar subprocess over stdio
///   remote:tcp:<host>:<port>        sidecar over TCP
inline std::unique_ptr<ScorerBackend> make_backend(std::string_view spec, RemoteOptions options = {}) {
  auto fail = [&spec]() -> Error {
    return Error(ErrorCode::invalid_argument, "bad scorer spec '" + std::string(spec) +
                                                  "' (expected mock:<seed>[:vocab], remote:exec:<cmd> or "
                                                  "remote:tcp:<host>:<port>)");
  };
  if (spec.starts_with("mock:")) {
    auto rest = spec.substr(5);
    const auto colon = rest.find(':');
    const std::string seed_text(rest.substr(0, colon));
    std::uint64_t seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(seed_text, &used);
      if (used != seed_text.size()) throw fail();
    } catch (const std::logic_error&) {
      throw fail();
    }
    auto vocab = colon == std::string_view::npos ? default_mock_vocabulary()
                                                 : load_vocabulary(std::string(rest.substr(colon + 1)));
    return std::make_unique<MockBackend>(seed, std::move(vocab));
  }
  if (spec.starts_with("remote:exec:")) {
    const std::string command(spec.substr(12));
    if (trim(command).empty()) throw fail();
    return std::make_unique<RemoteBackend>(std::make_unique<SubprocessChannel>(command), options);
  }
  if (spec.starts_with("remote:tcp:")) {
    const auto rest = spec.substr(11);
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos || colon == 0) throw fail();
    return std::make_unique<RemoteBackend>(
        SocketChannel::connect(std::string(rest.substr(0, colon)), std::string(rest.substr(colon + 1))), options);
  }
  throw fail();
}

}  // namespace ctrleval
