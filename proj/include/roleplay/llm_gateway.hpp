#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace roleplay {

enum class FinishReason { stop_marker, length_limit, backend_end };

std::string_view to_string(FinishReason r);

struct GenerationRequest {
  std::string prompt;
  int max_new_tokens = 256;
  double temperature = 0.7;
  double top_p = 0.9;
  std::vector<std::string> stop_markers;
  std::string backend_id = "mock";

  /// Chat requests must carry at least one stop marker.
  void validate(bool chat = true) const;
};

struct Completion {
  std::string text;
  FinishReason finish_reason = FinishReason::stop_marker;
  double latency_ms = 0.0;
  /// Attempts spent by complete_with_retry (1 for a direct call).
  int attempts = 1;
};

/// Transient failure (network, timeout, overload). Safe to retry.
class RetryableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Permanent failure (protocol error, bad request, exhausted retries).
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  BackendError(const std::string& message, std::vector<std::string> failures)
      : std::runtime_error(message), failures_(std::move(failures)) {}

  const std::vector<std::string>& failures() const noexcept { return failures_; }

 private:
  std::vector<std::string> failures_;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual Completion complete(const GenerationRequest& request) = 0;
};

/// Cuts `raw` at the first stop marker or after `max_new_tokens`
/// whitespace-delimited words, whichever comes first.
Completion shape_completion(std::string_view raw, const std::vector<std::string>& stop_markers,
                            int max_new_tokens);

/// 64-bit FNV-1a of the prompt, as 16 lowercase hex digits.
std::string prompt_hash(std::string_view prompt);

/// Deterministic scripted backend.
///
/// Script files hold records introduced by a `%%` header line; the
/// record text is every following line up to the next header. Header
/// options:
///   key=<hash>       answer only the prompt with this prompt_hash
///   match=<text>     answer any prompt containing <text> (not consumed)
///   fail=retryable   throw RetryableError instead of answering
///   fail=fatal       throw BackendError
///   finish=length    report length_limit
/// Records without key= or match= form the ordered script, consumed one per
/// call. Lines before the first header starting with `#` are comments; a
/// `#!loop` line makes the ordered script wrap around.
class MockBackend final : public Backend {
 public:
  enum class Failure { none, retryable, fatal };

  struct Record {
    std::string text;
    Failure failure = Failure::none;
    bool force_length_limit = false;
  };

  MockBackend() = default;
  explicit MockBackend(std::vector<std::string> responses, bool loop = false);

  static std::shared_ptr<MockBackend> parse_script(std::string_view script);
  static std::shared_ptr<MockBackend> from_file(const std::filesystem::path& file);

  void push(Record record);
  void add_keyed(const std::string& hash, Record record);
  void add_match(std::string needle, Record record);
  void set_loop(bool loop) { loop_ = loop; }

  Completion complete(const GenerationRequest& request) override;

  /// Number of completion calls served (including failures).
  std::size_t calls() const;
  std::vector<std::string> prompts() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Record> ordered_;
  std::size_t position_ = 0;
  bool loop_ = false;
  std::map<std::string, Record> keyed_;
  std::vector<std::pair<std::string, Record>> matches_;
  std::size_t calls_ = 0;
  std::vector<std::string> prompts_;
};

/// Text-in/text-out client for OpenAI-style `/v1/completions` endpoints.
class HttpBackend final : public Backend {
 public:
  struct Options {
    std::string endpoint;    // e.g. http://127.0.0.1:8000/v1/completions
    std::string model;
    std::string token_env;   // env var holding a bearer token, optional
    std::chrono::seconds timeout{60};
  };

  explicit HttpBackend(Options options);
  Completion complete(const GenerationRequest& request) override;

 private:
  Options options_;
  std::string base_;
  std::string path_;
};

/// Registry of named backends with per-backend parallelism limits.
class Gateway {
 public:
  Gateway() = default;
  Gateway(Gateway&& other) noexcept {
    std::lock_guard lock(other.mutex_);
    backends_ = std::move(other.backends_);
  }

  void register_backend(const std::string& id, std::shared_ptr<Backend> backend,
                        int parallelism = 4);
  bool has(const std::string& id) const;
  std::shared_ptr<Backend> backend(const std::string& id) const;
  std::vector<std::string> ids() const;

  Completion complete(const GenerationRequest& request) const;

  /// At most 1 + max_retries attempts; only RetryableError triggers another
  /// attempt. Exhaustion throws BackendError carrying every failure.
  Completion complete_with_retry(const GenerationRequest& request, int max_retries) const;

 private:
  struct Slot {
    std::shared_ptr<Backend> backend;
    std::unique_ptr<std::counting_semaphore<1024>> permits;
  };
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot>> backends_;
};

}  // namespace roleplay
