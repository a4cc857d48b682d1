#include "roleplay/llm_gateway.hpp"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "roleplay/errors.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

std::string_view to_string(FinishReason r) {
  switch (r) {
    case FinishReason::stop_marker: return "stop_marker";
    case FinishReason::length_limit: return "length_limit";
    case FinishReason::backend_end: return "backend_end";
  }
  return "unknown";
}

void GenerationRequest::validate(bool chat) const {
  std::vector<std::string> problems;
  if (max_new_tokens <= 0) problems.emplace_back("max_new_tokens must be positive");
  if (chat && stop_markers.empty()) problems.emplace_back("chat requests need stop markers");
  for (const auto& m : stop_markers) {
    if (m.empty()) problems.emplace_back("stop markers must be non-empty");
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

Completion shape_completion(std::string_view raw, const std::vector<std::string>& stop_markers,
                            int max_new_tokens) {
  std::size_t marker_pos = std::string_view::npos;
  for (const auto& marker : stop_markers) {
    const auto pos = raw.find(marker);
    if (pos < marker_pos) marker_pos = pos;
  }

  // Byte offset where the `max_new_tokens`-th word ends.
  std::size_t limit_pos = std::string_view::npos;
  int words = 0;
  bool in_word = false;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const bool space = raw[i] == ' ' || raw[i] == '\n' || raw[i] == '\t' || raw[i] == '\r';
    if (!space && !in_word) {
      if (words == max_new_tokens) {
        limit_pos = i;
        break;
      }
      ++words;
    }
    in_word = !space;
  }

  Completion out;
  if (marker_pos != std::string_view::npos && marker_pos <= limit_pos) {
    out.text = std::string(raw.substr(0, marker_pos));
    out.finish_reason = FinishReason::stop_marker;
  } else if (limit_pos != std::string_view::npos) {
    out.text = std::string(text::trim_right(raw.substr(0, limit_pos)));
    out.finish_reason = FinishReason::length_limit;
  } else {
    out.text = std::string(raw);
    out.finish_reason = FinishReason::stop_marker;
  }
  return out;
}

std::string prompt_hash(std::string_view prompt) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : prompt) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MockBackend::MockBackend(std::vector<std::string> responses, bool loop) : loop_(loop) {
  for (auto& r : responses) ordered_.push_back({std::move(r)});
}

void MockBackend::push(Record record) {
  std::lock_guard lock(mutex_);
  ordered_.push_back(std::move(record));
}

void MockBackend::add_keyed(const std::string& hash, Record record) {
  std::lock_guard lock(mutex_);
  keyed_[hash] = std::move(record);
}

void MockBackend::add_match(std::string needle, Record record) {
  std::lock_guard lock(mutex_);
  matches_.emplace_back(std::move(needle), std::move(record));
}

std::shared_ptr<MockBackend> MockBackend::parse_script(std::string_view script) {
  auto mock = std::make_shared<MockBackend>();
  struct Pending {
    Record record;
    std::string key;
    std::string match;
    std::vector<std::string> lines;
  };
  std::optional<Pending> pending;
  auto flush = [&] {
    if (!pending) return;
    std::string body;
    for (std::size_t i = 0; i < pending->lines.size(); ++i) {
      if (i > 0) body += '\n';
      body += pending->lines[i];
    }
    pending->record.text = std::move(body);
    if (!pending->key.empty()) {
      mock->keyed_[pending->key] = std::move(pending->record);
    } else if (!pending->match.empty()) {
      mock->matches_.emplace_back(pending->match, std::move(pending->record));
    } else {
      mock->ordered_.push_back(std::move(pending->record));
    }
    pending.reset();
  };

  std::size_t line_no = 0;
  for (const auto& line : text::split_lines(script)) {
    ++line_no;
    if (text::starts_with(line, "%%")) {
      flush();
      pending.emplace();
      std::string options(line.substr(2));
      // match= swallows the rest of the line so the needle may contain spaces.
      if (const auto m = options.find("match="); m != std::string::npos) {
        pending->match = std::string(text::trim(std::string_view(options).substr(m + 6)));
        options.resize(m);
      }
      std::istringstream ss(options);
      std::string opt;
      while (ss >> opt) {
        if (text::starts_with(opt, "key=")) {
          pending->key = opt.substr(4);
        } else if (opt == "fail=retryable") {
          pending->record.failure = Failure::retryable;
        } else if (opt == "fail=fatal") {
          pending->record.failure = Failure::fatal;
        } else if (opt == "finish=length") {
          pending->record.force_length_limit = true;
        } else {
          throw ValidationError("mock script line " + std::to_string(line_no) +
                                ": unknown option '" + opt + "'");
        }
      }
      continue;
    }
    if (!pending) {
      if (line == "#!loop") mock->loop_ = true;
      if (text::trim(line).empty() || text::starts_with(line, "#")) continue;
      throw ValidationError("mock script line " + std::to_string(line_no) +
                            ": text before the first %% header");
    }
    pending->lines.push_back(line);
  }
  flush();
  // Trailing blank lines inside a record are treated as separators.
  auto strip = [](Record& r) { r.text = std::string(text::trim_right(r.text)); };
  for (auto& r : mock->ordered_) strip(r);
  for (auto& [k, r] : mock->keyed_) strip(r);
  for (auto& [k, r] : mock->matches_) strip(r);
  return mock;
}

std::shared_ptr<MockBackend> MockBackend::from_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open mock script " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_script(ss.str());
}

Completion MockBackend::complete(const GenerationRequest& request) {
  Record record;
  {
    std::lock_guard lock(mutex_);
    ++calls_;
    prompts_.push_back(request.prompt);
    if (const auto it = keyed_.find(prompt_hash(request.prompt)); it != keyed_.end()) {
      record = it->second;
    } else {
      bool matched = false;
      for (const auto& [needle, r] : matches_) {
        if (request.prompt.find(needle) != std::string::npos) {
          record = r;
          matched = true;
          break;
        }
      }
      if (!matched) {
        if (position_ >= ordered_.size()) {
          if (!loop_ || ordered_.empty()) throw BackendError("mock script exhausted");
          position_ = 0;
        }
        record = ordered_[position_++];
      }
    }
  }
  switch (record.failure) {
    case Failure::retryable: throw RetryableError("mock: scripted transient failure");
    case Failure::fatal: throw BackendError("mock: scripted fatal failure");
    case Failure::none: break;
  }
  auto out = shape_completion(record.text, request.stop_markers, request.max_new_tokens);
  if (record.force_length_limit) out.finish_reason = FinishReason::length_limit;
  return out;
}

std::size_t MockBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::vector<std::string> MockBackend::prompts() const {
  std::lock_guard lock(mutex_);
  return prompts_;
}

HttpBackend::HttpBackend(Options options) : options_(std::move(options)) {
  const auto scheme = options_.endpoint.find("://");
  if (scheme == std::string::npos) {
    throw ConfigError("backend endpoint must be an absolute URL: " + options_.endpoint);
  }
  const auto path = options_.endpoint.find('/', scheme + 3);
  base_ = options_.endpoint.substr(0, path);
  path_ = path == std::string::npos ? "/v1/completions" : options_.endpoint.substr(path);
}

Completion HttpBackend::complete(const GenerationRequest& request) {
  httplib::Client client(base_);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);

  httplib::Headers headers;
  if (!options_.token_env.empty()) {
    if (const char* token = std::getenv(options_.token_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  nlohmann::json body{{"model", options_.model},
                      {"prompt", request.prompt},
                      {"max_tokens", request.max_new_tokens},
                      {"temperature", request.temperature},
                      {"top_p", request.top_p},
                      {"stop", request.stop_markers}};
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw RetryableError("http backend: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw RetryableError("http backend: status " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw BackendError("http backend: status " + std::to_string(res->status) + ": " + res->body);
  }
  try {
    const auto reply = nlohmann::json::parse(res->body);
    const auto& choice = reply.at("choices").at(0);
    const auto raw = choice.at("text").get<std::string>();
    const auto reason = choice.value("finish_reason", std::string("stop"));
    auto out = shape_completion(raw, request.stop_markers, request.max_new_tokens);
    if (reason == "length" && out.finish_reason != FinishReason::length_limit &&
        raw.size() == out.text.size()) {
      out.finish_reason = FinishReason::length_limit;
    } else if (reason != "length" && out.text.size() == raw.size()) {
      out.finish_reason = FinishReason::backend_end;
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("http backend: malformed response: ") + e.what());
  }
}

void Gateway::register_backend(const std::string& id, std::shared_ptr<Backend> backend,
                               int parallelism) {
  if (parallelism < 1) throw ConfigError("parallelism limit must be at least 1");
  auto slot = std::make_shared<Slot>();
  slot->backend = std::move(backend);
  slot->permits = std::make_unique<std::counting_semaphore<1024>>(std::min(parallelism, 1024));
  std::lock_guard lock(mutex_);
  backends_[id] = std::move(slot);
}

bool Gateway::has(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return backends_.count(id) != 0;
}

std::shared_ptr<Backend> Gateway::backend(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = backends_.find(id);
  if (it == backends_.end()) throw ConfigError("unknown backend '" + id + "'");
  return it->second->backend;
}

std::vector<std::string> Gateway::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, slot] : backends_) out.push_back(id);
  return out;
}

Completion Gateway::complete(const GenerationRequest& request) const {
  request.validate(false);
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(mutex_);
    const auto it = backends_.find(request.backend_id);
    if (it == backends_.end()) throw BackendError("unknown backend '" + request.backend_id + "'");
    slot = it->second;
  }
  slot->permits->acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{*slot->permits};
  const auto start = std::chrono::steady_clock::now();
  auto out = slot->backend->complete(request);
  out.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  out.attempts = 1;
  return out;
}

Completion Gateway::complete_with_retry(const GenerationRequest& request, int max_retries) const {
  if (max_retries < 0) throw ValidationError("max_retries must be >= 0");
  std::vector<std::string> failures;
  for (int attempt = 1; attempt <= 1 + max_retries; ++attempt) {
    try {
      auto out = complete(request);
      out.attempts = attempt;
      return out;
    } catch (const RetryableError& e) {
      failures.push_back("attempt " + std::to_string(attempt) + ": " + e.what());
    }
  }
  throw BackendError("backend '" + request.backend_id + "' failed after " +
                         std::to_string(failures.size()) + " attempts",
                     std::move(failures));
}

}  // namespace roleplay
