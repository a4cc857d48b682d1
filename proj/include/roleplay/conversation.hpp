#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "roleplay/filter_outcome.hpp"
#include "roleplay/types.hpp"

namespace roleplay {

struct DecodingParams {
  int max_new_tokens = 256;
  double temperature = 0.7;
  double top_p = 0.9;

  bool operator==(const DecodingParams&) const = default;
};

struct SessionConfig {
  /// Label grouping conversations for arena and statistics reports.
  std::string setup_id;
  TaskId task = TaskId::persona_advanced;
  std::vector<std::string> persona;
  std::optional<std::string> image_description;
  std::string backend_id = "mock";
  std::string language = "fr";
  DecodingParams decoding;

  /// Prompt variant name: shallow, advanced, fsb, int or basis.
  std::string variant() const;

  /// Every violated invariant, empty when valid.
  std::vector<std::string> problems() const;

  /// Throws ValidationError listing all problems.
  void validate() const;

  bool operator==(const SessionConfig&) const = default;
};

/// Three annotator scores for one criterion on one conversation.
struct CriterionRating {
  std::string criterion;
  std::array<int, 3> scores{};
  int median = 0;

  bool operator==(const CriterionRating&) const = default;
};

struct Turn {
  Speaker speaker;
  std::string text;
  std::int64_t timestamp = 0;
  std::optional<FilterOutcome> filter;

  bool operator==(const Turn&) const = default;
};

struct Conversation {
  std::string id;
  SessionConfig config;
  std::vector<Turn> turns;
  std::vector<CriterionRating> annotations;
  bool valid = true;
  std::string invalid_reason;

  bool operator==(const Conversation&) const = default;
};

/// Source of turn timestamps.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now() = 0;
};

/// Milliseconds since the Unix epoch.
class SystemClock final : public Clock {
 public:
  std::int64_t now() override;
};

/// Deterministic counter, used for replayable corpora.
class LogicalClock final : public Clock {
 public:
  explicit LogicalClock(std::int64_t start = 0) : next_(start) {}
  std::int64_t now() override { return next_++; }

 private:
  std::atomic<std::int64_t> next_;
};

void to_json(nlohmann::json& j, const DecodingParams& d);
void from_json(const nlohmann::json& j, DecodingParams& d);
void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);
void to_json(nlohmann::json& j, const FilterOutcome& f);
void from_json(const nlohmann::json& j, FilterOutcome& f);
void to_json(nlohmann::json& j, const CriterionRating& r);
void from_json(const nlohmann::json& j, CriterionRating& r);
void to_json(nlohmann::json& j, const Turn& t);
void from_json(const nlohmann::json& j, Turn& t);
void to_json(nlohmann::json& j, const Conversation& c);
void from_json(const nlohmann::json& j, Conversation& c);

}  // namespace roleplay
