#include "roleplay/conversation.hpp"

#include <chrono>

#include "roleplay/errors.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

using nlohmann::json;

std::string_view to_string(RuleId r) {
  switch (r) {
    case RuleId::persona_claim: return "persona_claim";
    case RuleId::paratext_translation: return "paratext_translation";
    case RuleId::wrong_language_first_msg: return "wrong_language_first_msg";
    case RuleId::incomplete_sentence: return "incomplete_sentence";
    case RuleId::empty_response: return "empty_response";
    case RuleId::int_empty: return "int_empty";
    case RuleId::int_too_long: return "int_too_long";
  }
  return "unknown";
}

std::optional<RuleId> parse_rule(std::string_view s) {
  for (const RuleId r : {RuleId::persona_claim, RuleId::paratext_translation,
                         RuleId::wrong_language_first_msg, RuleId::incomplete_sentence,
                         RuleId::empty_response, RuleId::int_empty, RuleId::int_too_long}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

std::string SessionConfig::variant() const {
  switch (task) {
    case TaskId::vicuna_basis: return "basis";
    case TaskId::fsb: return "fsb";
    case TaskId::persona_shallow: return "shallow";
    case TaskId::persona_advanced: return "advanced";
    case TaskId::int_task: return "int";
  }
  return "unknown";
}

std::vector<std::string> SessionConfig::problems() const {
  std::vector<std::string> out;
  const bool persona_family = is_persona_task(task);
  if (persona_family && persona.empty()) out.emplace_back("persona: required for persona tasks");
  if (!persona_family && !persona.empty()) {
    out.emplace_back("persona: only allowed for persona tasks");
  }
  for (const auto& trait : persona) {
    if (text::trim(trait).empty()) {
      out.emplace_back("persona: traits must be non-empty");
      break;
    }
  }
  const bool has_image = image_description && !text::trim(*image_description).empty();
  if (task == TaskId::int_task && !has_image) {
    out.emplace_back("image_description: required for the int task");
  }
  if (task != TaskId::int_task && image_description) {
    out.emplace_back("image_description: only allowed for the int task");
  }
  if (backend_id.empty()) out.emplace_back("backend_id: must be non-empty");
  if (language.empty()) out.emplace_back("language: must be non-empty");
  if (decoding.max_new_tokens <= 0) out.emplace_back("decoding.max_new_tokens: must be positive");
  if (decoding.temperature < 0.0) out.emplace_back("decoding.temperature: must be >= 0");
  if (decoding.top_p <= 0.0 || decoding.top_p > 1.0) {
    out.emplace_back("decoding.top_p: must be in (0, 1]");
  }
  return out;
}

void SessionConfig::validate() const {
  auto found = problems();
  if (!found.empty()) throw ValidationError(std::move(found));
}

std::int64_t SystemClock::now() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

void to_json(json& j, const DecodingParams& d) {
  j = json{{"max_new_tokens", d.max_new_tokens}, {"temperature", d.temperature}, {"top_p", d.top_p}};
}

void from_json(const json& j, DecodingParams& d) {
  d = DecodingParams{};
  d.max_new_tokens = j.value("max_new_tokens", d.max_new_tokens);
  d.temperature = j.value("temperature", d.temperature);
  d.top_p = j.value("top_p", d.top_p);
}

void to_json(json& j, const SessionConfig& c) {
  j = json{{"setup_id", c.setup_id},     {"task", std::string(to_string(c.task))},
           {"persona", c.persona},       {"backend_id", c.backend_id},
           {"language", c.language},     {"decoding", c.decoding}};
  if (c.image_description) j["image_description"] = *c.image_description;
}

void from_json(const json& j, SessionConfig& c) {
  c = SessionConfig{};
  const auto task_name = j.at("task").get<std::string>();
  const auto task = parse_task(task_name);
  if (!task) throw ValidationError("unknown task '" + task_name + "'");
  c.task = *task;
  c.setup_id = j.value("setup_id", std::string{});
  c.persona = j.value("persona", std::vector<std::string>{});
  if (j.contains("image_description") && !j["image_description"].is_null()) {
    c.image_description = j["image_description"].get<std::string>();
  }
  c.backend_id = j.value("backend_id", c.backend_id);
  c.language = j.value("language", c.language);
  if (j.contains("decoding")) c.decoding = j["decoding"].get<DecodingParams>();
}

void to_json(json& j, const FilterOutcome& f) {
  auto names = [](const std::set<RuleId>& rules) {
    std::vector<std::string> out;
    for (const auto r : rules) out.emplace_back(to_string(r));
    return out;
  };
  j = json{{"detected", names(f.detected)}, {"fixed", names(f.fixed)}, {"attempts", f.attempts}};
}

void from_json(const json& j, FilterOutcome& f) {
  f = FilterOutcome{};
  auto rules = [](const json& arr) {
    std::set<RuleId> out;
    for (const auto& item : arr) {
      const auto name = item.get<std::string>();
      const auto r = parse_rule(name);
      if (!r) throw ValidationError("unknown filter rule '" + name + "'");
      out.insert(*r);
    }
    return out;
  };
  f.detected = rules(j.value("detected", json::array()));
  f.fixed = rules(j.value("fixed", json::array()));
  f.attempts = j.value("attempts", 1);
}

void to_json(json& j, const CriterionRating& r) {
  j = json{{"criterion", r.criterion}, {"scores", r.scores}, {"median", r.median}};
}

void from_json(const json& j, CriterionRating& r) {
  r.criterion = j.at("criterion").get<std::string>();
  r.scores = j.at("scores").get<std::array<int, 3>>();
  r.median = j.at("median").get<int>();
}

void to_json(json& j, const Turn& t) {
  j = json{{"speaker", std::string(to_string(t.speaker))}, {"text", t.text}, {"ts", t.timestamp}};
  if (t.filter) j["filter"] = *t.filter;
}

void from_json(const json& j, Turn& t) {
  const auto speaker_name = j.at("speaker").get<std::string>();
  const auto speaker = parse_speaker(speaker_name);
  if (!speaker) throw ValidationError("unknown speaker '" + speaker_name + "'");
  t.speaker = *speaker;
  t.text = j.at("text").get<std::string>();
  t.timestamp = j.at("ts").get<std::int64_t>();
  t.filter.reset();
  if (j.contains("filter")) t.filter = j["filter"].get<FilterOutcome>();
}

void to_json(json& j, const Conversation& c) {
  j = json{{"id", c.id},       {"config", c.config},       {"turns", c.turns},
           {"valid", c.valid}, {"invalid_reason", c.invalid_reason}};
  if (!c.annotations.empty()) j["annotations"] = c.annotations;
}

void from_json(const json& j, Conversation& c) {
  c = Conversation{};
  c.id = j.at("id").get<std::string>();
  c.config = j.at("config").get<SessionConfig>();
  c.turns = j.at("turns").get<std::vector<Turn>>();
  c.valid = j.value("valid", true);
  c.invalid_reason = j.value("invalid_reason", std::string{});
  c.annotations = j.value("annotations", std::vector<CriterionRating>{});
}

}  // namespace roleplay
