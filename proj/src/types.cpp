#include "roleplay/types.hpp"

#include <array>
#include <utility>

namespace roleplay {

std::string_view to_string(Speaker s) { return s == Speaker::user ? "user" : "agent"; }

std::optional<Speaker> parse_speaker(std::string_view s) {
  if (s == "user") return Speaker::user;
  if (s == "agent") return Speaker::agent;
  return std::nullopt;
}

namespace {
constexpr std::array<std::pair<TaskId, std::string_view>, 5> kTaskNames{{
    {TaskId::vicuna_basis, "vicuna_basis"},
    {TaskId::fsb, "fsb"},
    {TaskId::persona_shallow, "persona_shallow"},
    {TaskId::persona_advanced, "persona_advanced"},
    {TaskId::int_task, "int"},
}};
}  // namespace

std::string_view to_string(TaskId t) {
  for (const auto& [id, name] : kTaskNames) {
    if (id == t) return name;
  }
  return "unknown";
}

std::optional<TaskId> parse_task(std::string_view s) {
  for (const auto& [id, name] : kTaskNames) {
    if (name == s) return id;
  }
  return std::nullopt;
}

bool is_persona_task(TaskId t) {
  return t == TaskId::fsb || t == TaskId::persona_shallow || t == TaskId::persona_advanced;
}

std::string language_name(std::string_view code) {
  if (code == "fr") return "French";
  if (code == "en") return "English";
  if (code == "es") return "Spanish";
  if (code == "de") return "German";
  if (code == "it") return "Italian";
  return std::string(code);
}

}  // namespace roleplay
