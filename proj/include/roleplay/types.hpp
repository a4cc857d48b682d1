#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace roleplay {

enum class Speaker { user, agent };

enum class TaskId { vicuna_basis, fsb, persona_shallow, persona_advanced, int_task };

std::string_view to_string(Speaker s);
std::optional<Speaker> parse_speaker(std::string_view s);

/// Serialized names: vicuna_basis, fsb, persona_shallow, persona_advanced, int.
std::string_view to_string(TaskId t);
std::optional<TaskId> parse_task(std::string_view s);

/// True for the tasks whose prompt carries PersonaChat traits.
bool is_persona_task(TaskId t);

/// English name of a language code as used inside prompts ("fr" -> "French").
std::string language_name(std::string_view code);

}  // namespace roleplay
