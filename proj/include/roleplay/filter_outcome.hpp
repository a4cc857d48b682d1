#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace roleplay {

enum class RuleId {
  persona_claim,
  paratext_translation,
  wrong_language_first_msg,
  incomplete_sentence,
  empty_response,
  int_empty,
  int_too_long,
};

std::string_view to_string(RuleId r);
std::optional<RuleId> parse_rule(std::string_view s);

/// Result of filtering one agent message. `fixed` is always a subset of
/// `detected`; `attempts` counts backend completions consumed (>= 1).
struct FilterOutcome {
  std::string final_text;
  std::set<RuleId> detected;
  std::set<RuleId> fixed;
  int attempts = 1;

  bool clean() const noexcept { return detected.empty(); }
  bool operator==(const FilterOutcome&) const = default;
};

}  // namespace roleplay
