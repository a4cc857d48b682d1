#include "roleplay/history.hpp"

#include <algorithm>
#include <string>

#include "roleplay/errors.hpp"
#include "roleplay/tokens.hpp"

namespace roleplay {

std::size_t TruncationResult::removed_turn_count() const {
  std::size_t n = 0;
  for (const auto& unit : removed) n += unit.size();
  return n;
}

TruncationResult truncate_history(const ConversationHistory& history, int token_budget,
                                  int min_keep, const HistoryCost& cost) {
  if (token_budget <= 0) throw ValidationError("token_budget must be positive");
  if (min_keep < 1) throw ValidationError("min_keep must be at least 1");

  const auto units = history.pairs();
  const auto floor_units = std::min(units.size(), static_cast<std::size_t>(min_keep));

  // Cost is monotone in the suffix length, so walk from the full history
  // down and stop at the first fit.
  std::size_t keep = floor_units;
  for (std::size_t n = units.size(); n > floor_units; --n) {
    const auto first = units[units.size() - n].first;
    const std::vector<HistoryTurn> suffix(history.turns.begin() + static_cast<std::ptrdiff_t>(first),
                                          history.turns.end());
    if (cost(suffix) <= token_budget) {
      keep = n;
      break;
    }
  }

  TruncationResult result;
  result.kept.k_window = history.k_window;
  const std::size_t removed_units = units.size() - keep;
  for (std::size_t u = 0; u < removed_units; ++u) {
    const auto [b, e] = units[u];
    result.removed.emplace_back(history.turns.begin() + static_cast<std::ptrdiff_t>(b),
                                history.turns.begin() + static_cast<std::ptrdiff_t>(e));
  }
  const std::size_t first_kept = removed_units == 0 ? 0 : units[removed_units].first;
  result.kept.turns.assign(history.turns.begin() + static_cast<std::ptrdiff_t>(first_kept),
                           history.turns.end());
  return result;
}

TruncationResult truncate_history(const ConversationHistory& history, int token_budget,
                                  int min_keep) {
  return truncate_history(history, token_budget, min_keep,
                          [](const std::vector<HistoryTurn>& suffix) {
                            std::string rendered;
                            for (const auto& turn : suffix) {
                              rendered += turn.speaker == Speaker::user ? "USER: " : "ASSISTANT: ";
                              rendered += turn.text;
                              rendered += '\n';
                            }
                            return estimate_tokens(rendered);
                          });
}

}  // namespace roleplay
