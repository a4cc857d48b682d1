#pragma once

#include <functional>
#include <vector>

#include "roleplay/prompt_sections.hpp"

namespace roleplay {

struct TruncationResult {
  ConversationHistory kept;
  /// Removed exchange units, oldest first.
  std::vector<std::vector<HistoryTurn>> removed;

  std::size_t removed_turn_count() const;
};

/// Estimated prompt tokens when `suffix` is the history kept in the prompt.
using HistoryCost = std::function<int(const std::vector<HistoryTurn>& suffix)>;

/// Keeps the longest suffix of whole exchange units whose cost fits
/// `token_budget`; never fewer than `min_keep` units (or the whole history
/// when it is shorter). Kept turns are never edited or reordered.
TruncationResult truncate_history(const ConversationHistory& history, int token_budget,
                                  int min_keep, const HistoryCost& cost);

/// Same, costing the history alone with the default token estimator.
TruncationResult truncate_history(const ConversationHistory& history, int token_budget,
                                  int min_keep);

}  // namespace roleplay
