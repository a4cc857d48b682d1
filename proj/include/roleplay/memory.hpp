#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "roleplay/conversation.hpp"
#include "roleplay/llm_gateway.hpp"
#include "roleplay/prompt_sections.hpp"

namespace roleplay {

struct EpisodeSummary {
  std::string text;
  /// Absolute history turn indices, inclusive.
  std::pair<std::size_t, std::size_t> covers_turn_range{0, 0};

  bool operator==(const EpisodeSummary&) const = default;
};

struct UserMemory {
  std::string text;  // single line
  /// Number of user turns seen when the memory was written.
  std::size_t last_updated_turn = 0;

  bool operator==(const UserMemory&) const = default;
};

struct MemoryConfig {
  bool enabled = true;
  int cadence = 4;
  int summary_max_sentences = 3;
  std::string summary_template;
  std::string memory_template;
  std::string backend_id = "mock";
  DecodingParams decoding{128, 0.3, 0.9};
  int max_retries = 1;

  /// Shipped auxiliary prompts under the asset directory.
  static MemoryConfig builtin();
  void load_templates(const std::filesystem::path& dir);
};

/// Per-session memory bookkeeping.
struct MemoryState {
  /// First history turn still shown in the prompt.
  std::size_t window_start = 0;
  /// Turns [0, summarized_upto) are covered by `summary`.
  std::size_t summarized_upto = 0;
  std::optional<EpisodeSummary> summary;
  std::optional<UserMemory> memory;
  /// Set when an auxiliary call failed and a prior value was kept.
  bool degraded = false;
  int summary_calls = 0;
  int memory_updates = 0;  // attempts, including failed ones
};

/// The two auxiliary-prompt sub-modules of the Advanced prompt. They only
/// ever write SituationalContext entries.
class MemoryModules {
 public:
  MemoryModules(const Gateway& gateway, MemoryConfig config);

  /// Summarizes `removed_turns` (merged with `prior`), whose first turn has
  /// absolute index `first_index`. Returns nullopt on backend failure.
  std::optional<EpisodeSummary> summarize_removed(const std::vector<HistoryTurn>& removed_turns,
                                                  std::size_t first_index,
                                                  const std::optional<EpisodeSummary>& prior) const;

  /// One-line memory from the conversation so far; nullopt on backend
  /// failure or an empty answer.
  std::optional<UserMemory> update_user_memory(const std::vector<HistoryTurn>& conversation,
                                               const std::optional<UserMemory>& prior) const;

  /// True when `user_turns` has reached the next cadence step.
  bool memory_due(std::size_t user_turns, const std::optional<UserMemory>& prior) const;

  /// Summarizes turns [state.summarized_upto, new_window_start) of
  /// `all_turns` and installs the result. On failure the prior summary stays
  /// and the backlog is retried next time.
  void absorb_removed(const std::vector<HistoryTurn>& all_turns, std::size_t new_window_start,
                      MemoryState& state, SituationalContext& context) const;

  /// Runs the memory update if due and installs it.
  void maybe_update_memory(const std::vector<HistoryTurn>& all_turns, MemoryState& state,
                           SituationalContext& context) const;

  const MemoryConfig& config() const { return config_; }

 private:
  std::optional<std::string> call(const std::string& prompt) const;
  std::string transcript(const std::vector<HistoryTurn>& turns) const;

  const Gateway& gateway_;
  MemoryConfig config_;
};

/// Collapses line breaks to "; " and trims.
std::string single_line(std::string_view text);

}  // namespace roleplay
