#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "roleplay/types.hpp"

namespace roleplay {

/// The four building blocks of a dialogue prompt, in canonical order.
enum class Section : std::uint8_t { system = 0, context = 1, response = 2, history = 3 };

std::string_view to_string(Section s);

struct SystemInstructions {
  std::vector<std::string> items;
};

enum class ContextTag {
  persona_traits,
  humanity_spec,
  user_memory,
  episode_summary,
  image_description,
  general_instructions,
};

std::string_view to_string(ContextTag t);

struct ContextEntry {
  ContextTag tag;
  std::string text;
};

/// Context entries that evolve during a conversation. Every mutation bumps
/// `revision` by exactly one. user_memory and episode_summary are singletons.
class SituationalContext {
 public:
  const std::vector<ContextEntry>& entries() const noexcept { return entries_; }
  std::uint64_t revision() const noexcept { return revision_; }

  void add(ContextTag tag, std::string text);

  /// Replaces the single entry with `tag`, or appends it. Only valid for
  /// the singleton tags.
  void set_unique(ContextTag tag, std::string text);
  bool remove(ContextTag tag);

  std::optional<std::string> find(ContextTag tag) const;
  std::vector<std::string> all(ContextTag tag) const;
  std::size_t count(ContextTag tag) const;

 private:
  std::vector<ContextEntry> entries_;
  std::uint64_t revision_ = 0;
};

struct ResponseInstructions {
  std::vector<std::string> items;
  std::string target_language = "fr";
};

struct HistoryTurn {
  Speaker speaker;
  std::string text;

  bool operator==(const HistoryTurn&) const = default;
};

/// Previous messages, oldest first. Speakers alternate and texts are
/// non-empty after trimming.
struct ConversationHistory {
  std::vector<HistoryTurn> turns;
  std::optional<int> k_window;

  /// Throws ValidationError when the alternation or non-empty rule fails.
  void validate() const;

  /// Groups turns into exchange units counted from the most recent turn:
  /// each unit is two turns, except a leftover oldest turn which stands
  /// alone. Returned oldest first as [begin, end) turn indices.
  std::vector<std::pair<std::size_t, std::size_t>> pairs() const;

  /// Latest `k_window` pairs when a window is set, otherwise a copy.
  ConversationHistory windowed() const;
};

/// Reordering of the four sections. `order()[i]` is the canonical section
/// placed at output position i.
class SigmaPermutation {
 public:
  /// Throws ValidationError unless `order` is a bijection on the sections.
  explicit SigmaPermutation(std::array<int, 4> order);

  static SigmaPermutation identity();

  /// Permutation matrix acting on the column (I_s, C, I_a, X): a 1 at
  /// row i, column j puts input j at output position i.
  static SigmaPermutation from_matrix(const std::array<std::array<int, 4>, 4>& matrix);

  const std::array<Section, 4>& order() const noexcept { return order_; }
  SigmaPermutation inverse() const;

  bool operator==(const SigmaPermutation&) const = default;

 private:
  std::array<Section, 4> order_;
};

/// Built-in section order per task: identity for the persona family,
/// (I_s, X, C, I_a) for the image task.
SigmaPermutation task_sigma(TaskId task);

template <typename T>
std::array<T, 4> apply_permutation(const SigmaPermutation& sigma, const std::array<T, 4>& sections) {
  std::array<T, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = sections[static_cast<std::size_t>(sigma.order()[i])];
  }
  return out;
}

}  // namespace roleplay
