#include "roleplay/prompt_sections.hpp"

#include <algorithm>

#include "roleplay/errors.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

std::string_view to_string(Section s) {
  switch (s) {
    case Section::system: return "system";
    case Section::context: return "context";
    case Section::response: return "response";
    case Section::history: return "history";
  }
  return "unknown";
}

std::string_view to_string(ContextTag t) {
  switch (t) {
    case ContextTag::persona_traits: return "persona_traits";
    case ContextTag::humanity_spec: return "humanity_spec";
    case ContextTag::user_memory: return "user_memory";
    case ContextTag::episode_summary: return "episode_summary";
    case ContextTag::image_description: return "image_description";
    case ContextTag::general_instructions: return "general_instructions";
  }
  return "unknown";
}

namespace {
bool is_singleton(ContextTag tag) {
  return tag == ContextTag::user_memory || tag == ContextTag::episode_summary;
}
}  // namespace

void SituationalContext::add(ContextTag tag, std::string text) {
  if (is_singleton(tag)) {
    set_unique(tag, std::move(text));
    return;
  }
  entries_.push_back({tag, std::move(text)});
  ++revision_;
}

void SituationalContext::set_unique(ContextTag tag, std::string text) {
  if (!is_singleton(tag)) {
    throw ValidationError("set_unique is only valid for user_memory and episode_summary");
  }
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [tag](const ContextEntry& e) { return e.tag == tag; });
  if (it != entries_.end()) {
    it->text = std::move(text);
  } else {
    entries_.push_back({tag, std::move(text)});
  }
  ++revision_;
}

bool SituationalContext::remove(ContextTag tag) {
  auto it = std::remove_if(entries_.begin(), entries_.end(),
                           [tag](const ContextEntry& e) { return e.tag == tag; });
  if (it == entries_.end()) return false;
  entries_.erase(it, entries_.end());
  ++revision_;
  return true;
}

std::optional<std::string> SituationalContext::find(ContextTag tag) const {
  for (const auto& e : entries_) {
    if (e.tag == tag) return e.text;
  }
  return std::nullopt;
}

std::vector<std::string> SituationalContext::all(ContextTag tag) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.tag == tag) out.push_back(e.text);
  }
  return out;
}

std::size_t SituationalContext::count(ContextTag tag) const {
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(), [tag](const ContextEntry& e) { return e.tag == tag; }));
}

void ConversationHistory::validate() const {
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (text::trim(turns[i].text).empty()) {
      problems.push_back("turn " + std::to_string(i) + " has empty text");
    }
    if (i > 0 && turns[i].speaker == turns[i - 1].speaker) {
      problems.push_back("turn " + std::to_string(i) + " does not alternate speakers");
    }
  }
  if (k_window && *k_window < 1) problems.emplace_back("k_window must be at least 1");
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

std::vector<std::pair<std::size_t, std::size_t>> ConversationHistory::pairs() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t end = turns.size();
  while (end >= 2) {
    out.emplace_back(end - 2, end);
    end -= 2;
  }
  if (end == 1) out.emplace_back(0, 1);
  std::reverse(out.begin(), out.end());
  return out;
}

ConversationHistory ConversationHistory::windowed() const {
  if (!k_window) return *this;
  const auto units = pairs();
  const auto keep = std::min<std::size_t>(units.size(), static_cast<std::size_t>(*k_window));
  ConversationHistory out;
  out.k_window = k_window;
  if (keep == 0) return out;
  const auto first = units[units.size() - keep].first;
  out.turns.assign(turns.begin() + static_cast<std::ptrdiff_t>(first), turns.end());
  return out;
}

SigmaPermutation::SigmaPermutation(std::array<int, 4> order) {
  std::array<bool, 4> seen{};
  for (std::size_t i = 0; i < 4; ++i) {
    const int v = order[i];
    if (v < 0 || v > 3 || seen[static_cast<std::size_t>(v)]) {
      throw ValidationError("section permutation is not a bijection on the four sections");
    }
    seen[static_cast<std::size_t>(v)] = true;
    order_[i] = static_cast<Section>(v);
  }
}

SigmaPermutation SigmaPermutation::identity() { return SigmaPermutation({0, 1, 2, 3}); }

SigmaPermutation SigmaPermutation::from_matrix(const std::array<std::array<int, 4>, 4>& matrix) {
  std::array<int, 4> order{-1, -1, -1, -1};
  for (std::size_t row = 0; row < 4; ++row) {
    int ones = 0;
    for (std::size_t col = 0; col < 4; ++col) {
      if (matrix[row][col] == 1) {
        ++ones;
        order[row] = static_cast<int>(col);
      } else if (matrix[row][col] != 0) {
        throw ValidationError("permutation matrix entries must be 0 or 1");
      }
    }
    if (ones != 1) throw ValidationError("permutation matrix row must contain exactly one 1");
  }
  return SigmaPermutation(order);
}

SigmaPermutation SigmaPermutation::inverse() const {
  std::array<int, 4> inv{};
  for (std::size_t i = 0; i < 4; ++i) {
    inv[static_cast<std::size_t>(order_[i])] = static_cast<int>(i);
  }
  return SigmaPermutation(inv);
}

SigmaPermutation task_sigma(TaskId task) {
  if (task == TaskId::int_task) {
    return SigmaPermutation::from_matrix({{
        {1, 0, 0, 0},
        {0, 0, 0, 1},
        {0, 1, 0, 0},
        {0, 0, 1, 0},
    }});
  }
  return SigmaPermutation::identity();
}

}  // namespace roleplay
