#include "roleplay/tokens.hpp"

#include "roleplay/text.hpp"

namespace roleplay {

int estimate_tokens(std::string_view text) {
  // Integer form of ceil(words * 1.35) avoids floating-point rounding at
  // exact multiples.
  const auto words = static_cast<long long>(text::count_whitespace_words(text));
  return static_cast<int>((words * 135 + 99) / 100);
}

}  // namespace roleplay
