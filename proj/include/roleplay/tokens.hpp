#pragma once

#include <functional>
#include <string_view>

namespace roleplay {

/// Maps text to an estimated token count. Must be deterministic and
/// monotone in the text length.
using TokenEstimator = std::function<int(std::string_view)>;

/// Default heuristic: ceil(whitespace_word_count * 1.35).
int estimate_tokens(std::string_view text);

}  // namespace roleplay
