#include <doctest.h>

#include "roleplay/text.hpp"
#include "roleplay/tokens.hpp"

using namespace roleplay;

TEST_CASE("word tokens split on punctuation, apostrophes and hyphens") {
  CHECK(text::word_tokens("l'image est-ce") ==
        std::vector<std::string>{"l", "image", "est", "ce"});
  CHECK(text::word_tokens("aujourd’hui, très bien!") ==
        std::vector<std::string>{"aujourd", "hui", "très", "bien"});
  CHECK(text::word_tokens("  ...  ").empty());
}

TEST_CASE("lowercase handles accented capitals") {
  CHECK(text::lowercase("ÉTÉ Ça ŒUVRE") == "été ça œuvre");
  CHECK(text::capitalize_first("été") == "Été");
  CHECK(text::capitalize_first("je préfère") == "Je préfère");
  CHECK(text::capitalize_first("") == "");
}

TEST_CASE("invalid utf-8 does not crash the decoder") {
  const std::string bad = "ab\xC3";
  CHECK(text::word_tokens(bad) == std::vector<std::string>{"ab"});
}

TEST_CASE("estimate_tokens default heuristic") {
  CHECK(estimate_tokens("") == 0);
  CHECK(estimate_tokens("bonjour le monde") == 5);  // ceil(3 * 1.35)
  CHECK(estimate_tokens("un") == 2);
  // 20 words: 27 exactly, no rounding up.
  CHECK(estimate_tokens("a b c d e f g h i j k l m n o p q r s t") == 27);

  SUBCASE("monotone under concatenation") {
    const std::vector<std::string> samples{"", "bonjour", "le monde est vaste", "un deux trois",
                                           "  espaces   multiples  "};
    for (const auto& a : samples) {
      for (const auto& b : samples) {
        const auto joined = a + " " + b;
        CHECK(estimate_tokens(joined) >= std::max(estimate_tokens(a), estimate_tokens(b)));
      }
    }
  }
}
