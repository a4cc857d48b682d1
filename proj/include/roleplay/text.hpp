#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace roleplay::text {

// Whitespace trimming (ASCII whitespace only).
std::string_view trim(std::string_view s);
std::string_view trim_right(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);
std::size_t count_whitespace_words(std::string_view s);

bool starts_with(std::string_view s, std::string_view prefix);
bool ends_with(std::string_view s, std::string_view suffix);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string replace_all(std::string s, std::string_view from, std::string_view to);

// Decodes one UTF-8 code point starting at `pos`, advancing it. Invalid
// bytes decode as U+FFFD and advance by one.
char32_t decode_utf8(std::string_view s, std::size_t& pos);
void append_utf8(std::string& out, char32_t cp);

char32_t to_lower(char32_t cp);
char32_t to_upper(char32_t cp);
bool is_word_char(char32_t cp);

std::string lowercase(std::string_view s);

// Uppercases the first letter of `s`, leaving the rest untouched.
std::string capitalize_first(std::string_view s);

/// Splits text into word tokens: maximal runs of letters and digits.
/// Punctuation, apostrophes and hyphens separate tokens, so elided French
/// clitics come out on their own ("l'image" -> "l", "image").
std::vector<std::string> word_tokens(std::string_view s);

}  // namespace roleplay::text
