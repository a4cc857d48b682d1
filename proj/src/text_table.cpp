#include "roleplay/text_table.hpp"

#include <algorithm>
#include <cstdio>

#include "roleplay/errors.hpp"

namespace roleplay {

namespace {

std::size_t width(const std::string& s) {
  // UTF-8 continuation bytes do not start a code point.
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}

}  // namespace

TextTable::TextTable(std::vector<std::string> headers, std::size_t label_columns)
    : headers_(std::move(headers)), label_columns_(label_columns) {}

void TextTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != headers_.size()) {
    throw ValidationError("table row has " + std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(headers_.size()));
  }
  rows_.push_back(std::move(cells));
}

void TextTable::add_rule() {
  if (!rows_.empty() && !rows_.back().empty()) rows_.emplace_back();
}

std::string TextTable::render() const {
  std::vector<std::size_t> widths(headers_.size());
  for (std::size_t c = 0; c < headers_.size(); ++c) widths[c] = width(headers_[c]);
  for (const auto& row : rows_) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], width(row[c]));
  }
  std::size_t total = 0;
  for (auto w : widths) total += w;
  total += 2 * (widths.size() - 1);
  const std::string rule(total, '-');

  const auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string fill(widths[c] - width(cells[c]), ' ');
      if (c) out += "  ";
      out += c < label_columns_ ? cells[c] + fill : fill + cells[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };

  std::string out = line(headers_) + rule + "\n";
  for (const auto& row : rows_) out += row.empty() ? rule + "\n" : line(row);
  return out;
}

std::string fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

}  // namespace roleplay
