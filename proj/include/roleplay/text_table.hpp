#pragma once

#include <string>
#include <vector>

namespace roleplay {

/// Plain-text table with left-aligned first columns and right-aligned
/// numeric columns. Widths count code points, not bytes.
class TextTable {
 public:
  TextTable(std::vector<std::string> headers, std::size_t label_columns = 1);

  void add_row(std::vector<std::string> cells);
  /// Horizontal rule before the next row (a new group).
  void add_rule();
  std::string render() const;

 private:
  std::vector<std::string> headers_;
  std::size_t label_columns_;
  std::vector<std::vector<std::string>> rows_;  // empty row = rule
};

/// Fixed-point formatting ("%.*f").
std::string fixed(double value, int decimals);

}  // namespace roleplay
