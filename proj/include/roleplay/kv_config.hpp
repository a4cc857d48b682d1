#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace roleplay {

/// Line-oriented `key = value` file. `#` starts a comment line; keys may
/// repeat (list-valued settings); values keep inner spaces.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& origin = "config");
  static KeyValueConfig load(const std::filesystem::path& file);

  bool has(std::string_view key) const;
  /// Last value for `key`.
  std::optional<std::string> get(std::string_view key) const;
  std::string get_or(std::string_view key, std::string fallback) const;
  std::vector<std::string> get_all(std::string_view key) const;
  int get_int(std::string_view key, int fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  /// Keys starting with `prefix`, with the prefix removed.
  std::vector<std::pair<std::string, std::string>> with_prefix(std::string_view prefix) const;

  /// Throws ConfigError naming any key outside `known` (prefix entries end in '.').
  void require_known(const std::set<std::string>& known) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace roleplay
