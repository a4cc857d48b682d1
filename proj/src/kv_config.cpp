#include "roleplay/kv_config.hpp"

#include <fstream>
#include <sstream>

#include "roleplay/errors.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

KeyValueConfig KeyValueConfig::parse(std::string_view source, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::size_t line_no = 0;
  for (const auto& raw : text::split_lines(source)) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = text::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    cfg.entries_.emplace_back(std::string(key), std::string(text::trim(line.substr(eq + 1))));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), file.string());
}

bool KeyValueConfig::has(std::string_view key) const { return get(key).has_value(); }

std::optional<std::string> KeyValueConfig::get(std::string_view key) const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->first == key) return it->second;
  }
  return std::nullopt;
}

std::string KeyValueConfig::get_or(std::string_view key, std::string fallback) const {
  auto v = get(key);
  return v ? *v : std::move(fallback);
}

std::vector<std::string> KeyValueConfig::get_all(std::string_view key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (k == key) out.push_back(v);
  }
  return out;
}

int KeyValueConfig::get_int(std::string_view key, int fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const int out = std::stoi(*v, &used);
    if (used == v->size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(origin_ + ": " + std::string(key) + " must be an integer, got '" + *v + "'");
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double out = std::stod(*v, &used);
    if (used == v->size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(origin_ + ": " + std::string(key) + " must be a number, got '" + *v + "'");
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  const auto s = text::lowercase(*v);
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  throw ConfigError(origin_ + ": " + std::string(key) + " must be a boolean, got '" + *v + "'");
}

std::vector<std::pair<std::string, std::string>> KeyValueConfig::with_prefix(
    std::string_view prefix) const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, v] : entries_) {
    if (text::starts_with(k, prefix)) out.emplace_back(k.substr(prefix.size()), v);
  }
  return out;
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : entries_) {
    if (known.count(k)) continue;
    bool prefixed = false;
    for (const auto& p : known) {
      if (!p.empty() && p.back() == '.' && text::starts_with(k, p)) prefixed = true;
    }
    if (!prefixed) throw ConfigError(origin_ + ": unknown key '" + k + "'");
  }
}

}  // namespace roleplay
