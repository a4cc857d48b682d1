#include "roleplay/response_filter.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "roleplay/errors.hpp"
#include "roleplay/kv_config.hpp"
#include "roleplay/prompt_template.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

namespace {

bool is_terminal(char32_t c) { return c == U'.' || c == U'!' || c == U'?' || c == U'…'; }

bool is_closer(char32_t c) {
  return c == U'"' || c == U'»' || c == U'”' || c == U'’' || c == U')' || c == U'\'';
}

bool is_space(char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; }

// True when the sentence ends in terminal punctuation, ignoring closing
// quotes and brackets.
bool ends_terminal(std::string_view s) {
  std::vector<char32_t> cps;
  for (std::size_t pos = 0; pos < s.size();) cps.push_back(text::decode_utf8(s, pos));
  while (!cps.empty() && is_closer(cps.back())) cps.pop_back();
  return !cps.empty() && is_terminal(cps.back());
}

std::string collapse_spaces(std::string s) {
  std::string out;
  for (const char c : s) {
    if (c == ' ' && !out.empty() && out.back() == ' ') continue;
    out += c;
  }
  // "mot ." left behind by a removed span.
  out = text::replace_all(std::move(out), " .", ".");
  return std::string(text::trim(out));
}

}  // namespace

FilterConfig FilterConfig::load(const std::filesystem::path& rules_file,
                                const std::filesystem::path& wordlist_dir) {
  const auto kv = KeyValueConfig::load(rules_file);
  kv.require_known({"languages", "language.min_ratio", "language.first_message_only",
                    "claim_pattern", "paratext.min_words", "paratext.strip_stage_directions",
                    "abbreviations", "persona.retry_limit", "int.too_long_sentences",
                    "int.empty_retries", "int.too_long_retries", "int.empty_instruction",
                    "int.too_long_instruction", "fallback."});
  FilterConfig c;
  c.wordlist_dir = wordlist_dir;
  if (const auto langs = kv.get("languages")) {
    c.languages.clear();
    std::istringstream ss(*langs);
    for (std::string code; ss >> code;) c.languages.push_back(code);
  }
  c.language_min_ratio = kv.get_double("language.min_ratio", c.language_min_ratio);
  c.language_first_message_only =
      kv.get_bool("language.first_message_only", c.language_first_message_only);
  c.claim_patterns = kv.get_all("claim_pattern");
  for (const auto& line : kv.get_all("abbreviations")) {
    std::istringstream ss(line);
    for (std::string a; ss >> a;) c.abbreviations.insert(a);
  }
  c.paratext_min_words = kv.get_int("paratext.min_words", c.paratext_min_words);
  c.strip_stage_directions =
      kv.get_bool("paratext.strip_stage_directions", c.strip_stage_directions);
  c.persona_retry_limit = kv.get_int("persona.retry_limit", c.persona_retry_limit);
  c.int_too_long_sentences = kv.get_int("int.too_long_sentences", c.int_too_long_sentences);
  c.int_empty_retries = kv.get_int("int.empty_retries", c.int_empty_retries);
  c.int_too_long_retries = kv.get_int("int.too_long_retries", c.int_too_long_retries);
  c.int_empty_instruction = kv.get_or("int.empty_instruction", c.int_empty_instruction);
  c.int_too_long_instruction = kv.get_or("int.too_long_instruction", c.int_too_long_instruction);
  for (const auto& [lang, line] : kv.with_prefix("fallback.")) c.fallback[lang] = line;
  if (c.persona_retry_limit < 0 || c.int_empty_retries < 0 || c.int_too_long_retries < 0) {
    throw ConfigError(rules_file.string() + ": retry limits must be >= 0");
  }
  if (c.int_too_long_sentences < 1) {
    throw ConfigError(rules_file.string() + ": int.too_long_sentences must be >= 1");
  }
  return c;
}

FilterConfig FilterConfig::builtin() {
  return load(asset_root() / "filter" / "rules.conf", asset_root() / "lang");
}

LanguageDetector::LanguageDetector(
    std::vector<std::pair<std::string, std::set<std::string>>> wordlists, double min_ratio)
    : wordlists_(std::move(wordlists)), min_ratio_(min_ratio) {}

LanguageDetector LanguageDetector::load(const std::filesystem::path& dir,
                                        const std::vector<std::string>& languages,
                                        double min_ratio) {
  std::vector<std::pair<std::string, std::set<std::string>>> lists;
  for (const auto& code : languages) {
    const auto file = dir / (code + ".txt");
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("missing wordlist " + file.string());
    std::set<std::string> words;
    for (std::string line; std::getline(in, line);) {
      const auto w = text::trim(line);
      if (w.empty() || w.front() == '#') continue;
      words.insert(text::lowercase(w));
    }
    lists.emplace_back(code, std::move(words));
  }
  return LanguageDetector(std::move(lists), min_ratio);
}

std::vector<std::pair<std::string, double>> LanguageDetector::ratios(std::string_view s) const {
  const auto tokens = text::word_tokens(text::lowercase(s));
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [code, words] : wordlists_) {
    std::size_t hits = 0;
    for (const auto& t : tokens) hits += words.count(t);
    out.emplace_back(code, tokens.empty() ? 0.0 : double(hits) / double(tokens.size()));
  }
  return out;
}

std::string LanguageDetector::detect(std::string_view s) const {
  std::string best = "unknown";
  double best_ratio = 0.0;
  for (const auto& [code, ratio] : ratios(s)) {
    if (ratio >= min_ratio_ && ratio > best_ratio) {
      best = code;
      best_ratio = ratio;
    }
  }
  return best;
}

ResponseFilter::ResponseFilter(FilterConfig config) : config_(std::move(config)) {
  detector_ = LanguageDetector::load(config_.wordlist_dir, config_.languages,
                                     config_.language_min_ratio);
  for (const auto& p : config_.claim_patterns) {
    try {
      claims_.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw ConfigError("bad claim_pattern '" + p + "': " + e.what());
    }
  }
}

const ResponseFilter& ResponseFilter::builtin() {
  static const ResponseFilter filter(FilterConfig::builtin());
  return filter;
}

std::vector<SentenceSpan> ResponseFilter::sentence_spans(std::string_view s) const {
  std::vector<SentenceSpan> out;
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < s.size() && is_space(s[pos])) ++pos;
  };
  skip_space();
  std::size_t start = pos;
  while (pos < s.size()) {
    const std::size_t at = pos;
    const char32_t c = text::decode_utf8(s, pos);
    if (!is_terminal(c)) continue;
    bool single_dot = c == U'.';
    std::size_t end = pos;
    while (end < s.size()) {
      std::size_t probe = end;
      const char32_t next = text::decode_utf8(s, probe);
      if (is_terminal(next)) {
        single_dot = false;
      } else if (!is_closer(next)) {
        break;
      }
      end = probe;
    }
    if (end < s.size() && !is_space(s[end])) {
      pos = end;
      continue;
    }
    if (single_dot) {
      // The token just before the dot, e.g. "Mme" or "p.ex".
      std::size_t w = at;
      while (w > start && !is_space(s[w - 1]) && s[w - 1] != '(' && s[w - 1] != '"') --w;
      if (config_.abbreviations.count(std::string(s.substr(w, at - w)))) {
        pos = end;
        continue;
      }
    }
    out.push_back({start, end});
    pos = end;
    skip_space();
    start = pos;
  }
  if (start < s.size()) {
    const auto rest = text::trim_right(s.substr(start));
    if (!rest.empty()) out.push_back({start, start + rest.size()});
  }
  return out;
}

std::vector<std::string> ResponseFilter::split_sentences(std::string_view s) const {
  std::vector<std::string> out;
  for (const auto& span : sentence_spans(s)) {
    out.emplace_back(s.substr(span.begin, span.end - span.begin));
  }
  return out;
}

std::string ResponseFilter::strip_persona_claims(std::string_view input, bool* found) const {
  std::string s(text::trim(input));
  bool any = false;
  // Each removal shortens the text, so this terminates.
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& span : sentence_spans(s)) {
      for (const auto& re : claims_) {
        std::smatch m;
        const auto begin = s.cbegin() + static_cast<std::ptrdiff_t>(span.begin);
        if (std::regex_search(begin, s.cend(), m, re, std::regex_constants::match_continuous) &&
            m.length(0) > 0) {
          const auto rest = text::capitalize_first(s.substr(span.begin + m.length(0)));
          s = s.substr(0, span.begin) + rest;
          any = changed = true;
          break;
        }
      }
      if (changed) break;
    }
  }
  if (found) *found = any;
  return std::string(text::trim(s));
}

std::string ResponseFilter::strip_paratext(std::string_view input,
                                           const std::string& target_language,
                                           bool* found) const {
  std::string s(text::trim(input));
  bool any = false;
  for (std::size_t open = s.find('('); open != std::string::npos; open = s.find('(', open + 1)) {
    const auto close = s.find(')', open);
    const auto inner = std::string_view(s).substr(
        open + 1, close == std::string::npos ? std::string::npos : close - open - 1);
    if (static_cast<int>(text::count_whitespace_words(inner)) < config_.paratext_min_words) {
      continue;
    }
    const auto lang = detector_.detect(inner);
    if (lang != "unknown" && lang != target_language) {
      s = std::string(text::trim_right(std::string_view(s).substr(0, open)));
      any = true;
      break;
    }
  }
  if (found) *found = any;
  return s;
}

std::string ResponseFilter::strip_stage_directions(std::string_view input, bool* found) const {
  static const std::regex stage(R"(\*[^*\n]{1,200}\*)");
  std::string s(text::trim(input));
  const bool any = config_.strip_stage_directions && std::regex_search(s, stage);
  if (any) s = collapse_spaces(std::regex_replace(s, stage, ""));
  if (found) *found = any;
  return s;
}

std::string ResponseFilter::fallback_line(const std::string& language) const {
  if (const auto it = config_.fallback.find(language); it != config_.fallback.end()) {
    return it->second;
  }
  if (const auto it = config_.fallback.find("en"); it != config_.fallback.end()) return it->second;
  return "...";
}

FilterOutcome ResponseFilter::filter_persona(const Completion& raw, bool is_first_agent_message,
                                             const std::string& target_language,
                                             const Regenerate& regenerate) const {
  FilterOutcome out;
  const bool check_language = is_first_agent_message || !config_.language_first_message_only;
  std::set<RuleId> needs_regeneration;
  Completion current = raw;
  std::string best;
  int regenerations = 0;
  bool resolved = false;

  while (true) {
    bool claim = false;
    bool stage = false;
    bool paratext = false;
    // Stage directions go first so they cannot hide a claim at a sentence start.
    std::string t = strip_stage_directions(current.text, &stage);
    t = strip_persona_claims(t, &claim);
    t = strip_paratext(t, target_language, &paratext);
    paratext = paratext || stage;
    if (claim) {
      out.detected.insert(RuleId::persona_claim);
      out.fixed.insert(RuleId::persona_claim);
    }
    if (paratext) {
      out.detected.insert(RuleId::paratext_translation);
      out.fixed.insert(RuleId::paratext_translation);
    }

    std::optional<RuleId> issue;
    if (t.empty()) {
      issue = RuleId::empty_response;
    } else {
      if (current.finish_reason == FinishReason::length_limit) {
        const auto spans = sentence_spans(t);
        const auto& last = spans.back();
        if (!ends_terminal(std::string_view(t).substr(last.begin, last.end - last.begin))) {
          out.detected.insert(RuleId::incomplete_sentence);
          if (spans.size() >= 2) {
            t = std::string(text::trim_right(std::string_view(t).substr(0, last.begin)));
            out.fixed.insert(RuleId::incomplete_sentence);
          } else {
            issue = RuleId::incomplete_sentence;
          }
        }
      }
      // Checked on the text that would be delivered, after trimming.
      if (!issue && check_language) {
        const auto lang = detector_.detect(t);
        if (lang != "unknown" && lang != target_language) issue = RuleId::wrong_language_first_msg;
      }
    }

    if (!issue) {
      out.final_text = std::move(t);
      resolved = true;
      break;
    }
    out.detected.insert(*issue);
    needs_regeneration.insert(*issue);
    if (!t.empty()) best = t;
    if (regenerations >= config_.persona_retry_limit) break;
    try {
      current = regenerate();
    } catch (const BackendError&) {
      break;
    } catch (const RetryableError&) {
      break;
    }
    ++regenerations;
  }

  if (resolved) {
    for (const auto r : needs_regeneration) out.fixed.insert(r);
  } else {
    // An incomplete sentence alone is kept over a canned line.
    out.final_text = best.empty() ? fallback_line(target_language) : best;
    for (const auto r : needs_regeneration) out.fixed.erase(r);
  }
  out.attempts = 1 + regenerations;
  return out;
}

FilterOutcome ResponseFilter::filter_int(const std::string& raw,
                                         const RegenerateWith& regenerate_with) const {
  FilterOutcome out;
  const auto meets_rules = [&](std::string_view t) {
    return !text::trim(t).empty() &&
           static_cast<int>(sentence_spans(t).size()) <= config_.int_too_long_sentences;
  };
  int regenerations = 0;
  const auto try_regenerate = [&](const std::string& instruction,
                                  std::optional<std::string>& got) {
    try {
      got = std::string(text::trim(regenerate_with(instruction)));
      ++regenerations;
      return true;
    } catch (const BackendError&) {
    } catch (const RetryableError&) {
    }
    return false;
  };

  const std::string original(text::trim(raw));
  if (original.empty()) {
    out.detected.insert(RuleId::int_empty);
    for (int k = 0; k < config_.int_empty_retries; ++k) {
      std::optional<std::string> got;
      if (!try_regenerate(config_.int_empty_instruction, got)) break;
      if (meets_rules(*got)) {
        out.final_text = *got;
        out.fixed.insert(RuleId::int_empty);
        break;
      }
    }
    // A too-long regeneration is not kept either: it would be a second,
    // unrecorded violation on the same message.
    if (!out.fixed.count(RuleId::int_empty)) out.final_text = fallback_line("fr");
  } else if (static_cast<int>(sentence_spans(original).size()) > config_.int_too_long_sentences) {
    out.detected.insert(RuleId::int_too_long);
    out.final_text = original;
    for (int k = 0; k < config_.int_too_long_retries; ++k) {
      std::optional<std::string> got;
      if (!try_regenerate(config_.int_too_long_instruction, got)) break;
      if (meets_rules(*got)) {
        out.final_text = *got;
        out.fixed.insert(RuleId::int_too_long);
        break;
      }
    }
  } else {
    out.final_text = original;
  }
  out.attempts = 1 + regenerations;
  return out;
}

std::vector<ErrorCategory> persona_error_categories() {
  return {{"Regex", {RuleId::persona_claim, RuleId::paratext_translation}},
          {"Language", {RuleId::wrong_language_first_msg}},
          {"Incomplete / Empty", {RuleId::incomplete_sentence, RuleId::empty_response}}};
}

std::vector<ErrorCategory> int_error_categories() {
  return {{"Empty", {RuleId::int_empty}}, {"Too Long", {RuleId::int_too_long}}};
}

ErrorRateReport error_report(const std::vector<Conversation>& corpus) {
  struct Tally {
    std::size_t turns = 0;
    std::vector<std::size_t> detected, fixed;
  };
  std::map<std::pair<TaskId, std::string>, Tally> tallies;
  std::size_t filtered = 0;
  for (const auto& c : corpus) {
    const bool is_int = c.config.task == TaskId::int_task;
    const auto categories = is_int ? int_error_categories() : persona_error_categories();
    auto& tally = tallies[{c.config.task, c.config.setup_id}];
    tally.detected.resize(categories.size());
    tally.fixed.resize(categories.size());
    for (const auto& turn : c.turns) {
      if (!turn.filter) continue;
      ++filtered;
      ++tally.turns;
      for (std::size_t k = 0; k < categories.size(); ++k) {
        const auto hit = [&](const std::set<RuleId>& rules) {
          return std::any_of(categories[k].rules.begin(), categories[k].rules.end(),
                             [&](RuleId r) { return rules.count(r) != 0; });
        };
        if (hit(turn.filter->detected)) ++tally.detected[k];
        if (hit(turn.filter->fixed)) ++tally.fixed[k];
      }
    }
  }
  if (filtered == 0) throw ValidationError("corpus has no filter records");

  ErrorRateReport report;
  for (const auto& [key, tally] : tallies) {
    if (tally.turns == 0) continue;
    ErrorRateReport::Row row;
    row.task = key.first;
    row.setup_id = key.second;
    row.filtered_turns = tally.turns;
    const double n = static_cast<double>(tally.turns);
    for (std::size_t k = 0; k < tally.detected.size(); ++k) {
      row.detected.push_back(double(tally.detected[k]) / n);
      row.fixed.push_back(double(tally.fixed[k]) / n);
    }
    if (row.task == TaskId::int_task) {
      row.detected_total = double(tally.detected[0] + tally.detected[1]) / n;
      row.fixed_total = double(tally.fixed[0] + tally.fixed[1]) / n;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

std::string rate(double r) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", r);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  // Byte width is fine for the ASCII labels used here.
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string ErrorRateReport::to_text() const {
  std::string out;
  std::vector<const Row*> persona, ints;
  for (const auto& r : rows) (r.task == TaskId::int_task ? ints : persona).push_back(&r);
  if (!persona.empty()) {
    out += pad("Persona Chat", 24);
    for (const auto& cat : persona_error_categories()) out += pad(cat.name, 20);
    out += "\n";
    for (const auto* r : persona) {
      out += pad(r->setup_id, 24);
      for (const double d : r->detected) out += pad(rate(d), 20);
      out += "\n";
    }
  }
  for (const auto* r : ints) {
    if (!out.empty()) out += "\n";
    out += pad("INT " + r->setup_id, 24);
    for (const auto& cat : int_error_categories()) out += pad(cat.name, 12);
    out += "Total\n";
    out += pad("Detected", 24);
    for (const double d : r->detected) out += pad(rate(d), 12);
    out += rate(*r->detected_total) + "\n";
    out += pad("Fixed", 24);
    for (const double f : r->fixed) out += pad(rate(f), 12);
    out += rate(*r->fixed_total) + "\n";
  }
  return out;
}

nlohmann::json ErrorRateReport::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    const auto categories =
        r.task == TaskId::int_task ? int_error_categories() : persona_error_categories();
    nlohmann::json detected = nlohmann::json::object(), fixed = nlohmann::json::object();
    for (std::size_t k = 0; k < categories.size(); ++k) {
      detected[categories[k].name] = r.detected[k];
      fixed[categories[k].name] = r.fixed[k];
    }
    nlohmann::json row{{"task", std::string(to_string(r.task))},
                       {"setup_id", r.setup_id},
                       {"filtered_turns", r.filtered_turns},
                       {"detected", detected}};
    if (r.task == TaskId::int_task) {
      row["fixed"] = fixed;
      row["detected"]["Total"] = *r.detected_total;
      row["fixed"]["Total"] = *r.fixed_total;
    }
    arr.push_back(std::move(row));
  }
  return arr;
}

}  // namespace roleplay
