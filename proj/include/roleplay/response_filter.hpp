#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "roleplay/conversation.hpp"
#include "roleplay/filter_outcome.hpp"
#include "roleplay/llm_gateway.hpp"

namespace roleplay {

struct FilterConfig {
  std::vector<std::string> languages{"fr", "en", "es", "de", "it"};
  double language_min_ratio = 0.05;
  bool language_first_message_only = true;
  std::vector<std::string> claim_patterns;
  std::set<std::string> abbreviations;
  int paratext_min_words = 4;
  bool strip_stage_directions = true;
  int persona_retry_limit = 2;
  int int_too_long_sentences = 3;
  int int_empty_retries = 2;
  int int_too_long_retries = 1;
  std::string int_empty_instruction = "Your response must be a sentence containing a few words.";
  std::string int_too_long_instruction = "Your response must be one sentence.";
  std::map<std::string, std::string> fallback;
  /// Directory holding `<code>.txt` stopword lists.
  std::filesystem::path wordlist_dir;

  static FilterConfig load(const std::filesystem::path& rules_file,
                           const std::filesystem::path& wordlist_dir);
  /// Shipped rules under the asset directory.
  static FilterConfig builtin();
};

/// Stopword-ratio language identification.
class LanguageDetector {
 public:
  LanguageDetector() = default;
  LanguageDetector(std::vector<std::pair<std::string, std::set<std::string>>> wordlists,
                   double min_ratio);
  static LanguageDetector load(const std::filesystem::path& dir,
                               const std::vector<std::string>& languages, double min_ratio);

  /// Fraction of word tokens found in each configured list.
  std::vector<std::pair<std::string, double>> ratios(std::string_view text) const;
  /// Highest-ratio language, earlier list winning ties; "unknown" when every
  /// ratio is below the threshold.
  std::string detect(std::string_view text) const;

  const std::vector<std::pair<std::string, std::set<std::string>>>& wordlists() const {
    return wordlists_;
  }

 private:
  std::vector<std::pair<std::string, std::set<std::string>>> wordlists_;
  double min_ratio_ = 0.05;
};

struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the last byte, trailing spaces excluded
};

class ResponseFilter {
 public:
  using Regenerate = std::function<Completion()>;
  using RegenerateWith = std::function<std::string(const std::string& extra_instruction)>;

  explicit ResponseFilter(FilterConfig config);
  static const ResponseFilter& builtin();

  std::vector<SentenceSpan> sentence_spans(std::string_view text) const;
  std::vector<std::string> split_sentences(std::string_view text) const;
  std::string detect_language(std::string_view text) const { return detector_.detect(text); }

  /// PersonaChat filter chain. `regenerate` re-issues the same request; a
  /// BackendError from it ends regeneration and keeps the best text so far.
  FilterOutcome filter_persona(const Completion& raw, bool is_first_agent_message,
                               const std::string& target_language,
                               const Regenerate& regenerate) const;

  /// INT filter: empty and too-long responses, regenerated with an extra
  /// instruction appended after the user message.
  FilterOutcome filter_int(const std::string& raw, const RegenerateWith& regenerate_with) const;

  /// Individual persona steps, exposed for audits and tests.
  std::string strip_persona_claims(std::string_view text, bool* found = nullptr) const;
  std::string strip_stage_directions(std::string_view text, bool* found = nullptr) const;
  /// Truncates at the first parenthetical in another language.
  std::string strip_paratext(std::string_view text, const std::string& target_language,
                             bool* found = nullptr) const;

  std::string fallback_line(const std::string& language) const;

  const FilterConfig& config() const { return config_; }
  const LanguageDetector& detector() const { return detector_; }

 private:
  FilterConfig config_;
  LanguageDetector detector_;
  std::vector<std::regex> claims_;
};

/// Per-setup error accounting over filtered turns.
struct ErrorCounts {
  TaskId task = TaskId::persona_shallow;
  std::string setup_id;
  std::size_t filtered_turns = 0;
  std::map<RuleId, std::size_t> detected;
  std::map<RuleId, std::size_t> fixed;
};

struct ErrorCategory {
  std::string name;
  std::set<RuleId> rules;
};

/// Table columns: Regex / Language / Incomplete-Empty for persona tasks,
/// Empty / Too Long for INT.
std::vector<ErrorCategory> persona_error_categories();
std::vector<ErrorCategory> int_error_categories();

struct ErrorRateReport {
  struct Row {
    TaskId task;
    std::string setup_id;
    std::size_t filtered_turns = 0;
    std::vector<double> detected;  // one per category
    std::vector<double> fixed;
    /// Empty + too long; only defined for INT (categories are exclusive).
    std::optional<double> detected_total;
    std::optional<double> fixed_total;
  };
  std::vector<Row> rows;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// Rates over all turns carrying a filter record. Throws ValidationError if
/// the corpus has none.
ErrorRateReport error_report(const std::vector<Conversation>& corpus);

}  // namespace roleplay
