#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "roleplay/conversation.hpp"

namespace roleplay {

enum class Verdict { a_wins, b_wins, tie };

std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict(std::string_view s);

/// overall, coherence, engagingness, humanness (+ achievement for INT).
std::vector<std::string> battle_criteria(bool int_task);
/// coherence, engagingness, humanness (+ achievement for INT).
std::vector<std::string> rating_criteria(bool int_task);

struct BattleResult {
  std::string conversation_a;
  std::string conversation_b;
  std::string setup_a;
  std::string setup_b;
  std::map<std::string, Verdict> verdicts;
  std::string annotator_id;
  std::int64_t timestamp = 0;

  /// Every problem against the configured criteria (exact set required).
  std::vector<std::string> problems(const std::vector<std::string>& criteria) const;

  bool operator==(const BattleResult&) const = default;
};

void to_json(nlohmann::json& j, const BattleResult& b);
void from_json(const nlohmann::json& j, BattleResult& b);

/// 1 / (1 + 10^((r_b - r_a) / 400)).
double expected_score(double r_a, double r_b);

struct EloConfig {
  double initial_rating = 1000.0;
  double k_factor = 32.0;
  std::vector<std::string> criteria = battle_criteria(false);
};

struct RankEntry {
  std::string setup_id;
  double rating = 0.0;
  /// 1-based; exact ties share a rank value.
  int rank = 0;
};

/// Ratings per criterion and setup.
class EloTable {
 public:
  explicit EloTable(EloConfig config = {});

  /// Applies r' = r + K(S - E) per criterion carrying a verdict. Absent
  /// setups start at the initial rating. Throws ValidationError for an
  /// unconfigured criterion or identical setups.
  void update(const BattleResult& battle);

  /// Fixture entry point: installs a rating directly.
  void set_rating(const std::string& criterion, const std::string& setup_id, double rating);

  double rating(const std::string& criterion, const std::string& setup_id) const;
  const std::map<std::string, double>& ratings(const std::string& criterion) const;
  std::vector<std::string> setups() const;
  std::size_t update_count() const { return updates_; }
  const EloConfig& config() const { return config_; }

  /// Descending rating, ties by setup id.
  std::vector<RankEntry> rank(const std::string& criterion) const;

  nlohmann::json to_json() const;

 private:
  void require_criterion(const std::string& criterion) const;

  EloConfig config_;
  std::map<std::string, std::map<std::string, double>> ratings_;
  std::size_t updates_ = 0;
};

/// Folds the battles in timestamp order (stable for equal timestamps).
EloTable replay(std::vector<BattleResult> battles, const EloConfig& config = {});

/// Append-only battle ledger, one JSON battle per line. Without a file
/// it only lives in memory.
class BattleLedger {
 public:
  explicit BattleLedger(std::optional<std::filesystem::path> file = std::nullopt,
                        std::vector<std::string> criteria = battle_criteria(false));

  /// Validates and appends. Throws ValidationError for bad battles and
  /// ConflictError when this annotator already judged the pair.
  void append(const BattleResult& battle);
  bool judged(const std::string& annotator_id, const std::string& conversation_a,
              const std::string& conversation_b) const;
  std::vector<BattleResult> battles() const;
  std::size_t size() const;

  /// Reads a ledger file; malformed lines throw ValidationError with the
  /// line number.
  static std::vector<BattleResult> read(const std::filesystem::path& file);

 private:
  std::optional<std::filesystem::path> file_;
  std::vector<std::string> criteria_;
  mutable std::mutex mutex_;
  std::vector<BattleResult> battles_;
};

/// Middle value of exactly three scores in 1..5.
int median_of_three(const std::vector<int>& scores);
int median_of_three(const std::array<int, 3>& scores);

/// Validated rating with its median filled in.
CriterionRating make_rating(std::string criterion, const std::array<int, 3>& scores);

struct ScoreRow {
  std::string setup_id;
  std::map<std::string, double> means;
  std::map<std::string, std::size_t> counts;
};

struct ScoreReport {
  std::vector<std::string> criteria;
  std::vector<ScoreRow> rows;  // by setup id
  /// "<conversation>: <criterion> ..." for excluded ratings.
  std::vector<std::string> missing;

  nlohmann::json to_json() const;
};

/// Mean of per-conversation medians, per setup and criterion. Only
/// conversations carrying at least one rating count as rated; a rated
/// conversation lacking a criterion (or with an invalid rating) is listed
/// in `missing` and left out of that criterion's mean.
ScoreReport aggregate_scores(const std::vector<Conversation>& corpus,
                             const std::vector<std::string>& criteria);

/// Row label of a setup in the report tables.
struct SetupLabel {
  std::string group;  // model or strategy
  std::string name;   // prompt or configuration
};
/// Labels in display order.
struct SetupLabels {
  std::vector<std::string> order;
  std::map<std::string, SetupLabel> by_setup;

  void add(const std::string& setup_id, SetupLabel label);
  bool has(const std::string& setup_id) const { return by_setup.count(setup_id) != 0; }
};

/// Model | Prompts | Overall | (1) | (2) | (3) | Rank, ranked by overall.
std::string render_elo_table(const EloTable& table, const SetupLabels& labels = {});

/// Strategy | Config. | (1) .. (n), two decimals.
std::string render_score_table(const ScoreReport& report, const SetupLabels& labels = {});

/// Loads `setup_id = group | name` lines.
SetupLabels load_setup_labels(const std::filesystem::path& file);

}  // namespace roleplay
