#include "roleplay/arena.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>

#include "roleplay/errors.hpp"
#include "roleplay/kv_config.hpp"
#include "roleplay/text.hpp"
#include "roleplay/text_table.hpp"

namespace roleplay {

using nlohmann::json;

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::a_wins: return "a_wins";
    case Verdict::b_wins: return "b_wins";
    case Verdict::tie: return "tie";
  }
  return "tie";
}

std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "a_wins") return Verdict::a_wins;
  if (s == "b_wins") return Verdict::b_wins;
  if (s == "tie") return Verdict::tie;
  return std::nullopt;
}

std::vector<std::string> battle_criteria(bool int_task) {
  std::vector<std::string> out{"overall", "coherence", "engagingness", "humanness"};
  if (int_task) out.emplace_back("achievement");
  return out;
}

std::vector<std::string> rating_criteria(bool int_task) {
  std::vector<std::string> out{"coherence", "engagingness", "humanness"};
  if (int_task) out.emplace_back("achievement");
  return out;
}

std::vector<std::string> BattleResult::problems(const std::vector<std::string>& criteria) const {
  std::vector<std::string> out;
  if (conversation_a.empty() || conversation_b.empty()) {
    out.emplace_back("conversation ids must be non-empty");
  }
  if (setup_a.empty() || setup_b.empty()) out.emplace_back("setup ids must be non-empty");
  if (setup_a == setup_b) out.emplace_back("setup_a and setup_b must differ");
  for (const auto& c : criteria) {
    if (!verdicts.count(c)) out.push_back("verdicts: missing criterion '" + c + "'");
  }
  for (const auto& [c, v] : verdicts) {
    if (std::find(criteria.begin(), criteria.end(), c) == criteria.end()) {
      out.push_back("verdicts: unconfigured criterion '" + c + "'");
    }
  }
  return out;
}

void to_json(json& j, const BattleResult& b) {
  json verdicts = json::object();
  for (const auto& [c, v] : b.verdicts) verdicts[c] = std::string(to_string(v));
  j = json{{"conversation_a", b.conversation_a}, {"conversation_b", b.conversation_b},
           {"setup_a", b.setup_a},               {"setup_b", b.setup_b},
           {"verdicts", verdicts},               {"annotator_id", b.annotator_id},
           {"timestamp", b.timestamp}};
}

void from_json(const json& j, BattleResult& b) {
  b.conversation_a = j.at("conversation_a").get<std::string>();
  b.conversation_b = j.at("conversation_b").get<std::string>();
  b.setup_a = j.at("setup_a").get<std::string>();
  b.setup_b = j.at("setup_b").get<std::string>();
  b.annotator_id = j.value("annotator_id", std::string{});
  b.timestamp = j.value("timestamp", std::int64_t{0});
  b.verdicts.clear();
  for (const auto& [c, v] : j.at("verdicts").items()) {
    const auto verdict = parse_verdict(v.get<std::string>());
    if (!verdict) throw ValidationError("verdicts." + c + ": unknown verdict");
    b.verdicts[c] = *verdict;
  }
}

double expected_score(double r_a, double r_b) {
  if (!std::isfinite(r_a) || !std::isfinite(r_b)) throw ValidationError("ratings must be finite");
  return 1.0 / (1.0 + std::pow(10.0, (r_b - r_a) / 400.0));
}

EloTable::EloTable(EloConfig config) : config_(std::move(config)) {
  if (config_.criteria.empty()) throw ConfigError("elo: at least one criterion");
  if (!(config_.k_factor > 0)) throw ConfigError("elo: k_factor must be positive");
  for (const auto& c : config_.criteria) ratings_[c];
}

void EloTable::require_criterion(const std::string& criterion) const {
  if (!ratings_.count(criterion)) {
    throw ValidationError("unconfigured criterion '" + criterion + "'");
  }
}

void EloTable::update(const BattleResult& battle) {
  if (battle.setup_a == battle.setup_b) throw ValidationError("setup_a and setup_b must differ");
  for (const auto& [criterion, verdict] : battle.verdicts) require_criterion(criterion);
  for (const auto& [criterion, verdict] : battle.verdicts) {
    auto& table = ratings_[criterion];
    auto& r_a = table.try_emplace(battle.setup_a, config_.initial_rating).first->second;
    auto& r_b = table.try_emplace(battle.setup_b, config_.initial_rating).first->second;
    const double s_a = verdict == Verdict::a_wins ? 1.0 : verdict == Verdict::b_wins ? 0.0 : 0.5;
    // One delta applied with opposite signs keeps the update exactly zero-sum.
    const double delta = config_.k_factor * (s_a - expected_score(r_a, r_b));
    r_a += delta;
    r_b -= delta;
  }
  ++updates_;
}

void EloTable::set_rating(const std::string& criterion, const std::string& setup_id, double rating) {
  require_criterion(criterion);
  ratings_[criterion][setup_id] = rating;
}

double EloTable::rating(const std::string& criterion, const std::string& setup_id) const {
  require_criterion(criterion);
  const auto& table = ratings_.at(criterion);
  const auto it = table.find(setup_id);
  return it == table.end() ? config_.initial_rating : it->second;
}

const std::map<std::string, double>& EloTable::ratings(const std::string& criterion) const {
  require_criterion(criterion);
  return ratings_.at(criterion);
}

std::vector<std::string> EloTable::setups() const {
  std::set<std::string> all;
  for (const auto& [c, table] : ratings_) {
    for (const auto& [setup, r] : table) all.insert(setup);
  }
  return {all.begin(), all.end()};
}

std::vector<RankEntry> EloTable::rank(const std::string& criterion) const {
  std::vector<RankEntry> out;
  for (const auto& setup : setups()) out.push_back({setup, rating(criterion, setup), 0});
  std::stable_sort(out.begin(), out.end(), [](const RankEntry& a, const RankEntry& b) {
    return a.rating > b.rating;  // setups() is already in id order
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].rank = i > 0 && out[i].rating == out[i - 1].rating ? out[i - 1].rank
                                                              : static_cast<int>(i) + 1;
  }
  return out;
}

json EloTable::to_json() const {
  json criteria = json::object();
  for (const auto& c : config_.criteria) {
    json rows = json::array();
    for (const auto& e : rank(c)) {
      rows.push_back({{"setup_id", e.setup_id}, {"rating", e.rating}, {"rank", e.rank}});
    }
    criteria[c] = rows;
  }
  return json{{"initial_rating", config_.initial_rating},
              {"k_factor", config_.k_factor},
              {"updates", updates_},
              {"criteria", criteria}};
}

EloTable replay(std::vector<BattleResult> battles, const EloConfig& config) {
  std::stable_sort(battles.begin(), battles.end(),
                   [](const BattleResult& a, const BattleResult& b) { return a.timestamp < b.timestamp; });
  EloTable table(config);
  for (const auto& b : battles) table.update(b);
  return table;
}

BattleLedger::BattleLedger(std::optional<std::filesystem::path> file,
                           std::vector<std::string> criteria)
    : file_(std::move(file)), criteria_(std::move(criteria)) {
  if (file_ && std::filesystem::exists(*file_)) battles_ = read(*file_);
}

bool BattleLedger::judged(const std::string& annotator_id, const std::string& conversation_a,
                          const std::string& conversation_b) const {
  std::lock_guard lock(mutex_);
  return std::any_of(battles_.begin(), battles_.end(), [&](const BattleResult& b) {
    const bool same_pair = (b.conversation_a == conversation_a && b.conversation_b == conversation_b) ||
                           (b.conversation_a == conversation_b && b.conversation_b == conversation_a);
    return same_pair && b.annotator_id == annotator_id;
  });
}

void BattleLedger::append(const BattleResult& battle) {
  auto problems = battle.problems(criteria_);
  if (!problems.empty()) throw ValidationError(std::move(problems));
  if (judged(battle.annotator_id, battle.conversation_a, battle.conversation_b)) {
    throw ConflictError("annotator '" + battle.annotator_id + "' already judged this pair");
  }
  std::lock_guard lock(mutex_);
  if (file_) {
    if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
    std::ofstream out(*file_, std::ios::binary | std::ios::app);
    if (!out) throw ConfigError("cannot append to " + file_->string());
    out << json(battle).dump() << '\n';
  }
  battles_.push_back(battle);
}

std::vector<BattleResult> BattleLedger::battles() const {
  std::lock_guard lock(mutex_);
  return battles_;
}

std::size_t BattleLedger::size() const {
  std::lock_guard lock(mutex_);
  return battles_.size();
}

std::vector<BattleResult> BattleLedger::read(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open ledger " + file.string());
  std::vector<BattleResult> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line).get<BattleResult>());
    } catch (const std::exception& e) {
      throw ValidationError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

int median_of_three(const std::array<int, 3>& s) {
  for (int v : s) {
    if (v < 1 || v > 5) throw ValidationError("scores must lie in 1..5, got " + std::to_string(v));
  }
  return std::max(std::min(s[0], s[1]), std::min(std::max(s[0], s[1]), s[2]));
}

int median_of_three(const std::vector<int>& scores) {
  if (scores.size() != 3) {
    throw ValidationError("expected exactly 3 scores, got " + std::to_string(scores.size()));
  }
  return median_of_three(std::array<int, 3>{scores[0], scores[1], scores[2]});
}

CriterionRating make_rating(std::string criterion, const std::array<int, 3>& scores) {
  const auto all = rating_criteria(true);
  if (std::find(all.begin(), all.end(), criterion) == all.end()) {
    throw ValidationError("unknown rating criterion '" + criterion + "'");
  }
  return {std::move(criterion), scores, median_of_three(scores)};
}

ScoreReport aggregate_scores(const std::vector<Conversation>& corpus,
                             const std::vector<std::string>& criteria) {
  ScoreReport report;
  report.criteria = criteria;
  std::map<std::string, std::map<std::string, std::pair<long, std::size_t>>> sums;
  for (const auto& c : corpus) {
    if (c.annotations.empty()) continue;
    auto& per_setup = sums[c.config.setup_id];
    for (const auto& criterion : criteria) {
      const auto it = std::find_if(c.annotations.begin(), c.annotations.end(),
                                   [&](const CriterionRating& r) { return r.criterion == criterion; });
      if (it == c.annotations.end()) {
        report.missing.push_back(c.id + ": " + criterion + " not rated");
        continue;
      }
      int median = 0;
      try {
        median = median_of_three(it->scores);
      } catch (const ValidationError& e) {
        report.missing.push_back(c.id + ": " + criterion + " " + e.what());
        continue;
      }
      auto& [sum, n] = per_setup[criterion];
      sum += median;
      ++n;
    }
  }
  for (const auto& [setup, per_criterion] : sums) {
    ScoreRow row;
    row.setup_id = setup;
    for (const auto& [criterion, acc] : per_criterion) {
      row.means[criterion] = static_cast<double>(acc.first) / static_cast<double>(acc.second);
      row.counts[criterion] = acc.second;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

json ScoreReport::to_json() const {
  json rows = json::array();
  for (const auto& r : this->rows) {
    json means = json::object(), counts = json::object();
    for (const auto& [c, m] : r.means) means[c] = m;
    for (const auto& [c, n] : r.counts) counts[c] = n;
    rows.push_back({{"setup_id", r.setup_id}, {"means", means}, {"counts", counts}});
  }
  return json{{"criteria", criteria}, {"rows", rows}, {"missing", missing}};
}

namespace {

SetupLabel label_of(const SetupLabels& labels, const std::string& setup) {
  const auto it = labels.by_setup.find(setup);
  return it == labels.by_setup.end() ? SetupLabel{"", setup} : it->second;
}

/// Rows grouped by label group (first appearance order), as cell pairs.
template <typename Row, typename Cells>
void grouped_rows(TextTable& table, const std::vector<Row>& rows, const SetupLabels& labels,
                  const std::function<std::string(const Row&)>& setup_of, const Cells& cells) {
  std::vector<std::string> groups;
  for (const auto& r : rows) {
    const auto g = label_of(labels, setup_of(r)).group;
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  for (const auto& g : groups) {
    table.add_rule();
    bool first = true;
    for (const auto& r : rows) {
      const auto label = label_of(labels, setup_of(r));
      if (label.group != g) continue;
      std::vector<std::string> line{first ? g : "", label.name};
      for (auto& cell : cells(r)) line.push_back(std::move(cell));
      table.add_row(std::move(line));
      first = false;
    }
  }
}

}  // namespace

std::string render_elo_table(const EloTable& elo, const SetupLabels& labels) {
  const auto& criteria = elo.config().criteria;
  const std::string overall = "overall";
  if (std::find(criteria.begin(), criteria.end(), overall) == criteria.end()) {
    throw ValidationError("the Elo table needs an 'overall' criterion");
  }
  std::vector<std::string> headers{"Model", "Prompts", "Overall"};
  std::vector<std::string> others;
  for (const auto& c : criteria) {
    if (c == overall) continue;
    others.push_back(c);
    headers.push_back("(" + std::to_string(others.size()) + ")");
  }
  headers.emplace_back("Rank");

  // Rows keep the label file's order when given, otherwise setup id order.
  std::vector<std::string> order;
  const auto rated = elo.setups();
  for (const auto& setup : labels.order) {
    if (std::find(rated.begin(), rated.end(), setup) != rated.end()) order.push_back(setup);
  }
  for (const auto& s : rated) {
    if (!labels.has(s)) order.push_back(s);
  }
  std::map<std::string, int> ranks;
  for (const auto& e : elo.rank(overall)) ranks[e.setup_id] = e.rank;

  TextTable table(headers, 2);
  const std::function<std::string(const std::string&)> id = [](const std::string& s) { return s; };
  grouped_rows(table, order, labels, id, [&](const std::string& setup) {
    std::vector<std::string> cells{fixed(elo.rating(overall, setup), 0)};
    for (const auto& c : others) cells.push_back(fixed(elo.rating(c, setup), 0));
    cells.push_back(ranks.count(setup) ? std::to_string(ranks[setup]) : "-");
    return cells;
  });
  std::string legend;
  for (std::size_t i = 0; i < others.size(); ++i) {
    legend += (i ? ", (" : "(") + std::to_string(i + 1) + ") " + others[i];
  }
  return table.render() + legend + "\n";
}

std::string render_score_table(const ScoreReport& report, const SetupLabels& labels) {
  std::vector<std::string> headers{"Strategy", "Config."};
  std::string legend;
  for (std::size_t i = 0; i < report.criteria.size(); ++i) {
    headers.push_back("(" + std::to_string(i + 1) + ")");
    legend += (i ? ", (" : "(") + std::to_string(i + 1) + ") " + report.criteria[i];
  }
  std::vector<ScoreRow> rows;
  for (const auto& setup : labels.order) {
    for (const auto& r : report.rows) {
      if (r.setup_id == setup) rows.push_back(r);
    }
  }
  for (const auto& r : report.rows) {
    if (!labels.has(r.setup_id)) rows.push_back(r);
  }
  TextTable table(headers, 2);
  const std::function<std::string(const ScoreRow&)> setup_of = [](const ScoreRow& r) {
    return r.setup_id;
  };
  grouped_rows(table, rows, labels, setup_of, [&](const ScoreRow& r) {
    std::vector<std::string> cells;
    for (const auto& c : report.criteria) {
      const auto it = r.means.find(c);
      cells.push_back(it == r.means.end() ? "-" : fixed(it->second, 2));
    }
    return cells;
  });
  return table.render() + legend + "\n";
}

void SetupLabels::add(const std::string& setup_id, SetupLabel label) {
  if (!has(setup_id)) order.push_back(setup_id);
  by_setup[setup_id] = std::move(label);
}

SetupLabels load_setup_labels(const std::filesystem::path& file) {
  const auto kv = KeyValueConfig::load(file);
  SetupLabels out;
  for (const auto& [setup, value] : kv.entries()) {
    const auto bar = value.find('|');
    if (bar == std::string::npos) {
      out.add(setup, {"", std::string(text::trim(value))});
    } else {
      out.add(setup, {std::string(text::trim(std::string_view(value).substr(0, bar))),
                      std::string(text::trim(std::string_view(value).substr(bar + 1)))});
    }
  }
  return out;
}

}  // namespace roleplay
