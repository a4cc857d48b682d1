#include <algorithm>
#include <map>
#include "roleplay/memory.hpp"

#include <fstream>
#include <sstream>

#include "roleplay/errors.hpp"
#include "roleplay/prompt_template.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

namespace {

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string single_line(std::string_view s) {
  std::string out;
  for (const auto& line : text::split_lines(s)) {
    const auto t = text::trim(line);
    if (t.empty()) continue;
    if (!out.empty()) out += "; ";
    out += t;
  }
  return out;
}

void MemoryConfig::load_templates(const std::filesystem::path& dir) {
  summary_template = read_file(dir / "summary.tmpl");
  memory_template = read_file(dir / "user_memory.tmpl");
}

MemoryConfig MemoryConfig::builtin() {
  MemoryConfig c;
  c.load_templates(asset_root() / "auxiliary");
  return c;
}

MemoryModules::MemoryModules(const Gateway& gateway, MemoryConfig config)
    : gateway_(gateway), config_(std::move(config)) {
  if (config_.cadence < 1) throw ConfigError("memory.cadence must be >= 1");
  if (config_.summary_max_sentences < 1) throw ConfigError("summary.max_sentences must be >= 1");
}

std::string MemoryModules::transcript(const std::vector<HistoryTurn>& turns) const {
  std::string out;
  for (const auto& t : turns) {
    out += t.speaker == Speaker::user ? "User: " : "Character: ";
    out += t.text;
    out += '\n';
  }
  return out;
}

std::optional<std::string> MemoryModules::call(const std::string& prompt) const {
  GenerationRequest req;
  req.prompt = prompt;
  req.backend_id = config_.backend_id;
  req.max_new_tokens = config_.decoding.max_new_tokens;
  req.temperature = config_.decoding.temperature;
  req.top_p = config_.decoding.top_p;
  req.stop_markers = {"</s>", "\nUser:", "\nCharacter:"};
  try {
    return gateway_.complete_with_retry(req, config_.max_retries).text;
  } catch (const BackendError&) {
    return std::nullopt;
  }
}

std::optional<EpisodeSummary> MemoryModules::summarize_removed(
    const std::vector<HistoryTurn>& removed_turns, std::size_t first_index,
    const std::optional<EpisodeSummary>& prior) const {
  if (removed_turns.empty()) throw ValidationError("summarize_removed needs removed turns");
  std::map<std::string, std::string> slots{
      {"max_sentences", std::to_string(config_.summary_max_sentences)},
      {"prior_summary", prior ? prior->text : std::string()},
      {"transcript", transcript(removed_turns)}};
  const auto reply = call(fill_slots(config_.summary_template, slots));
  if (!reply) return std::nullopt;
  auto summary_text = single_line(*reply);
  if (summary_text.empty()) return std::nullopt;
  const std::size_t from = prior ? prior->covers_turn_range.first : first_index;
  return EpisodeSummary{std::move(summary_text), {from, first_index + removed_turns.size() - 1}};
}

std::optional<UserMemory> MemoryModules::update_user_memory(
    const std::vector<HistoryTurn>& conversation, const std::optional<UserMemory>& prior) const {
  std::size_t user_turns = 0;
  for (const auto& t : conversation) user_turns += t.speaker == Speaker::user;
  if (user_turns == 0 || (prior && prior->last_updated_turn >= user_turns)) {
    throw ValidationError("update_user_memory needs a user turn since the last update");
  }
  std::map<std::string, std::string> slots{{"prior_memory", prior ? prior->text : std::string()},
                                           {"transcript", transcript(conversation)}};
  const auto reply = call(fill_slots(config_.memory_template, slots));
  if (!reply) return std::nullopt;
  auto line = single_line(*reply);
  if (line.empty()) return std::nullopt;
  return UserMemory{std::move(line), user_turns};
}

bool MemoryModules::memory_due(std::size_t user_turns,
                               const std::optional<UserMemory>& prior) const {
  const std::size_t last = prior ? prior->last_updated_turn : 0;
  return config_.enabled && user_turns >= last + static_cast<std::size_t>(config_.cadence);
}

void MemoryModules::absorb_removed(const std::vector<HistoryTurn>& all_turns,
                                   std::size_t new_window_start, MemoryState& state,
                                   SituationalContext& context) const {
  state.window_start = std::max(state.window_start, new_window_start);
  if (!config_.enabled || state.summarized_upto >= state.window_start) return;
  const std::vector<HistoryTurn> removed(
      all_turns.begin() + static_cast<std::ptrdiff_t>(state.summarized_upto),
      all_turns.begin() + static_cast<std::ptrdiff_t>(state.window_start));
  ++state.summary_calls;
  auto summary = summarize_removed(removed, state.summarized_upto, state.summary);
  if (!summary) {
    state.degraded = true;
    return;
  }
  state.summary = std::move(summary);
  state.summarized_upto = state.window_start;
  context.set_unique(ContextTag::episode_summary, state.summary->text);
}

void MemoryModules::maybe_update_memory(const std::vector<HistoryTurn>& all_turns,
                                        MemoryState& state, SituationalContext& context) const {
  std::size_t user_turns = 0;
  for (const auto& t : all_turns) user_turns += t.speaker == Speaker::user;
  // A failed update leaves the memory stale, so it is retried next turn.
  if (!memory_due(user_turns, state.memory)) return;
  ++state.memory_updates;
  auto memory = update_user_memory(all_turns, state.memory);
  if (!memory) {
    state.degraded = true;
    return;
  }
  state.memory = std::move(memory);
  context.set_unique(ContextTag::user_memory, state.memory->text);
}

}  // namespace roleplay
