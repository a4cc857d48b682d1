#include "roleplay/conversation_store.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "roleplay/errors.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> conversation_problems(const Conversation& c) {
  std::vector<std::string> out;
  if (c.id.empty()) out.emplace_back("id: must be non-empty");
  for (auto& p : c.config.problems()) out.push_back("config." + p);
  for (std::size_t i = 0; i < c.turns.size(); ++i) {
    const auto& t = c.turns[i];
    if (text::trim(t.text).empty()) {
      out.push_back("turn " + std::to_string(i) + ": empty text");
    }
    if (i > 0 && t.speaker == c.turns[i - 1].speaker) {
      out.push_back("turn " + std::to_string(i) + ": speakers do not alternate");
    }
    if (i > 0 && t.timestamp <= c.turns[i - 1].timestamp) {
      out.push_back("turn " + std::to_string(i) + ": timestamp does not increase");
    }
  }
  return out;
}

bool CorpusFilter::matches(const Conversation& c) const {
  if (task && c.config.task != *task) return false;
  if (setup_id && c.config.setup_id != *setup_id) return false;
  if (!include_invalid && !c.valid) return false;
  return true;
}

std::string export_corpus(const std::vector<Conversation>& conversations) {
  std::string out;
  for (const auto& c : conversations) {
    out += json(c).dump();
    out += '\n';
  }
  return out;
}

ImportResult import_corpus(std::string_view document, ImportMode mode) {
  ImportResult result;
  std::size_t line_no = 0;
  for (const auto& line : text::split_lines(document)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    std::string error;
    try {
      auto c = json::parse(line).get<Conversation>();
      const auto problems = conversation_problems(c);
      if (problems.empty()) {
        result.conversations.push_back(std::move(c));
        continue;
      }
      error = problems.front();
    } catch (const std::exception& e) {
      error = e.what();
    }
    if (mode == ImportMode::strict) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + error);
    }
    result.errors.push_back({line_no, error});
  }
  return result;
}

namespace {

std::string read_all(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ImportResult load_corpus(const fs::path& path, ImportMode mode) {
  if (!fs::exists(path)) throw ConfigError("corpus path does not exist: " + path.string());
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  ImportResult all;
  for (const auto& file : files) {
    auto part = import_corpus(read_all(file), mode);
    for (auto& c : part.conversations) all.conversations.push_back(std::move(c));
    for (auto& e : part.errors) {
      e.message = file.filename().string() + ": " + e.message;
      all.errors.push_back(std::move(e));
    }
  }
  return all;
}

void write_corpus(const fs::path& file, const std::vector<Conversation>& conversations) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << export_corpus(conversations);
}

ConversationStore::ConversationStore(std::optional<fs::path> root, std::shared_ptr<Clock> clock)
    : root_(std::move(root)), clock_(std::move(clock)) {
  if (root_) {
    fs::create_directories(*root_);
    recover();
  }
}

fs::path ConversationStore::session_file(const Conversation& c) const {
  return *root_ / std::string(to_string(c.config.task)) / c.id;
}

void ConversationStore::persist_line(const Conversation& c, const json& record) const {
  if (!root_) return;
  const auto file = session_file(c);
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot append to " + file.string());
  out << record.dump() << '\n';
  out.flush();
}

std::string ConversationStore::create_session(const SessionConfig& config) {
  config.validate();
  auto entry = std::make_shared<Entry>();
  entry->conversation.config = config;
  std::unique_lock lock(map_mutex_);
  std::string id;
  do {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(next_id_++));
    id = buf;
  } while (sessions_.count(id) != 0);
  entry->conversation.id = id;
  persist_line(entry->conversation, json{{"kind", "session"}, {"id", id}, {"config", config}});
  sessions_.emplace(id, entry);
  return id;
}

std::shared_ptr<ConversationStore::Entry> ConversationStore::find(
    const std::string& session_id) const {
  std::shared_lock lock(map_mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  return it->second;
}

std::size_t ConversationStore::append_turn(const std::string& session_id, Speaker speaker,
                                           std::string text, std::optional<FilterOutcome> filter) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  auto& c = entry->conversation;
  if (!c.turns.empty() && c.turns.back().speaker == speaker) {
    throw ValidationError("speaker alternation violated: two consecutive " +
                          std::string(to_string(speaker)) + " turns");
  }
  if (text::trim(text).empty()) throw ValidationError("turn text must be non-empty");
  Turn turn{speaker, std::move(text), clock_->now(), std::move(filter)};
  if (!c.turns.empty() && turn.timestamp <= c.turns.back().timestamp) {
    turn.timestamp = c.turns.back().timestamp + 1;
  }
  json record = turn;
  record["kind"] = "turn";
  persist_line(c, record);
  c.turns.push_back(std::move(turn));
  return c.turns.size() - 1;
}

void ConversationStore::add_conversation(Conversation conversation) {
  auto problems = conversation_problems(conversation);
  if (!problems.empty()) throw ValidationError(std::move(problems));
  auto entry = std::make_shared<Entry>();
  std::unique_lock lock(map_mutex_);
  if (sessions_.count(conversation.id) != 0) {
    throw ConflictError("conversation '" + conversation.id + "' already exists");
  }
  persist_line(conversation, json{{"kind", "session"},
                                  {"id", conversation.id},
                                  {"config", conversation.config}});
  for (const auto& turn : conversation.turns) {
    json record = turn;
    record["kind"] = "turn";
    persist_line(conversation, record);
  }
  for (const auto& rating : conversation.annotations) {
    json record = rating;
    record["kind"] = "annotation";
    persist_line(conversation, record);
  }
  if (!conversation.valid) {
    persist_line(conversation, json{{"kind", "invalid"}, {"reason", conversation.invalid_reason}});
  }
  entry->conversation = std::move(conversation);
  sessions_.emplace(entry->conversation.id, entry);
}

void ConversationStore::mark_invalid(const std::string& session_id, std::string reason) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  persist_line(entry->conversation, json{{"kind", "invalid"}, {"reason", reason}});
  entry->conversation.valid = false;
  entry->conversation.invalid_reason = std::move(reason);
}

void ConversationStore::annotate(const std::string& session_id, CriterionRating rating) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  json record = rating;
  record["kind"] = "annotation";
  persist_line(entry->conversation, record);
  entry->conversation.annotations.push_back(std::move(rating));
}

bool ConversationStore::contains(const std::string& session_id) const {
  std::shared_lock lock(map_mutex_);
  return sessions_.count(session_id) != 0;
}

Conversation ConversationStore::get(const std::string& session_id) const {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mutex);
  return entry->conversation;
}

std::vector<Conversation> ConversationStore::snapshot(const CorpusFilter& filter) const {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::shared_lock lock(map_mutex_);
    for (const auto& [id, entry] : sessions_) entries.push_back(entry);
  }
  std::vector<Conversation> out;
  for (const auto& entry : entries) {
    std::lock_guard lock(entry->mutex);
    if (filter.matches(entry->conversation)) out.push_back(entry->conversation);
  }
  return out;
}

std::size_t ConversationStore::size() const {
  std::shared_lock lock(map_mutex_);
  return sessions_.size();
}

std::string ConversationStore::export_corpus(const CorpusFilter& filter) const {
  return roleplay::export_corpus(snapshot(filter));
}

void ConversationStore::recover() {
  if (!root_) return;
  std::unique_lock lock(map_mutex_);
  sessions_.clear();
  for (const auto& task_dir : fs::directory_iterator(*root_)) {
    if (!task_dir.is_directory()) continue;
    for (const auto& file : fs::directory_iterator(task_dir.path())) {
      // Corpus documents may sit next to session files; they are not records.
      if (!file.is_regular_file() || file.path().extension() == ".jsonl") continue;
      auto entry = std::make_shared<Entry>();
      auto& c = entry->conversation;
      std::size_t line_no = 0;
      for (const auto& line : text::split_lines(read_all(file.path()))) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
          const auto record = json::parse(line);
          const auto kind = record.at("kind").get<std::string>();
          if (kind == "session") {
            c.id = record.at("id").get<std::string>();
            c.config = record.at("config").get<SessionConfig>();
          } else if (kind == "turn") {
            c.turns.push_back(record.get<Turn>());
          } else if (kind == "annotation") {
            c.annotations.push_back(record.get<CriterionRating>());
          } else if (kind == "invalid") {
            c.valid = false;
            c.invalid_reason = record.value("reason", std::string{});
          }
        } catch (const std::exception& e) {
          throw ValidationError(file.path().string() + ":" + std::to_string(line_no) + ": " +
                                e.what());
        }
      }
      if (c.id.empty()) continue;
      if (c.id.size() == 7 && c.id[0] == 's') {
        try {
          next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(c.id.substr(1)) + 1);
        } catch (const std::exception&) {
        }
      }
      sessions_[c.id] = entry;
    }
  }
}

}  // namespace roleplay
