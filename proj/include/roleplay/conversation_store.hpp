#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "roleplay/conversation.hpp"

namespace roleplay {

/// Structural problems of a stored conversation (alternation, timestamps,
/// empty texts, config invariants).
std::vector<std::string> conversation_problems(const Conversation& c);

struct CorpusFilter {
  std::optional<TaskId> task;
  std::optional<std::string> setup_id;
  bool include_invalid = true;

  bool matches(const Conversation& c) const;
};

enum class ImportMode { lenient, strict };

struct ImportError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ImportResult {
  std::vector<Conversation> conversations;
  std::vector<ImportError> errors;
};

/// Corpus document: one JSON conversation per line.
std::string export_corpus(const std::vector<Conversation>& conversations);

/// Parses a corpus document. Lenient mode reports malformed lines and keeps
/// going; strict mode throws ValidationError at the first bad line.
ImportResult import_corpus(std::string_view document, ImportMode mode = ImportMode::lenient);

/// Reads every `*.jsonl` corpus document under `path` (or the file itself).
ImportResult load_corpus(const std::filesystem::path& path, ImportMode mode = ImportMode::lenient);
void write_corpus(const std::filesystem::path& file, const std::vector<Conversation>& conversations);

/// Session lifecycle and turn ledger.
///
/// With a root directory, each session is an append-only record file at
/// `<root>/<task>/<session_id>` and the store can be rebuilt from disk.
/// Mutations within one session are serialized; readers get a consistent
/// snapshot copy.
class ConversationStore {
 public:
  explicit ConversationStore(std::optional<std::filesystem::path> root = std::nullopt,
                             std::shared_ptr<Clock> clock = std::make_shared<SystemClock>());

  std::string create_session(const SessionConfig& config);

  /// Appends a turn and returns its index. Throws NotFoundError for an
  /// unknown session and ValidationError when speakers would not alternate.
  std::size_t append_turn(const std::string& session_id, Speaker speaker, std::string text,
                          std::optional<FilterOutcome> filter = std::nullopt);

  /// Stores a complete conversation (self-chats, imports). Throws
  /// ConflictError when the id already exists.
  void add_conversation(Conversation conversation);

  void mark_invalid(const std::string& session_id, std::string reason);
  void annotate(const std::string& session_id, CriterionRating rating);

  bool contains(const std::string& session_id) const;
  Conversation get(const std::string& session_id) const;
  std::vector<Conversation> snapshot(const CorpusFilter& filter = {}) const;
  std::size_t size() const;

  std::string export_corpus(const CorpusFilter& filter = {}) const;

  /// Re-reads all session files under the root directory.
  void recover();

 private:
  struct Entry {
    mutable std::mutex mutex;
    Conversation conversation;
  };

  std::shared_ptr<Entry> find(const std::string& session_id) const;
  void persist_line(const Conversation& c, const nlohmann::json& record) const;
  std::filesystem::path session_file(const Conversation& c) const;

  std::optional<std::filesystem::path> root_;
  std::shared_ptr<Clock> clock_;
  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_id_ = 1;
};

}  // namespace roleplay
