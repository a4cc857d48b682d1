#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "roleplay/conversation.hpp"
#include "roleplay/conversation_store.hpp"
#include "roleplay/llm_gateway.hpp"
#include "roleplay/memory.hpp"
#include "roleplay/prompt_template.hpp"
#include "roleplay/response_filter.hpp"

namespace roleplay {

struct PipelineConfig {
  /// Model context window; the prompt budget is this minus max_new_tokens.
  int context_tokens = 2048;
  /// Explicit prompt budget, overriding the computation above.
  std::optional<int> token_budget;
  /// Exchange units always kept in the prompt.
  int min_keep_units = 2;
  /// Gateway retries for transient failures of the main generation.
  int max_retries = 2;

  int budget_for(const DecodingParams& decoding) const;
};

/// Shared, read-only dependencies of the turn pipeline.
struct Runtime {
  TemplateLibrary templates;
  std::shared_ptr<Gateway> gateway;
  std::shared_ptr<const ResponseFilter> filter;
  MemoryConfig memory;
  PipelineConfig pipeline;
  std::vector<Demonstration> shots;

  /// Shipped templates, filter rules, auxiliary prompts and shots.
  static Runtime with_defaults(std::shared_ptr<Gateway> gateway);
};

/// Demonstration blocks: `persona:`, `user:` and `agent:` lines, blank-line
/// separated, `#` comments.
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& file);

struct AgentReply {
  std::string text;
  FilterOutcome filter;
  RenderedPrompt prompt;
  Completion raw;
};

/// One agent instance: a session config plus its evolving prompt state
/// (context entries, truncation window, memory).
class DialogAgent {
 public:
  DialogAgent(const Runtime& runtime, SessionConfig config);

  /// Full turn: truncate (+ summarize), render, generate, filter.
  /// `history` holds every earlier turn from this agent's point of view and
  /// never the message being answered. Throws BackendError when the main
  /// generation fails after retries.
  AgentReply respond(const std::vector<HistoryTurn>& history, const std::string& user_message);

  /// Memory refresh once an exchange is complete.
  void observe(const std::vector<HistoryTurn>& all_turns);

  /// Prompt for `history` + `user_message` after truncation, without
  /// generating.
  RenderedPrompt prepare(const std::vector<HistoryTurn>& history, const std::string& user_message);

  const SessionConfig& config() const { return config_; }
  const SituationalContext& context() const { return context_; }
  const MemoryState& memory() const { return memory_; }
  int token_budget() const;

 private:
  RenderedPrompt render(const std::vector<HistoryTurn>& window,
                        const std::string& user_message) const;
  GenerationRequest request_for(const RenderedPrompt& prompt) const;

  const Runtime& runtime_;
  SessionConfig config_;
  const PromptTemplate& template_;
  SituationalContext context_;
  MemoryState memory_;
  std::optional<MemoryModules> modules_;
};

/// Turn speakers from one side's point of view: its own turns become agent
/// turns.
std::vector<HistoryTurn> as_history(const std::vector<Turn>& turns, Speaker self = Speaker::agent);

struct MessageResult {
  std::string reply;
  FilterOutcome filter;
  std::size_t turn_index = 0;
};

/// Live human-bot sessions over a conversation store.
class ChatService {
 public:
  ChatService(std::shared_ptr<ConversationStore> store, const Runtime& runtime);

  /// Validates the config (including that its backend is registered).
  std::string create_session(const SessionConfig& config);

  /// Generates the reply first, then appends the user and agent turns
  /// together, so a backend failure leaves the session unchanged.
  MessageResult post_message(const std::string& session_id, const std::string& text);

  ConversationStore& store() { return *store_; }
  const Runtime& runtime() const { return runtime_; }

 private:
  struct Live {
    std::mutex mutex;
    std::unique_ptr<DialogAgent> agent;
  };
  std::shared_ptr<Live> live(const std::string& session_id);

  std::shared_ptr<ConversationStore> store_;
  const Runtime& runtime_;
  std::mutex live_mutex_;
  std::map<std::string, std::shared_ptr<Live>> live_;
};

}  // namespace roleplay
