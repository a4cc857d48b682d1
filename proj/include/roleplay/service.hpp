#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "roleplay/arena.hpp"
#include "roleplay/conversation_store.hpp"
#include "roleplay/dialog.hpp"
#include "roleplay/kv_config.hpp"
#include "roleplay/llm_gateway.hpp"
#include "roleplay/selfchat.hpp"

namespace httplib {
class Server;
}

namespace roleplay {

struct BackendSpec {
  std::string id;
  std::string kind = "mock";  // mock | http
  std::optional<std::filesystem::path> script;  // mock
  bool loop = false;                            // mock
  std::string endpoint;                         // http
  std::string model;                            // http
  std::string token_env;                        // http
  int timeout_ms = 60000;                       // http
  int parallelism = 4;
};

/// Service config file (`key = value`):
///
///   listen.host, listen.port
///   backend.<id>.kind         mock | http
///   backend.<id>.script       mock script file
///   backend.<id>.loop         wrap the ordered script
///   backend.<id>.endpoint     /v1/completions URL
///   backend.<id>.model, backend.<id>.token_env, backend.<id>.timeout_ms
///   backend.<id>.parallelism
///   templates, filter.rules, filter.wordlists, auxiliary, shots   asset paths
///   corpus_dir                session store root, recovered at startup
///   labels                    setup labels for report tables
///   ui_dir                    static web client, served under /ui
///   context_tokens, token_budget, min_keep_units, max_retries
///   memory.enabled, memory.cadence, memory.summary_sentences
///   elo.k_factor, elo.initial_rating
///   arena.battles_per_pair, arena.min_battles, arena.max_battles
///   default.task, default.language, default.backend
///
/// Relative paths resolve against the config file's directory. Asset paths
/// default to the shipped assets.
struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<BackendSpec> backends;
  std::filesystem::path templates_dir;
  std::filesystem::path filter_rules;
  std::filesystem::path wordlists_dir;
  std::filesystem::path auxiliary_dir;
  std::filesystem::path shots_file;
  std::optional<std::filesystem::path> corpus_dir;
  std::optional<std::filesystem::path> labels_file;
  std::optional<std::filesystem::path> ui_dir;
  PipelineConfig pipeline;
  bool memory_enabled = true;
  int memory_cadence = 4;
  int summary_sentences = 3;
  double k_factor = 32.0;
  double initial_rating = 1000.0;
  PairingPolicy pairing;
  TaskId default_task = TaskId::persona_advanced;
  std::string default_language = "fr";
  std::string default_backend;

  /// Shipped assets, no backends.
  static ServiceConfig defaults();
  static ServiceConfig parse(const KeyValueConfig& kv, const std::filesystem::path& base_dir);
  static ServiceConfig load(const std::filesystem::path& file);

  /// Throws ConfigError: missing paths, no backend, bad numbers.
  void validate(bool require_backend = true) const;
};

std::shared_ptr<Backend> make_backend(const BackendSpec& spec);
std::shared_ptr<Gateway> build_gateway(const std::vector<BackendSpec>& specs);
Runtime build_runtime(const ServiceConfig& config, std::shared_ptr<Gateway> gateway);

/// Conversations from a store root (session files) and/or `*.jsonl` corpus
/// documents, deduplicated by id (store first). A file is read as a corpus
/// document. Malformed corpus lines are reported in `errors`.
ImportResult load_any_corpus(const std::filesystem::path& path);

/// Task family of arena battles: persona-family tasks or INT.
enum class ArenaFamily { persona, int_task };
ArenaFamily parse_family(std::string_view name);  // throws ValidationError
ArenaFamily family_of(TaskId task);

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// HTTP surface over the chat service, the corpus and the battle ledgers.
///
///   GET  /health
///   POST /sessions                    SessionConfig -> 201 {session_id}
///   GET  /sessions/{id}               conversation
///   POST /sessions/{id}/messages      {text} -> {agent_reply, filter_flags, turn_index}
///   POST /sessions/{id}/ratings       {criterion, scores[3]} -> 201 {median}
///   GET  /arena/next-pair             ?family=persona|int, annotator via
///                                     X-Annotator-Id or ?annotator=
///   POST /arena/battles               BattleResult -> 201 {battles, elo}
///   GET  /reports/{elo|scores|stats|errors}   ?format=json|text,
///                                     ?family= (elo, scores), ?group= (stats)
class DialogServer {
 public:
  /// Builds the gateway from config.backends unless one is given.
  explicit DialogServer(ServiceConfig config, std::shared_ptr<Gateway> gateway = nullptr);
  ~DialogServer();
  DialogServer(const DialogServer&) = delete;
  DialogServer& operator=(const DialogServer&) = delete;

  /// Transport-free dispatch; the routes below delegate to it.
  HttpReply handle(const std::string& method, const std::string& path,
                   const std::multimap<std::string, std::string>& query, const std::string& body,
                   const std::string& annotator_header = {});

  void mount(httplib::Server& server);

  /// Binds config.host:port (port 0 picks a free one) and serves until stop().
  /// Returns false when binding fails.
  bool bind();
  int port() const { return bound_port_; }
  void serve();
  void stop();

  ChatService& chat() { return *chat_; }
  ConversationStore& store() { return *store_; }
  BattleLedger& ledger(ArenaFamily family);
  EloTable elo(ArenaFamily family) const;
  const ServiceConfig& config() const { return config_; }

 private:
  HttpReply create_session(const std::string& body);
  HttpReply get_session(const std::string& id);
  HttpReply post_message(const std::string& id, const std::string& body);
  HttpReply post_rating(const std::string& id, const std::string& body);
  HttpReply next_pair(const std::multimap<std::string, std::string>& query,
                      const std::string& annotator);
  HttpReply post_battle(const std::string& body, const std::string& annotator);
  HttpReply report(const std::string& kind, const std::multimap<std::string, std::string>& query);

  std::vector<Conversation> arena_corpus(ArenaFamily family) const;

  ServiceConfig config_;
  std::shared_ptr<Gateway> gateway_;
  Runtime runtime_;
  std::shared_ptr<ConversationStore> store_;
  std::unique_ptr<ChatService> chat_;
  std::unique_ptr<BattleLedger> persona_ledger_;
  std::unique_ptr<BattleLedger> int_ledger_;
  SetupLabels labels_;
  std::mutex battle_mutex_;
  std::unique_ptr<httplib::Server> server_;
  int bound_port_ = 0;
};

}  // namespace roleplay
