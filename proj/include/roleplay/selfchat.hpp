#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "roleplay/conversation_store.hpp"
#include "roleplay/dialog.hpp"

namespace roleplay {

using Persona = std::vector<std::string>;

/// Blank-line separated trait blocks, `#` comment lines.
std::vector<Persona> load_personas(const std::filesystem::path& file);

/// A setup file: SessionConfig fields as `key = value` lines.
///
///   setup_id, task, persona (repeatable), image_description, backend,
///   language, max_new_tokens, temperature, top_p,
///   mock_script   scripted backend registered for this setup
///   persona_file  pool to sample from when no persona line is given
///
/// Relative paths resolve against the setup file's directory.
struct SetupSpec {
  SessionConfig config;
  std::optional<std::filesystem::path> mock_script;
  std::optional<std::filesystem::path> persona_file;

  static SetupSpec load(const std::filesystem::path& file);
  /// Registers the mock script (if any) under config.backend_id.
  void register_backend(Gateway& gateway) const;
};

struct SelfChatJob {
  SessionConfig setup_a;
  SessionConfig setup_b;
  int n_rounds = 10;
  int n_conversations = 1;
  std::uint64_t seed = 0;
  /// Cue answered by side A to produce its first message.
  std::string greeting_cue = "Bonjour !";
  /// When set, side A's first message is this text, not generated.
  std::optional<std::string> fixed_opener;
  /// Personas sampled for persona-task sides whose config has none.
  std::vector<Persona> persona_pool;
  /// Conversations generated concurrently. Turns stay sequential.
  int parallelism = 1;

  void validate() const;
};

/// Generates self-chats: side A's turns are stored as user turns, side B's
/// as agent turns; every turn carries its filter record. Conversations take
/// side A's setup metadata. A backend failure marks the conversation
/// invalid and generation moves on. When `store` is given, conversations
/// are also added to it.
std::vector<Conversation> run_selfchat(const Runtime& runtime, const SelfChatJob& job,
                                       ConversationStore* store = nullptr);

/// Replaces backend replies with faults at fixed rates, drawn from a
/// seeded generator: an empty reply, or a reply of `long_sentences`
/// sentences. Prompts containing any `exempt_markers` text (the
/// regeneration instructions) pass through untouched.
class FaultInjectingBackend final : public Backend {
 public:
  struct Rates {
    double empty = 0.0;
    double too_long = 0.0;
  };

  FaultInjectingBackend(std::shared_ptr<Backend> inner, Rates rates, std::uint64_t seed,
                        std::vector<std::string> exempt_markers, int long_sentences = 5);

  Completion complete(const GenerationRequest& request) override;

  std::size_t eligible_calls() const { return eligible_; }
  std::size_t injected_empty() const { return empty_; }
  std::size_t injected_too_long() const { return too_long_; }

 private:
  std::shared_ptr<Backend> inner_;
  Rates rates_;
  std::vector<std::string> exempt_;
  int long_sentences_;
  std::mutex mutex_;
  std::mt19937_64 rng_;
  std::atomic<std::size_t> eligible_{0}, empty_{0}, too_long_{0};
};

struct ArenaPair {
  std::string conversation_a;
  std::string conversation_b;
  std::string setup_a;
  std::string setup_b;

  bool operator==(const ArenaPair&) const = default;
};

struct PairingPolicy {
  int battles_per_pair = 10;
  int min_battles = 5;
  int max_battles = 14;
  /// Allow a conversation to appear in more than one pair once every
  /// conversation of its setup has been used.
  bool allow_reuse = true;
};

/// Pairs conversations across every pair of distinct setups (ordered by
/// setup id). Within a setup, conversations are used in id order, cycling
/// only after all have been used once. Invalid conversations are skipped.
std::vector<ArenaPair> build_arena_pairs(const std::vector<Conversation>& corpus,
                                         const PairingPolicy& policy = {});

}  // namespace roleplay
