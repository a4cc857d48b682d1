#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "roleplay/prompt_template.hpp"

namespace roleplay::testing {

inline std::filesystem::path test_dir() { return ROLEPLAY_TEST_DIR; }

inline std::string read_golden(const std::string& name) {
  std::ifstream in(test_dir() / "golden" / name, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> fixture_persona() {
  return {"I have a husky named Claude.", "I am an accountant."};
}

inline ConversationHistory fixture_history() {
  ConversationHistory h;
  h.turns = {{Speaker::user, "Bonjour je m'appelle Jean-Claude"},
             {Speaker::agent, "Salut Jean, ravi de te rencontrer. Mon nom est John. Comment vas-tu?"}};
  return h;
}

inline const char* fixture_user_message() { return "Ça va bien John"; }

inline SituationalContext persona_context() {
  SituationalContext ctx;
  for (const auto& trait : fixture_persona()) ctx.add(ContextTag::persona_traits, trait);
  return ctx;
}

/// Sections for the golden rendering of `task`.
inline PromptSections golden_sections(const TemplateLibrary& lib, TaskId task) {
  const auto& tmpl = lib.get(task);
  SituationalContext ctx;
  ConversationHistory history = fixture_history();
  switch (task) {
    case TaskId::vicuna_basis:
      break;
    case TaskId::persona_shallow:
      ctx = persona_context();
      break;
    case TaskId::persona_advanced:
      ctx = persona_context();
      ctx.set_unique(ContextTag::user_memory, "User is a computer specialist with a Yorkie named Nino");
      ctx.set_unique(ContextTag::episode_summary, "The user is called Jean-Claude and has a dog.");
      break;
    case TaskId::fsb: {
      ctx = persona_context();
      auto sections = make_sections(tmpl, ctx, history, "fr");
      sections.demonstrations = {
          {{"I like to ski.", "I have two cats."},
           {{Speaker::user, "Salut !"}, {Speaker::agent, "Salut ! Tu fais du ski ?"}}},
          {{"I am a nurse."},
           {{Speaker::user, "Tu travailles où ?"}, {Speaker::agent, "À l'hôpital, de nuit."}}},
      };
      return sections;
    }
    case TaskId::int_task:
      ctx.add(ContextTag::image_description, "a pear with arms");
      history.turns = {
          {Speaker::user, "Bonjour Lilia, je vois une poire avec des bras et des pieds"},
          {Speaker::agent,
           "Je vois également une poire avec des bras et des pieds. C'est plutôt original, non ?"}};
      break;
  }
  return make_sections(tmpl, ctx, history, "fr");
}

inline const char* golden_user_message(TaskId task) {
  return task == TaskId::int_task ? "Oui, mais est-ce normal?" : fixture_user_message();
}

}  // namespace roleplay::testing

namespace roleplay::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("roleplay-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace roleplay::testing
