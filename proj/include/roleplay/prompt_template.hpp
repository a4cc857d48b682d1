#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "roleplay/prompt_sections.hpp"
#include "roleplay/tokens.hpp"
#include "roleplay/types.hpp"

namespace roleplay {

/// One few-shot demonstration (persona traits plus a short dialogue).
struct Demonstration {
  std::vector<std::string> persona;
  std::vector<HistoryTurn> dialogue;
};

/// Everything a template needs besides the latest user message.
struct PromptSections {
  SystemInstructions system;
  SituationalContext context;
  ResponseInstructions response;
  ConversationHistory history;
  std::vector<Demonstration> demonstrations;
};

struct ByteSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const ByteSpan&) const = default;
};

struct RenderedPrompt {
  std::string text;
  int token_estimate = 0;
  /// Indexed by Section (system, context, response, history).
  std::array<ByteSpan, 4> section_spans{};

  std::string_view section_text(Section s) const;

  /// Sections in the order their spans occur in `text`.
  std::array<Section, 4> order_in_text() const;
};

/// A prompt template parsed from a text asset.
///
/// Asset layout: a header of `@key value` directives (`@task`,
/// `@user_label`, `@agent_label`, `@end_of_message`, `@persona_separator`
/// with `space` or `newline`), then four `@section <name>` blocks in the
/// task's section order. Body text is verbatim except for slot markers
/// `{name}` and conditional blocks `{?name}...{/name}` that render only
/// when the slot is non-empty. The final newline of the file is dropped.
class PromptTemplate {
 public:
  static PromptTemplate parse(std::string_view source);
  static PromptTemplate load(const std::filesystem::path& file);

  TaskId task() const noexcept { return task_; }
  const std::string& user_label() const noexcept { return user_label_; }
  const std::string& agent_label() const noexcept { return agent_label_; }
  const std::string& end_of_message() const noexcept { return end_of_message_; }
  const std::string& persona_separator() const noexcept { return persona_separator_; }

  /// All slots referenced, and the subset that must be supplied.
  const std::set<std::string>& slots() const noexcept { return slots_; }
  const std::set<std::string>& required_slots() const noexcept { return required_; }

  /// Raw body of a section, slot markers included.
  const std::string& section_body(Section s) const;

  /// Template sections in the order they appear.
  std::array<Section, 4> section_order() const;

 private:
  struct Chunk {
    Section section;
    std::string body;
  };

  TaskId task_ = TaskId::vicuna_basis;
  std::string user_label_ = "USER:";
  std::string agent_label_ = "ASSISTANT:";
  std::string end_of_message_;
  std::string persona_separator_ = " ";
  std::vector<Chunk> chunks_;
  std::set<std::string> slots_;
  std::set<std::string> required_;

  friend RenderedPrompt render_prompt(const PromptTemplate&, const PromptSections&,
                                      std::string_view, const TokenEstimator&);
};

/// Built-in templates keyed by task, loaded from `<dir>/<task>.tmpl`.
class TemplateLibrary {
 public:
  static TemplateLibrary load_directory(const std::filesystem::path& dir);

  /// Templates shipped with the project.
  static TemplateLibrary builtin();

  const PromptTemplate& get(TaskId task) const;
  const PromptTemplate& get(std::string_view task_name) const;

 private:
  std::map<TaskId, PromptTemplate> templates_;
};

/// Default asset root (templates/, auxiliary/, lang/ live below it). The
/// ROLEPLAY_ASSETS environment variable overrides the compiled-in path.
std::filesystem::path asset_root();

/// Expands `{name}` and `{?name}...{/name}` for the given names only, as
/// used by auxiliary prompts. Unknown braces stay literal.
std::string fill_slots(std::string_view body, const std::map<std::string, std::string>& values);

std::string render_history(const PromptTemplate& tmpl, const std::vector<HistoryTurn>& turns);

/// Builds sections for a task: system and response instruction items are
/// taken from the template text, context and history from the arguments.
PromptSections make_sections(const PromptTemplate& tmpl, SituationalContext context,
                             ConversationHistory history, std::string target_language);

/// Renders the prompt. Throws ValidationError naming any required slot
/// left unsupplied. Pure: identical inputs give identical output.
RenderedPrompt render_prompt(const PromptTemplate& tmpl, const PromptSections& sections,
                             std::string_view latest_user_message,
                             const TokenEstimator& estimator = estimate_tokens);

RenderedPrompt render_prompt(const TemplateLibrary& library, std::string_view task_name,
                             const PromptSections& sections, std::string_view latest_user_message,
                             const TokenEstimator& estimator = estimate_tokens);

}  // namespace roleplay
