#include "roleplay/prompt_template.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "roleplay/errors.hpp"
#include "roleplay/text.hpp"

#ifndef ROLEPLAY_ASSET_DIR
#define ROLEPLAY_ASSET_DIR "assets"
#endif

namespace roleplay {

namespace {

const std::set<std::string>& known_slots() {
  static const std::set<std::string> slots{"persona",           "summary",      "user_memory",
                                           "history",           "user_message", "language",
                                           "image_description", "shots"};
  return slots;
}

std::optional<Section> parse_section(std::string_view name) {
  if (name == "system") return Section::system;
  if (name == "context") return Section::context;
  if (name == "response") return Section::response;
  if (name == "history") return Section::history;
  return std::nullopt;
}

struct Marker {
  enum Kind { slot, open, close } kind;
  std::string name;
  std::size_t begin;
  std::size_t end;
};

// Finds every `{name}`, `{?name}` and `{/name}` marker whose name is a known
// slot. Other braces are left as literal text.
std::vector<Marker> scan_markers(std::string_view body,
                                 const std::set<std::string>& known = known_slots()) {
  std::vector<Marker> markers;
  std::size_t pos = 0;
  while ((pos = body.find('{', pos)) != std::string_view::npos) {
    const auto close = body.find('}', pos);
    if (close == std::string_view::npos) break;
    std::string_view tag = body.substr(pos + 1, close - pos - 1);
    Marker::Kind kind = Marker::slot;
    if (!tag.empty() && tag.front() == '?') {
      kind = Marker::open;
      tag.remove_prefix(1);
    } else if (!tag.empty() && tag.front() == '/') {
      kind = Marker::close;
      tag.remove_prefix(1);
    }
    if (known.count(std::string(tag)) != 0) {
      markers.push_back({kind, std::string(tag), pos, close + 1});
      pos = close + 1;
    } else {
      pos = pos + 1;
    }
  }
  return markers;
}

using SlotValues = std::map<std::string, std::optional<std::string>>;

std::string expand(std::string_view body, const SlotValues& values,
                   const std::set<std::string>& known = known_slots()) {
  std::string out;
  const auto markers = scan_markers(body, known);
  std::size_t cursor = 0;
  for (std::size_t m = 0; m < markers.size(); ++m) {
    const auto& marker = markers[m];
    if (marker.begin < cursor) continue;
    out.append(body.substr(cursor, marker.begin - cursor));
    if (marker.kind == Marker::slot) {
      const auto it = values.find(marker.name);
      if (it != values.end() && it->second) out += *it->second;
      cursor = marker.end;
      continue;
    }
    // Conditional block: locate the matching close marker.
    std::size_t close_idx = m + 1;
    while (close_idx < markers.size() &&
           !(markers[close_idx].kind == Marker::close && markers[close_idx].name == marker.name)) {
      ++close_idx;
    }
    if (close_idx == markers.size()) {
      throw ValidationError("unclosed {?" + marker.name + "} block");
    }
    const auto& close = markers[close_idx];
    const auto it = values.find(marker.name);
    const bool present = it != values.end() && it->second && !it->second->empty();
    if (present) {
      out += expand(body.substr(marker.end, close.begin - marker.end), values, known);
    }
    cursor = close.end;
  }
  out.append(body.substr(cursor));
  return out;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view RenderedPrompt::section_text(Section s) const {
  const auto& span = section_spans[static_cast<std::size_t>(s)];
  return std::string_view(text).substr(span.begin, span.size());
}

std::array<Section, 4> RenderedPrompt::order_in_text() const {
  std::array<Section, 4> order{Section::system, Section::context, Section::response,
                               Section::history};
  std::stable_sort(order.begin(), order.end(), [&](Section a, Section b) {
    const auto& sa = section_spans[static_cast<std::size_t>(a)];
    const auto& sb = section_spans[static_cast<std::size_t>(b)];
    return sa.begin < sb.begin || (sa.begin == sb.begin && sa.end < sb.end);
  });
  return order;
}

PromptTemplate PromptTemplate::parse(std::string_view source) {
  PromptTemplate tmpl;
  std::vector<std::string> problems;
  bool have_task = false;

  std::string_view rest = source;
  if (text::ends_with(rest, "\n")) rest.remove_suffix(1);

  Chunk* current = nullptr;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    auto nl = rest.find('\n', pos);
    const bool last = nl == std::string_view::npos;
    std::string_view line = rest.substr(pos, last ? std::string_view::npos : nl - pos);
    ++line_no;
    pos = last ? rest.size() + 1 : nl + 1;

    if (text::starts_with(line, "@section")) {
      const auto name = text::trim(line.substr(8));
      const auto section = parse_section(name);
      if (!section) {
        problems.push_back("line " + std::to_string(line_no) + ": unknown section '" +
                           std::string(name) + "'");
        continue;
      }
      tmpl.chunks_.push_back({*section, {}});
      current = &tmpl.chunks_.back();
      continue;
    }
    if (current == nullptr) {
      if (line.empty()) continue;
      if (!text::starts_with(line, "@")) {
        problems.push_back("line " + std::to_string(line_no) + ": text before first @section");
        continue;
      }
      const auto space = line.find(' ');
      const auto key = line.substr(1, space == std::string_view::npos ? line.size() : space - 1);
      const auto value =
          space == std::string_view::npos ? std::string_view{} : line.substr(space + 1);
      if (key == "task") {
        const auto task = parse_task(text::trim(value));
        if (!task) {
          problems.push_back("unknown task '" + std::string(value) + "'");
        } else {
          tmpl.task_ = *task;
          have_task = true;
        }
      } else if (key == "user_label") {
        tmpl.user_label_ = std::string(value);
      } else if (key == "agent_label") {
        tmpl.agent_label_ = std::string(value);
      } else if (key == "end_of_message") {
        tmpl.end_of_message_ = std::string(value);
      } else if (key == "persona_separator") {
        if (value == "space") {
          tmpl.persona_separator_ = " ";
        } else if (value == "newline") {
          tmpl.persona_separator_ = "\n";
        } else {
          problems.push_back("persona_separator must be 'space' or 'newline'");
        }
      } else {
        problems.push_back("unknown directive @" + std::string(key));
      }
      continue;
    }
    current->body.append(line);
    if (!last) current->body.push_back('\n');
  }

  if (!have_task) problems.emplace_back("missing @task directive");
  if (tmpl.chunks_.size() != 4) {
    problems.emplace_back("template must declare exactly four sections");
  } else {
    std::array<int, 4> order{};
    for (std::size_t i = 0; i < 4; ++i) order[i] = static_cast<int>(tmpl.chunks_[i].section);
    try {
      if (SigmaPermutation(order) != task_sigma(tmpl.task_)) {
        problems.emplace_back("section order does not match the task permutation");
      }
    } catch (const ValidationError&) {
      problems.emplace_back("each section must appear exactly once");
    }
  }

  std::map<std::string, int> slot_uses;
  for (const auto& chunk : tmpl.chunks_) {
    int depth = 0;
    std::string open_name;
    for (const auto& marker : scan_markers(chunk.body)) {
      switch (marker.kind) {
        case Marker::slot:
          ++slot_uses[marker.name];
          tmpl.slots_.insert(marker.name);
          if (depth == 0) tmpl.required_.insert(marker.name);
          break;
        case Marker::open:
          if (depth != 0) problems.push_back("nested conditional block {?" + marker.name + "}");
          depth = 1;
          open_name = marker.name;
          break;
        case Marker::close:
          if (depth != 1 || open_name != marker.name) {
            problems.push_back("unbalanced conditional block {/" + marker.name + "}");
          }
          depth = 0;
          break;
      }
    }
    if (depth != 0) problems.push_back("unterminated conditional block {?" + open_name + "}");
  }
  for (const auto& [name, uses] : slot_uses) {
    if (uses != 1) problems.push_back("slot {" + name + "} must appear exactly once");
  }

  if (!problems.empty()) throw ValidationError(std::move(problems));
  return tmpl;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& file) {
  try {
    return parse(read_file(file));
  } catch (const ValidationError& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

const std::string& PromptTemplate::section_body(Section s) const {
  for (const auto& chunk : chunks_) {
    if (chunk.section == s) return chunk.body;
  }
  throw ValidationError("template has no section " + std::string(to_string(s)));
}

std::array<Section, 4> PromptTemplate::section_order() const {
  std::array<Section, 4> order{};
  for (std::size_t i = 0; i < 4 && i < chunks_.size(); ++i) order[i] = chunks_[i].section;
  return order;
}

TemplateLibrary TemplateLibrary::load_directory(const std::filesystem::path& dir) {
  TemplateLibrary lib;
  for (const TaskId task : {TaskId::vicuna_basis, TaskId::fsb, TaskId::persona_shallow,
                            TaskId::persona_advanced, TaskId::int_task}) {
    const auto file = dir / (std::string(to_string(task)) + ".tmpl");
    auto tmpl = PromptTemplate::load(file);
    if (tmpl.task() != task) {
      throw ValidationError(file.string() + ": @task does not match file name");
    }
    lib.templates_.emplace(task, std::move(tmpl));
  }
  return lib;
}

TemplateLibrary TemplateLibrary::builtin() { return load_directory(asset_root() / "templates"); }

const PromptTemplate& TemplateLibrary::get(TaskId task) const {
  const auto it = templates_.find(task);
  if (it == templates_.end()) {
    throw ValidationError("no template for task " + std::string(to_string(task)));
  }
  return it->second;
}

const PromptTemplate& TemplateLibrary::get(std::string_view task_name) const {
  const auto task = parse_task(task_name);
  if (!task) throw ValidationError("unknown task_id '" + std::string(task_name) + "'");
  return get(*task);
}

std::filesystem::path asset_root() {
  if (const char* env = std::getenv("ROLEPLAY_ASSETS"); env != nullptr && *env != '\0') {
    return env;
  }
  return ROLEPLAY_ASSET_DIR;
}

std::string fill_slots(std::string_view body, const std::map<std::string, std::string>& values) {
  std::set<std::string> known;
  SlotValues slot_values;
  for (const auto& [k, v] : values) {
    known.insert(k);
    slot_values[k] = v;
  }
  return expand(body, slot_values, known);
}

std::string render_history(const PromptTemplate& tmpl, const std::vector<HistoryTurn>& turns) {
  std::string out;
  for (const auto& turn : turns) {
    if (turn.speaker == Speaker::user) {
      out += tmpl.user_label() + " " + turn.text + "\n";
    } else {
      out += tmpl.agent_label() + " " + turn.text + tmpl.end_of_message() + "\n";
    }
  }
  return out;
}

namespace {

std::vector<std::string> instruction_items(const std::string& body, const std::string& language) {
  std::vector<std::string> items;
  for (const auto& line : text::split_lines(body)) {
    const auto trimmed = std::string(text::trim(line));
    if (trimmed.empty()) continue;
    const auto markers = scan_markers(trimmed);
    const bool only_language = std::all_of(markers.begin(), markers.end(), [](const Marker& m) {
      return m.kind == Marker::slot && m.name == "language";
    });
    if (!only_language) continue;
    items.push_back(text::replace_all(trimmed, "{language}", language_name(language)));
  }
  return items;
}

std::string render_demonstrations(const PromptTemplate& tmpl,
                                  const std::vector<Demonstration>& shots) {
  std::string out;
  for (const auto& shot : shots) {
    out += "Personality:\n";
    for (const auto& trait : shot.persona) out += trait + "\n";
    out += "Dialogue:\n";
    out += render_history(tmpl, shot.dialogue);
    out += "\n";
  }
  return out;
}

std::optional<std::string> joined(const std::vector<std::string>& items, const std::string& sep) {
  if (items.empty()) return std::nullopt;
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

PromptSections make_sections(const PromptTemplate& tmpl, SituationalContext context,
                             ConversationHistory history, std::string target_language) {
  PromptSections sections;
  sections.system.items = instruction_items(tmpl.section_body(Section::system), target_language);
  sections.response.items =
      instruction_items(tmpl.section_body(Section::response), target_language);
  sections.response.target_language = std::move(target_language);
  sections.context = std::move(context);
  sections.history = std::move(history);
  return sections;
}

RenderedPrompt render_prompt(const PromptTemplate& tmpl, const PromptSections& sections,
                             std::string_view latest_user_message,
                             const TokenEstimator& estimator) {
  SlotValues values;
  values["persona"] =
      joined(sections.context.all(ContextTag::persona_traits), tmpl.persona_separator());
  values["summary"] = sections.context.find(ContextTag::episode_summary);
  values["user_memory"] = sections.context.find(ContextTag::user_memory);
  values["image_description"] = sections.context.find(ContextTag::image_description);
  values["history"] = render_history(tmpl, sections.history.windowed().turns);
  values["user_message"] = std::string(latest_user_message);
  values["language"] = language_name(sections.response.target_language);
  if (!sections.demonstrations.empty()) {
    values["shots"] = render_demonstrations(tmpl, sections.demonstrations);
  }

  std::vector<std::string> missing;
  for (const auto& slot : tmpl.required_slots()) {
    const auto& value = values[slot];
    if (!value || (value->empty() && slot != "history" && slot != "user_message")) {
      missing.push_back("missing slot {" + slot + "} for task " +
                        std::string(to_string(tmpl.task())));
    }
  }
  if (!missing.empty()) throw ValidationError(std::move(missing));

  RenderedPrompt out;
  for (const auto& chunk : tmpl.chunks_) {
    const auto begin = out.text.size();
    out.text += expand(chunk.body, values);
    out.section_spans[static_cast<std::size_t>(chunk.section)] = {begin, out.text.size()};
  }
  out.token_estimate = estimator(out.text);
  return out;
}

RenderedPrompt render_prompt(const TemplateLibrary& library, std::string_view task_name,
                             const PromptSections& sections, std::string_view latest_user_message,
                             const TokenEstimator& estimator) {
  return render_prompt(library.get(task_name), sections, latest_user_message, estimator);
}

}  // namespace roleplay
