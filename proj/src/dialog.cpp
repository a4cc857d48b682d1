#include "roleplay/dialog.hpp"

#include <algorithm>
#include <fstream>

#include "roleplay/errors.hpp"
#include "roleplay/history.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

int PipelineConfig::budget_for(const DecodingParams& decoding) const {
  return token_budget ? *token_budget : context_tokens - decoding.max_new_tokens;
}

Runtime Runtime::with_defaults(std::shared_ptr<Gateway> gateway) {
  Runtime rt;
  rt.templates = TemplateLibrary::builtin();
  rt.gateway = std::move(gateway);
  rt.filter = std::make_shared<ResponseFilter>(FilterConfig::builtin());
  rt.memory = MemoryConfig::builtin();
  rt.shots = load_demonstrations(asset_root() / "fsb" / "shots.txt");
  return rt;
}

std::vector<Demonstration> load_demonstrations(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open demonstrations " + file.string());
  std::vector<Demonstration> out;
  Demonstration current;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (!current.persona.empty() || !current.dialogue.empty()) out.push_back(std::move(current));
    current = {};
  };
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto line = text::trim(raw);
    if (!line.empty() && line.front() == '#') continue;
    if (line.empty()) {
      flush();
      continue;
    }
    const auto colon = line.find(':');
    const auto key = colon == std::string_view::npos ? line : line.substr(0, colon);
    const auto value = colon == std::string_view::npos ? std::string_view{}
                                                       : text::trim(line.substr(colon + 1));
    if (key == "persona") {
      current.persona.emplace_back(value);
    } else if (key == "user") {
      current.dialogue.push_back({Speaker::user, std::string(value)});
    } else if (key == "agent") {
      current.dialogue.push_back({Speaker::agent, std::string(value)});
    } else {
      throw ConfigError(file.string() + ":" + std::to_string(line_no) +
                        ": expected persona:, user: or agent:");
    }
  }
  flush();
  return out;
}

std::vector<HistoryTurn> as_history(const std::vector<Turn>& turns, Speaker self) {
  std::vector<HistoryTurn> out;
  out.reserve(turns.size());
  for (const auto& t : turns) {
    out.push_back({t.speaker == self ? Speaker::agent : Speaker::user, t.text});
  }
  return out;
}

DialogAgent::DialogAgent(const Runtime& runtime, SessionConfig config)
    : runtime_(runtime), config_(std::move(config)), template_(runtime.templates.get(config_.task)) {
  config_.validate();
  for (const auto& trait : config_.persona) context_.add(ContextTag::persona_traits, trait);
  if (config_.image_description) {
    context_.add(ContextTag::image_description, *config_.image_description);
  }
  if (config_.task == TaskId::persona_advanced && runtime_.memory.enabled) {
    auto memory_config = runtime_.memory;
    memory_config.backend_id = config_.backend_id;
    modules_.emplace(*runtime_.gateway, std::move(memory_config));
  }
}

int DialogAgent::token_budget() const { return runtime_.pipeline.budget_for(config_.decoding); }

RenderedPrompt DialogAgent::render(const std::vector<HistoryTurn>& window,
                                   const std::string& user_message) const {
  ConversationHistory history;
  history.turns = window;
  auto sections = make_sections(template_, context_, std::move(history), config_.language);
  if (config_.task == TaskId::fsb) sections.demonstrations = runtime_.shots;
  return render_prompt(template_, sections, user_message);
}

RenderedPrompt DialogAgent::prepare(const std::vector<HistoryTurn>& history,
                                    const std::string& user_message) {
  const int budget = token_budget();
  // Each pass either removes at least one unit or stops; a new summary can
  // grow the context, which is why the window is re-checked.
  for (std::size_t pass = 0; pass <= history.size(); ++pass) {
    const std::size_t start = std::min(memory_.window_start, history.size());
    ConversationHistory window;
    window.turns.assign(history.begin() + static_cast<std::ptrdiff_t>(start), history.end());
    const auto cost = [&](const std::vector<HistoryTurn>& suffix) {
      return render(suffix, user_message).token_estimate;
    };
    const auto result =
        truncate_history(window, budget, runtime_.pipeline.min_keep_units, cost);
    if (result.removed.empty()) break;
    const std::size_t new_start = start + result.removed_turn_count();
    if (modules_) {
      modules_->absorb_removed(history, new_start, memory_, context_);
    } else {
      memory_.window_start = new_start;
    }
  }
  const std::size_t start = std::min(memory_.window_start, history.size());
  return render({history.begin() + static_cast<std::ptrdiff_t>(start), history.end()},
                user_message);
}

GenerationRequest DialogAgent::request_for(const RenderedPrompt& prompt) const {
  GenerationRequest req;
  req.prompt = prompt.text;
  req.backend_id = config_.backend_id;
  req.max_new_tokens = config_.decoding.max_new_tokens;
  req.temperature = config_.decoding.temperature;
  req.top_p = config_.decoding.top_p;
  if (!template_.end_of_message().empty()) req.stop_markers.push_back(template_.end_of_message());
  req.stop_markers.push_back("\n" + template_.user_label());
  req.stop_markers.push_back("\n" + template_.agent_label());
  return req;
}

AgentReply DialogAgent::respond(const std::vector<HistoryTurn>& history,
                                const std::string& user_message) {
  AgentReply reply;
  reply.prompt = prepare(history, user_message);
  const auto req = request_for(reply.prompt);
  const int retries = runtime_.pipeline.max_retries;
  reply.raw = runtime_.gateway->complete_with_retry(req, retries);

  const auto& filter = *runtime_.filter;
  if (config_.task == TaskId::int_task) {
    const auto regenerate_with = [&](const std::string& extra) {
      auto edited = req;
      edited.prompt = render({history.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                    memory_.window_start, history.size())),
                              history.end()},
                             user_message + " " + extra)
                          .text;
      return runtime_.gateway->complete_with_retry(edited, retries).text;
    };
    reply.filter = filter.filter_int(reply.raw.text, regenerate_with);
  } else {
    const bool first = std::none_of(history.begin(), history.end(), [](const HistoryTurn& t) {
      return t.speaker == Speaker::agent;
    });
    const auto regenerate = [&] { return runtime_.gateway->complete_with_retry(req, retries); };
    reply.filter = filter.filter_persona(reply.raw, first, config_.language, regenerate);
  }
  reply.text = reply.filter.final_text;
  return reply;
}

void DialogAgent::observe(const std::vector<HistoryTurn>& all_turns) {
  if (modules_) modules_->maybe_update_memory(all_turns, memory_, context_);
}

ChatService::ChatService(std::shared_ptr<ConversationStore> store, const Runtime& runtime)
    : store_(std::move(store)), runtime_(runtime) {}

std::string ChatService::create_session(const SessionConfig& config) {
  auto problems = config.problems();
  if (!config.backend_id.empty() && !runtime_.gateway->has(config.backend_id)) {
    problems.push_back("backend_id: unknown backend '" + config.backend_id + "'");
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));
  return store_->create_session(config);
}

std::shared_ptr<ChatService::Live> ChatService::live(const std::string& session_id) {
  const auto conversation = store_->get(session_id);  // NotFoundError for unknown ids
  std::lock_guard lock(live_mutex_);
  auto& slot = live_[session_id];
  if (!slot) {
    slot = std::make_shared<Live>();
    slot->agent = std::make_unique<DialogAgent>(runtime_, conversation.config);
  }
  return slot;
}

MessageResult ChatService::post_message(const std::string& session_id, const std::string& text) {
  auto session = live(session_id);
  if (text::trim(text).empty()) throw ValidationError("text: must be non-empty");
  std::lock_guard lock(session->mutex);
  const auto conversation = store_->get(session_id);
  if (!conversation.turns.empty() && conversation.turns.back().speaker == Speaker::user) {
    throw ConflictError("session '" + session_id + "' is waiting for an agent turn");
  }
  auto history = as_history(conversation.turns);
  auto reply = session->agent->respond(history, text);

  store_->append_turn(session_id, Speaker::user, text);
  MessageResult result;
  result.turn_index = store_->append_turn(session_id, Speaker::agent, reply.text, reply.filter);
  result.reply = reply.text;
  result.filter = reply.filter;

  history.push_back({Speaker::user, text});
  history.push_back({Speaker::agent, reply.text});
  session->agent->observe(history);
  return result;
}

}  // namespace roleplay
