#include "roleplay/selfchat.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <thread>

#include "roleplay/errors.hpp"
#include "roleplay/kv_config.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

std::vector<Persona> load_personas(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open persona file " + file.string());
  std::vector<Persona> out;
  Persona current;
  for (std::string raw; std::getline(in, raw);) {
    const auto line = text::trim(raw);
    if (!line.empty() && line.front() == '#') continue;
    if (line.empty()) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
      continue;
    }
    current.emplace_back(line);
  }
  if (!current.empty()) out.push_back(std::move(current));
  if (out.empty()) throw ConfigError("persona file " + file.string() + " holds no persona");
  return out;
}

SetupSpec SetupSpec::load(const std::filesystem::path& file) {
  const auto kv = KeyValueConfig::load(file);
  kv.require_known({"setup_id", "task", "persona", "image_description", "backend", "language",
                    "max_new_tokens", "temperature", "top_p", "mock_script", "persona_file"});
  const auto base = file.parent_path();
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_relative() ? base / path : path;
  };

  SetupSpec spec;
  auto& c = spec.config;
  c.setup_id = kv.get_or("setup_id", file.stem().string());
  const auto task_name = kv.get_or("task", "persona_advanced");
  const auto task = parse_task(task_name);
  if (!task) throw ConfigError(file.string() + ": unknown task '" + task_name + "'");
  c.task = *task;
  c.persona = kv.get_all("persona");
  if (auto image = kv.get("image_description")) c.image_description = *image;
  c.backend_id = kv.get_or("backend", "mock");
  c.language = kv.get_or("language", "fr");
  c.decoding.max_new_tokens = kv.get_int("max_new_tokens", c.decoding.max_new_tokens);
  c.decoding.temperature = kv.get_double("temperature", c.decoding.temperature);
  c.decoding.top_p = kv.get_double("top_p", c.decoding.top_p);
  if (auto p = kv.get("mock_script")) spec.mock_script = resolve(*p);
  if (auto p = kv.get("persona_file")) spec.persona_file = resolve(*p);

  auto problems = c.problems();
  // A missing persona is fine when one can be sampled.
  if (spec.persona_file) {
    std::erase_if(problems, [](const std::string& p) { return p.rfind("persona: required", 0) == 0; });
  }
  if (!problems.empty()) {
    throw ConfigError(file.string() + ": " + text::join(problems, "; "));
  }
  return spec;
}

void SetupSpec::register_backend(Gateway& gateway) const {
  if (mock_script) gateway.register_backend(config.backend_id, MockBackend::from_file(*mock_script));
}

void SelfChatJob::validate() const {
  std::vector<std::string> problems;
  if (n_rounds < 1) problems.emplace_back("n_rounds: must be >= 1");
  if (n_conversations < 0) problems.emplace_back("n_conversations: must be >= 0");
  if (parallelism < 1) problems.emplace_back("parallelism: must be >= 1");
  const auto check_side = [&](const SessionConfig& c, const char* side) {
    for (const auto& p : c.problems()) {
      const bool sampled = p.rfind("persona: required", 0) == 0 && !persona_pool.empty();
      if (!sampled) problems.push_back(std::string(side) + "." + p);
    }
  };
  check_side(setup_a, "setup_a");
  check_side(setup_b, "setup_b");
  if (fixed_opener && text::trim(*fixed_opener).empty()) {
    problems.emplace_back("fixed_opener: must be non-empty");
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

namespace {

struct PreparedChat {
  std::string id;
  SessionConfig side_a;
  SessionConfig side_b;
};

std::vector<PreparedChat> prepare_chats(const SelfChatJob& job) {
  // All random draws happen up front, in conversation order, so the corpus
  // does not depend on scheduling.
  std::mt19937_64 rng(job.seed);
  std::vector<PreparedChat> out;
  const auto fill = [&](SessionConfig& c) {
    if (is_persona_task(c.task) && c.persona.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, job.persona_pool.size() - 1);
      c.persona = job.persona_pool[pick(rng)];
    }
  };
  for (int i = 0; i < job.n_conversations; ++i) {
    PreparedChat chat{"sc-" + job.setup_a.setup_id + "-" + std::to_string(job.seed) + "-" +
                          std::to_string(i),
                      job.setup_a, job.setup_b};
    fill(chat.side_a);
    fill(chat.side_b);
    out.push_back(std::move(chat));
  }
  return out;
}

Conversation generate_one(const Runtime& runtime, const SelfChatJob& job, const PreparedChat& chat) {
  Conversation conv;
  conv.id = chat.id;
  conv.config = chat.side_a;
  std::int64_t clock = 0;
  DialogAgent side_a(runtime, chat.side_a);
  DialogAgent side_b(runtime, chat.side_b);

  const auto add_turn = [&](Speaker speaker, std::string text, std::optional<FilterOutcome> f) {
    conv.turns.push_back({speaker, std::move(text), clock++, std::move(f)});
  };

  try {
    for (int round = 0; round < job.n_rounds; ++round) {
      // Side A
      if (round == 0) {
        if (job.fixed_opener) {
          add_turn(Speaker::user, *job.fixed_opener, std::nullopt);
        } else {
          auto reply = side_a.respond({}, job.greeting_cue);
          add_turn(Speaker::user, reply.text, reply.filter);
        }
      } else {
        const auto history_a = as_history(
            std::vector<Turn>(conv.turns.begin(), conv.turns.end() - 1), Speaker::user);
        auto reply = side_a.respond(history_a, conv.turns.back().text);
        add_turn(Speaker::user, reply.text, reply.filter);
        side_a.observe(as_history(conv.turns, Speaker::user));
      }
      // Side B
      const auto history_b =
          as_history(std::vector<Turn>(conv.turns.begin(), conv.turns.end() - 1), Speaker::agent);
      auto reply = side_b.respond(history_b, conv.turns.back().text);
      add_turn(Speaker::agent, reply.text, reply.filter);
      side_b.observe(as_history(conv.turns, Speaker::agent));
    }
  } catch (const BackendError& e) {
    conv.valid = false;
    conv.invalid_reason = std::string("backend failure: ") + e.what();
  }
  return conv;
}

}  // namespace

std::vector<Conversation> run_selfchat(const Runtime& runtime, const SelfChatJob& job,
                                       ConversationStore* store) {
  job.validate();
  for (const auto* c : {&job.setup_a, &job.setup_b}) {
    if (!runtime.gateway->has(c->backend_id)) {
      throw ValidationError("backend_id: unknown backend '" + c->backend_id + "'");
    }
  }
  const auto chats = prepare_chats(job);
  std::vector<Conversation> out(chats.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < chats.size(); i = next++) {
      out[i] = generate_one(runtime, job, chats[i]);
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(job.parallelism), chats.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (store) {
    for (const auto& c : out) store->add_conversation(c);
  }
  return out;
}

FaultInjectingBackend::FaultInjectingBackend(std::shared_ptr<Backend> inner, Rates rates,
                                             std::uint64_t seed,
                                             std::vector<std::string> exempt_markers,
                                             int long_sentences)
    : inner_(std::move(inner)),
      rates_(rates),
      exempt_(std::move(exempt_markers)),
      long_sentences_(long_sentences),
      rng_(seed) {
  if (rates.empty < 0 || rates.too_long < 0 || rates.empty + rates.too_long > 1.0) {
    throw ConfigError("fault rates must be non-negative and sum to at most 1");
  }
}

Completion FaultInjectingBackend::complete(const GenerationRequest& request) {
  const bool exempt = std::any_of(exempt_.begin(), exempt_.end(), [&](const std::string& m) {
    return request.prompt.find(m) != std::string::npos;
  });
  if (!exempt) {
    double u = 0;
    {
      std::lock_guard lock(mutex_);
      u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    }
    ++eligible_;
    if (u < rates_.empty) {
      ++empty_;
      return {"", FinishReason::backend_end, 0.0};
    }
    if (u < rates_.empty + rates_.too_long) {
      ++too_long_;
      std::string text;
      for (int i = 1; i <= long_sentences_; ++i) {
        if (!text.empty()) text += ' ';
        text += "Voici la phrase numéro " + std::to_string(i) + ".";
      }
      return {text, FinishReason::backend_end, 0.0};
    }
  }
  return inner_->complete(request);
}

std::vector<ArenaPair> build_arena_pairs(const std::vector<Conversation>& corpus,
                                         const PairingPolicy& policy) {
  if (policy.min_battles < 1 || policy.min_battles > policy.max_battles ||
      policy.battles_per_pair < policy.min_battles || policy.battles_per_pair > policy.max_battles) {
    throw ValidationError("battles_per_pair must lie in [min_battles, max_battles] with min >= 1");
  }
  std::map<std::string, std::vector<const Conversation*>> by_setup;
  for (const auto& c : corpus) {
    if (c.valid) by_setup[c.config.setup_id].push_back(&c);
  }
  if (by_setup.size() < 2) {
    throw ValidationError("arena pairing needs at least 2 setups, found " +
                          std::to_string(by_setup.size()));
  }
  for (auto& [setup, convs] : by_setup) {
    std::sort(convs.begin(), convs.end(),
              [](const Conversation* a, const Conversation* b) { return a->id < b->id; });
  }
  const std::size_t per_setup_need =
      static_cast<std::size_t>(policy.battles_per_pair) * (by_setup.size() - 1);
  if (!policy.allow_reuse) {
    std::vector<std::string> shortfalls;
    for (const auto& [setup, convs] : by_setup) {
      if (convs.size() < per_setup_need) {
        shortfalls.push_back("setup '" + setup + "' has " + std::to_string(convs.size()) +
                             " conversations, needs " + std::to_string(per_setup_need) + " (short by " +
                             std::to_string(per_setup_need - convs.size()) + ")");
      }
    }
    if (!shortfalls.empty()) throw ValidationError(std::move(shortfalls));
  }

  std::map<std::string, std::size_t> cursor;
  const auto take = [&](const std::string& setup) {
    const auto& convs = by_setup.at(setup);
    return convs[cursor[setup]++ % convs.size()]->id;
  };
  std::vector<std::string> setups;
  for (const auto& [setup, convs] : by_setup) setups.push_back(setup);

  std::vector<ArenaPair> out;
  for (std::size_t i = 0; i < setups.size(); ++i) {
    for (std::size_t j = i + 1; j < setups.size(); ++j) {
      for (int b = 0; b < policy.battles_per_pair; ++b) {
        ArenaPair p;
        p.setup_a = setups[i];
        p.setup_b = setups[j];
        p.conversation_a = take(p.setup_a);
        p.conversation_b = take(p.setup_b);
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

}  // namespace roleplay
