#include <doctest.h>

#include "roleplay/dialog.hpp"
#include "roleplay/errors.hpp"
#include "roleplay/tokens.hpp"

using namespace roleplay;

namespace {

struct Rig {
  std::shared_ptr<MockBackend> mock = std::make_shared<MockBackend>();
  std::shared_ptr<Gateway> gateway = std::make_shared<Gateway>();
  Runtime runtime;
  Rig() {
    gateway->register_backend("mock", mock);
    runtime = Runtime::with_defaults(gateway);
  }
};

SessionConfig persona_session(TaskId task = TaskId::persona_advanced) {
  SessionConfig c;
  c.setup_id = "test";
  c.task = task;
  c.persona = {"I have a husky named Claude.", "I am an accountant."};
  return c;
}

std::string user_line(int i) {
  return "Message numéro " + std::to_string(i) + " : je te parle de mon chien et de mon travail.";
}

}  // namespace

TEST_CASE("shipped demonstrations load") {
  const auto shots = load_demonstrations(asset_root() / "fsb" / "shots.txt");
  REQUIRE(shots.size() == 6);
  for (const auto& d : shots) {
    CHECK_FALSE(d.persona.empty());
    REQUIRE(d.dialogue.size() >= 2);
    CHECK(d.dialogue.front().speaker == Speaker::user);
  }
}

TEST_CASE("as_history flips perspective") {
  const std::vector<Turn> turns{{Speaker::user, "a"}, {Speaker::agent, "b"}};
  const auto mine = as_history(turns);
  CHECK(mine[0].speaker == Speaker::user);
  const auto theirs = as_history(turns, Speaker::user);
  CHECK(theirs[0].speaker == Speaker::agent);
  CHECK(theirs[1].speaker == Speaker::user);
}

TEST_CASE("agent renders the task prompt and filters") {
  Rig rig;
  rig.mock->push({"En tant qu'IA, je n'ai pas de chien. Et toi, tu as un animal ?"});
  DialogAgent agent(rig.runtime, persona_session(TaskId::persona_shallow));
  const auto reply = agent.respond({}, "Bonjour !");
  CHECK(reply.text == "Je n'ai pas de chien. Et toi, tu as un animal ?");
  CHECK(reply.filter.detected.count(RuleId::persona_claim) == 1);
  CHECK(reply.prompt.text.find("I have a husky named Claude. I am an accountant.") !=
        std::string::npos);
  CHECK(rig.mock->prompts().at(0) == reply.prompt.text);
}

TEST_CASE("fsb prompts carry the demonstrations") {
  Rig rig;
  rig.mock->push({"Salut ! Moi c'est Paul."});
  DialogAgent agent(rig.runtime, persona_session(TaskId::fsb));
  const auto reply = agent.respond({}, "Salut");
  const auto& shot = rig.runtime.shots.front();
  CHECK(reply.prompt.text.find(shot.dialogue.front().text) != std::string::npos);
}

TEST_CASE("int regeneration appends the instruction") {
  Rig rig;
  rig.mock->push({""});
  rig.mock->push({"Et toi, qu'en penses-tu ?"});
  auto config = persona_session(TaskId::int_task);
  config.persona.clear();
  config.image_description = "a pear with arms";
  DialogAgent agent(rig.runtime, config);
  const auto reply = agent.respond({}, "Je vois une poire");
  CHECK(reply.text == "Et toi, qu'en penses-tu ?");
  CHECK(reply.filter.fixed.count(RuleId::int_empty) == 1);
  CHECK(rig.mock->prompts().at(1).find(
            "USER: Je vois une poire Your response must be a sentence containing a few words.") !=
        std::string::npos);
}

TEST_CASE("tight budget: truncation, one summary, budget respected") {
  Rig rig;
  rig.mock->add_match("Summarize the following", {"Le chien et le travail."});
  rig.mock->add_match("In one line, state", {"Has a dog"});
  rig.mock->push({"D'accord, raconte-moi en plus sur ton chien."});
  rig.mock->set_loop(true);
  rig.runtime.pipeline.token_budget = 420;

  DialogAgent agent(rig.runtime, persona_session());
  std::vector<HistoryTurn> history;
  std::size_t summaries_seen = 0;
  for (int i = 0; i < 20; ++i) {
    const auto msg = user_line(i);
    const auto reply = agent.respond(history, msg);
    CHECK(reply.prompt.token_estimate <= agent.token_budget());
    CHECK(estimate_tokens(reply.prompt.text) == reply.prompt.token_estimate);
    CHECK(agent.context().count(ContextTag::episode_summary) <= 1);
    history.push_back({Speaker::user, msg});
    history.push_back({Speaker::agent, reply.text});
    agent.observe(history);
    const auto& m = agent.memory();
    if (m.summary) {
      ++summaries_seen;
      // Everything before the window is summarized, nothing inside it.
      CHECK(m.summary->covers_turn_range.first == 0);
      CHECK(m.summary->covers_turn_range.second + 1 == m.window_start);
      CHECK(m.summarized_upto == m.window_start);
    }
  }
  CHECK(summaries_seen > 0);
  CHECK(agent.context().count(ContextTag::episode_summary) == 1);
  CHECK(agent.context().count(ContextTag::user_memory) == 1);
}

TEST_CASE("non-advanced tasks truncate without summaries") {
  Rig rig;
  rig.mock->push({"Oui."});
  rig.mock->set_loop(true);
  rig.runtime.pipeline.token_budget = 300;
  DialogAgent agent(rig.runtime, persona_session(TaskId::persona_shallow));
  std::vector<HistoryTurn> history;
  for (int i = 0; i < 30; ++i) {
    const auto reply = agent.respond(history, user_line(i));
    CHECK(reply.prompt.token_estimate <= 300);
    history.push_back({Speaker::user, user_line(i)});
    history.push_back({Speaker::agent, reply.text});
  }
  CHECK(agent.memory().window_start > 0);
  CHECK_FALSE(agent.memory().summary);
  CHECK(rig.mock->calls() == 30);
}

TEST_CASE("chat service") {
  Rig rig;
  rig.mock->push({"Salut ! Je m'appelle Marc."});
  auto store = std::make_shared<ConversationStore>();
  ChatService service(store, rig.runtime);

  SUBCASE("unknown backend is a validation error") {
    auto c = persona_session();
    c.backend_id = "nope";
    CHECK_THROWS_AS(service.create_session(c), ValidationError);
  }
  SUBCASE("exchange is stored") {
    const auto id = service.create_session(persona_session());
    const auto result = service.post_message(id, "Bonjour");
    CHECK(result.reply == "Salut ! Je m'appelle Marc.");
    CHECK(result.turn_index == 1);
    const auto c = store->get(id);
    REQUIRE(c.turns.size() == 2);
    CHECK(c.turns[1].filter.has_value());
    CHECK_THROWS_AS(service.post_message(id, "   "), ValidationError);
    CHECK_THROWS_AS(service.post_message("missing", "hi"), NotFoundError);
  }
  SUBCASE("backend failure leaves the session unchanged") {
    const auto id = service.create_session(persona_session());
    service.post_message(id, "Bonjour");
    CHECK_THROWS_AS(service.post_message(id, "Encore"), BackendError);
    CHECK(store->get(id).turns.size() == 2);
  }
}
