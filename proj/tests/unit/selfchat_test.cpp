#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "fixtures.hpp"
#include "roleplay/errors.hpp"
#include "roleplay/selfchat.hpp"

using namespace roleplay;
using roleplay::testing::TempDir;

namespace {

struct Rig {
  std::shared_ptr<Gateway> gateway = std::make_shared<Gateway>();
  Runtime runtime;
  std::shared_ptr<MockBackend> a, b;
  Rig() {
    a = std::make_shared<MockBackend>(
        std::vector<std::string>{"Salut, tu fais quoi ce soir ?", "Moi je vais courir au parc."},
        true);
    b = std::make_shared<MockBackend>(
        std::vector<std::string>{"Je lis un roman policier.", "Bonne idée, il fait beau."}, true);
    gateway->register_backend("a", a);
    gateway->register_backend("b", b);
    runtime = Runtime::with_defaults(gateway);
  }
};

SelfChatJob persona_job(int rounds, int count) {
  SelfChatJob job;
  job.setup_a.setup_id = "advanced";
  job.setup_a.backend_id = "a";
  job.setup_b = job.setup_a;
  job.setup_b.backend_id = "b";
  job.n_rounds = rounds;
  job.n_conversations = count;
  job.seed = 42;
  job.persona_pool = load_personas(asset_root() / "personas" / "personas.txt");
  return job;
}

Conversation with_setup(const std::string& id, const std::string& setup) {
  Conversation c;
  c.id = id;
  c.config.setup_id = setup;
  c.config.persona = {"trait"};
  return c;
}

}  // namespace

TEST_CASE("self-chat turn counts and alternation") {
  for (int rounds : {1, 3, 10}) {
    Rig rig;
    const auto convs = run_selfchat(rig.runtime, persona_job(rounds, 2));
    REQUIRE(convs.size() == 2);
    for (const auto& c : convs) {
      CHECK(c.valid);
      REQUIRE(c.turns.size() == static_cast<std::size_t>(2 * rounds));
      CHECK(c.turns.front().speaker == Speaker::user);
      CHECK(conversation_problems(c).empty());
      for (const auto& t : c.turns) CHECK(t.filter.has_value());
      CHECK(c.config.setup_id == "advanced");
    }
  }
}

TEST_CASE("self-chat is byte-deterministic") {
  Rig first, second;
  const auto run1 = export_corpus(run_selfchat(first.runtime, persona_job(10, 2)));
  const auto run2 = export_corpus(run_selfchat(second.runtime, persona_job(10, 2)));
  CHECK(run1 == run2);
  CHECK(run1.find("sc-advanced-42-1") != std::string::npos);
}

TEST_CASE("personas are sampled per side from the seed") {
  Rig rig;
  auto job = persona_job(1, 20);
  const auto convs = run_selfchat(rig.runtime, job);
  std::set<Persona> seen;
  for (const auto& c : convs) seen.insert(c.config.persona);
  CHECK(seen.size() > 1);
  for (const auto& p : seen) {
    CHECK(std::find(job.persona_pool.begin(), job.persona_pool.end(), p) != job.persona_pool.end());
  }
  // Side B's persona shows up in B's prompts: with 20 draws, at least one
  // conversation must have given the sides different personas.
  const auto prompts = rig.b->prompts();
  bool differs = false;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& a_traits = convs[i].config.persona;
    if (prompts.at(i).find(a_traits.front()) == std::string::npos) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("fixed opener and greeting cue") {
  Rig rig;
  auto job = persona_job(2, 1);
  job.fixed_opener = "Coucou !";
  const auto c = run_selfchat(rig.runtime, job).at(0);
  CHECK(c.turns[0].text == "Coucou !");
  CHECK_FALSE(c.turns[0].filter.has_value());
  CHECK(rig.a->calls() == 1);

  Rig cue;
  run_selfchat(cue.runtime, persona_job(1, 1));
  CHECK(cue.a->prompts().at(0).find("USER: Bonjour !\nASSISTANT:") != std::string::npos);
}

TEST_CASE("backend failure marks the conversation invalid and continues") {
  Rig rig;
  auto broken = std::make_shared<MockBackend>();
  broken->push({"Salut !"});
  broken->push({"", MockBackend::Failure::fatal});
  broken->push({"Encore moi."});
  broken->set_loop(true);
  rig.gateway->register_backend("broken", broken);
  auto job = persona_job(2, 3);
  job.setup_a.backend_id = "broken";
  ConversationStore store;
  const auto convs = run_selfchat(rig.runtime, job, &store);
  REQUIRE(convs.size() == 3);
  CHECK_FALSE(convs[0].valid);
  CHECK(convs[0].invalid_reason.find("backend failure") != std::string::npos);
  CHECK(convs[0].turns.size() == 2);
  CHECK(convs[1].valid);
  CHECK(convs[1].turns.size() == 4);
  CHECK(store.size() == 3);
}

TEST_CASE("job validation") {
  Rig rig;
  auto job = persona_job(0, 1);
  CHECK_THROWS_AS(run_selfchat(rig.runtime, job), ValidationError);
  job = persona_job(1, 1);
  job.persona_pool.clear();
  CHECK_THROWS_AS(run_selfchat(rig.runtime, job), ValidationError);
  job = persona_job(1, 1);
  job.setup_b.backend_id = "missing";
  CHECK_THROWS_AS(run_selfchat(rig.runtime, job), ValidationError);
}

TEST_CASE("parallel generation with stateless backends matches sequential") {
  const auto make = [] {
    auto rig = std::make_unique<Rig>();
    auto echo = std::make_shared<MockBackend>(std::vector<std::string>{"Oui, bien sûr."}, true);
    rig->gateway->register_backend("echo", echo);
    return rig;
  };
  auto job = persona_job(3, 8);
  job.setup_a.backend_id = job.setup_b.backend_id = "echo";
  auto seq = make();
  const auto sequential = export_corpus(run_selfchat(seq->runtime, job));
  job.parallelism = 4;
  auto par = make();
  CHECK(export_corpus(run_selfchat(par->runtime, job)) == sequential);
}

TEST_CASE("fault injection") {
  auto inner = std::make_shared<MockBackend>(std::vector<std::string>{"Oui."}, true);
  FaultInjectingBackend faulty(inner, {0.1, 0.2}, 9, {"Your response must be"});
  GenerationRequest req;
  req.prompt = "USER: hi\nASSISTANT:";
  std::size_t empty = 0, long_ = 0;
  for (int i = 0; i < 5000; ++i) {
    const auto c = faulty.complete(req);
    if (c.text.empty()) ++empty;
    if (c.text.size() > 40) ++long_;
  }
  CHECK(empty == faulty.injected_empty());
  CHECK(long_ == faulty.injected_too_long());
  CHECK(faulty.eligible_calls() == 5000);
  CHECK(static_cast<double>(empty) / 5000 == doctest::Approx(0.1).epsilon(0.2));
  CHECK(static_cast<double>(long_) / 5000 == doctest::Approx(0.2).epsilon(0.1));

  req.prompt += " Your response must be one sentence.";
  for (int i = 0; i < 50; ++i) CHECK(faulty.complete(req).text == "Oui.");
  CHECK(faulty.eligible_calls() == 5000);
  CHECK_THROWS_AS(FaultInjectingBackend(inner, {0.7, 0.5}, 1, {}), ConfigError);
}

TEST_CASE("arena pairs") {
  SUBCASE("two setups, balance rule") {
    std::vector<Conversation> corpus;
    for (int i = 0; i < 70; ++i) {
      corpus.push_back(with_setup("x" + std::to_string(100 + i), "shallow"));
      corpus.push_back(with_setup("y" + std::to_string(100 + i), "advanced"));
    }
    const auto pairs = build_arena_pairs(corpus, {});
    REQUIRE(pairs.size() == 10);
    std::set<std::string> used;
    for (const auto& p : pairs) {
      CHECK(p.setup_a != p.setup_b);
      CHECK(used.insert(p.conversation_a).second);
      CHECK(used.insert(p.conversation_b).second);
    }
  }
  SUBCASE("eleven setups cover every setup pair") {
    std::vector<Conversation> corpus;
    for (int s = 0; s < 11; ++s) {
      for (int i = 0; i < 5; ++i) {
        corpus.push_back(with_setup("c" + std::to_string(s) + "-" + std::to_string(i),
                                    "s" + std::to_string(s)));
      }
    }
    PairingPolicy policy;
    policy.battles_per_pair = 5;
    const auto pairs = build_arena_pairs(corpus, policy);
    std::set<std::pair<std::string, std::string>> setup_pairs;
    for (const auto& p : pairs) setup_pairs.insert({p.setup_a, p.setup_b});
    CHECK(setup_pairs.size() == 11 * 10 / 2);
    CHECK(pairs.size() == 55 * 5);
    // Usage counts within a setup differ by at most one.
    std::map<std::string, int> uses;
    for (const auto& p : pairs) {
      ++uses[p.conversation_a];
      ++uses[p.conversation_b];
    }
    for (int s = 0; s < 11; ++s) {
      int lo = 1 << 30, hi = 0;
      for (int i = 0; i < 5; ++i) {
        const int u = uses["c" + std::to_string(s) + "-" + std::to_string(i)];
        lo = std::min(lo, u);
        hi = std::max(hi, u);
      }
      CHECK(hi - lo <= 1);
    }
  }
  SUBCASE("errors") {
    std::vector<Conversation> one{with_setup("a", "only")};
    CHECK_THROWS_AS(build_arena_pairs(one, {}), ValidationError);
    std::vector<Conversation> two{with_setup("a", "s1"), with_setup("b", "s2")};
    PairingPolicy strict;
    strict.allow_reuse = false;
    try {
      build_arena_pairs(two, strict);
      FAIL("expected a shortfall");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("short by 9") != std::string::npos);
    }
    PairingPolicy out_of_range;
    out_of_range.battles_per_pair = 20;
    CHECK_THROWS_AS(build_arena_pairs(two, out_of_range), ValidationError);
  }
}

TEST_CASE("setup files") {
  TempDir dir("setup");
  {
    std::ofstream(dir.path() / "a.mock") << "%%\nBonjour.\n";
    std::ofstream(dir.path() / "p.txt") << "I am tall.\n";
    std::ofstream(dir.path() / "a.setup") << "setup_id = adv\ntask = persona_advanced\n"
                                             "backend = mock-a\nmock_script = a.mock\n"
                                             "persona_file = p.txt\ntemperature = 0.5\n";
    std::ofstream(dir.path() / "bad.setup") << "task = int\n";
    std::ofstream(dir.path() / "typo.setup") << "tsak = int\n";
  }
  const auto spec = SetupSpec::load(dir.path() / "a.setup");
  CHECK(spec.config.setup_id == "adv");
  CHECK(spec.config.decoding.temperature == 0.5);
  CHECK(spec.mock_script == dir.path() / "a.mock");
  CHECK(load_personas(*spec.persona_file).size() == 1);
  Gateway g;
  spec.register_backend(g);
  CHECK(g.has("mock-a"));
  CHECK_THROWS_AS(SetupSpec::load(dir.path() / "bad.setup"), ConfigError);
  CHECK_THROWS_AS(SetupSpec::load(dir.path() / "typo.setup"), ConfigError);
}
