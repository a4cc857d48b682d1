// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "table_fixtures.hpp"
#include "roleplay/arena.hpp"
#include "roleplay/dialog.hpp"
#include "roleplay/errors.hpp"
#include "roleplay/response_filter.hpp"
#include "roleplay/selfchat.hpp"
#include "roleplay/stats.hpp"
#include "roleplay/tokens.hpp"

using namespace roleplay;
using namespace roleplay::testing;
using nlohmann::json;

namespace {

// Collects failures for one criterion.
struct Report {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path mock(const std::string& name) { return asset_root() / "mock" / name; }

// --- 1. golden prompts --------------------------------------------------------

void golden_prompts(Report& r) {
  const auto lib = TemplateLibrary::builtin();
  for (const TaskId task : {TaskId::vicuna_basis, TaskId::fsb, TaskId::persona_shallow,
                            TaskId::persona_advanced, TaskId::int_task}) {
    const auto name = std::string(to_string(task));
    const auto golden = read_golden(name + ".txt");
    r.expect(!golden.empty(), name + ": golden file missing");
    const auto rendered = render_prompt(lib.get(task), golden_sections(lib, task), golden_user_message(task));
    r.expect(rendered.text == golden, name + ": rendering differs from golden file");
  }
}

// --- 2. permutation ------------------------------------------------------------

// Section order recovered from byte offsets alone; spans must tile the text.
std::vector<Section> order_from_spans(const RenderedPrompt& p, bool& tiles) {
  std::vector<Section> order{Section::system, Section::context, Section::response, Section::history};
  std::sort(order.begin(), order.end(), [&](Section a, Section b) {
    return p.section_spans[static_cast<std::size_t>(a)].begin <
           p.section_spans[static_cast<std::size_t>(b)].begin;
  });
  std::size_t cursor = 0;
  tiles = true;
  for (const auto s : order) {
    const auto span = p.section_spans[static_cast<std::size_t>(s)];
    if (span.begin != cursor || span.end < span.begin) tiles = false;
    cursor = span.end;
  }
  if (cursor != p.text.size()) tiles = false;
  return order;
}

void permutation(Report& r) {
  const auto lib = TemplateLibrary::builtin();
  const std::vector<Section> identity{Section::system, Section::context, Section::response, Section::history};
  const std::vector<Section> int_order{Section::system, Section::history, Section::context, Section::response};
  for (const auto& [task, expected] :
       std::vector<std::pair<TaskId, std::vector<Section>>>{{TaskId::persona_advanced, identity},
                                                             {TaskId::int_task, int_order}}) {
    const auto p = render_prompt(lib.get(task), golden_sections(lib, task), golden_user_message(task));
    bool tiles = false;
    const auto order = order_from_spans(p, tiles);
    r.expect(tiles, std::string(to_string(task)) + ": spans do not tile the prompt");
    r.expect(order == expected, std::string(to_string(task)) + ": section order mismatch");
  }
  // Spot check that the spans delimit the right content.
  const auto adv = render_prompt(lib.get(TaskId::persona_advanced),
                                 golden_sections(lib, TaskId::persona_advanced),
                                 golden_user_message(TaskId::persona_advanced));
  r.expect(adv.section_text(Section::history).find("Bonjour je m'appelle Jean-Claude") != std::string_view::npos,
           "persona_advanced: history span lacks the history");
  const auto intp = render_prompt(lib.get(TaskId::int_task), golden_sections(lib, TaskId::int_task),
                                  golden_user_message(TaskId::int_task));
  r.expect(intp.section_text(Section::context).find("a pear with arms") != std::string_view::npos,
           "int: context span lacks the image description");
}

// --- 3. filter corpus -------------------------------------------------------------

std::set<std::string> rule_names(const std::set<RuleId>& rules) {
  std::set<std::string> out;
  for (const auto r : rules) out.insert(std::string(to_string(r)));
  return out;
}

std::string join(const std::set<std::string>& s) {
  std::string out;
  for (const auto& x : s) out += (out.empty() ? "" : ",") + x;
  return "{" + out + "}";
}

FinishReason finish_of(const std::string& s) {
  return s == "length" ? FinishReason::length_limit : FinishReason::stop_marker;
}

FilterOutcome run_entry(const ResponseFilter& f, const json& e, const std::string& raw,
                        FinishReason finish, const json& regen) {
  auto queue = std::make_shared<std::vector<json>>(regen.begin(), regen.end());
  auto next = std::make_shared<std::size_t>(0);
  if (e.at("task") == "int") {
    return f.filter_int(raw, [queue, next](const std::string&) -> std::string {
      if (*next >= queue->size()) throw BackendError("no more regenerations");
      return (*queue)[(*next)++].at("text").get<std::string>();
    });
  }
  return f.filter_persona(Completion{raw, finish, 0, 1}, e.at("first").get<bool>(), "fr",
                          [queue, next]() -> Completion {
                            if (*next >= queue->size()) throw BackendError("no more regenerations");
                            const auto& r = (*queue)[(*next)++];
                            return {r.at("text").get<std::string>(), finish_of(r.at("finish")), 0, 1};
                          });
}

void filter_corpus(Report& r) {
  const auto& f = ResponseFilter::builtin();
  std::ifstream in(std::filesystem::path(ROLEPLAY_ACCEPTANCE_DIR) / "filter_corpus.jsonl");
  int n = 0;
  std::set<std::string> raws;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto e = json::parse(line);
    ++n;
    raws.insert(e.at("raw").get<std::string>());
    const auto tag = "#" + std::to_string(n) + " ";
    const auto out = run_entry(f, e, e.at("raw"), finish_of(e.at("finish")), e.at("regen"));
    const auto expected_detected = e.at("detected").get<std::set<std::string>>();
    const auto expected_fixed = e.at("fixed").get<std::set<std::string>>();
    r.expect(rule_names(out.detected) == expected_detected,
             tag + "detected " + join(rule_names(out.detected)) + ", intended " + join(expected_detected));
    r.expect(rule_names(out.fixed) == expected_fixed,
             tag + "fixed " + join(rule_names(out.fixed)) + ", intended " + join(expected_fixed));
    r.expect(out.final_text == e.at("final").get<std::string>(), tag + "final text: " + out.final_text);

    // Idempotence: the delivered text passes through unchanged, without any
    // regeneration. Only violations left unfixed the first time may be seen
    // again.
    const auto again = run_entry(f, e, out.final_text, FinishReason::stop_marker, json::array());
    r.expect(again.final_text == out.final_text, tag + "not idempotent: " + again.final_text);
    std::set<RuleId> unfixed;
    std::set_difference(out.detected.begin(), out.detected.end(), out.fixed.begin(), out.fixed.end(),
                        std::inserter(unfixed, unfixed.end()));
    r.expect(std::includes(unfixed.begin(), unfixed.end(), again.detected.begin(), again.detected.end()),
             tag + "re-filtering flags " + join(rule_names(again.detected)));
    r.expect(again.fixed.empty(), tag + "re-filtering fixes " + join(rule_names(again.fixed)));
  }
  r.expect(n == 60, "corpus has " + std::to_string(n) + " messages");
  for (const char* exemplar :
       {"En tant que assistant, je préfère me détendre en pratiquant la méditation.",
        "Salut, comment allez-vous aujourd'hui? Le temps est très mauvais aujourd'hui, non? (Hello, how are "
        "you today? The weather is terrible today, isn't it?)\n\nOui,"}) {
    r.expect(raws.count(exemplar) == 1, std::string("exemplar missing: ") + exemplar);
  }
}

// --- 4. error rates ------------------------------------------------------------

struct Batch {
  std::vector<Conversation> conversations;
  std::vector<std::shared_ptr<FaultInjectingBackend>> injectors;
};

Batch selfchat_batch(const std::string& setup_a, const std::string& setup_b, int count, int rounds,
                     std::optional<FaultInjectingBackend::Rates> rates) {
  const auto a = SetupSpec::load(mock(setup_a));
  const auto b = SetupSpec::load(mock(setup_b));
  auto gateway = std::make_shared<Gateway>();
  a.register_backend(*gateway);
  b.register_backend(*gateway);
  const auto runtime = Runtime::with_defaults(gateway);
  Batch batch;
  if (rates) {
    const auto& fc = runtime.filter->config();
    for (const auto& id : {a.config.backend_id, b.config.backend_id}) {
      auto injector = std::make_shared<FaultInjectingBackend>(
          gateway->backend(id), *rates, 100 + batch.injectors.size(),
          std::vector<std::string>{fc.int_empty_instruction, fc.int_too_long_instruction});
      gateway->register_backend(id, injector);
      batch.injectors.push_back(injector);
    }
  }
  SelfChatJob job;
  job.setup_a = a.config;
  job.setup_b = b.config;
  job.n_rounds = rounds;
  job.n_conversations = count;
  if (a.persona_file) job.persona_pool = load_personas(*a.persona_file);
  batch.conversations = run_selfchat(runtime, job);
  return batch;
}

void error_rates(Report& r) {
  const double p_empty = 0.08, p_long = 0.15;
  const auto batch = selfchat_batch("int_user.setup", "int_agent.setup", 100, 10,
                                    FaultInjectingBackend::Rates{p_empty, p_long});
  std::size_t valid = 0, turns = 0;
  for (const auto& c : batch.conversations) {
    valid += c.valid ? 1 : 0;
    turns += c.turns.size();
  }
  r.expect(batch.conversations.size() == 100 && valid == 100, "expected 100 valid conversations");
  r.expect(turns == 2000, "expected 10 rounds of 2 turns each");

  std::size_t eligible = 0, empty = 0, too_long = 0;
  for (const auto& inj : batch.injectors) {
    eligible += inj->eligible_calls();
    empty += inj->injected_empty();
    too_long += inj->injected_too_long();
  }
  const auto report = error_report(batch.conversations);
  r.expect(report.rows.size() == 1, "expected one INT row");
  if (report.rows.empty()) return;
  const auto& row = report.rows[0];
  r.expect(row.task == TaskId::int_task, "row is not INT");
  r.expect(row.filtered_turns == eligible, "filtered turns differ from injector calls");
  r.expect(row.detected.size() == 2 && row.fixed.size() == 2, "INT row needs Empty and Too Long columns");
  if (row.detected.size() != 2) return;
  // Oracle: detected rates equal the injected fractions.
  const double oracle_empty = double(empty) / double(eligible);
  const double oracle_long = double(too_long) / double(eligible);
  r.expect(std::fabs(row.detected[0] - oracle_empty) < 1e-12, "empty rate differs from injected fraction");
  r.expect(std::fabs(row.detected[1] - oracle_long) < 1e-12, "too-long rate differs from injected fraction");
  r.expect(std::fabs(row.detected[0] - p_empty) <= 0.02,
           "empty rate " + std::to_string(row.detected[0]) + " outside 0.08 +- 0.02");
  r.expect(std::fabs(row.detected[1] - p_long) <= 0.02,
           "too-long rate " + std::to_string(row.detected[1]) + " outside 0.15 +- 0.02");
  r.expect(row.detected_total && std::fabs(*row.detected_total - row.detected[0] - row.detected[1]) < 1e-12,
           "total column must be empty + too long");
  r.expect(row.fixed_total.has_value(), "fixed total missing");
  for (std::size_t i = 0; i < 2; ++i) r.expect(row.fixed[i] <= row.detected[i], "fixed exceeds detected");
  const auto text = report.to_text();
  for (const char* col : {"Empty", "Too Long", "Total"}) {
    r.expect(text.find(col) != std::string::npos, std::string("INT table lacks ") + col);
  }
  r.expect(report.to_json()[0]["detected"].contains("Total"), "INT JSON lacks Total");

  const auto persona = selfchat_batch("selfchat_a.setup", "selfchat_b.setup", 10, 5,
                                      FaultInjectingBackend::Rates{0.1, 0.1});
  const auto prep = error_report(persona.conversations);
  r.expect(!prep.rows.empty(), "persona batch produced no rows");
  for (const auto& pr : prep.rows) {
    r.expect(!pr.detected_total && !pr.fixed_total, "persona row has a total");
    r.expect(pr.detected.size() == 3, "persona row needs three columns");
  }
  r.expect(prep.to_text().find("Total") == std::string::npos, "persona table shows a total");
  r.expect(prep.to_json().dump().find("Total") == std::string::npos, "persona JSON carries a total");
}

// --- 5. Elo ------------------------------------------------------------------------

std::vector<BattleResult> random_battles(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  const std::vector<std::string> setups{"s1", "s2", "s3", "s4", "s5", "s6"};
  std::uniform_int_distribution<std::size_t> pick(0, setups.size() - 1);
  std::uniform_int_distribution<int> verdict(0, 2);
  std::vector<BattleResult> out;
  for (int i = 0; i < n; ++i) {
    BattleResult b;
    std::size_t a = pick(rng), c = pick(rng);
    while (c == a) c = pick(rng);
    b.setup_a = setups[a];
    b.setup_b = setups[c];
    b.conversation_a = "ca" + std::to_string(i);
    b.conversation_b = "cb" + std::to_string(i);
    b.annotator_id = "ann" + std::to_string(i % 7);
    b.timestamp = i;
    for (const auto& crit : battle_criteria(false)) b.verdicts[crit] = static_cast<Verdict>(verdict(rng));
    out.push_back(b);
  }
  return out;
}

void elo(Report& r) {
  r.expect(expected_score(1000, 1000) == 0.5, "E(1000,1000) != 0.5");
  const auto battles = random_battles(42, 200);

  EloTable t;
  const double k = t.config().k_factor;
  for (const auto& b : battles) {
    for (const auto& [crit, v] : b.verdicts) {
      const double ra = t.rating(crit, b.setup_a), rb = t.rating(crit, b.setup_b);
      const double s = v == Verdict::a_wins ? 1.0 : v == Verdict::b_wins ? 0.0 : 0.5;
      const double e = 1.0 / (1.0 + std::pow(10.0, (rb - ra) / 400.0));
      const double d = k * (s - e);
      EloTable probe = t;
      BattleResult single = b;
      single.verdicts = {{crit, v}};
      probe.update(single);
      r.expect(probe.rating(crit, b.setup_a) == ra + d && probe.rating(crit, b.setup_b) == rb - d,
               "update is not +d/-d for " + crit);
    }
    t.update(b);
  }
  for (const auto& crit : battle_criteria(false)) {
    double sum = 0;
    for (const auto& [id, rating] : t.ratings(crit)) sum += rating;
    r.expect(std::fabs(sum - 1000.0 * double(t.ratings(crit).size())) < 1e-9, "rating mass drifted: " + crit);
  }

  // Ledger round trip, replayed twice.
  TempDir dir("acceptance-elo");
  {
    BattleLedger ledger(dir.path() / "battles.ledger");
    for (const auto& b : battles) ledger.append(b);
  }
  const auto loaded = BattleLedger::read(dir.path() / "battles.ledger");
  r.expect(loaded == battles, "ledger round trip changed battles");
  const auto first = replay(loaded), second = replay(loaded);
  r.expect(first.to_json().dump() == second.to_json().dump(), "replays differ");
  for (const auto& crit : battle_criteria(false)) {
    r.expect(first.ratings(crit) == second.ratings(crit), "replay doubles differ: " + crit);
    r.expect(first.ratings(crit) == t.ratings(crit), "replay differs from incremental updates: " + crit);
  }

  EloTable fixture;
  for (const auto& row : table1_rows()) fixture.set_rating("overall", table1_setup_id(row), row.ratings[0]);
  const auto ranked = fixture.rank("overall");
  r.expect(ranked.size() == table1_rows().size(), "fixture rank size");
  for (const auto& entry : ranked) {
    for (const auto& row : table1_rows()) {
      if (table1_setup_id(row) == entry.setup_id) {
        r.expect(row.rank == entry.rank, entry.setup_id + " ranked " + std::to_string(entry.rank));
      }
    }
  }
}

// --- 6. median of three -----------------------------------------------------------

void median(Report& r) {
  int checked = 0;
  for (int a = 1; a <= 5; ++a) {
    for (int b = 1; b <= 5; ++b) {
      for (int c = 1; c <= 5; ++c) {
        std::vector<int> s{a, b, c};
        const int m = median_of_three(s);
        std::sort(s.begin(), s.end());
        r.expect(m == s[1], "median(" + std::to_string(a) + "," + std::to_string(b) + "," +
                                std::to_string(c) + ")");
        ++checked;
      }
    }
  }
  r.expect(checked == 125, "not exhaustive");
  for (const auto& bad : std::vector<std::vector<int>>{{0, 1, 2}, {1, 2, 6}, {1, 2}, {1, 2, 3, 4}}) {
    bool threw = false;
    try {
      median_of_three(bad);
    } catch (const ValidationError&) {
      threw = true;
    }
    r.expect(threw, "invalid scores accepted");
  }
}

// --- 7. stats ------------------------------------------------------------------------

// Words with their expected token; capitalised variants and elided articles
// are generated, so the oracle never tokenizes.
const std::vector<std::pair<std::string, std::string>> kPool{
    {"poire", "poire"}, {"Poire", "poire"}, {"vois", "vois"},   {"ÉTÉ", "été"},     {"été", "été"},
    {"chien", "chien"}, {"Chien", "chien"}, {"bras", "bras"},   {"3", "3"},         {"maïs", "maïs"},
    {"Noël", "noël"},   {"œuvre", "œuvre"}, {"ça", "ça"},       {"Ça", "ça"},       {"image", "image"},
    {"jambes", "jambes"}, {"sourire", "sourire"}, {"Lilia", "lilia"}, {"fruit", "fruit"}, {"drôle", "drôle"}};
const std::vector<std::string> kPunct{"", ",", ".", " !", " ?", "...", " :"};

void stats(Report& r) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> word(0, kPool.size() - 1), punct(0, kPunct.size() - 1);
  std::uniform_int_distribution<int> len(1, 8), turns(0, 8), coin(0, 4), setup(0, 2);
  std::vector<Conversation> corpus;
  std::map<std::string, std::set<std::string>> agent, user;
  std::set<std::string> all_agent, all_user;
  for (int i = 0; i < 1000; ++i) {
    Conversation c;
    c.id = "c" + std::to_string(i);
    c.config.setup_id = "setup" + std::to_string(setup(rng));
    c.config.persona = {"t"};
    const int n = turns(rng);
    for (int t = 0; t < n; ++t) {
      const auto speaker = t % 2 ? Speaker::agent : Speaker::user;
      auto& per_setup = (speaker == Speaker::agent ? agent : user)[c.config.setup_id];
      auto& global = speaker == Speaker::agent ? all_agent : all_user;
      std::string msg;
      for (int w = len(rng); w > 0; --w) {
        const auto& [surface, token] = kPool[word(rng)];
        if (!msg.empty()) msg += ' ';
        if (coin(rng) == 0) {
          msg += "l'";
          per_setup.insert("l");
          global.insert("l");
        }
        msg += surface + kPunct[punct(rng)];
        per_setup.insert(token);
        global.insert(token);
      }
      c.turns.push_back({speaker, msg, t});
    }
    corpus.push_back(c);
  }
  SurfaceNormalizer norm;
  std::set<std::string> all = all_agent;
  all.insert(all_user.begin(), all_user.end());
  r.expect(vocabulary_size(corpus, SpeakerFilter::agent, norm) == all_agent.size(), "agent vocabulary");
  r.expect(vocabulary_size(corpus, SpeakerFilter::user, norm) == all_user.size(), "user vocabulary");
  r.expect(vocabulary_size(corpus, SpeakerFilter::all, norm) == all.size(), "total vocabulary");

  std::vector<Conversation> growing;
  std::size_t previous = 0;
  for (const auto& c : corpus) {
    growing.push_back(c);
    const auto now = vocabulary_size(growing, SpeakerFilter::all, norm);
    r.expect(now >= previous, "vocabulary shrank at " + c.id);
    previous = now;
    if (growing.size() >= 200) break;
  }

  const auto report = stats_report(corpus, StatsGrouping::persona, norm);
  r.expect(report.rows.size() == 3, "expected three setups");
  for (const auto& row : report.rows) {
    r.expect(row.agent_vocab == agent[row.setup_id].size(), row.setup_id + ": agent vocabulary");
    r.expect(row.user_vocab == user[row.setup_id].size(), row.setup_id + ": user vocabulary");
    const long gap = std::labs(long(agent[row.setup_id].size()) - long(user[row.setup_id].size()));
    r.expect(long(row.gap) == gap, row.setup_id + ": gap");
  }

  for (const bool is_int : {false, true}) {
    StatsReport layout;
    layout.grouping = is_int ? StatsGrouping::int_task : StatsGrouping::persona;
    SetupLabels labels;
    for (const auto& row : is_int ? table4b_rows() : table4a_rows()) {
      StatsRow s;
      s.setup_id = row.config;
      s.agent_vocab = std::size_t(row.values[0]);
      s.user_vocab = std::size_t(row.values[1]);
      (is_int ? s.conversation_vocab : s.gap) = std::size_t(row.values[2]);
      layout.rows.push_back(s);
      labels.add(row.config, {row.strategy, row.config});
    }
    const auto text = layout.render(labels);
    r.expect(text.find(is_int ? "Conv." : "Gap") != std::string::npos, "layout header");
    r.expect(text.find(is_int ? "Gap" : "Conv.") == std::string::npos, "layout mixes columns");
    for (const auto& row : is_int ? table4b_rows() : table4a_rows()) {
      r.expect(text.find(row.config) != std::string::npos && text.find(std::to_string(row.values[0])) != std::string::npos,
               "layout lacks " + row.config);
    }
  }
}

// --- 8. tight budget -----------------------------------------------------------------

std::vector<int> mentioned_messages(const std::string& prompt) {
  std::vector<int> out;
  for (int i = 0; i < 20; ++i) {
    if (prompt.find("numéro " + std::to_string(i) + " :") != std::string::npos) out.push_back(i);
  }
  return out;
}

void tight_budget(Report& r) {
  auto backend = std::make_shared<MockBackend>();
  backend->add_match("Summarize the following", {"Le chien et le travail."});
  backend->add_match("In one line, state", {"Has a dog"});
  backend->push({"D'accord, raconte-moi en plus sur ton chien."});
  backend->set_loop(true);
  auto gateway = std::make_shared<Gateway>();
  gateway->register_backend("mock", backend);
  auto runtime = Runtime::with_defaults(gateway);
  runtime.pipeline.token_budget = 420;

  SessionConfig config;
  config.setup_id = "budget";
  config.task = TaskId::persona_advanced;
  config.persona = {"I have a husky named Claude.", "I am an accountant."};
  DialogAgent agent(runtime, config);
  const int budget = agent.token_budget();

  std::vector<HistoryTurn> history;
  std::size_t seen_prompts = 0, summarized = 0;
  std::set<int> summarized_messages;
  for (int i = 0; i < 20; ++i) {
    const auto msg = "Message numéro " + std::to_string(i) + " : je te parle de mon chien et de mon travail.";
    const auto reply = agent.respond(history, msg);
    r.expect(estimate_tokens(reply.prompt.text) <= budget, "prompt over budget at exchange " + std::to_string(i));
    history.push_back({Speaker::user, msg});
    history.push_back({Speaker::agent, reply.text});
    agent.observe(history);

    const auto& m = agent.memory();
    const auto prompts = backend->prompts();
    for (; seen_prompts < prompts.size(); ++seen_prompts) {
      const auto& p = prompts[seen_prompts];
      if (p.find("Summarize the following") == std::string::npos) continue;
      for (const int k : mentioned_messages(p)) summarized_messages.insert(k);
    }
    // The removed range, and only it, has been handed to the summarizer.
    std::set<int> removed;
    for (std::size_t t = 0; t < m.window_start; t += 2) removed.insert(int(t / 2));
    r.expect(summarized_messages == removed, "summarized messages differ from removed turns at exchange " +
                                                 std::to_string(i));
    r.expect(m.summarized_upto == m.window_start, "summarized_upto != window_start");
    if (m.summary) {
      r.expect(m.summary->covers_turn_range.first == 0 &&
                   m.summary->covers_turn_range.second + 1 == m.window_start,
               "summary range differs from the removed range");
    }
    r.expect(agent.context().count(ContextTag::episode_summary) <= 1, "more than one summary entry");
    summarized = m.window_start;
  }
  r.expect(summarized > 0, "nothing was truncated");
  r.expect(agent.context().count(ContextTag::episode_summary) == 1, "expected exactly one summary entry");
  r.expect(history.size() == 40, "expected 40 turns");
}

// --- 9. CLI --------------------------------------------------------------------------

struct Proc {
  int code = -1;
  std::string out;
};

Proc shell(const std::string& command) {
  Proc p;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) return p;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) p.out.append(buf, n);
  const int status = ::pclose(pipe);
  p.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return p;
}

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

void cli(Report& r) {
  TempDir dir("acceptance-cli");
  const std::string bin = quoted(RPCHAT_BIN);
  for (const char* name : {"one.jsonl", "two.jsonl"}) {
    const auto run = shell(bin + " selfchat --setup-a " + quoted(mock("selfchat_a.setup")) + " --setup-b " +
                           quoted(mock("selfchat_b.setup")) + " --count 10 --rounds 10 --seed 7 --out " +
                           quoted(dir.path() / name) + " 2>&1");
    r.expect(run.code == 0, std::string("selfchat exit ") + std::to_string(run.code) + ": " + run.out);
  }
  const auto one = slurp(dir.path() / "one.jsonl");
  r.expect(!one.empty() && one == slurp(dir.path() / "two.jsonl"), "selfchat runs differ");
  const auto corpus = load_corpus(dir.path() / "one.jsonl");
  r.expect(corpus.errors.empty(), "corpus has malformed lines");
  r.expect(corpus.conversations.size() == 10, "expected 10 conversations");
  for (const auto& c : corpus.conversations) {
    r.expect(c.valid && c.turns.size() == 20, c.id + ": expected 10 rounds");
  }

  std::ofstream(dir.path() / "input.txt") << "Bonjour !\nJe m'appelle Jean-Claude.\nJ'ai un yorkshire.\n"
                                             "Tu fais quoi dans la vie ?\nEt le week-end ?\n";
  const auto chat = shell(bin + " chat --setup " + quoted(mock("chat.setup")) + " < " +
                          quoted(dir.path() / "input.txt") + " 2>&1");
  r.expect(chat.code == 0, "chat exit " + std::to_string(chat.code));
  std::size_t replies = 0;
  for (auto pos = chat.out.find("agent: "); pos != std::string::npos; pos = chat.out.find("agent: ", pos + 1)) {
    ++replies;
  }
  r.expect(replies == 5, "chat gave " + std::to_string(replies) + " replies");
  r.expect(chat.out.find("5 exchanges, 10 turns") != std::string::npos, "chat summary line missing");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Report&)>>> criteria{
      {"golden prompts", golden_prompts},
      {"section permutation", permutation},
      {"filter corpus", filter_corpus},
      {"error rates", error_rates},
      {"elo engine", elo},
      {"median of three", median},
      {"vocabulary statistics", stats},
      {"tight budget memory", tight_budget},
      {"cli selfchat and chat", cli},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Report r;
    try {
      criteria[i].second(r);
    } catch (const std::exception& e) {
      r.failures.push_back(std::string("exception: ") + e.what());
    }
    const auto label = std::to_string(i + 1) + " " + criteria[i].first;
    if (r.failures.empty()) {
      std::cout << "PASS " << label << "\n";
    } else {
      ++failed;
      std::cout << "FAIL " << label << ": " << r.failures.size() << " problem(s)\n";
      for (const auto& f : r.failures) std::cout << "    " << f << "\n";
    }
  }
  return failed;
}
