#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "roleplay/errors.hpp"
#include "roleplay/history.hpp"
#include "roleplay/prompt_template.hpp"
#include "roleplay/text.hpp"

using namespace roleplay;
using roleplay::testing::golden_sections;
using roleplay::testing::golden_user_message;
using roleplay::testing::read_golden;

namespace {

const TemplateLibrary& library() {
  static const TemplateLibrary lib = TemplateLibrary::builtin();
  return lib;
}

using Tuple = std::array<std::string, 4>;
const Tuple kCanonical{"I_s", "C", "I_a", "X"};

}  // namespace

TEST_CASE("apply_permutation") {
  CHECK(apply_permutation(SigmaPermutation::identity(), kCanonical) == kCanonical);
  CHECK(apply_permutation(task_sigma(TaskId::int_task), kCanonical) ==
        Tuple{"I_s", "X", "C", "I_a"});

  SUBCASE("inverse restores the tuple for every permutation") {
    std::array<int, 4> order{0, 1, 2, 3};
    do {
      const SigmaPermutation sigma(order);
      CHECK(apply_permutation(sigma.inverse(), apply_permutation(sigma, kCanonical)) == kCanonical);
    } while (std::next_permutation(order.begin(), order.end()));
  }

  SUBCASE("non-bijective order is rejected") {
    CHECK_THROWS_AS(SigmaPermutation({0, 0, 2, 3}), ValidationError);
    CHECK_THROWS_AS(SigmaPermutation({0, 1, 2, 4}), ValidationError);
    CHECK_THROWS_AS(SigmaPermutation::from_matrix({{{1, 0, 0, 0}, {1, 0, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}}),
                    ValidationError);
  }
}

TEST_CASE("golden renders match byte for byte") {
  for (const TaskId task : {TaskId::vicuna_basis, TaskId::fsb, TaskId::persona_shallow,
                            TaskId::persona_advanced, TaskId::int_task}) {
    CAPTURE(to_string(task));
    const auto sections = golden_sections(library(), task);
    const auto rendered = render_prompt(library().get(task), sections, golden_user_message(task));
    CHECK(rendered.text == read_golden(std::string(to_string(task)) + ".txt"));
  }
}

TEST_CASE("persona_advanced with empty history has no history lines") {
  const auto& tmpl = library().get(TaskId::persona_advanced);
  auto sections = make_sections(tmpl, roleplay::testing::persona_context(), {}, "fr");
  const auto rendered = render_prompt(tmpl, sections, "Bonjour je m'appelle Jean-Claude");
  CHECK(rendered.text == read_golden("persona_advanced_empty_history.txt"));
  const auto response = rendered.section_text(Section::response);
  const auto history = rendered.section_text(Section::history);
  CHECK(text::ends_with(response, "conversation :\n\n"));
  CHECK(history == "USER: Bonjour je m'appelle Jean-Claude\nASSISTANT:");
}

TEST_CASE("section spans follow the task permutation") {
  for (const TaskId task : {TaskId::vicuna_basis, TaskId::fsb, TaskId::persona_shallow,
                            TaskId::persona_advanced, TaskId::int_task}) {
    const auto rendered =
        render_prompt(library().get(task), golden_sections(library(), task), golden_user_message(task));
    CHECK(rendered.order_in_text() == task_sigma(task).order());
    std::size_t cursor = 0;
    for (const Section s : task_sigma(task).order()) {
      const auto span = rendered.section_spans[static_cast<std::size_t>(s)];
      CHECK(span.begin == cursor);
      cursor = span.end;
    }
    CHECK(cursor == rendered.text.size());
  }
  const auto adv = render_prompt(library().get(TaskId::persona_advanced),
                                 golden_sections(library(), TaskId::persona_advanced),
                                 golden_user_message(TaskId::persona_advanced));
  CHECK(text::starts_with(adv.section_text(Section::context), "You ACT as a regular person."));
  const auto intp = render_prompt(library().get(TaskId::int_task),
                                  golden_sections(library(), TaskId::int_task),
                                  golden_user_message(TaskId::int_task));
  CHECK(text::starts_with(intp.section_text(Section::history), "\nUSER: Bonjour Lilia"));
  CHECK(text::ends_with(intp.section_text(Section::context), "a pear with arms\n\n"));
}

TEST_CASE("rendering is pure") {
  const auto sections = golden_sections(library(), TaskId::persona_advanced);
  const auto a = render_prompt(library().get(TaskId::persona_advanced), sections, "x");
  const auto b = render_prompt(library().get(TaskId::persona_advanced), sections, "x");
  CHECK(a.text == b.text);
  CHECK(a.section_spans == b.section_spans);
  CHECK(a.token_estimate == estimate_tokens(a.text));
}

TEST_CASE("render errors") {
  SUBCASE("missing persona slot names the slot") {
    const auto& tmpl = library().get(TaskId::persona_shallow);
    const auto sections = make_sections(tmpl, {}, {}, "fr");
    try {
      render_prompt(tmpl, sections, "Bonjour");
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("{persona}") != std::string::npos);
    }
  }
  SUBCASE("missing image description for int") {
    const auto& tmpl = library().get(TaskId::int_task);
    CHECK_THROWS_AS(render_prompt(tmpl, make_sections(tmpl, {}, {}, "fr"), "Bonjour"),
                    ValidationError);
  }
  SUBCASE("unknown task id") {
    CHECK_THROWS_AS(render_prompt(library(), "blenderbot", {}, "Bonjour"), ValidationError);
  }
}

TEST_CASE("template parser validation") {
  const std::string header = "@task persona_shallow\n";
  CHECK_THROWS_AS(PromptTemplate::parse(header + "@section system\nA\n@section context\n"),
                  ValidationError);
  CHECK_THROWS_AS(PromptTemplate::parse(header +
                                        "@section history\n@section system\n@section context\n"
                                        "@section response\n"),
                  ValidationError);
  CHECK_THROWS_AS(PromptTemplate::parse(header +
                                        "@section system\n{persona}{persona}\n@section context\n"
                                        "@section response\n@section history\n"),
                  ValidationError);
  CHECK_THROWS_AS(PromptTemplate::parse(header +
                                        "@section system\n{?summary}x\n@section context\n"
                                        "@section response\n@section history\n"),
                  ValidationError);
  const auto ok = PromptTemplate::parse(header +
                                        "@section system\n{?summary}S={summary}{/summary}\n"
                                        "@section context\n{persona}\n@section response\n"
                                        "@section history\n{history}{user_message}");
  CHECK(ok.required_slots() == std::set<std::string>{"persona", "history", "user_message"});
  CHECK(ok.slots().count("summary") == 1);
}

TEST_CASE("every built-in template references each slot once and has instructions") {
  for (const TaskId task : {TaskId::vicuna_basis, TaskId::persona_shallow,
                            TaskId::persona_advanced, TaskId::int_task}) {
    const auto sections = make_sections(library().get(task), {}, {}, "fr");
    CHECK_FALSE(sections.system.items.empty());
    for (const auto& item : sections.system.items) {
      CHECK(item.find('{') == std::string::npos);
    }
  }
}

namespace {

// Independent oracle: enumerate every suffix length (in whole units from the
// newest end), keep the longest whose cost fits.
std::size_t oracle_keep_units(const ConversationHistory& h, int budget, int min_keep,
                              const HistoryCost& cost) {
  const std::size_t turns = h.turns.size();
  std::vector<std::size_t> starts;  // turn index where a suffix of n units begins
  starts.push_back(turns);
  for (std::size_t n = 1;; ++n) {
    if (2 * n <= turns) {
      starts.push_back(turns - 2 * n);
    } else if (2 * n - 1 == turns) {
      starts.push_back(0);
      break;
    } else {
      break;
    }
  }
  const std::size_t units = starts.size() - 1;
  std::size_t best = 0;
  for (std::size_t n = 0; n <= units; ++n) {
    std::vector<HistoryTurn> suffix(h.turns.begin() + static_cast<std::ptrdiff_t>(starts[n]),
                                    h.turns.end());
    if (cost(suffix) <= budget) best = n;
  }
  return std::max(best, std::min<std::size_t>(units, static_cast<std::size_t>(min_keep)));
}

ConversationHistory random_history(std::mt19937& rng, std::size_t turns) {
  std::uniform_int_distribution<int> words(1, 25);
  ConversationHistory h;
  for (std::size_t i = 0; i < turns; ++i) {
    std::string text;
    const int n = words(rng);
    for (int w = 0; w < n; ++w) text += (w ? " mot" : "mot") + std::to_string(w);
    h.turns.push_back({i % 2 == 0 ? Speaker::user : Speaker::agent, text});
  }
  return h;
}

}  // namespace

TEST_CASE("truncate_history") {
  const HistoryCost cost = [](const std::vector<HistoryTurn>& suffix) {
    int total = 100;  // fixed prompt overhead
    for (const auto& t : suffix) total += estimate_tokens(t.text) + 2;
    return total;
  };

  SUBCASE("short history is kept whole") {
    std::mt19937 rng(1);
    const auto h = random_history(rng, 6);
    const auto r = truncate_history(h, 2048, 2, cost);
    CHECK(r.kept.turns == h.turns);
    CHECK(r.removed.empty());
  }

  SUBCASE("20 pairs with a tight budget match the exhaustive suffix oracle") {
    std::mt19937 rng(7);
    const auto h = random_history(rng, 40);
    for (int budget : {150, 200, 260, 333, 420, 999}) {
      const auto r = truncate_history(h, budget, 1, cost);
      const auto expected_units = oracle_keep_units(h, budget, 1, cost);
      CHECK(r.kept.pairs().size() == expected_units);
      CHECK(r.removed.size() == 20 - expected_units);
      // removed + kept reconstructs the history in order
      std::vector<HistoryTurn> rebuilt;
      for (const auto& unit : r.removed) rebuilt.insert(rebuilt.end(), unit.begin(), unit.end());
      rebuilt.insert(rebuilt.end(), r.kept.turns.begin(), r.kept.turns.end());
      CHECK(rebuilt == h.turns);
    }
  }

  SUBCASE("randomized histories match the oracle, including odd lengths") {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
      const auto h = random_history(rng, static_cast<std::size_t>(rng() % 31));
      const int budget = 50 + static_cast<int>(rng() % 600);
      const int min_keep = 1 + static_cast<int>(rng() % 3);
      const auto r = truncate_history(h, budget, min_keep, cost);
      CHECK(r.kept.pairs().size() == oracle_keep_units(h, budget, min_keep, cost));
      CHECK(r.removed_turn_count() + r.kept.turns.size() == h.turns.size());
    }
  }

  SUBCASE("budget below every suffix keeps the latest pair") {
    std::mt19937 rng(3);
    const auto h = random_history(rng, 10);
    const auto r = truncate_history(h, 1, 1, cost);
    REQUIRE(r.kept.turns.size() == 2);
    CHECK(r.kept.turns[0] == h.turns[8]);
    CHECK(r.kept.turns[1] == h.turns[9]);
  }

  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(truncate_history({}, 0, 1), ValidationError);
    CHECK_THROWS_AS(truncate_history({}, 10, 0), ValidationError);
  }
}

TEST_CASE("history validation and windowing") {
  ConversationHistory h;
  h.turns = {{Speaker::user, "a"}, {Speaker::user, "b"}};
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h.turns = {{Speaker::agent, "a"}, {Speaker::user, "  "}};
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h.turns = {{Speaker::agent, "a"}, {Speaker::user, "b"}, {Speaker::agent, "c"}};
  CHECK_NOTHROW(h.validate());
  h.k_window = 1;
  CHECK(h.windowed().turns.size() == 2);
}

TEST_CASE("situational context revisions and singletons") {
  SituationalContext ctx;
  ctx.add(ContextTag::persona_traits, "a");
  ctx.set_unique(ContextTag::episode_summary, "s1");
  ctx.set_unique(ContextTag::episode_summary, "s2");
  ctx.add(ContextTag::episode_summary, "s3");
  CHECK(ctx.revision() == 4);
  CHECK(ctx.count(ContextTag::episode_summary) == 1);
  CHECK(ctx.find(ContextTag::episode_summary) == "s3");
  CHECK(ctx.remove(ContextTag::episode_summary));
  CHECK(ctx.revision() == 5);
  CHECK_FALSE(ctx.remove(ContextTag::episode_summary));
  CHECK(ctx.revision() == 5);
  CHECK_THROWS_AS(ctx.set_unique(ContextTag::persona_traits, "x"), ValidationError);
}
