#include "cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "roleplay/arena.hpp"
#include "roleplay/errors.hpp"
#include "roleplay/response_filter.hpp"
#include "roleplay/selfchat.hpp"
#include "roleplay/service.hpp"
#include "roleplay/stats.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string flags_text(const FilterOutcome& f) {
  std::vector<std::string> detected, fixed;
  for (const auto r : f.detected) detected.emplace_back(to_string(r));
  for (const auto r : f.fixed) fixed.emplace_back(to_string(r));
  return "detected=" + text::join(detected, ",") + " fixed=" + text::join(fixed, ",");
}

/// Assets and pipeline settings: a service config when given, else defaults.
ServiceConfig cli_config(const std::string& config_file) {
  if (config_file.empty()) return ServiceConfig::defaults();
  auto c = ServiceConfig::parse(KeyValueConfig::load(config_file), fs::path(config_file).parent_path());
  c.validate(false);
  return c;
}

std::vector<Conversation> read_corpus(const std::string& path, std::ostream& err) {
  auto loaded = load_any_corpus(path);
  for (const auto& e : loaded.errors) {
    err << "warning: " << path << ":" << e.line << ": " << e.message << "\n";
  }
  return std::move(loaded.conversations);
}

SetupLabels read_labels(const std::string& file) {
  return file.empty() ? SetupLabels{} : load_setup_labels(file);
}

void write_text(const std::string& file, const std::string& content) {
  if (!fs::path(file).parent_path().empty()) fs::create_directories(fs::path(file).parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + file);
  out << content;
}

// --- chat -------------------------------------------------------------------

struct ChatOptions {
  std::string setup;
  std::string config;
  std::string corpus_dir;
  int turns = 0;
};

int cmd_chat(const ChatOptions& o, std::istream& in, std::ostream& out, std::ostream& err) {
  const auto spec = SetupSpec::load(o.setup);
  const auto service = cli_config(o.config);
  auto gateway = build_gateway(service.backends);
  spec.register_backend(*gateway);
  const auto runtime = build_runtime(service, gateway);

  auto config = spec.config;
  if (config.persona.empty() && is_persona_task(config.task) && spec.persona_file) {
    const auto pool = load_personas(*spec.persona_file);
    if (!pool.empty()) config.persona = pool.front();
  }
  std::optional<fs::path> root;
  if (!o.corpus_dir.empty()) root = fs::path(o.corpus_dir);
  if (root) fs::create_directories(*root);
  auto store = std::make_shared<ConversationStore>(root);
  ChatService chat(store, runtime);
  const auto id = chat.create_session(config);
  err << "session " << id << " (" << to_string(config.task) << ", backend " << config.backend_id
      << ")\n";

  int turns = 0;
  for (std::string line; (o.turns <= 0 || turns < o.turns) && std::getline(in, line);) {
    const auto message = std::string(text::trim(line));
    if (message.empty()) continue;
    if (message == "/quit") break;
    const auto result = chat.post_message(id, message);
    out << "agent: " << result.reply << "\n";
    if (!result.filter.clean()) out << "  [filter " << flags_text(result.filter) << "]\n";
    out.flush();
    ++turns;
  }
  err << "session " << id << ": " << turns << " exchanges, " << store->get(id).turns.size()
      << " turns\n";
  return exit_ok;
}

// --- selfchat ---------------------------------------------------------------

struct SelfChatOptions {
  std::string setup_a, setup_b;
  std::string config;
  int rounds = 10;
  int count = 1;
  std::uint64_t seed = 0;
  std::string out_file;
  std::string corpus_dir;
  int parallel = 1;
  std::string opener;
  std::string cue = "Bonjour !";
  std::string personas;
  double fault_empty = 0.0;
  double fault_too_long = 0.0;
  std::uint64_t fault_seed = 0;
};

int cmd_selfchat(const SelfChatOptions& o, std::ostream& out, std::ostream& err) {
  const auto a = SetupSpec::load(o.setup_a);
  const auto b = SetupSpec::load(o.setup_b);
  const auto service = cli_config(o.config);
  auto gateway = build_gateway(service.backends);
  a.register_backend(*gateway);
  b.register_backend(*gateway);
  const auto runtime = build_runtime(service, gateway);

  std::vector<std::shared_ptr<FaultInjectingBackend>> injectors;
  if (o.fault_empty > 0 || o.fault_too_long > 0) {
    if (o.fault_empty < 0 || o.fault_too_long < 0 || o.fault_empty + o.fault_too_long > 1) {
      throw ConfigError("fault rates must be non-negative and sum to at most 1");
    }
    const auto& fc = runtime.filter->config();
    std::set<std::string> wrapped;
    for (const auto* side : {&a.config, &b.config}) {
      if (!wrapped.insert(side->backend_id).second) continue;
      if (!gateway->has(side->backend_id)) continue;  // reported by the job below
      auto injector = std::make_shared<FaultInjectingBackend>(
          gateway->backend(side->backend_id), FaultInjectingBackend::Rates{o.fault_empty, o.fault_too_long},
          o.fault_seed + injectors.size(),
          std::vector<std::string>{fc.int_empty_instruction, fc.int_too_long_instruction});
      gateway->register_backend(side->backend_id, injector);
      injectors.push_back(injector);
    }
  }

  SelfChatJob job;
  job.setup_a = a.config;
  job.setup_b = b.config;
  job.n_rounds = o.rounds;
  job.n_conversations = o.count;
  job.seed = o.seed;
  job.greeting_cue = o.cue;
  if (!o.opener.empty()) job.fixed_opener = o.opener;
  job.parallelism = o.parallel;
  std::optional<fs::path> pool_file;
  if (!o.personas.empty()) {
    pool_file = fs::path(o.personas);
  } else if (a.persona_file) {
    pool_file = a.persona_file;
  } else if (b.persona_file) {
    pool_file = b.persona_file;
  }
  if (pool_file) job.persona_pool = load_personas(*pool_file);
  for (const auto* side : {&job.setup_a, &job.setup_b}) {
    if (!gateway->has(side->backend_id)) {
      throw ConfigError("setup '" + side->setup_id + "' uses unregistered backend '" +
                        side->backend_id + "'");
    }
  }
  job.validate();

  std::unique_ptr<ConversationStore> store;
  if (!o.corpus_dir.empty()) {
    fs::create_directories(o.corpus_dir);
    store = std::make_unique<ConversationStore>(fs::path(o.corpus_dir));
    store->recover();
  }
  const auto conversations = run_selfchat(runtime, job, store.get());

  std::size_t invalid = 0;
  for (const auto& c : conversations) {
    if (!c.valid) {
      ++invalid;
      err << "invalid " << c.id << ": " << c.invalid_reason << "\n";
    }
  }
  if (!o.out_file.empty()) {
    write_corpus(o.out_file, conversations);
  } else if (o.corpus_dir.empty()) {
    out << export_corpus(conversations);
  }
  err << conversations.size() << " conversations x " << o.rounds << " rounds (" << invalid
      << " invalid)\n";
  for (const auto& inj : injectors) {
    err << "faults: " << inj->injected_empty() << " empty, " << inj->injected_too_long()
        << " too long over " << inj->eligible_calls() << " calls\n";
  }
  return invalid == conversations.size() && !conversations.empty() ? exit_backend : exit_ok;
}

// --- arena ------------------------------------------------------------------

struct ArenaOptions {
  std::string ledger;
  std::string family = "persona";
  double k = 32.0;
  double initial = 1000.0;
  std::string labels;
  std::string format = "text";
  std::string corpus;
  int battles_per_pair = 10;
  bool no_reuse = false;
};

int cmd_arena_replay(const ArenaOptions& o, std::ostream& out) {
  EloConfig config;
  config.k_factor = o.k;
  config.initial_rating = o.initial;
  config.criteria = battle_criteria(parse_family(o.family) == ArenaFamily::int_task);
  const auto table = replay(BattleLedger::read(o.ledger), config);
  if (o.format == "json") {
    out << table.to_json().dump(2) << "\n";
  } else {
    out << render_elo_table(table, read_labels(o.labels));
  }
  return exit_ok;
}

int cmd_arena_pairs(const ArenaOptions& o, std::ostream& out, std::ostream& err) {
  const auto family = parse_family(o.family);
  std::vector<Conversation> corpus;
  for (auto& c : read_corpus(o.corpus, err)) {
    if (family_of(c.config.task) == family) corpus.push_back(std::move(c));
  }
  PairingPolicy policy;
  policy.battles_per_pair = o.battles_per_pair;
  policy.min_battles = std::min(policy.min_battles, o.battles_per_pair);
  policy.max_battles = std::max(policy.max_battles, o.battles_per_pair);
  policy.allow_reuse = !o.no_reuse;
  for (const auto& p : build_arena_pairs(corpus, policy)) {
    out << json{{"conversation_a", p.conversation_a},
                {"conversation_b", p.conversation_b},
                {"setup_a", p.setup_a},
                {"setup_b", p.setup_b}}
               .dump()
        << "\n";
  }
  return exit_ok;
}

// --- stats ------------------------------------------------------------------

struct StatsOptions {
  std::string corpus;
  std::string group = "persona";
  std::string normalizer = "surface";
  std::string plugin_cmd;
  std::string plot;
  std::string labels;
  std::string format = "text";
};

int cmd_stats(const StatsOptions& o, std::ostream& out, std::ostream& err) {
  const auto grouping = parse_grouping(o.group);
  auto spec = o.normalizer;
  if (spec == "plugin") {
    if (o.plugin_cmd.empty()) throw ConfigError("--normalizer plugin needs --plugin-cmd");
    spec = "plugin:" + o.plugin_cmd;
  }
  auto normalizer = make_normalizer(spec);
  CorpusFilter valid_only;
  valid_only.include_invalid = false;
  std::vector<Conversation> corpus;
  for (auto& c : read_corpus(o.corpus, err)) {
    if (valid_only.matches(c)) corpus.push_back(std::move(c));
  }
  const auto report = stats_report(corpus, grouping, *normalizer);
  if (o.format == "json") {
    out << report.to_json().dump(2) << "\n";
  } else {
    out << report.render(read_labels(o.labels));
  }
  if (!o.plot.empty()) {
    std::vector<Conversation> grouped;
    for (const auto& c : corpus) {
      if ((c.config.task == TaskId::int_task) == (grouping == StatsGrouping::int_task)) {
        grouped.push_back(c);
      }
    }
    write_text(o.plot, words_plot_csv(grouped));
  }
  return exit_ok;
}

// --- filter-audit -----------------------------------------------------------

struct AuditOptions {
  std::string input;
  std::string task = "persona_shallow";
  std::string language = "fr";
  std::string config;
  std::string script;
  bool first = false;
  std::string format = "text";
};

int cmd_filter_audit(const AuditOptions& o, std::ostream& out, std::ostream&) {
  const auto task = parse_task(o.task);
  if (!task) throw ConfigError("unknown task '" + o.task + "'");
  const auto service = cli_config(o.config);
  const ResponseFilter filter(FilterConfig::load(service.filter_rules, service.wordlists_dir));
  std::shared_ptr<MockBackend> regen;
  if (!o.script.empty()) regen = MockBackend::from_file(o.script);
  const auto regenerate = [&]() -> Completion {
    if (!regen) throw BackendError("no regeneration backend in audit mode");
    GenerationRequest r;
    r.prompt = "regenerate";
    r.stop_markers = {"\n"};
    return regen->complete(r);
  };

  std::ifstream in(o.input, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + o.input);
  std::map<RuleId, std::size_t> detected, fixed;
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    if (text::trim(line).empty()) continue;
    Completion raw;
    bool first = o.first;
    if (line.front() == '{') {
      const auto j = json::parse(line);
      raw.text = j.at("text").get<std::string>();
      if (j.value("finish_reason", std::string{}) == "length_limit") {
        raw.finish_reason = FinishReason::length_limit;
      }
      first = j.value("first", first);
    } else {
      raw.text = text::replace_all(line, "\\n", "\n");
    }
    const auto outcome =
        *task == TaskId::int_task
            ? filter.filter_int(raw.text, [&](const std::string&) { return regenerate().text; })
            : filter.filter_persona(raw, first, o.language, regenerate);
    ++n;
    for (const auto r : outcome.detected) ++detected[r];
    for (const auto r : outcome.fixed) ++fixed[r];
    if (o.format == "json") {
      json row = outcome;
      row["raw"] = raw.text;
      row["final"] = outcome.final_text;
      out << row.dump() << "\n";
    } else {
      out << (outcome.clean() ? "ok    " : "FLAG  ") << outcome.final_text << "\n";
      if (!outcome.clean()) out << "      " << flags_text(outcome) << "\n";
    }
  }
  if (o.format != "json") {
    out << n << " messages\n";
    for (const auto& [rule, count] : detected) {
      out << "  " << to_string(rule) << ": detected " << count << ", fixed "
          << (fixed.count(rule) ? fixed[rule] : 0) << "\n";
    }
  }
  return exit_ok;
}

// --- report -----------------------------------------------------------------

struct ReportOptions {
  std::string kind;
  std::string corpus;
  std::string ledger;
  std::string family = "persona";
  std::string group = "persona";
  std::string labels;
  std::string format = "text";
  double k = 32.0;
  double initial = 1000.0;
};

int cmd_report(const ReportOptions& o, std::ostream& out, std::ostream& err) {
  const bool as_json = o.format == "json";
  if (o.kind == "elo") {
    if (o.ledger.empty()) throw ConfigError("report elo needs --ledger");
    ArenaOptions a;
    a.ledger = o.ledger;
    a.family = o.family;
    a.k = o.k;
    a.initial = o.initial;
    a.labels = o.labels;
    a.format = o.format;
    return cmd_arena_replay(a, out);
  }
  if (o.corpus.empty()) throw ConfigError("report " + o.kind + " needs --corpus");
  if (o.kind == "stats") {
    StatsOptions s;
    s.corpus = o.corpus;
    s.group = o.group;
    s.labels = o.labels;
    s.format = o.format;
    return cmd_stats(s, out, err);
  }
  CorpusFilter valid_only;
  valid_only.include_invalid = false;
  std::vector<Conversation> corpus;
  for (auto& c : read_corpus(o.corpus, err)) {
    if (valid_only.matches(c)) corpus.push_back(std::move(c));
  }
  if (o.kind == "errors") {
    const auto report = error_report(corpus);
    out << (as_json ? report.to_json().dump(2) + "\n" : report.to_text());
    return exit_ok;
  }
  // scores
  const auto family = parse_family(o.family);
  std::erase_if(corpus, [&](const Conversation& c) { return family_of(c.config.task) != family; });
  const auto report = aggregate_scores(corpus, rating_criteria(family == ArenaFamily::int_task));
  out << (as_json ? report.to_json().dump(2) + "\n" : render_score_table(report, read_labels(o.labels)));
  for (const auto& m : report.missing) err << "missing: " << m << "\n";
  return exit_ok;
}

// --- serve ------------------------------------------------------------------

int cmd_serve(const std::string& config_file, int port, std::ostream& out, std::ostream& err) {
  auto config = ServiceConfig::load(config_file);
  if (port >= 0) config.port = port;
  DialogServer server(config);
  if (!server.bind()) {
    err << "cannot listen on " << config.host << ":" << config.port << "\n";
    return exit_config;
  }
  out << "listening on http://" << config.host << ":" << server.port() << "\n";
  out.flush();
  server.serve();
  return exit_ok;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Role-play dialogue toolkit: chat, self-chat, arena and corpus reports."};
  app.require_subcommand(1);
  const std::vector<std::string> formats{"text", "json"};
  const std::vector<std::string> families{"persona", "int"};

  ChatOptions chat;
  auto* chat_cmd = app.add_subcommand("chat", "Line-oriented chat with one agent (stdin -> stdout).");
  chat_cmd->add_option("--setup", chat.setup, "Setup file")->required()->check(CLI::ExistingFile);
  chat_cmd->add_option("--config", chat.config, "Service config for assets and backends")
      ->check(CLI::ExistingFile);
  chat_cmd->add_option("--corpus-dir", chat.corpus_dir, "Persist the session under this store root");
  chat_cmd->add_option("--turns", chat.turns, "Stop after N exchanges (0 = until EOF or /quit)");

  SelfChatOptions sc;
  auto* sc_cmd = app.add_subcommand("selfchat", "Generate self-chats between two setups.");
  sc_cmd->add_option("--setup-a", sc.setup_a, "Side A (speaks first)")->required()->check(CLI::ExistingFile);
  sc_cmd->add_option("--setup-b", sc.setup_b, "Side B")->required()->check(CLI::ExistingFile);
  sc_cmd->add_option("--config", sc.config, "Service config for assets and backends")->check(CLI::ExistingFile);
  sc_cmd->add_option("--rounds", sc.rounds, "Exchanges per conversation")->capture_default_str();
  sc_cmd->add_option("--count", sc.count, "Number of conversations")->capture_default_str();
  sc_cmd->add_option("--seed", sc.seed, "Persona sampling seed")->capture_default_str();
  sc_cmd->add_option("--out", sc.out_file, "Write the corpus document here (default: stdout)");
  sc_cmd->add_option("--corpus-dir", sc.corpus_dir, "Also store the conversations under this root");
  sc_cmd->add_option("--parallel", sc.parallel, "Conversations generated concurrently")->capture_default_str();
  sc_cmd->add_option("--opener", sc.opener, "Fixed first message of side A");
  sc_cmd->add_option("--cue", sc.cue, "Cue side A answers to open the conversation")->capture_default_str();
  sc_cmd->add_option("--personas", sc.personas, "Persona pool file")->check(CLI::ExistingFile);
  sc_cmd->add_option("--fault-empty", sc.fault_empty, "Injected empty-reply rate");
  sc_cmd->add_option("--fault-too-long", sc.fault_too_long, "Injected too-long-reply rate");
  sc_cmd->add_option("--fault-seed", sc.fault_seed, "Fault injection seed");

  ArenaOptions arena;
  auto* arena_cmd = app.add_subcommand("arena", "Battle ledger tools.");
  arena_cmd->require_subcommand(1);
  auto* replay_cmd = arena_cmd->add_subcommand("replay", "Replay a battle ledger into Elo ratings.");
  replay_cmd->add_option("--ledger", arena.ledger, "Ledger file (JSON lines)")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--family", arena.family, "persona or int")->check(CLI::IsMember(families));
  replay_cmd->add_option("--k", arena.k, "K factor")->capture_default_str();
  replay_cmd->add_option("--initial", arena.initial, "Initial rating")->capture_default_str();
  replay_cmd->add_option("--labels", arena.labels, "Setup labels file")->check(CLI::ExistingFile);
  replay_cmd->add_option("--format", arena.format)->check(CLI::IsMember(formats));
  auto* pairs_cmd = arena_cmd->add_subcommand("pairs", "List battle pairs for a corpus.");
  pairs_cmd->add_option("--corpus", arena.corpus, "Store root or corpus document")->required();
  pairs_cmd->add_option("--family", arena.family, "persona or int")->check(CLI::IsMember(families));
  pairs_cmd->add_option("--battles-per-pair", arena.battles_per_pair)->capture_default_str();
  pairs_cmd->add_flag("--no-reuse", arena.no_reuse, "Fail instead of reusing conversations");

  StatsOptions stats;
  auto* stats_cmd = app.add_subcommand("stats", "Vocabulary and message length statistics.");
  stats_cmd->add_option("--corpus", stats.corpus, "Store root or corpus document")->required();
  stats_cmd->add_option("--group", stats.group, "persona or int")->check(CLI::IsMember(families));
  stats_cmd->add_option("--normalizer", stats.normalizer, "surface, plugin or plugin:<command>");
  stats_cmd->add_option("--plugin-cmd", stats.plugin_cmd, "Lemmatizer command for --normalizer plugin");
  stats_cmd->add_option("--plot", stats.plot, "Write per-message word counts (CSV) here");
  stats_cmd->add_option("--labels", stats.labels, "Setup labels file")->check(CLI::ExistingFile);
  stats_cmd->add_option("--format", stats.format)->check(CLI::IsMember(formats));

  AuditOptions audit;
  auto* audit_cmd = app.add_subcommand("filter-audit", "Run the response filter over raw replies.");
  audit_cmd->add_option("--input", audit.input, "One reply per line, or JSON lines {text, finish_reason, first}")
      ->required()
      ->check(CLI::ExistingFile);
  audit_cmd->add_option("--task", audit.task, "Task whose filter applies")->capture_default_str();
  audit_cmd->add_option("--language", audit.language, "Target language")->capture_default_str();
  audit_cmd->add_flag("--first", audit.first, "Treat replies as first agent messages");
  audit_cmd->add_option("--script", audit.script, "Mock script serving regenerations")->check(CLI::ExistingFile);
  audit_cmd->add_option("--config", audit.config, "Service config for filter assets")->check(CLI::ExistingFile);
  audit_cmd->add_option("--format", audit.format)->check(CLI::IsMember(formats));

  ReportOptions report;
  auto* report_cmd = app.add_subcommand("report", "Render a report table.");
  report_cmd->add_option("kind", report.kind, "elo, scores, errors or stats")
      ->required()
      ->check(CLI::IsMember({"elo", "scores", "errors", "stats"}));
  report_cmd->add_option("--corpus", report.corpus, "Store root or corpus document");
  report_cmd->add_option("--ledger", report.ledger, "Battle ledger (elo)")->check(CLI::ExistingFile);
  report_cmd->add_option("--family", report.family, "persona or int")->check(CLI::IsMember(families));
  report_cmd->add_option("--group", report.group, "persona or int (stats)")->check(CLI::IsMember(families));
  report_cmd->add_option("--labels", report.labels, "Setup labels file")->check(CLI::ExistingFile);
  report_cmd->add_option("--k", report.k, "K factor (elo)");
  report_cmd->add_option("--initial", report.initial, "Initial rating (elo)");
  report_cmd->add_option("--format", report.format)->check(CLI::IsMember(formats));

  std::string serve_config;
  int serve_port = -1;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service.");
  serve_cmd->add_option("--config", serve_config, "Service config file")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", serve_port, "Override listen.port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (chat_cmd->parsed()) return cmd_chat(chat, in, out, err);
    if (sc_cmd->parsed()) return cmd_selfchat(sc, out, err);
    if (replay_cmd->parsed()) return cmd_arena_replay(arena, out);
    if (pairs_cmd->parsed()) return cmd_arena_pairs(arena, out, err);
    if (stats_cmd->parsed()) return cmd_stats(stats, out, err);
    if (audit_cmd->parsed()) return cmd_filter_audit(audit, out, err);
    if (report_cmd->parsed()) return cmd_report(report, out, err);
    if (serve_cmd->parsed()) return cmd_serve(serve_config, serve_port, out, err);
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return exit_backend;
  } catch (const NormalizerError& e) {
    err << "normalizer error: " << e.what() << "\n";
    return exit_backend;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_config;
  }
  return exit_config;
}

}  // namespace roleplay
