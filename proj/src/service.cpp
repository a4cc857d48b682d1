#include "roleplay/service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <set>

#include <httplib.h>

#include "roleplay/errors.hpp"
#include "roleplay/response_filter.hpp"
#include "roleplay/stats.hpp"
#include "roleplay/text.hpp"

namespace roleplay {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

int positive_int(const KeyValueConfig& kv, const std::string& key, int fallback) {
  const int v = kv.get_int(key, fallback);
  if (v < 1) throw ConfigError(kv.origin() + ": " + key + " must be >= 1");
  return v;
}

HttpReply json_reply(int status, const json& body) { return {status, body.dump(), "application/json"}; }

HttpReply error_reply(int status, const std::string& message,
                      const std::vector<std::string>& problems = {}) {
  json body{{"error", message}};
  if (!problems.empty()) body["problems"] = problems;
  return json_reply(status, body);
}

std::optional<std::string> query_value(const std::multimap<std::string, std::string>& query,
                                       const std::string& key) {
  const auto it = query.find(key);
  if (it == query.end()) return std::nullopt;
  return it->second;
}

struct MalformedBody : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json parse_object(const std::string& body) {
  auto j = json::parse(body);  // parse_error -> 400
  if (!j.is_object()) throw MalformedBody("body must be a JSON object");
  return j;
}

std::string family_name(ArenaFamily f) { return f == ArenaFamily::int_task ? "int" : "persona"; }

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string current;
  for (const char c : path) {
    if (c == '/') {
      if (!current.empty()) parts.push_back(std::move(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!current.empty()) parts.push_back(std::move(current));
  return parts;
}

}  // namespace

ServiceConfig ServiceConfig::defaults() {
  ServiceConfig c;
  const auto root = asset_root();
  c.templates_dir = root / "templates";
  c.filter_rules = root / "filter" / "rules.conf";
  c.wordlists_dir = root / "lang";
  c.auxiliary_dir = root / "auxiliary";
  c.shots_file = root / "fsb" / "shots.txt";
  return c;
}

ServiceConfig ServiceConfig::parse(const KeyValueConfig& kv, const fs::path& base_dir) {
  kv.require_known({"listen.host", "listen.port", "backend.", "templates", "filter.rules",
                    "filter.wordlists", "auxiliary", "shots", "corpus_dir", "labels", "ui_dir",
                    "context_tokens", "token_budget", "min_keep_units", "max_retries",
                    "memory.enabled", "memory.cadence", "memory.summary_sentences",
                    "elo.k_factor", "elo.initial_rating", "arena.battles_per_pair",
                    "arena.min_battles", "arena.max_battles", "default.task", "default.language",
                    "default.backend"});
  auto c = defaults();
  c.host = kv.get_or("listen.host", c.host);
  c.port = kv.get_int("listen.port", c.port);
  if (c.port < 0 || c.port > 65535) throw ConfigError(kv.origin() + ": listen.port out of range");

  std::map<std::string, BackendSpec> specs;
  std::vector<std::string> order;
  for (const auto& [key, value] : kv.with_prefix("backend.")) {
    const auto dot = key.rfind('.');
    if (dot == std::string::npos || dot == 0) {
      throw ConfigError(kv.origin() + ": backend keys look like backend.<id>.<option>, got '" +
                        key + "'");
    }
    const auto id = key.substr(0, dot);
    const auto option = key.substr(dot + 1);
    if (!specs.count(id)) order.push_back(id);
    auto& spec = specs[id];
    spec.id = id;
    const auto number = [&] {
      try {
        return std::stoi(value);
      } catch (const std::exception&) {
        throw ConfigError(kv.origin() + ": backend." + key + " must be an integer");
      }
    };
    if (option == "kind") {
      if (value != "mock" && value != "http") {
        throw ConfigError(kv.origin() + ": backend." + key + " must be mock or http");
      }
      spec.kind = value;
    } else if (option == "script") {
      spec.script = resolve(base_dir, value);
    } else if (option == "loop") {
      spec.loop = value == "true" || value == "1" || value == "yes";
    } else if (option == "endpoint") {
      spec.endpoint = value;
    } else if (option == "model") {
      spec.model = value;
    } else if (option == "token_env") {
      spec.token_env = value;
    } else if (option == "timeout_ms") {
      spec.timeout_ms = number();
    } else if (option == "parallelism") {
      spec.parallelism = number();
    } else {
      throw ConfigError(kv.origin() + ": unknown backend option '" + option + "'");
    }
  }
  for (const auto& id : order) c.backends.push_back(specs[id]);

  if (auto v = kv.get("templates")) c.templates_dir = resolve(base_dir, *v);
  if (auto v = kv.get("filter.rules")) c.filter_rules = resolve(base_dir, *v);
  if (auto v = kv.get("filter.wordlists")) c.wordlists_dir = resolve(base_dir, *v);
  if (auto v = kv.get("auxiliary")) c.auxiliary_dir = resolve(base_dir, *v);
  if (auto v = kv.get("shots")) c.shots_file = resolve(base_dir, *v);
  if (auto v = kv.get("corpus_dir")) c.corpus_dir = resolve(base_dir, *v);
  if (auto v = kv.get("labels")) c.labels_file = resolve(base_dir, *v);
  if (auto v = kv.get("ui_dir")) c.ui_dir = resolve(base_dir, *v);

  c.pipeline.context_tokens = positive_int(kv, "context_tokens", c.pipeline.context_tokens);
  if (kv.has("token_budget")) c.pipeline.token_budget = positive_int(kv, "token_budget", 1);
  c.pipeline.min_keep_units = positive_int(kv, "min_keep_units", c.pipeline.min_keep_units);
  c.pipeline.max_retries = kv.get_int("max_retries", c.pipeline.max_retries);
  if (c.pipeline.max_retries < 0) throw ConfigError(kv.origin() + ": max_retries must be >= 0");
  c.memory_enabled = kv.get_bool("memory.enabled", c.memory_enabled);
  c.memory_cadence = positive_int(kv, "memory.cadence", c.memory_cadence);
  c.summary_sentences = positive_int(kv, "memory.summary_sentences", c.summary_sentences);
  c.k_factor = kv.get_double("elo.k_factor", c.k_factor);
  c.initial_rating = kv.get_double("elo.initial_rating", c.initial_rating);
  c.pairing.battles_per_pair = positive_int(kv, "arena.battles_per_pair", c.pairing.battles_per_pair);
  c.pairing.min_battles = positive_int(kv, "arena.min_battles", c.pairing.min_battles);
  c.pairing.max_battles = positive_int(kv, "arena.max_battles", c.pairing.max_battles);
  if (auto v = kv.get("default.task")) {
    const auto task = parse_task(*v);
    if (!task) throw ConfigError(kv.origin() + ": unknown default.task '" + *v + "'");
    c.default_task = *task;
  }
  c.default_language = kv.get_or("default.language", c.default_language);
  c.default_backend = kv.get_or("default.backend", "");
  return c;
}

ServiceConfig ServiceConfig::load(const fs::path& file) {
  auto c = parse(KeyValueConfig::load(file), file.parent_path());
  c.validate();
  return c;
}

void ServiceConfig::validate(bool require_backend) const {
  std::vector<std::string> problems;
  const auto need = [&](const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) problems.push_back(what + " does not exist: " + p.string());
  };
  need(templates_dir, "templates");
  need(filter_rules, "filter.rules");
  need(wordlists_dir, "filter.wordlists");
  need(auxiliary_dir, "auxiliary");
  need(shots_file, "shots");
  if (corpus_dir) need(*corpus_dir, "corpus_dir");
  if (labels_file) need(*labels_file, "labels");
  if (ui_dir) need(*ui_dir, "ui_dir");
  if (require_backend && backends.empty()) problems.emplace_back("at least one backend must be registered");
  for (const auto& b : backends) {
    if (b.parallelism < 1) problems.push_back("backend." + b.id + ".parallelism must be >= 1");
    if (b.kind == "mock" && b.script) need(*b.script, "backend." + b.id + ".script");
    if (b.kind == "http" && b.endpoint.empty()) {
      problems.push_back("backend." + b.id + ".endpoint is required for http backends");
    }
  }
  if (!default_backend.empty() &&
      std::none_of(backends.begin(), backends.end(),
                   [&](const BackendSpec& b) { return b.id == default_backend; })) {
    problems.push_back("default.backend '" + default_backend + "' is not registered");
  }
  if (!(k_factor > 0)) problems.emplace_back("elo.k_factor must be > 0");
  if (pairing.min_battles > pairing.max_battles || pairing.battles_per_pair < pairing.min_battles ||
      pairing.battles_per_pair > pairing.max_battles) {
    problems.emplace_back("arena.battles_per_pair must lie in [min_battles, max_battles]");
  }
  if (!problems.empty()) throw ConfigError(text::join(problems, "; "));
}

std::shared_ptr<Backend> make_backend(const BackendSpec& spec) {
  if (spec.kind == "http") {
    HttpBackend::Options o;
    o.endpoint = spec.endpoint;
    o.model = spec.model;
    o.token_env = spec.token_env;
    o.timeout = std::chrono::seconds(std::max(1, spec.timeout_ms / 1000));
    return std::make_shared<HttpBackend>(o);
  }
  auto mock = spec.script ? MockBackend::from_file(*spec.script) : std::make_shared<MockBackend>();
  if (spec.loop) mock->set_loop(true);
  return mock;
}

std::shared_ptr<Gateway> build_gateway(const std::vector<BackendSpec>& specs) {
  auto gateway = std::make_shared<Gateway>();
  for (const auto& s : specs) gateway->register_backend(s.id, make_backend(s), s.parallelism);
  return gateway;
}

Runtime build_runtime(const ServiceConfig& config, std::shared_ptr<Gateway> gateway) {
  Runtime rt;
  rt.templates = TemplateLibrary::load_directory(config.templates_dir);
  rt.gateway = std::move(gateway);
  rt.filter = std::make_shared<ResponseFilter>(
      FilterConfig::load(config.filter_rules, config.wordlists_dir));
  rt.memory.load_templates(config.auxiliary_dir);
  rt.memory.enabled = config.memory_enabled;
  rt.memory.cadence = config.memory_cadence;
  rt.memory.summary_max_sentences = config.summary_sentences;
  rt.pipeline = config.pipeline;
  rt.shots = load_demonstrations(config.shots_file);
  return rt;
}

ImportResult load_any_corpus(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("corpus not found: " + path.string());
  if (!fs::is_directory(path)) return load_corpus(path);
  ConversationStore store(path);
  store.recover();
  ImportResult out;
  out.conversations = store.snapshot();
  std::set<std::string> seen;
  for (const auto& c : out.conversations) seen.insert(c.id);
  auto docs = load_corpus(path);
  for (auto& c : docs.conversations) {
    if (seen.insert(c.id).second) out.conversations.push_back(std::move(c));
  }
  out.errors = std::move(docs.errors);
  return out;
}

ArenaFamily parse_family(std::string_view name) {
  if (name == "persona") return ArenaFamily::persona;
  if (name == "int") return ArenaFamily::int_task;
  throw ValidationError("family must be 'persona' or 'int', got '" + std::string(name) + "'");
}

ArenaFamily family_of(TaskId task) {
  return task == TaskId::int_task ? ArenaFamily::int_task : ArenaFamily::persona;
}

DialogServer::DialogServer(ServiceConfig config, std::shared_ptr<Gateway> gateway)
    : config_(std::move(config)) {
  if (!gateway) {
    config_.validate();
    gateway = build_gateway(config_.backends);
  }
  gateway_ = std::move(gateway);
  runtime_ = build_runtime(config_, gateway_);
  store_ = std::make_shared<ConversationStore>(config_.corpus_dir);
  store_->recover();
  chat_ = std::make_unique<ChatService>(store_, runtime_);
  std::optional<fs::path> persona_file, int_file;
  if (config_.corpus_dir) {
    persona_file = *config_.corpus_dir / "persona.ledger";
    int_file = *config_.corpus_dir / "int.ledger";
  }
  persona_ledger_ = std::make_unique<BattleLedger>(persona_file, battle_criteria(false));
  int_ledger_ = std::make_unique<BattleLedger>(int_file, battle_criteria(true));
  if (config_.labels_file) labels_ = load_setup_labels(*config_.labels_file);
}

DialogServer::~DialogServer() { stop(); }

BattleLedger& DialogServer::ledger(ArenaFamily family) {
  return family == ArenaFamily::int_task ? *int_ledger_ : *persona_ledger_;
}

EloTable DialogServer::elo(ArenaFamily family) const {
  EloConfig ec;
  ec.initial_rating = config_.initial_rating;
  ec.k_factor = config_.k_factor;
  ec.criteria = battle_criteria(family == ArenaFamily::int_task);
  const auto& l = family == ArenaFamily::int_task ? *int_ledger_ : *persona_ledger_;
  return replay(l.battles(), ec);
}

HttpReply DialogServer::handle(const std::string& method, const std::string& path,
                               const std::multimap<std::string, std::string>& query,
                               const std::string& body, const std::string& annotator_header) {
  try {
    const auto parts = split_path(path);
    const auto n = parts.size();
    if (method == "GET" && n == 1 && parts[0] == "health") {
      return json_reply(200, {{"status", "ok"}, {"backends", gateway_->ids()}});
    }
    if (n >= 1 && parts[0] == "sessions") {
      if (method == "POST" && n == 1) return create_session(body);
      if (method == "GET" && n == 2) return get_session(parts[1]);
      if (method == "POST" && n == 3 && parts[2] == "messages") return post_message(parts[1], body);
      if (method == "POST" && n == 3 && parts[2] == "ratings") return post_rating(parts[1], body);
    }
    if (n == 2 && parts[0] == "arena") {
      auto annotator = annotator_header;
      if (annotator.empty()) annotator = query_value(query, "annotator").value_or("");
      if (method == "GET" && parts[1] == "next-pair") return next_pair(query, annotator);
      if (method == "POST" && parts[1] == "battles") return post_battle(body, annotator);
    }
    if (method == "GET" && n == 2 && parts[0] == "reports") return report(parts[1], query);
    return error_reply(404, "no route for " + method + " " + path);
  } catch (const json::parse_error& e) {
    return error_reply(400, std::string("malformed JSON body: ") + e.what());
  } catch (const json::exception& e) {
    return error_reply(400, std::string("malformed body: ") + e.what());
  } catch (const MalformedBody& e) {
    return error_reply(400, e.what());
  } catch (const ValidationError& e) {
    return error_reply(422, e.what(), e.problems());
  } catch (const NotFoundError& e) {
    return error_reply(404, e.what());
  } catch (const ConflictError& e) {
    return error_reply(409, e.what());
  } catch (const BackendError& e) {
    return error_reply(502, e.what(), e.failures());
  } catch (const NormalizerError& e) {
    return error_reply(502, e.what());
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

HttpReply DialogServer::create_session(const std::string& body) {
  auto request = parse_object(body);
  json merged{{"task", std::string(to_string(config_.default_task))},
              {"language", config_.default_language}};
  if (!config_.default_backend.empty()) {
    merged["backend_id"] = config_.default_backend;
  } else if (const auto ids = gateway_->ids(); !ids.empty()) {
    merged["backend_id"] = ids.front();
  }
  merged.update(request);
  const auto config = merged.get<SessionConfig>();
  const auto id = chat_->create_session(config);
  return json_reply(201, {{"session_id", id}});
}

HttpReply DialogServer::get_session(const std::string& id) {
  return json_reply(200, json(store_->get(id)));
}

HttpReply DialogServer::post_message(const std::string& id, const std::string& body) {
  const auto request = parse_object(body);
  const auto text = request.at("text").get<std::string>();
  const auto result = chat_->post_message(id, text);
  json flags = result.filter;
  return json_reply(200, {{"agent_reply", result.reply},
                          {"filter_flags", flags},
                          {"turn_index", result.turn_index}});
}

HttpReply DialogServer::post_rating(const std::string& id, const std::string& body) {
  const auto request = parse_object(body);
  const auto conversation = store_->get(id);
  const auto criterion = request.at("criterion").get<std::string>();
  const auto allowed = rating_criteria(conversation.config.task == TaskId::int_task);
  if (std::find(allowed.begin(), allowed.end(), criterion) == allowed.end()) {
    throw ValidationError("criterion '" + criterion + "' does not apply to this task");
  }
  const auto rating = make_rating(criterion, request.at("scores").get<std::array<int, 3>>());
  store_->annotate(id, rating);
  return json_reply(201, {{"criterion", rating.criterion}, {"median", rating.median}});
}

std::vector<Conversation> DialogServer::arena_corpus(ArenaFamily family) const {
  CorpusFilter f;
  f.include_invalid = false;
  std::vector<Conversation> out;
  for (auto& c : store_->snapshot(f)) {
    if (family_of(c.config.task) == family && !c.turns.empty()) out.push_back(std::move(c));
  }
  return out;
}

HttpReply DialogServer::next_pair(const std::multimap<std::string, std::string>& query,
                                  const std::string& annotator) {
  const auto family = parse_family(query_value(query, "family").value_or("persona"));
  const auto corpus = arena_corpus(family);
  std::set<std::string> setups;
  for (const auto& c : corpus) setups.insert(c.config.setup_id);
  if (setups.size() < 2) {
    return error_reply(404, "no " + family_name(family) +
                                " conversations from two distinct setups to compare");
  }
  const auto pairs = build_arena_pairs(corpus, config_.pairing);
  const auto& l = ledger(family);

  // Balance rule: the least-judged setup pair first, capped at max_battles.
  std::map<std::pair<std::string, std::string>, int> judged_count;
  for (const auto& b : l.battles()) {
    judged_count[std::minmax(b.setup_a, b.setup_b)]++;
  }
  const ArenaPair* best = nullptr;
  int best_count = 0;
  for (const auto& p : pairs) {
    const int count = judged_count[std::minmax(p.setup_a, p.setup_b)];
    if (count >= config_.pairing.max_battles) continue;
    if (l.judged(annotator, p.conversation_a, p.conversation_b)) continue;
    if (!best || count < best_count) {
      best = &p;
      best_count = count;
    }
  }
  if (!best) return error_reply(404, "no unjudged pair left for annotator '" + annotator + "'");

  json out{{"family", family_name(family)},
           {"criteria", battle_criteria(family == ArenaFamily::int_task)},
           {"setup_a", best->setup_a},
           {"setup_b", best->setup_b}};
  for (const auto& c : corpus) {
    if (c.id == best->conversation_a) out["conversation_a"] = c;
    if (c.id == best->conversation_b) out["conversation_b"] = c;
  }
  return json_reply(200, out);
}

HttpReply DialogServer::post_battle(const std::string& body, const std::string& annotator) {
  auto request = parse_object(body);
  if (!request.contains("annotator_id") && !annotator.empty()) request["annotator_id"] = annotator;
  auto battle = request.get<BattleResult>();
  if (battle.annotator_id.empty()) throw ValidationError("annotator_id is required");

  const auto conv_a = store_->get(battle.conversation_a);
  const auto conv_b = store_->get(battle.conversation_b);
  std::vector<std::string> problems;
  if (conv_a.config.setup_id != battle.setup_a) {
    problems.push_back("setup_a does not match conversation " + conv_a.id);
  }
  if (conv_b.config.setup_id != battle.setup_b) {
    problems.push_back("setup_b does not match conversation " + conv_b.id);
  }
  const auto family = family_of(conv_a.config.task);
  if (family != family_of(conv_b.config.task)) {
    problems.emplace_back("conversations belong to different task families");
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));

  std::lock_guard lock(battle_mutex_);
  auto& l = ledger(family);
  // Server-side timestamps keep the ledger order equal to the replay order.
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  std::int64_t latest = 0;
  for (const auto& b : l.battles()) latest = std::max(latest, b.timestamp);
  battle.timestamp = std::max<std::int64_t>(now, latest + 1);
  l.append(battle);

  const auto table = elo(family);
  json ratings = json::object();
  for (const auto& c : table.config().criteria) {
    ratings[c] = {{battle.setup_a, table.rating(c, battle.setup_a)},
                  {battle.setup_b, table.rating(c, battle.setup_b)}};
  }
  return json_reply(201, {{"battles", l.size()}, {"timestamp", battle.timestamp}, {"elo", ratings}});
}

HttpReply DialogServer::report(const std::string& kind,
                               const std::multimap<std::string, std::string>& query) {
  const auto format = query_value(query, "format").value_or("json");
  if (format != "json" && format != "text") {
    throw ValidationError("format must be 'json' or 'text'");
  }
  const bool as_text = format == "text";
  const auto text_reply = [](std::string s) { return HttpReply{200, std::move(s), "text/plain; charset=utf-8"}; };

  if (kind == "elo") {
    const auto family = parse_family(query_value(query, "family").value_or("persona"));
    if (ledger(family).size() == 0) return error_reply(404, "no battles recorded");
    const auto table = elo(family);
    return as_text ? text_reply(render_elo_table(table, labels_)) : json_reply(200, table.to_json());
  }
  CorpusFilter valid_only;
  valid_only.include_invalid = false;
  const auto corpus = store_->snapshot(valid_only);
  if (kind == "scores") {
    const auto family = parse_family(query_value(query, "family").value_or("persona"));
    std::vector<Conversation> subset;
    for (const auto& c : corpus) {
      if (family_of(c.config.task) == family) subset.push_back(c);
    }
    const auto scores = aggregate_scores(subset, rating_criteria(family == ArenaFamily::int_task));
    if (scores.rows.empty()) return error_reply(404, "no rated conversations");
    return as_text ? text_reply(render_score_table(scores, labels_)) : json_reply(200, scores.to_json());
  }
  if (kind == "stats") {
    const auto grouping = parse_grouping(query_value(query, "group").value_or("persona"));
    SurfaceNormalizer normalizer;
    const auto stats = stats_report(corpus, grouping, normalizer);
    if (stats.rows.empty()) return error_reply(404, "no conversations for this grouping");
    return as_text ? text_reply(stats.render(labels_)) : json_reply(200, stats.to_json());
  }
  if (kind == "errors") {
    std::optional<ErrorRateReport> errors;
    try {
      errors = error_report(corpus);
    } catch (const ValidationError& e) {
      return error_reply(404, e.what());
    }
    return as_text ? text_reply(errors->to_text()) : json_reply(200, errors->to_json());
  }
  return error_reply(404, "unknown report '" + kind + "'");
}

void DialogServer::mount(httplib::Server& server) {
  const auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
    const auto reply =
        handle(req.method, req.path, query, req.body, req.get_header_value("X-Annotator-Id"));
    res.status = reply.status;
    res.set_content(reply.body, reply.content_type);
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type, X-Annotator-Id"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  if (config_.ui_dir) server.set_mount_point("/ui", config_.ui_dir->string());
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get(".*", dispatch);
  server.Post(".*", dispatch);
}

bool DialogServer::bind() {
  server_ = std::make_unique<httplib::Server>();
  mount(*server_);
  if (config_.port == 0) {
    bound_port_ = server_->bind_to_any_port(config_.host);
    return bound_port_ > 0;
  }
  if (!server_->bind_to_port(config_.host, config_.port)) return false;
  bound_port_ = config_.port;
  return true;
}

void DialogServer::serve() {
  if (server_) server_->listen_after_bind();
}

void DialogServer::stop() {
  if (server_) server_->stop();
}

}  // namespace roleplay
