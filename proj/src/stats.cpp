#include "roleplay/stats.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <map>
#include <set>

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "roleplay/errors.hpp"
#include "roleplay/text.hpp"
#include "roleplay/text_table.hpp"

namespace roleplay {

namespace {

bool speaker_matches(Speaker s, SpeakerFilter f) {
  return f == SpeakerFilter::all || (f == SpeakerFilter::agent) == (s == Speaker::agent);
}

}  // namespace

std::vector<std::string> SurfaceNormalizer::normalize(std::string_view message) {
  return text::word_tokens(text::lowercase(message));
}

PluginNormalizer::PluginNormalizer(std::string command, int timeout_ms)
    : command_(std::move(command)), timeout_ms_(timeout_ms) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw NormalizerError("plugin: socketpair failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw NormalizerError("plugin: fork failed");
  }
  if (pid == 0) {
    ::dup2(fds[1], STDIN_FILENO);
    ::dup2(fds[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);
  pid_ = pid;
  fd_ = fds[0];
}

PluginNormalizer::~PluginNormalizer() {
  if (fd_ >= 0) ::close(fd_);
  if (pid_ > 0) {
    int status = 0;
    // Closing the socket ends a well-behaved plugin; give it a moment.
    for (int i = 0; i < 50 && ::waitpid(pid_, &status, WNOHANG) == 0; ++i) ::usleep(2000);
    if (::waitpid(pid_, &status, WNOHANG) == 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
    }
  }
}

std::vector<std::string> PluginNormalizer::normalize(std::string_view message) {
  std::lock_guard lock(mutex_);
  std::string line(message);
  std::replace(line.begin(), line.end(), '\n', ' ');
  std::replace(line.begin(), line.end(), '\r', ' ');
  line += '\n';
  for (std::size_t sent = 0; sent < line.size();) {
    const auto n = ::send(fd_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw NormalizerError("plugin '" + command_ + "' is unreachable (write failed)");
    }
    sent += static_cast<std::size_t>(n);
  }

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms_);
  while (pending_.find('\n') == std::string::npos) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                          deadline - std::chrono::steady_clock::now())
                          .count();
    if (left <= 0) throw NormalizerError("plugin '" + command_ + "' timed out");
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(left));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) throw NormalizerError("plugin '" + command_ + "' timed out");
    char buf[4096];
    const auto n = ::recv(fd_, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw NormalizerError("plugin '" + command_ + "' is unreachable (no answer)");
    pending_.append(buf, static_cast<std::size_t>(n));
  }
  const auto eol = pending_.find('\n');
  const std::string answer = pending_.substr(0, eol);
  pending_.erase(0, eol + 1);

  std::vector<std::string> out;
  std::string current;
  for (const char c : answer) {
    if (c == ' ' || c == '\t' || c == '\r') {
      if (!current.empty()) out.push_back(text::lowercase(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!current.empty()) out.push_back(text::lowercase(current));
  return out;
}

std::unique_ptr<Normalizer> make_normalizer(std::string_view spec) {
  if (spec == "surface" || spec == "surface_lower") return std::make_unique<SurfaceNormalizer>();
  if (text::starts_with(spec, "plugin:") && spec.size() > 7) {
    return std::make_unique<PluginNormalizer>(std::string(spec.substr(7)));
  }
  throw ValidationError("normalizer must be 'surface' or 'plugin:<command>', got '" +
                        std::string(spec) + "'");
}

std::size_t vocabulary_size(const std::vector<Conversation>& conversations, SpeakerFilter speakers,
                            Normalizer& normalizer) {
  std::set<std::string> vocab;
  for (const auto& c : conversations) {
    for (const auto& t : c.turns) {
      if (!speaker_matches(t.speaker, speakers)) continue;
      for (auto& token : normalizer.normalize(t.text)) vocab.insert(std::move(token));
    }
  }
  return vocab.size();
}

nlohmann::json Distribution::to_json() const {
  return {{"count", count}, {"mean", mean}, {"median", median}, {"q1", q1},
          {"q3", q3},       {"min", min},   {"max", max}};
}

Distribution summarize(std::vector<double> values) {
  Distribution d;
  d.count = values.size();
  if (values.empty()) return d;
  std::sort(values.begin(), values.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  double sum = 0;
  for (double v : values) sum += v;
  d.mean = sum / static_cast<double>(values.size());
  d.median = quantile(0.5);
  d.q1 = quantile(0.25);
  d.q3 = quantile(0.75);
  d.min = values.front();
  d.max = values.back();
  return d;
}

std::size_t message_words(std::string_view message) { return text::word_tokens(message).size(); }

std::vector<std::size_t> message_word_counts(const std::vector<Conversation>& conversations,
                                             SpeakerFilter speakers) {
  std::vector<std::size_t> out;
  for (const auto& c : conversations) {
    for (const auto& t : c.turns) {
      if (speaker_matches(t.speaker, speakers)) out.push_back(message_words(t.text));
    }
  }
  return out;
}

Distribution words_per_message(const std::vector<Conversation>& conversations,
                               SpeakerFilter speakers) {
  const auto counts = message_word_counts(conversations, speakers);
  return summarize({counts.begin(), counts.end()});
}

StatsGrouping parse_grouping(std::string_view name) {
  if (name == "persona") return StatsGrouping::persona;
  if (name == "int") return StatsGrouping::int_task;
  throw ValidationError("grouping must be 'persona' or 'int', got '" + std::string(name) + "'");
}

StatsReport stats_report(const std::vector<Conversation>& corpus, StatsGrouping grouping,
                         Normalizer& normalizer) {
  std::map<std::string, std::vector<Conversation>> by_setup;
  for (const auto& c : corpus) {
    const bool is_int = c.config.task == TaskId::int_task;
    if (is_int == (grouping == StatsGrouping::int_task)) by_setup[c.config.setup_id].push_back(c);
  }
  StatsReport report;
  report.grouping = grouping;
  for (const auto& [setup, convs] : by_setup) {
    StatsRow row;
    row.setup_id = setup;
    row.conversations = convs.size();
    row.agent_vocab = vocabulary_size(convs, SpeakerFilter::agent, normalizer);
    row.user_vocab = vocabulary_size(convs, SpeakerFilter::user, normalizer);
    row.gap = row.agent_vocab > row.user_vocab ? row.agent_vocab - row.user_vocab
                                               : row.user_vocab - row.agent_vocab;
    if (grouping == StatsGrouping::int_task) {
      row.conversation_vocab = vocabulary_size(convs, SpeakerFilter::all, normalizer);
    }
    row.agent_words = words_per_message(convs, SpeakerFilter::agent);
    row.user_words = words_per_message(convs, SpeakerFilter::user);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string StatsReport::render(const SetupLabels& labels) const {
  const bool is_int = grouping == StatsGrouping::int_task;
  TextTable table({"Strategy", "Configuration", "Agent", "User", is_int ? "Conv." : "Gap"}, 2);
  const auto label_of = [&](const std::string& setup) {
    const auto it = labels.by_setup.find(setup);
    return it == labels.by_setup.end() ? SetupLabel{"", setup} : it->second;
  };
  std::vector<const StatsRow*> ordered;
  for (const auto& setup : labels.order) {
    for (const auto& r : rows) {
      if (r.setup_id == setup) ordered.push_back(&r);
    }
  }
  for (const auto& r : rows) {
    if (!labels.has(r.setup_id)) ordered.push_back(&r);
  }
  std::string previous_group;
  bool first = true;
  for (const auto* r : ordered) {
    const auto label = label_of(r->setup_id);
    const bool new_group = first || label.group != previous_group;
    if (new_group) table.add_rule();
    table.add_row({new_group ? label.group : "", label.name, std::to_string(r->agent_vocab),
                   std::to_string(r->user_vocab),
                   std::to_string(is_int ? r->conversation_vocab : r->gap)});
    previous_group = label.group;
    first = false;
  }
  return table.render();
}

nlohmann::json StatsReport::to_json() const {
  const bool is_int = grouping == StatsGrouping::int_task;
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"setup_id", r.setup_id},
                       {"conversations", r.conversations},
                       {"agent_vocab", r.agent_vocab},
                       {"user_vocab", r.user_vocab},
                       {"agent_words", r.agent_words.to_json()},
                       {"user_words", r.user_words.to_json()}};
    if (is_int) {
      row["conversation_vocab"] = r.conversation_vocab;
    } else {
      row["gap"] = r.gap;
    }
    arr.push_back(std::move(row));
  }
  return {{"grouping", is_int ? "int" : "persona"}, {"rows", arr}};
}

std::string words_plot_csv(const std::vector<Conversation>& corpus) {
  std::string out = "setup_id,speaker,conversation_id,turn,words\n";
  const auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    return "\"" + text::replace_all(s, "\"", "\"\"") + "\"";
  };
  for (const auto& c : corpus) {
    for (std::size_t i = 0; i < c.turns.size(); ++i) {
      out += quote(c.config.setup_id) + "," + std::string(to_string(c.turns[i].speaker)) + "," +
             quote(c.id) + "," + std::to_string(i) + "," +
             std::to_string(message_words(c.turns[i].text)) + "\n";
    }
  }
  return out;
}

}  // namespace roleplay
