#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "roleplay/arena.hpp"
#include "roleplay/conversation.hpp"

namespace roleplay {

enum class SpeakerFilter { agent, user, all };

class NormalizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maps a message to its normalized tokens (lemmas or surface forms).
class Normalizer {
 public:
  virtual ~Normalizer() = default;
  virtual std::vector<std::string> normalize(std::string_view message) = 0;
};

/// Lowercased word tokens; punctuation dropped, elisions split.
class SurfaceNormalizer final : public Normalizer {
 public:
  std::vector<std::string> normalize(std::string_view message) override;
};

/// External lemmatizer over a line protocol: one message per line on the
/// child's stdin, one line of whitespace-separated lemmas back on stdout.
/// The command runs under /bin/sh. Any failure throws NormalizerError;
/// there is no fallback to surface forms.
class PluginNormalizer final : public Normalizer {
 public:
  explicit PluginNormalizer(std::string command, int timeout_ms = 10000);
  ~PluginNormalizer() override;
  PluginNormalizer(const PluginNormalizer&) = delete;
  PluginNormalizer& operator=(const PluginNormalizer&) = delete;

  std::vector<std::string> normalize(std::string_view message) override;

 private:
  std::string command_;
  int timeout_ms_;
  int pid_ = -1;
  int fd_ = -1;
  std::string pending_;
  std::mutex mutex_;
};

/// "surface" or "plugin:<command>".
std::unique_ptr<Normalizer> make_normalizer(std::string_view spec);

/// Distinct normalized tokens over the matching turns.
std::size_t vocabulary_size(const std::vector<Conversation>& conversations, SpeakerFilter speakers,
                            Normalizer& normalizer);

struct Distribution {
  std::size_t count = 0;
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;

  nlohmann::json to_json() const;
};

/// Quartiles by linear interpolation between order statistics.
Distribution summarize(std::vector<double> values);

/// Word count of one message (same tokenization as the surface normalizer).
std::size_t message_words(std::string_view message);

std::vector<std::size_t> message_word_counts(const std::vector<Conversation>& conversations,
                                             SpeakerFilter speakers);
Distribution words_per_message(const std::vector<Conversation>& conversations,
                               SpeakerFilter speakers);

enum class StatsGrouping { persona, int_task };
StatsGrouping parse_grouping(std::string_view name);  // throws ValidationError

struct StatsRow {
  std::string setup_id;
  std::size_t conversations = 0;
  std::size_t agent_vocab = 0;
  std::size_t user_vocab = 0;
  /// |agent - user| for the persona grouping.
  std::size_t gap = 0;
  /// Whole-conversation vocabulary for the INT grouping.
  std::size_t conversation_vocab = 0;
  Distribution agent_words;
  Distribution user_words;
};

struct StatsReport {
  StatsGrouping grouping = StatsGrouping::persona;
  std::vector<StatsRow> rows;  // by setup id

  /// Strategy | Configuration | Agent | User | Gap (or Conv.).
  std::string render(const SetupLabels& labels = {}) const;
  nlohmann::json to_json() const;
};

/// Groups the corpus by setup id. The persona grouping keeps persona-family
/// conversations, the INT grouping keeps INT ones.
StatsReport stats_report(const std::vector<Conversation>& corpus, StatsGrouping grouping,
                         Normalizer& normalizer);

/// Plot data for box plots: setup_id,speaker,conversation_id,turn,words.
std::string words_plot_csv(const std::vector<Conversation>& corpus);

}  // namespace roleplay
