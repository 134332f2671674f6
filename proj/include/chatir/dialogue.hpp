#pragma once

// One conversational turn: safety gate, emotion, candidate fetch, feature
// extraction, ranking and the emotion re-rank. Engine holds the immutable
// model state; Dialogue adds sessions on top of it.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "chatir/emotion.hpp"
#include "chatir/index.hpp"
#include "chatir/ranker.hpp"
#include "chatir/rng.hpp"
#include "chatir/safety.hpp"
#include "chatir/semantic.hpp"

namespace chatir {

enum class Author : std::uint8_t { user, agent };
enum class ResponseSource : std::uint8_t { ranked, dodge, fallback };

std::string_view to_string(Author author);
std::string_view to_string(ResponseSource source);

struct Turn {
  Author author = Author::user;
  std::string text;
  std::int64_t timestamp_ms = 0;
  std::optional<EmotionLabel> emotion;  // user turns only, when evaluated
  std::optional<SafetyVerdict> safety;  // user turns only
};

struct Conversation {
  std::string session_id;
  std::vector<Turn> turns;
};

inline constexpr std::size_t kContextTurns = 2;

// The last two turns, oldest first.
std::vector<text::Utterance> context_window(const Conversation& conversation);

struct DialogueConfig {
  std::size_t fetch_k = 50;
  std::size_t trace_n = 10;
  double emotion_bonus = 0.05;
  double offensive_threshold = kDefaultOffensiveThreshold;
  std::string attachment_response = "i can't see pictures yet, tell me about it!";
  std::string fallback_response = "i'm not sure what to say to that. tell me more?";
};

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct ResponseDecision {
  std::string response;
  ResponseSource source = ResponseSource::fallback;
  std::optional<SafetyVerdict> safety;  // absent on the attachment path
  std::optional<EmotionResult> emotion;  // absent when the turn never reached that stage
  std::vector<RankedCandidate> candidates;  // top trace_n, best first
  std::vector<StageTiming> timings;
};

struct EngineModels {
  IndexedCorpus corpus;
  CdssmEncoder encoder;
  RankerModel ranker;
  EmotionModel emotion;
  Lexicons lexicons;
  OffensiveClassifier safety;
  DodgePolicy policy;
};

class Engine {
 public:
  // Precomputes the candidate-side features of every indexed response.
  // Throws ShapeMismatch when model dimensions disagree.
  Engine(EngineModels models, DialogueConfig config);

  // Stateless core of a turn. turn_number selects the dodge.
  ResponseDecision decide(const text::Utterance& message,
                          std::span<const text::Utterance> context, std::string_view session_id,
                          std::uint64_t turn_number, bool attachment) const;

  const EngineModels& models() const { return models_; }
  const DialogueConfig& config() const { return config_; }
  std::size_t index_size() const { return models_.corpus.index.doc_count(); }

 private:
  EngineModels models_;
  DialogueConfig config_;
  std::vector<ResponseFeatures> response_features_;
};

// Milliseconds since the epoch; replaceable for tests.
using Clock = std::function<std::int64_t()>;
Clock system_clock_ms();

struct SessionOptions {
  std::chrono::milliseconds ttl = std::chrono::hours(24);
  std::optional<std::uint64_t> id_seed;  // random_device when absent
};

// Sessions with per-session serialization. Expired sessions behave as absent.
class SessionRegistry {
 public:
  explicit SessionRegistry(SessionOptions options = {}, Clock clock = system_clock_ms());

  std::string create();
  // Registers a session under a known id (log replay). Returns false when the
  // id already exists.
  bool restore(const std::string& id, std::int64_t created_ms, std::vector<Turn> turns);

  bool contains(const std::string& id) const;
  // Throws UnknownSession.
  Conversation snapshot(const std::string& id) const;
  std::size_t size() const;
  std::size_t purge_expired();

  // Runs fn with exclusive access to the conversation. Calls on one session
  // are ordered; different sessions proceed in parallel. Throws
  // UnknownSession.
  template <class Fn>
  auto with_session(const std::string& id, Fn&& fn) {
    const auto entry = find_live(id);
    std::lock_guard lock(entry->mutex);
    return fn(entry->conversation);
  }

  std::int64_t now_ms() const { return clock_(); }

 private:
  struct Entry {
    std::mutex mutex;
    Conversation conversation;
    std::int64_t created_ms = 0;
  };
  std::shared_ptr<Entry> find_live(const std::string& id) const;
  bool expired(const Entry& e) const;

  SessionOptions options_;
  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mutex id_mutex_;
  Rng id_rng_;
};

// Called under the session lock after both turns were appended; turn_index
// is the zero-based index of the user turn.
using CommitHook =
    std::function<void(const Conversation&, std::size_t turn_index, const ResponseDecision&)>;

class Dialogue {
 public:
  Dialogue(std::shared_ptr<const Engine> engine, SessionOptions options = {},
           Clock clock = system_clock_ms());

  std::string create_session() { return sessions_.create(); }

  // Throws UnknownSession, or EngineNotReady when no engine is loaded.
  ResponseDecision respond(const std::string& session_id, const std::string& text,
                           bool attachment, const CommitHook& on_commit = {});

  void set_engine(std::shared_ptr<const Engine> engine);
  std::shared_ptr<const Engine> engine() const;
  SessionRegistry& sessions() { return sessions_; }
  const SessionRegistry& sessions() const { return sessions_; }

 private:
  mutable std::mutex engine_mutex_;
  std::shared_ptr<const Engine> engine_;
  SessionRegistry sessions_;
};

}  // namespace chatir
