#include "chatir/dialogue.hpp"

#include <algorithm>
#include <random>

#include "chatir/errors.hpp"

namespace chatir {

std::string_view to_string(Author author) { return author == Author::user ? "user" : "agent"; }

std::string_view to_string(ResponseSource source) {
  switch (source) {
    case ResponseSource::ranked: return "ranked";
    case ResponseSource::dodge: return "dodge";
    case ResponseSource::fallback: return "fallback";
  }
  return "fallback";
}

std::vector<text::Utterance> context_window(const Conversation& conversation) {
  const auto& t = conversation.turns;
  const std::size_t start = t.size() > kContextTurns ? t.size() - kContextTurns : 0;
  std::vector<text::Utterance> out;
  for (std::size_t i = start; i < t.size(); ++i) out.push_back(text::Utterance::from_raw(t[i].text));
  return out;
}

// ---- engine ----------------------------------------------------------------

Engine::Engine(EngineModels models, DialogueConfig config)
    : models_(std::move(models)), config_(std::move(config)) {
  if (models_.emotion.input_dim() != models_.encoder.dim() + kSentimentFeatureCount) {
    throw ShapeMismatch("emotion model does not match the encoder dimension");
  }
  if (models_.policy.dodge_responses.empty()) throw InvalidConfig("dodge response list is empty");
  if (models_.corpus.pairs.size() != models_.corpus.index.doc_count()) {
    throw CorruptIndex("pair store and index disagree in size");
  }
  const auto& pairs = models_.corpus.pairs;
  std::vector<std::vector<std::string>> responses(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) responses[i] = pairs[i].response.tokens;
  auto vecs = models_.encoder.encode_batch(responses, Exec::parallel);
  response_features_.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    response_features_[i] = response_features(pairs[i].response, std::move(vecs[i]));
  }
}

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& out) : out_(out), start_(now()), lap_(start_) {}

  void lap(std::string stage) {
    const auto t = now();
    out_.push_back({std::move(stage), ms(lap_, t)});
    lap_ = t;
  }
  void total() { out_.push_back({"total", ms(start_, now())}); }

 private:
  using TimePoint = std::chrono::steady_clock::time_point;
  static TimePoint now() { return std::chrono::steady_clock::now(); }
  static double ms(TimePoint a, TimePoint b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  }
  std::vector<StageTiming>& out_;
  TimePoint start_;
  TimePoint lap_;
};

bool mentions_any(const text::Utterance& u, const std::unordered_set<std::string>& lexicon) {
  return std::any_of(u.tokens.begin(), u.tokens.end(),
                     [&](const std::string& t) { return lexicon.count(t) > 0; });
}

}  // namespace

ResponseDecision Engine::decide(const text::Utterance& message,
                                std::span<const text::Utterance> context,
                                std::string_view session_id, std::uint64_t turn_number,
                                bool attachment) const {
  ResponseDecision d;
  StageClock clock(d.timings);
  if (attachment) {
    d.response = config_.attachment_response;
    d.source = ResponseSource::fallback;
    clock.total();
    return d;
  }

  d.safety = evaluate_safety(models_.safety, models_.policy, message, config_.offensive_threshold);
  clock.lap("safety");
  if (d.safety->fires()) {
    d.response = pick_dodge(models_.policy, session_id, turn_number);
    d.source = ResponseSource::dodge;
    clock.total();
    return d;
  }

  d.emotion = classify_emotion(models_.emotion, models_.encoder, models_.lexicons, message);
  clock.lap("emotion");

  const FetchResult fetched = models_.corpus.index.fetch(message, context, config_.fetch_k);
  clock.lap("fetch");
  if (fetched.candidates.empty()) {
    d.response = config_.fallback_response;
    d.source = ResponseSource::fallback;
    clock.total();
    return d;
  }

  const QueryFeatures q = query_features(models_.encoder, message, context);
  std::vector<double> raw;
  raw.reserve(fetched.candidates.size());
  for (const auto& c : fetched.candidates) raw.push_back(c.score);
  const auto norm = normalize_scores(raw);
  std::vector<CandidateInput> inputs;
  inputs.reserve(fetched.candidates.size());
  for (std::size_t i = 0; i < fetched.candidates.size(); ++i) {
    const auto id = fetched.candidates[i].pair_id;
    inputs.push_back({id, models_.corpus.pairs[id].response.raw,
                      extract_features(q, response_features_[id], norm[i])});
  }
  auto ranked = rank_candidates(models_.ranker, inputs);
  clock.lap("rank");

  if (const auto* lexicon = models_.lexicons.for_emotion(d.emotion->label)) {
    for (auto& c : ranked) {
      if (mentions_any(models_.corpus.pairs[c.pair_id].response, *lexicon)) {
        c.bonus = config_.emotion_bonus;
      }
    }
    sort_ranked(ranked);
  }
  clock.lap("rerank");

  d.response = select_response(ranked).response;
  d.source = ResponseSource::ranked;
  if (ranked.size() > config_.trace_n) ranked.resize(config_.trace_n);
  d.candidates = std::move(ranked);
  clock.total();
  return d;
}

// ---- sessions --------------------------------------------------------------

Clock system_clock_ms() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

namespace {

std::uint64_t seed_or_random(const std::optional<std::uint64_t>& seed) {
  if (seed) return *seed;
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace

SessionRegistry::SessionRegistry(SessionOptions options, Clock clock)
    : options_(options), clock_(std::move(clock)), id_rng_(seed_or_random(options.id_seed)) {}

std::string SessionRegistry::create() {
  static constexpr char kAlphabet[] = "0123456789abcdefghijklmnopqrstuvwxyz";
  auto entry = std::make_shared<Entry>();
  entry->created_ms = clock_();
  std::unique_lock lock(mutex_);
  for (;;) {
    std::string id;
    {
      std::lock_guard id_lock(id_mutex_);
      for (int i = 0; i < 22; ++i) id.push_back(kAlphabet[id_rng_.below(sizeof(kAlphabet) - 1)]);
    }
    if (sessions_.count(id) == 0) {
      entry->conversation.session_id = id;
      sessions_.emplace(id, std::move(entry));
      return id;
    }
  }
}

bool SessionRegistry::restore(const std::string& id, std::int64_t created_ms,
                              std::vector<Turn> turns) {
  auto entry = std::make_shared<Entry>();
  entry->created_ms = created_ms;
  entry->conversation.session_id = id;
  entry->conversation.turns = std::move(turns);
  std::unique_lock lock(mutex_);
  return sessions_.emplace(id, std::move(entry)).second;
}

bool SessionRegistry::expired(const Entry& e) const {
  return clock_() - e.created_ms >= options_.ttl.count();
}

std::shared_ptr<SessionRegistry::Entry> SessionRegistry::find_live(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end() || expired(*it->second)) {
    throw UnknownSession("no live session '" + id + "'");
  }
  return it->second;
}

bool SessionRegistry::contains(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(id);
  return it != sessions_.end() && !expired(*it->second);
}

Conversation SessionRegistry::snapshot(const std::string& id) const {
  const auto entry = find_live(id);
  std::lock_guard lock(entry->mutex);
  return entry->conversation;
}

std::size_t SessionRegistry::size() const {
  std::shared_lock lock(mutex_);
  return static_cast<std::size_t>(std::count_if(
      sessions_.begin(), sessions_.end(), [&](const auto& kv) { return !expired(*kv.second); }));
}

std::size_t SessionRegistry::purge_expired() {
  std::unique_lock lock(mutex_);
  return std::erase_if(sessions_, [&](const auto& kv) { return expired(*kv.second); });
}

// ---- dialogue --------------------------------------------------------------

Dialogue::Dialogue(std::shared_ptr<const Engine> engine, SessionOptions options, Clock clock)
    : engine_(std::move(engine)), sessions_(options, std::move(clock)) {}

void Dialogue::set_engine(std::shared_ptr<const Engine> engine) {
  std::lock_guard lock(engine_mutex_);
  engine_ = std::move(engine);
}

std::shared_ptr<const Engine> Dialogue::engine() const {
  std::lock_guard lock(engine_mutex_);
  return engine_;
}

ResponseDecision Dialogue::respond(const std::string& session_id, const std::string& text,
                                   bool attachment, const CommitHook& on_commit) {
  const auto engine = this->engine();
  if (!engine) throw EngineNotReady("models are not loaded");
  return sessions_.with_session(session_id, [&](Conversation& conv) {
    const auto message = text::Utterance::from_raw(text);
    const auto context = context_window(conv);
    const std::uint64_t turn_number = conv.turns.size() / 2;
    ResponseDecision d = engine->decide(message, context, session_id, turn_number, attachment);

    const std::int64_t now = sessions_.now_ms();
    Turn user{Author::user, text, now, std::nullopt, d.safety};
    if (d.emotion) user.emotion = d.emotion->label;
    Turn agent{Author::agent, d.response, now, std::nullopt, std::nullopt};
    const std::size_t turn_index = conv.turns.size();
    conv.turns.push_back(std::move(user));
    conv.turns.push_back(std::move(agent));
    if (on_commit) {
      try {
        on_commit(conv, turn_index, d);
      } catch (...) {
        conv.turns.resize(turn_index);
        throw;
      }
    }
    return d;
  });
}

}  // namespace chatir
