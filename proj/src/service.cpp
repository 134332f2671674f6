#include "chatir/service.hpp"

#include <sstream>

#include "chatir/errors.hpp"
#include "httplib.h"

namespace chatir {

using nlohmann::json;

// ---- config ----------------------------------------------------------------

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& into) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config key '") + key + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const json& j, const std::filesystem::path& base) {
  if (!j.is_object()) throw InvalidConfig("config must be a JSON object");
  static const std::vector<std::string> kKnown = {
      "index",         "models",          "lexicons",           "sensitive_topics",
      "dodges",        "log",             "fetch_k",            "trace_n",
      "emotion_bonus", "offensive_threshold", "session_ttl_hours", "host",
      "port",          "debug_trace",     "max_text_chars",     "http_threads",
      "attachment_response", "fallback_response"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
      throw InvalidConfig("unknown config key '" + key + "'");
    }
  }
  ServiceConfig c;
  std::string s;
  auto path_key = [&](const char* key, std::filesystem::path& into) {
    if (!j.contains(key)) {
      into = resolve(base, into);
      return;
    }
    read_opt(j, key, s);
    into = resolve(base, s);
  };
  if (!j.contains("index") || !j.contains("models")) {
    throw InvalidConfig("config needs 'index' and 'models'");
  }
  path_key("index", c.index_dir);
  path_key("models", c.models_dir);
  path_key("lexicons", c.lexicons_dir);
  path_key("sensitive_topics", c.sensitive_topics);
  path_key("dodges", c.dodges);
  path_key("log", c.log_path);
  read_opt(j, "fetch_k", c.dialogue.fetch_k);
  read_opt(j, "trace_n", c.dialogue.trace_n);
  read_opt(j, "emotion_bonus", c.dialogue.emotion_bonus);
  read_opt(j, "offensive_threshold", c.dialogue.offensive_threshold);
  read_opt(j, "attachment_response", c.dialogue.attachment_response);
  read_opt(j, "fallback_response", c.dialogue.fallback_response);
  double ttl_hours = 24.0;
  read_opt(j, "session_ttl_hours", ttl_hours);
  c.session_ttl = std::chrono::milliseconds(static_cast<std::int64_t>(ttl_hours * 3600.0 * 1000.0));
  read_opt(j, "host", c.host);
  read_opt(j, "port", c.port);
  read_opt(j, "debug_trace", c.debug_trace);
  read_opt(j, "max_text_chars", c.max_text_chars);
  read_opt(j, "http_threads", c.http_threads);
  if (c.dialogue.fetch_k == 0) throw InvalidConfig("fetch_k must be positive");
  if (c.port < 0 || c.port > 65535) throw InvalidConfig("port out of range");
  if (c.http_threads == 0) throw InvalidConfig("http_threads must be positive");
  if (!(ttl_hours > 0.0)) throw InvalidConfig("session_ttl_hours must be positive");
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidConfig("config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

EngineModels load_engine_models(const ServiceConfig& config) {
  return EngineModels{
      IndexedCorpus::load(config.index_dir / kIndexFile),
      CdssmEncoder::load(config.models_dir / kSemanticFile),
      RankerModel::load(config.models_dir / kRankerFile),
      EmotionModel::load(config.models_dir / kEmotionFile),
      Lexicons::load(config.lexicons_dir),
      OffensiveClassifier::load(config.models_dir / kSafetyFile),
      DodgePolicy::load(config.sensitive_topics, config.dodges),
  };
}

// ---- wire forms ------------------------------------------------------------

namespace {

json verdict_json(const SafetyVerdict& v) {
  return {{"offensive", v.offensive},
          {"offensive_prob", v.offensive_prob},
          {"sensitive_topic", v.sensitive_topic ? json(*v.sensitive_topic) : json(nullptr)},
          {"deobfuscated_text", v.deobfuscated_text}};
}

SafetyVerdict verdict_from_json(const json& j) {
  SafetyVerdict v;
  v.offensive = j.at("offensive").get<bool>();
  v.offensive_prob = j.at("offensive_prob").get<double>();
  if (!j.at("sensitive_topic").is_null()) v.sensitive_topic = j.at("sensitive_topic").get<std::string>();
  v.deobfuscated_text = j.at("deobfuscated_text").get<std::string>();
  return v;
}

std::string emotion_name(const ResponseDecision& d) {
  return d.emotion ? std::string(to_string(d.emotion->label)) : std::string("none");
}

json timings_json(const std::vector<StageTiming>& timings) {
  json t = json::object();
  for (const auto& s : timings) t[s.stage] = s.ms;
  return t;
}

}  // namespace

json turn_to_json(const Turn& turn) {
  json j = {{"author", to_string(turn.author)}, {"text", turn.text}, {"timestamp", turn.timestamp_ms}};
  if (turn.emotion) j["emotion"] = to_string(*turn.emotion);
  if (turn.safety) j["safety"] = verdict_json(*turn.safety);
  return j;
}

json history_to_json(const std::vector<Turn>& turns) {
  json arr = json::array();
  for (const auto& t : turns) arr.push_back(turn_to_json(t));
  return {{"turns", arr}};
}

json decision_trace(const ResponseDecision& d) {
  json t;
  t["safety"] = d.safety ? verdict_json(*d.safety) : json(nullptr);
  if (d.emotion) {
    json probs;
    for (std::size_t i = 0; i < kEmotionCount; ++i) {
      probs[std::string(to_string(kEmotionLabels[i]))] = d.emotion->probabilities[i];
    }
    t["emotion"] = {{"label", to_string(d.emotion->label)}, {"probabilities", probs}};
  } else {
    t["emotion"] = nullptr;
  }
  json cands = json::array();
  for (const auto& c : d.candidates) {
    cands.push_back({{"pair_id", c.pair_id},
                     {"response", c.response},
                     {"score", c.score},
                     {"bonus", c.bonus},
                     {"features", c.features.values}});
  }
  t["candidates"] = cands;
  t["timings_ms"] = timings_json(d.timings);
  return t;
}

// ---- log -------------------------------------------------------------------

ConversationLog::ConversationLog(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::app);
  if (!out_) throw InvalidConfig("cannot open log " + path.string());
}

void ConversationLog::write_line(const json& record) {
  const std::string line = record.dump() + "\n";
  std::lock_guard lock(mutex_);
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) throw Error("log write failed: " + path_.string());
}

void ConversationLog::append_session(const std::string& session, std::int64_t timestamp_ms) {
  write_line({{"event", "session"}, {"session", session}, {"timestamp", timestamp_ms}});
}

void ConversationLog::append_turn(const Conversation& conversation, std::size_t turn_index,
                                  bool attachment, const ResponseDecision& decision) {
  const Turn& user = conversation.turns.at(turn_index);
  const Turn& agent = conversation.turns.at(turn_index + 1);
  json rec = {{"event", "turn"},
              {"session", conversation.session_id},
              {"turn_index", turn_index},
              {"user_text", user.text},
              {"attachment", attachment},
              {"response", agent.text},
              {"source", to_string(decision.source)},
              {"emotion", emotion_name(decision)},
              {"offensive", decision.safety ? decision.safety->offensive : false},
              {"safety", decision.safety ? verdict_json(*decision.safety) : json(nullptr)},
              {"timings_ms", timings_json(decision.timings)},
              {"timestamp", agent.timestamp_ms}};
  write_line(rec);
}

std::map<std::string, ReplayedSession> replay_log(const std::filesystem::path& path) {
  std::map<std::string, ReplayedSession> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string session = j.at("session").get<std::string>();
      const std::string event = j.at("event").get<std::string>();
      if (event == "session") {
        out[session].created_ms = j.at("timestamp").get<std::int64_t>();
        continue;
      }
      if (event != "turn") throw InvalidCorpus("unknown event '" + event + "'");
      auto& s = out[session];
      const auto idx = j.at("turn_index").get<std::size_t>();
      if (idx != s.turns.size()) {
        throw InvalidCorpus("turn_index " + std::to_string(idx) + " out of order");
      }
      const auto ts = j.at("timestamp").get<std::int64_t>();
      Turn user{Author::user, j.at("user_text").get<std::string>(), ts, std::nullopt, std::nullopt};
      const auto emotion = j.at("emotion").get<std::string>();
      if (emotion != "none") user.emotion = parse_emotion(emotion);
      if (!j.at("safety").is_null()) user.safety = verdict_from_json(j.at("safety"));
      Turn agent{Author::agent, j.at("response").get<std::string>(), ts, std::nullopt, std::nullopt};
      s.turns.push_back(std::move(user));
      s.turns.push_back(std::move(agent));
    } catch (const json::exception& e) {
      throw InvalidCorpus(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---- handlers --------------------------------------------------------------

namespace {

HttpResult error_result(int status, const std::string& message) {
  return {status, {{"error", message}}};
}

}  // namespace

ChatService::ChatService(ServiceConfig config, std::shared_ptr<const Engine> engine, Clock clock)
    : config_(std::move(config)),
      dialogue_(std::move(engine), SessionOptions{config_.session_ttl, std::nullopt},
                std::move(clock)),
      log_(config_.log_path) {}

std::size_t ChatService::restore_from_log() {
  std::size_t restored = 0;
  for (auto& [id, s] : replay_log(log_.path())) {
    if (dialogue_.sessions().restore(id, s.created_ms, std::move(s.turns))) ++restored;
  }
  return restored;
}

HttpResult ChatService::create_session() {
  const std::string id = dialogue_.create_session();
  log_.append_session(id, dialogue_.sessions().now_ms());
  return {200, {{"session", id}}};
}

HttpResult ChatService::chat(const std::string& request_body) {
  json request;
  try {
    request = json::parse(request_body);
  } catch (const json::exception&) {
    return error_result(400, "request body is not valid JSON");
  }
  return chat(request);
}

HttpResult ChatService::chat(const json& request) {
  if (!request.is_object() || !request.contains("session") || !request["session"].is_string()) {
    return error_result(400, "'session' must be a string");
  }
  if (request.contains("text") && !request["text"].is_string()) {
    return error_result(400, "'text' must be a string");
  }
  if (request.contains("attachment") && !request["attachment"].is_boolean()) {
    return error_result(400, "'attachment' must be a boolean");
  }
  const std::string session = request["session"].get<std::string>();
  const std::string text = request.value("text", std::string());
  const bool attachment = request.value("attachment", false);

  if (!dialogue_.sessions().contains(session)) return error_result(404, "unknown session");
  if (text::codepoint_count(text) > config_.max_text_chars) {
    return error_result(413, "text longer than " + std::to_string(config_.max_text_chars) +
                                 " characters");
  }
  if (!attachment && text::normalize_text(text).empty()) return error_result(400, "empty text");

  try {
    const ResponseDecision d = dialogue_.respond(
        session, text, attachment,
        [&](const Conversation& conv, std::size_t turn_index, const ResponseDecision& decision) {
          log_.append_turn(conv, turn_index, attachment, decision);
        });
    json body = {{"response", d.response},
                 {"source", to_string(d.source)},
                 {"emotion", emotion_name(d)},
                 {"offensive", d.safety ? d.safety->offensive : false},
                 {"session", session}};
    if (config_.debug_trace) body["trace"] = decision_trace(d);
    return {200, body};
  } catch (const UnknownSession&) {
    return error_result(404, "unknown session");
  } catch (const EngineNotReady&) {
    return error_result(503, "engine not ready");
  }
}

HttpResult ChatService::history(const std::string& session_id) const {
  try {
    return {200, history_to_json(dialogue_.sessions().snapshot(session_id).turns)};
  } catch (const UnknownSession&) {
    return error_result(404, "unknown session");
  }
}

HttpResult ChatService::health() const {
  const auto engine = dialogue_.engine();
  if (!engine) return {503, {{"status", "not_ready"}, {"index_size", 0}}};
  return {200, {{"status", "ok"}, {"index_size", engine->index_size()}}};
}

// ---- http ------------------------------------------------------------------

struct HttpServer::Impl {
  ChatService& service;
  httplib::Server server;

  explicit Impl(ChatService& s) : service(s) {}
};

namespace {

void send(httplib::Response& res, const HttpResult& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json; charset=utf-8");
}

}  // namespace

HttpServer::HttpServer(ChatService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  const std::size_t threads = service.config().http_threads;
  srv.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  ChatService* svc = &service;

  srv.Post("/v1/session", [svc](const httplib::Request&, httplib::Response& res) {
    send(res, svc->create_session());
  });
  srv.Post("/v1/chat", [svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc->chat(req.body));
  });
  srv.Get(R"(/v1/session/([A-Za-z0-9_-]+)/history)",
          [svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc->history(req.matches[1]));
          });
  srv.Get("/v1/health", [svc](const httplib::Request&, httplib::Response& res) {
    send(res, svc->health());
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_result(500, what));
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", httplib::status_message(res.status)}}.dump(),
                      "application/json; charset=utf-8");
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw InvalidConfig("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw InvalidConfig("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace chatir
