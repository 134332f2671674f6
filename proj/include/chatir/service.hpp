#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "chatir/dialogue.hpp"
#include "json.hpp"

namespace chatir {

// JSON config. Relative paths are resolved against the config file's
// directory.
struct ServiceConfig {
  std::filesystem::path index_dir;   // "index": directory written by `index build`
  std::filesystem::path models_dir;  // "models": semantic/ranker/emotion/safety checkpoints
  std::filesystem::path lexicons_dir = "data/lexicons";
  std::filesystem::path sensitive_topics = "data/safety/sensitive_topics.txt";
  std::filesystem::path dodges = "data/safety/dodges.txt";
  std::filesystem::path log_path = "chatir_log.jsonl";
  DialogueConfig dialogue;
  std::chrono::milliseconds session_ttl = std::chrono::hours(24);
  std::string host = "127.0.0.1";
  int port = 8080;
  bool debug_trace = false;
  std::size_t max_text_chars = 2000;
  std::size_t http_threads = 32;

  // Throws InvalidConfig.
  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static ServiceConfig load(const std::filesystem::path& path);
};

inline constexpr const char* kIndexFile = "corpus.idx";
inline constexpr const char* kSemanticFile = "semantic.ckpt";
inline constexpr const char* kRankerFile = "ranker.ckpt";
inline constexpr const char* kEmotionFile = "emotion.ckpt";
inline constexpr const char* kSafetyFile = "safety.ckpt";

EngineModels load_engine_models(const ServiceConfig& config);

// Append-only JSON-lines log. Every append is flushed before returning.
class ConversationLog {
 public:
  explicit ConversationLog(const std::filesystem::path& path);

  void append_session(const std::string& session, std::int64_t timestamp_ms);
  void append_turn(const Conversation& conversation, std::size_t turn_index, bool attachment,
                   const ResponseDecision& decision);

  const std::filesystem::path& path() const { return path_; }

 private:
  void write_line(const nlohmann::json& record);

  std::filesystem::path path_;
  std::mutex mutex_;
  std::ofstream out_;
};

struct ReplayedSession {
  std::int64_t created_ms = 0;
  std::vector<Turn> turns;
};

// Rebuilds every session's visible history. Throws InvalidCorpus on a
// malformed line.
std::map<std::string, ReplayedSession> replay_log(const std::filesystem::path& path);

nlohmann::json turn_to_json(const Turn& turn);
nlohmann::json history_to_json(const std::vector<Turn>& turns);
nlohmann::json decision_trace(const ResponseDecision& decision);

struct HttpResult {
  int status = 200;
  nlohmann::json body;
};

// Transport-independent request handlers.
class ChatService {
 public:
  ChatService(ServiceConfig config, std::shared_ptr<const Engine> engine,
              Clock clock = system_clock_ms());

  HttpResult create_session();
  HttpResult chat(const std::string& request_body);
  HttpResult chat(const nlohmann::json& request);
  HttpResult history(const std::string& session_id) const;
  HttpResult health() const;

  // Restores sessions from the log; returns how many were restored.
  std::size_t restore_from_log();

  void set_engine(std::shared_ptr<const Engine> engine) { dialogue_.set_engine(std::move(engine)); }
  Dialogue& dialogue() { return dialogue_; }
  const ServiceConfig& config() const { return config_; }

 private:
  ServiceConfig config_;
  Dialogue dialogue_;
  ConversationLog log_;
};

class HttpServer {
 public:
  explicit HttpServer(ChatService& service);
  ~HttpServer();

  // Returns the bound port (useful with port 0). Throws InvalidConfig.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace chatir
