#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "coached/app.hpp"

namespace httplib {
class Server;
}

namespace coached::service {

struct SessionRecord {
  std::string session_id;
  std::string created_at;
  std::size_t turns = 0;
  std::size_t degraded_turns = 0;

  nlohmann::json to_json() const;
};

struct Reply {
  int status = 200;
  nlohmann::json body;
};

/// The HTTP API over an Engine.
///
/// Routes:
///   POST /v1/sessions
///   GET  /v1/sessions/{id}
///   POST /v1/sessions/{id}/messages   {"query": ...}
///   GET  /v1/sessions/{id}/trace
///   POST /v1/ingest                   {"paths": [...]} and/or {"documents": [...]}
///   GET  /v1/search?q=...&k=...
///   GET  /v1/eval/next?rater=...
///   POST /v1/eval/ratings             {"trial_id", "rater_id", "position", "score"}
///   GET  /v1/eval/report
///
/// The trace route has no access control here; deployments must put one in
/// front of it.
class Service {
 public:
  Service(AppConfig config, std::unique_ptr<llm::Backend> backend);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Reply handle(const std::string& method, const std::string& path,
               const std::map<std::string, std::string>& params, const std::string& body);

  // Runs after a chat turn is persisted and before its reply is built.
  void set_after_persist(std::function<void(const agent::AgentTurn&)> hook);

  // Binds and serves on a background thread; port 0 picks a free port.
  // Returns the bound port.
  int start(const std::string& host, int port);
  // Blocks until stop() is called from another thread or a signal.
  void listen(const std::string& host, int port);
  void stop();

  app::Engine& engine() { return *engine_; }

 private:
  Reply create_session();
  Reply get_session(const std::string& id);
  Reply post_message(const std::string& id, const std::string& body);
  Reply get_trace(const std::string& id);
  Reply ingest(const std::string& body);
  Reply search(const std::map<std::string, std::string>& params);
  Reply eval_next(const std::map<std::string, std::string>& params);
  Reply eval_rate(const std::string& body);
  Reply eval_report();

  std::shared_ptr<std::mutex> session_lock(const std::string& id);
  void load_eval_state();
  void install_routes();

  AppConfig config_;
  std::unique_ptr<app::Engine> engine_;
  std::shared_mutex index_mutex_;  // shared for queries, unique for swaps

  std::mutex sessions_mutex_;
  std::map<std::string, SessionRecord> sessions_;
  std::map<std::string, std::shared_ptr<std::mutex>> session_locks_;

  std::mutex eval_mutex_;
  std::vector<eval::Trial> trials_;
  std::vector<eval::BlindPresentation> presentations_;
  std::unique_ptr<eval::RatingStore> ratings_;

  std::function<void(const agent::AgentTurn&)> after_persist_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
};

}  // namespace coached::service
