#include "coached/service.hpp"

#include <filesystem>
#include <random>

#include <httplib.h>

#include "coached/error.hpp"
#include "coached/text.hpp"

namespace coached::service {

namespace fs = std::filesystem;
using nlohmann::json;

json SessionRecord::to_json() const {
  return {{"session_id", session_id}, {"created_at", created_at}, {"turns", turns}, {"degraded_turns", degraded_turns}};
}

namespace {

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNotFound: return 404;
    case ErrorKind::kDuplicateRating: return 409;
    case ErrorKind::kValidationError:
    case ErrorKind::kBadScore:
    case ErrorKind::kBadPosition:
    case ErrorKind::kEmptyDocument:
    case ErrorKind::kWrongDocument:
    case ErrorKind::kInvalidPolicy:
    case ErrorKind::kEmptyCorpus: return 400;
    case ErrorKind::kBackendUnavailable:
    case ErrorKind::kMalformedReply:
    case ErrorKind::kScriptExhausted:
    case ErrorKind::kDimInconsistent: return 503;
    default: return 500;
  }
}

Reply error_reply(int status, const std::string& kind, const std::string& message) {
  return {status, {{"error", {{"kind", kind}, {"message", message}}}}};
}

Reply error_reply(const Error& e) {
  return error_reply(status_for(e.kind()), std::string(error_kind_name(e.kind())), e.what());
}

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body.empty() ? std::string("{}") : body);
    if (!j.is_object()) throw Error(ErrorKind::kValidationError, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidationError, std::string("malformed JSON: ") + e.what());
  }
}

template <typename T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw Error(ErrorKind::kValidationError, std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::kValidationError, std::string("field '") + name + "' has the wrong type");
  }
}

std::string new_session_id() {
  std::random_device rd;
  const std::uint64_t hi = rd();
  const std::uint64_t lo = rd();
  return "s-" + text::hex64((hi << 32) ^ lo ^ static_cast<std::uint64_t>(
                                                  std::chrono::steady_clock::now().time_since_epoch().count()));
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string::npos ? path.size() : j;
    if (end > i) parts.push_back(path.substr(i, end - i));
    i = end;
  }
  return parts;
}

}  // namespace

Service::Service(AppConfig config, std::unique_ptr<llm::Backend> backend)
    : config_(std::move(config)), engine_(std::make_unique<app::Engine>(config_, std::move(backend))) {
  for (const auto& turn : agent::read_turn_log(config_.logs.turn_log)) {
    auto& record = sessions_[turn.session_id];
    if (record.session_id.empty()) {
      record.session_id = turn.session_id;
      record.created_at = turn.timestamps.received;
    }
    ++record.turns;
    if (turn.degraded) ++record.degraded_turns;
  }
  load_eval_state();
}

Service::~Service() { stop(); }

void Service::load_eval_state() {
  if (fs::exists(config_.eval.trial_bank)) trials_ = eval::load_trial_bank(config_.eval.trial_bank);
  if (fs::exists(config_.eval.presentations_path)) {
    presentations_ = app::read_presentations(config_.eval.presentations_path);
  } else {
    presentations_ = app::build_presentations(trials_, config_);
  }
  ratings_ = std::make_unique<eval::RatingStore>(config_.logs.ratings);
}

void Service::set_after_persist(std::function<void(const agent::AgentTurn&)> hook) {
  after_persist_ = std::move(hook);
}

std::shared_ptr<std::mutex> Service::session_lock(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  if (sessions_.count(id) == 0) return nullptr;
  auto& slot = session_locks_[id];
  if (!slot) slot = std::make_shared<std::mutex>();
  return slot;
}

Reply Service::handle(const std::string& method, const std::string& path,
                      const std::map<std::string, std::string>& params, const std::string& body) {
  try {
    const auto parts = split_path(path);
    const std::size_t n = parts.size();
    if (n >= 2 && parts[0] == "v1") {
      if (parts[1] == "sessions") {
        if (n == 2 && method == "POST") return create_session();
        if (n == 3 && method == "GET") return get_session(parts[2]);
        if (n == 4 && parts[3] == "messages" && method == "POST") return post_message(parts[2], body);
        if (n == 4 && parts[3] == "trace" && method == "GET") return get_trace(parts[2]);
      } else if (n == 2 && parts[1] == "ingest" && method == "POST") {
        return ingest(body);
      } else if (n == 2 && parts[1] == "search" && method == "GET") {
        return search(params);
      } else if (n == 3 && parts[1] == "eval") {
        if (parts[2] == "next" && method == "GET") return eval_next(params);
        if (parts[2] == "ratings" && method == "POST") return eval_rate(body);
        if (parts[2] == "report" && method == "GET") return eval_report();
      }
    }
    return error_reply(404, "NotFound", "no route for " + method + " " + path);
  } catch (const Error& e) {
    return error_reply(e);
  } catch (const std::exception& e) {
    return error_reply(500, "Internal", e.what());
  }
}

Reply Service::create_session() {
  std::lock_guard lock(sessions_mutex_);
  std::string id = new_session_id();
  while (sessions_.count(id) != 0) id = new_session_id();
  sessions_[id] = {id, text::utc_timestamp_now(), 0, 0};
  return {201, {{"session_id", id}}};
}

Reply Service::get_session(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorKind::kNotFound, "unknown session " + id);
  return {200, it->second.to_json()};
}

Reply Service::post_message(const std::string& id, const std::string& body) {
  const auto lock = session_lock(id);
  if (!lock) throw Error(ErrorKind::kNotFound, "unknown session " + id);
  const json request = parse_body(body);
  const auto query = field<std::string>(request, "query");
  if (text::trim(query).empty()) throw Error(ErrorKind::kValidationError, "query is empty");

  std::lock_guard serial(*lock);
  std::shared_lock index_lock(index_mutex_);
  const auto count = [&](bool degraded) {
    std::lock_guard guard(sessions_mutex_);
    auto& record = sessions_[id];
    ++record.turns;
    if (degraded) ++record.degraded_turns;
  };
  try {
    const auto turn = engine_->answer(id, query, [&](const agent::AgentTurn& t) {
      count(t.degraded);
      if (after_persist_) after_persist_(t);
    });
    return {200, {{"final_response", turn.final_response}, {"degraded", turn.degraded}}};
  } catch (const Error&) {
    return {503, {{"final_response", engine_->templates().fallback_reply}, {"degraded", true}}};
  }
}

Reply Service::get_trace(const std::string& id) {
  {
    std::lock_guard lock(sessions_mutex_);
    if (sessions_.count(id) == 0) throw Error(ErrorKind::kNotFound, "unknown session " + id);
  }
  json turns = json::array();
  for (const auto& turn : agent::read_turn_log(config_.logs.turn_log, id)) turns.push_back(agent::to_json(turn));
  return {200, {{"session_id", id}, {"turns", turns}}};
}

Reply Service::ingest(const std::string& body) {
  const json request = parse_body(body);
  std::vector<SourceDocument> docs;
  json failed = json::array();
  if (request.contains("paths")) {
    for (const auto& path : field<std::vector<std::string>>(request, "paths")) {
      try {
        const auto format = app::format_for_path(path);
        if (format == DocumentFormat::kStructuredRecord) {
          for (auto& d : read_record_file(path)) docs.push_back(std::move(d));
        } else {
          docs.push_back(normalize_document(text::read_file(path), format,
                                            {{"source", fs::path(path).filename().string()}}));
        }
      } catch (const Error& e) {
        failed.push_back({{"path", path}, {"error", e.what()}});
      }
    }
  }
  if (request.contains("documents")) {
    const auto& items = request.at("documents");
    if (!items.is_array()) throw Error(ErrorKind::kValidationError, "field 'documents' must be an array");
    for (const auto& item : items) docs.push_back(document_from_json(item));
  }
  if (docs.empty()) throw Error(ErrorKind::kValidationError, "nothing to ingest");

  std::set<std::string> ids;
  for (const auto& d : docs) {
    if (!ids.insert(d.doc_id).second) throw Error(ErrorKind::kValidationError, "duplicate doc_id '" + d.doc_id + "'");
  }
  const auto fresh = app::chunk_documents(docs, config_.chunking);

  std::unique_lock index_lock(index_mutex_);
  std::vector<SourceDocument> all_docs;
  if (fs::exists(config_.corpus.documents_path)) {
    for (auto& d : read_record_file(config_.corpus.documents_path)) {
      if (ids.count(d.doc_id) == 0) all_docs.push_back(std::move(d));
    }
  }
  all_docs.insert(all_docs.end(), docs.begin(), docs.end());
  std::vector<Chunk> all_chunks;
  if (fs::exists(config_.corpus.chunks_path)) {
    for (auto& c : read_chunks(config_.corpus.chunks_path)) {
      if (ids.count(c.doc_id) == 0) all_chunks.push_back(std::move(c));
    }
  }
  all_chunks.insert(all_chunks.end(), fresh.begin(), fresh.end());

  auto index = app::build_index_for(all_chunks, config_, &engine_->backend());
  write_documents(config_.corpus.documents_path, all_docs);
  write_chunks(config_.corpus.chunks_path, all_chunks);
  save_index(index, config_.retrieval.index_path);
  const std::size_t entries = index.entries.size();
  const std::string tag = index.embedder_tag;
  engine_->set_index(std::move(index));
  return {200,
          {{"documents", docs.size()},
           {"chunks", fresh.size()},
           {"index_entries", entries},
           {"embedder_tag", tag},
           {"failed", failed}}};
}

Reply Service::search(const std::map<std::string, std::string>& params) {
  auto q = params.find("q");
  if (q == params.end() || text::trim(q->second).empty()) {
    throw Error(ErrorKind::kValidationError, "query parameter 'q' is required");
  }
  std::size_t k = config_.retrieval.k;
  if (auto it = params.find("k"); it != params.end()) {
    try {
      std::size_t used = 0;
      const long long value = std::stoll(it->second, &used);
      if (used != it->second.size() || value < 1) throw std::invalid_argument("k");
      k = static_cast<std::size_t>(value);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kValidationError, "parameter 'k' must be a positive integer");
    }
  }
  std::shared_lock index_lock(index_mutex_);
  json hits = json::array();
  for (const auto& hit : coached::search(engine_->index(), engine_->embedder(), q->second, k,
                                         config_.retrieval.min_score)) {
    hits.push_back(to_json(hit));
  }
  return {200, {{"query", q->second}, {"k", k}, {"hits", hits}}};
}

Reply Service::eval_next(const std::map<std::string, std::string>& params) {
  auto rater = params.find("rater");
  if (rater == params.end() || rater->second.empty()) {
    throw Error(ErrorKind::kValidationError, "query parameter 'rater' is required");
  }
  std::lock_guard lock(eval_mutex_);
  return {200, app::next_item(presentations_, *ratings_, rater->second).to_json()};
}

Reply Service::eval_rate(const std::string& body) {
  const json request = parse_body(body);
  const auto trial_id = field<std::string>(request, "trial_id");
  const auto rater_id = field<std::string>(request, "rater_id");
  const auto position = field<int>(request, "position");
  const auto score = field<int>(request, "score");
  std::lock_guard lock(eval_mutex_);
  const auto rating = app::submit_rating(presentations_, trials_, trial_id, rater_id, position, score, *ratings_);
  return {201, eval::rater_receipt(rating)};
}

Reply Service::eval_report() {
  std::lock_guard lock(eval_mutex_);
  const auto variant = config_.eval.pooled_variance ? stats::TTestVariant::kPooled : stats::TTestVariant::kWelch;
  return {200, eval::to_json(eval::build_report(ratings_->all(), trials_, variant))};
}

// ---------------------------------------------------------------------------
// Socket adapter

void Service::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  const auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> params;
    for (const auto& [key, value] : req.params) params.emplace(key, value);
    const Reply reply = handle(req.method, req.path, params, req.body);
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server_->Get(".*", dispatch);
  server_->Post(".*", dispatch);
}

int Service::start(const std::string& host, int port) {
  install_routes();
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorKind::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void Service::listen(const std::string& host, int port) {
  install_routes();
  if (!server_->listen(host, port)) {
    throw Error(ErrorKind::kIoError, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

void Service::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace coached::service
