#include "coached/llm.hpp"

#include <algorithm>
#include <thread>

#include "coached/error.hpp"
#include "coached/text.hpp"

namespace coached::llm {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view name) {
  if (name == "system") return Role::kSystem;
  if (name == "user") return Role::kUser;
  if (name == "assistant") return Role::kAssistant;
  throw Error(ErrorKind::kValidationError, "unknown role '" + std::string(name) + "'");
}

void CompletionRequest::validate() const {
  if (messages.empty()) throw Error(ErrorKind::kValidationError, "request has no messages");
  if (messages.front().role != Role::kSystem) {
    throw Error(ErrorKind::kValidationError, "first message must be the system message");
  }
  if (messages.back().role != Role::kUser) {
    throw Error(ErrorKind::kValidationError, "last message must be a user message");
  }
  for (const auto& m : messages) {
    if (m.role != Role::kSystem && m.content.empty()) {
      throw Error(ErrorKind::kValidationError, "empty user/assistant message");
    }
  }
  if (!(temperature >= 0.0)) throw Error(ErrorKind::kValidationError, "negative temperature");
  if (max_tokens <= 0) throw Error(ErrorKind::kValidationError, "max_tokens must be positive");
}

std::string fingerprint(const std::vector<ChatMessage>& messages) {
  std::uint64_t h = text::fnv1a64("coached-request-v1");
  for (const auto& m : messages) {
    std::string frame(to_string(m.role));
    frame += '\x1f';
    frame += std::to_string(m.content.size());
    frame += ':';
    h = text::fnv1a64(frame, h);
    h = text::fnv1a64(m.content, h);
    h = text::fnv1a64("\x1e", h);
  }
  return text::hex64(h);
}

std::string fingerprint(const CompletionRequest& request) { return fingerprint(request.messages); }

std::vector<EmbeddingVector> embed_remote(Backend& backend, const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  auto vectors = backend.embed(texts);
  if (vectors.size() != texts.size()) {
    throw Error(ErrorKind::kMalformedReply, "expected " + std::to_string(texts.size()) +
                                                " embeddings, got " +
                                                std::to_string(vectors.size()));
  }
  for (const auto& v : vectors) {
    if (v.dim() != vectors.front().dim()) {
      throw Error(ErrorKind::kDimInconsistent, "embedding dims " +
                                                   std::to_string(vectors.front().dim()) +
                                                   " and " + std::to_string(v.dim()));
    }
  }
  return vectors;
}

// ---------------------------------------------------------------------------
// Scripted

ScriptedBackendSpec ScriptedBackendSpec::from_json(const nlohmann::json& j) {
  ScriptedBackendSpec spec;
  try {
    const std::string mode = j.value("mode", std::string("sequence"));
    if (mode == "sequence") {
      spec.mode = Mode::kSequence;
      spec.replies = j.value("replies", std::vector<std::string>{});
    } else if (mode == "map") {
      spec.mode = Mode::kMap;
      spec.entries = j.at("entries").get<std::map<std::string, std::string>>();
    } else {
      throw Error(ErrorKind::kValidationError, "unknown scripted mode '" + mode + "'");
    }
    spec.embeddings = j.value("embeddings", std::vector<std::vector<double>>{});
    spec.normalize_embeddings = j.value("normalize_embeddings", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kValidationError, std::string("scripted backend spec: ") + e.what());
  }
  return spec;
}

ScriptedBackendSpec ScriptedBackendSpec::load(const std::string& path) {
  try {
    return from_json(nlohmann::json::parse(text::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kValidationError, path + ": " + e.what());
  }
}

nlohmann::json ScriptedBackendSpec::to_json() const {
  nlohmann::json j;
  if (mode == Mode::kSequence) {
    j["mode"] = "sequence";
    j["replies"] = replies;
  } else {
    j["mode"] = "map";
    j["entries"] = entries;
  }
  if (!embeddings.empty()) j["embeddings"] = embeddings;
  return j;
}

ScriptedBackend::ScriptedBackend(ScriptedBackendSpec spec) : spec_(std::move(spec)) {}

CompletionResult ScriptedBackend::complete(const CompletionRequest& request) {
  request.validate();
  const auto started = std::chrono::steady_clock::now();
  std::string reply;
  {
    std::lock_guard lock(mutex_);
    ++calls_;
    if (spec_.mode == ScriptedBackendSpec::Mode::kSequence) {
      if (next_reply_ >= spec_.replies.size()) {
        throw Error(ErrorKind::kScriptExhausted,
                    "sequence consumed after " + std::to_string(next_reply_) + " replies");
      }
      reply = spec_.replies[next_reply_++];
    } else {
      const std::string fp = fingerprint(request);
      auto it = spec_.entries.find(fp);
      if (it == spec_.entries.end()) {
        throw Error(ErrorKind::kScriptExhausted, "no scripted reply for fingerprint " + fp);
      }
      reply = it->second;
    }
  }
  if (reply.empty()) throw Error(ErrorKind::kMalformedReply, "scripted reply is empty");
  CompletionResult result;
  result.text = std::move(reply);
  result.backend = BackendKind::kScripted;
  result.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  return result;
}

std::vector<EmbeddingVector> ScriptedBackend::embed(const std::vector<std::string>& texts) {
  std::lock_guard lock(mutex_);
  ++calls_;
  std::vector<EmbeddingVector> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (next_embedding_ >= spec_.embeddings.size()) {
      throw Error(ErrorKind::kScriptExhausted, "scripted embeddings consumed");
    }
    EmbeddingVector v{spec_.embeddings[next_embedding_++], false};
    out.push_back(spec_.normalize_embeddings ? normalized(std::move(v)) : std::move(v));
  }
  return out;
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

// ---------------------------------------------------------------------------
// HTTP

HttpBackend::HttpBackend(HttpBackendConfig config, std::unique_ptr<Transport> transport,
                         Sleeper sleeper)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      jitter_rng_(config_.jitter_seed) {
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (config_.max_in_flight < 1) config_.max_in_flight = 1;
  if (config_.retry_max < 0) config_.retry_max = 0;
}

nlohmann::json HttpBackend::chat_request_body(const CompletionRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  }
  return {{"model", request.model_id},
          {"messages", messages},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens},
          {"stream", false}};
}

std::chrono::milliseconds HttpBackend::backoff(int attempt) {
  const auto base = config_.backoff_base.count() * (std::int64_t{1} << attempt);
  std::int64_t jitter = 0;
  if (base > 0) {
    std::lock_guard lock(jitter_mutex_);
    jitter = static_cast<std::int64_t>(jitter_rng_() % static_cast<std::uint64_t>(base / 4 + 1));
  }
  return std::chrono::milliseconds(base + jitter);
}

HttpResponse HttpBackend::post_with_retry(const std::string& path, const nlohmann::json& body) {
  {
    std::unique_lock lock(slots_mutex_);
    slots_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
  }
  struct SlotRelease {
    HttpBackend* self;
    ~SlotRelease() {
      {
        std::lock_guard lock(self->slots_mutex_);
        --self->in_flight_;
      }
      self->slots_cv_.notify_one();
    }
  } release{this};

  std::map<std::string, std::string> headers{{"Content-Type", "application/json"}};
  if (!config_.api_key.empty()) headers["Authorization"] = "Bearer " + config_.api_key;
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config_.retry_max; ++attempt) {
    HttpResponse response = transport_->post_json(path, payload, headers);
    if (response.status >= 200 && response.status < 300) return response;
    const bool transient =
        response.status == 0 || response.status == 429 || response.status >= 500;
    last_error = response.status == 0
                     ? "transport error: " + response.error
                     : "HTTP " + std::to_string(response.status) + ": " + response.body;
    if (!transient) break;
    if (attempt < config_.retry_max) sleeper_(backoff(attempt));
  }
  throw Error(ErrorKind::kBackendUnavailable, path + ": " + last_error);
}

CompletionResult HttpBackend::complete(const CompletionRequest& request) {
  request.validate();
  const auto started = std::chrono::steady_clock::now();
  const HttpResponse response = post_with_retry("/v1/chat/completions", chat_request_body(request));

  CompletionResult result;
  result.backend = BackendKind::kHttp;
  try {
    const auto j = nlohmann::json::parse(response.body);
    const auto& message = j.at("choices").at(0).at("message");
    if (!message.contains("content") || !message.at("content").is_string()) {
      throw Error(ErrorKind::kMalformedReply, "reply has no assistant content");
    }
    result.text = message.at("content").get<std::string>();
    if (j.contains("usage") && j.at("usage").is_object()) {
      const auto& u = j.at("usage");
      result.usage = Usage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0)};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedReply, e.what());
  }
  if (result.text.empty()) throw Error(ErrorKind::kMalformedReply, "assistant content is empty");
  result.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  return result;
}

std::vector<EmbeddingVector> HttpBackend::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  const nlohmann::json body = {{"model", config_.embedding_model_id}, {"input", texts}};
  const HttpResponse response = post_with_retry("/v1/embeddings", body);
  std::vector<EmbeddingVector> out(texts.size());
  try {
    const auto j = nlohmann::json::parse(response.body);
    const auto& data = j.at("data");
    if (data.size() != texts.size()) {
      throw Error(ErrorKind::kMalformedReply, "embedding count mismatch");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t slot = data[i].value("index", i);
      if (slot >= out.size()) throw Error(ErrorKind::kMalformedReply, "embedding index out of range");
      EmbeddingVector v{data[i].at("embedding").get<std::vector<double>>(), false};
      out[slot] = config_.normalize_embeddings ? normalized(std::move(v)) : std::move(v);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedReply, e.what());
  }
  return out;
}

}  // namespace coached::llm
