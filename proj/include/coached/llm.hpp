#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coached/embedding.hpp"

namespace coached::llm {

enum class Role { kSystem, kUser, kAssistant };

std::string_view to_string(Role role);
Role parse_role(std::string_view name);

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  std::string model_id;
  double temperature = 0.0;
  int max_tokens = 512;
  std::string request_tag;

  // First message system, last user, user/assistant content nonempty,
  // temperature >= 0, max_tokens > 0. Throws Error(kValidationError).
  void validate() const;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

enum class BackendKind { kHttp, kScripted };

struct CompletionResult {
  std::string text;
  std::chrono::milliseconds latency{0};
  BackendKind backend = BackendKind::kScripted;
  std::optional<Usage> usage;
};

// 64-bit FNV-1a over the length-framed (role, content) sequence, as 16 hex digits.
std::string fingerprint(const CompletionRequest& request);
std::string fingerprint(const std::vector<ChatMessage>& messages);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
  virtual BackendKind kind() const = 0;
};

// Returns one vector per text. Throws Error(kDimInconsistent) if the backend
// disagrees with itself on dimension.
std::vector<EmbeddingVector> embed_remote(Backend& backend, const std::vector<std::string>& texts);

// ---------------------------------------------------------------------------
// Scripted backend

struct ScriptedBackendSpec {
  enum class Mode { kSequence, kMap };
  Mode mode = Mode::kSequence;
  std::vector<std::string> replies;
  std::map<std::string, std::string> entries;  // fingerprint hex -> reply
  std::vector<std::vector<double>> embeddings;  // consumed in order by embed()
  bool normalize_embeddings = false;

  static ScriptedBackendSpec from_json(const nlohmann::json& j);
  static ScriptedBackendSpec load(const std::string& path);
  nlohmann::json to_json() const;
};

class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(ScriptedBackendSpec spec);

  CompletionResult complete(const CompletionRequest& request) override;
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
  BackendKind kind() const override { return BackendKind::kScripted; }

  std::size_t calls() const;

 private:
  ScriptedBackendSpec spec_;
  mutable std::mutex mutex_;
  std::size_t next_reply_ = 0;
  std::size_t next_embedding_ = 0;
  std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible wire format)

struct HttpResponse {
  int status = 0;  // 0 means the transport failed before a status arrived
  std::string body;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post_json(const std::string& path, const std::string& body,
                                 const std::map<std::string, std::string>& headers) = 0;
};

std::unique_ptr<Transport> make_http_transport(const std::string& base_url,
                                               std::chrono::milliseconds timeout);

struct HttpBackendConfig {
  std::string base_url;
  std::string api_key;
  std::string embedding_model_id;
  int retry_max = 2;
  std::chrono::milliseconds backoff_base{250};
  std::chrono::milliseconds timeout{60000};
  int max_in_flight = 4;
  bool normalize_embeddings = true;
  std::uint64_t jitter_seed = 0x5eed;
};

class HttpBackend final : public Backend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  HttpBackend(HttpBackendConfig config, std::unique_ptr<Transport> transport,
              Sleeper sleeper = nullptr);

  CompletionResult complete(const CompletionRequest& request) override;
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
  BackendKind kind() const override { return BackendKind::kHttp; }

  static nlohmann::json chat_request_body(const CompletionRequest& request);

 private:
  HttpResponse post_with_retry(const std::string& path, const nlohmann::json& body);
  std::chrono::milliseconds backoff(int attempt);

  HttpBackendConfig config_;
  std::unique_ptr<Transport> transport_;
  Sleeper sleeper_;

  std::mutex slots_mutex_;
  std::condition_variable slots_cv_;
  int in_flight_ = 0;

  std::mutex jitter_mutex_;
  std::mt19937_64 jitter_rng_;
};

}  // namespace coached::llm
