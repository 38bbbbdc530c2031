#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coached/llm.hpp"
#include "coached/retrieval.hpp"

namespace coached::agent {

struct PromptTemplates {
  std::string therapist_system;  // {context_chunks} {session_tag}
  std::string therapist_user;    // {query}
  std::string supervisor_system;  // {context_chunks}; must spell out the VERDICT grammar
  std::string supervisor_user;    // {query} {draft}
  std::string fallback_reply;

  static PromptTemplates defaults();
  // Accepts .json, or .toml with the same five keys at top level.
  static PromptTemplates load(const std::string& path);

  // Every named slot exactly once, no foreign slots, grammar present.
  // Throws Error(kTemplateError).
  void validate() const;
};

// Substitutes {name} slots from `values` in one pass; inserted text is never
// re-scanned. Throws Error(kTemplateError) for a slot without a value.
std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& values);

enum class VerdictKind { kApproved, kRevised, kRejected };

std::string_view to_string(VerdictKind kind);
VerdictKind parse_verdict_kind(std::string_view name);

struct SupervisorVerdict {
  VerdictKind kind = VerdictKind::kApproved;
  std::string feedback;
  std::optional<std::string> replacement;

  friend bool operator==(const SupervisorVerdict&, const SupervisorVerdict&) = default;
};

// Renders hits in the order given (score order from search), each preceded
// by a bracketed header listing its metadata.
std::string render_context(const std::vector<RetrievalHit>& hits);

std::vector<llm::ChatMessage> build_therapist_prompt(const std::string& query,
                                                     const std::vector<RetrievalHit>& hits,
                                                     const PromptTemplates& templates,
                                                     const std::string& session_tag);

// Throws Error(kEmptyDraft) for an empty or whitespace-only draft.
std::vector<llm::ChatMessage> build_supervisor_prompt(const std::string& query,
                                                      const std::string& draft,
                                                      const std::vector<RetrievalHit>& hits,
                                                      const PromptTemplates& templates);

/// Reads the Supervisor's reply.
///
/// The structured form is a set of "VERDICT: GOOD|REVISE|WRONG",
/// "FEEDBACK: ..." and "RESPONSE: ..." lines. Free-text replies are accepted
/// when they contain one of the verdict phrases ("RESPONSE is good",
/// "not exactly what I would expect", "seems to be wrong"); the replacement
/// is whatever follows the last "Supervisor Response:" label, or the final
/// paragraph when there is no label.
///
/// Throws Error(kUnparseableVerdict) or Error(kMissingReplacement).
SupervisorVerdict parse_supervisor_output(const std::string& raw);

enum class TurnStatus { kCompleted, kNoContext, kUnparseableVerdict, kBackendFailed };

std::string_view to_string(TurnStatus status);
TurnStatus parse_turn_status(std::string_view name);

struct TurnTimestamps {
  std::string received;
  std::string retrieved;
  std::string drafted;
  std::string verified;
  std::string completed;
};

struct AgentTurn {
  static constexpr int kSchemaVersion = 1;

  std::string turn_id;
  std::string session_id;
  std::string session_tag;
  std::string query;
  std::vector<RetrievalHit> hits;
  std::vector<llm::ChatMessage> therapist_messages;
  std::string therapist_draft;
  std::vector<llm::ChatMessage> supervisor_messages;
  std::string supervisor_raw;
  std::optional<SupervisorVerdict> verdict;
  std::string final_response;
  TurnTimestamps timestamps;
  bool degraded = false;
  TurnStatus status = TurnStatus::kCompleted;
  std::string error;
};

nlohmann::json to_json(const AgentTurn& turn);
AgentTurn turn_from_json(const nlohmann::json& j);

class TurnLog {
 public:
  virtual ~TurnLog() = default;
  // Must be durable (or throw) before returning.
  virtual void append(const AgentTurn& turn) = 0;
  virtual std::size_t turn_count(const std::string& session_id) const = 0;
};

class MemoryTurnLog final : public TurnLog {
 public:
  void append(const AgentTurn& turn) override;
  std::size_t turn_count(const std::string& session_id) const override;
  std::vector<AgentTurn> turns() const;

 private:
  mutable std::mutex mutex_;
  std::vector<AgentTurn> turns_;
};

// Append-only JSON lines, one AgentTurn per line; each append is flushed and
// fsync'd before returning. Safe for concurrent appenders in one process.
class JsonlTurnLog final : public TurnLog {
 public:
  explicit JsonlTurnLog(std::string path);
  ~JsonlTurnLog() override;
  JsonlTurnLog(const JsonlTurnLog&) = delete;
  JsonlTurnLog& operator=(const JsonlTurnLog&) = delete;

  void append(const AgentTurn& turn) override;
  std::size_t turn_count(const std::string& session_id) const override;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  int fd_ = -1;
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> counts_;
};

// Every turn in the file, in append order; optionally one session only.
std::vector<AgentTurn> read_turn_log(const std::string& path, const std::string& session_id = "");

struct AnswerConfig {
  std::size_t k = 4;
  double min_score = kDefaultMinScore;
  std::string session_tag = "general";
  // Restrict hits to chunks whose metadata "session" equals session_tag.
  bool filter_by_session = false;
  std::string model_id = "local";
  double temperature = 0.0;
  int max_tokens = 512;
};

struct AnswerContext {
  const VectorIndex& index;
  const Embedder& embedder;
  llm::Backend& backend;
  const PromptTemplates& templates;
  TurnLog& log;
  // Test seam: runs after the turn is persisted, before answer_query returns.
  std::function<void(const AgentTurn&)> after_persist;
};

/// One patient query through retrieval, Therapist and Supervisor.
///
/// No hits above min_score, or a Supervisor reply that cannot be parsed,
/// yields a degraded turn answered with templates.fallback_reply. Backend
/// errors are logged as a failed (degraded) turn and then rethrown. The
/// turn is always persisted before this returns or throws.
AgentTurn answer_query(const std::string& session_id, const std::string& query,
                       const AnswerContext& ctx, const AnswerConfig& config = {});

}  // namespace coached::agent
