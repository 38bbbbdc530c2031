#include "coached/agent.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "coached/config.hpp"
#include "coached/error.hpp"
#include "coached/text.hpp"

namespace coached::agent {

// ---------------------------------------------------------------------------
// Templates

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.therapist_system =
      "You are the Therapist agent of a virtual sleep coach that teaches Cognitive Behavioral "
      "Therapy for Insomnia (CBT-I). Answer the patient using only the knowledge in the context "
      "below. If the context does not cover the question, say so briefly and suggest raising it "
      "with their therapist. Be warm and concise. Do not diagnose and do not give medication "
      "advice.\n\n"
      "Current session: {session_tag}\n\n"
      "Context:\n{context_chunks}";
  t.therapist_user = "{query}";
  t.supervisor_system =
      "You are the Supervisor agent, an experienced CBT-I therapist who reviews a trainee's reply "
      "before it reaches the patient. Check the Therapist's RESPONSE against the context below "
      "and against what the patient is actually asking. Reply in exactly this format:\n"
      "VERDICT: GOOD | REVISE | WRONG\n"
      "FEEDBACK: <one paragraph explaining the judgement>\n"
      "RESPONSE: <the reply the patient should receive; omit when the verdict is GOOD>\n"
      "Use GOOD when the response is accurate and answers the question, REVISE when it is not "
      "exactly what you would expect, and WRONG when it is incorrect or misses the patient's "
      "concern.\n\n"
      "Context:\n{context_chunks}";
  t.supervisor_user = "Patient query: {query}\n\nTherapist's RESPONSE: {draft}";
  t.fallback_reply =
      "I'm sorry, I can only help with questions covered by your sleep program materials. "
      "Please bring this question to your therapist at your next session.";
  return t;
}

PromptTemplates PromptTemplates::load(const std::string& path) {
  nlohmann::json j;
  const bool toml = path.size() >= 5 && path.compare(path.size() - 5, 5, ".toml") == 0;
  try {
    j = toml ? parse_toml(text::read_file(path)) : nlohmann::json::parse(text::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kTemplateError, path + ": " + e.what());
  }
  PromptTemplates t;
  try {
    t.therapist_system = j.at("therapist_system").get<std::string>();
    t.therapist_user = j.at("therapist_user").get<std::string>();
    t.supervisor_system = j.at("supervisor_system").get<std::string>();
    t.supervisor_user = j.at("supervisor_user").get<std::string>();
    t.fallback_reply = j.at("fallback_reply").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kTemplateError, path + ": " + e.what());
  }
  t.validate();
  return t;
}

namespace {

struct SlotRef {
  std::size_t begin;  // position of '{'
  std::size_t end;    // one past '}'
  std::string name;
};

std::vector<SlotRef> find_slots(const std::string& tmpl) {
  std::vector<SlotRef> slots;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < tmpl.size() && (std::islower(static_cast<unsigned char>(tmpl[j])) || tmpl[j] == '_')) {
      ++j;
    }
    if (j > i + 1 && j < tmpl.size() && tmpl[j] == '}') {
      slots.push_back({i, j + 1, tmpl.substr(i + 1, j - i - 1)});
      i = j;
    }
  }
  return slots;
}

void check_slots(const std::string& field, const std::string& tmpl,
                 std::initializer_list<std::string_view> required) {
  std::map<std::string, int> seen;
  for (const auto& s : find_slots(tmpl)) ++seen[s.name];
  for (auto name : required) {
    const int n = seen[std::string(name)];
    if (n != 1) {
      throw Error(ErrorKind::kTemplateError, field + ": slot {" + std::string(name) +
                                                 "} appears " + std::to_string(n) + " times");
    }
  }
  for (const auto& [name, n] : seen) {
    if (std::find(required.begin(), required.end(), name) == required.end()) {
      throw Error(ErrorKind::kTemplateError, field + ": unknown slot {" + name + "}");
    }
  }
}

}  // namespace

void PromptTemplates::validate() const {
  check_slots("therapist_system", therapist_system, {"context_chunks", "session_tag"});
  check_slots("therapist_user", therapist_user, {"query"});
  check_slots("supervisor_system", supervisor_system, {"context_chunks"});
  check_slots("supervisor_user", supervisor_user, {"query", "draft"});
  if (supervisor_system.find("VERDICT:") == std::string::npos) {
    throw Error(ErrorKind::kTemplateError, "supervisor_system must spell out the VERDICT: grammar");
  }
  if (text::trim(fallback_reply).empty()) {
    throw Error(ErrorKind::kTemplateError, "fallback_reply is empty");
  }
}

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  for (const auto& slot : find_slots(tmpl)) {
    auto it = values.find(slot.name);
    if (it == values.end()) {
      throw Error(ErrorKind::kTemplateError, "no value for slot {" + slot.name + "}");
    }
    out.append(tmpl, pos, slot.begin - pos);
    out += it->second;
    pos = slot.end;
  }
  out.append(tmpl, pos, std::string::npos);
  return out;
}

// ---------------------------------------------------------------------------
// Prompts

std::string render_context(const std::vector<RetrievalHit>& hits) {
  std::string out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto& hit = hits[i];
    std::string header = "[" + std::to_string(i + 1) + "]";
    std::vector<std::string> parts;
    if (hit.metadata.is_object()) {
      for (const auto& [key, value] : hit.metadata.items()) {
        if (key == "strategy" || key == "doc_id") continue;
        if (value.is_string()) {
          if (!value.get<std::string>().empty()) parts.push_back(key + ": " + value.get<std::string>());
        } else if (value.is_array()) {
          if (value.empty()) continue;
          std::string joined;
          for (const auto& v : value) {
            if (!joined.empty()) joined += " > ";
            joined += v.is_string() ? v.get<std::string>() : v.dump();
          }
          parts.push_back(key + ": " + joined);
        } else if (!value.is_null()) {
          parts.push_back(key + ": " + value.dump());
        }
      }
    }
    for (const auto& p : parts) header += " " + p + ";";
    if (!parts.empty()) header.pop_back();
    out += header + "\n" + hit.text + "\n";
    if (i + 1 < hits.size()) out += "\n";
  }
  return out;
}

std::vector<llm::ChatMessage> build_therapist_prompt(const std::string& query,
                                                     const std::vector<RetrievalHit>& hits,
                                                     const PromptTemplates& templates,
                                                     const std::string& session_tag) {
  const std::string context = render_context(hits);
  return {
      {llm::Role::kSystem,
       render_template(templates.therapist_system,
                       {{"context_chunks", context}, {"session_tag", session_tag}})},
      {llm::Role::kUser, render_template(templates.therapist_user, {{"query", query}})},
  };
}

std::vector<llm::ChatMessage> build_supervisor_prompt(const std::string& query,
                                                      const std::string& draft,
                                                      const std::vector<RetrievalHit>& hits,
                                                      const PromptTemplates& templates) {
  if (text::trim(draft).empty()) throw Error(ErrorKind::kEmptyDraft, "therapist draft is empty");
  return {
      {llm::Role::kSystem,
       render_template(templates.supervisor_system, {{"context_chunks", render_context(hits)}})},
      {llm::Role::kUser,
       render_template(templates.supervisor_user, {{"query", query}, {"draft", draft}})},
  };
}

// ---------------------------------------------------------------------------
// Verdict parsing

std::string_view to_string(VerdictKind kind) {
  switch (kind) {
    case VerdictKind::kApproved: return "approved";
    case VerdictKind::kRevised: return "revised";
    case VerdictKind::kRejected: return "rejected";
  }
  return "approved";
}

VerdictKind parse_verdict_kind(std::string_view name) {
  if (name == "approved") return VerdictKind::kApproved;
  if (name == "revised") return VerdictKind::kRevised;
  if (name == "rejected") return VerdictKind::kRejected;
  throw Error(ErrorKind::kValidationError, "unknown verdict kind '" + std::string(name) + "'");
}

namespace {

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string::npos) nl = s.size();
    std::string line = s.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string> paragraphs(const std::string& s) {
  std::vector<std::string> out;
  std::string current;
  for (const auto& line : split_lines(s)) {
    if (text::trim(line).empty()) {
      if (!text::trim(current).empty()) out.push_back(text::trim(current));
      current.clear();
    } else {
      if (!current.empty()) current += "\n";
      current += line;
    }
  }
  if (!text::trim(current).empty()) out.push_back(text::trim(current));
  return out;
}

std::string strip_label(std::string s, std::string_view label) {
  s = text::trim(s);
  if (text::starts_with_icase(s, label)) s = text::trim(std::string_view(s).substr(label.size()));
  return s;
}

std::string strip_quotes(std::string s) {
  s = text::trim(s);
  static const std::array<std::pair<std::string_view, std::string_view>, 2> kPairs{{
      {"\xE2\x80\x9C", "\xE2\x80\x9D"},  // curly double quotes
      {"\"", "\""},
  }};
  for (const auto& [open, close] : kPairs) {
    if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
        s.compare(s.size() - close.size(), close.size(), close) == 0) {
      return text::trim(std::string_view(s).substr(open.size(), s.size() - open.size() - close.size()));
    }
  }
  return s;
}

// "**VERDICT:** GOOD" and "- VERDICT: GOOD" are both accepted.
std::string_view unmark(std::string_view line) {
  while (!line.empty() && (line.front() == ' ' || line.front() == '*' || line.front() == '-' ||
                           line.front() == '#' || line.front() == '\t')) {
    line.remove_prefix(1);
  }
  return line;
}

std::optional<VerdictKind> verdict_word(std::string value) {
  std::string word;
  for (char c : value) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    } else if (!word.empty()) {
      break;
    }
  }
  if (word == "GOOD" || word == "APPROVED" || word == "APPROVE") return VerdictKind::kApproved;
  if (word == "REVISE" || word == "REVISED") return VerdictKind::kRevised;
  if (word == "WRONG" || word == "REJECTED" || word == "REJECT") return VerdictKind::kRejected;
  return std::nullopt;
}

SupervisorVerdict finish(VerdictKind kind, std::string feedback, std::string replacement) {
  SupervisorVerdict v;
  v.kind = kind;
  v.feedback = text::trim(feedback);
  if (kind == VerdictKind::kApproved) return v;
  replacement = strip_quotes(replacement);
  if (replacement.empty()) {
    throw Error(ErrorKind::kMissingReplacement,
                std::string(to_string(kind)) + " verdict without a replacement response");
  }
  if (v.feedback.empty()) {
    throw Error(ErrorKind::kUnparseableVerdict,
                std::string(to_string(kind)) + " verdict without feedback");
  }
  v.replacement = std::move(replacement);
  return v;
}

std::optional<SupervisorVerdict> parse_structured(const std::string& raw) {
  enum class Field { kNone, kVerdict, kFeedback, kResponse };
  Field current = Field::kNone;
  std::string verdict;
  std::string feedback;
  std::string response;
  bool saw_verdict = false;
  for (const auto& line : split_lines(raw)) {
    const std::string_view body = unmark(line);
    const auto take = [&](std::string_view label, Field field, std::string& into) {
      if (!text::starts_with_icase(body, label)) return false;
      std::string_view rest = body.substr(label.size());
      while (!rest.empty() && (rest.front() == '*' || rest.front() == ' ')) rest.remove_prefix(1);
      current = field;
      into = std::string(rest);
      return true;
    };
    if (take("VERDICT:", Field::kVerdict, verdict)) {
      saw_verdict = true;
      continue;
    }
    if (take("FEEDBACK:", Field::kFeedback, feedback)) continue;
    if (take("RESPONSE:", Field::kResponse, response)) continue;
    switch (current) {
      case Field::kFeedback: feedback += "\n" + line; break;
      case Field::kResponse: response += "\n" + line; break;
      default: break;
    }
  }
  if (!saw_verdict) return std::nullopt;
  const auto kind = verdict_word(verdict);
  if (!kind) return std::nullopt;
  return finish(*kind, feedback, response);
}

constexpr std::string_view kReplacementLabel = "Supervisor Response:";

SupervisorVerdict parse_phrases(const std::string& raw) {
  static const std::array<std::pair<std::string_view, VerdictKind>, 3> kPhrases{{
      {"RESPONSE is good", VerdictKind::kApproved},
      {"not exactly what I would expect", VerdictKind::kRevised},
      {"seems to be wrong", VerdictKind::kRejected},
  }};
  std::optional<VerdictKind> kind;
  std::size_t first = std::string::npos;
  for (const auto& [phrase, k] : kPhrases) {
    const std::size_t at = text::find_icase(raw, phrase);
    if (at < first) {
      first = at;
      kind = k;
    }
  }
  if (!kind) {
    throw Error(ErrorKind::kUnparseableVerdict, "no VERDICT line and no verdict phrase");
  }

  const std::size_t label = text::rfind_icase(raw, kReplacementLabel);
  const std::string before = label == std::string::npos ? raw : raw.substr(0, label);
  const auto feedback_paras = paragraphs(before);
  std::string feedback =
      feedback_paras.empty() ? std::string() : strip_label(feedback_paras.front(), "Supervisor feedback:");

  std::string replacement;
  if (*kind != VerdictKind::kApproved) {
    if (label != std::string::npos) {
      replacement = raw.substr(label + kReplacementLabel.size());
    } else if (const auto paras = paragraphs(raw); paras.size() >= 2) {
      replacement = paras.back();
    }
  }
  return finish(*kind, std::move(feedback), std::move(replacement));
}

}  // namespace

SupervisorVerdict parse_supervisor_output(const std::string& raw) {
  if (text::trim(raw).empty()) throw Error(ErrorKind::kUnparseableVerdict, "empty supervisor output");
  if (auto structured = parse_structured(raw)) return *structured;
  return parse_phrases(raw);
}

// ---------------------------------------------------------------------------
// Turn records

std::string_view to_string(TurnStatus status) {
  switch (status) {
    case TurnStatus::kCompleted: return "completed";
    case TurnStatus::kNoContext: return "no_context";
    case TurnStatus::kUnparseableVerdict: return "unparseable_verdict";
    case TurnStatus::kBackendFailed: return "backend_failed";
  }
  return "completed";
}

TurnStatus parse_turn_status(std::string_view name) {
  if (name == "completed") return TurnStatus::kCompleted;
  if (name == "no_context") return TurnStatus::kNoContext;
  if (name == "unparseable_verdict") return TurnStatus::kUnparseableVerdict;
  if (name == "backend_failed") return TurnStatus::kBackendFailed;
  throw Error(ErrorKind::kValidationError, "unknown turn status '" + std::string(name) + "'");
}

namespace {

nlohmann::json messages_json(const std::vector<llm::ChatMessage>& messages) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& m : messages) {
    out.push_back({{"role", std::string(llm::to_string(m.role))}, {"content", m.content}});
  }
  return out;
}

std::vector<llm::ChatMessage> messages_from(const nlohmann::json& j) {
  std::vector<llm::ChatMessage> out;
  for (const auto& m : j) {
    out.push_back({llm::parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const AgentTurn& turn) {
  nlohmann::json hits = nlohmann::json::array();
  for (const auto& h : turn.hits) hits.push_back(coached::to_json(h));
  nlohmann::json verdict = nullptr;
  if (turn.verdict) {
    verdict = {{"kind", std::string(to_string(turn.verdict->kind))},
               {"feedback", turn.verdict->feedback},
               {"replacement", turn.verdict->replacement ? nlohmann::json(*turn.verdict->replacement)
                                                         : nlohmann::json(nullptr)}};
  }
  return {
      {"schema_version", AgentTurn::kSchemaVersion},
      {"turn_id", turn.turn_id},
      {"session_id", turn.session_id},
      {"session_tag", turn.session_tag},
      {"query", turn.query},
      {"hits", hits},
      {"therapist", {{"messages", messages_json(turn.therapist_messages)}, {"draft", turn.therapist_draft}}},
      {"supervisor", {{"messages", messages_json(turn.supervisor_messages)}, {"raw", turn.supervisor_raw}}},
      {"verdict", verdict},
      {"final_response", turn.final_response},
      {"degraded", turn.degraded},
      {"status", std::string(to_string(turn.status))},
      {"error", turn.error},
      {"timestamps",
       {{"received", turn.timestamps.received},
        {"retrieved", turn.timestamps.retrieved},
        {"drafted", turn.timestamps.drafted},
        {"verified", turn.timestamps.verified},
        {"completed", turn.timestamps.completed}}},
  };
}

AgentTurn turn_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != AgentTurn::kSchemaVersion) {
    throw Error(ErrorKind::kValidationError, "unsupported turn schema version");
  }
  AgentTurn t;
  t.turn_id = j.at("turn_id").get<std::string>();
  t.session_id = j.at("session_id").get<std::string>();
  t.session_tag = j.value("session_tag", std::string());
  t.query = j.at("query").get<std::string>();
  for (const auto& h : j.at("hits")) {
    t.hits.push_back({h.at("chunk_id").get<std::string>(), h.at("score").get<double>(),
                      h.at("text").get<std::string>(), h.value("metadata", Metadata::object())});
  }
  t.therapist_messages = messages_from(j.at("therapist").at("messages"));
  t.therapist_draft = j.at("therapist").at("draft").get<std::string>();
  t.supervisor_messages = messages_from(j.at("supervisor").at("messages"));
  t.supervisor_raw = j.at("supervisor").at("raw").get<std::string>();
  if (const auto& v = j.at("verdict"); !v.is_null()) {
    SupervisorVerdict verdict;
    verdict.kind = parse_verdict_kind(v.at("kind").get<std::string>());
    verdict.feedback = v.at("feedback").get<std::string>();
    if (!v.at("replacement").is_null()) verdict.replacement = v.at("replacement").get<std::string>();
    t.verdict = std::move(verdict);
  }
  t.final_response = j.at("final_response").get<std::string>();
  t.degraded = j.at("degraded").get<bool>();
  t.status = parse_turn_status(j.at("status").get<std::string>());
  t.error = j.value("error", std::string());
  const auto& ts = j.at("timestamps");
  t.timestamps = {ts.value("received", ""), ts.value("retrieved", ""), ts.value("drafted", ""),
                  ts.value("verified", ""), ts.value("completed", "")};
  return t;
}

void MemoryTurnLog::append(const AgentTurn& turn) {
  std::lock_guard lock(mutex_);
  turns_.push_back(turn);
}

std::size_t MemoryTurnLog::turn_count(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(
      turns_.begin(), turns_.end(), [&](const AgentTurn& t) { return t.session_id == session_id; }));
}

std::vector<AgentTurn> MemoryTurnLog::turns() const {
  std::lock_guard lock(mutex_);
  return turns_;
}

std::vector<AgentTurn> read_turn_log(const std::string& path, const std::string& session_id) {
  std::vector<AgentTurn> turns;
  std::ifstream in(path);
  if (!in) return turns;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      continue;  // torn final line after a crash mid-append
    }
    if (!session_id.empty() && j.value("session_id", std::string()) != session_id) continue;
    turns.push_back(turn_from_json(j));
  }
  return turns;
}

JsonlTurnLog::JsonlTurnLog(std::string path) : path_(std::move(path)) {
  for (const auto& t : read_turn_log(path_)) ++counts_[t.session_id];
  fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error(ErrorKind::kIoError, "cannot open turn log " + path_ + ": " + std::strerror(errno));
  }
}

JsonlTurnLog::~JsonlTurnLog() {
  if (fd_ >= 0) ::close(fd_);
}

void JsonlTurnLog::append(const AgentTurn& turn) {
  const std::string line = to_json(turn).dump() + "\n";
  std::lock_guard lock(mutex_);
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::kIoError, "turn log write failed: " + std::string(std::strerror(errno)));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0 && errno != EINVAL) {
    throw Error(ErrorKind::kIoError, "turn log fsync failed: " + std::string(std::strerror(errno)));
  }
  ++counts_[turn.session_id];
}

std::size_t JsonlTurnLog::turn_count(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto it = counts_.find(session_id);
  return it == counts_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

std::string make_turn_id(const std::string& session_id, std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", n);
  return session_id + "/" + buf;
}

void persist(const AnswerContext& ctx, const AgentTurn& turn) {
  ctx.log.append(turn);
  if (ctx.after_persist) ctx.after_persist(turn);
}

llm::CompletionRequest make_request(std::vector<llm::ChatMessage> messages,
                                    const AnswerConfig& config, const std::string& tag) {
  llm::CompletionRequest request;
  request.messages = std::move(messages);
  request.model_id = config.model_id;
  request.temperature = config.temperature;
  request.max_tokens = config.max_tokens;
  request.request_tag = tag;
  return request;
}

}  // namespace

AgentTurn answer_query(const std::string& session_id, const std::string& query,
                       const AnswerContext& ctx, const AnswerConfig& config) {
  AgentTurn turn;
  turn.session_id = session_id;
  turn.session_tag = config.session_tag;
  turn.query = query;
  turn.turn_id = make_turn_id(session_id, ctx.log.turn_count(session_id));
  turn.timestamps.received = text::utc_timestamp_now();

  const auto degrade = [&](TurnStatus status, std::string error) {
    turn.degraded = true;
    turn.status = status;
    turn.error = std::move(error);
    turn.final_response = ctx.templates.fallback_reply;
    turn.timestamps.completed = text::utc_timestamp_now();
  };

  try {
    if (config.filter_by_session && !config.session_tag.empty()) {
      for (auto& hit : search(ctx.index, ctx.embedder, query, ctx.index.entries.size(), config.min_score)) {
        if (turn.hits.size() >= config.k) break;
        if (hit.metadata.is_object() && hit.metadata.value("session", std::string()) == config.session_tag) {
          turn.hits.push_back(std::move(hit));
        }
      }
    } else {
      turn.hits = search(ctx.index, ctx.embedder, query, config.k, config.min_score);
    }
    turn.timestamps.retrieved = text::utc_timestamp_now();

    if (turn.hits.empty()) {
      degrade(TurnStatus::kNoContext, "");
      persist(ctx, turn);
      return turn;
    }

    turn.therapist_messages = build_therapist_prompt(query, turn.hits, ctx.templates, config.session_tag);
    turn.therapist_draft =
        ctx.backend.complete(make_request(turn.therapist_messages, config, turn.turn_id + "/therapist")).text;
    turn.timestamps.drafted = text::utc_timestamp_now();

    turn.supervisor_messages =
        build_supervisor_prompt(query, turn.therapist_draft, turn.hits, ctx.templates);
    turn.supervisor_raw =
        ctx.backend.complete(make_request(turn.supervisor_messages, config, turn.turn_id + "/supervisor")).text;
    turn.timestamps.verified = text::utc_timestamp_now();
  } catch (const Error& e) {
    degrade(TurnStatus::kBackendFailed, e.what());
    persist(ctx, turn);
    throw;
  } catch (const std::exception& e) {
    degrade(TurnStatus::kBackendFailed, e.what());
    persist(ctx, turn);
    throw;
  }

  try {
    turn.verdict = parse_supervisor_output(turn.supervisor_raw);
  } catch (const Error& e) {
    degrade(TurnStatus::kUnparseableVerdict, e.what());
    persist(ctx, turn);
    return turn;
  }

  turn.final_response = turn.verdict->kind == VerdictKind::kApproved ? turn.therapist_draft
                                                                     : *turn.verdict->replacement;
  turn.status = TurnStatus::kCompleted;
  turn.timestamps.completed = text::utc_timestamp_now();
  persist(ctx, turn);
  return turn;
}

}  // namespace coached::agent
