#include "coached/app.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "coached/error.hpp"
#include "coached/text.hpp"

namespace coached::app {

namespace fs = std::filesystem;
using nlohmann::json;

DocumentFormat format_for_path(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".md" || ext == ".markdown") return DocumentFormat::kMarkdown;
  if (ext == ".jsonl" || ext == ".json") return DocumentFormat::kStructuredRecord;
  return DocumentFormat::kPlain;
}

json IngestSummary::to_json() const {
  json failures = json::array();
  for (const auto& [path, message] : failed) failures.push_back({{"path", path}, {"error", message}});
  return {{"documents", documents}, {"chunks", chunks},       {"mean_chunk_chars", mean_chunk_chars},
          {"succeeded", succeeded}, {"failed", failures}};
}

std::vector<Chunk> chunk_documents(const std::vector<SourceDocument>& docs, const ChunkingPolicy& policy) {
  policy.validate();
  std::vector<Chunk> chunks;
  for (const auto& doc : docs) {
    auto part = chunk_document(doc, policy);
    chunks.insert(chunks.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return chunks;
}

namespace {

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw Error(ErrorKind::kIoError, "cannot create " + parent.string() + ": " + ec.message());
}

}  // namespace

IngestSummary ingest_paths(const AppConfig& config, const std::vector<std::string>& paths) {
  config.chunking.validate();
  IngestSummary summary;
  std::vector<SourceDocument> docs;
  std::set<std::string> seen;
  for (const auto& path : paths) {
    try {
      std::vector<SourceDocument> found;
      const DocumentFormat format = format_for_path(path);
      if (format == DocumentFormat::kStructuredRecord) {
        found = read_record_file(path);
      } else {
        found.push_back(normalize_document(text::read_file(path), format,
                                           {{"source", fs::path(path).filename().string()}}));
      }
      for (const auto& d : found) {
        if (seen.count(d.doc_id) != 0) {
          throw Error(ErrorKind::kValidationError, "duplicate doc_id '" + d.doc_id + "'");
        }
      }
      for (auto& d : found) {
        seen.insert(d.doc_id);
        docs.push_back(std::move(d));
      }
      summary.succeeded.push_back(path);
    } catch (const std::exception& e) {
      summary.failed.emplace_back(path, e.what());
    }
  }
  const auto chunks = chunk_documents(docs, config.chunking);
  summary.documents = docs.size();
  summary.chunks = chunks.size();
  std::size_t total = 0;
  for (const auto& c : chunks) total += c.span.size();
  summary.mean_chunk_chars = chunks.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(chunks.size());
  if (!summary.succeeded.empty()) {
    ensure_parent(config.corpus.documents_path);
    ensure_parent(config.corpus.chunks_path);
    write_documents(config.corpus.documents_path, docs);
    write_chunks(config.corpus.chunks_path, chunks);
  }
  return summary;
}

std::unique_ptr<llm::Backend> make_backend(const AppConfig& config) {
  config.require_backend();
  if (!config.backend.scripted_spec_path.empty()) {
    return std::make_unique<llm::ScriptedBackend>(llm::ScriptedBackendSpec::load(config.backend.scripted_spec_path));
  }
  llm::HttpBackendConfig http;
  http.base_url = config.backend.base_url;
  http.api_key = config.backend.api_key;
  http.embedding_model_id = config.backend.embedding_model_id;
  http.retry_max = config.backend.retry_max;
  http.timeout = std::chrono::milliseconds(config.backend.timeout_ms);
  http.max_in_flight = config.backend.max_in_flight;
  return std::make_unique<llm::HttpBackend>(http, llm::make_http_transport(http.base_url, http.timeout));
}

RemoteEmbedder::RemoteEmbedder(llm::Backend& backend, std::string tag)
    : backend_(&backend), tag_(std::move(tag)) {}

EmbeddingVector RemoteEmbedder::embed(const std::string& text) const {
  auto vectors = llm::embed_remote(*backend_, {text});
  return std::move(vectors.front());
}

std::string remote_embedder_tag(const AppConfig& config) {
  const std::string route =
      config.backend.base_url.empty() ? "scripted:" + config.backend.scripted_spec_path : config.backend.base_url;
  return "remote-" + text::hex64(text::fnv1a64(route + "\n" + config.backend.embedding_model_id));
}

VectorIndex build_index_for(const std::vector<Chunk>& chunks, const AppConfig& config, llm::Backend* backend) {
  if (config.retrieval.embedder == "remote") {
    if (backend == nullptr) throw Error(ErrorKind::kConfigError, "remote embedder needs a backend");
    return build_index(chunks, RemoteEmbedder(*backend, remote_embedder_tag(config)));
  }
  return build_index(chunks, TfIdfEmbedder(fit_tfidf(chunks)));
}

VectorIndex build_index_from_config(const AppConfig& config, llm::Backend* backend) {
  const auto chunks = read_chunks(config.corpus.chunks_path);
  auto index = build_index_for(chunks, config, backend);
  ensure_parent(config.retrieval.index_path);
  save_index(index, config.retrieval.index_path);
  return index;
}

agent::AnswerConfig answer_config(const AppConfig& config) {
  agent::AnswerConfig a;
  a.k = config.retrieval.k;
  a.min_score = config.retrieval.min_score;
  a.session_tag = config.retrieval.session_tag;
  a.filter_by_session = config.retrieval.filter_by_session;
  a.model_id = config.backend.model_id;
  a.temperature = config.backend.temperature;
  a.max_tokens = config.backend.max_tokens;
  return a;
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(AppConfig config, std::unique_ptr<llm::Backend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
  templates_ = config_.templates_path.empty() ? agent::PromptTemplates::defaults()
                                              : agent::PromptTemplates::load(config_.templates_path);
  templates_.validate();
  set_index(load_index(config_.retrieval.index_path));
  ensure_parent(config_.logs.turn_log);
  log_ = std::make_unique<agent::JsonlTurnLog>(config_.logs.turn_log);
}

std::unique_ptr<Engine> Engine::from_config(const AppConfig& config) {
  return std::make_unique<Engine>(config, make_backend(config));
}

void Engine::set_index(VectorIndex index) {
  std::unique_ptr<Embedder> embedder = tfidf_embedder_for(index);
  if (!embedder) embedder = std::make_unique<RemoteEmbedder>(*backend_, index.embedder_tag);
  index_ = std::make_unique<VectorIndex>(std::move(index));
  embedder_ = std::move(embedder);
}

agent::AgentTurn Engine::answer(const std::string& session_id, const std::string& query,
                                std::function<void(const agent::AgentTurn&)> after_persist) {
  const agent::AnswerContext ctx{*index_, *embedder_, *backend_, templates_, *log_, std::move(after_persist)};
  return agent::answer_query(session_id, query, ctx, answer_config(config_));
}

// ---------------------------------------------------------------------------
// Replay

std::vector<Transcript> load_transcripts(const std::string& path) {
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidationError, path + ": " + e.what());
  }
  if (j.is_object() && j.contains("transcripts")) j = j["transcripts"];
  if (!j.is_array()) throw Error(ErrorKind::kValidationError, path + ": expected an array of transcripts");
  std::vector<Transcript> out;
  for (const auto& t : j) {
    try {
      out.push_back({t.at("query").get<std::string>(), t.at("therapist_draft").get<std::string>(),
                     t.at("supervisor_raw").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kValidationError, path + ": transcript " + std::to_string(out.size()) + ": " + e.what());
    }
  }
  return out;
}

llm::ScriptedBackendSpec build_replay_spec(const std::vector<Transcript>& transcripts, const VectorIndex& index,
                                           const Embedder& embedder, const agent::PromptTemplates& templates,
                                           const agent::AnswerConfig& config) {
  llm::ScriptedBackendSpec spec;
  spec.mode = llm::ScriptedBackendSpec::Mode::kMap;
  for (const auto& t : transcripts) {
    const auto hits = search(index, embedder, t.query, config.k, config.min_score);
    if (hits.empty()) throw Error(ErrorKind::kNotFound, "no context retrieved for query: " + t.query);
    spec.entries[llm::fingerprint(agent::build_therapist_prompt(t.query, hits, templates, config.session_tag))] =
        t.therapist_draft;
    spec.entries[llm::fingerprint(agent::build_supervisor_prompt(t.query, t.therapist_draft, hits, templates))] =
        t.supervisor_raw;
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<eval::BlindPresentation> build_presentations(const std::vector<eval::Trial>& trials,
                                                         const AppConfig& config) {
  std::map<std::string, const eval::Trial*> by_id;
  for (const auto& t : trials) by_id[t.trial_id] = &t;
  std::vector<eval::BlindPresentation> out;
  for (const auto& [rater, ids] : eval::assign_raters(trials, config.eval.raters, config.eval.trials_per_rater)) {
    std::vector<eval::Trial> assigned;
    for (const auto& id : ids) assigned.push_back(*by_id.at(id));
    auto items = eval::blind_shuffle(assigned, rater, config.eval.seed);
    out.insert(out.end(), std::make_move_iterator(items.begin()), std::make_move_iterator(items.end()));
  }
  return out;
}

void write_presentations(const std::string& path, const std::vector<eval::BlindPresentation>& items) {
  std::string out;
  for (const auto& p : items) out += eval::to_json(p).dump() + "\n";
  ensure_parent(path);
  text::write_file(path, out);
}

std::vector<eval::BlindPresentation> read_presentations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot read presentations " + path);
  std::vector<eval::BlindPresentation> out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(eval::presentation_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kValidationError, path + ": " + e.what());
    }
  }
  return out;
}

json NextItem::to_json() const {
  json j = {{"done", !presentation.has_value()},
            {"progress", {{"trials_done", trials_done}, {"trials_total", trials_total}}}};
  if (presentation) {
    j["presentation"] = eval::rater_view(*presentation);
    j["rated_positions"] = rated_positions;
  }
  return j;
}

NextItem next_item(const std::vector<eval::BlindPresentation>& presentations, const eval::RatingStore& store,
                   const std::string& rater_id) {
  NextItem item;
  for (const auto& p : presentations) {
    if (p.rater_id != rater_id) continue;
    ++item.trials_total;
    std::vector<int> rated;
    for (int pos = 0; pos < 3; ++pos) {
      if (store.contains(p.trial_id, rater_id, pos)) rated.push_back(pos);
    }
    if (rated.size() == 3) {
      ++item.trials_done;
    } else if (!item.presentation) {
      item.presentation = p;
      item.rated_positions = rated;
    }
  }
  if (item.trials_total == 0) throw Error(ErrorKind::kNotFound, "no presentations for rater " + rater_id);
  return item;
}

eval::Rating submit_rating(const std::vector<eval::BlindPresentation>& presentations,
                           const std::vector<eval::Trial>& trials, const std::string& trial_id,
                           const std::string& rater_id, int position, int score, eval::RatingStore& store) {
  const eval::Trial* trial = nullptr;
  for (const auto& t : trials) {
    if (t.trial_id == trial_id) trial = &t;
  }
  if (trial == nullptr) throw Error(ErrorKind::kNotFound, "unknown trial " + trial_id);
  for (const auto& p : presentations) {
    if (p.trial_id == trial_id && p.rater_id == rater_id) {
      return eval::record_rating(p, *trial, position, score, rater_id, store);
    }
  }
  throw Error(ErrorKind::kNotFound, "trial " + trial_id + " is not assigned to rater " + rater_id);
}

}  // namespace coached::app
