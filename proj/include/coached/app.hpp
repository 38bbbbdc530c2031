#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coached/agent.hpp"
#include "coached/config.hpp"
#include "coached/eval.hpp"
#include "coached/llm.hpp"
#include "coached/retrieval.hpp"

// Workflows shared by the command line, the HTTP service and the Python module.
namespace coached::app {

// .md/.markdown -> markdown, .jsonl/.json -> structured records, else plain.
DocumentFormat format_for_path(const std::string& path);

struct IngestSummary {
  std::size_t documents = 0;
  std::size_t chunks = 0;
  double mean_chunk_chars = 0.0;
  std::vector<std::string> succeeded;
  std::vector<std::pair<std::string, std::string>> failed;  // path, message

  nlohmann::json to_json() const;
};

// Normalizes and chunks every readable input; per-file failures are
// collected, not thrown. Writes the document and chunk files from `config`.
IngestSummary ingest_paths(const AppConfig& config, const std::vector<std::string>& paths);

// Chunks documents that are already in memory.
std::vector<Chunk> chunk_documents(const std::vector<SourceDocument>& docs, const ChunkingPolicy& policy);

std::unique_ptr<llm::Backend> make_backend(const AppConfig& config);

// Embeds through a backend's embedding endpoint, one text per call.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(llm::Backend& backend, std::string tag);
  std::string tag() const override { return tag_; }
  EmbeddingVector embed(const std::string& text) const override;

 private:
  llm::Backend* backend_;
  std::string tag_;
};

std::string remote_embedder_tag(const AppConfig& config);

// TF-IDF fitted on the chunks, or the remote embedder when configured.
VectorIndex build_index_for(const std::vector<Chunk>& chunks, const AppConfig& config,
                            llm::Backend* backend);

// Reads the chunk file, builds and saves the index.
VectorIndex build_index_from_config(const AppConfig& config, llm::Backend* backend);

agent::AnswerConfig answer_config(const AppConfig& config);

// Everything answer_query needs, loaded from configuration.
class Engine {
 public:
  Engine(AppConfig config, std::unique_ptr<llm::Backend> backend);
  static std::unique_ptr<Engine> from_config(const AppConfig& config);

  const AppConfig& config() const { return config_; }
  const VectorIndex& index() const { return *index_; }
  const Embedder& embedder() const { return *embedder_; }
  llm::Backend& backend() { return *backend_; }
  const agent::PromptTemplates& templates() const { return templates_; }
  agent::JsonlTurnLog& log() { return *log_; }

  // Replaces the index (and its embedder).
  void set_index(VectorIndex index);

  agent::AgentTurn answer(const std::string& session_id, const std::string& query,
                          std::function<void(const agent::AgentTurn&)> after_persist = nullptr);

 private:
  AppConfig config_;
  std::unique_ptr<llm::Backend> backend_;
  std::unique_ptr<VectorIndex> index_;
  std::unique_ptr<Embedder> embedder_;
  agent::PromptTemplates templates_;
  std::unique_ptr<agent::JsonlTurnLog> log_;
};

// A recorded exchange: the query, what the Therapist drafted, and what the
// Supervisor said.
struct Transcript {
  std::string query;
  std::string therapist_draft;
  std::string supervisor_raw;
};

std::vector<Transcript> load_transcripts(const std::string& path);

// Fingerprint-map script that reproduces the transcripts against `index`.
// Throws Error(kNotFound) when a query retrieves nothing.
llm::ScriptedBackendSpec build_replay_spec(const std::vector<Transcript>& transcripts,
                                           const VectorIndex& index, const Embedder& embedder,
                                           const agent::PromptTemplates& templates,
                                           const agent::AnswerConfig& config);

// ---------------------------------------------------------------------------
// Evaluation workflows

// Assigns trials to raters and writes each rater's presentations.
std::vector<eval::BlindPresentation> build_presentations(const std::vector<eval::Trial>& trials,
                                                         const AppConfig& config);
void write_presentations(const std::string& path, const std::vector<eval::BlindPresentation>& items);
std::vector<eval::BlindPresentation> read_presentations(const std::string& path);

struct NextItem {
  std::optional<eval::BlindPresentation> presentation;
  std::vector<int> rated_positions;
  std::size_t trials_done = 0;
  std::size_t trials_total = 0;

  // Rater-safe: no permutation, no sources.
  nlohmann::json to_json() const;
};

// First assigned trial with an unrated position. Throws Error(kNotFound) for
// a rater with no presentations.
NextItem next_item(const std::vector<eval::BlindPresentation>& presentations,
                   const eval::RatingStore& store, const std::string& rater_id);

// Throws Error(kNotFound) for an unknown trial or unassigned rater.
eval::Rating submit_rating(const std::vector<eval::BlindPresentation>& presentations,
                           const std::vector<eval::Trial>& trials, const std::string& trial_id,
                           const std::string& rater_id, int position, int score,
                           eval::RatingStore& store);

}  // namespace coached::app
