#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "coached/corpus.hpp"
#include "coached/embedding.hpp"

namespace coached {

struct TfIdfModel {
  // Terms sorted lexicographically; a term's column is its position here.
  std::vector<std::string> terms;
  std::unordered_map<std::string, std::size_t> vocabulary;
  // idf(t) = ln((1 + N) / (1 + df(t))) + 1
  std::vector<double> idf;
  std::size_t corpus_size = 0;
  std::string tokenizer_config;

  std::size_t dim() const { return terms.size(); }
  // Stable content hash over terms, idf bits and tokenizer config.
  std::string tag() const;
};

// Throws Error(kEmptyCorpus) when no input carries a single token.
TfIdfModel fit_tfidf(const std::vector<std::string>& texts);
TfIdfModel fit_tfidf(const std::vector<Chunk>& chunks);

// Raw counts times idf, L2-normalized; out-of-vocabulary tokens are ignored.
EmbeddingVector embed_tfidf(const TfIdfModel& model, const std::string& text);

class TfIdfEmbedder final : public Embedder {
 public:
  explicit TfIdfEmbedder(TfIdfModel model);
  std::string tag() const override { return tag_; }
  EmbeddingVector embed(const std::string& text) const override;
  const TfIdfModel& model() const { return model_; }

 private:
  TfIdfModel model_;
  std::string tag_;
};

struct IndexEntry {
  std::string chunk_id;
  EmbeddingVector vector;
  Metadata metadata = Metadata::object();
  std::string text;

  friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

struct VectorIndex {
  static constexpr int kFormatVersion = 1;

  std::vector<IndexEntry> entries;
  std::string embedder_tag;
  int version = kFormatVersion;
  // Persisted alongside the entries so a loaded index can embed queries.
  std::optional<TfIdfModel> tfidf;

  std::size_t dim() const { return entries.empty() ? 0 : entries.front().vector.dim(); }
};

struct RetrievalHit {
  std::string chunk_id;
  double score = 0.0;
  std::string text;
  Metadata metadata = Metadata::object();
};

inline constexpr double kDefaultMinScore = 0.05;

// Throws Error(kBuildFailed) on duplicate chunk ids, embedder failure or
// inconsistent dims, and Error(kEmptyCorpus) for an empty chunk list.
VectorIndex build_index(const std::vector<Chunk>& chunks, const Embedder& embedder);

// Exact scan. Hits with score >= min_score, ordered by (score desc,
// chunk_id asc), at most k of them. Throws Error(kStaleIndex) when the
// embedder tag differs from the index's.
std::vector<RetrievalHit> search(const VectorIndex& index, const Embedder& embedder,
                                 const std::string& query, std::size_t k,
                                 double min_score = kDefaultMinScore);

// Embedder reconstructed from the index's persisted TF-IDF model; null for
// indexes built with a remote embedder.
std::unique_ptr<Embedder> tfidf_embedder_for(const VectorIndex& index);

void save_index(const VectorIndex& index, const std::string& path);
VectorIndex load_index(const std::string& path);
std::string serialize_index(const VectorIndex& index);
VectorIndex parse_index(const std::string& contents);

nlohmann::json to_json(const RetrievalHit& hit);

}  // namespace coached
