#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace coached {

// Free-form key/value wrapper; always a JSON object. std::map ordering keeps
// serialization deterministic.
using Metadata = nlohmann::json;

enum class DocumentFormat { kPlain, kMarkdown, kStructuredRecord };

std::string_view to_string(DocumentFormat format);
DocumentFormat parse_document_format(std::string_view name);

struct SourceDocument {
  std::string doc_id;
  std::string title;
  std::string body;
  DocumentFormat format = DocumentFormat::kPlain;
  Metadata provenance = Metadata::object();
};

enum class ChunkStrategy { kFixedSize, kRecursive, kDocumentSpecific, kSemantic };

std::string_view to_string(ChunkStrategy strategy);
ChunkStrategy parse_chunk_strategy(std::string_view name);

struct ChunkingPolicy {
  ChunkStrategy strategy = ChunkStrategy::kFixedSize;
  std::size_t target_chars = 1000;
  std::size_t overlap_chars = 200;
  std::vector<std::string> separators{"\n\n", "\n", " "};
  double boundary_similarity_quantile = 0.25;
  std::size_t min_chunk_chars = 100;

  // Throws Error(kInvalidPolicy).
  void validate() const;
};

// Half-open interval of code point offsets into SourceDocument::body.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct Chunk {
  std::string chunk_id;
  std::string doc_id;
  std::size_t ordinal = 0;
  std::string text;
  Span span;
  Metadata metadata = Metadata::object();
};

using SentenceEmbedder = std::function<std::vector<double>(const std::string&)>;

/// Canonicalizes line endings and whitespace, rejoins "exam-\nple" style
/// hyphenation (lowercase on both sides only) and drops form feeds.
///
/// doc_id and title are taken from provenance when present; otherwise doc_id
/// is derived from a content hash and the title from the first heading or
/// line. Throws Error(kEmptyDocument) when nothing survives.
SourceDocument normalize_document(std::string_view raw, DocumentFormat format,
                                  const Metadata& provenance = Metadata::object());

std::vector<Chunk> chunk_fixed(const SourceDocument& doc, const ChunkingPolicy& policy);
std::vector<Chunk> chunk_recursive(const SourceDocument& doc, const ChunkingPolicy& policy);
std::vector<Chunk> chunk_structural(const SourceDocument& doc, const ChunkingPolicy& policy);
std::vector<Chunk> chunk_semantic(const SourceDocument& doc, const ChunkingPolicy& policy,
                                  const SentenceEmbedder& embed);

// Dispatches on policy.strategy. Semantic chunking needs an embedder; when
// none is given a TF-IDF model fitted on the document's own sentences is used.
std::vector<Chunk> chunk_document(const SourceDocument& doc, const ChunkingPolicy& policy,
                                  const SentenceEmbedder& embed = nullptr);

// Merges title, strategy, section path and document provenance into the
// chunk metadata; `extra` wins on key collisions.
Chunk wrap_metadata(Chunk chunk, const SourceDocument& doc,
                    const Metadata& extra = Metadata::object());

// Sentence spans (code points): a terminator .?! followed by whitespace ends a
// sentence; the trailing whitespace stays with the sentence it follows.
std::vector<Span> split_sentences(std::u32string_view body);

nlohmann::json to_json(const SourceDocument& doc);
SourceDocument document_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Chunk& chunk);
Chunk chunk_from_json(const nlohmann::json& j);

// Line-delimited JSON. Structured-record inputs go through normalize_document.
std::vector<SourceDocument> read_record_file(const std::string& path);
void write_documents(const std::string& path, const std::vector<SourceDocument>& docs);
void write_chunks(const std::string& path, const std::vector<Chunk>& chunks);
std::vector<Chunk> read_chunks(const std::string& path);

}  // namespace coached
