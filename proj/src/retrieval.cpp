#include "coached/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "coached/error.hpp"
#include "coached/text.hpp"

namespace coached {

double l2_norm(const EmbeddingVector& v) {
  double sum = 0.0;
  for (double x : v.values) sum += x * x;
  return std::sqrt(sum);
}

EmbeddingVector normalized(EmbeddingVector v) {
  const double norm = l2_norm(v);
  if (norm > 0.0) {
    for (double& x : v.values) x /= norm;
  }
  v.normalized = true;
  return v;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorKind::kDimMismatch,
                std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// TF-IDF

std::string TfIdfModel::tag() const {
  std::uint64_t h = text::fnv1a64(tokenizer_config);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    h = text::fnv1a64(terms[i], h);
    h = text::fnv1a64(std::string_view("\0", 1), h);
    std::uint64_t bits = 0;
    std::memcpy(&bits, &idf[i], sizeof(bits));
    h = text::fnv1a64(std::string_view(reinterpret_cast<const char*>(&bits), sizeof(bits)), h);
  }
  return "tfidf-" + text::hex64(h);
}

TfIdfModel fit_tfidf(const std::vector<std::string>& texts) {
  std::map<std::string, std::size_t> df;
  for (const auto& t : texts) {
    const auto tokens = text::tokenize(t);
    const std::set<std::string> distinct(tokens.begin(), tokens.end());
    for (const auto& term : distinct) ++df[term];
  }
  if (df.empty()) throw Error(ErrorKind::kEmptyCorpus, "no tokens in corpus");

  TfIdfModel model;
  model.corpus_size = texts.size();
  model.tokenizer_config = std::string(text::kTokenizerConfig);
  const double n = static_cast<double>(model.corpus_size);
  for (const auto& [term, count] : df) {
    model.vocabulary.emplace(term, model.terms.size());
    model.terms.push_back(term);
    model.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  return model;
}

TfIdfModel fit_tfidf(const std::vector<Chunk>& chunks) {
  std::vector<std::string> texts;
  texts.reserve(chunks.size());
  for (const auto& c : chunks) texts.push_back(c.text);
  return fit_tfidf(texts);
}

EmbeddingVector embed_tfidf(const TfIdfModel& model, const std::string& text) {
  EmbeddingVector v;
  v.values.assign(model.dim(), 0.0);
  std::vector<double> counts(model.dim(), 0.0);
  for (const auto& token : text::tokenize(text)) {
    if (auto it = model.vocabulary.find(token); it != model.vocabulary.end()) {
      counts[it->second] += 1.0;
    }
  }
  for (std::size_t i = 0; i < counts.size(); ++i) v.values[i] = counts[i] * model.idf[i];
  return normalized(std::move(v));
}

TfIdfEmbedder::TfIdfEmbedder(TfIdfModel model) : model_(std::move(model)), tag_(model_.tag()) {}

EmbeddingVector TfIdfEmbedder::embed(const std::string& text) const {
  return embed_tfidf(model_, text);
}

// ---------------------------------------------------------------------------
// Index

VectorIndex build_index(const std::vector<Chunk>& chunks, const Embedder& embedder) {
  if (chunks.empty()) throw Error(ErrorKind::kEmptyCorpus, "no chunks to index");
  VectorIndex index;
  index.embedder_tag = embedder.tag();
  if (const auto* tfidf = dynamic_cast<const TfIdfEmbedder*>(&embedder)) {
    index.tfidf = tfidf->model();
  }
  std::set<std::string> seen;
  for (const auto& chunk : chunks) {
    if (!seen.insert(chunk.chunk_id).second) {
      throw Error(ErrorKind::kBuildFailed, "duplicate chunk_id " + chunk.chunk_id);
    }
    IndexEntry entry;
    entry.chunk_id = chunk.chunk_id;
    try {
      entry.vector = embedder.embed(chunk.text);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kBuildFailed, "embedding " + chunk.chunk_id + ": " + e.what());
    }
    if (!index.entries.empty() && entry.vector.dim() != index.dim()) {
      throw Error(ErrorKind::kBuildFailed, "dimension changed at " + chunk.chunk_id);
    }
    entry.metadata = chunk.metadata;
    entry.text = chunk.text;
    index.entries.push_back(std::move(entry));
  }
  return index;
}

std::vector<RetrievalHit> search(const VectorIndex& index, const Embedder& embedder,
                                 const std::string& query, std::size_t k, double min_score) {
  if (embedder.tag() != index.embedder_tag) {
    throw Error(ErrorKind::kStaleIndex,
                "index built with " + index.embedder_tag + ", query embedder is " + embedder.tag());
  }
  if (k == 0 || index.entries.empty()) return {};
  const EmbeddingVector q = embedder.embed(query);

  struct Scored {
    double score;
    const IndexEntry* entry;
  };
  std::vector<Scored> scored;
  scored.reserve(index.entries.size());
  for (const auto& entry : index.entries) {
    const double s = cosine(q, entry.vector);
    if (s >= min_score) scored.push_back({s, &entry});
  }
  const auto better = [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entry->chunk_id < b.entry->chunk_id;
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), better);

  std::vector<RetrievalHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    hits.push_back({scored[i].entry->chunk_id, scored[i].score, scored[i].entry->text,
                    scored[i].entry->metadata});
  }
  return hits;
}

std::unique_ptr<Embedder> tfidf_embedder_for(const VectorIndex& index) {
  if (!index.tfidf) return nullptr;
  return std::make_unique<TfIdfEmbedder>(*index.tfidf);
}

// ---------------------------------------------------------------------------
// Persistence

std::string serialize_index(const VectorIndex& index) {
  nlohmann::json header = {{"version", index.version},
                           {"embedder_tag", index.embedder_tag},
                           {"dim", index.dim()},
                           {"count", index.entries.size()}};
  if (index.tfidf) {
    header["tfidf"] = {{"terms", index.tfidf->terms},
                       {"idf", index.tfidf->idf},
                       {"corpus_size", index.tfidf->corpus_size},
                       {"tokenizer_config", index.tfidf->tokenizer_config}};
  }
  std::string out = header.dump() + "\n";
  for (const auto& e : index.entries) {
    nlohmann::json j = {{"chunk_id", e.chunk_id},
                        {"vector", e.vector.values},
                        {"normalized", e.vector.normalized},
                        {"metadata", e.metadata},
                        {"text", e.text}};
    out += j.dump() + "\n";
  }
  return out;
}

VectorIndex parse_index(const std::string& contents) {
  std::istringstream in(contents);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kCorruptIndex, "missing header");

  VectorIndex index;
  std::size_t expected = 0;
  std::size_t dim = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    index.version = header.at("version").get<int>();
    if (index.version != VectorIndex::kFormatVersion) {
      throw Error(ErrorKind::kUnsupportedVersion,
                  "index format version " + std::to_string(index.version));
    }
    index.embedder_tag = header.at("embedder_tag").get<std::string>();
    dim = header.at("dim").get<std::size_t>();
    expected = header.at("count").get<std::size_t>();
    if (header.contains("tfidf") && !header.at("tfidf").is_null()) {
      const auto& t = header.at("tfidf");
      TfIdfModel model;
      model.terms = t.at("terms").get<std::vector<std::string>>();
      model.idf = t.at("idf").get<std::vector<double>>();
      model.corpus_size = t.at("corpus_size").get<std::size_t>();
      model.tokenizer_config = t.at("tokenizer_config").get<std::string>();
      if (model.terms.size() != model.idf.size()) {
        throw Error(ErrorKind::kCorruptIndex, "tfidf terms/idf length mismatch");
      }
      for (std::size_t i = 0; i < model.terms.size(); ++i) model.vocabulary[model.terms[i]] = i;
      index.tfidf = std::move(model);
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (in.eof() && !contents.empty() && contents.back() != '\n') {
        throw Error(ErrorKind::kCorruptIndex, "truncated record at line " + std::to_string(line_no));
      }
      const auto j = nlohmann::json::parse(line);
      IndexEntry e;
      e.chunk_id = j.at("chunk_id").get<std::string>();
      e.vector.values = j.at("vector").get<std::vector<double>>();
      e.vector.normalized = j.at("normalized").get<bool>();
      e.metadata = j.at("metadata");
      e.text = j.at("text").get<std::string>();
      if (e.vector.dim() != dim) {
        throw Error(ErrorKind::kCorruptIndex, "vector dim mismatch at line " + std::to_string(line_no));
      }
      index.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kCorruptIndex, e.what());
  }
  if (index.entries.size() != expected) {
    throw Error(ErrorKind::kCorruptIndex, "expected " + std::to_string(expected) + " entries, found " +
                                              std::to_string(index.entries.size()));
  }
  if (index.tfidf && index.tfidf->tag() != index.embedder_tag) {
    throw Error(ErrorKind::kCorruptIndex, "tfidf model does not match embedder_tag");
  }
  return index;
}

void save_index(const VectorIndex& index, const std::string& path) {
  text::write_file(path, serialize_index(index));
}

VectorIndex load_index(const std::string& path) { return parse_index(text::read_file(path)); }

nlohmann::json to_json(const RetrievalHit& hit) {
  return {{"chunk_id", hit.chunk_id},
          {"score", hit.score},
          {"text", hit.text},
          {"metadata", hit.metadata}};
}

}  // namespace coached
