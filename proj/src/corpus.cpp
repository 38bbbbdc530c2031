#include "coached/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>

#include "coached/error.hpp"
#include "coached/retrieval.hpp"
#include "coached/text.hpp"

namespace coached {

std::string_view to_string(DocumentFormat format) {
  switch (format) {
    case DocumentFormat::kPlain: return "plain";
    case DocumentFormat::kMarkdown: return "markdown";
    case DocumentFormat::kStructuredRecord: return "structured-record";
  }
  return "plain";
}

DocumentFormat parse_document_format(std::string_view name) {
  if (name == "plain" || name == "text") return DocumentFormat::kPlain;
  if (name == "markdown" || name == "md") return DocumentFormat::kMarkdown;
  if (name == "structured-record" || name == "record") return DocumentFormat::kStructuredRecord;
  throw Error(ErrorKind::kValidationError, "unknown document format '" + std::string(name) + "'");
}

std::string_view to_string(ChunkStrategy strategy) {
  switch (strategy) {
    case ChunkStrategy::kFixedSize: return "fixed";
    case ChunkStrategy::kRecursive: return "recursive";
    case ChunkStrategy::kDocumentSpecific: return "structural";
    case ChunkStrategy::kSemantic: return "semantic";
  }
  return "fixed";
}

ChunkStrategy parse_chunk_strategy(std::string_view name) {
  if (name == "fixed" || name == "FixedSize") return ChunkStrategy::kFixedSize;
  if (name == "recursive" || name == "Recursive") return ChunkStrategy::kRecursive;
  if (name == "structural" || name == "DocumentSpecific") return ChunkStrategy::kDocumentSpecific;
  if (name == "semantic" || name == "Semantic") return ChunkStrategy::kSemantic;
  throw Error(ErrorKind::kInvalidPolicy, "unknown chunking strategy '" + std::string(name) + "'");
}

void ChunkingPolicy::validate() const {
  if (target_chars == 0) throw Error(ErrorKind::kInvalidPolicy, "target_chars must be positive");
  if (overlap_chars >= target_chars) {
    throw Error(ErrorKind::kInvalidPolicy, "overlap_chars must be smaller than target_chars");
  }
  if (min_chunk_chars == 0 || min_chunk_chars > target_chars) {
    throw Error(ErrorKind::kInvalidPolicy, "min_chunk_chars must be in [1, target_chars]");
  }
  if (!(boundary_similarity_quantile > 0.0 && boundary_similarity_quantile < 1.0)) {
    throw Error(ErrorKind::kInvalidPolicy, "boundary_similarity_quantile must be in (0,1)");
  }
  if (strategy == ChunkStrategy::kRecursive && separators.empty()) {
    throw Error(ErrorKind::kInvalidPolicy, "recursive chunking needs at least one separator");
  }
  for (const auto& sep : separators) {
    if (sep.empty()) throw Error(ErrorKind::kInvalidPolicy, "empty separator");
  }
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

bool is_horizontal_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\v' || cp == 0x00A0 || cp == 0x2007 ||
         cp == 0x202F || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x3000;
}

std::vector<std::u32string> canonical_lines(std::u32string_view raw) {
  std::vector<std::u32string> lines(1);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    char32_t cp = raw[i];
    if (cp == U'\r') {
      if (i + 1 < raw.size() && raw[i + 1] == U'\n') ++i;
      lines.emplace_back();
      continue;
    }
    if (cp == U'\n') {
      lines.emplace_back();
      continue;
    }
    if (is_horizontal_space(cp)) {
      lines.back().push_back(U' ');
      continue;
    }
    // form feeds, other controls and BOMs disappear
    if (cp < 0x20 || cp == 0x7F || cp == 0xFEFF) continue;
    lines.back().push_back(cp);
  }

  for (auto& line : lines) {
    std::size_t indent = 0;
    while (indent < line.size() && line[indent] == U' ') ++indent;
    std::u32string out = line.substr(0, indent);
    bool prev_space = false;
    for (std::size_t i = indent; i < line.size(); ++i) {
      if (line[i] == U' ') {
        if (!prev_space) out.push_back(U' ');
        prev_space = true;
      } else {
        out.push_back(line[i]);
        prev_space = false;
      }
    }
    while (!out.empty() && out.back() == U' ') out.pop_back();
    line = std::move(out);
  }
  return lines;
}

void rejoin_hyphenation(std::vector<std::u32string>& lines) {
  std::vector<std::u32string> out;
  out.reserve(lines.size());
  for (auto& line : lines) {
    if (!out.empty()) {
      auto& prev = out.back();
      const bool hyphen_break = prev.size() >= 2 && prev.back() == U'-' &&
                                text::is_lower(prev[prev.size() - 2]) && !line.empty() &&
                                text::is_lower(line.front());
      if (hyphen_break) {
        prev.pop_back();
        prev += line;
        continue;
      }
    }
    out.push_back(std::move(line));
  }
  lines = std::move(out);
}

std::string derive_title(const std::u32string& body, DocumentFormat format) {
  std::size_t pos = 0;
  std::u32string first_line;
  while (pos < body.size()) {
    std::size_t nl = body.find(U'\n', pos);
    if (nl == std::u32string::npos) nl = body.size();
    std::u32string line = body.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    if (format == DocumentFormat::kMarkdown && line.front() == U'#') {
      std::size_t i = 0;
      while (i < line.size() && line[i] == U'#') ++i;
      while (i < line.size() && line[i] == U' ') ++i;
      if (i < line.size()) return text::encode_utf8(line.substr(i));
    }
    if (first_line.empty()) first_line = line;
    if (format != DocumentFormat::kMarkdown) break;
  }
  if (first_line.size() > 80) first_line.resize(80);
  return text::trim(text::encode_utf8(first_line));
}

}  // namespace

SourceDocument normalize_document(std::string_view raw, DocumentFormat format,
                                  const Metadata& provenance) {
  auto lines = canonical_lines(text::decode_utf8(raw));
  rejoin_hyphenation(lines);

  std::u32string body;
  bool previous_blank = true;  // suppresses leading blank lines
  for (const auto& line : lines) {
    const bool blank = line.empty();
    if (blank && previous_blank) continue;
    body += line;
    body.push_back(U'\n');
    previous_blank = blank;
  }
  while (!body.empty() && body.back() == U'\n') body.pop_back();
  if (body.empty()) throw Error(ErrorKind::kEmptyDocument, "document is empty after normalization");

  SourceDocument doc;
  doc.body = text::encode_utf8(body);
  doc.format = format;
  doc.provenance = provenance.is_object() ? provenance : Metadata::object();
  if (auto it = doc.provenance.find("doc_id"); it != doc.provenance.end() && it->is_string()) {
    doc.doc_id = it->get<std::string>();
  } else {
    doc.doc_id = "doc-" + text::hex64(text::fnv1a64(doc.body));
  }
  if (auto it = doc.provenance.find("title"); it != doc.provenance.end() && it->is_string()) {
    doc.title = it->get<std::string>();
  } else {
    doc.title = derive_title(body, format);
  }
  doc.provenance.erase("doc_id");
  doc.provenance.erase("title");
  return doc;
}

// ---------------------------------------------------------------------------
// Chunking

namespace {

struct Piece {
  Span span;
  bool window = false;  // produced by the fixed-window fallback; never merged
};

std::string make_chunk_id(const std::string& doc_id, std::size_t ordinal) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05zu", ordinal);
  return doc_id + "#" + buf;
}

class ChunkBuilder {
 public:
  ChunkBuilder(const SourceDocument& doc, ChunkStrategy strategy)
      : doc_(doc), body_(text::decode_utf8(doc.body)), strategy_(strategy) {}

  const std::u32string& body() const { return body_; }

  void add(Span span, const std::vector<std::string>& section_path = {}) {
    Chunk chunk;
    chunk.doc_id = doc_.doc_id;
    chunk.ordinal = chunks_.size();
    chunk.chunk_id = make_chunk_id(doc_.doc_id, chunk.ordinal);
    chunk.span = span;
    chunk.text = text::encode_utf8(std::u32string_view(body_).substr(span.start, span.size()));
    chunk.metadata = Metadata::object();
    chunk.metadata["strategy"] = std::string(to_string(strategy_));
    chunk.metadata["section_path"] = section_path;
    chunks_.push_back(wrap_metadata(std::move(chunk), doc_));
  }

  std::vector<Chunk> finish() { return std::move(chunks_); }

 private:
  const SourceDocument& doc_;
  std::u32string body_;
  ChunkStrategy strategy_;
  std::vector<Chunk> chunks_;
};

std::vector<Span> fixed_windows(std::size_t begin, std::size_t end, std::size_t target,
                                std::size_t overlap) {
  std::vector<Span> spans;
  if (end <= begin) return spans;
  const std::size_t stride = target - overlap;
  std::size_t start = begin;
  while (true) {
    const std::size_t stop = std::min(start + target, end);
    spans.push_back({start, stop});
    if (stop == end) break;
    start += stride;
  }
  return spans;
}

void split_recursive(const std::u32string& body, std::size_t begin, std::size_t end,
                     std::size_t level, const ChunkingPolicy& policy,
                     const std::vector<std::u32string>& separators, std::vector<Piece>& out) {
  if (end - begin <= policy.target_chars) {
    out.push_back({{begin, end}, false});
    return;
  }
  if (level == separators.size()) {
    for (const Span& s : fixed_windows(begin, end, policy.target_chars, policy.overlap_chars)) {
      out.push_back({s, true});
    }
    return;
  }
  const std::u32string& sep = separators[level];
  const std::u32string_view view(body);
  std::size_t pos = begin;
  while (pos < end) {
    std::size_t hit = view.substr(0, end).find(sep, pos);
    const std::size_t seg_end = hit == std::u32string_view::npos ? end : hit + sep.size();
    if (seg_end - pos <= policy.target_chars) {
      out.push_back({{pos, seg_end}, false});
    } else {
      split_recursive(body, pos, seg_end, level + 1, policy, separators, out);
    }
    pos = seg_end;
  }
}

std::vector<Span> recursive_spans(const std::u32string& body, std::size_t begin, std::size_t end,
                                  const ChunkingPolicy& policy) {
  std::vector<std::u32string> separators;
  for (const auto& s : policy.separators) separators.push_back(text::decode_utf8(s));
  if (separators.empty()) separators = {U"\n\n", U"\n", U" "};

  std::vector<Piece> pieces;
  split_recursive(body, begin, end, 0, policy, separators, pieces);

  std::vector<Span> merged;
  std::optional<Span> current;
  for (const Piece& piece : pieces) {
    if (piece.window) {
      if (current) merged.push_back(*current);
      current.reset();
      merged.push_back(piece.span);
      continue;
    }
    if (!current) {
      current = piece.span;
    } else if (piece.span.end - current->start <= policy.target_chars) {
      current->end = piece.span.end;
    } else {
      merged.push_back(*current);
      current = piece.span;
    }
  }
  if (current) merged.push_back(*current);
  return merged;
}

bool tiny(const std::u32string& body, const ChunkingPolicy& policy) {
  return body.size() < policy.min_chunk_chars;
}

struct Section {
  std::size_t start;
  std::vector<std::string> path;
};

std::vector<Section> markdown_sections(const std::u32string& body) {
  std::vector<Section> sections;
  std::vector<std::string> stack;
  bool in_fence = false;
  std::size_t pos = 0;
  while (pos < body.size()) {
    std::size_t nl = body.find(U'\n', pos);
    if (nl == std::u32string::npos) nl = body.size();
    const std::u32string_view line(body.data() + pos, nl - pos);
    if (line.substr(0, 3) == U"```" || line.substr(0, 3) == U"~~~") {
      in_fence = !in_fence;
    } else if (!in_fence && !line.empty() && line.front() == U'#') {
      std::size_t level = 0;
      while (level < line.size() && line[level] == U'#') ++level;
      if (level <= 3 && level < line.size() && line[level] == U' ') {
        std::u32string heading(line.substr(level + 1));
        while (!heading.empty() && (heading.back() == U'#' || heading.back() == U' ')) {
          heading.pop_back();
        }
        std::string name = text::trim(text::encode_utf8(heading));
        if (stack.size() >= level) stack.resize(level - 1);
        stack.push_back(std::move(name));
        sections.push_back({pos, stack});
      }
    }
    pos = nl + 1;
  }
  if (sections.empty() || sections.front().start > 0) {
    sections.insert(sections.begin(), Section{0, {}});
  }
  return sections;
}

double cosine_dense(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += a[i] * b[i];
  for (double v : a) na += v * v;
  for (double v : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Linear interpolation between order statistics (the common "type 7" rule).
double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

std::vector<Chunk> chunk_fixed(const SourceDocument& doc, const ChunkingPolicy& policy) {
  policy.validate();
  ChunkBuilder builder(doc, ChunkStrategy::kFixedSize);
  for (const Span& s : fixed_windows(0, builder.body().size(), policy.target_chars,
                                     policy.overlap_chars)) {
    builder.add(s);
  }
  return builder.finish();
}

std::vector<Chunk> chunk_recursive(const SourceDocument& doc, const ChunkingPolicy& policy) {
  policy.validate();
  ChunkBuilder builder(doc, ChunkStrategy::kRecursive);
  const auto& body = builder.body();
  for (const Span& s : recursive_spans(body, 0, body.size(), policy)) builder.add(s);
  return builder.finish();
}

std::vector<Chunk> chunk_structural(const SourceDocument& doc, const ChunkingPolicy& policy) {
  policy.validate();
  ChunkBuilder builder(doc, ChunkStrategy::kDocumentSpecific);
  const auto& body = builder.body();
  if (tiny(body, policy)) {
    builder.add({0, body.size()});
    return builder.finish();
  }
  std::vector<Section> sections;
  if (doc.format == DocumentFormat::kMarkdown) {
    sections = markdown_sections(body);
  } else {
    sections.push_back({0, {}});
  }
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const std::size_t start = sections[i].start;
    const std::size_t end = i + 1 < sections.size() ? sections[i + 1].start : body.size();
    if (end - start <= policy.target_chars) {
      builder.add({start, end}, sections[i].path);
    } else {
      for (const Span& s : recursive_spans(body, start, end, policy)) {
        builder.add(s, sections[i].path);
      }
    }
  }
  return builder.finish();
}

std::vector<Span> split_sentences(std::u32string_view body) {
  const auto is_ws = [](char32_t c) { return c == U' ' || c == U'\n' || c == U'\t'; };
  std::vector<Span> spans;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < body.size()) {
    const char32_t c = body[i];
    if ((c == U'.' || c == U'?' || c == U'!') && i + 1 < body.size() && is_ws(body[i + 1])) {
      std::size_t end = i + 1;
      while (end < body.size() && is_ws(body[end])) ++end;
      spans.push_back({start, end});
      start = end;
      i = end;
      continue;
    }
    ++i;
  }
  if (start < body.size()) spans.push_back({start, body.size()});
  return spans;
}

std::vector<Chunk> chunk_semantic(const SourceDocument& doc, const ChunkingPolicy& policy,
                                  const SentenceEmbedder& embed) {
  policy.validate();
  ChunkBuilder builder(doc, ChunkStrategy::kSemantic);
  const auto& body = builder.body();
  const auto sentences = split_sentences(body);
  if (tiny(body, policy) || sentences.size() < 2) {
    builder.add({0, body.size()});
    return builder.finish();
  }

  std::vector<std::vector<double>> vectors;
  vectors.reserve(sentences.size());
  for (const Span& s : sentences) {
    vectors.push_back(embed(text::trim(
        text::encode_utf8(std::u32string_view(body).substr(s.start, s.size())))));
  }
  std::vector<double> sims;
  for (std::size_t i = 0; i + 1 < vectors.size(); ++i) {
    sims.push_back(cosine_dense(vectors[i], vectors[i + 1]));
  }
  const double threshold = quantile(sims, policy.boundary_similarity_quantile);

  std::vector<Span> groups;
  Span current = sentences.front();
  for (std::size_t i = 0; i + 1 < sentences.size(); ++i) {
    if (sims[i] < threshold) {
      groups.push_back(current);
      current = sentences[i + 1];
    } else {
      current.end = sentences[i + 1].end;
    }
  }
  groups.push_back(current);

  std::vector<Span> merged;
  std::optional<Span> pending;
  for (Span g : groups) {
    if (pending) {
      g.start = pending->start;
      pending.reset();
    }
    if (g.size() < policy.min_chunk_chars) {
      pending = g;
    } else {
      merged.push_back(g);
    }
  }
  if (pending) {
    if (merged.empty()) {
      merged.push_back(*pending);
    } else {
      merged.back().end = pending->end;
    }
  }
  for (const Span& s : merged) builder.add(s);
  return builder.finish();
}

std::vector<Chunk> chunk_document(const SourceDocument& doc, const ChunkingPolicy& policy,
                                  const SentenceEmbedder& embed) {
  switch (policy.strategy) {
    case ChunkStrategy::kFixedSize: return chunk_fixed(doc, policy);
    case ChunkStrategy::kRecursive: return chunk_recursive(doc, policy);
    case ChunkStrategy::kDocumentSpecific: return chunk_structural(doc, policy);
    case ChunkStrategy::kSemantic: break;
  }
  if (embed) return chunk_semantic(doc, policy, embed);

  const auto body = text::decode_utf8(doc.body);
  std::vector<std::string> sentences;
  for (const Span& s : split_sentences(body)) {
    sentences.push_back(
        text::trim(text::encode_utf8(std::u32string_view(body).substr(s.start, s.size()))));
  }
  std::optional<TfIdfModel> model;
  try {
    model = fit_tfidf(sentences);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kEmptyCorpus) throw;
  }
  return chunk_semantic(doc, policy, [&](const std::string& sentence) {
    if (!model) return std::vector<double>{};
    return embed_tfidf(*model, sentence).values;
  });
}

Chunk wrap_metadata(Chunk chunk, const SourceDocument& doc, const Metadata& extra) {
  if (chunk.doc_id != doc.doc_id) {
    throw Error(ErrorKind::kWrongDocument,
                "chunk " + chunk.chunk_id + " belongs to " + chunk.doc_id + ", not " + doc.doc_id);
  }
  Metadata merged = doc.provenance.is_object() ? doc.provenance : Metadata::object();
  merged["doc_id"] = doc.doc_id;
  merged["title"] = doc.title;
  if (chunk.metadata.is_object()) {
    for (const auto& [key, value] : chunk.metadata.items()) merged[key] = value;
  }
  if (!merged.contains("strategy")) merged["strategy"] = "unspecified";
  if (extra.is_object()) {
    for (const auto& [key, value] : extra.items()) merged[key] = value;
  }
  chunk.metadata = std::move(merged);
  return chunk;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const SourceDocument& doc) {
  return {{"doc_id", doc.doc_id},
          {"title", doc.title},
          {"body", doc.body},
          {"format", std::string(to_string(doc.format))},
          {"metadata", doc.provenance}};
}

SourceDocument document_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kValidationError, "record is not a JSON object");
  const std::string format_name = j.value("format", std::string("structured-record"));
  Metadata provenance = j.value("metadata", Metadata::object());
  if (!provenance.is_object()) {
    throw Error(ErrorKind::kValidationError, "record metadata must be an object");
  }
  if (j.contains("doc_id")) provenance["doc_id"] = j.at("doc_id").get<std::string>();
  if (j.contains("title")) provenance["title"] = j.at("title").get<std::string>();
  if (!j.contains("body") || !j.at("body").is_string()) {
    throw Error(ErrorKind::kValidationError, "record is missing a string 'body'");
  }
  return normalize_document(j.at("body").get<std::string>(), parse_document_format(format_name),
                            provenance);
}

nlohmann::json to_json(const Chunk& chunk) {
  return {{"chunk_id", chunk.chunk_id}, {"doc_id", chunk.doc_id},
          {"ordinal", chunk.ordinal},   {"text", chunk.text},
          {"start", chunk.span.start},  {"end", chunk.span.end},
          {"metadata", chunk.metadata}};
}

Chunk chunk_from_json(const nlohmann::json& j) {
  Chunk c;
  c.chunk_id = j.at("chunk_id").get<std::string>();
  c.doc_id = j.at("doc_id").get<std::string>();
  c.ordinal = j.at("ordinal").get<std::size_t>();
  c.text = j.at("text").get<std::string>();
  c.span = {j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
  c.metadata = j.value("metadata", Metadata::object());
  return c;
}

namespace {

template <typename Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot read " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kValidationError,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    fn(j, line_no);
  }
}

}  // namespace

std::vector<SourceDocument> read_record_file(const std::string& path) {
  std::vector<SourceDocument> docs;
  std::set<std::string> seen;
  for_each_json_line(path, [&](const nlohmann::json& j, std::size_t line_no) {
    try {
      SourceDocument doc = document_from_json(j);
      if (!seen.insert(doc.doc_id).second) {
        throw Error(ErrorKind::kValidationError, "duplicate doc_id '" + doc.doc_id + "'");
      }
      docs.push_back(std::move(doc));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kValidationError,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return docs;
}

void write_documents(const std::string& path, const std::vector<SourceDocument>& docs) {
  std::string out;
  for (const auto& d : docs) out += to_json(d).dump() + "\n";
  text::write_file(path, out);
}

void write_chunks(const std::string& path, const std::vector<Chunk>& chunks) {
  std::string out;
  for (const auto& c : chunks) out += to_json(c).dump() + "\n";
  text::write_file(path, out);
}

std::vector<Chunk> read_chunks(const std::string& path) {
  std::vector<Chunk> chunks;
  for_each_json_line(path, [&](const nlohmann::json& j, std::size_t line_no) {
    try {
      chunks.push_back(chunk_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kValidationError,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return chunks;
}

}  // namespace coached
