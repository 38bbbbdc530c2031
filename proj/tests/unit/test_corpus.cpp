#include <doctest.h>

#include <random>
#include <set>

#include "coached/corpus.hpp"
#include "coached/text.hpp"
#include "support.hpp"

using namespace coached;

namespace {

SourceDocument doc_of(const std::string& body, DocumentFormat format = DocumentFormat::kPlain) {
  return normalize_document(body, format, {{"doc_id", "d"}, {"title", "T"}});
}

ChunkingPolicy policy(ChunkStrategy strategy, std::size_t target = 1000, std::size_t overlap = 200) {
  ChunkingPolicy p;
  p.strategy = strategy;
  p.target_chars = target;
  p.overlap_chars = overlap;
  return p;
}

std::vector<Span> spans_of(const std::vector<Chunk>& chunks) {
  std::vector<Span> out;
  for (const auto& c : chunks) out.push_back(c.span);
  return out;
}

// Body of n code points with no separators.
std::string run_of(std::size_t n) { return std::string(n, 'x'); }

void check_invariants(const SourceDocument& doc, const ChunkingPolicy& p, const std::vector<Chunk>& chunks) {
  const auto body = text::decode_utf8(doc.body);
  REQUIRE(!chunks.empty());
  std::vector<bool> covered(body.size(), false);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& c = chunks[i];
    CHECK(c.ordinal == i);
    CHECK(c.span.end > c.span.start);
    CHECK(c.span.end <= body.size());
    CHECK(c.text == text::encode_utf8(std::u32string_view(body).substr(c.span.start, c.span.size())));
    if (i > 0) {
      CHECK(c.span.start > chunks[i - 1].span.start);
      if (p.strategy == ChunkStrategy::kFixedSize || p.strategy == ChunkStrategy::kRecursive) {
        const std::size_t prev_end = chunks[i - 1].span.end;
        CHECK(prev_end <= c.span.start + p.overlap_chars);
      }
    }
    for (std::size_t k = c.span.start; k < c.span.end; ++k) covered[k] = true;
  }
  CHECK(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }));
}

}  // namespace

TEST_CASE("normalize_document examples") {
  CHECK(normalize_document("hello world", DocumentFormat::kPlain).body == "hello world");
  CHECK(normalize_document("exam-\nple text\f", DocumentFormat::kPlain).body == "example text");
  CHECK_THROWS_KIND(normalize_document("", DocumentFormat::kPlain), ErrorKind::kEmptyDocument);
  CHECK_THROWS_KIND(normalize_document(" \n\f\r\n\t", DocumentFormat::kPlain), ErrorKind::kEmptyDocument);
}

TEST_CASE("normalize_document whitespace invariants") {
  const auto doc = normalize_document("\xEF\xBB\xBF  Title\r\n\r\n\r\n\r\nline  one   \r\nWell-\nKnown  x\n\n\n", DocumentFormat::kPlain);
  CHECK(doc.body == "  Title\n\nline one\nWell-\nKnown x");
  CHECK(doc.body.find('\r') == std::string::npos);
  CHECK(doc.body.find("\n\n\n") == std::string::npos);
  CHECK(doc.title == "Title");
}

TEST_CASE("doc_id and title come from provenance or content") {
  const auto a = normalize_document("# Manual\nbody", DocumentFormat::kMarkdown);
  const auto b = normalize_document("# Manual\nbody", DocumentFormat::kMarkdown);
  CHECK(a.doc_id == b.doc_id);
  CHECK(a.doc_id.rfind("doc-", 0) == 0);
  CHECK(a.title == "Manual");
  const auto c = normalize_document("x", DocumentFormat::kPlain, {{"doc_id", "m1"}, {"title", "CBT-I Manual"}, {"source", "f"}});
  CHECK(c.doc_id == "m1");
  CHECK(c.title == "CBT-I Manual");
  CHECK(c.provenance == Metadata{{"source", "f"}});
}

TEST_CASE("policy validation") {
  ChunkingPolicy p;
  CHECK_NOTHROW(p.validate());
  p.overlap_chars = 1000;
  CHECK_THROWS_KIND(p.validate(), ErrorKind::kInvalidPolicy);
  p = {};
  p.strategy = ChunkStrategy::kRecursive;
  p.separators.clear();
  CHECK_THROWS_KIND(p.validate(), ErrorKind::kInvalidPolicy);
  p = {};
  p.boundary_similarity_quantile = 1.0;
  CHECK_THROWS_KIND(p.validate(), ErrorKind::kInvalidPolicy);
  p = {};
  p.target_chars = 0;
  p.overlap_chars = 0;
  CHECK_THROWS_KIND(p.validate(), ErrorKind::kInvalidPolicy);
}

TEST_CASE("chunk_fixed examples") {
  const auto p = policy(ChunkStrategy::kFixedSize);
  CHECK(spans_of(chunk_fixed(doc_of(run_of(1000)), p)) == std::vector<Span>{{0, 1000}});
  CHECK(spans_of(chunk_fixed(doc_of(run_of(2600)), p)) == std::vector<Span>{{0, 1000}, {800, 1800}, {1600, 2600}});
  CHECK(spans_of(chunk_fixed(doc_of(run_of(1801)), p)) == std::vector<Span>{{0, 1000}, {800, 1800}, {1600, 1801}});
}

TEST_CASE("chunk_fixed reconstruction from non-overlapping prefixes") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto doc = doc_of(testing::random_body(rng, 300 + static_cast<std::size_t>(i) * 97));
    const auto p = policy(ChunkStrategy::kFixedSize, 120 + static_cast<std::size_t>(i), 30);
    const auto chunks = chunk_fixed(doc, p);
    std::u32string rebuilt;
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      const auto cps = text::decode_utf8(chunks[k].text);
      rebuilt += k + 1 == chunks.size() ? cps : cps.substr(0, p.target_chars - p.overlap_chars);
    }
    CHECK(text::encode_utf8(rebuilt) == doc.body);
  }
}

TEST_CASE("chunk_recursive examples") {
  const auto p = policy(ChunkStrategy::kRecursive);
  const std::string para(599, 'a');
  const auto doc = doc_of(para + ".\n\n" + para + ".");
  const auto chunks = chunk_recursive(doc, p);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0].span == Span{0, 602});
  CHECK(chunks[1].span == Span{602, 1202});

  CHECK(spans_of(chunk_recursive(doc_of("short body"), p)) == std::vector<Span>{{0, 10}});
  CHECK(spans_of(chunk_recursive(doc_of(run_of(2500)), p)) ==
        std::vector<Span>{{0, 1000}, {800, 1800}, {1600, 2500}});
}

TEST_CASE("chunk_recursive merges small pieces greedily") {
  auto p = policy(ChunkStrategy::kRecursive, 25, 5);
  p.min_chunk_chars = 10;
  const auto doc = doc_of("aaaa bbbb cccc dddd eeee ffff gggg hhhh");
  const auto chunks = chunk_recursive(doc, p);
  for (const auto& c : chunks) CHECK(c.span.size() <= 25);
  CHECK(chunks.size() == 2);
  check_invariants(doc, p, chunks);
}

TEST_CASE("chunk_structural examples") {
  auto p = policy(ChunkStrategy::kDocumentSpecific);
  p.min_chunk_chars = 1;
  const auto two = chunk_structural(doc_of("# A\nalpha text\n\n# B\nbeta text", DocumentFormat::kMarkdown), p);
  REQUIRE(two.size() == 2);
  CHECK(two[0].metadata["section_path"] == nlohmann::json{"A"});
  CHECK(two[1].metadata["section_path"] == nlohmann::json{"B"});

  const auto nested = chunk_structural(
      doc_of("# Session 3\nintro\n\n## Sleep Restriction\nlimit time in bed", DocumentFormat::kMarkdown), p);
  REQUIRE(nested.size() == 2);
  CHECK(nested[1].metadata["section_path"] == nlohmann::json{"Session 3", "Sleep Restriction"});
  CHECK(nested[1].text.rfind("## Sleep Restriction", 0) == 0);

  const auto plain = chunk_structural(doc_of("no headings at all, just a paragraph of text"), p);
  REQUIRE(plain.size() == 1);
  CHECK(plain[0].metadata["section_path"] == nlohmann::json::array());
}

TEST_CASE("chunk_structural heading stack and fences") {
  auto p = policy(ChunkStrategy::kDocumentSpecific);
  p.min_chunk_chars = 1;
  const auto chunks = chunk_structural(
      doc_of("preamble\n# A\n## A1\n### A1a\n```\n# not a heading\n```\n## A2\n# B\n#### deep", DocumentFormat::kMarkdown),
      p);
  std::vector<nlohmann::json> paths;
  for (const auto& c : chunks) paths.push_back(c.metadata["section_path"]);
  CHECK(paths == std::vector<nlohmann::json>{nlohmann::json::array(), {"A"}, {"A", "A1"}, {"A", "A1", "A1a"},
                                             {"A", "A2"}, {"B"}});
}

TEST_CASE("chunk_structural sub-splits large sections") {
  auto p = policy(ChunkStrategy::kDocumentSpecific, 100, 20);
  std::string body = "# Big\n";
  for (int i = 0; i < 30; ++i) body += "word" + std::to_string(i) + " ";
  const auto doc = doc_of(body, DocumentFormat::kMarkdown);
  const auto chunks = chunk_structural(doc, p);
  CHECK(chunks.size() > 1);
  for (const auto& c : chunks) {
    CHECK(c.span.size() <= 100);
    CHECK(c.metadata["section_path"] == nlohmann::json{"Big"});
  }
}

TEST_CASE("chunk_semantic examples") {
  auto p = policy(ChunkStrategy::kSemantic);
  p.min_chunk_chars = 1;
  const auto doc = doc_of("The bed is for sleep. Sleep in the bed. Stock prices fell.");
  const auto chunks = chunk_document(doc, p);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[1].text == "Stock prices fell.");

  CHECK(chunk_document(doc_of("Only one sentence here."), p).size() == 1);
  CHECK(chunk_document(doc_of("Same words. Same words. Same words. Same words."), p).size() == 1);
}

TEST_CASE("chunk_semantic merges short runs forward") {
  auto p = policy(ChunkStrategy::kSemantic);
  p.min_chunk_chars = 30;
  const auto doc = doc_of("Cats purr. Dogs bark loudly at night. Stocks fell. Bonds rose sharply today again.");
  const auto chunks = chunk_semantic(doc, p, [](const std::string& s) {
    // Each sentence its own axis: all adjacent similarities are 0, no boundary.
    return std::vector<double>{static_cast<double>(s.size() % 7), 1.0};
  });
  for (std::size_t i = 0; i + 1 < chunks.size(); ++i) CHECK(chunks[i].span.size() >= 30);
  check_invariants(doc, p, chunks);
}

TEST_CASE("tiny bodies yield exactly one chunk under every strategy") {
  for (auto s : {ChunkStrategy::kFixedSize, ChunkStrategy::kRecursive, ChunkStrategy::kDocumentSpecific,
                 ChunkStrategy::kSemantic}) {
    auto p = policy(s, 50, 10);
    p.min_chunk_chars = 40;
    CHECK(chunk_document(doc_of("# H\nTiny. Body. Here.", DocumentFormat::kMarkdown), p).size() == 1);
  }
}

TEST_CASE("wrap_metadata examples") {
  const auto doc = normalize_document("body text", DocumentFormat::kPlain, {{"doc_id", "a"}, {"title", "CBT-I Manual"}});
  const auto chunks = chunk_fixed(doc, policy(ChunkStrategy::kFixedSize));
  CHECK(chunks[0].metadata["title"] == "CBT-I Manual");
  CHECK(chunks[0].metadata["strategy"] == "fixed");
  const auto extra = wrap_metadata(chunks[0], doc, {{"session", "3"}});
  CHECK(extra.metadata["session"] == "3");
  CHECK(extra.metadata["title"] == "CBT-I Manual");

  const auto other = normalize_document("x", DocumentFormat::kPlain, {{"doc_id", "b"}});
  CHECK_THROWS_KIND(wrap_metadata(chunks[0], other), ErrorKind::kWrongDocument);

  Chunk bare;
  bare.doc_id = "a";
  CHECK(wrap_metadata(bare, doc).metadata["strategy"] == "unspecified");
}

TEST_CASE("split_sentences keeps trailing whitespace with the sentence") {
  const auto spans = split_sentences(U"One. Two?  Three!\nFour");
  CHECK(spans == std::vector<Span>{{0, 5}, {5, 11}, {11, 18}, {18, 22}});
  CHECK(split_sentences(U"e.g.x no split").size() == 1);
}

TEST_CASE("randomized invariants and determinism across strategies") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(1, 3000);
  std::uniform_int_distribution<std::size_t> target(20, 600);
  for (int i = 0; i < 100; ++i) {
    std::string body = testing::random_body(rng, len(rng));
    if (i % 3 == 0) body = "# Head\n" + body + "\n## Sub\n" + body;
    const auto doc = doc_of(body, i % 2 ? DocumentFormat::kMarkdown : DocumentFormat::kPlain);
    for (auto s : {ChunkStrategy::kFixedSize, ChunkStrategy::kRecursive, ChunkStrategy::kDocumentSpecific,
                   ChunkStrategy::kSemantic}) {
      auto p = policy(s, target(rng), 0);
      p.overlap_chars = p.target_chars / 4;
      p.min_chunk_chars = std::min<std::size_t>(p.target_chars, 15);
      const auto a = chunk_document(doc, p);
      check_invariants(doc, p, a);
      const auto b = chunk_document(doc, p);
      REQUIRE(a.size() == b.size());
      for (std::size_t k = 0; k < a.size(); ++k) CHECK(to_json(a[k]).dump() == to_json(b[k]).dump());
    }
  }
}

TEST_CASE("document and chunk json round trip") {
  testing::TempDir dir;
  const auto doc = normalize_document("# T\nbody", DocumentFormat::kMarkdown, {{"doc_id", "x"}, {"session", "2"}});
  write_documents(dir.file("docs.jsonl"), {doc});
  const auto docs = read_record_file(dir.file("docs.jsonl"));
  REQUIRE(docs.size() == 1);
  CHECK(docs[0].body == doc.body);
  CHECK(docs[0].format == DocumentFormat::kMarkdown);
  CHECK(docs[0].provenance["session"] == "2");

  const auto chunks = chunk_recursive(doc, policy(ChunkStrategy::kRecursive));
  write_chunks(dir.file("chunks.jsonl"), chunks);
  const auto back = read_chunks(dir.file("chunks.jsonl"));
  REQUIRE(back.size() == chunks.size());
  CHECK(to_json(back[0]) == to_json(chunks[0]));

  text::write_file(dir.file("dup.jsonl"), "{\"doc_id\":\"a\",\"body\":\"x\"}\n{\"doc_id\":\"a\",\"body\":\"y\"}\n");
  CHECK_THROWS_KIND(read_record_file(dir.file("dup.jsonl")), ErrorKind::kValidationError);
  CHECK_THROWS_KIND(read_chunks(dir.file("missing.jsonl")), ErrorKind::kIoError);
}
