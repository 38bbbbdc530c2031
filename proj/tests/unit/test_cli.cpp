#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "coached/eval.hpp"
#include "coached/text.hpp"
#include "manual.hpp"
#include "support.hpp"

#ifndef COACHED_CLI
#error "COACHED_CLI must be defined"
#endif

using namespace coached;
using coached::testing::TempDir;
using nlohmann::json;

namespace {

struct Run {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') {
      q += "'\\''";
    } else {
      q += c;
    }
  }
  return q + "'";
}

// A directory with a config file that points everything at data/.
class Project {
 public:
  Project() {
    text::write_file(dir_.file("coached.toml"),
                     "[corpus]\n"
                     "documents_path = \"data/documents.jsonl\"\n"
                     "chunks_path = \"data/chunks.jsonl\"\n"
                     "[chunking]\n"
                     "strategy = \"structural\"\n"
                     "target_chars = 600\n"
                     "overlap_chars = 100\n"
                     "[retrieval]\n"
                     "index_path = \"data/index.jsonl\"\n"
                     "[backend]\n"
                     "scripted_spec_path = \"script.json\"\n"
                     "[logs]\n"
                     "turn_log = \"data/turns.jsonl\"\n"
                     "ratings = \"data/ratings.jsonl\"\n"
                     "[eval]\n"
                     "trial_bank = " + json(testing::fixture("supp_table1_trials.jsonl")).dump() + "\n"
                     "presentations_path = \"data/presentations.jsonl\"\n"
                     "report_path = \"data/report.json\"\n"
                     "trials_per_rater = 0\n");
  }

  Run run(const std::string& args, const std::string& input = "") const {
    text::write_file(dir_.file("stdin.txt"), input);
    const std::string cmd = quote(COACHED_CLI) + " -c " + quote(dir_.file("coached.toml")) + " " + args + " < " +
                            quote(dir_.file("stdin.txt")) + " > " + quote(dir_.file("stdout.txt")) + " 2> " +
                            quote(dir_.file("stderr.txt"));
    const int status = std::system(cmd.c_str());
    Run r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = text::read_file(dir_.file("stdout.txt"));
    r.err = text::read_file(dir_.file("stderr.txt"));
    return r;
  }

  // Ingest, index and script the recorded transcripts.
  void prepare() const {
    REQUIRE(run("ingest " + quote(testing::fixture("cbti_manual.md"))).exit_code == 0);
    REQUIRE(run("index").exit_code == 0);
    REQUIRE(run("replay-script " + quote(testing::fixture("supp_table2_transcripts.json")) + " -o " +
                quote(file("script.json")))
                .exit_code == 0);
  }

  std::string file(const std::string& name) const { return dir_.file(name); }

 private:
  TempDir dir_;
};

}  // namespace

TEST_CASE("ingest reports a summary and partial failures") {
  Project p;
  const auto ok = p.run("ingest " + quote(testing::fixture("cbti_manual.md")));
  CHECK(ok.exit_code == 0);
  CHECK(ok.out.find("documents: 1\n") != std::string::npos);
  CHECK(ok.out.find("chunks: " + std::to_string(testing::manual_chunks().size()) + "\n") != std::string::npos);

  const auto partial = p.run("ingest " + quote(p.file("missing.md")) + " " + quote(testing::fixture("cbti_manual.md")));
  CHECK(partial.exit_code == 0);
  CHECK(partial.out.find("documents: 1\n") != std::string::npos);
  CHECK(partial.err.find("error: " + p.file("missing.md")) != std::string::npos);
  std::size_t error_lines = 0;
  for (std::size_t at = partial.err.find("error:"); at != std::string::npos; at = partial.err.find("error:", at + 1)) {
    ++error_lines;
  }
  CHECK(error_lines == 1);

  const auto none = p.run("ingest " + quote(p.file("missing.md")));
  CHECK(none.exit_code != 0);
}

TEST_CASE("ingest and index are deterministic") {
  Project p;
  p.run("ingest " + quote(testing::fixture("cbti_manual.md")));
  const auto chunks = text::read_file(p.file("data/chunks.jsonl"));
  const auto idx = p.run("index");
  CHECK(idx.exit_code == 0);
  CHECK(idx.out.find("entries: " + std::to_string(testing::manual_chunks().size())) != std::string::npos);
  const auto index = text::read_file(p.file("data/index.jsonl"));
  CHECK(load_index(p.file("data/index.jsonl")).entries.size() == testing::manual_chunks().size());

  p.run("ingest " + quote(testing::fixture("cbti_manual.md")));
  CHECK(text::read_file(p.file("data/chunks.jsonl")) == chunks);
  p.run("index");
  CHECK(text::read_file(p.file("data/index.jsonl")) == index);
}

TEST_CASE("index without chunks names the path") {
  Project p;
  const auto r = p.run("index");
  CHECK(r.exit_code != 0);
  CHECK(r.err.find("data/chunks.jsonl") != std::string::npos);
}

TEST_CASE("chat prints the final response") {
  Project p;
  p.prepare();
  const auto q6 = testing::recorded_queries()[5];
  const auto r = p.run("chat", q6.query + "\n");
  CHECK(r.exit_code == 0);
  CHECK(r.out == q6.therapist_draft + "\n");

  const auto empty = p.run("chat", "");
  CHECK(empty.exit_code == 0);
  CHECK(empty.out.empty());
}

TEST_CASE("chat trace shows both agents") {
  Project p;
  p.prepare();
  const auto q1 = testing::recorded_queries()[0];
  const auto r = p.run("chat --trace", q1.query + "\n");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("verdict: rejected\n") != std::string::npos);
  CHECK(r.out.find("draft: " + q1.therapist_draft) != std::string::npos);
  CHECK(r.out.find("feedback: Therapist's RESPONSE seems to be wrong.") != std::string::npos);
  CHECK(r.out.find("replacement: " + q1.expected_final) != std::string::npos);
  CHECK(r.out.ends_with("--- final\n" + q1.expected_final + "\n"));
}

TEST_CASE("chat falls back when the backend fails") {
  Project p;
  p.prepare();
  const auto r = p.run("chat", "How long should I stay in bed if I cannot sleep?\n");
  CHECK(r.exit_code == 0);
  CHECK(r.out == agent::PromptTemplates::defaults().fallback_reply + "\n");
  const auto turns = agent::read_turn_log(p.file("data/turns.jsonl"));
  REQUIRE(turns.size() == 1);
  CHECK(turns[0].degraded);
}

TEST_CASE("eval workflow") {
  Project p;
  const auto built = p.run("eval build-trials");
  CHECK(built.exit_code == 0);
  CHECK(built.out.find("rater1: 10 presentations") != std::string::npos);
  CHECK(built.out.find("rater2: 10 presentations") != std::string::npos);
  const auto first = text::read_file(p.file("data/presentations.jsonl"));
  p.run("eval build-trials");
  CHECK(text::read_file(p.file("data/presentations.jsonl")) == first);

  const auto next = p.run("eval next --rater rater1");
  CHECK(next.exit_code == 0);
  const auto item = json::parse(next.out);
  CHECK(item.at("presentation").at("trial_id") == "t01");

  const auto bad = p.run("eval submit --rater rater1 --trial t01 --position 0 --score 6");
  CHECK(bad.exit_code != 0);
  CHECK(bad.err.find("BadScore") != std::string::npos);

  // Enter every published score through the blinded path.
  const auto trials = eval::load_trial_bank(testing::fixture("supp_table1_trials.jsonl"));
  std::map<std::string, json> published;
  std::ifstream bank(testing::fixture("supp_table1_trials.jsonl"));
  for (std::string line; std::getline(bank, line);) {
    if (text::trim(line).empty()) continue;
    const auto j = json::parse(line);
    published[j.at("trial_id").get<std::string>()] = j.at("published_scores");
  }
  std::ifstream pres(p.file("data/presentations.jsonl"));
  for (std::string line; std::getline(pres, line);) {
    const auto presentation = eval::presentation_from_json(json::parse(line));
    if (presentation.rater_id != "rater1") continue;
    const auto& trial = *std::find_if(trials.begin(), trials.end(),
                                      [&](const eval::Trial& t) { return t.trial_id == presentation.trial_id; });
    for (int pos = 0; pos < 3; ++pos) {
      const int score = published.at(trial.trial_id).at(std::string(eval::to_string(presentation.source_at(trial, pos))));
      const auto r = p.run("eval submit --rater rater1 --trial " + trial.trial_id + " --position " +
                           std::to_string(pos) + " --score " + std::to_string(score));
      REQUIRE(r.exit_code == 0);
      CHECK(r.out.find("vsc") == std::string::npos);
    }
  }
  const auto dup = p.run("eval submit --rater rater1 --trial t01 --position 0 --score 3");
  CHECK(dup.exit_code != 0);
  CHECK(dup.err.find("DuplicateRating") != std::string::npos);

  const auto report = p.run("eval report");
  CHECK(report.exit_code == 0);
  const auto j = json::parse(report.out);
  CHECK(j.at("sources").at("vsc").at("mean") == 4.3);
  CHECK(j.at("sources").at("appropriate").at("mean") == 3.9);
  CHECK(text::read_file(p.file("data/report.json")) == report.out);

  const auto csv = p.run("eval report --format csv --out " + quote(p.file("report.csv")));
  CHECK(csv.exit_code == 0);
  CHECK(csv.out.find("vsc,mean,4.3\n") != std::string::npos);
  CHECK(text::read_file(p.file("report.csv")) == csv.out);

  const auto done = json::parse(p.run("eval next --rater rater1").out);
  CHECK(done.at("done") == true);
}

TEST_CASE("usage errors exit nonzero") {
  Project p;
  CHECK(p.run("").exit_code != 0);
  CHECK(p.run("frobnicate").exit_code != 0);
  CHECK(p.run("eval submit --rater r").exit_code != 0);
  CHECK(p.run("eval report --format xml").exit_code != 0);
}
