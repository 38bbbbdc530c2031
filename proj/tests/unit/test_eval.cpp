#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "coached/eval.hpp"
#include "coached/text.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace coached;
using namespace coached::eval;
using coached::testing::TempDir;
using nlohmann::json;

namespace {

std::vector<Trial> supp_table1() { return load_trial_bank(testing::fixture("supp_table1_trials.jsonl")); }

std::map<std::string, std::map<Source, int>> published_scores() {
  std::map<std::string, std::map<Source, int>> out;
  std::ifstream in(testing::fixture("supp_table1_trials.jsonl"));
  for (std::string line; std::getline(in, line);) {
    if (text::trim(line).empty()) continue;
    const auto j = json::parse(line);
    for (const auto& [source, score] : j.at("published_scores").items()) {
      out[j.at("trial_id").get<std::string>()][parse_source(source)] = score.get<int>();
    }
  }
  return out;
}

int position_of(const BlindPresentation& p, const Trial& t, Source s) {
  for (int pos = 0; pos < 3; ++pos) {
    if (p.source_at(t, pos) == s) return pos;
  }
  return -1;
}

// Every published score entered through the blinded rating path.
std::vector<Rating> rate_published(const std::vector<Trial>& trials, RatingStore& store,
                                   const std::string& rater = "rater1") {
  const auto scores = published_scores();
  const auto presentations = blind_shuffle(trials, rater, 7);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    for (Source s : kAllSources) {
      record_rating(presentations[i], trials[i], position_of(presentations[i], trials[i], s),
                    scores.at(trials[i].trial_id).at(s), rater, store);
    }
  }
  return store.all();
}

json trial_json(const std::string& id) {
  return {{"trial_id", id},
          {"query", "q"},
          {"session_tag", "diary"},
          {"responses",
           {{{"source", "vsc"}, {"text", "a"}}, {{"source", "appropriate"}, {"text", "bb"}},
            {{"source", "inappropriate"}, {"text", "ccc"}}}}};
}

constexpr std::array<const char*, 3> kSourceTokens{"vsc", "appropriate", "inappropriate"};

bool mentions_source(const std::string& s) {
  for (const auto* token : kSourceTokens) {
    if (text::find_icase(s, token) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("trial bank loads the fixture") {
  const auto trials = supp_table1();
  REQUIRE(trials.size() == 10);
  for (const auto& t : trials) {
    std::set<Source> sources;
    for (const auto& r : t.responses) {
      sources.insert(r.source);
      CHECK(r.length_chars == text::char_count(r.text));
    }
    CHECK(sources.size() == 3);
  }
  CHECK(trials[0].response(Source::kVsc).length_chars == 617);
  const auto dist = session_distribution(trials);
  std::size_t total = 0;
  for (const auto& [tag, n] : dist) total += n;
  CHECK(total == 10);
  CHECK(trial_from_json(to_json(trials[3])).trial_id == trials[3].trial_id);
}

TEST_CASE("trial validation") {
  auto j = trial_json("x1");
  j["responses"][1]["source"] = "vsc";
  CHECK_THROWS_KIND(trial_from_json(j), ErrorKind::kValidationError);
  try {
    trial_from_json(j);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("x1") != std::string::npos);
  }
  j = trial_json("x2");
  j["responses"].erase(2);
  CHECK_THROWS_KIND(trial_from_json(j), ErrorKind::kValidationError);
  j = trial_json("x3");
  j["responses"][0]["source"] = "llm";
  CHECK_THROWS_KIND(trial_from_json(j), ErrorKind::kValidationError);
  j = trial_json("x4");
  j["session_tag"] = "session9";
  CHECK_THROWS_KIND(trial_from_json(j), ErrorKind::kValidationError);

  TempDir dir;
  text::write_file(dir.file("empty.jsonl"), "");
  CHECK(load_trial_bank(dir.file("empty.jsonl")).empty());
  text::write_file(dir.file("dup.jsonl"), trial_json("a").dump() + "\n" + trial_json("a").dump() + "\n");
  CHECK_THROWS_KIND(load_trial_bank(dir.file("dup.jsonl")), ErrorKind::kValidationError);
}

TEST_CASE("blind shuffle is deterministic, keyed and a bijection") {
  const auto trials = supp_table1();
  const auto a = blind_shuffle(trials, "rater1", 7);
  const auto b = blind_shuffle(trials, "rater1", 7);
  REQUIRE(a.size() == trials.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].permutation == b[i].permutation);
    auto sorted = a[i].permutation;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::array<int, 3>{0, 1, 2});
    for (int pos = 0; pos < 3; ++pos) {
      CHECK(a[i].blinded_items[pos] == trials[i].responses[a[i].permutation[pos]].text);
    }
    CHECK(presentation_from_json(to_json(a[i])).permutation == a[i].permutation);
  }
  // Adding a trial leaves the others alone.
  auto more = trials;
  more.insert(more.begin(), trial_from_json(trial_json("t00")));
  const auto c = blind_shuffle(more, "rater1", 7);
  for (std::size_t i = 0; i < trials.size(); ++i) CHECK(c[i + 1].permutation == a[i].permutation);

  bool differs = false;
  const auto other = blind_shuffle(trials, "rater2", 7);
  for (std::size_t i = 0; i < a.size(); ++i) differs |= other[i].permutation != a[i].permutation;
  CHECK(differs);
}

TEST_CASE("shuffle is uniform over seeds") {
  const auto trials = std::vector<Trial>{supp_table1()[0]};
  std::map<std::array<int, 3>, int> counts;
  constexpr int kSeeds = 6000;
  for (int seed = 0; seed < kSeeds; ++seed) counts[blind_shuffle(trials, "rater1", seed)[0].permutation]++;
  REQUIRE(counts.size() == 6);
  double chi2 = 0.0;
  for (const auto& [perm, n] : counts) {
    CHECK(std::abs(n - 1000) <= 120);
    chi2 += (n - 1000.0) * (n - 1000.0) / 1000.0;
  }
  CHECK(oracle::chi_square_upper(chi2, 5) > 0.001);
}

TEST_CASE("rater-facing objects never name a source") {
  const auto trials = supp_table1();
  RatingStore store;
  for (const auto& p : blind_shuffle(trials, "rater1", 99)) {
    auto masked = p;
    for (auto& item : masked.blinded_items) item = "<text>";
    masked.query = "<query>";
    CHECK_FALSE(mentions_source(rater_view(masked).dump()));
    const auto view = rater_view(p);
    CHECK_FALSE(view.contains("permutation"));
    CHECK(view.at("items").size() == 3);
  }
  const auto ratings = rate_published(trials, store);
  for (const auto& r : ratings) {
    const auto receipt = rater_receipt(r).dump();
    CHECK_FALSE(mentions_source(receipt));
  }
}

TEST_CASE("record_rating joins the source and enforces its rules") {
  const auto trials = supp_table1();
  const auto p = blind_shuffle(trials, "rater1", 7)[0];
  RatingStore store;
  const auto r = record_rating(p, trials[0], 1, 5, "rater1", store);
  CHECK(r.source == p.source_at(trials[0], 1));
  CHECK(r.score == 5);
  CHECK_FALSE(r.timestamp.empty());
  CHECK(store.contains(trials[0].trial_id, "rater1", 1));

  CHECK_THROWS_KIND(record_rating(p, trials[0], 0, 0, "rater1", store), ErrorKind::kBadScore);
  CHECK_THROWS_KIND(record_rating(p, trials[0], 0, 6, "rater1", store), ErrorKind::kBadScore);
  CHECK_THROWS_KIND(record_rating(p, trials[0], 3, 3, "rater1", store), ErrorKind::kBadPosition);
  CHECK_THROWS_KIND(record_rating(p, trials[0], -1, 3, "rater1", store), ErrorKind::kBadPosition);
  CHECK_THROWS_KIND(record_rating(p, trials[0], 0, 3, "rater2", store), ErrorKind::kBadPosition);
  CHECK_THROWS_KIND(record_rating(p, trials[0], 1, 4, "rater1", store), ErrorKind::kDuplicateRating);
  CHECK_THROWS_KIND(record_rating(p, trials[1], 0, 4, "rater1", store), ErrorKind::kValidationError);
  CHECK(store.all().size() == 1);
}

TEST_CASE("rating store persists and skips torn lines") {
  TempDir dir;
  const auto path = dir.file("ratings.jsonl");
  const auto trials = supp_table1();
  {
    RatingStore store(path);
    rate_published(trials, store);
  }
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"trial_id":"t01","rat)";
  }
  RatingStore reopened(path);
  CHECK(reopened.all().size() == 30);
  CHECK_THROWS_KIND(reopened.insert(reopened.all().front()), ErrorKind::kDuplicateRating);
  CHECK(rating_from_json(to_json(reopened.all()[3])).score == reopened.all()[3].score);
}

TEST_CASE("concurrent submissions keep keys unique") {
  const auto trials = supp_table1();
  const auto p = blind_shuffle(trials, "rater1", 7)[0];
  RatingStore store;
  std::atomic<int> ok = 0;
  std::atomic<int> dup = 0;
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      for (int pos = 0; pos < 3; ++pos) {
        try {
          record_rating(p, trials[0], pos, 3, "rater1", store);
          ++ok;
        } catch (const Error& e) {
          if (e.kind() == ErrorKind::kDuplicateRating) ++dup;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 3);
  CHECK(dup == 21);
}

TEST_CASE("summary of the published scores") {
  const auto trials = supp_table1();
  RatingStore store;
  const auto summary = summarize_ratings(rate_published(trials, store), trials);
  const auto& vsc = summary.at(Source::kVsc);
  const auto& app = summary.at(Source::kAppropriate);
  const auto& bad = summary.at(Source::kInappropriate);
  CHECK(vsc.n == 10);
  CHECK(std::fabs(vsc.mean - 4.3) < 1e-12);
  CHECK(std::fabs(*vsc.sample_std - std::sqrt(0.9)) < 1e-12);
  CHECK(std::fabs(*vsc.sample_std - 0.9487) < 1e-4);
  CHECK(std::fabs(app.mean - 3.9) < 1e-12);
  CHECK(std::fabs(*app.sample_std - std::sqrt(4.9 / 9)) < 1e-12);
  CHECK(std::fabs(bad.mean - 1.4) < 1e-12);
  CHECK(std::fabs(*bad.sample_std - std::sqrt(4.4 / 9)) < 1e-12);
  CHECK(vsc.histogram == std::array<std::size_t, 5>{0, 0, 3, 1, 6});
  CHECK(app.histogram == std::array<std::size_t, 5>{0, 0, 3, 5, 2});
  CHECK(bad.histogram == std::array<std::size_t, 5>{7, 2, 1, 0, 0});
}

TEST_CASE("summary edge cases") {
  const auto trials = supp_table1();
  RatingStore store;
  const auto presentations = blind_shuffle(trials, "r", 1);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    record_rating(presentations[i], trials[i], position_of(presentations[i], trials[i], Source::kVsc), 3, "r", store);
  }
  const auto summary = summarize_ratings(store.all(), trials);
  CHECK(summary.size() == 1);
  CHECK(summary.at(Source::kVsc).mean == 3.0);
  CHECK(*summary.at(Source::kVsc).sample_std == 0.0);

  Rating stray;
  stray.trial_id = "nope";
  stray.score = 3;
  CHECK_THROWS_KIND(summarize_ratings({stray}, trials), ErrorKind::kValidationError);
}

TEST_CASE("difference scores") {
  const auto trials = supp_table1();
  RatingStore store;
  const auto d = difference_scores(rate_published(trials, store), trials);
  CHECK(d.diffs == std::vector<int>{2, 0, 2, 1, 0, -1, -1, 0, 1, 0});
  CHECK(d.histogram == std::array<std::size_t, 9>{0, 0, 0, 2, 4, 2, 2, 0, 0});
  CHECK(d.cumulative == std::array<std::size_t, 9>{0, 0, 0, 2, 6, 8, 10, 10, 10});
  CHECK(d.exclusions == 0);

  auto partial = store.all();
  partial.erase(std::remove_if(partial.begin(), partial.end(),
                               [](const Rating& r) { return r.trial_id == "t04" && r.source == Source::kVsc; }),
                partial.end());
  const auto e = difference_scores(partial, trials);
  CHECK(e.exclusions == 1);
  std::size_t total = 0;
  for (auto n : e.histogram) total += n;
  CHECK(total + e.exclusions == trials.size());

  RatingStore same;
  const auto presentations = blind_shuffle(trials, "r", 3);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    for (Source s : kAllSources) record_rating(presentations[i], trials[i], position_of(presentations[i], trials[i], s), 4, "r", same);
  }
  for (int diff : difference_scores(same.all(), trials).diffs) CHECK(diff == 0);
}

TEST_CASE("first rater by id supplies the difference") {
  const auto trials = std::vector<Trial>{supp_table1()[0]};
  RatingStore store;
  for (const auto& [rater, vsc, app] : std::vector<std::tuple<std::string, int, int>>{{"b", 5, 1}, {"a", 2, 3}}) {
    const auto p = blind_shuffle(trials, rater, 1)[0];
    record_rating(p, trials[0], position_of(p, trials[0], Source::kVsc), vsc, rater, store);
    record_rating(p, trials[0], position_of(p, trials[0], Source::kAppropriate), app, rater, store);
  }
  CHECK(difference_scores(store.all(), trials).diffs == std::vector<int>{-1});
}

TEST_CASE("report over the published scores") {
  const auto trials = supp_table1();
  RatingStore store;
  const auto ratings = rate_published(trials, store);
  const auto report = build_report(ratings, trials);
  CHECK(report.t_test_variant == "welch");

  const std::vector<double> vsc{5, 5, 5, 5, 4, 3, 3, 5, 5, 3};
  const std::vector<double> app{3, 5, 3, 4, 4, 4, 4, 5, 4, 3};
  const auto o = oracle::welch(vsc, app);
  REQUIRE(report.score_test);
  CHECK(std::fabs(report.score_test->t - o.t) < 1e-9 * std::fabs(o.t));
  CHECK(std::fabs(report.score_test->p_two_tailed - o.p) < 1e-9 * o.p);

  std::vector<double> vlen, alen, y, g, len;
  for (const auto& t : trials) {
    vlen.push_back(static_cast<double>(t.response(Source::kVsc).length_chars));
    alen.push_back(static_cast<double>(t.response(Source::kAppropriate).length_chars));
  }
  CHECK(std::fabs(report.lengths.at(Source::kVsc).mean - 495.2) < 1e-9);
  const auto lo = oracle::welch(vlen, alen);
  REQUIRE(report.length_test);
  CHECK(std::fabs(report.length_test->t - lo.t) < 1e-9 * std::fabs(lo.t));

  const auto scores = published_scores();
  for (const auto& t : trials) {
    for (Source s : {Source::kVsc, Source::kAppropriate}) {
      y.push_back(scores.at(t.trial_id).at(s));
      g.push_back(s == Source::kVsc ? 1.0 : 0.0);
      len.push_back(static_cast<double>(t.response(s).length_chars));
    }
  }
  const auto ao = oracle::ancova(y, g, len);
  REQUIRE(report.ancova);
  CHECK(std::fabs(report.ancova->f_group - ao.f) < 1e-8 * std::fabs(ao.f));
  CHECK(std::fabs(report.ancova->p_group - ao.p) < 1e-8 * ao.p);
  CHECK(report.notes.empty());

  const auto j = to_json(report);
  CHECK(j.at("sources").at("vsc").at("mean") == 4.3);
  const auto& ref = j.at("reference");
  CHECK(ref.at("score_mean_std").at("vsc") == json::array({4.327, 0.883}));
  CHECK(ref.at("score_mean_std").at("appropriate") == json::array({4.071, 0.828}));
  CHECK(ref.at("score_mean_std").at("inappropriate") == json::array({1.847, 0.923}));
  CHECK(ref.at("score_test_p") == 0.044);
  CHECK(ref.at("length_mean_std").at("vsc") == json::array({419.58, 136.59}));
  CHECK(ref.at("length_mean_std").at("appropriate") == json::array({243.51, 81.98}));
  CHECK(ref.at("length_test_p") == 0.0038);
  CHECK(ref.at("ancova_p_group") == 0.895);
  CHECK(ref.at("queries") == 100);
  CHECK(j.at("diff_distribution").at("support") == json::array({-4, -3, -2, -1, 0, 1, 2, 3, 4}));

  const auto pooled = build_report(ratings, trials, stats::TTestVariant::kPooled);
  CHECK(pooled.t_test_variant == "pooled");
  CHECK(pooled.score_test->df == 18.0);
}

TEST_CASE("report with missing statistics records why") {
  const auto trials = supp_table1();
  const auto report = build_report({}, trials);
  CHECK(report.sources.empty());
  CHECK_FALSE(report.score_test);
  CHECK_FALSE(report.ancova);
  CHECK_FALSE(report.notes.empty());
  CHECK(report.diff.exclusions == 10);
  CHECK(to_json(report).at("score_test").is_null());
}

TEST_CASE("report export round trips and is deterministic") {
  TempDir dir;
  const auto trials = supp_table1();
  RatingStore store;
  const auto report = build_report(rate_published(trials, store), trials);

  export_report(report, dir.file("a.json"), ReportFormat::kJson);
  export_report(report, dir.file("b.json"), ReportFormat::kJson);
  CHECK(text::read_file(dir.file("a.json")) == text::read_file(dir.file("b.json")));
  CHECK(import_report(dir.file("a.json")) == report);

  export_report(report, dir.file("a.csv"), ReportFormat::kCsv);
  export_report(report, dir.file("b.csv"), ReportFormat::kCsv);
  const auto csv = text::read_file(dir.file("a.csv"));
  CHECK(csv == text::read_file(dir.file("b.csv")));
  CHECK(csv.starts_with("source,statistic,value\n"));
  CHECK(csv.find("vsc,mean,4.3\n") != std::string::npos);
  CHECK(csv.find("appropriate,mean,3.9\n") != std::string::npos);

  std::set<std::pair<std::string, std::string>> keys;
  std::size_t rows = 0;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    REQUIRE(b != std::string::npos);
    keys.emplace(line.substr(0, a), line.substr(a + 1, b - a - 1));
    ++rows;
  }
  CHECK(keys.size() == rows);

  CHECK_THROWS_KIND(export_report(report, dir.file("missing/dir/x.json"), ReportFormat::kJson), ErrorKind::kIoError);
  CHECK_THROWS_KIND(import_report(dir.file("none.json")), ErrorKind::kIoError);
}

TEST_CASE("rater assignment") {
  const auto trials = supp_table1();
  const auto split = assign_raters(trials, {"r1", "r2"}, 5);
  CHECK(split.at("r1") == std::vector<std::string>{"t01", "t02", "t03", "t04", "t05"});
  CHECK(split.at("r2") == std::vector<std::string>{"t06", "t07", "t08", "t09", "t10"});
  const auto all = assign_raters(trials, {"r1", "r2"}, 0);
  CHECK(all.at("r1").size() == 10);
  CHECK(all.at("r2").size() == 10);
  const auto short_bank = assign_raters(trials, {"r1", "r2", "r3"}, 4);
  CHECK(short_bank.at("r3") == std::vector<std::string>{"t09", "t10"});
}
