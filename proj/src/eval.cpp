#include "coached/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "coached/error.hpp"
#include "coached/text.hpp"

namespace coached::eval {

using nlohmann::json;

std::string_view to_string(Source source) {
  switch (source) {
    case Source::kVsc: return "vsc";
    case Source::kAppropriate: return "appropriate";
    case Source::kInappropriate: return "inappropriate";
  }
  return "vsc";
}

Source parse_source(std::string_view name) {
  if (name == "vsc") return Source::kVsc;
  if (name == "appropriate") return Source::kAppropriate;
  if (name == "inappropriate") return Source::kInappropriate;
  throw Error(ErrorKind::kValidationError, "unknown response source '" + std::string(name) + "'");
}

std::string_view to_string(SessionTag tag) {
  switch (tag) {
    case SessionTag::kIntro: return "intro";
    case SessionTag::kDiary: return "diary";
    case SessionTag::kStimulusControl: return "stimulus_control";
    case SessionTag::kSleepRestriction: return "sleep_restriction";
    case SessionTag::kRelaxation: return "relaxation";
    case SessionTag::kCognitive: return "cognitive";
    case SessionTag::kOther: return "other";
  }
  return "other";
}

SessionTag parse_session_tag(std::string_view name) {
  static const std::map<std::string_view, SessionTag> kTags{
      {"intro", SessionTag::kIntro},
      {"diary", SessionTag::kDiary},
      {"stimulus_control", SessionTag::kStimulusControl},
      {"sleep_restriction", SessionTag::kSleepRestriction},
      {"relaxation", SessionTag::kRelaxation},
      {"cognitive", SessionTag::kCognitive},
      {"other", SessionTag::kOther},
  };
  auto it = kTags.find(name);
  if (it == kTags.end()) {
    throw Error(ErrorKind::kValidationError, "unknown session_tag '" + std::string(name) + "'");
  }
  return it->second;
}

const CandidateResponse& Trial::response(Source source) const {
  for (const auto& r : responses) {
    if (r.source == source) return r;
  }
  throw Error(ErrorKind::kValidationError, "trial " + trial_id + " has no " +
                                               std::string(eval::to_string(source)) + " response");
}

// ---------------------------------------------------------------------------
// Trial bank

Trial trial_from_json(const json& j) {
  Trial t;
  const std::string where = j.is_object() && j.contains("trial_id") && j["trial_id"].is_string()
                                ? "trial " + j["trial_id"].get<std::string>()
                                : "trial record";
  try {
    t.trial_id = j.at("trial_id").get<std::string>();
    t.query = j.at("query").get<std::string>();
    t.session_tag = parse_session_tag(j.value("session_tag", std::string("other")));
    const auto& responses = j.at("responses");
    if (!responses.is_array() || responses.size() != 3) {
      throw Error(ErrorKind::kValidationError, "expected exactly three responses");
    }
    std::set<Source> seen;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& r = responses[i];
      if (!r.contains("source")) throw Error(ErrorKind::kValidationError, "response without source");
      CandidateResponse c;
      c.source = parse_source(r.at("source").get<std::string>());
      c.text = r.at("text").get<std::string>();
      c.length_chars = text::char_count(c.text);
      if (!seen.insert(c.source).second) {
        throw Error(ErrorKind::kValidationError,
                    "duplicate source '" + std::string(eval::to_string(c.source)) + "'");
      }
      t.responses[i] = std::move(c);
    }
  } catch (const Error& e) {
    throw Error(ErrorKind::kValidationError, where + ": " + e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidationError, where + ": " + e.what());
  }
  return t;
}

json to_json(const Trial& t) {
  json responses = json::array();
  for (const auto& r : t.responses) {
    responses.push_back({{"source", std::string(eval::to_string(r.source))}, {"text", r.text}});
  }
  return {{"trial_id", t.trial_id},
          {"query", t.query},
          {"session_tag", std::string(eval::to_string(t.session_tag))},
          {"responses", responses}};
}

std::vector<Trial> load_trial_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot read trial bank " + path);
  std::vector<Trial> trials;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kValidationError, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Trial t = trial_from_json(j);
    if (!ids.insert(t.trial_id).second) {
      throw Error(ErrorKind::kValidationError, "trial " + t.trial_id + ": duplicate trial_id");
    }
    trials.push_back(std::move(t));
  }
  return trials;
}

std::map<SessionTag, std::size_t> session_distribution(const std::vector<Trial>& trials) {
  std::map<SessionTag, std::size_t> out;
  for (const auto& t : trials) ++out[t.session_tag];
  return out;
}

// ---------------------------------------------------------------------------
// Blinding

Source BlindPresentation::source_at(const Trial& trial, int position) const {
  if (position < 0 || position > 2) throw Error(ErrorKind::kBadPosition, std::to_string(position));
  return trial.responses[static_cast<std::size_t>(permutation[static_cast<std::size_t>(position)])].source;
}

json to_json(const BlindPresentation& p) {
  return {{"trial_id", p.trial_id},           {"rater_id", p.rater_id},
          {"query", p.query},                 {"permutation", p.permutation},
          {"blinded_items", p.blinded_items}, {"seed", p.seed}};
}

BlindPresentation presentation_from_json(const json& j) {
  BlindPresentation p;
  try {
    p.trial_id = j.at("trial_id").get<std::string>();
    p.rater_id = j.at("rater_id").get<std::string>();
    p.query = j.at("query").get<std::string>();
    p.permutation = j.at("permutation").get<std::array<int, 3>>();
    p.blinded_items = j.at("blinded_items").get<std::array<std::string, 3>>();
    p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidationError, std::string("presentation: ") + e.what());
  }
  return p;
}

json rater_view(const BlindPresentation& p) {
  json items = json::array();
  for (int pos = 0; pos < 3; ++pos) {
    items.push_back({{"position", pos}, {"text", p.blinded_items[static_cast<std::size_t>(pos)]}});
  }
  return {{"trial_id", p.trial_id}, {"rater_id", p.rater_id}, {"query", p.query}, {"items", items}};
}

namespace {

// Unbiased draw in [0, bound) by rejection; independent of the standard
// library's distribution implementations.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  while (true) {
    const std::uint64_t x = rng();
    if (x < limit) return x % bound;
  }
}

}  // namespace

std::vector<BlindPresentation> blind_shuffle(const std::vector<Trial>& trials,
                                             const std::string& rater_id, std::uint64_t seed) {
  std::vector<BlindPresentation> out;
  out.reserve(trials.size());
  const std::uint64_t rater_key = text::fnv1a64(rater_id);
  for (const auto& t : trials) {
    const std::uint64_t trial_key = text::fnv1a64(t.trial_id);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(rater_key), static_cast<std::uint32_t>(rater_key >> 32),
                      static_cast<std::uint32_t>(trial_key), static_cast<std::uint32_t>(trial_key >> 32)};
    std::mt19937_64 rng(seq);

    BlindPresentation p;
    p.trial_id = t.trial_id;
    p.rater_id = rater_id;
    p.query = t.query;
    p.seed = seed;
    for (std::size_t i = 2; i > 0; --i) {
      const auto j = static_cast<std::size_t>(bounded(rng, i + 1));
      std::swap(p.permutation[i], p.permutation[j]);
    }
    for (std::size_t pos = 0; pos < 3; ++pos) {
      p.blinded_items[pos] = t.responses[static_cast<std::size_t>(p.permutation[pos])].text;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::map<std::string, std::vector<std::string>> assign_raters(const std::vector<Trial>& trials,
                                                              const std::vector<std::string>& raters,
                                                              std::size_t per_rater) {
  std::map<std::string, std::vector<std::string>> out;
  std::size_t next = 0;
  for (const auto& rater : raters) {
    auto& ids = out[rater];
    if (per_rater == 0) {
      for (const auto& t : trials) ids.push_back(t.trial_id);
      continue;
    }
    for (std::size_t i = 0; i < per_rater && next < trials.size(); ++i) ids.push_back(trials[next++].trial_id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ratings

json to_json(const Rating& r) {
  return {{"trial_id", r.trial_id}, {"rater_id", r.rater_id},   {"position", r.position},
          {"score", r.score},       {"timestamp", r.timestamp}, {"source", std::string(eval::to_string(r.source))}};
}

Rating rating_from_json(const json& j) {
  Rating r;
  try {
    r.trial_id = j.at("trial_id").get<std::string>();
    r.rater_id = j.at("rater_id").get<std::string>();
    r.position = j.at("position").get<int>();
    r.score = j.at("score").get<int>();
    r.timestamp = j.value("timestamp", std::string());
    r.source = parse_source(j.at("source").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidationError, std::string("rating: ") + e.what());
  }
  return r;
}

json rater_receipt(const Rating& r) {
  return {{"trial_id", r.trial_id}, {"rater_id", r.rater_id}, {"position", r.position},
          {"score", r.score},       {"accepted", true}};
}

RatingStore::RatingStore(std::string path) : path_(std::move(path)) {
  if (path_.empty()) return;
  std::ifstream in(path_);
  std::string line;
  while (in && std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      continue;  // torn tail after a crash
    }
    Rating r = rating_from_json(j);
    if (keys_.emplace(r.trial_id, r.rater_id, r.position).second) ratings_.push_back(std::move(r));
  }
}

void RatingStore::insert(const Rating& rating) {
  std::lock_guard lock(mutex_);
  const auto key = std::make_tuple(rating.trial_id, rating.rater_id, rating.position);
  if (keys_.count(key) != 0) {
    throw Error(ErrorKind::kDuplicateRating, "trial " + rating.trial_id + ", rater " + rating.rater_id +
                                                 ", position " + std::to_string(rating.position));
  }
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    out << to_json(rating).dump() << "\n";
    out.flush();
    if (!out) throw Error(ErrorKind::kIoError, "cannot append to " + path_);
  }
  keys_.insert(key);
  ratings_.push_back(rating);
}

bool RatingStore::contains(const std::string& trial_id, const std::string& rater_id, int position) const {
  std::lock_guard lock(mutex_);
  return keys_.count(std::make_tuple(trial_id, rater_id, position)) != 0;
}

std::vector<Rating> RatingStore::all() const {
  std::lock_guard lock(mutex_);
  return ratings_;
}

Rating record_rating(const BlindPresentation& presentation, const Trial& trial, int position,
                     int score, const std::string& rater_id, RatingStore& store) {
  if (score < 1 || score > 5) throw Error(ErrorKind::kBadScore, "score " + std::to_string(score) + " not in 1..5");
  if (position < 0 || position > 2) {
    throw Error(ErrorKind::kBadPosition, "position " + std::to_string(position) + " not in 0..2");
  }
  if (rater_id != presentation.rater_id) {
    throw Error(ErrorKind::kBadPosition, "presentation belongs to rater " + presentation.rater_id);
  }
  if (trial.trial_id != presentation.trial_id) {
    throw Error(ErrorKind::kValidationError, "presentation is for trial " + presentation.trial_id);
  }
  Rating r;
  r.trial_id = trial.trial_id;
  r.rater_id = rater_id;
  r.position = position;
  r.score = score;
  r.timestamp = text::utc_timestamp_now();
  r.source = presentation.source_at(trial, position);
  store.insert(r);
  return r;
}

// ---------------------------------------------------------------------------
// Summaries

namespace {

std::set<std::string> trial_ids(const std::vector<Trial>& trials) {
  std::set<std::string> ids;
  for (const auto& t : trials) ids.insert(t.trial_id);
  return ids;
}

}  // namespace

std::map<Source, SourceSummary> summarize_ratings(const std::vector<Rating>& ratings,
                                                  const std::vector<Trial>& trials) {
  const auto ids = trial_ids(trials);
  std::map<Source, std::vector<double>> scores;
  std::map<Source, SourceSummary> out;
  for (const auto& r : ratings) {
    if (ids.count(r.trial_id) == 0) {
      throw Error(ErrorKind::kValidationError, "rating for unknown trial " + r.trial_id);
    }
    if (r.score < 1 || r.score > 5) throw Error(ErrorKind::kBadScore, std::to_string(r.score));
    scores[r.source].push_back(static_cast<double>(r.score));
    ++out[r.source].histogram[static_cast<std::size_t>(r.score - 1)];
  }
  for (auto& [source, values] : scores) {
    auto& s = out[source];
    s.n = values.size();
    s.mean = stats::mean(values);
    if (values.size() >= 2) s.sample_std = std::sqrt(stats::sample_variance(values));
  }
  return out;
}

DiffDistribution difference_scores(const std::vector<Rating>& ratings, const std::vector<Trial>& trials) {
  struct Pair {
    std::optional<int> vsc;
    std::optional<int> appropriate;
  };
  std::map<std::string, std::map<std::string, Pair>> by_trial;
  for (const auto& r : ratings) {
    auto& pair = by_trial[r.trial_id][r.rater_id];
    if (r.source == Source::kVsc) pair.vsc = r.score;
    if (r.source == Source::kAppropriate) pair.appropriate = r.score;
  }
  DiffDistribution out;
  for (const auto& t : trials) {
    std::optional<int> d;
    if (auto it = by_trial.find(t.trial_id); it != by_trial.end()) {
      for (const auto& [rater, pair] : it->second) {
        if (pair.vsc && pair.appropriate) {
          d = *pair.vsc - *pair.appropriate;
          break;
        }
      }
    }
    if (!d) {
      ++out.exclusions;
      continue;
    }
    out.diffs.push_back(*d);
    ++out.histogram[static_cast<std::size_t>(*d + 4)];
  }
  std::size_t running = 0;
  for (std::size_t i = 0; i < out.histogram.size(); ++i) {
    running += out.histogram[i];
    out.cumulative[i] = running;
  }
  return out;
}

StatsReport build_report(const std::vector<Rating>& ratings, const std::vector<Trial>& trials,
                         stats::TTestVariant variant) {
  StatsReport report;
  report.t_test_variant = variant == stats::TTestVariant::kWelch ? "welch" : "pooled";
  report.sources = summarize_ratings(ratings, trials);

  std::map<std::string, const Trial*> by_id;
  for (const auto& t : trials) by_id[t.trial_id] = &t;

  std::map<Source, std::vector<double>> scores;
  std::map<Source, std::vector<double>> lengths;
  std::vector<stats::AncovaObservation> observations;
  for (const auto& r : ratings) {
    const double length = static_cast<double>(by_id.at(r.trial_id)->response(r.source).length_chars);
    scores[r.source].push_back(static_cast<double>(r.score));
    lengths[r.source].push_back(length);
    if (r.source != Source::kInappropriate) {
      observations.push_back({static_cast<double>(r.score), r.source == Source::kVsc, length});
    }
  }
  for (const auto& [source, values] : lengths) {
    LengthSummary s;
    s.n = values.size();
    s.mean = stats::mean(values);
    if (values.size() >= 2) s.sample_std = std::sqrt(stats::sample_variance(values));
    report.lengths[source] = s;
  }

  const auto attempt = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      report.notes.push_back(std::string(what) + ": " + e.what());
    }
  };
  attempt("score_test", [&] {
    report.score_test = stats::t_test(scores[Source::kVsc], scores[Source::kAppropriate], variant);
  });
  attempt("length_test", [&] {
    report.length_test = stats::t_test(lengths[Source::kVsc], lengths[Source::kAppropriate], variant);
  });
  attempt("ancova", [&] { report.ancova = stats::ancova_group_length(observations); });
  report.diff = difference_scores(ratings, trials);
  return report;
}

// ---------------------------------------------------------------------------
// Export

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json reference_values() {
  return {
      {"queries", 100},
      {"score_mean_std",
       {{"appropriate", {4.071, 0.828}}, {"vsc", {4.327, 0.883}}, {"inappropriate", {1.847, 0.923}}}},
      {"score_test_p", 0.044},
      {"length_mean_std", {{"vsc", {419.58, 136.59}}, {"appropriate", {243.51, 81.98}}}},
      {"length_test_p", 0.0038},
      {"ancova_p_group", 0.895},
  };
}

json ttest_json(const std::optional<stats::TTestResult>& r) {
  if (!r) return nullptr;
  return {{"t", r->t}, {"df", r->df}, {"p_two_tailed", r->p_two_tailed}};
}

std::optional<stats::TTestResult> ttest_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return stats::TTestResult{j.at("t").get<double>(), j.at("df").get<double>(),
                            j.at("p_two_tailed").get<double>()};
}

}  // namespace

bool operator==(const StatsReport& a, const StatsReport& b) { return to_json(a) == to_json(b); }

json to_json(const StatsReport& report) {
  json sources = json::object();
  for (const auto& [source, s] : report.sources) {
    sources[std::string(to_string(source))] = {
        {"n", s.n}, {"mean", s.mean}, {"sample_std", opt(s.sample_std)}, {"histogram", s.histogram}};
  }
  json lengths = json::object();
  for (const auto& [source, s] : report.lengths) {
    lengths[std::string(to_string(source))] = {{"n", s.n}, {"mean", s.mean}, {"sample_std", opt(s.sample_std)}};
  }
  json ancova = nullptr;
  if (report.ancova) {
    ancova = {{"f_group", report.ancova->f_group},
              {"p_group", report.ancova->p_group},
              {"beta_length", opt(report.ancova->beta_length)},
              {"df_residual", report.ancova->df_residual}};
  }
  return {
      {"t_test_variant", report.t_test_variant},
      {"histogram_scores", {1, 2, 3, 4, 5}},
      {"sources", sources},
      {"score_test", ttest_json(report.score_test)},
      {"lengths", lengths},
      {"length_test", ttest_json(report.length_test)},
      {"ancova", ancova},
      {"diff_distribution",
       {{"support", {-4, -3, -2, -1, 0, 1, 2, 3, 4}},
        {"diffs", report.diff.diffs},
        {"histogram", report.diff.histogram},
        {"cumulative", report.diff.cumulative},
        {"exclusions", report.diff.exclusions}}},
      {"notes", report.notes},
      {"reference", reference_values()},
  };
}

StatsReport report_from_json(const json& j) {
  StatsReport r;
  try {
    r.t_test_variant = j.at("t_test_variant").get<std::string>();
    for (const auto& [name, s] : j.at("sources").items()) {
      SourceSummary summary;
      summary.n = s.at("n").get<std::size_t>();
      summary.mean = s.at("mean").get<double>();
      summary.sample_std = opt_from(s.at("sample_std"));
      summary.histogram = s.at("histogram").get<std::array<std::size_t, 5>>();
      r.sources[parse_source(name)] = summary;
    }
    r.score_test = ttest_from(j.at("score_test"));
    for (const auto& [name, s] : j.at("lengths").items()) {
      r.lengths[parse_source(name)] = {s.at("n").get<std::size_t>(), s.at("mean").get<double>(),
                                       opt_from(s.at("sample_std"))};
    }
    r.length_test = ttest_from(j.at("length_test"));
    if (const auto& a = j.at("ancova"); !a.is_null()) {
      r.ancova = stats::AncovaResult{a.at("f_group").get<double>(), a.at("p_group").get<double>(),
                                     opt_from(a.at("beta_length")), a.at("df_residual").get<double>()};
    }
    const auto& d = j.at("diff_distribution");
    r.diff.diffs = d.at("diffs").get<std::vector<int>>();
    r.diff.histogram = d.at("histogram").get<std::array<std::size_t, 9>>();
    r.diff.cumulative = d.at("cumulative").get<std::array<std::size_t, 9>>();
    r.diff.exclusions = d.at("exclusions").get<std::size_t>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidationError, std::string("report: ") + e.what());
  }
  return r;
}

std::string report_csv(const StatsReport& report) {
  std::string out = "source,statistic,value\n";
  const auto row = [&](std::string_view source, const std::string& stat, const std::optional<double>& v) {
    out += std::string(source) + "," + stat + "," + (v ? text::format_double(*v) : std::string()) + "\n";
  };
  for (const auto& [source, s] : report.sources) {
    const auto name = to_string(source);
    row(name, "n", static_cast<double>(s.n));
    row(name, "mean", s.mean);
    row(name, "sample_std", s.sample_std);
    for (std::size_t i = 0; i < 5; ++i) row(name, "count_" + std::to_string(i + 1), static_cast<double>(s.histogram[i]));
  }
  for (const auto& [source, s] : report.lengths) {
    const auto name = to_string(source);
    row(name, "length_n", static_cast<double>(s.n));
    row(name, "length_mean", s.mean);
    row(name, "length_sample_std", s.sample_std);
  }
  constexpr std::string_view kPair = "vsc_vs_appropriate";
  const auto ttest_rows = [&](const std::string& prefix, const std::optional<stats::TTestResult>& t) {
    row(kPair, prefix + "t", t ? std::optional(t->t) : std::nullopt);
    row(kPair, prefix + "df", t ? std::optional(t->df) : std::nullopt);
    row(kPair, prefix + "p_two_tailed", t ? std::optional(t->p_two_tailed) : std::nullopt);
  };
  ttest_rows(report.t_test_variant + "_", report.score_test);
  ttest_rows("length_" + report.t_test_variant + "_", report.length_test);
  row(kPair, "ancova_f_group", report.ancova ? std::optional(report.ancova->f_group) : std::nullopt);
  row(kPair, "ancova_p_group", report.ancova ? std::optional(report.ancova->p_group) : std::nullopt);
  row(kPair, "ancova_beta_length", report.ancova ? report.ancova->beta_length : std::nullopt);
  constexpr std::string_view kDiff = "vsc_minus_appropriate";
  for (int d = -4; d <= 4; ++d) {
    row(kDiff, "count_d" + std::to_string(d), static_cast<double>(report.diff.histogram[static_cast<std::size_t>(d + 4)]));
  }
  for (int d = -4; d <= 4; ++d) {
    row(kDiff, "cumulative_d" + std::to_string(d),
        static_cast<double>(report.diff.cumulative[static_cast<std::size_t>(d + 4)]));
  }
  row(kDiff, "exclusions", static_cast<double>(report.diff.exclusions));
  return out;
}

void export_report(const StatsReport& report, const std::string& path, ReportFormat format) {
  text::write_file(path, format == ReportFormat::kJson ? to_json(report).dump(2) + "\n" : report_csv(report));
}

StatsReport import_report(const std::string& path) {
  try {
    return report_from_json(json::parse(text::read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidationError, path + ": " + e.what());
  }
}

}  // namespace coached::eval
