#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "coached/stats.hpp"

namespace coached::eval {

enum class Source { kVsc, kAppropriate, kInappropriate };
inline constexpr std::array<Source, 3> kAllSources{Source::kVsc, Source::kAppropriate,
                                                   Source::kInappropriate};

std::string_view to_string(Source source);
Source parse_source(std::string_view name);

enum class SessionTag { kIntro, kDiary, kStimulusControl, kSleepRestriction, kRelaxation, kCognitive, kOther };

std::string_view to_string(SessionTag tag);
SessionTag parse_session_tag(std::string_view name);

struct CandidateResponse {
  Source source = Source::kVsc;
  std::string text;
  std::size_t length_chars = 0;  // code points in text
};

struct Trial {
  std::string trial_id;
  std::string query;
  SessionTag session_tag = SessionTag::kOther;
  std::array<CandidateResponse, 3> responses;

  const CandidateResponse& response(Source source) const;
};

// Throws Error(kValidationError) naming the offending record.
Trial trial_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Trial& trial);

// Empty file yields an empty bank.
std::vector<Trial> load_trial_bank(const std::string& path);
std::map<SessionTag, std::size_t> session_distribution(const std::vector<Trial>& trials);

struct BlindPresentation {
  std::string trial_id;
  std::string rater_id;
  std::string query;
  // permutation[position] = index into Trial::responses shown at that position
  std::array<int, 3> permutation{0, 1, 2};
  std::array<std::string, 3> blinded_items;
  std::uint64_t seed = 0;

  Source source_at(const Trial& trial, int position) const;
};

// Server-side record, including the permutation.
nlohmann::json to_json(const BlindPresentation& p);
BlindPresentation presentation_from_json(const nlohmann::json& j);
// What a rater may see: query and position-ordered texts, nothing else.
nlohmann::json rater_view(const BlindPresentation& p);

// Seeded, per-trial independent uniform permutations. The generator is keyed
// on (seed, rater_id, trial_id) so adding trials never reshuffles others.
std::vector<BlindPresentation> blind_shuffle(const std::vector<Trial>& trials,
                                             const std::string& rater_id, std::uint64_t seed);

// Contiguous split: rater i gets trials [i*per_rater, (i+1)*per_rater).
// per_rater == 0 gives every rater every trial.
std::map<std::string, std::vector<std::string>> assign_raters(const std::vector<Trial>& trials,
                                                              const std::vector<std::string>& raters,
                                                              std::size_t per_rater);

struct Rating {
  std::string trial_id;
  std::string rater_id;
  int position = 0;
  int score = 0;
  std::string timestamp;
  Source source = Source::kVsc;  // joined server-side; never sent to raters
};

nlohmann::json to_json(const Rating& r);
Rating rating_from_json(const nlohmann::json& j);
// Acknowledgement returned to the rater; carries no source.
nlohmann::json rater_receipt(const Rating& r);

// Append-only ratings log with (trial, rater, position) uniqueness enforced
// under a lock. An empty path keeps ratings in memory only.
class RatingStore {
 public:
  explicit RatingStore(std::string path = "");

  // Throws Error(kDuplicateRating).
  void insert(const Rating& rating);
  bool contains(const std::string& trial_id, const std::string& rater_id, int position) const;
  std::vector<Rating> all() const;

 private:
  std::string path_;
  mutable std::mutex mutex_;
  std::vector<Rating> ratings_;
  std::set<std::tuple<std::string, std::string, int>> keys_;
};

// Throws Error(kBadScore) for score outside 1..5, Error(kBadPosition) for a
// position outside 0..2 or a rater mismatch, Error(kDuplicateRating).
Rating record_rating(const BlindPresentation& presentation, const Trial& trial, int position,
                     int score, const std::string& rater_id, RatingStore& store);

struct SourceSummary {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> sample_std;  // needs n >= 2
  std::array<std::size_t, 5> histogram{};  // scores 1..5
};

// Sources with no ratings are absent from the map.
std::map<Source, SourceSummary> summarize_ratings(const std::vector<Rating>& ratings,
                                                  const std::vector<Trial>& trials);

struct DiffDistribution {
  std::vector<int> diffs;               // per included trial, trial order
  std::array<std::size_t, 9> histogram{};   // d = -4..4
  std::array<std::size_t, 9> cumulative{};
  std::size_t exclusions = 0;
};

/// Per trial, score(vsc) - score(appropriate) from the first rater (by id)
/// who rated both. Trials without such a rater count as exclusions.
DiffDistribution difference_scores(const std::vector<Rating>& ratings,
                                   const std::vector<Trial>& trials);

struct LengthSummary {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> sample_std;
};

struct StatsReport {
  std::string t_test_variant = "welch";
  std::map<Source, SourceSummary> sources;
  std::optional<stats::TTestResult> score_test;   // vsc vs appropriate
  std::map<Source, LengthSummary> lengths;         // over rated responses
  std::optional<stats::TTestResult> length_test;  // vsc vs appropriate, unpaired
  std::optional<stats::AncovaResult> ancova;
  DiffDistribution diff;
  std::vector<std::string> notes;  // why an optional statistic is missing

  friend bool operator==(const StatsReport& a, const StatsReport& b);
};

StatsReport build_report(const std::vector<Rating>& ratings, const std::vector<Trial>& trials,
                         stats::TTestVariant variant = stats::TTestVariant::kWelch);
// Canonical key order, with the reference values under "reference".
// under "reference" for side-by-side reading.
nlohmann::json to_json(const StatsReport& report);
StatsReport report_from_json(const nlohmann::json& j);
std::string report_csv(const StatsReport& report);

enum class ReportFormat { kJson, kCsv };
// Throws Error(kIoError).
void export_report(const StatsReport& report, const std::string& path, ReportFormat format);
StatsReport import_report(const std::string& path);

}  // namespace coached::eval
