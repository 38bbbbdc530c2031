#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "coached/corpus.hpp"

namespace coached {

// The TOML subset the configuration files use: tables, dotted keys, basic and
// literal strings (single and multi-line), integers, floats, booleans, arrays
// and inline tables. Dates are not supported. Throws Error(kConfigError).
nlohmann::json parse_toml(std::string_view source);

struct AppConfig {
  struct Corpus {
    std::vector<std::string> paths;
    std::string documents_path = "data/documents.jsonl";
    std::string chunks_path = "data/chunks.jsonl";
  } corpus;

  ChunkingPolicy chunking;

  struct Retrieval {
    std::size_t k = 4;
    double min_score = 0.05;
    std::string index_path = "data/index.jsonl";
    std::string embedder = "tfidf";  // or "remote"
    std::string session_tag = "general";
    bool filter_by_session = false;
  } retrieval;

  struct Backend {
    std::string base_url;
    std::string scripted_spec_path;
    std::string model_id = "local";
    std::string embedding_model_id = "local-embed";
    std::string api_key;
    double temperature = 0.0;
    int max_tokens = 512;
    int retry_max = 2;
    int timeout_ms = 60000;
    int max_in_flight = 4;
  } backend;

  std::string templates_path;  // empty: built-in templates

  struct Logs {
    std::string turn_log = "data/turns.jsonl";
    std::string ratings = "data/ratings.jsonl";
  } logs;

  struct Eval {
    std::string trial_bank = "data/trials.jsonl";
    std::string presentations_path = "data/presentations.jsonl";
    std::string report_path = "data/report.json";
    std::uint64_t seed = 7;
    std::vector<std::string> raters{"rater1", "rater2"};
    std::size_t trials_per_rater = 50;  // 0: every rater rates every trial
    bool pooled_variance = false;
  } eval;

  struct Server {
    std::string bind = "127.0.0.1";
    int port = 8080;
  } server;

  // Chunking policy, retrieval ranges, and no more than one backend route.
  void validate() const;
  // Exactly one of base_url / scripted_spec_path. Throws Error(kConfigError).
  void require_backend() const;
};

nlohmann::json to_json(const AppConfig& config);
AppConfig config_from_json(const nlohmann::json& j);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

/// Defaults, then the TOML file (if `path` is non-empty), then COACHED_*
/// environment variables: COACHED_<SECTION>_<KEY> (e.g. COACHED_RETRIEVAL_K,
/// COACHED_TEMPLATES_PATH) plus COACHED_API_KEY. Relative paths in the file
/// resolve against the file's directory. Setting either backend route in a
/// higher layer clears the other from lower layers.
AppConfig load_config(const std::string& path, const EnvLookup& env = process_env);

}  // namespace coached
