#include "coached/config.hpp"

#include <cstdlib>
#include <filesystem>

#include "coached/error.hpp"
#include "coached/text.hpp"

namespace coached {

using nlohmann::json;

void AppConfig::validate() const {
  try {
    chunking.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfigError, e.what());
  }
  if (retrieval.embedder != "tfidf" && retrieval.embedder != "remote") {
    throw Error(ErrorKind::kConfigError, "retrieval.embedder must be 'tfidf' or 'remote'");
  }
  if (!(retrieval.min_score >= -1.0 && retrieval.min_score <= 1.0)) {
    throw Error(ErrorKind::kConfigError, "retrieval.min_score must be in [-1, 1]");
  }
  if (!backend.base_url.empty() && !backend.scripted_spec_path.empty()) {
    throw Error(ErrorKind::kConfigError,
                "backend.base_url and backend.scripted_spec_path are mutually exclusive");
  }
  if (backend.temperature < 0.0) throw Error(ErrorKind::kConfigError, "backend.temperature < 0");
  if (backend.max_tokens <= 0) throw Error(ErrorKind::kConfigError, "backend.max_tokens <= 0");
  if (backend.retry_max < 0) throw Error(ErrorKind::kConfigError, "backend.retry_max < 0");
  if (backend.max_in_flight < 1) throw Error(ErrorKind::kConfigError, "backend.max_in_flight < 1");
  if (server.port < 0 || server.port > 65535) throw Error(ErrorKind::kConfigError, "server.port");
  if (eval.raters.empty()) throw Error(ErrorKind::kConfigError, "eval.raters is empty");
}

void AppConfig::require_backend() const {
  if (backend.base_url.empty() == backend.scripted_spec_path.empty()) {
    throw Error(ErrorKind::kConfigError,
                "configure exactly one of backend.base_url or backend.scripted_spec_path");
  }
}

json to_json(const AppConfig& c) {
  return {
      {"corpus",
       {{"paths", c.corpus.paths},
        {"documents_path", c.corpus.documents_path},
        {"chunks_path", c.corpus.chunks_path}}},
      {"chunking",
       {{"strategy", std::string(to_string(c.chunking.strategy))},
        {"target_chars", c.chunking.target_chars},
        {"overlap_chars", c.chunking.overlap_chars},
        {"separators", c.chunking.separators},
        {"boundary_similarity_quantile", c.chunking.boundary_similarity_quantile},
        {"min_chunk_chars", c.chunking.min_chunk_chars}}},
      {"retrieval",
       {{"k", c.retrieval.k},
        {"min_score", c.retrieval.min_score},
        {"index_path", c.retrieval.index_path},
        {"embedder", c.retrieval.embedder},
        {"session_tag", c.retrieval.session_tag},
        {"filter_by_session", c.retrieval.filter_by_session}}},
      {"backend",
       {{"base_url", c.backend.base_url},
        {"scripted_spec_path", c.backend.scripted_spec_path},
        {"model_id", c.backend.model_id},
        {"embedding_model_id", c.backend.embedding_model_id},
        {"api_key", c.backend.api_key},
        {"temperature", c.backend.temperature},
        {"max_tokens", c.backend.max_tokens},
        {"retry_max", c.backend.retry_max},
        {"timeout_ms", c.backend.timeout_ms},
        {"max_in_flight", c.backend.max_in_flight}}},
      {"templates", {{"path", c.templates_path}}},
      {"logs", {{"turn_log", c.logs.turn_log}, {"ratings", c.logs.ratings}}},
      {"eval",
       {{"trial_bank", c.eval.trial_bank},
        {"presentations_path", c.eval.presentations_path},
        {"report_path", c.eval.report_path},
        {"seed", c.eval.seed},
        {"raters", c.eval.raters},
        {"trials_per_rater", c.eval.trials_per_rater},
        {"pooled_variance", c.eval.pooled_variance}}},
      {"server", {{"bind", c.server.bind}, {"port", c.server.port}}},
  };
}

AppConfig config_from_json(const json& j) {
  AppConfig c;
  try {
    const auto& corpus = j.at("corpus");
    c.corpus.paths = corpus.at("paths").get<std::vector<std::string>>();
    c.corpus.documents_path = corpus.at("documents_path").get<std::string>();
    c.corpus.chunks_path = corpus.at("chunks_path").get<std::string>();

    const auto& ch = j.at("chunking");
    c.chunking.strategy = parse_chunk_strategy(ch.at("strategy").get<std::string>());
    c.chunking.target_chars = ch.at("target_chars").get<std::size_t>();
    c.chunking.overlap_chars = ch.at("overlap_chars").get<std::size_t>();
    c.chunking.separators = ch.at("separators").get<std::vector<std::string>>();
    c.chunking.boundary_similarity_quantile = ch.at("boundary_similarity_quantile").get<double>();
    c.chunking.min_chunk_chars = ch.at("min_chunk_chars").get<std::size_t>();

    const auto& r = j.at("retrieval");
    c.retrieval.k = r.at("k").get<std::size_t>();
    c.retrieval.min_score = r.at("min_score").get<double>();
    c.retrieval.index_path = r.at("index_path").get<std::string>();
    c.retrieval.embedder = r.at("embedder").get<std::string>();
    c.retrieval.session_tag = r.at("session_tag").get<std::string>();
    c.retrieval.filter_by_session = r.at("filter_by_session").get<bool>();

    const auto& b = j.at("backend");
    c.backend.base_url = b.at("base_url").get<std::string>();
    c.backend.scripted_spec_path = b.at("scripted_spec_path").get<std::string>();
    c.backend.model_id = b.at("model_id").get<std::string>();
    c.backend.embedding_model_id = b.at("embedding_model_id").get<std::string>();
    c.backend.api_key = b.at("api_key").get<std::string>();
    c.backend.temperature = b.at("temperature").get<double>();
    c.backend.max_tokens = b.at("max_tokens").get<int>();
    c.backend.retry_max = b.at("retry_max").get<int>();
    c.backend.timeout_ms = b.at("timeout_ms").get<int>();
    c.backend.max_in_flight = b.at("max_in_flight").get<int>();

    c.templates_path = j.at("templates").at("path").get<std::string>();
    c.logs.turn_log = j.at("logs").at("turn_log").get<std::string>();
    c.logs.ratings = j.at("logs").at("ratings").get<std::string>();

    const auto& e = j.at("eval");
    c.eval.trial_bank = e.at("trial_bank").get<std::string>();
    c.eval.presentations_path = e.at("presentations_path").get<std::string>();
    c.eval.report_path = e.at("report_path").get<std::string>();
    c.eval.seed = e.at("seed").get<std::uint64_t>();
    c.eval.raters = e.at("raters").get<std::vector<std::string>>();
    c.eval.trials_per_rater = e.at("trials_per_rater").get<std::size_t>();
    c.eval.pooled_variance = e.at("pooled_variance").get<bool>();

    c.server.bind = j.at("server").at("bind").get<std::string>();
    c.server.port = j.at("server").at("port").get<int>();
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kConfigError, ex.what());
  }
  return c;
}

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

namespace {

const std::vector<std::pair<std::string, std::string>>& path_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys{
      {"corpus", "documents_path"},  {"corpus", "chunks_path"},    {"retrieval", "index_path"},
      {"backend", "scripted_spec_path"}, {"templates", "path"},    {"logs", "turn_log"},
      {"logs", "ratings"},           {"eval", "trial_bank"},       {"eval", "presentations_path"},
      {"eval", "report_path"},
  };
  return keys;
}

std::string resolve(const std::filesystem::path& base, const std::string& value) {
  if (value.empty()) return value;
  std::filesystem::path p(value);
  if (p.is_absolute()) return value;
  return (base / p).lexically_normal().string();
}

// Coerces an environment string to the JSON type of the default it replaces.
json coerce(const json& like, const std::string& raw, const std::string& name) {
  try {
    if (like.is_boolean()) {
      if (raw == "1" || raw == "true" || raw == "TRUE" || raw == "yes") return true;
      if (raw == "0" || raw == "false" || raw == "FALSE" || raw == "no") return false;
      throw Error(ErrorKind::kConfigError, name + ": expected a boolean");
    }
    if (like.is_number_unsigned()) {
      if (!raw.empty() && raw.front() == '-') throw Error(ErrorKind::kConfigError, name + ": negative");
      return static_cast<std::uint64_t>(std::stoull(raw));
    }
    if (like.is_number_integer()) return static_cast<std::int64_t>(std::stoll(raw));
    if (like.is_number_float()) return std::stod(raw);
    if (like.is_array()) {
      if (!raw.empty() && raw.front() == '[') return json::parse(raw);
      json arr = json::array();
      std::size_t pos = 0;
      while (pos <= raw.size()) {
        std::size_t comma = raw.find(',', pos);
        if (comma == std::string::npos) comma = raw.size();
        const std::string item = text::trim(std::string_view(raw).substr(pos, comma - pos));
        if (!item.empty()) arr.push_back(item);
        pos = comma + 1;
      }
      return arr;
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::kConfigError, name + ": cannot parse '" + raw + "'");
  } catch (const json::exception&) {
    throw Error(ErrorKind::kConfigError, name + ": cannot parse '" + raw + "'");
  }
  return raw;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

void clear_other_route(json& backend, const std::string& set_key) {
  if (set_key == "base_url") backend["scripted_spec_path"] = "";
  if (set_key == "scripted_spec_path") backend["base_url"] = "";
}

}  // namespace

AppConfig load_config(const std::string& path, const EnvLookup& env) {
  json merged = to_json(AppConfig{});

  if (!path.empty()) {
    const json file = parse_toml(text::read_file(path));
    const auto base = std::filesystem::absolute(path).parent_path();
    for (const auto& [section, values] : file.items()) {
      if (!merged.contains(section)) {
        throw Error(ErrorKind::kConfigError, "unknown config section [" + section + "]");
      }
      if (!values.is_object()) throw Error(ErrorKind::kConfigError, "[" + section + "] must be a table");
      bool backend_route_set = false;
      for (const auto& [key, value] : values.items()) {
        if (!merged[section].contains(key)) {
          throw Error(ErrorKind::kConfigError, "unknown config key " + section + "." + key);
        }
        if (section == "backend" && (key == "base_url" || key == "scripted_spec_path")) {
          if (backend_route_set) {
            throw Error(ErrorKind::kConfigError,
                        "backend.base_url and backend.scripted_spec_path are mutually exclusive");
          }
          backend_route_set = !value.get<std::string>().empty();
          clear_other_route(merged["backend"], key);
        }
        merged[section][key] = value;
      }
    }
    for (const auto& [section, key] : path_keys()) {
      if (file.contains(section) && file[section].contains(key)) {
        merged[section][key] = resolve(base, merged[section][key].get<std::string>());
      }
    }
    if (file.contains("corpus") && file["corpus"].contains("paths")) {
      for (auto& p : merged["corpus"]["paths"]) p = resolve(base, p.get<std::string>());
    }
  }

  if (env) {
    for (auto& [section, values] : merged.items()) {
      for (auto& [key, value] : values.items()) {
        const std::string name = "COACHED_" + upper(section) + "_" + upper(key);
        if (auto raw = env(name)) {
          if (section == "backend" && (key == "base_url" || key == "scripted_spec_path") &&
              !raw->empty()) {
            clear_other_route(merged["backend"], key);
          }
          value = coerce(value, *raw, name);
        }
      }
    }
    if (auto key = env("COACHED_API_KEY")) merged["backend"]["api_key"] = *key;
  }

  AppConfig config = config_from_json(merged);
  config.validate();
  return config;
}

}  // namespace coached
