#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coached/app.hpp"
#include "coached/error.hpp"
#include "coached/service.hpp"
#include "coached/text.hpp"

namespace {

using namespace coached;

coached::service::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

int run_ingest(const AppConfig& config, const std::vector<std::string>& paths) {
  const auto summary = app::ingest_paths(config, paths);
  for (const auto& [path, message] : summary.failed) std::cerr << "error: " << path << ": " << message << "\n";
  std::cout << "documents: " << summary.documents << "\n"
            << "chunks: " << summary.chunks << "\n"
            << "mean_chunk_chars: " << text::format_double(summary.mean_chunk_chars) << "\n";
  return summary.succeeded.empty() ? 1 : 0;
}

int run_index(const AppConfig& config) {
  std::unique_ptr<llm::Backend> backend;
  if (config.retrieval.embedder == "remote") backend = app::make_backend(config);
  const auto index = app::build_index_from_config(config, backend.get());
  std::cout << "dim: " << index.dim() << "\n"
            << "entries: " << index.entries.size() << "\n"
            << "embedder: " << index.embedder_tag << "\n"
            << "index: " << config.retrieval.index_path << "\n";
  return 0;
}

void print_trace(const agent::AgentTurn& turn) {
  std::cout << "--- trace " << turn.turn_id << "\n"
            << "status: " << agent::to_string(turn.status) << "\n";
  for (const auto& hit : turn.hits) {
    std::cout << "hit: " << hit.chunk_id << " " << text::format_double(hit.score) << "\n";
  }
  std::cout << "draft: " << turn.therapist_draft << "\n";
  if (turn.verdict) {
    std::cout << "verdict: " << agent::to_string(turn.verdict->kind) << "\n"
              << "feedback: " << turn.verdict->feedback << "\n";
    if (turn.verdict->replacement) std::cout << "replacement: " << *turn.verdict->replacement << "\n";
  } else if (!turn.error.empty()) {
    std::cout << "error: " << turn.error << "\n";
  }
  std::cout << "--- final\n";
}

int run_chat(const AppConfig& config, bool trace, std::string session_id) {
  auto engine = app::Engine::from_config(config);
  if (session_id.empty()) session_id = "cli-" + text::hex64(text::fnv1a64(text::utc_timestamp_now()));
  std::string line;
  while (std::getline(std::cin, line)) {
    if (text::trim(line).empty()) continue;
    try {
      const auto turn = engine->answer(session_id, line);
      if (trace) print_trace(turn);
      std::cout << turn.final_response << std::endl;
    } catch (const Error& e) {
      if (trace) std::cout << "--- trace\nstatus: backend_failed\nerror: " << e.what() << "\n--- final\n";
      std::cerr << "warning: " << e.what() << "\n";
      std::cout << engine->templates().fallback_reply << std::endl;
    }
  }
  return 0;
}

int run_serve(const AppConfig& config) {
  service::Service service(config, app::make_backend(config));
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on " << config.server.bind << ":" << config.server.port << "\n";
  service.listen(config.server.bind, config.server.port);
  g_service = nullptr;
  return 0;
}

int run_build_trials(const AppConfig& config, bool print) {
  const auto trials = eval::load_trial_bank(config.eval.trial_bank);
  const auto items = app::build_presentations(trials, config);
  app::write_presentations(config.eval.presentations_path, items);
  std::map<std::string, std::size_t> per_rater;
  for (const auto& p : items) ++per_rater[p.rater_id];
  for (const auto& [rater, count] : per_rater) std::cout << rater << ": " << count << " presentations\n";
  if (print) {
    for (const auto& p : items) std::cout << eval::to_json(p).dump() << "\n";
  }
  return 0;
}

int run_next(const AppConfig& config, const std::string& rater) {
  const auto items = app::read_presentations(config.eval.presentations_path);
  const eval::RatingStore store(config.logs.ratings);
  std::cout << app::next_item(items, store, rater).to_json().dump(2) << "\n";
  return 0;
}

int run_submit(const AppConfig& config, const std::string& rater, const std::string& trial, int position,
               int score) {
  const auto items = app::read_presentations(config.eval.presentations_path);
  const auto trials = eval::load_trial_bank(config.eval.trial_bank);
  eval::RatingStore store(config.logs.ratings);
  const auto rating = app::submit_rating(items, trials, trial, rater, position, score, store);
  std::cout << eval::rater_receipt(rating).dump() << "\n";
  return 0;
}

int run_report(const AppConfig& config, const std::string& format, std::string out) {
  const auto trials = eval::load_trial_bank(config.eval.trial_bank);
  const eval::RatingStore store(config.logs.ratings);
  const auto variant = config.eval.pooled_variance ? stats::TTestVariant::kPooled : stats::TTestVariant::kWelch;
  const auto report = eval::build_report(store.all(), trials, variant);
  const auto fmt = format == "csv" ? eval::ReportFormat::kCsv : eval::ReportFormat::kJson;
  if (out.empty()) out = config.eval.report_path;
  eval::export_report(report, out, fmt);
  std::cout << (fmt == eval::ReportFormat::kCsv ? eval::report_csv(report) : eval::to_json(report).dump(2) + "\n");
  return 0;
}

int run_replay_script(const AppConfig& config, const std::string& transcripts_path, const std::string& out) {
  const auto index = load_index(config.retrieval.index_path);
  const auto embedder = tfidf_embedder_for(index);
  if (!embedder) throw Error(ErrorKind::kConfigError, "replay-script needs a TF-IDF index");
  const auto templates = config.templates_path.empty() ? agent::PromptTemplates::defaults()
                                                       : agent::PromptTemplates::load(config.templates_path);
  const auto spec = app::build_replay_spec(app::load_transcripts(transcripts_path), index, *embedder, templates,
                                           app::answer_config(config));
  const std::string body = spec.to_json().dump(2) + "\n";
  if (out.empty()) {
    std::cout << body;
  } else {
    text::write_file(out, body);
    std::cout << "entries: " << spec.entries.size() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Retrieval-augmented CBT-I coaching pipeline"};
  cli.require_subcommand(1);
  std::string config_path;
  cli.add_option("-c,--config", config_path, "TOML configuration file");

  std::vector<std::string> ingest_paths;
  auto* ingest = cli.add_subcommand("ingest", "Normalize and chunk source documents");
  ingest->add_option("paths", ingest_paths, "Input files (.md, .txt, .jsonl)");

  cli.add_subcommand("index", "Build the vector index from the chunk file");

  bool trace = false;
  std::string session;
  auto* chat = cli.add_subcommand("chat", "Answer queries read line by line from stdin");
  chat->add_flag("--trace", trace, "Also print the draft, verdict and feedback");
  chat->add_option("--session", session, "Session id for the turn log");

  int port = -1;
  auto* serve = cli.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--port", port, "Port (overrides config)");

  auto* eval_cmd = cli.add_subcommand("eval", "Blind rating workflow");
  eval_cmd->require_subcommand(1);
  bool print = false;
  auto* build = eval_cmd->add_subcommand("build-trials", "Write blinded presentations for every rater");
  build->add_flag("--print", print, "Also print each presentation record");
  std::string rater;
  auto* next = eval_cmd->add_subcommand("next", "Show a rater's next unrated item");
  next->add_option("--rater", rater)->required();
  std::string trial;
  int position = -1;
  int score = 0;
  auto* submit = eval_cmd->add_subcommand("submit", "Record one rating");
  submit->add_option("--rater", rater)->required();
  submit->add_option("--trial", trial)->required();
  submit->add_option("--position", position)->required();
  submit->add_option("--score", score)->required();
  std::string format = "json";
  std::string report_out;
  auto* report = eval_cmd->add_subcommand("report", "Compute and write the statistics report");
  report->add_option("--format", format)->check(CLI::IsMember({"json", "csv"}));
  report->add_option("--out", report_out, "Output path (default: eval.report_path)");

  std::string transcripts;
  std::string script_out;
  auto* replay = cli.add_subcommand("replay-script", "Build a fingerprint-map script from transcripts");
  replay->add_option("transcripts", transcripts)->required();
  replay->add_option("-o,--out", script_out);

  CLI11_PARSE(cli, argc, argv);

  try {
    AppConfig config = load_config(config_path);
    if (*ingest) {
      if (ingest_paths.empty()) ingest_paths = config.corpus.paths;
      return run_ingest(config, ingest_paths);
    }
    if (cli.got_subcommand("index")) return run_index(config);
    if (*chat) return run_chat(config, trace, session);
    if (*serve) {
      if (port >= 0) config.server.port = port;
      return run_serve(config);
    }
    if (*eval_cmd) {
      if (*build) return run_build_trials(config, print);
      if (*next) return run_next(config, rater);
      if (*submit) return run_submit(config, rater, trial, position, score);
      if (*report) return run_report(config, format, report_out);
    }
    if (*replay) return run_replay_script(config, transcripts, script_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
