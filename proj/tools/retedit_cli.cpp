#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "retedit/pipeline.hpp"

using namespace retedit;
namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 2;
constexpr int kMissing = 3;
constexpr int kNumeric = 4;

void log_stderr(const std::string& msg) { std::cerr << msg << std::endl; }

std::string read_all(std::istream& in) {
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Example read_record(const std::string& path) {
  std::string text;
  if (path == "-") {
    text = read_all(std::cin);
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact(path, "synth");
    text = read_all(in);
  }
  const auto records = parse_jsonl(text);
  if (records.empty()) throw CorpusError("no record in " + path);
  return records.front();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieve-and-edit structured output prediction"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every stage");
  std::map<std::string, std::string> overrides;
  const Config defaults;
  for (const auto& key : Config::keys())
    app.add_option("--" + key, overrides[key], "default: " + defaults.get(key))->group("Config keys");
  app.add_option("--dev-eval-every", overrides["eval.dev_eval_every"], "Reserved; no early stopping");

  auto* synth = app.add_subcommand("synth", "Write the synthetic templated corpus");
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output JSONL (default <work_dir>/raw.jsonl)");

  auto* ingest = app.add_subcommand("ingest", "Tokenize, filter, deduplicate and split a raw corpus");
  std::string raw_path;
  ingest->add_option("raw,--raw", raw_path, "Raw JSONL corpus")->required();

  auto* train_ret = app.add_subcommand("train-retriever", "Train the task and input retrievers");
  auto* build_idx = app.add_subcommand("build-index", "Embed the training set");
  auto* train_ed = app.add_subcommand("train-editor", "Train the editor and the Seq2Seq baseline");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate every system on the test split");
  bool force = false;
  evaluate->add_flag("--force", force, "Ignore dataset hash mismatches");

  auto* complete = app.add_subcommand("complete", "Retrieve and edit one input record");
  std::string input_path = "-";
  int k = 5;
  bool train_mode = false;
  complete->add_option("input,--input", input_path, "JSONL record ('-' reads stdin)");
  complete->add_option("-k,--k", k, "Number of outputs")->check(CLI::PositiveNumber);
  complete->add_flag("--train-mode", train_mode, "Exclude the record's own id from retrieval");

  auto* report = app.add_subcommand("report", "Print saved reports");
  std::vector<std::string> report_paths;
  std::string format = "table";
  bool report_force = false;
  report->add_option("reports,--reports", report_paths, "report.json files (default <work_dir>/report.json)");
  report->add_option("--format", format)->check(CLI::IsMember({"table", "csv", "json"}));
  report->add_flag("--force", report_force, "Combine reports with different dataset hashes");

  auto* pipeline = app.add_subcommand("pipeline", "synth through evaluate in one process");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  Config cfg;
  try {
    if (!config_path.empty()) cfg = Config::load(config_path);
    if (*seed_opt) cfg.set_seed(seed);
    for (const auto& key : Config::keys()) {
      if (app.count("--" + key) > 0) cfg.set(key, overrides[key]);
    }
    if (app.count("--dev-eval-every") > 0) cfg.set("eval.dev_eval_every", overrides["eval.dev_eval_every"]);
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kUsage;
  }

  try {
    if (synth->parsed()) {
      cmd_synth(cfg, synth_out.empty() ? fs::path(cfg.work_dir) / "raw.jsonl" : fs::path(synth_out), log_stderr);
    } else if (ingest->parsed()) {
      if (!fs::exists(raw_path)) throw MissingArtifact(raw_path, "synth");
      cmd_ingest(cfg, raw_path, log_stderr);
    } else if (train_ret->parsed()) {
      cmd_train_retriever(cfg, log_stderr);
    } else if (build_idx->parsed()) {
      cmd_build_index(cfg, log_stderr);
    } else if (train_ed->parsed()) {
      cmd_train_editor(cfg, log_stderr);
    } else if (evaluate->parsed()) {
      std::cout << format_table(cmd_evaluate(cfg, force, log_stderr));
    } else if (complete->parsed()) {
      const Example x = read_record(input_path);
      const auto c = cmd_complete(cfg, x, train_mode, k, log_stderr);
      std::cout << "retrieved\t" << c.retrieved_id << "\t" << c.distance << "\n";
      for (std::size_t i = 0; i < c.outputs.size(); ++i)
        std::cout << c.logprobs[i] << "\t" << detokenize(c.outputs[i]) << "\n";
    } else if (report->parsed()) {
      if (report_paths.empty()) report_paths.push_back((RunPaths(cfg.work_dir).report_json()).string());
      std::vector<EvalReport> reports;
      for (const auto& path : report_paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw MissingArtifact(path, "evaluate");
        for (auto& r : reports_from_json(read_all(in))) reports.push_back(std::move(r));
      }
      check_comparable(reports, report_force);
      if (format == "csv") std::cout << reports_to_csv(reports);
      else if (format == "json") std::cout << reports_to_json(reports);
      else std::cout << format_table(reports);
    } else if (pipeline->parsed()) {
      std::cout << format_table(run_pipeline(cfg, log_stderr));
    }
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kMissing;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << std::endl;
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
