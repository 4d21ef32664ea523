#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "retedit/checkpoint.hpp"
#include "retedit/config.hpp"
#include "retedit/editor.hpp"
#include "retedit/eval.hpp"
#include "retedit/retriever.hpp"

namespace retedit {

/// A stage ran before the artifact it needs exists.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::filesystem::path& path, const std::string& producer)
      : std::runtime_error("missing " + path.string() + " (run `retedit " + producer + "` first)"),
        producer_(producer) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

using Logger = std::function<void(const std::string&)>;

/// File layout of a run directory.
struct RunPaths {
  std::filesystem::path dir;
  explicit RunPaths(std::filesystem::path d) : dir(std::move(d)) {}
  std::filesystem::path config() const { return dir / "config.txt"; }
  std::filesystem::path train() const { return dir / "train.jsonl"; }
  std::filesystem::path validation() const { return dir / "valid.jsonl"; }
  std::filesystem::path test() const { return dir / "test.jsonl"; }
  std::filesystem::path vocab() const { return dir / "vocab.json"; }
  std::filesystem::path retriever(RetrieverKind kind) const {
    return dir / ("retriever_" + std::string(to_string(kind)) + ".ckpt");
  }
  std::filesystem::path store(RetrieverKind kind) const {
    return dir / ("index_" + std::string(to_string(kind)) + ".bin");
  }
  std::filesystem::path editor() const { return dir / "editor.ckpt"; }
  std::filesystem::path seq2seq() const { return dir / "seq2seq.ckpt"; }
  std::filesystem::path report_csv() const { return dir / "report.csv"; }
  std::filesystem::path report_json() const { return dir / "report.json"; }
  std::filesystem::path report_txt() const { return dir / "report.txt"; }
  std::filesystem::path train_log(const std::string& what) const { return dir / ("train_log_" + what + ".csv"); }
};

struct StageCounts {
  std::size_t raw = 0;
  std::size_t filtered = 0;
  std::size_t deduplicated = 0;
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

/// Writes the synthetic corpus as JSONL; returns the number of examples.
std::size_t cmd_synth(const Config& cfg, const std::filesystem::path& out, const Logger& log = {});
/// tokenize -> filter_by_length -> deduplicate -> split -> save, plus the
/// training vocabulary and the effective config, into cfg.work_dir.
StageCounts cmd_ingest(const Config& cfg, const std::filesystem::path& raw, const Logger& log = {});
/// Trains the task (output-reconstructing) and input retrievers.
void cmd_train_retriever(const Config& cfg, const Logger& log = {});
/// Embeds the training set with both trained retrievers.
void cmd_build_index(const Config& cfg, const Logger& log = {});
/// Trains the editor on task-retrieved prototypes and the Seq2Seq baseline.
void cmd_train_editor(const Config& cfg, const Logger& log = {});
/// Scores every system on the test split; writes report.{csv,txt,json}.
/// Refuses checkpoints trained on a different training set unless forced.
std::vector<EvalReport> cmd_evaluate(const Config& cfg, bool force = false, const Logger& log = {});

struct Completion {
  std::string retrieved_id;
  double distance = 0.0;
  std::vector<TokenSeq> outputs;
  std::vector<double> logprobs;
};

/// Retrieves with the task retriever (excluding x.id when train_mode) and
/// beam-searches the editor; returns the top k outputs.
Completion cmd_complete(const Config& cfg, const Example& x, bool train_mode, int k, const Logger& log = {});

/// synth -> ingest -> train-retriever -> build-index -> train-editor -> evaluate.
std::vector<EvalReport> run_pipeline(const Config& cfg, const Logger& log = {});

/// Trained artifacts of a run directory, loaded together so retrievers can
/// point into the owned training set.
class Workspace {
 public:
  explicit Workspace(const Config& cfg);
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  const Config& config() const { return cfg_; }
  const RunPaths& paths() const { return paths_; }
  const Dataset& train() const { return train_; }
  const Dataset& validation() const { return validation_; }
  const Dataset& test() const { return test_; }
  const Vocabulary& vocab() const { return vocab_; }

  /// Loaded on first use; throw MissingArtifact when absent.
  const Retriever& retriever(RetrieverKind kind);
  const Editor& editor();
  const Editor& seq2seq();

  ReportMeta report_meta() const;

 private:
  Config cfg_;
  RunPaths paths_;
  Dataset train_, validation_, test_;
  Vocabulary vocab_;
  std::unique_ptr<Retriever> retrievers_[3];
  std::unique_ptr<Editor> editor_, seq2seq_;
};

}  // namespace retedit
