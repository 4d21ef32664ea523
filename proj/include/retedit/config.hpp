#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "retedit/editor.hpp"
#include "retedit/embednet.hpp"
#include "retedit/retriever.hpp"
#include "retedit/synth.hpp"

namespace retedit {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a pipeline run needs. Serialized as flat `key = value` lines.
struct Config {
  std::string task = "synthetic";
  std::string work_dir = "run";

  SynthOptions synth;
  std::uint64_t data_seed = 0;
  /// "group": whole groups per split; "instance": every group is split.
  std::string split = "group";
  double train_ratio = 0.8;
  double valid_ratio = 0.1;
  double test_ratio = 0.1;
  int max_output_tokens = 150;
  int min_count = 1;

  RetrieverConfig retriever;
  EditorConfig editor;
  IndexOptions index;

  int beam_width = 5;
  int eval_workers = 1;
  /// 0 evaluates the whole test split.
  int eval_max_examples = 0;
  /// Reserved for development-set evaluation during training; 0 disables it.
  int dev_eval_every = 0;

  /// Sets one key from its text form; throws ConfigError for unknown keys or
  /// unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Checks ranges (positive sizes, kappa >= 0, ratios, ...).
  void validate() const;

  std::string to_text() const;
  static Config from_text(const std::string& text);
  static Config load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  /// FNV-1a of to_text() with work_dir blanked, so relocating a run keeps it.
  std::string hash() const;

  /// Applies one seed to every stage (data, synth, retriever, editor, index).
  void set_seed(std::uint64_t seed);

  bool operator==(const Config& other) const { return to_text() == other.to_text(); }
};

/// Key/value views of the per-module configs, used for checkpoint snapshots.
std::string retriever_config_text(const RetrieverConfig& cfg);
RetrieverConfig retriever_config_from_text(const std::string& text);
std::string editor_config_text(const EditorConfig& cfg);
EditorConfig editor_config_from_text(const std::string& text);

}  // namespace retedit
