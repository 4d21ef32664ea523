#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace retedit {

using TokenSeq = std::vector<std::string>;
using TokenIds = std::vector<int>;

/// Named input fields in a fixed order. The order is part of the example's
/// identity: the retriever encodes each field with its own encoder.
using InputFields = std::vector<std::pair<std::string, TokenSeq>>;

struct Example {
  std::string id;
  std::string group_key;
  InputFields input_fields;
  TokenSeq output;

  /// All input-field tokens concatenated in field order.
  TokenSeq flat_input() const;

  bool operator==(const Example&) const = default;
};

using Dataset = std::vector<Example>;

struct DatasetSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
  std::uint64_t split_seed = 0;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  static const std::string& reserved_token(int id);

  Vocabulary();
  /// Builds from non-reserved tokens in id order (ids start at kNumReserved).
  explicit Vocabulary(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  /// Returns kUnk for out-of-vocabulary tokens.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenIds encode(const TokenSeq& seq) const;
  TokenSeq decode(const TokenIds& ids) const;

  /// {"tokens": {token: id, ...}, "reserved": {"pad": 0, ...}}
  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Whitespace separates tokens; every ASCII punctuation character is a token
/// of its own; all other bytes (including UTF-8 continuation bytes) form words.
TokenSeq tokenize(std::string_view text);
std::string detokenize(const TokenSeq& tokens);

/// Keeps the first example of each distinct (input_fields, output) content.
Dataset deduplicate(const Dataset& examples);

/// Drops examples whose output is longer than max_tokens (inclusive bound).
Dataset filter_by_length(const Dataset& examples, std::size_t max_tokens = 150);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

/// Assigns whole groups to splits. Throws CorpusError when there are fewer
/// groups than non-empty target splits.
DatasetSplit split_by_group(const Dataset& examples, SplitRatios ratios, std::uint64_t seed);

/// Splits each group's examples by the ratios (at least one stays in train),
/// so every group appears in training. Deterministic given seed.
DatasetSplit split_within_groups(const Dataset& examples, SplitRatios ratios, std::uint64_t seed);

/// Frequency-descending, then lexicographic, ids after the reserved block.
Vocabulary build_vocabulary(const Dataset& train, int min_count = 1);

/// One JSON object per line: {"id", "group", "input": {field: text}, "output"}.
/// Field order inside "input" is preserved.
Dataset load_jsonl(const std::filesystem::path& path);
Dataset parse_jsonl(std::string_view text);
void save_jsonl(const std::filesystem::path& path, const Dataset& examples);
std::string to_jsonl(const Dataset& examples);
std::string example_to_json(const Example& example);
Example example_from_json(std::string_view line);

}  // namespace retedit
