#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "retedit/autodiff.hpp"
#include "retedit/corpus.hpp"

namespace retedit {

class Editor;
class RetrieverNet;

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Tensor {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;  // row-major
  bool operator==(const Tensor&) const = default;
};

/// Binary container: magic, version, kind, metadata, vocabulary, config
/// snapshot and named float64 tensors. Integers are little-endian.
struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  Vocabulary vocab;
  std::string config;
  std::vector<Tensor> tensors;

  bool operator==(const Checkpoint& other) const {
    return kind == other.kind && meta == other.meta && vocab == other.vocab && config == other.config &&
           tensors == other.tensors;
  }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

std::vector<Tensor> tensors_from(const ad::ParamSet& params);
/// Copies tensors into params by name; shapes and the name set must match.
void load_tensors(ad::ParamSet& params, const std::vector<Tensor>& tensors);

Checkpoint retriever_checkpoint(const RetrieverNet& net, const Vocabulary& vocab, const std::string& kind);
RetrieverNet retriever_from_checkpoint(const Checkpoint& ckpt);
Checkpoint editor_checkpoint(const Editor& editor, const std::string& kind);
Editor editor_from_checkpoint(const Checkpoint& ckpt);

}  // namespace retedit
