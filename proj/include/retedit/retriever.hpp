#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "retedit/corpus.hpp"
#include "retedit/embednet.hpp"
#include "retedit/vmf.hpp"

namespace retedit {

struct IndexEntry {
  std::string example_id;
  vmf::Vector embedding;
};

struct Neighbor {
  std::string example_id;
  double distance;  // squared Euclidean

  bool operator==(const Neighbor&) const = default;
};

/// Brute-force scan. Results ascend by distance, ties by example_id.
class ExactIndex {
 public:
  explicit ExactIndex(std::vector<IndexEntry> entries);

  std::vector<Neighbor> query(const vmf::Vector& q, int k, const std::string* exclude_id = nullptr) const;

  std::size_t size() const { return ids_.size(); }
  int dim() const { return static_cast<int>(data_.rows()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Eigen::MatrixXd& data() const { return data_; }
  const Eigen::VectorXd& sq_norms() const { return sq_norms_; }

 private:
  std::vector<std::string> ids_;
  Eigen::MatrixXd data_;  // d x n
  Eigen::VectorXd sq_norms_;
};

/// Forest of random projection trees. Each internal node splits its entries
/// at the median of their projections onto a random unit normal.
class LshIndex {
 public:
  LshIndex(std::vector<IndexEntry> entries, int num_trees, int max_leaf_size, std::uint64_t seed);

  /// Best-first search over all trees until search_k distinct candidates are
  /// gathered (search_k <= 0 means 50 * num_trees), then exact re-ranking.
  std::vector<Neighbor> query(const vmf::Vector& q, int k, const std::string* exclude_id = nullptr,
                              int search_k = 0) const;

  std::size_t size() const { return exact_.size(); }
  int dim() const { return exact_.dim(); }
  int num_trees() const { return static_cast<int>(roots_.size()); }
  int max_leaf_size() const { return max_leaf_size_; }
  std::uint64_t seed() const { return seed_; }
  const ExactIndex& exact() const { return exact_; }

  /// Entry positions of the leaf holding `entry` in tree `tree`.
  std::vector<int> leaf_of(int tree, int entry) const;
  /// Largest leaf and deepest path over all trees.
  int largest_leaf() const;
  int depth() const;

 private:
  struct Node {
    int normal = -1;  // row into normals_, -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<int> items;
  };

  int build_node(std::vector<int> items, Rng& rng, int depth);
  int node_depth(int node) const;

  ExactIndex exact_;
  int max_leaf_size_;
  std::uint64_t seed_;
  std::vector<Node> nodes_;
  std::vector<int> roots_;
  Eigen::MatrixXd normals_;  // d x num_splits
  int num_normals_ = 0;
};

/// Fraction of queries whose exact top-1 appears in the LSH top-k.
double recall_eval(const LshIndex& lsh, const ExactIndex& exact, const std::vector<vmf::Vector>& queries, int k,
                   int search_k = 0);

/// L2-normalized token counts over the vocabulary; OOV tokens count as UNK.
/// An empty input yields the unit vector on UNK.
vmf::Vector lexical_embed(const Vocabulary& vocab, const TokenSeq& x);

enum class RetrieverKind { Task, Input, Lexical };
const char* to_string(RetrieverKind kind);
RetrieverKind retriever_kind_from_string(const std::string& name);

struct IndexOptions {
  bool use_lsh = true;
  int num_trees = 50;
  int max_leaf_size = 16;
  int search_k = 0;
  std::uint64_t seed = 0;
};

/// Embeds training examples once and answers nearest-neighbor queries,
/// returning the retrieved training example (x', y').
class Retriever {
 public:
  struct Hit {
    const Example* example;
    double distance;
  };

  /// Task or Input retrieval through a trained network.
  Retriever(RetrieverKind kind, const RetrieverNet& net, const Vocabulary& vocab, const Dataset& train,
            IndexOptions opts);
  /// Lexical retrieval.
  Retriever(const Vocabulary& vocab, const Dataset& train, IndexOptions opts);
  /// From precomputed embeddings (embedding store), in dataset order.
  Retriever(RetrieverKind kind, std::shared_ptr<const RetrieverNet> net, const Vocabulary& vocab,
            const Dataset& train, std::vector<IndexEntry> entries, IndexOptions opts);

  RetrieverKind kind() const { return kind_; }
  vmf::Vector embed(const Example& x) const;
  Hit retrieve(const Example& x, const std::string* exclude_id = nullptr) const;
  std::vector<Neighbor> neighbors(const vmf::Vector& q, int k, const std::string* exclude_id = nullptr) const;
  const std::vector<IndexEntry>& entries() const { return entries_; }
  const Dataset& train() const { return *train_; }

 private:
  void build(IndexOptions opts);

  RetrieverKind kind_;
  std::shared_ptr<const RetrieverNet> net_;
  const Vocabulary* vocab_;
  const Dataset* train_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<IndexEntry> entries_;
  IndexOptions opts_;
  std::unique_ptr<ExactIndex> exact_;
  std::unique_ptr<LshIndex> lsh_;
};

/// Embedding store: "REIDX1", u32 d, u64 n, u64 seed, then n records of
/// (u32 id length, id bytes, d little-endian f64).
void save_embeddings(const std::filesystem::path& path, const std::vector<IndexEntry>& entries,
                     std::uint64_t seed);
std::pair<std::vector<IndexEntry>, std::uint64_t> load_embeddings(const std::filesystem::path& path);

}  // namespace retedit
