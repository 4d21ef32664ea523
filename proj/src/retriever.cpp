#include "retedit/retriever.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <queue>
#include <stdexcept>
#include <unordered_set>

namespace retedit {

static_assert(std::endian::native == std::endian::little, "embedding store assumes a little-endian host");

namespace {

constexpr double kUnitTolerance = 1e-6;
constexpr int kSplitAttempts = 8;

void check_query(const vmf::Vector& q, int dim, int k) {
  if (k < 1) throw std::invalid_argument("query needs k >= 1");
  if (q.size() != dim)
    throw std::invalid_argument("query dimension " + std::to_string(q.size()) + " does not match index dimension " +
                                std::to_string(dim));
}

std::vector<Neighbor> select_top(const std::vector<std::string>& ids, std::vector<std::pair<double, int>>& scored,
                                 int k) {
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  auto less = [&](const std::pair<double, int>& a, const std::pair<double, int>& b) {
    if (a.first != b.first) return a.first < b.first;
    return ids[static_cast<std::size_t>(a.second)] < ids[static_cast<std::size_t>(b.second)];
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(kk), scored.end(), less);
  std::vector<Neighbor> out;
  out.reserve(kk);
  for (std::size_t j = 0; j < kk; ++j) out.push_back({ids[static_cast<std::size_t>(scored[j].second)], scored[j].first});
  return out;
}

// ||x - q||^2 = ||x||^2 + ||q||^2 - 2<x, q>, the same expression on every path
// so LSH and exact results agree bit for bit on shared candidates.
std::vector<Neighbor> rank(const ExactIndex& index, const vmf::Vector& q, const std::vector<int>& candidates,
                           int k, const std::string* exclude_id) {
  const auto& data = index.data();
  const auto& ids = index.ids();
  const double qq = q.squaredNorm();
  std::vector<std::pair<double, int>> scored;
  scored.reserve(candidates.size());
  for (int i : candidates) {
    if (exclude_id && ids[static_cast<std::size_t>(i)] == *exclude_id) continue;
    scored.emplace_back(std::max(0.0, index.sq_norms()[i] + qq - 2.0 * data.col(i).dot(q)), i);
  }
  return select_top(ids, scored, k);
}

}  // namespace

// ---------------------------------------------------------------------------

ExactIndex::ExactIndex(std::vector<IndexEntry> entries) {
  if (entries.empty()) throw std::invalid_argument("cannot build an index over no entries");
  const auto d = entries.front().embedding.size();
  data_.resize(d, static_cast<Eigen::Index>(entries.size()));
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (e.embedding.size() != d)
      throw std::invalid_argument("dimension mismatch: entry " + e.example_id + " has " +
                                  std::to_string(e.embedding.size()) + ", expected " + std::to_string(d));
    if (std::abs(e.embedding.norm() - 1.0) > kUnitTolerance)
      throw std::invalid_argument("entry " + e.example_id + " is not unit norm");
    if (!seen.insert(e.example_id).second) throw std::invalid_argument("duplicate entry id " + e.example_id);
    data_.col(static_cast<Eigen::Index>(i)) = e.embedding;
    ids_.push_back(std::move(e.example_id));
  }
  sq_norms_ = data_.colwise().squaredNorm().transpose();
}

std::vector<Neighbor> ExactIndex::query(const vmf::Vector& q, int k, const std::string* exclude_id) const {
  check_query(q, dim(), k);
  const Eigen::VectorXd dots = data_.transpose() * q;
  const double qq = q.squaredNorm();
  Eigen::VectorXd dist = ((sq_norms_.array() + qq) - 2.0 * dots.array()).cwiseMax(0.0).matrix();
  std::vector<std::pair<double, int>> scored;
  scored.reserve(size());
  for (Eigen::Index i = 0; i < dist.size(); ++i)
    if (!exclude_id || ids_[static_cast<std::size_t>(i)] != *exclude_id) scored.emplace_back(dist[i], static_cast<int>(i));
  return select_top(ids_, scored, k);
}

// ---------------------------------------------------------------------------

LshIndex::LshIndex(std::vector<IndexEntry> entries, int num_trees, int max_leaf_size, std::uint64_t seed)
    : exact_(std::move(entries)), max_leaf_size_(max_leaf_size), seed_(seed) {
  if (num_trees < 1) throw std::invalid_argument("LSH index needs num_trees >= 1");
  if (max_leaf_size < 1) throw std::invalid_argument("LSH index needs max_leaf_size >= 1");
  normals_.resize(dim(), 0);
  Rng rng(mix_seed(seed, 7));
  std::vector<int> all(size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  for (int t = 0; t < num_trees; ++t) roots_.push_back(build_node(all, rng, 0));
  normals_.conservativeResize(Eigen::NoChange, num_normals_);
}

int LshIndex::build_node(std::vector<int> items, Rng& rng, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  if (static_cast<int>(items.size()) <= max_leaf_size_) {
    nodes_[id].items = std::move(items);
    return id;
  }
  const auto& data = exact_.data();
  const std::size_t n = items.size();
  std::vector<double> proj(n), sorted(n);
  for (int attempt = 0; attempt < kSplitAttempts; ++attempt) {
    vmf::Vector normal(dim());
    for (int i = 0; i < dim(); ++i) normal[i] = rng.normal();
    normal.normalize();
    for (std::size_t i = 0; i < n; ++i) proj[i] = normal.dot(data.col(items[i]));
    sorted = proj;
    std::sort(sorted.begin(), sorted.end());
    // Split point closest to the median where the projections differ.
    std::size_t cut = 0;
    for (std::size_t off = 0; off <= n / 2 && cut == 0; ++off) {
      for (std::size_t c : {n / 2 - off, n / 2 + off})
        if (c >= 1 && c < n && sorted[c - 1] < sorted[c]) {
          cut = c;
          break;
        }
    }
    if (cut == 0) continue;  // every projection equal along this normal
    const double threshold = 0.5 * (sorted[cut - 1] + sorted[cut]);
    std::vector<int> left, right;
    for (std::size_t i = 0; i < n; ++i) (proj[i] < threshold ? left : right).push_back(items[i]);
    if (num_normals_ == normals_.cols()) normals_.conservativeResize(Eigen::NoChange, 2 * num_normals_ + 16);
    normals_.col(num_normals_) = normal;
    const int normal_index = num_normals_++;
    const int l = build_node(std::move(left), rng, depth + 1);
    const int r = build_node(std::move(right), rng, depth + 1);
    nodes_[id].normal = normal_index;
    nodes_[id].threshold = threshold;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }
  // Only identical embeddings remain: keep them together.
  nodes_[id].items = std::move(items);
  return id;
}

std::vector<Neighbor> LshIndex::query(const vmf::Vector& q, int k, const std::string* exclude_id,
                                      int search_k) const {
  check_query(q, dim(), k);
  if (search_k <= 0) search_k = 50 * num_trees();
  std::priority_queue<std::pair<double, int>> frontier;
  for (int r : roots_) frontier.emplace(std::numeric_limits<double>::infinity(), r);
  std::vector<int> candidates;
  std::vector<char> seen(size(), 0);
  candidates.reserve(static_cast<std::size_t>(search_k) + static_cast<std::size_t>(max_leaf_size_));
  while (!frontier.empty() && static_cast<int>(candidates.size()) < search_k) {
    auto [priority, id] = frontier.top();
    frontier.pop();
    // Walk down the nearer side, queueing each farther side by its margin.
    while (nodes_[static_cast<std::size_t>(id)].normal >= 0) {
      const Node& node = nodes_[static_cast<std::size_t>(id)];
      const double margin = normals_.col(node.normal).dot(q) - node.threshold;
      if (margin >= 0.0) {
        frontier.emplace(std::min(priority, -margin), node.left);
        id = node.right;
      } else {
        frontier.emplace(std::min(priority, margin), node.right);
        id = node.left;
      }
    }
    for (int item : nodes_[static_cast<std::size_t>(id)].items)
      if (!seen[static_cast<std::size_t>(item)]) {
        seen[static_cast<std::size_t>(item)] = 1;
        candidates.push_back(item);
      }
  }
  return rank(exact_, q, candidates, k, exclude_id);
}

std::vector<int> LshIndex::leaf_of(int tree, int entry) const {
  int id = roots_.at(static_cast<std::size_t>(tree));
  const vmf::Vector x = exact_.data().col(entry);
  while (nodes_[static_cast<std::size_t>(id)].normal >= 0) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    id = normals_.col(node.normal).dot(x) < node.threshold ? node.left : node.right;
  }
  return nodes_[static_cast<std::size_t>(id)].items;
}

int LshIndex::largest_leaf() const {
  std::size_t m = 0;
  for (const auto& n : nodes_)
    if (n.normal < 0) m = std::max(m, n.items.size());
  return static_cast<int>(m);
}

int LshIndex::node_depth(int node) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.normal < 0) return 0;
  return 1 + std::max(node_depth(n.left), node_depth(n.right));
}

int LshIndex::depth() const {
  int d = 0;
  for (int r : roots_) d = std::max(d, node_depth(r));
  return d;
}

double recall_eval(const LshIndex& lsh, const ExactIndex& exact, const std::vector<vmf::Vector>& queries, int k,
                   int search_k) {
  if (queries.empty()) return 1.0;
  int hits = 0;
  for (const auto& q : queries) {
    const auto truth = exact.query(q, 1);
    const auto got = lsh.query(q, k, nullptr, search_k);
    hits += std::any_of(got.begin(), got.end(), [&](const Neighbor& n) { return n.example_id == truth[0].example_id; });
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

// ---------------------------------------------------------------------------

vmf::Vector lexical_embed(const Vocabulary& vocab, const TokenSeq& x) {
  vmf::Vector v = vmf::Vector::Zero(vocab.size());
  for (const auto& tok : x) v[vocab.id(tok)] += 1.0;
  const double n = v.norm();
  if (n == 0.0) {
    v[Vocabulary::kUnk] = 1.0;
    return v;
  }
  return v / n;
}

const char* to_string(RetrieverKind kind) {
  switch (kind) {
    case RetrieverKind::Task:
      return "task";
    case RetrieverKind::Input:
      return "input";
    case RetrieverKind::Lexical:
      return "lexical";
  }
  return "?";
}

RetrieverKind retriever_kind_from_string(const std::string& name) {
  if (name == "task") return RetrieverKind::Task;
  if (name == "input") return RetrieverKind::Input;
  if (name == "lexical") return RetrieverKind::Lexical;
  throw std::invalid_argument("unknown retriever kind '" + name + "' (expected task, input or lexical)");
}

// ---------------------------------------------------------------------------

Retriever::Retriever(RetrieverKind kind, const RetrieverNet& net, const Vocabulary& vocab, const Dataset& train,
                     IndexOptions opts)
    : kind_(kind), net_(std::make_shared<RetrieverNet>(net)), vocab_(&vocab), train_(&train), opts_(opts) {
  if (kind == RetrieverKind::Lexical) throw std::invalid_argument("lexical retrieval does not use a network");
  for (const auto& ex : train) entries_.push_back({ex.id, embed(ex)});
  build(opts);
}

Retriever::Retriever(const Vocabulary& vocab, const Dataset& train, IndexOptions opts)
    : kind_(RetrieverKind::Lexical), vocab_(&vocab), train_(&train), opts_(opts) {
  for (const auto& ex : train) entries_.push_back({ex.id, embed(ex)});
  build(opts);
}

Retriever::Retriever(RetrieverKind kind, std::shared_ptr<const RetrieverNet> net, const Vocabulary& vocab,
                     const Dataset& train, std::vector<IndexEntry> entries, IndexOptions opts)
    : kind_(kind), net_(std::move(net)), vocab_(&vocab), train_(&train), entries_(std::move(entries)), opts_(opts) {
  if (kind != RetrieverKind::Lexical && !net_) throw std::invalid_argument("retriever needs its network");
  if (entries_.size() != train.size()) throw std::invalid_argument("embedding store does not match the dataset");
  for (std::size_t i = 0; i < train.size(); ++i)
    if (entries_[i].example_id != train[i].id)
      throw std::invalid_argument("embedding store entry " + entries_[i].example_id + " does not match example " +
                                  train[i].id);
  build(opts);
}

void Retriever::build(IndexOptions opts) {
  if (entries_.empty()) throw std::invalid_argument("cannot retrieve from an empty training set");
  for (std::size_t i = 0; i < train_->size(); ++i) by_id_.emplace((*train_)[i].id, i);
  if (opts.use_lsh)
    lsh_ = std::make_unique<LshIndex>(entries_, opts.num_trees, opts.max_leaf_size, opts.seed);
  else
    exact_ = std::make_unique<ExactIndex>(entries_);
}

vmf::Vector Retriever::embed(const Example& x) const {
  if (kind_ == RetrieverKind::Lexical) return lexical_embed(*vocab_, x.flat_input());
  return net_->encode(net_->encode_fields(*vocab_, x)).values();
}

std::vector<Neighbor> Retriever::neighbors(const vmf::Vector& q, int k, const std::string* exclude_id) const {
  return lsh_ ? lsh_->query(q, k, exclude_id, opts_.search_k) : exact_->query(q, k, exclude_id);
}

Retriever::Hit Retriever::retrieve(const Example& x, const std::string* exclude_id) const {
  auto hits = neighbors(embed(x), 1, exclude_id);
  if (hits.empty()) throw std::runtime_error("retrieval found no candidate for example " + x.id);
  return Hit{&(*train_)[by_id_.at(hits[0].example_id)], hits[0].distance};
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kStoreMagic[6] = {'R', 'E', 'I', 'D', 'X', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error("truncated embedding store " + path.string());
  return v;
}

}  // namespace

void save_embeddings(const std::filesystem::path& path, const std::vector<IndexEntry>& entries,
                     std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto d = entries.empty() ? 0u : static_cast<std::uint32_t>(entries.front().embedding.size());
  out.write(kStoreMagic, sizeof kStoreMagic);
  put<std::uint32_t>(out, d);
  put<std::uint64_t>(out, entries.size());
  put<std::uint64_t>(out, seed);
  for (const auto& e : entries) {
    if (static_cast<std::uint32_t>(e.embedding.size()) != d) throw std::invalid_argument("ragged embeddings");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.example_id.size()));
    out.write(e.example_id.data(), static_cast<std::streamsize>(e.example_id.size()));
    out.write(reinterpret_cast<const char*>(e.embedding.data()), static_cast<std::streamsize>(d * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::pair<std::vector<IndexEntry>, std::uint64_t> load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding store " + path.string());
  char magic[6];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 6, kStoreMagic))
    throw std::runtime_error(path.string() + " is not an embedding store");
  const auto d = get<std::uint32_t>(in, path);
  const auto n = get<std::uint64_t>(in, path);
  const auto seed = get<std::uint64_t>(in, path);
  std::vector<IndexEntry> entries;
  entries.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    IndexEntry e;
    e.example_id.resize(get<std::uint32_t>(in, path));
    e.embedding.resize(d);
    if (!in.read(e.example_id.data(), static_cast<std::streamsize>(e.example_id.size())) ||
        !in.read(reinterpret_cast<char*>(e.embedding.data()), static_cast<std::streamsize>(d * sizeof(double))))
      throw std::runtime_error("truncated embedding store " + path.string());
    entries.push_back(std::move(e));
  }
  return {std::move(entries), seed};
}

}  // namespace retedit
