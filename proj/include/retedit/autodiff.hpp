#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "retedit/rng.hpp"

// Reverse-mode differentiation over a per-example tape. Values are column
// vectors; matrices appear only as parameters or as column-stacked vectors
// (a dim x n matrix stored as n consecutive columns).
namespace retedit::ad {

/// A forward value overflowed to inf or NaN where an op needs it finite.
class NonFiniteValue : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;
};

enum class Init { Uniform, Zero };

/// Named parameter tensors with stable addresses, kept in insertion order.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  Param& add(const std::string& name, int rows, int cols, Init init = Init::Uniform);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;

  /// uniform(-scale, scale) for Init::Uniform tensors, zero otherwise, in
  /// insertion order from one stream.
  void initialize(double scale, Rng& rng);
  void zero_grad();
  double grad_norm() const;
  /// Rescales all gradients so their global norm is at most max_norm.
  double clip_grad_norm(double max_norm);

  bool operator==(const ParamSet& other) const;

 private:
  std::deque<Param> params_;
  std::vector<Init> inits_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Gated recurrent unit weights: gates stacked as [reset; update; candidate].
struct GruWeights {
  Param* input = nullptr;   // 3H x in
  Param* hidden = nullptr;  // 3H x H
  Param* bias = nullptr;    // 3H x 1
  int hidden_size() const { return static_cast<int>(hidden->value.cols()); }
};

class Tape {
 public:
  /// With record = false only forward values are computed.
  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Vec& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  double scalar(Var v) const { return value(v)[0]; }
  int dim(Var v) const { return static_cast<int>(value(v).size()); }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Vec v);
  /// Whole parameter flattened column-major.
  Var param(Param& p);
  /// One row of a parameter matrix, as a column vector (embedding lookup).
  Var row(Param& p, int r);
  Var matvec(Param& w, Var x);
  Var affine(Param& w, Param& b, Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
  Var slice(Var a, int offset, int length);
  Var dot(Var a, Var b);
  /// Scalar sum of scalar (size 1) nodes.
  Var sum(std::span<const Var> scalars);
  Var normalize(Var a);

  Var gru(const GruWeights& w, Var x, Var h);

  /// keys is dim x n column-stacked; returns keys^T q (n values).
  Var col_scores(Var keys, int key_dim, Var q);
  /// keys is dim x n column-stacked; returns keys * weights (dim values).
  Var col_mix(Var keys, int key_dim, Var weights);
  /// tanh(W k_j + b) for every column k_j of keys.
  Var col_affine_tanh(Param& w, Param& b, Var keys, int key_dim);

  Var softmax(Var logits);
  /// log sum_{i in support} softmax(logits)_i (scalar).
  Var log_sum_softmax(Var logits, std::span<const int> support);

  /// H(mu) z with H(mu) the Householder reflection taking e1 to mu.
  Var householder(Var mu, const Vec& z);

  /// Accumulates d(seed * loss)/d(param) into every reachable Param::grad.
  void backward(Var loss, double seed = 1.0);

 private:
  struct Node {
    Vec value;
    Vec grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  Var push(Vec value, bool needs_grad);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  Vec& grad(Var v) { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  void on_backward(Var out, std::function<void()> fn);

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace retedit::ad
