#include "retedit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "retedit/vmf.hpp"

namespace retedit::ad {

// ---------------------------------------------------------------------------
// ParamSet

ParamSet::ParamSet(const ParamSet& other) : params_(other.params_), inits_(other.inits_), index_(other.index_) {}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this != &other) {
    params_ = other.params_;
    inits_ = other.inits_;
    index_ = other.index_;
  }
  return *this;
}

Param& ParamSet::add(const std::string& name, int rows, int cols, Init init) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("parameter '" + name + "' needs positive shape");
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(Param{name, Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
  inits_.push_back(init);
  return params_.back();
}

Param& ParamSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second];
}

const Param& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second];
}

std::vector<Param*> ParamSet::all() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Param*> ParamSet::all() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ParamSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamSet::initialize(double scale, Rng& rng) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (inits_[i] == Init::Zero) {
      p.value.setZero();
      continue;
    }
    for (Eigen::Index c = 0; c < p.value.cols(); ++c)
      for (Eigen::Index r = 0; r < p.value.rows(); ++r) p.value(r, c) = rng.uniform(-scale, scale);
  }
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

double ParamSet::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params_) p.grad *= s;
  }
  return norm;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
    if (a.value != b.value) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape

namespace {

using MapMat = Eigen::Map<const Mat>;
using MapMatMut = Eigen::Map<Mat>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var Tape::push(Vec value, bool needs_grad) {
  nodes_.push_back(Node{std::move(value), Vec(), record_ && needs_grad, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::on_backward(Var out, std::function<void()> fn) {
  if (node(out).needs_grad) node(out).back = std::move(fn);
}

Var Tape::constant(Vec v) { return push(std::move(v), false); }

Var Tape::param(Param& p) {
  Vec v = Eigen::Map<const Vec>(p.value.data(), p.value.size());
  Var out = push(std::move(v), true);
  on_backward(out, [this, out, &p] { Eigen::Map<Vec>(p.grad.data(), p.grad.size()) += grad(out); });
  return out;
}

Var Tape::row(Param& p, int r) {
  require(r >= 0 && r < p.value.rows(), "row index out of range");
  Var out = push(p.value.row(r).transpose(), true);
  on_backward(out, [this, out, &p, r] { p.grad.row(r) += grad(out).transpose(); });
  return out;
}

Var Tape::matvec(Param& w, Var x) {
  require(w.value.cols() == dim(x), "matvec shape mismatch");
  Var out = push(w.value * value(x), true);
  on_backward(out, [this, out, x, &w] {
    const Vec& g = grad(out);
    w.grad.noalias() += g * value(x).transpose();
    if (needs(x)) grad(x).noalias() += w.value.transpose() * g;
  });
  return out;
}

Var Tape::affine(Param& w, Param& b, Var x) {
  require(w.value.cols() == dim(x) && b.value.rows() == w.value.rows(), "affine shape mismatch");
  Vec y = b.value.col(0);
  y.noalias() += w.value * value(x);
  Var out = push(std::move(y), true);
  on_backward(out, [this, out, x, &w, &b] {
    const Vec& g = grad(out);
    w.grad.noalias() += g * value(x).transpose();
    b.grad.col(0) += g;
    if (needs(x)) grad(x).noalias() += w.value.transpose() * g;
  });
  return out;
}

Var Tape::add(Var a, Var b) {
  require(dim(a) == dim(b), "add shape mismatch");
  Var out = push(value(a) + value(b), needs(a) || needs(b));
  on_backward(out, [this, out, a, b] {
    if (needs(a)) grad(a) += grad(out);
    if (needs(b)) grad(b) += grad(out);
  });
  return out;
}

Var Tape::sub(Var a, Var b) {
  require(dim(a) == dim(b), "sub shape mismatch");
  Var out = push(value(a) - value(b), needs(a) || needs(b));
  on_backward(out, [this, out, a, b] {
    if (needs(a)) grad(a) += grad(out);
    if (needs(b)) grad(b) -= grad(out);
  });
  return out;
}

Var Tape::mul(Var a, Var b) {
  require(dim(a) == dim(b), "mul shape mismatch");
  Var out = push(value(a).cwiseProduct(value(b)), needs(a) || needs(b));
  on_backward(out, [this, out, a, b] {
    if (needs(a)) grad(a) += grad(out).cwiseProduct(value(b));
    if (needs(b)) grad(b) += grad(out).cwiseProduct(value(a));
  });
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = push(value(a) * s, needs(a));
  on_backward(out, [this, out, a, s] { grad(a) += grad(out) * s; });
  return out;
}

Var Tape::sigmoid(Var a) {
  Vec y = (1.0 + (-value(a).array()).exp()).inverse().matrix();
  Var out = push(std::move(y), needs(a));
  on_backward(out, [this, out, a] {
    const Vec& y = value(out);
    grad(a).array() += grad(out).array() * y.array() * (1.0 - y.array());
  });
  return out;
}

Var Tape::tanh(Var a) {
  Var out = push(value(a).array().tanh().matrix(), needs(a));
  on_backward(out, [this, out, a] {
    const Vec& y = value(out);
    grad(a).array() += grad(out).array() * (1.0 - y.array().square());
  });
  return out;
}

Var Tape::concat(std::span<const Var> parts) {
  int total = 0;
  bool ng = false;
  for (Var p : parts) {
    total += dim(p);
    ng = ng || needs(p);
  }
  Vec y(total);
  int off = 0;
  for (Var p : parts) {
    y.segment(off, dim(p)) = value(p);
    off += dim(p);
  }
  Var out = push(std::move(y), ng);
  std::vector<Var> ps(parts.begin(), parts.end());
  on_backward(out, [this, out, ps = std::move(ps)] {
    int off = 0;
    for (Var p : ps) {
      const int n = dim(p);
      if (needs(p)) grad(p) += grad(out).segment(off, n);
      off += n;
    }
  });
  return out;
}

Var Tape::slice(Var a, int offset, int length) {
  require(offset >= 0 && length >= 0 && offset + length <= dim(a), "slice out of range");
  Var out = push(value(a).segment(offset, length), needs(a));
  on_backward(out, [this, out, a, offset, length] { grad(a).segment(offset, length) += grad(out); });
  return out;
}

Var Tape::dot(Var a, Var b) {
  require(dim(a) == dim(b), "dot shape mismatch");
  Var out = push(Vec::Constant(1, value(a).dot(value(b))), needs(a) || needs(b));
  on_backward(out, [this, out, a, b] {
    const double g = grad(out)[0];
    if (needs(a)) grad(a) += g * value(b);
    if (needs(b)) grad(b) += g * value(a);
  });
  return out;
}

Var Tape::sum(std::span<const Var> scalars) {
  double s = 0.0;
  bool ng = false;
  for (Var v : scalars) {
    require(dim(v) == 1, "sum expects scalar nodes");
    s += scalar(v);
    ng = ng || needs(v);
  }
  Var out = push(Vec::Constant(1, s), ng);
  std::vector<Var> vs(scalars.begin(), scalars.end());
  on_backward(out, [this, out, vs = std::move(vs)] {
    for (Var v : vs)
      if (needs(v)) grad(v)[0] += grad(out)[0];
  });
  return out;
}

Var Tape::normalize(Var a) {
  const double n = value(a).norm();
  if (!std::isfinite(n)) throw NonFiniteValue("cannot normalize a non-finite vector");
  require(n > 0.0, "cannot normalize a zero vector");
  Var out = push(value(a) / n, needs(a));
  on_backward(out, [this, out, a, n] {
    const Vec& y = value(out);
    const Vec& g = grad(out);
    grad(a) += (g - y * y.dot(g)) / n;
  });
  return out;
}

Var Tape::gru(const GruWeights& w, Var x, Var h) {
  const int hs = w.hidden_size();
  require(w.input->value.cols() == dim(x) && dim(h) == hs, "gru shape mismatch");
  Vec a = w.bias->value.col(0);
  a.noalias() += w.input->value * value(x);
  Vec c = w.hidden->value * value(h);
  Vec r = (1.0 + (-(a.segment(0, hs) + c.segment(0, hs)).array()).exp()).inverse().matrix();
  Vec z = (1.0 + (-(a.segment(hs, hs) + c.segment(hs, hs)).array()).exp()).inverse().matrix();
  Vec n = (a.segment(2 * hs, hs).array() + r.array() * c.segment(2 * hs, hs).array()).tanh().matrix();
  Vec hn = ((1.0 - z.array()) * n.array() + z.array() * value(h).array()).matrix();
  Var out = push(std::move(hn), true);
  if (!record_) return out;
  Vec cn = c.segment(2 * hs, hs);
  on_backward(out, [this, out, x, h, w, hs, r = std::move(r), z = std::move(z), n = std::move(n),
                    cn = std::move(cn)] {
    const Vec& g = grad(out);
    const Vec& hv = value(h);
    Vec da(3 * hs), dc(3 * hs);
    const Eigen::ArrayXd dn = g.array() * (1.0 - z.array());
    const Eigen::ArrayXd dz = g.array() * (hv.array() - n.array());
    const Eigen::ArrayXd dan = dn * (1.0 - n.array().square());
    const Eigen::ArrayXd dr = dan * cn.array();
    da.segment(0, hs) = (dr * r.array() * (1.0 - r.array())).matrix();
    da.segment(hs, hs) = (dz * z.array() * (1.0 - z.array())).matrix();
    da.segment(2 * hs, hs) = dan.matrix();
    dc.segment(0, 2 * hs) = da.segment(0, 2 * hs);
    dc.segment(2 * hs, hs) = (dan * r.array()).matrix();
    w.input->grad.noalias() += da * value(x).transpose();
    w.bias->grad.col(0) += da;
    w.hidden->grad.noalias() += dc * hv.transpose();
    if (needs(x)) grad(x).noalias() += w.input->value.transpose() * da;
    if (needs(h)) {
      grad(h).array() += g.array() * z.array();
      grad(h).noalias() += w.hidden->value.transpose() * dc;
    }
  });
  return out;
}

Var Tape::col_scores(Var keys, int key_dim, Var q) {
  require(key_dim > 0 && dim(keys) % key_dim == 0 && dim(q) == key_dim, "col_scores shape mismatch");
  const int n = dim(keys) / key_dim;
  MapMat k(value(keys).data(), key_dim, n);
  Var out = push(k.transpose() * value(q), needs(keys) || needs(q));
  on_backward(out, [this, out, keys, q, key_dim, n] {
    MapMat k(value(keys).data(), key_dim, n);
    const Vec& g = grad(out);
    if (needs(q)) grad(q).noalias() += k * g;
    if (needs(keys)) {
      MapMatMut gk(grad(keys).data(), key_dim, n);
      gk.noalias() += value(q) * g.transpose();
    }
  });
  return out;
}

Var Tape::col_mix(Var keys, int key_dim, Var weights) {
  require(key_dim > 0 && dim(keys) % key_dim == 0, "col_mix shape mismatch");
  const int n = dim(keys) / key_dim;
  require(dim(weights) == n, "col_mix weight count mismatch");
  MapMat k(value(keys).data(), key_dim, n);
  Var out = push(k * value(weights), needs(keys) || needs(weights));
  on_backward(out, [this, out, keys, weights, key_dim, n] {
    MapMat k(value(keys).data(), key_dim, n);
    const Vec& g = grad(out);
    if (needs(weights)) grad(weights).noalias() += k.transpose() * g;
    if (needs(keys)) {
      MapMatMut gk(grad(keys).data(), key_dim, n);
      gk.noalias() += g * value(weights).transpose();
    }
  });
  return out;
}

Var Tape::col_affine_tanh(Param& w, Param& b, Var keys, int key_dim) {
  require(key_dim > 0 && dim(keys) % key_dim == 0 && w.value.cols() == key_dim, "col_affine_tanh shape mismatch");
  const int n = dim(keys) / key_dim;
  const int m = static_cast<int>(w.value.rows());
  MapMat k(value(keys).data(), key_dim, n);
  Mat y = w.value * k;
  y.colwise() += b.value.col(0);
  y = y.array().tanh().matrix();
  Var out = push(Eigen::Map<const Vec>(y.data(), y.size()), true);
  on_backward(out, [this, out, keys, key_dim, n, m, &w, &b] {
    MapMat k(value(keys).data(), key_dim, n);
    MapMat y(value(out).data(), m, n);
    MapMat g(grad(out).data(), m, n);
    Mat dpre = (g.array() * (1.0 - y.array().square())).matrix();
    w.grad.noalias() += dpre * k.transpose();
    b.grad.col(0) += dpre.rowwise().sum();
    if (needs(keys)) {
      MapMatMut gk(grad(keys).data(), key_dim, n);
      gk.noalias() += w.value.transpose() * dpre;
    }
  });
  return out;
}

Var Tape::softmax(Var logits) {
  const Vec& l = value(logits);
  Vec p = (l.array() - l.maxCoeff()).exp().matrix();
  p /= p.sum();
  Var out = push(std::move(p), needs(logits));
  on_backward(out, [this, out, logits] {
    const Vec& p = value(out);
    const Vec& g = grad(out);
    grad(logits).array() += p.array() * (g.array() - p.dot(g));
  });
  return out;
}

Var Tape::log_sum_softmax(Var logits, std::span<const int> support) {
  require(!support.empty(), "log_sum_softmax needs a non-empty support");
  const Vec& l = value(logits);
  const int n = dim(logits);
  for (int i : support) require(i >= 0 && i < n, "support index out of range");
  const double m = l.maxCoeff();
  const double log_z = m + std::log((l.array() - m).exp().sum());
  double ms = -std::numeric_limits<double>::infinity();
  for (int i : support) ms = std::max(ms, l[i]);
  double acc = 0.0;
  for (int i : support) acc += std::exp(l[i] - ms);
  const double log_s = ms + std::log(acc);
  Var out = push(Vec::Constant(1, log_s - log_z), needs(logits));
  std::vector<int> sup(support.begin(), support.end());
  on_backward(out, [this, out, logits, sup = std::move(sup), log_z, log_s] {
    const double g = grad(out)[0];
    const Vec& l = value(logits);
    Vec& gl = grad(logits);
    gl.array() -= g * (l.array() - log_z).exp();
    for (int i : sup) gl[i] += g * std::exp(l[i] - log_s);
  });
  return out;
}

Var Tape::householder(Var mu, const Vec& z) {
  require(dim(mu) == z.size(), "householder shape mismatch");
  Var out = push(vmf::householder_apply(value(mu), z), needs(mu));
  on_backward(out, [this, out, mu, z] { grad(mu) += vmf::householder_vjp(value(mu), z, grad(out)); });
  return out;
}

void Tape::backward(Var loss, double seed) {
  if (!record_) throw std::logic_error("backward on a tape that does not record");
  require(dim(loss) == 1, "backward expects a scalar loss");
  if (!needs(loss)) return;
  for (auto& n : nodes_)
    if (n.needs_grad) n.grad = Vec::Zero(n.value.size());
  node(loss).grad[0] = seed;
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back) n.back();
  }
}

}  // namespace retedit::ad
