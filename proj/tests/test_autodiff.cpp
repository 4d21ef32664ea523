#include <cmath>
#include <functional>

#include "doctest.h"
#include "retedit/autodiff.hpp"
#include "retedit/vmf.hpp"

using namespace retedit;
using namespace retedit::ad;

namespace {

using LossFn = std::function<Var(Tape&)>;

double eval_loss(const LossFn& f) {
  Tape t(false);
  return t.scalar(f(t));
}

// Central differences on every parameter scalar against the tape gradient.
double max_grad_error(ParamSet& ps, const LossFn& f, double h = 1e-6) {
  ps.zero_grad();
  {
    Tape t;
    t.backward(f(t));
  }
  double worst = 0.0;
  for (Param* p : ps.all()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      const double up = eval_loss(f);
      p->value.data()[i] = orig - h;
      const double down = eval_loss(f);
      p->value.data()[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = p->grad.data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

ParamSet make_params(std::initializer_list<std::tuple<const char*, int, int>> shapes, std::uint64_t seed) {
  ParamSet ps;
  for (auto [name, r, c] : shapes) ps.add(name, r, c);
  Rng rng(seed);
  ps.initialize(0.7, rng);
  return ps;
}

}  // namespace

TEST_CASE("elementwise ops and reductions") {
  auto ps = make_params({{"a", 5, 1}, {"b", 5, 1}}, 1);
  auto& a = ps.get("a");
  auto& b = ps.get("b");
  LossFn f = [&](Tape& t) {
    Var x = t.param(a), y = t.param(b);
    Var m = t.mul(t.sigmoid(x), t.tanh(y));
    Var s = t.sub(t.add(m, t.scale(x, 0.3)), y);
    Var c = t.concat({s, t.slice(x, 1, 3)});
    Var n = t.normalize(c);
    std::vector<Var> parts = {t.dot(n, t.concat({y, t.slice(y, 0, 3)})), t.dot(x, x)};
    return t.sum(parts);
  };
  CHECK(max_grad_error(ps, f) < 1e-7);
}

TEST_CASE("affine, matvec and row lookups") {
  auto ps = make_params({{"W", 4, 3}, {"b", 4, 1}, {"E", 6, 3}, {"M", 3, 4}}, 2);
  LossFn f = [&](Tape& t) {
    Var x = t.row(ps.get("E"), 2);
    Var h = t.tanh(t.affine(ps.get("W"), ps.get("b"), x));
    Var y = t.matvec(ps.get("M"), h);
    return t.dot(y, t.row(ps.get("E"), 5));
  };
  CHECK(max_grad_error(ps, f) < 1e-7);
}

TEST_CASE("gru step gradients") {
  auto ps = make_params({{"Wi", 12, 3}, {"Wh", 12, 4}, {"bias", 12, 1}, {"x", 3, 3}, {"q", 4, 1}}, 3);
  GruWeights w{&ps.get("Wi"), &ps.get("Wh"), &ps.get("bias")};
  LossFn f = [&](Tape& t) {
    Var h = t.constant(Eigen::VectorXd::Constant(4, 0.1));
    for (int s = 0; s < 3; ++s) h = t.gru(w, t.row(ps.get("x"), s), h);
    return t.dot(h, t.param(ps.get("q")));
  };
  CHECK(max_grad_error(ps, f) < 1e-7);
}

TEST_CASE("gru matches the gate equations") {
  auto ps = make_params({{"Wi", 6, 2}, {"Wh", 6, 2}, {"bias", 6, 1}}, 4);
  GruWeights w{&ps.get("Wi"), &ps.get("Wh"), &ps.get("bias")};
  Vec x(2), h(2);
  x << 0.3, -0.8;
  h << 0.5, 0.2;
  Tape t(false);
  Vec out = t.value(t.gru(w, t.constant(x), t.constant(h)));
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const Mat& W = w.input->value;
  const Mat& U = w.hidden->value;
  const Mat& B = w.bias->value;
  for (int i = 0; i < 2; ++i) {
    auto a = [&](int g) { return W.row(g * 2 + i).dot(x) + B(g * 2 + i, 0); };
    auto c = [&](int g) { return U.row(g * 2 + i).dot(h); };
    const double r = sig(a(0) + c(0));
    const double z = sig(a(1) + c(1));
    const double n = std::tanh(a(2) + r * c(2));
    CHECK(std::abs(out[i] - ((1 - z) * n + z * h[i])) < 1e-14);
  }
}

TEST_CASE("column-stacked attention ops") {
  auto ps = make_params({{"K", 15, 1}, {"q", 3, 1}, {"Wc", 3, 3}, {"bc", 3, 1}}, 5);
  LossFn f = [&](Tape& t) {
    Var keys = t.param(ps.get("K"));
    Var q = t.param(ps.get("q"));
    Var attn = t.softmax(t.col_scores(keys, 3, q));
    Var ctx = t.col_mix(keys, 3, attn);
    Var proj = t.col_affine_tanh(ps.get("Wc"), ps.get("bc"), keys, 3);
    Var copy = t.col_scores(proj, 3, ctx);
    const std::vector<int> support = {1, 3};
    return t.log_sum_softmax(copy, support);
  };
  CHECK(max_grad_error(ps, f) < 1e-7);
}

TEST_CASE("log_sum_softmax agrees with explicit softmax") {
  Vec l(6);
  l << 0.1, 2.0, -1.0, 700.0, 699.5, 3.0;
  Tape t(false);
  Var v = t.constant(l);
  const std::vector<int> s = {3, 4, 0};
  const double got = t.scalar(t.log_sum_softmax(v, s));
  const double m = l.maxCoeff();
  const double z = (l.array() - m).exp().sum();
  const double want = std::log((std::exp(l[3] - m) + std::exp(l[4] - m) + std::exp(l[0] - m)) / z);
  CHECK(std::abs(got - want) < 1e-12);
  const std::vector<int> all = {0, 1, 2, 3, 4, 5};
  CHECK(std::abs(t.scalar(t.log_sum_softmax(v, all))) < 1e-12);
}

TEST_CASE("householder op differentiates through the mean") {
  auto ps = make_params({{"m", 6, 1}, {"g", 6, 1}}, 6);
  Rng rng(9);
  auto noise = vmf::draw_reparam_noise(6, 20.0, rng);
  Vec z = noise.frame_point();
  LossFn f = [&](Tape& t) {
    Var mu = t.normalize(t.param(ps.get("m")));
    return t.dot(t.householder(mu, z), t.param(ps.get("g")));
  };
  CHECK(max_grad_error(ps, f) < 1e-7);
}

TEST_CASE("param set bookkeeping") {
  ParamSet ps;
  ps.add("w", 3, 2);
  ps.add("b", 3, 1, Init::Zero);
  CHECK_THROWS(ps.add("w", 1, 1));
  CHECK_THROWS(ps.get("missing"));
  CHECK(ps.num_scalars() == 9);
  Rng r1(5), r2(5);
  ParamSet copy = ps;
  ps.initialize(0.08, r1);
  copy.initialize(0.08, r2);
  CHECK(ps == copy);
  CHECK(ps.get("b").value.isZero());
  CHECK(ps.get("w").value.cwiseAbs().maxCoeff() <= 0.08);
  ps.get("w").grad.setConstant(3.0);
  CHECK(std::abs(ps.grad_norm() - std::sqrt(54.0)) < 1e-12);
  ps.clip_grad_norm(1.0);
  CHECK(std::abs(ps.grad_norm() - 1.0) < 1e-12);
  // Copies own their storage.
  copy.get("w").value(0, 0) += 1.0;
  CHECK_FALSE(ps == copy);
}

TEST_CASE("inference tapes reject backward") {
  Tape t(false);
  Var x = t.constant(Vec::Ones(1));
  CHECK_THROWS(t.backward(x));
}
