#include "retedit/nn.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "retedit/rng.hpp"

namespace retedit::nn {

ad::GruWeights make_gru(ad::ParamSet& ps, const std::string& prefix, int input_size, int hidden_size) {
  ad::GruWeights w;
  w.input = &ps.add(prefix + ".w_in", 3 * hidden_size, input_size);
  w.hidden = &ps.add(prefix + ".w_hid", 3 * hidden_size, hidden_size);
  w.bias = &ps.add(prefix + ".bias", 3 * hidden_size, 1, ad::Init::Zero);
  return w;
}

GruStack GruStack::create(ad::ParamSet& ps, const std::string& prefix, int input_size, int hidden_size,
                          int depth) {
  if (depth < 1) throw std::invalid_argument("GRU depth must be >= 1");
  GruStack s;
  for (int l = 0; l < depth; ++l)
    s.layers.push_back(make_gru(ps, prefix + ".l" + std::to_string(l), l == 0 ? input_size : hidden_size,
                                hidden_size));
  return s;
}

Var GruStack::step(Tape& t, Var input, std::vector<Var>& state) const {
  Var x = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    state[l] = t.gru(layers[l], x, state[l]);
    x = state[l];
  }
  return x;
}

BiEncoder BiEncoder::create(ad::ParamSet& ps, const std::string& prefix, int input_size, int hidden_size,
                            int depth) {
  if (depth < 1) throw std::invalid_argument("encoder depth must be >= 1");
  BiEncoder e;
  for (int l = 0; l < depth; ++l) {
    const int in = l == 0 ? input_size : 2 * hidden_size;
    e.forward.push_back(make_gru(ps, prefix + ".fwd" + std::to_string(l), in, hidden_size));
    e.backward.push_back(make_gru(ps, prefix + ".bwd" + std::to_string(l), in, hidden_size));
  }
  return e;
}

BiEncoder::Output BiEncoder::run(Tape& t, std::span<const Var> inputs) const {
  if (inputs.empty()) throw std::invalid_argument("BiEncoder::run needs at least one input");
  const int n = static_cast<int>(inputs.size());
  const Var zero = t.constant(ad::Vec::Zero(hidden_size()));
  std::vector<Var> layer_in(inputs.begin(), inputs.end());
  std::vector<Var> fwd(n), bwd(n);
  for (std::size_t l = 0; l < forward.size(); ++l) {
    Var h = zero;
    for (int i = 0; i < n; ++i) fwd[i] = h = t.gru(forward[l], layer_in[i], h);
    h = zero;
    for (int i = n - 1; i >= 0; --i) bwd[i] = h = t.gru(backward[l], layer_in[i], h);
    for (int i = 0; i < n; ++i) layer_in[i] = t.concat({fwd[i], bwd[i]});
  }
  return Output{std::move(layer_in), t.concat({fwd[n - 1], bwd[0]})};
}

Adam::Adam(const ad::ParamSet& ps, AdamConfig cfg) : cfg_(cfg) {
  for (const auto* p : ps.all()) {
    m_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(ad::ParamSet& ps) {
  auto params = ps.all();
  if (params.size() != m_.size()) throw std::logic_error("Adam state does not match the parameter set");
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

TrainLog minibatch_train(ad::ParamSet& ps, std::size_t n, const TrainOptions& opts, const ExampleStep& step,
                         const std::function<void(const TrainLogEntry&)>& on_log) {
  if (opts.iterations < 0 || opts.batch_size < 1) throw std::invalid_argument("bad training options");
  TrainLog log;
  if (opts.iterations == 0) return log;
  if (n == 0) throw std::invalid_argument("cannot train on an empty dataset");
  Adam adam(ps, AdamConfig{opts.lr});
  Rng order_rng(mix_seed(opts.seed, 2));
  std::vector<std::size_t> perm(n);
  std::size_t cursor = n;
  long epoch = -1;
  const auto start = std::chrono::steady_clock::now();
  for (long it = 1; it <= opts.iterations; ++it) {
    ps.zero_grad();
    const double w = 1.0 / opts.batch_size;
    double loss = 0.0;
    for (int b = 0; b < opts.batch_size; ++b) {
      if (cursor == n) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[order_rng.below(i + 1)]);
        cursor = 0;
        ++epoch;
      }
      try {
        loss += w * step(perm[cursor++], epoch, w);
      } catch (const ad::NonFiniteValue& e) {
        throw NumericFailure(std::string(e.what()) + " at iteration " + std::to_string(it), it);
      }
    }
    if (!std::isfinite(loss))
      throw NumericFailure("non-finite training loss at iteration " + std::to_string(it), it);
    ps.clip_grad_norm(opts.clip_norm);
    adam.step(ps);
    for (const auto* p : ps.all())
      if (!p->value.allFinite())
        throw NumericFailure("non-finite parameter " + p->name + " after iteration " + std::to_string(it), it);
    if (it == 1 || it == opts.iterations || (opts.log_every > 0 && it % opts.log_every == 0)) {
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      log.push_back({it, loss, ms});
      if (on_log) on_log(log.back());
    }
  }
  return log;
}

}  // namespace retedit::nn
