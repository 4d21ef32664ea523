#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "retedit/autodiff.hpp"

namespace retedit {

/// Raised when a training loss becomes NaN or infinite.
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(const std::string& what, long iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

namespace nn {

using ad::Tape;
using ad::Var;

ad::GruWeights make_gru(ad::ParamSet& ps, const std::string& prefix, int input_size, int hidden_size);

/// Stack of unidirectional GRU layers stepped one token at a time.
struct GruStack {
  std::vector<ad::GruWeights> layers;

  static GruStack create(ad::ParamSet& ps, const std::string& prefix, int input_size, int hidden_size, int depth);
  int depth() const { return static_cast<int>(layers.size()); }
  int hidden_size() const { return layers.front().hidden_size(); }

  /// Advances every layer by one step; `state` holds one hidden vector per
  /// layer and is updated in place. Returns the top layer's new state.
  Var step(Tape& t, Var input, std::vector<Var>& state) const;
};

/// Multi-layer bidirectional GRU. Layer l > 0 reads the concatenated forward
/// and backward states of layer l - 1.
struct BiEncoder {
  std::vector<ad::GruWeights> forward;
  std::vector<ad::GruWeights> backward;

  struct Output {
    std::vector<Var> states;  // per position, [fwd; bwd] of the top layer
    Var summary;              // [last fwd; first bwd] of the top layer
  };

  static BiEncoder create(ad::ParamSet& ps, const std::string& prefix, int input_size, int hidden_size, int depth);
  int hidden_size() const { return forward.front().hidden_size(); }
  int output_size() const { return 2 * hidden_size(); }

  /// inputs must be non-empty.
  Output run(Tape& t, std::span<const Var> inputs) const;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ad::ParamSet& ps, AdamConfig cfg);
  /// One update from the gradients currently stored in ps.
  void step(ad::ParamSet& ps);
  long steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<ad::Mat> m_;
  std::vector<ad::Mat> v_;
  long step_ = 0;
};

struct TrainOptions {
  long iterations = 1000;
  int batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  int log_every = 10;
};

struct TrainLogEntry {
  long iteration;
  double loss;
  double wallclock_ms;
};
using TrainLog = std::vector<TrainLogEntry>;

/// Computes one example's loss and adds weight * d(loss)/d(params) into the
/// parameter gradients. `epoch` counts passes over the shuffled data.
using ExampleStep = std::function<double(std::size_t index, long epoch, double weight)>;

/// Minibatch Adam over n examples. Batches are consecutive slices of a fresh
/// permutation per epoch (a batch may span two epochs). Gradients are clipped
/// to global norm clip_norm. Throws NumericFailure on a non-finite loss or
/// parameter.
TrainLog minibatch_train(ad::ParamSet& ps, std::size_t n, const TrainOptions& opts, const ExampleStep& step,
                         const std::function<void(const TrainLogEntry&)>& on_log = {});

}  // namespace nn
}  // namespace retedit
