#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "retedit/autodiff.hpp"
#include "retedit/corpus.hpp"
#include "retedit/nn.hpp"
#include "retedit/rng.hpp"
#include "retedit/vmf.hpp"

namespace retedit {

struct RetrieverConfig {
  int embed_dim = 64;
  int hidden = 64;
  int latent = 64;
  int encoder_layers = 1;
  int decoder_layers = 1;
  /// vMF concentration of the training noise; +infinity trains a plain
  /// autoencoder (v = mu exactly).
  double kappa = vmf::kDefaultKappa;
  long iterations = 1000;
  int batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 5.0;
  double init_scale = 0.08;
  std::uint64_t seed = 0;
  int log_every = 10;
};

/// What the decoder reconstructs: the output y (task retriever) or the
/// flattened input fields (input retriever).
enum class ReconTarget { Output, Input };

/// Token ids per input field, in the network's field order.
using FieldIds = std::vector<TokenIds>;

/// Per-field bidirectional GRU encoders, a linear combiner onto the unit
/// sphere, and a GRU decoder conditioned on the latent vector.
class RetrieverNet {
 public:
  RetrieverNet(std::vector<std::string> field_names, int vocab_size, RetrieverConfig cfg);
  RetrieverNet(const RetrieverNet& other);
  RetrieverNet& operator=(const RetrieverNet& other);

  void initialize(std::uint64_t seed);

  const std::vector<std::string>& field_names() const { return fields_; }
  int vocab_size() const { return vocab_size_; }
  int latent_dim() const { return cfg_.latent; }
  const RetrieverConfig& config() const { return cfg_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }

  /// Maps an example's fields onto this network's field order; absent fields
  /// are empty. Unknown field names are an error.
  FieldIds encode_fields(const Vocabulary& vocab, const Example& ex) const;
  /// Decoder target ids for ex, terminated by EOS.
  TokenIds target_ids(const Vocabulary& vocab, const Example& ex, ReconTarget target) const;

  /// mu(x). PAD tokens are ignored; an empty field uses a learned summary.
  vmf::UnitVector encode(const FieldIds& x) const;
  /// Teacher-forced sum of log p(y_t | y_<t, v) over the ids exactly as given.
  double decode_logprob(const vmf::Vector& v, const TokenIds& y) const;

  ad::Var encode(ad::Tape& t, const FieldIds& x) const;
  ad::Var decode_logprob(ad::Tape& t, ad::Var v, const TokenIds& y) const;

 private:
  void build();

  std::vector<std::string> fields_;
  int vocab_size_;
  RetrieverConfig cfg_;
  ad::ParamSet params_;

  ad::Param* embed_ = nullptr;
  std::vector<nn::BiEncoder> encoders_;
  std::vector<ad::Param*> null_summary_;
  ad::Param* comb_w_ = nullptr;
  ad::Param* comb_b_ = nullptr;
  std::vector<ad::Param*> init_w_;
  std::vector<ad::Param*> init_b_;
  nn::GruStack decoder_;
  ad::Param* out_w_ = nullptr;
  ad::Param* out_b_ = nullptr;
};

struct ReconBatchItem {
  const FieldIds* input;
  const TokenIds* target;
};

/// -(1/|B|) sum_i log p(y_i | v_i), v_i a reparameterized vMF(mu(x_i), kappa)
/// draw. Adds the gradient into net.params() (the caller zeroes it).
double reconstruction_loss(RetrieverNet& net, const std::vector<ReconBatchItem>& batch, double kappa, Rng& rng);

/// Loss with v = mu(x) exactly, no gradient.
double noiseless_loss(const RetrieverNet& net, const std::vector<ReconBatchItem>& batch);

struct RetrieverTraining {
  RetrieverNet net;
  nn::TrainLog log;
};

/// Field names in first-appearance order over the dataset.
std::vector<std::string> collect_field_names(const Dataset& data);

RetrieverTraining train_retriever(const Dataset& train, const Vocabulary& vocab, const RetrieverConfig& cfg,
                                  ReconTarget target = ReconTarget::Output,
                                  const std::function<void(const nn::TrainLogEntry&)>& on_log = {});

inline RetrieverTraining train_input_retriever(const Dataset& train, const Vocabulary& vocab,
                                               const RetrieverConfig& cfg,
                                               const std::function<void(const nn::TrainLogEntry&)>& on_log = {}) {
  return train_retriever(train, vocab, cfg, ReconTarget::Input, on_log);
}

}  // namespace retedit
