#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "retedit/autodiff.hpp"
#include "retedit/corpus.hpp"
#include "retedit/nn.hpp"

namespace retedit {

class Retriever;

struct EditorConfig {
  int embed_dim = 64;
  int copy_dim = 32;
  int hidden = 64;
  int encoder_layers = 1;
  int decoder_layers = 2;
  /// Copy tokens available; the concatenated source x ++ x' ++ y' must fit.
  int num_copy = 300;
  /// false trains the Seq2Seq baseline: the same model with x' and y' empty.
  bool use_retrieval = true;
  double identity_prob = 0.1;
  long iterations = 1000;
  int batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 5.0;
  double init_scale = 0.08;
  std::uint64_t seed = 0;
  int log_every = 10;
  int max_len = 160;
};

/// One editing problem: predict y from x and a retrieved pair (x', y').
struct EditInput {
  TokenSeq x;
  TokenSeq x_proto;
  TokenSeq y_proto;

  /// Fields of x are flattened in order; a null prototype leaves x', y' empty.
  static EditInput from(const Example& x, const Example* proto);
};

/// The copy source x ++ x' ++ y' with every position mapped to a surface id:
/// the base id for in-vocabulary words, otherwise V + (first position of the
/// word in the source). Equal surface ids mean equal words.
struct CopySource {
  TokenSeq tokens;
  std::vector<int> surface;
  std::vector<int> base;  // base-vocabulary id (UNK for OOV)
  int len_x = 0;
  int len_x_proto = 0;
  int len_y_proto = 0;

  int size() const { return static_cast<int>(tokens.size()); }
  /// First position holding surface id s, or -1.
  int first_position(int s) const;
};

struct BeamHypothesis {
  std::vector<int> tokens;  // surface ids, ending with EOS when finished
  double logprob = 0.0;
  bool finished = false;
};

/// Attention encoder-decoder with positional copy tokens.
class Editor {
 public:
  Editor(Vocabulary vocab, EditorConfig cfg);
  Editor(const Editor& other);
  Editor& operator=(const Editor&) = delete;

  void initialize(std::uint64_t seed);

  const Vocabulary& vocab() const { return vocab_; }
  const EditorConfig& config() const { return cfg_; }
  int base_size() const { return vocab_.size(); }
  /// V + N.
  int output_size() const { return vocab_.size() + cfg_.num_copy; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }

  /// Throws std::length_error when the source exceeds num_copy tokens.
  CopySource make_source(const EditInput& in) const;
  /// Surface ids of y against a source; OOV words absent from it map to UNK.
  std::vector<int> target_surface(const CopySource& src, const TokenSeq& y) const;
  std::string surface_token(const CopySource& src, int surface) const;
  TokenSeq surface_tokens(const CopySource& src, const std::vector<int>& ids) const;

  /// concat(base_embed(token_p), copy_embed(p)) for every source position.
  std::vector<ad::Vec> copy_extend(const CopySource& src) const;

  /// Support of y_t: its base id (when in vocabulary) plus every copy slot
  /// V + p whose source word equals y_t.
  std::vector<int> copy_support(const CopySource& src, int surface) const;

  /// Teacher-forced sum_t log sum_{support(y_t)} p(. | y_<t, x, x', y').
  /// y is scored as given (no EOS appended).
  double edit_logprob(const EditInput& in, const TokenSeq& y) const;
  ad::Var edit_logprob(ad::Tape& t, const CopySource& src, const std::vector<int>& y) const;

  /// Surface-token distribution after each gold prefix y_<t, for t = 0..|y|.
  /// Entry i < V is a base word; entry V + p is an OOV word first seen at p.
  std::vector<ad::Vec> surface_distributions(const CopySource& src, const std::vector<int>& y) const;
  /// Raw softmax over V + L (copy slots past the source length have zero
  /// probability and are omitted), at each step of the gold prefix.
  std::vector<ad::Vec> raw_distributions(const CopySource& src, const std::vector<int>& y) const;

  std::vector<BeamHypothesis> beam_search(const EditInput& in, int beam_width, int max_len = 0) const;
  std::vector<int> greedy_decode(const EditInput& in, int max_len = 0) const;
  /// Best hypothesis as tokens, EOS stripped.
  TokenSeq predict(const EditInput& in, int beam_width, int max_len = 0) const;

  /// Top-k surface tokens after the gold prefix; ties broken by surface id.
  TokenSeq next_token_candidates(const EditInput& in, const TokenSeq& gold_prefix, int k) const;
  /// Ranked top-k candidates for every position of y (teacher forcing).
  std::vector<TokenSeq> candidates_per_position(const EditInput& in, const TokenSeq& y, int k) const;

 private:
  struct Encoded;
  struct DecoderState;

  void build();
  Encoded encode(ad::Tape& t, const CopySource& src) const;
  DecoderState start(ad::Tape& t, const Encoded& enc) const;
  /// Feeds the previous surface token and returns logits over V + L.
  ad::Var step(ad::Tape& t, const Encoded& enc, DecoderState& state, int prev) const;
  ad::Vec to_surface(const CopySource& src, const ad::Vec& probs) const;

  Vocabulary vocab_;
  EditorConfig cfg_;
  ad::ParamSet params_;

  ad::Param* embed_ = nullptr;
  ad::Param* copy_embed_ = nullptr;
  nn::BiEncoder enc_x_, enc_xp_, enc_yp_;
  std::vector<ad::Param*> init_w_, init_b_;
  nn::GruStack decoder_;
  ad::Param* attn_w_ = nullptr;
  ad::Param* out_w_ = nullptr;
  ad::Param* out_b_ = nullptr;
  ad::Param* vocab_w_ = nullptr;
  ad::Param* vocab_b_ = nullptr;
  ad::Param* copy_w_ = nullptr;
  ad::Param* copy_b_ = nullptr;
};

/// The tuples the editor trains on: each training example paired with its
/// nearest non-self neighbor (or with nothing for Seq2Seq).
struct EditTrainingSet {
  std::vector<EditInput> inputs;
  std::vector<TokenSeq> targets;
};

EditTrainingSet make_edit_training_set(const Dataset& train, const Retriever* retriever);

struct EditorTraining {
  Editor editor;
  nn::TrainLog log;
};

/// Minibatch Adam on teacher-forced edit log-likelihood. With probability
/// identity_prob per example per epoch, (x, x', y') -> y is replaced by
/// (x', x', y') -> y'.
EditorTraining train_editor(const Dataset& train, const Vocabulary& vocab, const Retriever* retriever,
                            const EditorConfig& cfg,
                            const std::function<void(const nn::TrainLogEntry&)>& on_log = {});
EditorTraining train_editor(const EditTrainingSet& data, const Vocabulary& vocab, const EditorConfig& cfg,
                            const std::function<void(const nn::TrainLogEntry&)>& on_log = {});

}  // namespace retedit
