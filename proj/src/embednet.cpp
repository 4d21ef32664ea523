#include "retedit/embednet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace retedit {

using ad::Tape;
using ad::Var;

RetrieverNet::RetrieverNet(std::vector<std::string> field_names, int vocab_size, RetrieverConfig cfg)
    : fields_(std::move(field_names)), vocab_size_(vocab_size), cfg_(cfg) {
  if (fields_.empty()) throw std::invalid_argument("retriever needs at least one input field");
  if (vocab_size_ < Vocabulary::kNumReserved) throw std::invalid_argument("vocabulary too small");
  if (cfg_.latent < 2 || cfg_.hidden < 1 || cfg_.embed_dim < 1)
    throw std::invalid_argument("retriever sizes must be positive (latent >= 2)");
  build();
}

RetrieverNet::RetrieverNet(const RetrieverNet& other)
    : fields_(other.fields_), vocab_size_(other.vocab_size_), cfg_(other.cfg_) {
  build();
  auto dst = params_.all();
  auto src = other.params_.all();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

RetrieverNet& RetrieverNet::operator=(const RetrieverNet& other) {
  if (this != &other) {
    RetrieverNet copy(other);
    fields_ = copy.fields_;
    vocab_size_ = copy.vocab_size_;
    cfg_ = copy.cfg_;
    params_ = ad::ParamSet();
    encoders_.clear();
    null_summary_.clear();
    init_w_.clear();
    init_b_.clear();
    build();
    auto dst = params_.all();
    auto src = copy.params_.all();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
  }
  return *this;
}

void RetrieverNet::build() {
  const int h = cfg_.hidden;
  embed_ = &params_.add("embed", vocab_size_, cfg_.embed_dim);
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    const std::string prefix = "enc." + std::to_string(f);
    encoders_.push_back(nn::BiEncoder::create(params_, prefix, cfg_.embed_dim, h, cfg_.encoder_layers));
    null_summary_.push_back(&params_.add(prefix + ".null", 2 * h, 1));
  }
  comb_w_ = &params_.add("comb.w", cfg_.latent, 2 * h * static_cast<int>(fields_.size()));
  comb_b_ = &params_.add("comb.b", cfg_.latent, 1, ad::Init::Zero);
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    init_w_.push_back(&params_.add("dec.init" + std::to_string(l) + ".w", h, cfg_.latent));
    init_b_.push_back(&params_.add("dec.init" + std::to_string(l) + ".b", h, 1, ad::Init::Zero));
  }
  decoder_ = nn::GruStack::create(params_, "dec.gru", cfg_.embed_dim + cfg_.latent, h, cfg_.decoder_layers);
  out_w_ = &params_.add("dec.out.w", vocab_size_, h);
  out_b_ = &params_.add("dec.out.b", vocab_size_, 1, ad::Init::Zero);
}

void RetrieverNet::initialize(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 1));
  params_.initialize(cfg_.init_scale, rng);
}

FieldIds RetrieverNet::encode_fields(const Vocabulary& vocab, const Example& ex) const {
  FieldIds out(fields_.size());
  for (const auto& [name, tokens] : ex.input_fields) {
    auto it = std::find(fields_.begin(), fields_.end(), name);
    if (it == fields_.end()) throw std::invalid_argument("unknown input field '" + name + "' in example " + ex.id);
    out[static_cast<std::size_t>(it - fields_.begin())] = vocab.encode(tokens);
  }
  return out;
}

TokenIds RetrieverNet::target_ids(const Vocabulary& vocab, const Example& ex, ReconTarget target) const {
  TokenIds ids = vocab.encode(target == ReconTarget::Output ? ex.output : ex.flat_input());
  ids.push_back(Vocabulary::kEos);
  return ids;
}

Var RetrieverNet::encode(Tape& t, const FieldIds& x) const {
  if (x.size() != fields_.size())
    throw std::invalid_argument("expected " + std::to_string(fields_.size()) + " input fields");
  std::vector<Var> summaries;
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    std::vector<Var> inputs;
    for (int id : x[f]) {
      if (id < 0 || id >= vocab_size_) throw std::out_of_range("token id out of range: " + std::to_string(id));
      if (id != Vocabulary::kPad) inputs.push_back(t.row(*embed_, id));
    }
    summaries.push_back(inputs.empty() ? t.param(*null_summary_[f]) : encoders_[f].run(t, inputs).summary);
  }
  return t.normalize(t.affine(*comb_w_, *comb_b_, t.concat(summaries)));
}

Var RetrieverNet::decode_logprob(Tape& t, Var v, const TokenIds& y) const {
  if (t.dim(v) != cfg_.latent) throw std::invalid_argument("latent dimension mismatch");
  std::vector<Var> state;
  for (int l = 0; l < cfg_.decoder_layers; ++l) state.push_back(t.tanh(t.affine(*init_w_[l], *init_b_[l], v)));
  std::vector<Var> terms;
  int prev = Vocabulary::kBos;
  for (int id : y) {
    if (id < 0 || id >= vocab_size_) throw std::out_of_range("token id out of range: " + std::to_string(id));
    Var top = decoder_.step(t, t.concat({t.row(*embed_, prev), v}), state);
    Var logits = t.affine(*out_w_, *out_b_, top);
    const int support[1] = {id};
    terms.push_back(t.log_sum_softmax(logits, support));
    prev = id;
  }
  if (terms.empty()) return t.constant(ad::Vec::Zero(1));
  return t.sum(terms);
}

vmf::UnitVector RetrieverNet::encode(const FieldIds& x) const {
  Tape t(false);
  return vmf::UnitVector::normalize(t.value(encode(t, x)));
}

double RetrieverNet::decode_logprob(const vmf::Vector& v, const TokenIds& y) const {
  Tape t(false);
  return t.scalar(decode_logprob(t, t.constant(v), y));
}

namespace {

double example_loss(const RetrieverNet& net, const ReconBatchItem& item, double kappa, Rng& rng,
                    double weight) {
  Tape t;
  Var mu = net.encode(t, *item.input);
  Var v = mu;
  if (std::isfinite(kappa)) {
    auto noise = vmf::draw_reparam_noise(net.latent_dim(), kappa, rng);
    v = t.householder(mu, noise.frame_point());
  }
  Var lp = net.decode_logprob(t, v, *item.target);
  t.backward(lp, -weight);
  return -t.scalar(lp);
}

}  // namespace

double reconstruction_loss(RetrieverNet& net, const std::vector<ReconBatchItem>& batch, double kappa,
                           Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("reconstruction_loss needs a non-empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& item : batch) loss += w * example_loss(net, item, kappa, rng, w);
  return loss;
}

double noiseless_loss(const RetrieverNet& net, const std::vector<ReconBatchItem>& batch) {
  if (batch.empty()) throw std::invalid_argument("noiseless_loss needs a non-empty batch");
  double loss = 0.0;
  for (const auto& item : batch) loss -= net.decode_logprob(net.encode(*item.input).values(), *item.target);
  return loss / static_cast<double>(batch.size());
}

std::vector<std::string> collect_field_names(const Dataset& data) {
  std::vector<std::string> names;
  for (const auto& ex : data)
    for (const auto& [name, tokens] : ex.input_fields)
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
  return names;
}

RetrieverTraining train_retriever(const Dataset& train, const Vocabulary& vocab, const RetrieverConfig& cfg,
                                  ReconTarget target,
                                  const std::function<void(const nn::TrainLogEntry&)>& on_log) {
  if (train.empty()) throw std::invalid_argument("train_retriever needs a non-empty training set");
  RetrieverNet net(collect_field_names(train), vocab.size(), cfg);
  net.initialize(cfg.seed);
  std::vector<FieldIds> inputs;
  std::vector<TokenIds> targets;
  for (const auto& ex : train) {
    inputs.push_back(net.encode_fields(vocab, ex));
    targets.push_back(net.target_ids(vocab, ex, target));
  }
  Rng noise_rng(mix_seed(cfg.seed, 3));
  nn::TrainOptions opts{cfg.iterations, cfg.batch_size, cfg.lr, cfg.clip_norm, cfg.seed, cfg.log_every};
  auto step = [&](std::size_t i, long, double weight) {
    return example_loss(net, ReconBatchItem{&inputs[i], &targets[i]}, cfg.kappa, noise_rng, weight);
  };
  auto log = nn::minibatch_train(net.params(), train.size(), opts, step, on_log);
  return RetrieverTraining{std::move(net), std::move(log)};
}

}  // namespace retedit
