#include "retedit/editor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "retedit/retriever.hpp"

namespace retedit {

using ad::Tape;
using ad::Var;
using ad::Vec;

EditInput EditInput::from(const Example& x, const Example* proto) {
  EditInput in;
  in.x = x.flat_input();
  if (proto) {
    in.x_proto = proto->flat_input();
    in.y_proto = proto->output;
  }
  return in;
}

int CopySource::first_position(int s) const {
  auto it = std::find(surface.begin(), surface.end(), s);
  return it == surface.end() ? -1 : static_cast<int>(it - surface.begin());
}

struct Editor::Encoded {
  const CopySource* src = nullptr;
  int length = 0;
  Var keys;       // 2H x L
  Var copy_proj;  // H x L
  std::vector<Var> init;
};

struct Editor::DecoderState {
  std::vector<Var> h;
  Var o;
  int align = -1;
};

Editor::Editor(Vocabulary vocab, EditorConfig cfg) : vocab_(std::move(vocab)), cfg_(cfg) {
  if (cfg_.num_copy < 1 || cfg_.hidden < 1 || cfg_.embed_dim < 1 || cfg_.copy_dim < 1)
    throw std::invalid_argument("editor sizes must be positive");
  build();
}

Editor::Editor(const Editor& other) : vocab_(other.vocab_), cfg_(other.cfg_) {
  build();
  auto dst = params_.all();
  auto src = other.params_.all();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

void Editor::build() {
  const int h = cfg_.hidden;
  const int in = cfg_.embed_dim + cfg_.copy_dim;
  embed_ = &params_.add("embed", vocab_.size(), cfg_.embed_dim);
  copy_embed_ = &params_.add("copy_embed", cfg_.num_copy, cfg_.copy_dim);
  enc_x_ = nn::BiEncoder::create(params_, "enc_x", in, h, cfg_.encoder_layers);
  enc_xp_ = nn::BiEncoder::create(params_, "enc_xp", in, h, cfg_.encoder_layers);
  enc_yp_ = nn::BiEncoder::create(params_, "enc_yp", in, h, cfg_.encoder_layers);
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    init_w_.push_back(&params_.add("dec.init" + std::to_string(l) + ".w", h, 6 * h));
    init_b_.push_back(&params_.add("dec.init" + std::to_string(l) + ".b", h, 1, ad::Init::Zero));
  }
  decoder_ = nn::GruStack::create(params_, "dec.gru", in + h, h, cfg_.decoder_layers);
  attn_w_ = &params_.add("attn.w", 2 * h, h);
  out_w_ = &params_.add("out.w", h, 3 * h);
  out_b_ = &params_.add("out.b", h, 1, ad::Init::Zero);
  vocab_w_ = &params_.add("vocab.w", vocab_.size(), h);
  vocab_b_ = &params_.add("vocab.b", vocab_.size(), 1, ad::Init::Zero);
  copy_w_ = &params_.add("copy.w", h, 2 * h);
  copy_b_ = &params_.add("copy.b", h, 1, ad::Init::Zero);
}

void Editor::initialize(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 1));
  params_.initialize(cfg_.init_scale, rng);
}

// ---------------------------------------------------------------------------
// Sources and surface tokens

CopySource Editor::make_source(const EditInput& in) const {
  CopySource src;
  src.len_x = static_cast<int>(in.x.size());
  src.len_x_proto = static_cast<int>(in.x_proto.size());
  src.len_y_proto = static_cast<int>(in.y_proto.size());
  const auto total = in.x.size() + in.x_proto.size() + in.y_proto.size();
  if (total > static_cast<std::size_t>(cfg_.num_copy))
    throw std::length_error("source of " + std::to_string(total) + " tokens exceeds the " +
                            std::to_string(cfg_.num_copy) + " copy tokens; increase num_copy");
  src.tokens.reserve(total);
  for (const auto* part : {&in.x, &in.x_proto, &in.y_proto}) src.tokens.insert(src.tokens.end(), part->begin(), part->end());
  const int V = vocab_.size();
  for (int p = 0; p < src.size(); ++p) {
    const auto& tok = src.tokens[static_cast<std::size_t>(p)];
    const int id = vocab_.id(tok);
    src.base.push_back(id);
    if (vocab_.contains(tok)) {
      src.surface.push_back(id);
    } else {
      int first = p;
      for (int q = 0; q < p; ++q)
        if (src.tokens[static_cast<std::size_t>(q)] == tok) {
          first = q;
          break;
        }
      src.surface.push_back(V + first);
    }
  }
  return src;
}

std::vector<int> Editor::target_surface(const CopySource& src, const TokenSeq& y) const {
  std::vector<int> out;
  out.reserve(y.size());
  const int V = vocab_.size();
  for (const auto& tok : y) {
    if (vocab_.contains(tok)) {
      out.push_back(vocab_.id(tok));
      continue;
    }
    auto it = std::find(src.tokens.begin(), src.tokens.end(), tok);
    out.push_back(it == src.tokens.end() ? Vocabulary::kUnk : V + static_cast<int>(it - src.tokens.begin()));
  }
  return out;
}

std::string Editor::surface_token(const CopySource& src, int surface) const {
  const int V = vocab_.size();
  if (surface >= 0 && surface < V) return vocab_.token(surface);
  const int p = surface - V;
  if (p < 0 || p >= src.size()) throw std::out_of_range("surface id out of range: " + std::to_string(surface));
  return src.tokens[static_cast<std::size_t>(p)];
}

TokenSeq Editor::surface_tokens(const CopySource& src, const std::vector<int>& ids) const {
  TokenSeq out;
  for (int id : ids) out.push_back(surface_token(src, id));
  return out;
}

std::vector<int> Editor::copy_support(const CopySource& src, int surface) const {
  std::vector<int> support;
  const int V = vocab_.size();
  if (surface < V) support.push_back(surface);
  for (int p = 0; p < src.size(); ++p)
    if (src.surface[static_cast<std::size_t>(p)] == surface) support.push_back(V + p);
  return support;
}

std::vector<Vec> Editor::copy_extend(const CopySource& src) const {
  std::vector<Vec> out;
  for (int p = 0; p < src.size(); ++p) {
    Vec v(cfg_.embed_dim + cfg_.copy_dim);
    v << embed_->value.row(src.base[static_cast<std::size_t>(p)]).transpose(), copy_embed_->value.row(p).transpose();
    out.push_back(std::move(v));
  }
  return out;
}

Vec Editor::to_surface(const CopySource& src, const Vec& probs) const {
  const int V = vocab_.size();
  Vec out = Vec::Zero(probs.size());
  out.head(V) = probs.head(V);
  for (int p = 0; p < src.size(); ++p) out[src.surface[static_cast<std::size_t>(p)]] += probs[V + p];
  return out;
}

// ---------------------------------------------------------------------------
// Network

Editor::Encoded Editor::encode(Tape& t, const CopySource& src) const {
  Encoded enc;
  enc.src = &src;
  enc.length = src.size();
  const int h = cfg_.hidden;
  std::vector<Var> inputs;
  for (int p = 0; p < src.size(); ++p)
    inputs.push_back(t.concat({t.row(*embed_, src.base[static_cast<std::size_t>(p)]), t.row(*copy_embed_, p)}));

  std::vector<Var> states, summaries;
  int offset = 0;
  const Var zero = t.constant(Vec::Zero(2 * h));
  const std::pair<const nn::BiEncoder*, int> parts[] = {
      {&enc_x_, src.len_x}, {&enc_xp_, src.len_x_proto}, {&enc_yp_, src.len_y_proto}};
  for (const auto& [encoder, len] : parts) {
    if (len == 0) {
      summaries.push_back(zero);
      continue;
    }
    auto out = encoder->run(t, std::span<const Var>(inputs.data() + offset, static_cast<std::size_t>(len)));
    states.insert(states.end(), out.states.begin(), out.states.end());
    summaries.push_back(out.summary);
    offset += len;
  }
  const Var summary = t.concat(summaries);
  for (std::size_t l = 0; l < init_w_.size(); ++l)
    enc.init.push_back(t.tanh(t.affine(*init_w_[l], *init_b_[l], summary)));
  if (!states.empty()) {
    enc.keys = t.concat(states);
    enc.copy_proj = t.col_affine_tanh(*copy_w_, *copy_b_, enc.keys, 2 * h);
  }
  return enc;
}

Editor::DecoderState Editor::start(Tape& t, const Encoded& enc) const {
  DecoderState s;
  s.h = enc.init;
  s.o = t.constant(Vec::Zero(cfg_.hidden));
  return s;
}

Var Editor::step(Tape& t, const Encoded& enc, DecoderState& state, int prev) const {
  const CopySource& src = *enc.src;
  const int V = vocab_.size();
  const int h = cfg_.hidden;
  if (prev < 0 || prev >= V + src.size()) throw std::out_of_range("token id out of range: " + std::to_string(prev));
  int pos = -1;
  if (prev != Vocabulary::kBos) {
    const int next = state.align + 1;
    pos = next < src.size() && src.surface[static_cast<std::size_t>(next)] == prev ? next : src.first_position(prev);
  }
  state.align = pos;
  const Var word = t.row(*embed_, prev < V ? prev : Vocabulary::kUnk);
  const Var where = pos >= 0 ? t.row(*copy_embed_, pos) : t.constant(Vec::Zero(cfg_.copy_dim));
  const Var top = decoder_.step(t, t.concat({word, where, state.o}), state.h);

  Var ctx;
  if (enc.length > 0) {
    const Var attn = t.softmax(t.col_scores(enc.keys, 2 * h, t.matvec(*attn_w_, top)));
    ctx = t.col_mix(enc.keys, 2 * h, attn);
  } else {
    ctx = t.constant(Vec::Zero(2 * h));
  }
  state.o = t.tanh(t.affine(*out_w_, *out_b_, t.concat({top, ctx})));
  const Var base = t.affine(*vocab_w_, *vocab_b_, state.o);
  if (enc.length == 0) return base;
  return t.concat({base, t.col_scores(enc.copy_proj, h, state.o)});
}

// ---------------------------------------------------------------------------
// Scoring

Var Editor::edit_logprob(Tape& t, const CopySource& src, const std::vector<int>& y) const {
  const Encoded enc = encode(t, src);
  DecoderState state = start(t, enc);
  std::vector<Var> terms;
  int prev = Vocabulary::kBos;
  for (int tok : y) {
    const Var logits = step(t, enc, state, prev);
    const auto support = copy_support(src, tok);
    terms.push_back(t.log_sum_softmax(logits, support));
    prev = tok;
  }
  if (terms.empty()) return t.constant(Vec::Zero(1));
  return t.sum(terms);
}

double Editor::edit_logprob(const EditInput& in, const TokenSeq& y) const {
  const CopySource src = make_source(in);
  Tape t(false);
  return t.scalar(edit_logprob(t, src, target_surface(src, y)));
}

std::vector<Vec> Editor::raw_distributions(const CopySource& src, const std::vector<int>& y) const {
  Tape t(false);
  const Encoded enc = encode(t, src);
  DecoderState state = start(t, enc);
  std::vector<Vec> out;
  int prev = Vocabulary::kBos;
  for (std::size_t i = 0; i <= y.size(); ++i) {
    out.push_back(t.value(t.softmax(step(t, enc, state, prev))));
    if (i < y.size()) prev = y[i];
  }
  return out;
}

std::vector<Vec> Editor::surface_distributions(const CopySource& src, const std::vector<int>& y) const {
  auto raw = raw_distributions(src, y);
  for (auto& p : raw) p = to_surface(src, p);
  return raw;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

/// Indices of surface tokens (base words and first-occurrence OOV copies),
/// ranked by probability then id.
std::vector<int> rank_surface(const Vec& p, const CopySource& src, int V, int k) {
  std::vector<int> ids;
  for (int i = 0; i < V; ++i) ids.push_back(i);
  for (int q = 0; q < src.size(); ++q)
    if (src.surface[static_cast<std::size_t>(q)] == V + q) ids.push_back(V + q);
  const auto kk = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(kk), ids.end(),
                    [&](int a, int b) { return p[a] != p[b] ? p[a] > p[b] : a < b; });
  ids.resize(kk);
  return ids;
}

}  // namespace

std::vector<BeamHypothesis> Editor::beam_search(const EditInput& in, int beam_width, int max_len) const {
  if (beam_width < 1) throw std::invalid_argument("beam width must be >= 1");
  if (max_len <= 0) max_len = cfg_.max_len;
  const CopySource src = make_source(in);
  const int V = vocab_.size();
  Tape t(false);
  const Encoded enc = encode(t, src);

  struct Live {
    BeamHypothesis hyp;
    DecoderState state;
  };
  std::vector<Live> beam = {{BeamHypothesis{}, start(t, enc)}};
  for (int len = 0; len < max_len; ++len) {
    struct Candidate {
      double logprob;
      int parent;
      int token;  // -1 keeps a finished hypothesis as is
    };
    std::vector<Candidate> cands;
    std::vector<DecoderState> advanced(beam.size());
    for (std::size_t i = 0; i < beam.size(); ++i) {
      auto& live = beam[i];
      if (live.hyp.finished) {
        cands.push_back({live.hyp.logprob, static_cast<int>(i), -1});
        continue;
      }
      advanced[i] = live.state;
      const int prev = live.hyp.tokens.empty() ? Vocabulary::kBos : live.hyp.tokens.back();
      const Vec p = to_surface(src, t.value(t.softmax(step(t, enc, advanced[i], prev))));
      for (int tok : rank_surface(p, src, V, beam_width))
        if (p[tok] > 0.0) cands.push_back({live.hyp.logprob + std::log(p[tok]), static_cast<int>(i), tok});
    }
    const auto keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(beam_width));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.logprob != b.logprob) return a.logprob > b.logprob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    bool all_finished = true;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      const auto& parent = beam[static_cast<std::size_t>(cand.parent)];
      if (cand.token < 0) {
        next.push_back(parent);
        continue;
      }
      Live child{parent.hyp, advanced[static_cast<std::size_t>(cand.parent)]};
      child.hyp.tokens.push_back(cand.token);
      child.hyp.logprob = cand.logprob;
      child.hyp.finished = cand.token == Vocabulary::kEos;
      all_finished = all_finished && child.hyp.finished;
      next.push_back(std::move(child));
    }
    beam = std::move(next);
    if (all_finished) break;
  }
  std::vector<BeamHypothesis> out;
  for (auto& live : beam) out.push_back(std::move(live.hyp));
  std::stable_sort(out.begin(), out.end(),
                   [](const BeamHypothesis& a, const BeamHypothesis& b) { return a.logprob > b.logprob; });
  return out;
}

std::vector<int> Editor::greedy_decode(const EditInput& in, int max_len) const {
  if (max_len <= 0) max_len = cfg_.max_len;
  const CopySource src = make_source(in);
  Tape t(false);
  const Encoded enc = encode(t, src);
  DecoderState state = start(t, enc);
  std::vector<int> out;
  int prev = Vocabulary::kBos;
  while (static_cast<int>(out.size()) < max_len) {
    const Vec p = to_surface(src, t.value(t.softmax(step(t, enc, state, prev))));
    prev = rank_surface(p, src, vocab_.size(), 1).front();
    out.push_back(prev);
    if (prev == Vocabulary::kEos) break;
  }
  return out;
}

TokenSeq Editor::predict(const EditInput& in, int beam_width, int max_len) const {
  const auto hyps = beam_search(in, beam_width, max_len);
  std::vector<int> ids = hyps.front().tokens;
  if (!ids.empty() && ids.back() == Vocabulary::kEos) ids.pop_back();
  return surface_tokens(make_source(in), ids);
}

TokenSeq Editor::next_token_candidates(const EditInput& in, const TokenSeq& gold_prefix, int k) const {
  const CopySource src = make_source(in);
  const auto dists = surface_distributions(src, target_surface(src, gold_prefix));
  return surface_tokens(src, rank_surface(dists.back(), src, vocab_.size(), k));
}

std::vector<TokenSeq> Editor::candidates_per_position(const EditInput& in, const TokenSeq& y, int k) const {
  const CopySource src = make_source(in);
  const auto dists = surface_distributions(src, target_surface(src, y));
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < y.size(); ++i)
    out.push_back(surface_tokens(src, rank_surface(dists[i], src, vocab_.size(), k)));
  return out;
}

// ---------------------------------------------------------------------------
// Training

EditTrainingSet make_edit_training_set(const Dataset& train, const Retriever* retriever) {
  EditTrainingSet set;
  for (const auto& ex : train) {
    const Example* proto = retriever ? retriever->retrieve(ex, &ex.id).example : nullptr;
    set.inputs.push_back(EditInput::from(ex, proto));
    set.targets.push_back(ex.output);
  }
  return set;
}

EditorTraining train_editor(const EditTrainingSet& data, const Vocabulary& vocab, const EditorConfig& cfg,
                            const std::function<void(const nn::TrainLogEntry&)>& on_log) {
  if (data.inputs.empty() || data.inputs.size() != data.targets.size())
    throw std::invalid_argument("train_editor needs a non-empty, aligned training set");
  Editor editor(vocab, cfg);
  editor.initialize(cfg.seed);
  const std::uint64_t aug_stream = mix_seed(cfg.seed, 4);
  const std::size_t n = data.inputs.size();
  auto step = [&](std::size_t i, long epoch, double weight) {
    const EditInput& orig = data.inputs[i];
    bool identity = false;
    if (cfg.identity_prob > 0.0 && !orig.y_proto.empty()) {
      Rng coin(mix_seed(aug_stream, static_cast<std::uint64_t>(epoch) * n + i));
      identity = coin.uniform() < cfg.identity_prob;
    }
    const EditInput in = identity ? EditInput{orig.x_proto, orig.x_proto, orig.y_proto} : orig;
    const TokenSeq& y = identity ? orig.y_proto : data.targets[i];
    const CopySource src = editor.make_source(in);
    auto target = editor.target_surface(src, y);
    target.push_back(Vocabulary::kEos);
    Tape t;
    const Var lp = editor.edit_logprob(t, src, target);
    t.backward(lp, -weight);
    return -t.scalar(lp);
  };
  nn::TrainOptions opts{cfg.iterations, cfg.batch_size, cfg.lr, cfg.clip_norm, cfg.seed, cfg.log_every};
  auto log = nn::minibatch_train(editor.params(), n, opts, step, on_log);
  return EditorTraining{std::move(editor), std::move(log)};
}

EditorTraining train_editor(const Dataset& train, const Vocabulary& vocab, const Retriever* retriever,
                            const EditorConfig& cfg, const std::function<void(const nn::TrainLogEntry&)>& on_log) {
  EditorConfig c = cfg;
  if (!c.use_retrieval) retriever = nullptr;
  if (c.use_retrieval && !retriever) throw std::invalid_argument("editor training needs a retriever");
  return train_editor(make_edit_training_set(train, retriever), vocab, c, on_log);
}

}  // namespace retedit
