#include "retedit/synth.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>

#include "retedit/rng.hpp"

namespace retedit {

namespace {

const std::vector<std::string> kVerbs = {"parse", "merge", "filter", "count", "scale", "render", "encode", "decode",
                                         "flatten", "rotate", "split", "join", "sort", "clamp", "shift", "pack",
                                         "load", "store", "check", "build", "reduce", "expand", "mask", "probe"};
const std::vector<std::string> kNouns = {"config", "buffer", "matrix", "record", "header", "stream", "token",
                                         "vector", "packet", "window", "column", "frame", "index", "graph",
                                         "cache", "queue", "table", "image", "signal", "layer", "block", "field",
                                         "route", "batch", "chunk", "pixel", "offset", "margin"};
const std::vector<std::string> kHelpers = {"fetch", "apply", "lookup", "resolve", "combine", "emit", "convert",
                                           "adjust", "gather", "select", "compute", "update", "prepare", "attach",
                                           "detach", "refresh", "verify", "assign", "bind", "scan"};
const std::vector<std::string> kAttrs = {"append", "extend", "insert", "pop", "remove", "clear", "copy", "reverse",
                                         "keys", "items", "get", "setdefault"};
const std::vector<std::string> kLocals = {"result", "state", "buffer", "cache", "data", "info", "temp", "accum",
                                          "entry", "current"};
const std::vector<std::string> kIdents = {
    "alpha", "beta",  "gamma", "delta", "total", "sigma", "item",  "node",  "left",  "right", "key",   "val",
    "src",   "dst",   "lo",    "hi",    "start", "stop",  "step",  "size",  "width", "depth", "count", "limit",
    "base",  "head",  "tail",  "cur",   "prev",  "nxt",   "seed",  "rate",  "bias",  "gain",  "lam",   "rho",
    "omega", "kappa", "row",   "col",   "idx",   "pos",   "ptr",   "ref",   "obj",   "arg",   "elem",  "part",
    "piece", "span",  "mark",  "tag",   "flag",  "mode",  "level", "unit",  "cell",  "slot",  "edge",  "path"};
const std::vector<std::string> kCompare = {">", "<"};
const std::array<std::pair<const char*, const char*>, 3> kOps = {{{"+", "plus"}, {"-", "minus"}, {"*", "times"}}};

// Boilerplate context, assembled from interchangeable phrases shared by all
// templates.
const std::vector<std::vector<std::string>> kBoilerplate = {
    {"this helper function", "internal utility routine", "simple library method", "shared module function"},
    {"is part of the public data pipeline", "is called by the main processing module",
     "belongs to the shared utility library", "is used by the internal service layer"},
    {"and returns the computed result to the caller", "and handles the given input values",
     "and processes the values it is given", "and returns the value of the computation"}};

enum Slot { A1, A2, V1, C1, C2, OP };

// A template token: literal text, or a slot placeholder.
struct Tok {
  std::string text;
  int slot = -1;
};

struct Template {
  std::string verb, noun;
  std::vector<Tok> code;
};

Tok lit(std::string s) { return {std::move(s), -1}; }
Tok slot(Slot s) { return {"", s}; }

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

Template make_template(int index, Rng& rng) {
  Template t;
  // Distinct (verb, noun) pair per template for the first |verbs| * |nouns| templates.
  const auto pairs = kVerbs.size() * kNouns.size();
  const auto combo = (static_cast<std::size_t>(index) * 7919u) % pairs;
  t.verb = kVerbs[combo % kVerbs.size()];
  t.noun = kNouns[combo / kVerbs.size()];
  auto& c = t.code;
  for (const auto& s : {lit("def"), lit(t.verb), lit("_"), lit(t.noun), lit("("), slot(A1), lit(","), slot(A2),
                        lit(")"), lit(":")})
    c.push_back(s);
  const int statements = 4 + static_cast<int>(rng.below(4));
  for (int s = 0; s < statements; ++s) {
    const std::string& local = pick(kLocals, rng);
    const std::string& other = pick(kLocals, rng);
    const std::string& helper = pick(kHelpers, rng);
    std::vector<Tok> st;
    switch (rng.below(10)) {
      case 0:
        st = {slot(V1), lit("="), slot(A1), slot(OP), slot(C1)};
        break;
      case 1:
        st = {lit("if"), lit(local), lit(pick(kCompare, rng)), slot(A2), lit(":"), lit("return"), slot(C2)};
        break;
      case 2:
        st = {lit("for"), lit("x"), lit("in"), slot(A1), lit(":"), lit(local), lit("="), lit(helper), lit("("),
              lit(local), lit(","), lit("x"), lit(")")};
        break;
      case 3:
        st = {lit(local), lit("="), lit(helper), lit("("), slot(A1), lit(","), slot(A2), lit(")")};
        break;
      case 4:
        st = {slot(A2), lit("."), lit(pick(kAttrs, rng)), lit("("), slot(C1), lit(")")};
        break;
      case 5:
        st = {lit("while"), lit(local), lit(pick(kCompare, rng)), lit(std::to_string(rng.below(10))), lit(":"),
              lit(local), lit("="), lit(helper), lit("("), lit(local), lit(")")};
        break;
      case 6:
        st = {lit(local), lit("="), lit("["), slot(A1), lit("["), lit(std::to_string(rng.below(10))), lit("]"),
              lit(","), lit(other), lit("]")};
        break;
      case 7:
        st = {lit(helper), lit("("), lit(local), lit(","), lit(pick(kHelpers, rng)), lit("("), lit(other), lit(")"),
              lit(")")};
        break;
      case 8:
        st = {lit(local), lit("."), lit(pick(kAttrs, rng)), lit("("), lit(other), lit(")")};
        break;
      default:
        st = {lit("assert"), lit(local), lit("is"), lit("not"), lit("None")};
        break;
    }
    c.insert(c.end(), st.begin(), st.end());
    c.push_back(lit(";"));
  }
  for (const auto& s : {slot(V1), lit("="), slot(V1), slot(OP), lit(pick(kLocals, rng)), lit(";")}) c.push_back(s);
  for (const auto& s : {lit("return"), slot(V1)}) c.push_back(s);
  return t;
}

struct Fill {
  std::array<std::string, 6> values;
  std::string op_word;
  std::array<std::size_t, 3> boilerplate{};
};

Fill make_fill(Rng& rng) {
  Fill f;
  std::array<std::size_t, 3> ids{};
  for (std::size_t i = 0; i < 3; ++i) {
    bool fresh = false;
    while (!fresh) {
      ids[i] = rng.below(kIdents.size());
      fresh = std::find(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(i), ids[i]) ==
              ids.begin() + static_cast<std::ptrdiff_t>(i);
    }
  }
  f.values[A1] = kIdents[ids[0]];
  f.values[A2] = kIdents[ids[1]];
  f.values[V1] = kIdents[ids[2]];
  f.values[C1] = std::to_string(rng.below(100));
  f.values[C2] = std::to_string(rng.below(100));
  const auto& op = kOps[rng.below(kOps.size())];
  f.values[OP] = op.first;
  f.op_word = op.second;
  for (std::size_t i = 0; i < f.boilerplate.size(); ++i) f.boilerplate[i] = rng.below(kBoilerplate[i].size());
  return f;
}

Example instantiate(const Template& t, const Fill& f, int ti, int ii) {
  Example ex;
  ex.id = "tmpl" + std::to_string(ti) + "_" + std::to_string(ii);
  ex.group_key = "tmpl" + std::to_string(ti);
  TokenSeq context;
  for (std::size_t i = 0; i < f.boilerplate.size(); ++i) {
    const auto part = tokenize(kBoilerplate[i][f.boilerplate[i]]);
    context.insert(context.end(), part.begin(), part.end());
  }
  const TokenSeq doc = {t.verb, "the", t.noun, "of", f.values[A1], "and", f.values[A2], "into", f.values[V1],
                        "using", f.op_word, "with", f.values[C1], "and", f.values[C2]};
  ex.input_fields = {{"doc", doc}, {"context", context}, {"args", {f.values[A1], f.values[A2]}}};
  for (const auto& tok : t.code) ex.output.push_back(tok.slot < 0 ? tok.text : f.values[static_cast<std::size_t>(tok.slot)]);
  return ex;
}

void check(const SynthOptions& opts) {
  if (opts.templates < 1 || opts.instances < 1) throw std::invalid_argument("synth counts must be >= 1");
}

}  // namespace

Dataset synthesize_corpus(const SynthOptions& opts) {
  check(opts);
  Dataset out;
  for (int ti = 0; ti < opts.templates; ++ti) {
    Rng trng(mix_seed(opts.seed, 2 * static_cast<std::uint64_t>(ti)));
    const Template t = make_template(ti, trng);
    Rng frng(mix_seed(opts.seed, 2 * static_cast<std::uint64_t>(ti) + 1));
    for (int ii = 0; ii < opts.instances; ++ii) out.push_back(instantiate(t, make_fill(frng), ti, ii));
  }
  return out;
}

std::vector<bool> synth_slot_mask(const SynthOptions& opts, int template_index, int instance_index) {
  check(opts);
  (void)instance_index;
  Rng trng(mix_seed(opts.seed, 2 * static_cast<std::uint64_t>(template_index)));
  const Template t = make_template(template_index, trng);
  std::vector<bool> mask;
  for (const auto& tok : t.code) mask.push_back(tok.slot >= 0);
  return mask;
}

}  // namespace retedit
