#include <cmath>
#include <numeric>

#include "doctest.h"
#include "retedit/editor.hpp"
#include "retedit/embednet.hpp"
#include "retedit/eval.hpp"
#include "retedit/retriever.hpp"

using namespace retedit;

namespace {

TokenSeq random_seq(Rng& rng, int vocab, int min_len, int max_len) {
  TokenSeq s;
  const auto len = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1))) + min_len;
  for (int i = 0; i < len; ++i) s.push_back("t" + std::to_string(rng.below(static_cast<std::uint64_t>(vocab))));
  return s;
}

// Straightforward BLEU written from the definition with explicit loops over
// positions instead of n-gram count tables.
double reference_bleu(const TokenSeq& c, const TokenSeq& r) {
  if (c.empty() || r.empty()) return 0.0;
  const std::size_t orders = std::min<std::size_t>(4, r.size());
  double log_p = 0.0;
  for (std::size_t n = 1; n <= orders; ++n) {
    std::vector<bool> used(r.size(), false);
    int matches = 0;
    int total = 0;
    for (std::size_t i = 0; i + n <= c.size(); ++i) {
      ++total;
      for (std::size_t j = 0; j + n <= r.size(); ++j) {
        if (used[j]) continue;
        bool same = true;
        for (std::size_t m = 0; m < n && same; ++m) same = c[i + m] == r[j + m];
        if (same) {
          used[j] = true;
          ++matches;
          break;
        }
      }
    }
    if (n == 1 && matches == 0) return 0.0;
    log_p += std::log((matches ? matches : 1e-9) / std::max(total, 1));
  }
  const double bp = c.size() >= r.size() ? 1.0 : std::exp(1.0 - static_cast<double>(r.size()) / c.size());
  return 100.0 * bp * std::exp(log_p / static_cast<double>(orders));
}

// Candidates are a per-(example, position) random permutation of V tokens,
// so the gold token lands in the top k with probability k / V.
class RandomSystem : public System {
 public:
  RandomSystem(int vocab, std::uint64_t seed) : vocab_(vocab), seed_(seed) {}
  const std::string& name() const override { return name_; }
  TokenSeq predict(const Example&) const override { return {}; }
  std::vector<TokenSeq> candidates(const Example& x, int k) const override {
    std::vector<TokenSeq> out;
    for (std::size_t t = 0; t < x.output.size(); ++t) {
      Rng rng(mix_seed(seed_ ^ fnv1a64(x.id), t));
      std::vector<int> ids(static_cast<std::size_t>(vocab_));
      std::iota(ids.begin(), ids.end(), 0);
      TokenSeq c;
      for (int i = 0; i < k && i < vocab_; ++i) {
        const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(vocab_ - i));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
        c.push_back("t" + std::to_string(ids[static_cast<std::size_t>(i)]));
      }
      out.push_back(std::move(c));
    }
    return out;
  }

 private:
  std::string name_ = "random";
  int vocab_;
  std::uint64_t seed_;
};

Dataset random_dataset(Rng& rng, int n, int vocab, int min_len, int max_len) {
  Dataset d;
  for (int i = 0; i < n; ++i) {
    Example ex;
    ex.id = "ex" + std::to_string(i);
    ex.group_key = "g" + std::to_string(i % 7);
    ex.input_fields = {{"text", random_seq(rng, vocab, 1, 6)}};
    ex.output = random_seq(rng, vocab, min_len, max_len);
    d.push_back(ex);
  }
  return d;
}

// Expected longest success run of n Bernoulli(p) trials, by dynamic
// programming over (current run, longest so far).
double expected_longest_run(int n, double p) {
  std::vector<std::vector<double>> prob(static_cast<std::size_t>(n + 1), std::vector<double>(static_cast<std::size_t>(n + 1), 0.0));
  prob[0][0] = 1.0;
  for (int step = 0; step < n; ++step) {
    std::vector<std::vector<double>> next(prob.size(), std::vector<double>(prob.size(), 0.0));
    for (int cur = 0; cur <= n; ++cur)
      for (int best = 0; best <= n; ++best) {
        const double q = prob[static_cast<std::size_t>(cur)][static_cast<std::size_t>(best)];
        if (q == 0.0) continue;
        next[0][static_cast<std::size_t>(best)] += q * (1 - p);
        const int c2 = cur + 1;
        next[static_cast<std::size_t>(c2)][static_cast<std::size_t>(std::max(best, c2))] += q * p;
      }
    prob = std::move(next);
  }
  double e = 0.0;
  for (int cur = 0; cur <= n; ++cur)
    for (int best = 0; best <= n; ++best) e += best * prob[static_cast<std::size_t>(cur)][static_cast<std::size_t>(best)];
  return e;
}

}  // namespace

TEST_CASE("BLEU edge cases") {
  CHECK(bleu({"a", "b", "c"}, {"a", "b", "c"}) == 100.0);
  CHECK(bleu({"x"}, {"x"}) == 100.0);
  CHECK(bleu({"x", "y"}, {"a", "b", "c"}) == 0.0);
  CHECK(bleu({}, {"a"}) == 0.0);
  CHECK(bleu({"a"}, {}) == 0.0);
}

TEST_CASE("BLEU of a truncated candidate matches the hand computation") {
  const double bp = std::exp(1.0 - 4.0 / 3.0);
  const double expected = 100.0 * bp * std::pow(1.0 * 1.0 * 1.0 * 1e-9, 0.25);
  CHECK(bleu(tokenize("the cat sat"), tokenize("the cat sat on")) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("BLEU agrees with a loop-based implementation and bleu(a, a) = 100") {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_seq(rng, 6, 1, 25);
    const auto b = random_seq(rng, 6, 1, 25);
    CHECK(bleu(a, a) == doctest::Approx(100.0).epsilon(1e-12));
    const double v = bleu(a, b);
    CHECK(v == doctest::Approx(reference_bleu(a, b)).epsilon(1e-10));
    CHECK(v >= 0.0);
    CHECK(v <= 100.0);
    if (exact_match(a, b)) CHECK(v == doctest::Approx(100.0));
  }
}

TEST_CASE("exact match compares tokens") {
  CHECK(exact_match({"a", "b"}, {"a", "b"}) == 1);
  CHECK(exact_match({"a", "b"}, {"a", "c"}) == 0);
  CHECK(exact_match(tokenize("x  =\t f(y)"), tokenize("x = f ( y )")) == 1);
}

TEST_CASE("completion runs") {
  auto runs = completion_runs({true, true, false, true, true});
  CHECK(runs.longest == 2.0);
  CHECK(runs.mean == 2.0);
  runs = completion_runs({true, false, true, true, true, false, false, true});
  CHECK(runs.longest == 3.0);
  CHECK(runs.mean == doctest::Approx(5.0 / 3.0));
  runs = completion_runs(std::vector<bool>(7, true));
  CHECK(runs.longest == 7.0);
  CHECK(runs.mean == 7.0);
  runs = completion_runs({false, false});
  CHECK(runs.longest == 0.0);
  CHECK(runs.mean == 0.0);
  CHECK(completion_runs({}).longest == 0.0);
  // A position that becomes correct at a larger k can open a short new run
  // and lower the mean run length even though the bits are nested.
  CHECK(completion_runs({true, true, true, false, true}).mean < completion_runs({true, true, true, false, false}).mean);

  const auto agg = summarize_autocomplete({1}, {{{true, true, false}}, {{false, false}}, {{true, false, true}}});
  CHECK(agg.longest[0] == doctest::Approx((2.0 + 0.0 + 1.0) / 3.0));
  CHECK(agg.average[0] == doctest::Approx((2.0 + 0.0 + 1.0) / 3.0));
}

TEST_CASE("a uniform-random candidate list matches the binomial run-length oracle") {
  const int V = 1000, k = 10, len = 5;
  const double p = static_cast<double>(k) / V;
  const double oracle = expected_longest_run(len, p);
  // 40 examples x 5 positions = 200 positions.
  CHECK(oracle < 0.05);
  CHECK(oracle == doctest::Approx(1.0 - std::pow(1.0 - p, len)).epsilon(1e-3));

  Rng rng(2);
  Dataset data;
  for (int i = 0; i < 20000; ++i) {
    Example ex;
    ex.id = "r" + std::to_string(i);
    ex.input_fields = {{"text", {"q"}}};
    for (int t = 0; t < len; ++t) ex.output.push_back("t" + std::to_string(rng.below(V)));
    data.push_back(ex);
  }
  const RandomSystem system(V, 3);
  EvalOptions opts;
  opts.ks = {k};
  const auto res = autocomplete_eval(system, data, opts);
  double sq = 0.0;
  for (const auto& r : res.runs) sq += (r[0].longest - res.longest[0]) * (r[0].longest - res.longest[0]);
  const double se = std::sqrt(sq / (data.size() - 1) / data.size());
  CAPTURE(res.longest[0]);
  CAPTURE(oracle);
  CHECK(std::abs(res.longest[0] - oracle) < 3 * se);
}

TEST_CASE("completion metrics are monotone in k and independent of worker count") {
  Rng rng(4);
  const Dataset data = random_dataset(rng, 60, 12, 1, 15);
  const RandomSystem system(12, 5);
  EvalOptions opts;
  const auto one = autocomplete_eval(system, data, opts);
  for (const auto& ex : one.runs) {
    CHECK(ex[0].longest <= ex[1].longest);
    CHECK(ex[1].longest <= ex[2].longest);
  }
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t t = 0; t < data[i].output.size(); ++t) {
      CHECK((!one.correct[i][0][t] || one.correct[i][1][t]));
      CHECK((!one.correct[i][1][t] || one.correct[i][2][t]));
    }
  opts.workers = 3;
  const auto three = autocomplete_eval(system, data, opts);
  CHECK(three.correct == one.correct);
  CHECK(three.longest == one.longest);
  CHECK(three.average == one.average);
}

TEST_CASE("retriever-only, editor and seq2seq systems on the same examples") {
  Rng rng(6);
  const Dataset train = random_dataset(rng, 40, 10, 2, 8);
  const Dataset test = random_dataset(rng, 12, 10, 2, 8);
  const Vocabulary vocab = build_vocabulary(train);
  IndexOptions idx;
  idx.use_lsh = false;
  const Retriever lexical(vocab, train, idx);
  const RetrieverOnlySystem only("retriever_only", lexical);
  for (const auto& ex : test) {
    const auto& proto = lexical.retrieve(ex).example->output;
    CHECK(only.predict(ex) == proto);
    const auto cands = only.candidates(ex, 5);
    REQUIRE(cands.size() == ex.output.size());
    for (std::size_t t = 0; t < cands.size(); ++t) {
      if (t < proto.size())
        CHECK(cands[t] == TokenSeq{proto[t]});
      else
        CHECK(cands[t].empty());
    }
  }

  EditorConfig ecfg;
  ecfg.embed_dim = 8;
  ecfg.copy_dim = 4;
  ecfg.hidden = 8;
  ecfg.num_copy = 40;
  ecfg.max_len = 10;
  Editor editor(vocab, ecfg);
  editor.initialize(7);
  const EditorSystem edit("retrieve_edit", editor, &lexical, 3);
  const EditorSystem s2s("seq2seq", editor, nullptr, 3);
  const ReportMeta meta{9, "cfg", dataset_hash(test)};
  const auto reports = run_table1(test, edit, s2s, only, meta);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].system == "retrieve_edit");
  CHECK(reports[1].system == "seq2seq");
  CHECK(reports[2].system == "retriever_only");
  for (const auto& r : reports) {
    CHECK(r.examples == test.size());
    CHECK(r.example_bleu.size() == test.size());
    CHECK(r.bleu >= 0.0);
    CHECK(r.bleu <= 100.0);
    CHECK(r.exact_match >= 0.0);
    CHECK(r.exact_match <= 1.0);
    CHECK(r.meta.dataset_hash == meta.dataset_hash);
  }
  // Per-example scores follow the dataset order.
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(reports[2].example_bleu[i] == bleu(only.predict(test[i]), test[i].output));
    CHECK(reports[0].example_bleu[i] == bleu(edit.predict(test[i]), test[i].output));
    const auto ed_cands = edit.candidates(test[i], 10);
    CHECK(ed_cands.size() == test[i].output.size());
  }
}

TEST_CASE("retrievers with identical embeddings give identical reports") {
  Rng rng(8);
  const Dataset train = random_dataset(rng, 30, 8, 2, 6);
  const Dataset test = random_dataset(rng, 10, 8, 2, 6);
  const Vocabulary vocab = build_vocabulary(train);
  RetrieverConfig rc;
  rc.embed_dim = 6;
  rc.hidden = 6;
  rc.latent = 4;
  rc.iterations = 5;
  const auto net = train_retriever(train, vocab, rc, ReconTarget::Output).net;
  IndexOptions idx;
  idx.use_lsh = false;
  const Retriever a(RetrieverKind::Task, net, vocab, train, idx);
  const Retriever b(RetrieverKind::Task, net, vocab, train, idx);
  const Retriever lex(vocab, train, idx);
  const RetrieverOnlySystem sa("task", a), sb("input", b), sl("lexical", lex);
  const auto reports = run_table2(test, sa, sb, sl, ReportMeta{});
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].bleu == reports[1].bleu);
  CHECK(reports[0].example_bleu == reports[1].example_bleu);
  CHECK(reports[0].longest == reports[1].longest);
  CHECK(reports[0].average == reports[1].average);
  CHECK(reports[2].system == "lexical");
}

TEST_CASE("report formats and metadata") {
  EvalReport r;
  r.system = "retrieve_edit";
  r.examples = 3;
  r.bleu = 42.5;
  r.exact_match = 1.0 / 3.0;
  r.ks = {1, 5, 10};
  r.longest = {1, 2, 3};
  r.average = {0.5, 1.5, 2.5};
  r.meta = {7, "abc", "d1"};
  EvalReport s = r;
  s.system = "seq2seq";
  const auto csv = reports_to_csv({r, s});
  CHECK(csv.rfind("system,bleu,exact_match,longest_k1,longest_k5,longest_k10,avg_k1,avg_k5,avg_k10\n", 0) == 0);
  CHECK(csv.find("retrieve_edit,42.5000,0.3333,1.0000,2.0000,3.0000,0.5000,1.5000,2.5000\n") != std::string::npos);
  const auto table = format_table({r, s});
  CHECK(table.find("longest@5") != std::string::npos);

  const auto back = reports_from_json(reports_to_json({r, s}));
  REQUIRE(back.size() == 2);
  CHECK(back[0].system == "retrieve_edit");
  CHECK(back[0].bleu == r.bleu);
  CHECK(back[0].exact_match == r.exact_match);
  CHECK(back[1].average == s.average);
  CHECK(back[1].meta.config_hash == "abc");

  CHECK_NOTHROW(check_comparable({r, s}, false));
  s.meta.dataset_hash = "d2";
  CHECK_THROWS_AS(check_comparable({r, s}, false), std::runtime_error);
  CHECK_NOTHROW(check_comparable({r, s}, true));
}

TEST_CASE("dataset hash tracks content") {
  Rng rng(10);
  Dataset d = random_dataset(rng, 5, 5, 1, 4);
  const auto h = dataset_hash(d);
  CHECK(h.size() == 16);
  CHECK(dataset_hash(d) == h);
  d[2].output.push_back("extra");
  CHECK(dataset_hash(d) != h);
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
}
