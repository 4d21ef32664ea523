#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include "doctest.h"
#include "retedit/corpus.hpp"
#include "retedit/rng.hpp"

using namespace retedit;

namespace {

Example make(std::string id, std::string group, std::string in, std::string out) {
  Example ex;
  ex.id = std::move(id);
  ex.group_key = std::move(group);
  ex.input_fields = {{"text", tokenize(in)}};
  ex.output = tokenize(out);
  return ex;
}

// Independent tokenizer for ASCII text: maximal runs of non-space,
// non-punctuation characters, or single punctuation characters.
TokenSeq regex_tokenize(const std::string& s) {
  static const std::regex re("[^[:space:][:punct:]]+|[[:punct:]]");
  TokenSeq out;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it)
    out.push_back(it->str());
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("retedit_test_" + name);
}

}  // namespace

TEST_CASE("tokenize splits on whitespace and punctuation") {
  CHECK(tokenize("sum(a, b)") == TokenSeq{"sum", "(", "a", ",", "b", ")"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("   \t\n").empty());
  CHECK(tokenize("x+=1 # inc") == TokenSeq{"x", "+", "=", "1", "#", "inc"});
  CHECK(tokenize("caf\xc3\xa9.au") == TokenSeq{"caf\xc3\xa9", ".", "au"});
}

TEST_CASE("tokenize agrees with a regex oracle on code-like lines") {
  const std::vector<std::string> lines = {
      "def foo(bar, baz=3):",
      "    return bar[0] + baz * 2",
      "x+=1 # inc",
      "if not b_data: raise ValueError('empty')",
      "self.items = {k: v for k, v in pairs}",
      "print(\"%s-%d\" % (name, idx))",
      "a.b.c(d)[e]",
      "while i<=n and j!=0:",
      "lambda x: x**2",
      "@decorator(arg=1)",
      "tmp = [1,2,3]",
      "result = sum(tmp[:2])",
      "   ",
      "return self._cache.get(key, None)",
      "assert len(xs) == 5, 'bad length'",
      "total -= price*qty",
      "path = os.path.join(root, \"a/b\")",
      "x = y if cond else z",
      "yield from gen()",
      "raise NotImplementedError  # TODO",
  };
  REQUIRE(lines.size() == 20);
  for (const auto& line : lines) {
    CAPTURE(line);
    CHECK(tokenize(line) == regex_tokenize(line));
  }
}

TEST_CASE("tokens never mix alphanumerics and punctuation") {
  Rng rng(7);
  const std::string alphabet = "ab1_ (),.:=+-*\"'#\t\n";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const auto n = rng.below(40);
    for (std::uint64_t i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
    for (const auto& tok : tokenize(s)) {
      bool alnum = false, punct = false;
      for (unsigned char c : tok) {
        alnum |= std::isalnum(c) != 0;
        punct |= std::ispunct(c) != 0;
        CHECK_FALSE(std::isspace(c));
      }
      CHECK_FALSE((alnum && punct));
    }
    // Rejoining with single spaces and re-tokenizing is the identity.
    CHECK(tokenize(detokenize(tokenize(s))) == tokenize(s));
  }
}

TEST_CASE("deduplicate keeps first occurrence of each content") {
  auto a = make("1", "g", "sum a b", "return a + b");
  SUBCASE("byte-identical") {
    auto out = deduplicate({a, a});
    CHECK(out.size() == 1);
  }
  SUBCASE("differ only in id") {
    auto b = a;
    b.id = "2";
    auto out = deduplicate({a, b});
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == "1");
  }
  SUBCASE("whitespace variants collapse") {
    auto b = make("2", "g", "sum   a\tb", "return a+b");
    CHECK(deduplicate({a, b}).size() == 1);
  }
  SUBCASE("brute-force oracle") {
    Dataset d = {a, make("2", "g", "x", "y"), a, make("3", "h", "x", "z"), a};
    d[2].id = "4";
    d[4].id = "5";
    Dataset oracle;
    for (std::size_t i = 0; i < d.size(); ++i) {
      bool dup = false;
      for (std::size_t j = 0; j < i; ++j)
        dup |= d[j].input_fields == d[i].input_fields && d[j].output == d[i].output;
      if (!dup) oracle.push_back(d[i]);
    }
    auto out = deduplicate(d);
    CHECK(out.size() == 3);
    CHECK(out == oracle);
    CHECK(deduplicate(out) == out);
  }
}

TEST_CASE("filter_by_length is inclusive") {
  TokenSeq t150(150, "x"), t151(151, "x");
  Example a = make("a", "g", "in", "o");
  a.output = t150;
  Example b = a;
  b.id = "b";
  b.output = t151;
  Example c = a;
  c.id = "c";
  c.output = {"short"};
  auto out = filter_by_length({a, b, c}, 150);
  REQUIRE(out.size() == 2);
  CHECK(out[0].id == "a");
  CHECK(out[1].id == "c");
  std::size_t direct = 0;
  for (const auto& ex : {a, b, c}) direct += ex.output.size() <= 150;
  CHECK(out.size() == direct);
  CHECK_THROWS(filter_by_length({a}, 0));
}

TEST_CASE("split_by_group assigns whole groups") {
  Dataset d;
  for (int g = 0; g < 10; ++g)
    for (int i = 0; i < 3; ++i)
      d.push_back(make("e" + std::to_string(g) + "_" + std::to_string(i), "repo" + std::to_string(g),
                       "in " + std::to_string(i), "out " + std::to_string(g)));

  auto split = split_by_group(d, {0.8, 0.1, 0.1}, 42);
  auto groups_of = [](const Dataset& part) {
    std::set<std::string> s;
    for (const auto& ex : part) s.insert(ex.group_key);
    return s;
  };
  auto tr = groups_of(split.train), va = groups_of(split.validation), te = groups_of(split.test);
  CHECK(tr.size() == 8);
  CHECK(va.size() == 1);
  CHECK(te.size() == 1);
  for (const auto& g : va) CHECK_FALSE(tr.count(g));
  for (const auto& g : te) CHECK_FALSE((tr.count(g) || va.count(g)));
  CHECK(split.train.size() + split.validation.size() + split.test.size() == d.size());

  auto again = split_by_group(d, {0.8, 0.1, 0.1}, 42);
  CHECK(again.train == split.train);
  CHECK(again.test == split.test);

  Dataset one_group = d;
  for (auto& ex : one_group) ex.group_key = "only";
  CHECK_THROWS_AS(split_by_group(one_group, {0.8, 0.1, 0.1}, 1), CorpusError);
  CHECK_THROWS(split_by_group(d, {0.8, 0.3, 0.1}, 1));
}

TEST_CASE("split_by_group property: groups never straddle splits") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Dataset d;
    const int n = 20 + static_cast<int>(rng.below(80));
    for (int i = 0; i < n; ++i)
      d.push_back(make(std::to_string(i), "g" + std::to_string(rng.below(12)), "a", "b"));
    std::set<std::string> all;
    for (const auto& ex : d) all.insert(ex.group_key);
    if (all.size() < 3) continue;
    auto s = split_by_group(d, {0.6, 0.2, 0.2}, rng.next_u64());
    std::map<std::string, std::set<int>> where;
    for (const auto& ex : s.train) where[ex.group_key].insert(0);
    for (const auto& ex : s.validation) where[ex.group_key].insert(1);
    for (const auto& ex : s.test) where[ex.group_key].insert(2);
    for (const auto& [g, parts] : where) CHECK(parts.size() == 1);
    // Within one group of the target share.
    std::set<std::string> tg;
    for (const auto& ex : s.train) tg.insert(ex.group_key);
    CHECK(std::abs(static_cast<double>(tg.size()) - 0.6 * all.size()) <= 1.0 + 1e-9);
  }
}

TEST_CASE("build_vocabulary orders by frequency then lexicographically") {
  Dataset d = {make("1", "g", "b a", "a c"), make("2", "g", "b d", "zz yy")};
  auto v = build_vocabulary(d, 1);
  CHECK(v.size() == Vocabulary::kNumReserved + 6);
  CHECK(v.token(4) == "a");  // count 2
  CHECK(v.token(5) == "b");  // count 2, after "a"
  CHECK(v.token(6) == "c");
  CHECK(v.token(7) == "d");
  CHECK(v.token(8) == "yy");
  CHECK(v.token(9) == "zz");

  auto v2 = build_vocabulary(d, 2);
  CHECK(v2.size() == Vocabulary::kNumReserved + 2);
  CHECK(v2.id("c") == Vocabulary::kUnk);
  CHECK(v2.id("a") == 4);
  CHECK_THROWS(build_vocabulary({}, 1));

  auto round = Vocabulary::from_json(v.to_json());
  CHECK(round == v);
}

TEST_CASE("jsonl round trip and errors") {
  Rng rng(11);
  Dataset d;
  for (int i = 0; i < 100; ++i) {
    Example ex;
    ex.id = "ex" + std::to_string(i);
    ex.group_key = "repo" + std::to_string(i % 7);
    ex.input_fields = {{"comment", tokenize("compute the value " + std::to_string(rng.below(1000)))},
                       {"name", tokenize("fn_" + std::to_string(i))},
                       {"args", tokenize("a, b")}};
    ex.output = tokenize("return a * " + std::to_string(i) + " + \"b\\n\"");
    d.push_back(ex);
  }
  auto path = temp_path("roundtrip.jsonl");
  save_jsonl(path, d);
  CHECK(load_jsonl(path) == d);

  {
    std::ofstream out(path);
    out << example_to_json(d[0]) << "\n" << R"({"id": "x", "group": "g", "input": {"a": "b"}, "out)" << "\n";
  }
  try {
    load_jsonl(path);
    FAIL("expected an error");
  } catch (const CorpusError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  {
    std::ofstream out(path);
    out << R"({"id": "x", "group": "g", "input": {"a": "b"}})" << "\n";
  }
  try {
    load_jsonl(path);
    FAIL("expected an error");
  } catch (const CorpusError& e) {
    CHECK(std::string(e.what()).find("output") != std::string::npos);
  }

  { std::ofstream out(path); }
  CHECK(load_jsonl(path).empty());
  std::filesystem::remove(path);
}
