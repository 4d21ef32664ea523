#include "retedit/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace retedit {

namespace {

using ordered_json = nlohmann::ordered_json;

bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }
bool is_space(unsigned char c) { return c < 128 && std::isspace(c); }

std::string content_key(const Example& ex) {
  std::string key;
  for (const auto& [name, toks] : ex.input_fields) {
    key += name;
    key += '\x1d';
    for (const auto& t : toks) {
      key += t;
      key += '\x1f';
    }
    key += '\x1e';
  }
  key += '\x1c';
  for (const auto& t : ex.output) {
    key += t;
    key += '\x1f';
  }
  return key;
}

}  // namespace

TokenSeq Example::flat_input() const {
  TokenSeq out;
  for (const auto& [name, toks] : input_fields) out.insert(out.end(), toks.begin(), toks.end());
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

const std::string& Vocabulary::reserved_token(int id) {
  static const std::string names[kNumReserved] = {"<pad>", "<bos>", "<eos>", "<unk>"};
  if (id < 0 || id >= kNumReserved) throw std::out_of_range("not a reserved token id");
  return names[id];
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  for (int i = 0; i < kNumReserved; ++i) {
    tokens_.push_back(reserved_token(i));
    index_.emplace(tokens_.back(), i);
  }
  for (const auto& t : tokens) {
    if (index_.count(t)) throw CorpusError("duplicate vocabulary token: " + t);
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it != index_.end() && it->second >= kNumReserved;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenIds Vocabulary::encode(const TokenSeq& seq) const {
  TokenIds ids;
  ids.reserve(seq.size());
  for (const auto& t : seq) ids.push_back(id(t));
  return ids;
}

TokenSeq Vocabulary::decode(const TokenIds& ids) const {
  TokenSeq out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::to_json() const {
  ordered_json j;
  ordered_json reserved = ordered_json::object();
  reserved["pad"] = kPad;
  reserved["bos"] = kBos;
  reserved["eos"] = kEos;
  reserved["unk"] = kUnk;
  j["reserved"] = reserved;
  ordered_json toks = ordered_json::object();
  for (int i = kNumReserved; i < size(); ++i) toks[tokens_[static_cast<std::size_t>(i)]] = i;
  j["tokens"] = toks;
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw CorpusError(std::string("malformed vocabulary json: ") + e.what());
  }
  if (!j.contains("tokens")) throw CorpusError("vocabulary json missing key: tokens");
  const auto& reserved = j.value("reserved", ordered_json::object());
  if (reserved.value("pad", kPad) != kPad || reserved.value("bos", kBos) != kBos ||
      reserved.value("eos", kEos) != kEos || reserved.value("unk", kUnk) != kUnk)
    throw CorpusError("vocabulary json has an unexpected reserved-token block");
  std::vector<std::pair<int, std::string>> entries;
  for (const auto& [tok, id] : j["tokens"].items()) entries.emplace_back(id.get<int>(), tok);
  std::sort(entries.begin(), entries.end());
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first != static_cast<int>(i) + kNumReserved)
      throw CorpusError("vocabulary ids are not contiguous at id " + std::to_string(entries[i].first));
    tokens.push_back(entries[i].second);
  }
  return Vocabulary(tokens);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Tokenization and dataset transforms

TokenSeq tokenize(std::string_view text) {
  TokenSeq tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      word.push_back(ch);
    }
  }
  flush();
  return tokens;
}

std::string detokenize(const TokenSeq& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Dataset deduplicate(const Dataset& examples) {
  Dataset out;
  std::unordered_set<std::string> seen;
  for (const auto& ex : examples)
    if (seen.insert(content_key(ex)).second) out.push_back(ex);
  return out;
}

Dataset filter_by_length(const Dataset& examples, std::size_t max_tokens) {
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
  Dataset out;
  for (const auto& ex : examples)
    if (!ex.output.empty() && ex.output.size() <= max_tokens) out.push_back(ex);
  return out;
}

DatasetSplit split_by_group(const Dataset& examples, SplitRatios ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0))
    throw std::invalid_argument("split ratios must be positive");
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");

  std::set<std::string> group_set;
  for (const auto& ex : examples) group_set.insert(ex.group_key);
  std::vector<std::string> groups(group_set.begin(), group_set.end());
  const auto n = groups.size();
  if (n < 3)
    throw CorpusError("split_by_group needs at least 3 groups, found " + std::to_string(n));

  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(groups[i], groups[j]);
  }

  auto target = [n](double r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(r * static_cast<double>(n))));
  };
  std::size_t n_valid = target(ratios.validation);
  std::size_t n_test = target(ratios.test);
  while (n_valid + n_test > n - 1) {
    if (n_valid >= n_test && n_valid > 1) --n_valid;
    else --n_test;
  }

  std::unordered_map<std::string, int> assignment;
  for (std::size_t i = 0; i < n; ++i) {
    int which = 0;
    if (i < n_valid) which = 1;
    else if (i < n_valid + n_test) which = 2;
    assignment[groups[i]] = which;
  }

  DatasetSplit split;
  split.split_seed = seed;
  for (const auto& ex : examples) {
    switch (assignment.at(ex.group_key)) {
      case 0: split.train.push_back(ex); break;
      case 1: split.validation.push_back(ex); break;
      default: split.test.push_back(ex); break;
    }
  }
  return split;
}

DatasetSplit split_within_groups(const Dataset& examples, SplitRatios ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0))
    throw std::invalid_argument("split ratios must be positive");
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < examples.size(); ++i) members[examples[i].group_key].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<int> assignment(examples.size(), 0);
  for (auto& [group, idx] : members) {
    const auto n = idx.size();
    for (std::size_t i = n - 1; i > 0 && n > 1; --i) {
      const auto j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(idx[i], idx[j]);
    }
    auto count = [n](double r) { return static_cast<std::size_t>(std::llround(r * static_cast<double>(n))); };
    std::size_t n_valid = count(ratios.validation);
    std::size_t n_test = count(ratios.test);
    while (n_valid + n_test > n - 1 && n_valid + n_test > 0) {
      if (n_valid >= n_test && n_valid > 0) --n_valid;
      else --n_test;
    }
    for (std::size_t i = 0; i < n; ++i) assignment[idx[i]] = i < n_valid ? 1 : i < n_valid + n_test ? 2 : 0;
  }

  DatasetSplit split;
  split.split_seed = seed;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    switch (assignment[i]) {
      case 0: split.train.push_back(examples[i]); break;
      case 1: split.validation.push_back(examples[i]); break;
      default: split.test.push_back(examples[i]); break;
    }
  }
  return split;
}

Vocabulary build_vocabulary(const Dataset& train, int min_count) {
  if (train.empty()) throw std::invalid_argument("build_vocabulary needs a non-empty training set");
  std::unordered_map<std::string, long> counts;
  for (const auto& ex : train) {
    for (const auto& [name, toks] : ex.input_fields)
      for (const auto& t : toks) ++counts[t];
    for (const auto& t : ex.output) ++counts[t];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, c] : counts) {
    if (c < min_count) continue;
    bool reserved = false;
    for (int i = 0; i < Vocabulary::kNumReserved; ++i) reserved |= tok == Vocabulary::reserved_token(i);
    if (!reserved) kept.emplace_back(tok, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, c] : kept) tokens.push_back(tok);
  return Vocabulary(tokens);
}

// ---------------------------------------------------------------------------
// JSONL

std::string example_to_json(const Example& example) {
  ordered_json j;
  j["id"] = example.id;
  j["group"] = example.group_key;
  ordered_json input = ordered_json::object();
  for (const auto& [name, toks] : example.input_fields) input[name] = detokenize(toks);
  j["input"] = input;
  j["output"] = detokenize(example.output);
  return j.dump();
}

namespace {

Example example_from_json_at(std::string_view line, std::size_t line_no) {
  const std::string where = line_no ? " (line " + std::to_string(line_no) + ")" : std::string();
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw CorpusError("malformed JSON" + where + ": " + e.what());
  }
  if (!j.is_object()) throw CorpusError("expected a JSON object" + where);
  for (const char* key : {"id", "group", "input", "output"})
    if (!j.contains(key)) throw CorpusError(std::string("missing required key '") + key + "'" + where);
  Example ex;
  try {
    ex.id = j["id"].get<std::string>();
    ex.group_key = j["group"].get<std::string>();
    if (!j["input"].is_object()) throw CorpusError("'input' must be an object" + where);
    for (const auto& [name, text] : j["input"].items())
      ex.input_fields.emplace_back(name, tokenize(text.get<std::string>()));
    ex.output = tokenize(j["output"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError("wrong value type" + where + ": " + e.what());
  }
  if (ex.id.empty()) throw CorpusError("empty id" + where);
  return ex;
}

}  // namespace

Example example_from_json(std::string_view line) { return example_from_json_at(line, 0); }

Dataset parse_jsonl(std::string_view text) {
  Dataset out;
  std::unordered_set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    auto ex = example_from_json_at(line, line_no);
    if (!ids.insert(ex.id).second)
      throw CorpusError("duplicate id '" + ex.id + "' (line " + std::to_string(line_no) + ")");
    out.push_back(std::move(ex));
  }
  return out;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str());
}

std::string to_jsonl(const Dataset& examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += example_to_json(ex);
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const Dataset& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  out << to_jsonl(examples);
}

}  // namespace retedit
