#include "retedit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include "json.hpp"
#include <sstream>
#include <stdexcept>
#include <thread>

#include "retedit/editor.hpp"
#include "retedit/retriever.hpp"

namespace retedit {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const TokenSeq& s, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[TokenSeq(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                                  s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

// Runs fn(i) for i in [0, n) on `workers` threads with a static partition.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

double bleu(const TokenSeq& candidate, const TokenSeq& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t orders = std::min<std::size_t>(4, reference.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= orders; ++n) {
    const auto cand = ngrams(candidate, n);
    const auto ref = ngrams(reference, n);
    int matches = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) matches += std::min(count, it->second);
    }
    if (n == 1 && matches == 0) return 0.0;
    const double total = static_cast<double>(std::max<std::size_t>(1, candidate.size() >= n ? candidate.size() - n + 1 : 0));
    log_sum += std::log((matches > 0 ? matches : kBleuEpsilon) / total);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return std::min(100.0, 100.0 * bp * std::exp(log_sum / static_cast<double>(orders)));
}

int exact_match(const TokenSeq& candidate, const TokenSeq& reference) { return candidate == reference ? 1 : 0; }

RunLengths completion_runs(const std::vector<bool>& correct) {
  RunLengths out;
  int runs = 0, run = 0, total = 0;
  for (std::size_t i = 0; i <= correct.size(); ++i) {
    if (i < correct.size() && correct[i]) {
      ++run;
      continue;
    }
    if (run > 0) {
      ++runs;
      total += run;
      out.longest = std::max(out.longest, static_cast<double>(run));
    }
    run = 0;
  }
  if (runs > 0) out.mean = static_cast<double>(total) / runs;
  return out;
}

// ---------------------------------------------------------------------------
// Systems

TokenSeq RetrieverOnlySystem::predict(const Example& x) const { return retriever_->retrieve(x).example->output; }

std::vector<TokenSeq> RetrieverOnlySystem::candidates(const Example& x, int k) const {
  const TokenSeq& proto = retriever_->retrieve(x).example->output;
  std::vector<TokenSeq> out(x.output.size());
  if (k >= 1)
    for (std::size_t t = 0; t < out.size() && t < proto.size(); ++t) out[t] = {proto[t]};
  return out;
}

TokenSeq EditorSystem::predict(const Example& x) const {
  const Example* proto = retriever_ ? retriever_->retrieve(x).example : nullptr;
  return editor_->predict(EditInput::from(x, proto), beam_width_);
}

std::vector<TokenSeq> EditorSystem::candidates(const Example& x, int k) const {
  const Example* proto = retriever_ ? retriever_->retrieve(x).example : nullptr;
  return editor_->candidates_per_position(EditInput::from(x, proto), x.output, k);
}

// ---------------------------------------------------------------------------
// Evaluation

AutocompleteResult summarize_autocomplete(std::vector<int> ks, std::vector<std::vector<std::vector<bool>>> correct) {
  AutocompleteResult r;
  r.ks = std::move(ks);
  r.correct = std::move(correct);
  r.longest.assign(r.ks.size(), 0.0);
  r.average.assign(r.ks.size(), 0.0);
  for (const auto& ex : r.correct) {
    if (ex.size() != r.ks.size()) throw std::invalid_argument("correctness bits do not match the k list");
    std::vector<RunLengths> runs;
    for (std::size_t j = 0; j < r.ks.size(); ++j) {
      runs.push_back(completion_runs(ex[j]));
      r.longest[j] += runs.back().longest;
      r.average[j] += runs.back().mean;
    }
    r.runs.push_back(std::move(runs));
  }
  if (!r.correct.empty())
    for (std::size_t j = 0; j < r.ks.size(); ++j) {
      r.longest[j] /= static_cast<double>(r.correct.size());
      r.average[j] /= static_cast<double>(r.correct.size());
    }
  return r;
}

namespace {

std::vector<std::vector<bool>> correctness(const System& system, const Example& x, const std::vector<int>& ks) {
  const int kmax = *std::max_element(ks.begin(), ks.end());
  const auto cands = system.candidates(x, kmax);
  if (cands.size() != x.output.size())
    throw std::runtime_error(system.name() + " returned candidates for the wrong number of positions");
  std::vector<std::vector<bool>> bits;
  for (int k : ks) {
    std::vector<bool> row;
    for (std::size_t t = 0; t < x.output.size(); ++t) {
      const auto& c = cands[t];
      const auto end = c.begin() + std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(c.size()));
      row.push_back(std::find(c.begin(), end, x.output[t]) != end);
    }
    bits.push_back(std::move(row));
  }
  return bits;
}

void check_ks(const std::vector<int>& ks) {
  if (ks.empty()) throw std::invalid_argument("need at least one k");
  for (int k : ks)
    if (k < 1) throw std::invalid_argument("k must be >= 1");
}

}  // namespace

AutocompleteResult autocomplete_eval(const System& system, const Dataset& data, const EvalOptions& opts) {
  check_ks(opts.ks);
  std::vector<std::vector<std::vector<bool>>> bits(data.size());
  parallel_for(data.size(), opts.workers, [&](std::size_t i) { bits[i] = correctness(system, data[i], opts.ks); });
  return summarize_autocomplete(opts.ks, std::move(bits));
}

EvalReport evaluate(const System& system, const Dataset& data, const ReportMeta& meta, const EvalOptions& opts) {
  check_ks(opts.ks);
  const std::size_t n = data.size();
  std::vector<double> scores(n), exact(n);
  std::vector<std::vector<std::vector<bool>>> bits(n);
  parallel_for(n, opts.workers, [&](std::size_t i) {
    const auto pred = system.predict(data[i]);
    scores[i] = bleu(pred, data[i].output);
    exact[i] = exact_match(pred, data[i].output);
    bits[i] = correctness(system, data[i], opts.ks);
  });
  EvalReport r;
  r.system = system.name();
  r.examples = n;
  r.meta = meta;
  r.ks = opts.ks;
  for (std::size_t i = 0; i < n; ++i) {
    r.bleu += scores[i];
    r.exact_match += exact[i];
  }
  if (n > 0) {
    r.bleu /= static_cast<double>(n);
    r.exact_match /= static_cast<double>(n);
  }
  r.example_bleu = std::move(scores);
  r.autocomplete = summarize_autocomplete(opts.ks, std::move(bits));
  r.longest = r.autocomplete.longest;
  r.average = r.autocomplete.average;
  return r;
}

std::vector<EvalReport> run_table1(const Dataset& test, const System& retrieve_edit, const System& seq2seq,
                                   const System& retriever_only, const ReportMeta& meta, const EvalOptions& opts) {
  return {evaluate(retrieve_edit, test, meta, opts), evaluate(seq2seq, test, meta, opts),
          evaluate(retriever_only, test, meta, opts)};
}

std::vector<EvalReport> run_table2(const Dataset& test, const System& task, const System& input, const System& lexical,
                                   const ReportMeta& meta, const EvalOptions& opts) {
  return {evaluate(task, test, meta, opts), evaluate(input, test, meta, opts), evaluate(lexical, test, meta, opts)};
}

// ---------------------------------------------------------------------------
// Report formats

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  const std::vector<int> ks = reports.empty() ? std::vector<int>{1, 5, 10} : reports.front().ks;
  out << "system,bleu,exact_match";
  for (int k : ks) out << ",longest_k" << k;
  for (int k : ks) out << ",avg_k" << k;
  out << "\n";
  for (const auto& r : reports) {
    if (r.ks != ks) throw std::invalid_argument("reports use different k lists");
    out << r.system << "," << fixed(r.bleu, 4) << "," << fixed(r.exact_match, 4);
    for (double v : r.longest) out << "," << fixed(v, 4);
    for (double v : r.average) out << "," << fixed(v, 4);
    out << "\n";
  }
  return out.str();
}

std::string format_table(const std::vector<EvalReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"system", "BLEU", "exact"};
  const std::vector<int> ks = reports.empty() ? std::vector<int>{} : reports.front().ks;
  for (int k : ks) header.push_back("longest@" + std::to_string(k));
  for (int k : ks) header.push_back("avg@" + std::to_string(k));
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row = {r.system, fixed(r.bleu, 2), fixed(r.exact_match, 3)};
    for (double v : r.longest) row.push_back(fixed(v, 2));
    for (double v : r.average) row.push_back(fixed(v, 2));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0)
        out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      else
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
    }
    out << "\n";
  }
  return out.str();
}

std::string reports_to_json(const std::vector<EvalReport>& reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["system"] = r.system;
    j["examples"] = r.examples;
    j["bleu"] = r.bleu;
    j["exact_match"] = r.exact_match;
    j["ks"] = r.ks;
    j["longest"] = r.longest;
    j["average"] = r.average;
    j["smoothing"] = r.smoothing;
    j["seed"] = r.meta.seed;
    j["config_hash"] = r.meta.config_hash;
    j["dataset_hash"] = r.meta.dataset_hash;
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

std::vector<EvalReport> reports_from_json(const std::string& text) {
  std::vector<EvalReport> out;
  const auto arr = nlohmann::json::parse(text);
  if (!arr.is_array()) throw std::runtime_error("report file must hold a JSON array");
  for (const auto& j : arr) {
    EvalReport r;
    r.system = j.at("system").get<std::string>();
    r.examples = j.at("examples").get<std::size_t>();
    r.bleu = j.at("bleu").get<double>();
    r.exact_match = j.at("exact_match").get<double>();
    r.ks = j.at("ks").get<std::vector<int>>();
    r.longest = j.at("longest").get<std::vector<double>>();
    r.average = j.at("average").get<std::vector<double>>();
    r.smoothing = j.at("smoothing").get<std::string>();
    r.meta.seed = j.at("seed").get<std::uint64_t>();
    r.meta.config_hash = j.at("config_hash").get<std::string>();
    r.meta.dataset_hash = j.at("dataset_hash").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

void check_comparable(const std::vector<EvalReport>& reports, bool force) {
  if (force || reports.empty()) return;
  for (const auto& r : reports)
    if (r.meta.dataset_hash != reports.front().meta.dataset_hash)
      throw std::runtime_error("reports '" + reports.front().system + "' and '" + r.system +
                               "' were computed on different datasets (" + reports.front().meta.dataset_hash +
                               " vs " + r.meta.dataset_hash + "); pass --force to compare anyway");
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t h) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string dataset_hash(const Dataset& data) { return hex64(fnv1a64(to_jsonl(data))); }

}  // namespace retedit
