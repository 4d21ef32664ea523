#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retedit/corpus.hpp"

namespace retedit {

class Editor;
class Retriever;

/// Smoothing added to zero n-gram match counts in sentence BLEU.
inline constexpr double kBleuEpsilon = 1e-9;

/// Sentence BLEU-4 in [0, 100]: uniform weights over the n-gram orders the
/// reference has, brevity penalty, kBleuEpsilon in place of zero matches.
/// Empty candidates and candidates with no unigram match score 0.
double bleu(const TokenSeq& candidate, const TokenSeq& reference);
int exact_match(const TokenSeq& candidate, const TokenSeq& reference);

struct RunLengths {
  double longest = 0.0;
  double mean = 0.0;
};

/// Maximal runs of consecutive correct positions; an example without a
/// correct position scores 0 for both.
RunLengths completion_runs(const std::vector<bool>& correct);

/// Anything that predicts an output and ranks next-token candidates.
class System {
 public:
  virtual ~System() = default;
  virtual const std::string& name() const = 0;
  virtual TokenSeq predict(const Example& x) const = 0;
  /// For every position t of x.output, at most k ranked candidates for the
  /// token after the gold prefix output[0..t).
  virtual std::vector<TokenSeq> candidates(const Example& x, int k) const = 0;
};

/// Emits the retrieved y' verbatim; its only candidate at position t is y'[t].
class RetrieverOnlySystem : public System {
 public:
  RetrieverOnlySystem(std::string name, const Retriever& retriever) : name_(std::move(name)), retriever_(&retriever) {}
  const std::string& name() const override { return name_; }
  TokenSeq predict(const Example& x) const override;
  std::vector<TokenSeq> candidates(const Example& x, int k) const override;

 private:
  std::string name_;
  const Retriever* retriever_;
};

/// Retrieve-and-edit; with a null retriever it is the Seq2Seq baseline.
class EditorSystem : public System {
 public:
  EditorSystem(std::string name, const Editor& editor, const Retriever* retriever, int beam_width)
      : name_(std::move(name)), editor_(&editor), retriever_(retriever), beam_width_(beam_width) {}
  const std::string& name() const override { return name_; }
  TokenSeq predict(const Example& x) const override;
  std::vector<TokenSeq> candidates(const Example& x, int k) const override;

 private:
  std::string name_;
  const Editor* editor_;
  const Retriever* retriever_;
  int beam_width_;
};

struct AutocompleteResult {
  std::vector<int> ks;
  std::vector<std::vector<std::vector<bool>>> correct;  // [example][k][position]
  std::vector<std::vector<RunLengths>> runs;             // [example][k]
  std::vector<double> longest;                           // [k], mean over examples
  std::vector<double> average;                           // [k], mean over examples
};

/// Aggregates per-example correctness bits ([example][k][position]).
AutocompleteResult summarize_autocomplete(std::vector<int> ks, std::vector<std::vector<std::vector<bool>>> correct);

struct EvalOptions {
  std::vector<int> ks = {1, 5, 10};
  /// Examples are split across this many threads; results do not depend on it.
  int workers = 1;
};

AutocompleteResult autocomplete_eval(const System& system, const Dataset& data, const EvalOptions& opts = {});

struct ReportMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string dataset_hash;
};

struct EvalReport {
  std::string system;
  std::size_t examples = 0;
  double bleu = 0.0;
  double exact_match = 0.0;
  std::vector<int> ks;
  std::vector<double> longest;
  std::vector<double> average;
  std::string smoothing = "sentence BLEU-4, add-epsilon 1e-9";
  ReportMeta meta;
  std::vector<double> example_bleu;
  AutocompleteResult autocomplete;
};

EvalReport evaluate(const System& system, const Dataset& data, const ReportMeta& meta, const EvalOptions& opts = {});

/// Retrieve+Edit, Seq2Seq and Retriever-only on the same examples, in that order.
std::vector<EvalReport> run_table1(const Dataset& test, const System& retrieve_edit, const System& seq2seq,
                                   const System& retriever_only, const ReportMeta& meta,
                                   const EvalOptions& opts = {});
/// Task, Input and Lexical retrievers in Retriever-only mode, in that order.
std::vector<EvalReport> run_table2(const Dataset& test, const System& task, const System& input, const System& lexical,
                                   const ReportMeta& meta, const EvalOptions& opts = {});

/// system,bleu,exact_match,longest_k1,...,avg_k1,...
std::string reports_to_csv(const std::vector<EvalReport>& reports);
std::string format_table(const std::vector<EvalReport>& reports);
/// Summary metrics and metadata (per-example data is not serialized).
std::string reports_to_json(const std::vector<EvalReport>& reports);
std::vector<EvalReport> reports_from_json(const std::string& text);
/// Throws std::runtime_error when dataset hashes differ, unless forced.
void check_comparable(const std::vector<EvalReport>& reports, bool force);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::string dataset_hash(const Dataset& data);

}  // namespace retedit
