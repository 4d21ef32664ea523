#include "retedit/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "retedit/embednet.hpp"
#include "retedit/synth.hpp"

namespace retedit {

namespace fs = std::filesystem;

namespace {

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

void require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifact(path, producer);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::function<void(const nn::TrainLogEntry&)> progress(const Logger& log, const std::string& what) {
  if (!log) return {};
  return [log, what](const nn::TrainLogEntry& e) {
    std::ostringstream s;
    s << "[" << what << "] iteration " << e.iteration << " loss " << e.loss;
    log(s.str());
  };
}

void save_log(const fs::path& path, const nn::TrainLog& log) {
  std::ostringstream s;
  s << "iteration,loss,wallclock_ms\n";
  for (const auto& e : log) s << e.iteration << "," << e.loss << "," << e.wallclock_ms << "\n";
  write_text(path, s.str());
}

void stamp(Checkpoint& ckpt, const Config& cfg, const Dataset& train) {
  ckpt.meta["config_hash"] = cfg.hash();
  ckpt.meta["dataset_hash"] = dataset_hash(train);
  ckpt.meta["created_by"] = "retedit";
}

Dataset load_split(const fs::path& path) {
  require(path, "ingest");
  return load_jsonl(path);
}

}  // namespace

// ---------------------------------------------------------------------------
// Workspace

Workspace::Workspace(const Config& cfg) : cfg_(cfg), paths_(cfg.work_dir) {
  train_ = load_split(paths_.train());
  validation_ = load_split(paths_.validation());
  test_ = load_split(paths_.test());
  require(paths_.vocab(), "ingest");
  vocab_ = Vocabulary::load(paths_.vocab());
}

const Retriever& Workspace::retriever(RetrieverKind kind) {
  auto& slot = retrievers_[static_cast<int>(kind)];
  if (slot) return *slot;
  if (kind == RetrieverKind::Lexical) {
    slot = std::make_unique<Retriever>(vocab_, train_, cfg_.index);
    return *slot;
  }
  require(paths_.retriever(kind), "train-retriever");
  require(paths_.store(kind), "build-index");
  auto net = std::make_shared<const RetrieverNet>(retriever_from_checkpoint(load_checkpoint(paths_.retriever(kind))));
  auto [entries, seed] = load_embeddings(paths_.store(kind));
  IndexOptions opts = cfg_.index;
  opts.seed = seed;
  slot = std::make_unique<Retriever>(kind, std::move(net), vocab_, train_, std::move(entries), opts);
  return *slot;
}

const Editor& Workspace::editor() {
  if (!editor_) {
    require(paths_.editor(), "train-editor");
    editor_ = std::make_unique<Editor>(editor_from_checkpoint(load_checkpoint(paths_.editor())));
  }
  return *editor_;
}

const Editor& Workspace::seq2seq() {
  if (!seq2seq_) {
    require(paths_.seq2seq(), "train-editor");
    seq2seq_ = std::make_unique<Editor>(editor_from_checkpoint(load_checkpoint(paths_.seq2seq())));
  }
  return *seq2seq_;
}

ReportMeta Workspace::report_meta() const { return {cfg_.data_seed, cfg_.hash(), dataset_hash(test_)}; }

// ---------------------------------------------------------------------------
// Stages

std::size_t cmd_synth(const Config& cfg, const fs::path& out, const Logger& log) {
  const auto data = synthesize_corpus(cfg.synth);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_jsonl(out, data);
  say(log, "synth: " + std::to_string(data.size()) + " examples from " + std::to_string(cfg.synth.templates) +
               " templates -> " + out.string());
  return data.size();
}

StageCounts cmd_ingest(const Config& cfg, const fs::path& raw, const Logger& log) {
  cfg.validate();
  StageCounts counts;
  Dataset data;
  try {
    data = load_jsonl(raw);
  } catch (const CorpusError& e) {
    throw CorpusError(std::string("ingest/tokenize: ") + e.what());
  }
  counts.raw = data.size();
  data = filter_by_length(data, static_cast<std::size_t>(cfg.max_output_tokens));
  counts.filtered = data.size();
  data = deduplicate(data);
  counts.deduplicated = data.size();
  const SplitRatios ratios{cfg.train_ratio, cfg.valid_ratio, cfg.test_ratio};
  DatasetSplit split;
  try {
    split = cfg.split == "instance" ? split_within_groups(data, ratios, cfg.data_seed)
                                    : split_by_group(data, ratios, cfg.data_seed);
  } catch (const CorpusError& e) {
    throw CorpusError(std::string("ingest/split: ") + e.what());
  }
  if (split.train.empty()) throw CorpusError("ingest/split: the training split is empty");
  counts.train = split.train.size();
  counts.validation = split.validation.size();
  counts.test = split.test.size();

  const RunPaths paths(cfg.work_dir);
  fs::create_directories(paths.dir);
  save_jsonl(paths.train(), split.train);
  save_jsonl(paths.validation(), split.validation);
  save_jsonl(paths.test(), split.test);
  build_vocabulary(split.train, cfg.min_count).save(paths.vocab());
  cfg.save(paths.config());
  say(log, "ingest: raw " + std::to_string(counts.raw) + ", after length filter " + std::to_string(counts.filtered) +
               ", after dedup " + std::to_string(counts.deduplicated) + ", split " + std::to_string(counts.train) +
               "/" + std::to_string(counts.validation) + "/" + std::to_string(counts.test));
  return counts;
}

void cmd_train_retriever(const Config& cfg, const Logger& log) {
  cfg.validate();
  const RunPaths paths(cfg.work_dir);
  const Dataset train = load_split(paths.train());
  require(paths.vocab(), "ingest");
  const Vocabulary vocab = Vocabulary::load(paths.vocab());
  for (auto [kind, target] : {std::pair{RetrieverKind::Task, ReconTarget::Output},
                              std::pair{RetrieverKind::Input, ReconTarget::Input}}) {
    const std::string name = to_string(kind);
    auto run = train_retriever(train, vocab, cfg.retriever, target, progress(log, "retriever " + name));
    auto ckpt = retriever_checkpoint(run.net, vocab, "retriever/" + name);
    stamp(ckpt, cfg, train);
    save_checkpoint(paths.retriever(kind), ckpt);
    save_log(paths.train_log("retriever_" + name), run.log);
    say(log, "train-retriever: wrote " + paths.retriever(kind).string());
  }
}

void cmd_build_index(const Config& cfg, const Logger& log) {
  const RunPaths paths(cfg.work_dir);
  const Dataset train = load_split(paths.train());
  require(paths.vocab(), "ingest");
  const Vocabulary vocab = Vocabulary::load(paths.vocab());
  for (auto kind : {RetrieverKind::Task, RetrieverKind::Input}) {
    require(paths.retriever(kind), "train-retriever");
    const auto net = retriever_from_checkpoint(load_checkpoint(paths.retriever(kind)));
    std::vector<IndexEntry> entries;
    for (const auto& ex : train) entries.push_back({ex.id, net.encode(net.encode_fields(vocab, ex)).values()});
    save_embeddings(paths.store(kind), entries, cfg.index.seed);
    say(log, "build-index: embedded " + std::to_string(entries.size()) + " examples -> " +
                 paths.store(kind).string());
  }
}

void cmd_train_editor(const Config& cfg, const Logger& log) {
  cfg.validate();
  Workspace ws(cfg);
  const RunPaths& paths = ws.paths();
  const Retriever& task = ws.retriever(RetrieverKind::Task);
  EditorConfig ecfg = cfg.editor;
  ecfg.use_retrieval = true;
  auto edit = train_editor(ws.train(), ws.vocab(), &task, ecfg, progress(log, "editor"));
  auto ckpt = editor_checkpoint(edit.editor, "editor/retrieve_edit");
  stamp(ckpt, cfg, ws.train());
  save_checkpoint(paths.editor(), ckpt);
  save_log(paths.train_log("editor"), edit.log);
  say(log, "train-editor: wrote " + paths.editor().string());

  ecfg.use_retrieval = false;
  auto s2s = train_editor(ws.train(), ws.vocab(), nullptr, ecfg, progress(log, "seq2seq"));
  ckpt = editor_checkpoint(s2s.editor, "editor/seq2seq");
  stamp(ckpt, cfg, ws.train());
  save_checkpoint(paths.seq2seq(), ckpt);
  save_log(paths.train_log("seq2seq"), s2s.log);
  say(log, "train-editor: wrote " + paths.seq2seq().string());
}

std::vector<EvalReport> cmd_evaluate(const Config& cfg, bool force, const Logger& log) {
  cfg.validate();
  Workspace ws(cfg);
  const RunPaths& paths = ws.paths();
  const auto train_hash = dataset_hash(ws.train());
  for (const auto& path : {paths.retriever(RetrieverKind::Task), paths.retriever(RetrieverKind::Input), paths.editor(),
                           paths.seq2seq()}) {
    require(path, path == paths.editor() || path == paths.seq2seq() ? "train-editor" : "train-retriever");
    const auto ckpt = load_checkpoint(path);
    const auto it = ckpt.meta.find("dataset_hash");
    if (!force && (it == ckpt.meta.end() || it->second != train_hash))
      throw std::runtime_error(path.string() + " was trained on a different training set; pass --force to evaluate anyway");
  }
  Dataset test = ws.test();
  if (cfg.eval_max_examples > 0 && test.size() > static_cast<std::size_t>(cfg.eval_max_examples))
    test.resize(static_cast<std::size_t>(cfg.eval_max_examples));

  const Retriever& task = ws.retriever(RetrieverKind::Task);
  const Retriever& input = ws.retriever(RetrieverKind::Input);
  const Retriever& lexical = ws.retriever(RetrieverKind::Lexical);
  const EditorSystem retrieve_edit("retrieve_edit", ws.editor(), &task, cfg.beam_width);
  const EditorSystem seq2seq("seq2seq", ws.seq2seq(), nullptr, cfg.beam_width);
  const RetrieverOnlySystem task_only("retriever_only_task", task);
  const RetrieverOnlySystem input_only("retriever_only_input", input);
  const RetrieverOnlySystem lexical_only("retriever_only_lexical", lexical);

  ReportMeta meta = ws.report_meta();
  meta.dataset_hash = dataset_hash(test);
  EvalOptions opts;
  opts.workers = cfg.eval_workers;
  say(log, "evaluate: " + std::to_string(test.size()) + " test examples");
  auto reports = run_table1(test, retrieve_edit, seq2seq, task_only, meta, opts);
  // The task Retriever-only row is shared between both tables.
  reports.push_back(evaluate(input_only, test, meta, opts));
  reports.push_back(evaluate(lexical_only, test, meta, opts));

  write_text(paths.report_csv(), reports_to_csv(reports));
  write_text(paths.report_json(), reports_to_json(reports));
  write_text(paths.report_txt(), format_table(reports));
  say(log, "evaluate: wrote " + paths.report_csv().string());
  return reports;
}

Completion cmd_complete(const Config& cfg, const Example& x, bool train_mode, int k, const Logger& log) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  Workspace ws(cfg);
  const Retriever& task = ws.retriever(RetrieverKind::Task);
  const auto hit = task.retrieve(x, train_mode ? &x.id : nullptr);
  Completion c;
  c.retrieved_id = hit.example->id;
  c.distance = hit.distance;
  const Editor& editor = ws.editor();
  const EditInput in = EditInput::from(x, hit.example);
  const CopySource src = editor.make_source(in);
  for (const auto& h : editor.beam_search(in, std::max(k, cfg.beam_width))) {
    if (static_cast<int>(c.outputs.size()) == k) break;
    auto ids = h.tokens;
    if (!ids.empty() && ids.back() == Vocabulary::kEos) ids.pop_back();
    c.outputs.push_back(editor.surface_tokens(src, ids));
    c.logprobs.push_back(h.logprob);
  }
  say(log, "complete: retrieved " + c.retrieved_id);
  return c;
}

std::vector<EvalReport> run_pipeline(const Config& cfg, const Logger& log) {
  cfg.validate();
  const RunPaths paths(cfg.work_dir);
  fs::create_directories(paths.dir);
  const auto raw = paths.dir / "raw.jsonl";
  cmd_synth(cfg, raw, log);
  cmd_ingest(cfg, raw, log);
  cmd_train_retriever(cfg, log);
  cmd_build_index(cfg, log);
  cmd_train_editor(cfg, log);
  return cmd_evaluate(cfg, false, log);
}

}  // namespace retedit
