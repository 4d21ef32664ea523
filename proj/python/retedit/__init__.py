"""Retrieve-and-edit structured output prediction."""

from ._retedit import (
    Completion,
    Config,
    ConfigError,
    CorpusError,
    EvalReport,
    Example,
    MissingArtifact,
    NumericFailure,
    StageCounts,
    bleu,
    cmd_build_index,
    cmd_complete,
    cmd_evaluate,
    cmd_ingest,
    cmd_synth,
    cmd_train_editor,
    cmd_train_retriever,
    completion_runs,
    detokenize,
    exact_match,
    format_table,
    load_jsonl,
    reports_from_json,
    run_pipeline,
    save_jsonl,
    synthesize_corpus,
    tokenize,
    vmf,
)

__all__ = [name for name in dir() if not name.startswith("_")]
