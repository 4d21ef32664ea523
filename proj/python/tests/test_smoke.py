import math

import numpy as np
import pytest

import retedit


def tiny_config(tmp_path):
    cfg = retedit.Config()
    cfg.set_seed(1)
    settings = {
        "work_dir": str(tmp_path / "run"),
        "synth.templates": "8",
        "synth.instances": "5",
        "data.split": "instance",
        "retriever.embed_dim": "6",
        "retriever.hidden": "6",
        "retriever.latent": "6",
        "retriever.iterations": "5",
        "editor.embed_dim": "6",
        "editor.copy_dim": "6",
        "editor.hidden": "6",
        "editor.decoder_layers": "1",
        "editor.num_copy": "200",
        "editor.iterations": "3",
        "index.num_trees": "3",
        "eval.beam_width": "2",
    }
    for key, value in settings.items():
        cfg[key] = value
    cfg.validate()
    return cfg


def test_tokenize_round_trip():
    toks = retedit.tokenize("def f(a, b): return a+b")
    assert toks[:4] == ["def", "f", "(", "a"]
    assert retedit.tokenize(retedit.detokenize(toks)) == toks


def test_vmf_numerics():
    # d=3: C_3(kappa) = kappa / (4 pi sinh kappa)
    assert math.isclose(retedit.vmf.log_norm_const(3, 2.0), math.log(2.0 / (4 * math.pi * math.sinh(2.0))), rel_tol=1e-12)
    mu = np.array([1.0, 0.0, 0.0])
    assert retedit.vmf.kl(mu, mu, 10.0) == pytest.approx(0.0, abs=1e-12)
    draws = retedit.vmf.sample(mu, 10.0, 2000, seed=3)
    assert draws.shape == (2000, 3)
    assert np.allclose(np.linalg.norm(draws, axis=1), 1.0)
    assert np.linalg.norm(draws.mean(axis=0)) == pytest.approx(retedit.vmf.bessel_ratio(3, 10.0), abs=0.02)


def test_metrics():
    ref = ["return", "a", "+", "b"]
    assert retedit.bleu(ref, ref) == pytest.approx(100.0)
    assert retedit.bleu([], ref) == 0.0
    assert retedit.exact_match(ref, ref) == 1
    assert retedit.completion_runs([True, True, False, True, True]) == (2.0, 2.0)


def test_synth_and_config():
    data = retedit.synthesize_corpus(templates=3, instances=2, seed=0)
    assert len(data) == 6
    assert {ex.group_key for ex in data} == {"tmpl0", "tmpl1", "tmpl2"}
    assert retedit.Example.from_json(data[0].to_json()) == data[0]
    cfg = retedit.Config()
    cfg["retriever.kappa"] = "250"
    assert retedit.Config.from_text(cfg.to_text())["retriever.kappa"] == cfg["retriever.kappa"]
    with pytest.raises(retedit.ConfigError):
        cfg["no.such.key"] = "1"


def test_missing_artifact(tmp_path):
    cfg = tiny_config(tmp_path)
    with pytest.raises(retedit.MissingArtifact):
        retedit.cmd_evaluate(cfg)


def test_pipeline_and_complete(tmp_path):
    cfg = tiny_config(tmp_path)
    reports = retedit.run_pipeline(cfg)
    assert [r.system for r in reports][:3] == ["retrieve_edit", "seq2seq", "retriever_only_task"]
    assert all(0.0 <= r.bleu <= 100.0 for r in reports)
    train = retedit.load_jsonl(str(tmp_path / "run" / "train.jsonl"))
    done = retedit.cmd_complete(cfg, train[0], train_mode=False, k=2)
    assert done.retrieved_id == train[0].id
    assert len(done.outputs) == 2
    other = retedit.cmd_complete(cfg, train[0], train_mode=True, k=1)
    assert other.retrieved_id != train[0].id
