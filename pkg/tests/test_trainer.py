import dataclasses
import json

import numpy as np
import pytest

from helpers import deterministic_grammar, toy_grammars
from pairgram import trainer as trainer_mod
from pairgram.autodiff import backward
from pairgram.config import ConfigError, TrainConfig
from pairgram.grounding import total_loss
from pairgram.synthgen import generate_corpus
from pairgram.trainer import (
    TrainingDivergedError,
    batch_loss,
    build_model,
    evaluate,
    load_model,
    resolve_config,
    train,
)


def tiny_config(**kw):
    base = dict(
        lang_nonterminals=3,
        lang_preterminals=3,
        vis_nonterminals=3,
        vis_preterminals=4,
        symbol_dim=8,
        z_dim=2,
        mlp_hidden=8,
        rnn_hidden=6,
        enc_embed_dim=6,
        align_dim=8,
        feat_dim=6,
        cluster_dim=6,
        vocab_size=6,
        batch_size=4,
        epochs=2,
        learning_rate=3e-3,
        retrieval_trials=200,
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def toy_corpus(n_train=8, n_test=8, seed=3, **kw):
    return generate_corpus(toy_grammars(**kw), n_train, n_test, seed=seed)


def lang_params(model):
    return {
        k: v.data.copy()
        for k, v in model.named_parameters().items()
        if k.startswith(("lang.", "lang_enc."))
    }


def vis_params(model):
    return {
        k: v.data.copy()
        for k, v in model.named_parameters().items()
        if k.startswith(("vis.", "vis_enc.", "perception."))
    }


def test_zero_contrastive_decouples_the_modalities(tmp_path):
    train_set, _ = toy_corpus()
    joint, _ = train(
        tiny_config(lambda_contrastive=0.0), train_set, tmp_path / "joint"
    )
    lang_only, _ = train(
        tiny_config(lambda_contrastive=0.0, lambda_vision=0.0),
        train_set,
        tmp_path / "lang",
    )
    vis_only, _ = train(
        tiny_config(lambda_contrastive=0.0, lambda_language=0.0),
        train_set,
        tmp_path / "vis",
    )
    for name, arr in lang_params(joint).items():
        assert np.array_equal(arr, lang_params(lang_only)[name]), name
    for name, arr in vis_params(joint).items():
        assert np.array_equal(arr, vis_params(vis_only)[name]), name


def test_loss_decreases_on_toy_corpus(tmp_path):
    train_set, _ = toy_corpus(n_train=10)
    wins = 0
    for seed in range(4):
        cfg = tiny_config(epochs=5, seed=seed, batch_size=10, z_dim=0)
        _, history = train(cfg, train_set, tmp_path / f"s{seed}")
        losses = [h["loss_total"] for h in history]
        if all(b < a for a, b in zip(losses, losses[1:])):
            wins += 1
    assert wins >= 3, f"loss decreased monotonically for only {wins}/4 seeds"


def test_training_is_deterministic(tmp_path):
    train_set, _ = toy_corpus()
    cfg = tiny_config()
    train(cfg, train_set, tmp_path / "a")
    train(cfg, train_set, tmp_path / "b")
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == (
        tmp_path / "b/metrics.jsonl"
    ).read_bytes()
    assert (tmp_path / "a/checkpoint.bin").read_bytes() == (
        tmp_path / "b/checkpoint.bin"
    ).read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path):
    train_set, _ = toy_corpus()
    full_cfg = tiny_config(epochs=4)
    _, full_hist = train(full_cfg, train_set, tmp_path / "full")

    part_cfg = tiny_config(epochs=2)
    train(part_cfg, train_set, tmp_path / "part")
    # resuming continues under the full-length config
    _, tail_hist = train(
        full_cfg,
        train_set,
        tmp_path / "part",
        resume_from=tmp_path / "part" / "checkpoint.bin",
    )
    assert [h["epoch"] for h in tail_hist] == [2, 3]
    for resumed, straight in zip(tail_hist, full_hist[2:]):
        for key in ("loss_total", "loss_language", "loss_vision"):
            assert abs(resumed[key] - straight[key]) <= 1e-10

    full_model, _, _ = load_model(tmp_path / "full" / "checkpoint.bin")
    resumed_model, _, _ = load_model(tmp_path / "part" / "checkpoint.bin")
    for name, p in full_model.named_parameters().items():
        q = resumed_model.named_parameters()[name]
        assert np.allclose(p.data, q.data, atol=1e-10), name


def test_resume_rejects_config_mismatch(tmp_path):
    train_set, _ = toy_corpus()
    cfg = tiny_config(epochs=1)
    train(cfg, train_set, tmp_path / "run")
    other = tiny_config(epochs=1, learning_rate=1e-4)
    with pytest.raises(ConfigError, match="does not match"):
        train(other, train_set, tmp_path / "run2",
              resume_from=tmp_path / "run" / "checkpoint.bin")


def test_alignment_couples_both_grammars():
    train_set, _ = toy_corpus()
    cfg = tiny_config(
        lambda_language=0.0, lambda_vision=0.0, lambda_contrastive=1.0
    )
    cfg = resolve_config(cfg, train_set)
    model = build_model(cfg)
    bundle = batch_loss(model, cfg, train_set[:4], epoch=0, indices=[0, 1, 2, 3])
    assert bundle.contrastive.item() > 0.0
    grads = backward(
        bundle.total,
        wrt=[model.lang_grammar.binary_head, model.vis_grammar.binary_head],
    )
    assert np.abs(grads[model.lang_grammar.binary_head]).max() > 0.0
    assert np.abs(grads[model.vis_grammar.binary_head]).max() > 0.0


def test_nan_loss_aborts_with_snapshot(tmp_path, monkeypatch):
    train_set, _ = toy_corpus()

    def poisoned(model, config, batch, epoch, indices):
        from pairgram.autodiff import Tensor

        bad = Tensor(float("nan"))
        return total_loss(bad, bad, Tensor(0.0))

    monkeypatch.setattr(trainer_mod, "batch_loss", poisoned)
    with pytest.raises(TrainingDivergedError, match="snapshot"):
        train(tiny_config(), train_set, tmp_path / "bad")
    assert (tmp_path / "bad" / "diverged.bin").exists()


def test_contrastive_with_batch_one_is_config_error():
    with pytest.raises(ConfigError):
        tiny_config(batch_size=1, lambda_contrastive=1.0)


def _plant_oracle_parameters(model, grammar):
    """Overwrite a net_layers=0, z_dim=0 model with parameters that
    realize the deterministic ((t0 t1)(t2 t3)) grammar."""
    big = 30.0
    for p in model.named_parameters().values():
        p.data[...] = 0.0
    for grammar_params, emit in (
        (model.lang_grammar, True),
        (model.vis_grammar, False),
    ):
        n_nt = grammar_params.spec.n_nonterminals
        s = grammar_params.spec.n_symbols
        grammar_params.root_embed.data[0] = 1.0
        grammar_params.start_head.data[:, 0] = [big, 0.0, 0.0]
        for a in range(n_nt):
            grammar_params.nonterm_embed.data[a, a] = 1.0
        # R -> L Rr ; L -> t0 t1 ; Rr -> t2 t3 (preterm block starts at n_nt)
        rules = {0: (1, 2), 1: (n_nt + 0, n_nt + 1), 2: (n_nt + 2, n_nt + 3)}
        for a, (b, c) in rules.items():
            grammar_params.binary_head.data[b * s + c, a] = big
        if emit:
            for t in range(4):
                grammar_params.preterm_embed.data[t, n_nt + t] = 1.0
                grammar_params.term_head.data[t, n_nt + t] = big
    model.vis_grammar.cluster_head.data[...] = grammar.tag_means / 4.0


def test_oracle_parameters_reach_perfect_f1(tmp_path):
    grammar = deterministic_grammar(feat_dim=6)
    _, test_set = generate_corpus([grammar], 4, 24, seed=9)
    cfg = tiny_config(
        lang_nonterminals=3,
        lang_preterminals=4,
        vis_nonterminals=3,
        vis_preterminals=4,
        z_dim=0,
        net_layers=0,
        cluster_layers=0,
        vocab_size=4,
    )
    model = build_model(cfg)
    _plant_oracle_parameters(model, grammar)
    report = evaluate(model, cfg, test_set, seed=0)
    assert report.instance_f1["language"] >= 0.99
    assert report.instance_f1["vision"] >= 0.99
    assert report.clustering_accuracy == 1.0
    assert report.retrieval_ir is not None
    # branching baselines always reported alongside
    assert set(report.baselines) == {"left", "right"}
    for name in ("left", "right"):
        assert set(report.baselines[name]) == {"language", "vision"}

    again = evaluate(model, cfg, test_set, seed=0)
    assert again.to_dict() == report.to_dict()


def test_evaluate_reports_seen_unseen_sections(tmp_path):
    train_set, test_set = toy_corpus()
    cfg = tiny_config(epochs=1)
    model, _ = train(cfg, train_set, tmp_path / "run",
                     holdout_categories=("lists",))
    report = evaluate(model, resolve_config(cfg, train_set), test_set,
                      holdout_categories=("lists",))
    assert "seen" in report.extra and "unseen" in report.extra
    assert "language" in report.extra["seen"]
    assert "unseen_left_branch_vision" in report.extra


def test_curriculum_filters_then_lifts(tmp_path):
    train_set, _ = toy_corpus(n_train=12)
    lengths = sorted(i.n_tokens for i in train_set)
    cap = lengths[len(lengths) // 2]
    cfg = tiny_config(curriculum_len_cap=cap, curriculum_epochs=1, epochs=2)
    short = trainer_mod._curriculum(train_set, cfg, epoch=0)
    assert all(i.n_tokens <= cap for i in short)
    assert len(short) < len(train_set)
    assert trainer_mod._curriculum(train_set, cfg, epoch=1) == train_set
