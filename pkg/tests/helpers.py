"""Shared fixtures-by-hand for grammar and chart tests."""

import numpy as np

from pairgram.autodiff import Tensor
from pairgram.grammar import RuleProbs


def normalize_log(x, axis):
    m = x.max(axis=axis, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=axis, keepdims=True))


def make_rules(start_lp, binary_lp, terminal_lp=None, requires_grad=False):
    n_nt = len(start_lp)
    s = np.asarray(binary_lp).shape[1]
    return RuleProbs(
        start=Tensor(start_lp, requires_grad=requires_grad),
        binary=Tensor(binary_lp, requires_grad=requires_grad),
        terminal=None if terminal_lp is None else Tensor(terminal_lp),
        n_nonterminals=n_nt,
        n_preterminals=s - n_nt,
    )


def random_rules(rng, n_nt, n_pt, vocab, scale=1.0, requires_grad=False):
    s = n_nt + n_pt
    start = normalize_log(rng.normal(size=n_nt) * scale, axis=0)
    binary = normalize_log(
        rng.normal(size=(n_nt, s, s)).reshape(n_nt, -1) * scale, axis=1
    ).reshape(n_nt, s, s)
    term = normalize_log(rng.normal(size=(n_pt, vocab)) * scale, axis=1)
    return make_rules(start, binary, term, requires_grad=requires_grad)


def random_term_lp(rules, rng, n):
    vocab = rules.terminal.shape[1]
    tokens = rng.integers(0, vocab, size=n)
    return Tensor(rules.terminal.data[:, tokens].T.copy()), tokens


def toy_grammars(feat_dim=6, separation=4.0, feature_scale=1.0, seed=0):
    """Two tiny categories with mixed branching and 1-2 token phrases."""
    from pairgram.synthgen import GroundTruthGrammar

    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(feat_dim, feat_dim)))
    means = np.sqrt(2.0) * separation * feature_scale * basis[:4]
    shared = dict(
        tags=["t0", "t1", "t2", "t3"],
        tag_means=means,
        feature_scale=feature_scale,
        phrase_templates={
            "t0": [((0,), 0.6), ((4, 0), 0.4)],
            "t1": [((1,), 1.0)],
            "t2": [((2,), 0.7), ((5, 2), 0.3)],
            "t3": [((3,), 1.0)],
        },
        vocab_size=6,
    )
    cat_a = GroundTruthGrammar(
        category="pairs",
        start_rules=[("R", 1.0)],
        binary_rules={
            "R": [(("L", "Rr"), 1.0)],
            "L": [(("t0", "t1"), 1.0)],
            "Rr": [(("t2", "t3"), 0.7), (("t2", "t2"), 0.3)],
        },
        **shared,
    )
    cat_b = GroundTruthGrammar(
        category="lists",
        start_rules=[("R", 1.0)],
        binary_rules={
            "R": [(("t3", "TAIL"), 1.0)],
            "TAIL": [(("t1", "t1"), 0.5), (("t1", "TAIL"), 0.5)],
        },
        **shared,
    )
    return [cat_a, cat_b]


def deterministic_grammar(feat_dim=6, separation=4.0, seed=0):
    """Single-derivation grammar: skeleton ((t0 t1)(t2 t3)), one token
    per tag, for oracle-parameter tests."""
    from pairgram.synthgen import GroundTruthGrammar

    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(feat_dim, feat_dim)))
    means = np.sqrt(2.0) * separation * basis[:4]
    return GroundTruthGrammar(
        category="fixed",
        start_rules=[("R", 1.0)],
        binary_rules={
            "R": [(("L", "Rr"), 1.0)],
            "L": [(("t0", "t1"), 1.0)],
            "Rr": [(("t2", "t3"), 1.0)],
        },
        tags=["t0", "t1", "t2", "t3"],
        tag_means=means,
        feature_scale=1.0,
        phrase_templates={t: [((i,), 1.0)] for i, t in enumerate(
            ["t0", "t1", "t2", "t3"]
        )},
        vocab_size=4,
    )
