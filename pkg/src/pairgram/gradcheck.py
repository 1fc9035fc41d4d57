"""Finite-difference gradient suites, runnable from tests and the CLI.

Per-module checks must come in under 1e-6 relative error; the
end-to-end objective (all three loss terms through charts, marginals,
and encoders) under 1e-4. Relative error is
|autodiff - central difference| / max(1, |fd|).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, check_gradients
from .config import TrainConfig
from .grammar import LatentSample, rule_probs_language
from .synthgen import PairedInstance
from .trainer import batch_loss, build_model

PER_MODULE_TOL = 1e-6
END_TO_END_TOL = 1e-4


def check_core_ops(trials=10, seed=0):
    """Max relative error over arithmetic/linear/log-domain op graphs."""
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(seed + trial)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)

        def f():
            h = ad.tanh(ad.affine(a, w, b))
            h = ad.log_softmax(h, axis=1)
            m = ad.logsumexp(ad.concat([h, ad.transpose(h)[:3]], axis=0), axis=0)
            return (m * m).sum() + ad.exp(-(a * a)).mean()

        worst = max(worst, check_gradients(f, [a, w, b]))
    return worst


def check_rule_probs(seed=0):
    """Gradients of rule log-probabilities w.r.t. all grammar parameters."""
    from .grammar import GrammarSpec, init_compound_params

    spec = GrammarSpec(2, 2, 3, symbol_dim=3, z_dim=2)
    params = init_compound_params(spec, np.random.default_rng(seed), hidden=4)
    z = LatentSample.from_prior(np.random.default_rng(seed + 1), 2)
    rng = np.random.default_rng(seed + 2)
    w_start = rng.normal(size=2)
    w_bin = rng.normal(size=(2, 4, 4))
    w_term = rng.normal(size=(2, 3))
    tensors = list(params.named_parameters().values())

    def f():
        rules = rule_probs_language(params, z)
        return (
            (rules.start * w_start).sum()
            + (rules.binary * w_bin).sum()
            + (rules.terminal * w_term).sum()
        )

    return check_gradients(f, tensors, max_coords=6, rng=np.random.default_rng(0))


def tiny_paired_batch(feat_dim=5, seed=0):
    """Two length-3 paired instances for the end-to-end check."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(2):
        out.append(
            PairedInstance(
                id=f"fd-{i}",
                category="fd",
                tokens=[int(t) for t in rng.integers(0, 4, size=3)],
                parts=rng.normal(size=(3, feat_dim)),
                gold_lang_tree=[(0, 2), (0, 3)],
                gold_vis_tree=[(1, 3), (0, 3)],
                gold_part_tags=[0, 1, 2],
            )
        )
    return out


def end_to_end_config(feat_dim=5):
    return TrainConfig(
        lang_nonterminals=2,
        lang_preterminals=2,
        vocab_size=4,
        vis_nonterminals=2,
        vis_preterminals=3,
        symbol_dim=4,
        z_dim=2,
        mlp_hidden=4,
        rnn_hidden=3,
        enc_embed_dim=3,
        align_dim=4,
        feat_dim=feat_dim,
        cluster_dim=4,
        batch_size=2,
        epochs=1,
    )


def check_end_to_end(seed=0, max_coords=3):
    """Full objective on a length-3 paired batch vs central differences."""
    config = end_to_end_config()
    batch = tiny_paired_batch(config.feat_dim, seed=seed)
    model = build_model(config)
    params = list(model.named_parameters().values())
    rng = np.random.default_rng(seed + 7)
    # move off the all-zeros posterior head so its gradients are exercised
    for enc in (model.lang_encoder, model.vis_encoder):
        enc.post_w.data[...] = rng.normal(size=enc.post_w.shape) * 0.2

    def f():
        return batch_loss(model, config, batch, epoch=0, indices=[0, 1]).total

    return check_gradients(f, params, max_coords=max_coords,
                           rng=np.random.default_rng(seed + 11))


def run_all(quick=False, seed=0):
    """Run every suite; returns (all_passed, report lines)."""
    lines = []
    ok = True
    checks = [
        ("core ops", check_core_ops(trials=3 if quick else 10, seed=seed),
         PER_MODULE_TOL),
        ("rule probabilities", check_rule_probs(seed=seed), PER_MODULE_TOL),
        ("end-to-end objective",
         check_end_to_end(seed=seed, max_coords=2 if quick else 3),
         END_TO_END_TOL),
    ]
    for name, err, tol in checks:
        passed = err < tol
        ok &= passed
        lines.append(
            f"{'PASS' if passed else 'FAIL'} {name}: max rel err {err:.3e} "
            f"(tolerance {tol:.0e})"
        )
    return ok, lines
