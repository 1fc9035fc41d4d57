"""Training loop, optimization, checkpointing, and evaluation.

Every stochastic draw is derived from (seed, stream, epoch, ...) seed
sequences rather than a consumed stream, so runs are bitwise
reproducible, checkpoints resume exactly, and a joint run with the
contrastive weight at zero matches two independently trained grammars
step for step.
"""

from __future__ import annotations

import dataclasses
import json
import os
from contextlib import contextmanager

import numpy as np

from . import autodiff as ad
from . import grounding
from .autodiff import Tensor
from .chart import inside, mbr_decode, outside_and_marginals, viterbi_decode
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, config_to_text, parse_config
from .encoders import Perception, SequenceEncoder
from .evalkit import (
    EvalReport,
    branching_baselines,
    clustering_accuracy,
    retrieval_eval,
    span_f1,
)
from .grammar import (
    LANGUAGE,
    VISION,
    GrammarSpec,
    LatentSample,
    RuleProbs,
    clustering_posterior,
    init_compound_params,
    instance_terminal_log_probs,
    rule_probs_language,
    sequence_terminal_log_probs,
    start_binary_probs,
    vision_emissions,
)
from .grounding import alignment_score, contrastive_loss, total_loss


class TrainingDivergedError(RuntimeError):
    pass


# seed streams
_S_INIT, _S_SHUFFLE, _S_EPS_LANG, _S_EPS_VIS, _S_WARM, _S_EVAL = 1, 2, 3, 4, 5, 6


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


class JointModel:
    """Both grammars plus all encoders, with a flat parameter registry."""

    def __init__(self, config, rng):
        self.config = config
        if config.vocab_size <= 0:
            raise ConfigError("vocab_size must be resolved before building a model")
        self.lang_grammar = init_compound_params(
            GrammarSpec(
                config.lang_nonterminals,
                config.lang_preterminals,
                config.vocab_size,
                symbol_dim=config.symbol_dim,
                z_dim=config.z_dim,
                modality=LANGUAGE,
            ),
            rng,
            hidden=config.mlp_hidden,
            net_layers=config.net_layers,
            embed_scale=config.embed_scale,
        )
        self.perception = Perception(
            rng,
            config.feat_dim,
            out_dim=config.feat_dim,
            hidden=config.perception_hidden,
            layers=config.perception_layers,
        )
        self.vis_grammar = init_compound_params(
            GrammarSpec(
                config.vis_nonterminals,
                config.vis_preterminals,
                0,
                symbol_dim=config.symbol_dim,
                z_dim=config.z_dim,
                modality=VISION,
            ),
            rng,
            hidden=config.mlp_hidden,
            net_layers=config.net_layers,
            feat_dim=self.perception.out_dim,
            cluster_dim=config.cluster_dim,
            cluster_layers=config.cluster_layers,
            embed_scale=config.embed_scale,
        )
        self.lang_encoder = SequenceEncoder(
            rng,
            config.enc_embed_dim,
            config.rnn_hidden,
            config.z_dim,
            config.align_dim,
            vocab_size=config.vocab_size,
        )
        self.vis_encoder = SequenceEncoder(
            rng,
            self.perception.out_dim,
            config.rnn_hidden,
            config.z_dim,
            config.align_dim,
            modality="vision",
            span_source="inputs",
        )

    def named_parameters(self):
        out = {}
        out.update(self.lang_grammar.named_parameters("lang."))
        out.update(self.vis_grammar.named_parameters("vis."))
        out.update(self.perception.named_parameters("perception."))
        out.update(self.lang_encoder.named_parameters("lang_enc."))
        out.update(self.vis_encoder.named_parameters("vis_enc."))
        return out


def build_model(config):
    return JointModel(config, _rng(config.seed, _S_INIT))


@contextmanager
def frozen(model):
    """Temporarily untrack all parameters (fast gradient-free forward)."""
    params = list(model.named_parameters().values())
    saved = [(p.requires_grad, p._tracked) for p in params]
    for p in params:
        p.requires_grad = False
        p._tracked = False
    try:
        yield
    finally:
        for p, (rg, tr) in zip(params, saved):
            p.requires_grad = rg
            p._tracked = tr


def resolve_config(config, instances):
    """Fill inferred fields (vocabulary size) and sanity-check features."""
    if instances and instances[0].parts.shape[1] != config.feat_dim:
        raise ConfigError(
            f"dataset features have dim {instances[0].parts.shape[1]}, "
            f"config.feat_dim = {config.feat_dim}"
        )
    if config.vocab_size > 0:
        return config
    if not instances:
        raise ConfigError("cannot infer vocab_size from an empty dataset")
    vocab = max(max(i.tokens) for i in instances) + 1
    return dataclasses.replace(config, vocab_size=vocab)


# -- per-instance forward passes -------------------------------------------------


def _eps(config, stream, epoch, index):
    if config.z_dim == 0:
        return np.zeros(0)
    return _rng(config.seed, stream, epoch, index).normal(size=config.z_dim)


def language_pass(model, config, inst, eps=None, need_alignment=False):
    """Posterior, latent, chart, and (optionally) alignment inputs for
    one token sequence. eps=None decodes at the posterior mean."""
    post = model.lang_encoder.posterior(inst.tokens)
    z = post.sample(eps) if eps is not None else post.mean
    rules = rule_probs_language(model.lang_grammar, LatentSample(z, "posterior-reparameterized"))
    term = sequence_terminal_log_probs(rules, inst.tokens)
    chart, log_z = inside(rules, term)
    out = {"post": post, "rules": rules, "chart": chart, "log_z": log_z}
    if need_alignment:
        out["marginals"] = outside_and_marginals(chart)
        out["embeddings"] = model.lang_encoder.span_embeddings(
            inst.tokens, min_width=1 if config.include_unit_spans else 2
        )
    return out


def vision_pass(model, config, instances, eps_list, need_alignment=False):
    """Batch-shared emissions plus per-instance charts for the vision
    modality. The terminal inventory is all parts in `instances`."""
    feats = [model.perception(Tensor(inst.parts)) for inst in instances]
    emissions, offsets = vision_emissions(model.vis_grammar, feats)
    outs = []
    for i, inst in enumerate(instances):
        post = model.vis_encoder.posterior(feats[i])
        eps = eps_list[i]
        z = post.sample(eps) if eps is not None else post.mean
        start, binary = start_binary_probs(model.vis_grammar, z)
        rules = RuleProbs(
            start=start,
            binary=binary,
            terminal=emissions,
            n_nonterminals=model.vis_grammar.spec.n_nonterminals,
            n_preterminals=model.vis_grammar.spec.n_preterminals,
            part_offsets=offsets,
        )
        term = instance_terminal_log_probs(rules, i)
        chart, log_z = inside(rules, term)
        out = {"post": post, "rules": rules, "chart": chart, "log_z": log_z,
               "features": feats[i]}
        if need_alignment:
            out["marginals"] = outside_and_marginals(chart)
            out["embeddings"] = model.vis_encoder.span_embeddings(
                feats[i], min_width=1 if config.include_unit_spans else 2
            )
        outs.append(out)
    return outs


def batch_loss(model, config, batch, epoch, indices):
    """LossBundle for one batch; `indices` are corpus positions used to
    derive the per-instance latent noise."""
    lam_w, lam_v, lam_c = (
        config.lambda_language,
        config.lambda_vision,
        config.lambda_contrastive,
    )
    need_align = lam_c > 0
    zero = Tensor(0.0)
    lang_outs = vis_outs = None
    if lam_w > 0 or need_align:
        lang_outs = [
            language_pass(
                model, config, inst,
                eps=_eps(config, _S_EPS_LANG, epoch, idx),
                need_alignment=need_align,
            )
            for inst, idx in zip(batch, indices)
        ]
    if lam_v > 0 or need_align:
        vis_outs = vision_pass(
            model, config, batch,
            [_eps(config, _S_EPS_VIS, epoch, idx) for idx in indices],
            need_alignment=need_align,
        )

    def grammar_loss(outs):
        terms = [o["post"].kl() - o["log_z"] for o in outs]
        return ad.stack(terms, axis=0).mean() if terms else zero

    loss_lang = grammar_loss(lang_outs) if lang_outs else zero
    loss_vis = grammar_loss(vis_outs) if vis_outs else zero
    if need_align:
        b = len(batch)
        rows = []
        for i in range(b):
            rows.append(
                ad.stack(
                    [
                        alignment_score(
                            lang_outs[i]["marginals"],
                            vis_outs[j]["marginals"],
                            lang_outs[i]["embeddings"],
                            vis_outs[j]["embeddings"],
                            include_unit_spans=config.include_unit_spans,
                            normalize=config.normalize_alignment,
                        )
                        for j in range(b)
                    ],
                    axis=0,
                )
            )
        scores = ad.stack(rows, axis=0)
        loss_c = contrastive_loss(scores, margin=config.margin)
    else:
        loss_c = zero
    return total_loss(loss_lang, loss_vis, loss_c, weights=(lam_w, lam_v, lam_c))


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Adaptive first-order optimizer with bias-corrected moments."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params  # name -> Tensor, fixed insertion order
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            v = self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {"opt.t": np.array([float(self.t)])}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays):
        self.t = int(arrays["opt.t"][0])
        for name in self.params:
            self.m[name] = arrays[f"opt.m.{name}"].copy()
            self.v[name] = arrays[f"opt.v.{name}"].copy()


# -- warm start ------------------------------------------------------------------


def _kmeans(x, k, rng, iters=25, restarts=8):
    """Lloyd's with distance-weighted seeding; the lowest-inertia restart
    wins, which matters more than iteration count at desk scale."""
    n = x.shape[0]
    best = (np.inf, None)
    for _ in range(restarts):
        centers = [x[int(rng.integers(n))]]
        for _ in range(k - 1):
            d2 = np.min(
                ((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1
            )
            total = d2.sum()
            probs = d2 / total if total > 0 else np.full(n, 1.0 / n)
            centers.append(x[int(rng.choice(n, p=probs))])
        centers = np.array(centers)
        for _ in range(iters):
            dists = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
            assign = np.argmin(dists, axis=1)
            for j in range(k):
                members = x[assign == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
        dists = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        inertia = float(dists[np.arange(n), np.argmin(dists, axis=1)].sum())
        if inertia < best[0]:
            best = (inertia, centers)
    return best[1]


def warm_start_clustering(model, config, instances, rng):
    """Nearest-mean initialization of the clustering head from k-means
    over the clustering net's outputs on a sample of training parts."""
    pool = np.concatenate([inst.parts for inst in instances])
    if len(pool) > config.warm_start_samples:
        sel = rng.choice(len(pool), size=config.warm_start_samples, replace=False)
        pool = pool[sel]
    with frozen(model):
        feats = model.perception(Tensor(pool))
        encoded = model.vis_grammar.cluster_net(feats).data
    centers = _kmeans(encoded, config.vis_preterminals, rng)
    scale = config.warm_start_scale / max(1e-12, float((encoded**2).sum(1).mean()))
    model.vis_grammar.cluster_head.data[...] = scale * centers


# -- training --------------------------------------------------------------------


def _curriculum(instances, config, epoch):
    if config.curriculum_len_cap > 0 and epoch < config.curriculum_epochs:
        kept = [i for i in instances if i.n_tokens <= config.curriculum_len_cap]
        if kept:
            return kept
    return instances


def _checkpoint_arrays(model, adam):
    arrays = {name: p.data for name, p in model.named_parameters().items()}
    arrays.update(adam.state_arrays())
    return arrays


def train(config, instances, out_dir, eval_instances=None, resume_from=None,
          holdout_categories=()):
    """Run the joint objective over `instances`; writes metrics.jsonl and
    checkpoint.bin into out_dir and returns (model, history).

    Held-out categories are dropped from training here as well, so a
    corpus containing them can drive the generalization protocol
    directly.
    """
    os.makedirs(out_dir, exist_ok=True)
    config = resolve_config(config, instances)  # vocab covers held-out categories
    holdout = set(holdout_categories)
    instances = [i for i in instances if i.category not in holdout]
    if not instances:
        raise ConfigError("no training instances left after holdout filtering")
    if config.lambda_contrastive > 0 and config.batch_size < 2:
        raise ConfigError("contrastive training needs batch_size >= 2")

    model = build_model(config)
    params = model.named_parameters()
    adam = Adam(
        params,
        lr=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )
    master_rng = _rng(config.seed, _S_WARM)
    start_epoch = 0
    if resume_from is not None:
        arrays, config_text, meta = load_checkpoint(resume_from)
        stored = dataclasses.asdict(parse_config(config_text))
        requested = dataclasses.asdict(config)
        stored.pop("epochs"), requested.pop("epochs")  # resuming may extend
        if stored != requested:
            raise ConfigError("checkpoint config does not match the requested run")
        for name, p in params.items():
            p.data[...] = arrays[name]
        adam.load_state(arrays)
        start_epoch = int(meta["epoch"])
        master_rng.bit_generator.state = meta["rng_state"]
    elif config.warm_start_clustering:
        warm_start_clustering(model, config, instances, master_rng)

    history = []
    mode = "a" if resume_from is not None else "w"
    metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), mode)
    param_list = list(params.values())
    try:
        with ad.nan_checks(config.debug_checks):
            for epoch in range(start_epoch, config.epochs):
                pool = _curriculum(instances, config, epoch)
                order = _rng(config.seed, _S_SHUFFLE, epoch).permutation(len(pool))
                sums = {}
                n_batches = 0
                for lo in range(0, len(order), config.batch_size):
                    idx = order[lo : lo + config.batch_size]
                    if config.lambda_contrastive > 0 and len(idx) < 2:
                        continue  # a lone trailing instance has no negatives
                    batch = [pool[i] for i in idx]
                    bundle = batch_loss(model, config, batch, epoch, idx.tolist())
                    if not np.isfinite(bundle.total.data):
                        snap = os.path.join(out_dir, "diverged.bin")
                        save_checkpoint(
                            snap,
                            _checkpoint_arrays(model, adam),
                            config_to_text(config),
                            {"epoch": epoch, "step": adam.t,
                             "rng_state": master_rng.bit_generator.state},
                        )
                        raise TrainingDivergedError(
                            f"non-finite loss at epoch {epoch}; snapshot: {snap}"
                        )
                    grads = ad.backward(bundle.total, wrt=param_list, free_graph=True)
                    adam.step(grads)
                    for key, val in bundle.to_floats().items():
                        sums[key] = sums.get(key, 0.0) + val
                    n_batches += 1
                record = {"epoch": epoch, "step": adam.t}
                for key, val in sums.items():
                    record[key] = val / max(1, n_batches)
                if (
                    eval_instances
                    and config.eval_every
                    and (epoch + 1) % config.eval_every == 0
                ):
                    report = evaluate(
                        model, config, eval_instances, seed=config.seed,
                        compute_retrieval=False,
                    )
                    for modality, val in report.instance_f1.items():
                        record[f"eval_instance_f1_{modality}"] = val
                    if report.clustering_accuracy is not None:
                        record["eval_clustering_accuracy"] = report.clustering_accuracy
                metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
                metrics_fh.flush()
                history.append(record)
    finally:
        metrics_fh.close()
    save_checkpoint(
        os.path.join(out_dir, "checkpoint.bin"),
        _checkpoint_arrays(model, adam),
        config_to_text(config),
        {"epoch": config.epochs, "step": adam.t,
         "rng_state": master_rng.bit_generator.state},
    )
    return model, history


def load_model(path):
    """Rebuild a model (and its config) from a checkpoint file."""
    arrays, config_text, meta = load_checkpoint(path)
    config = parse_config(config_text)
    model = build_model(config)
    for name, p in model.named_parameters().items():
        if name not in arrays:
            raise ConfigError(f"checkpoint is missing parameter {name}")
        if arrays[name].shape != p.data.shape:
            raise ConfigError(
                f"checkpoint parameter {name} has shape {arrays[name].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data[...] = arrays[name]
    return model, config, meta


# -- evaluation ------------------------------------------------------------------


def _unit_rows_np(x, eps=1e-12):
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    mask = norms > eps
    if (~mask).any():
        grounding._zero_norm_count += int((~mask).sum())
    return np.where(mask, x / np.maximum(norms, eps), 0.0)


def decode_instances(model, config, instances, seed=0):
    """MBR-decode both modalities for every instance, with alignment
    inputs cached for retrieval. Vision terminal softmaxes normalize over
    the parts of seed-fixed evaluation batches."""
    min_width = 1 if config.include_unit_spans else 2
    results = [None] * len(instances)
    order = _rng(seed, _S_EVAL).permutation(len(instances))
    with frozen(model):
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = [instances[i] for i in idx]
            lang_outs = [
                language_pass(model, config, inst, eps=None, need_alignment=True)
                for inst in batch
            ]
            vis_outs = vision_pass(
                model, config, batch, [None] * len(batch), need_alignment=True
            )
            for k, i in enumerate(idx):
                inst = batch[k]
                lo_, vo = lang_outs[k], vis_outs[k]
                post = clustering_posterior(model.vis_grammar, vo["features"])
                lw = lo_["marginals"].values.data
                vw = vo["marginals"].values.data
                if config.include_unit_spans:
                    lw = np.concatenate([np.ones(inst.n_tokens), lw])
                    vw = np.concatenate([np.ones(inst.n_parts), vw])
                results[i] = {
                    "lang_tree": mbr_decode(lo_["marginals"]),
                    "vis_tree": mbr_decode(vo["marginals"]),
                    "lang_weights": lw,
                    "vis_weights": vw,
                    "lang_vectors": _unit_rows_np(lo_["embeddings"].vectors.data),
                    "vis_vectors": _unit_rows_np(vo["embeddings"].vectors.data),
                    "pred_tags": np.argmax(post.data, axis=1),
                    "log_z_lang": lo_["log_z"].item(),
                    "log_z_vis": vo["log_z"].item(),
                }
    return results


def _pair_scorer(config, results, instances):
    cache = {}

    def score(i, j):
        key = (i, j)
        if key not in cache:
            ri, rj = results[i], results[j]
            raw = ri["lang_weights"] @ (
                ri["lang_vectors"] @ rj["vis_vectors"].T
            ) @ rj["vis_weights"]
            if config.normalize_alignment:
                m, n = instances[i].n_tokens, instances[j].n_parts
                denom = (
                    (2 * m - 1) * (2 * n - 1)
                    if config.include_unit_spans
                    else (m - 1) * (n - 1)
                )
                raw = raw / denom
            cache[key] = float(raw)
        return cache[key]

    return score


def _f1_block(pred, gold, lengths):
    return {
        "corpus_f1": span_f1(pred, gold, lengths, "corpus"),
        "instance_f1": span_f1(pred, gold, lengths, "instance"),
    }


def evaluate(model, config, instances, seed=0, holdout_categories=(),
             compute_retrieval=True):
    """EvalReport over `instances`: F1 both modalities and modes,
    per-category and seen/unseen breakdowns, clustering accuracy,
    branching baselines, and 1-of-k retrieval."""
    if not instances:
        raise ValueError("nothing to evaluate")
    config = resolve_config(config, instances)
    top = max(max(i.tokens) for i in instances)
    if top >= config.vocab_size:
        raise ConfigError(
            f"token id {top} outside the model vocabulary ({config.vocab_size})"
        )
    results = decode_instances(model, config, instances, seed=seed)

    report = EvalReport()
    sides = {
        "language": (
            [r["lang_tree"] for r in results],
            [i.gold_lang_tree for i in instances],
            [i.n_tokens for i in instances],
        ),
        "vision": (
            [r["vis_tree"] for r in results],
            [i.gold_vis_tree for i in instances],
            [i.n_parts for i in instances],
        ),
    }
    for modality, (pred, gold, lengths) in sides.items():
        block = _f1_block(pred, gold, lengths)
        report.corpus_f1[modality] = block["corpus_f1"]
        report.instance_f1[modality] = block["instance_f1"]
        for name, trees in branching_baselines(lengths).items():
            report.baselines.setdefault(name, {})[modality] = _f1_block(
                trees, gold, lengths
            )

    categories = sorted({i.category for i in instances})
    for cat in categories:
        sel = [k for k, i in enumerate(instances) if i.category == cat]
        report.per_category[cat] = {}
        for modality, (pred, gold, lengths) in sides.items():
            report.per_category[cat][modality] = _f1_block(
                [pred[k] for k in sel], [gold[k] for k in sel],
                [lengths[k] for k in sel],
            )

    holdout = set(holdout_categories)
    if holdout:
        for section, keep in (
            ("seen", [k for k, i in enumerate(instances) if i.category not in holdout]),
            ("unseen", [k for k, i in enumerate(instances) if i.category in holdout]),
        ):
            entry = {}
            for modality, (pred, gold, lengths) in sides.items():
                if keep:
                    entry[modality] = _f1_block(
                        [pred[k] for k in keep], [gold[k] for k in keep],
                        [lengths[k] for k in keep],
                    )
            report.extra[section] = entry
            if keep:
                base = branching_baselines([sides["vision"][2][k] for k in keep])
                report.extra[f"{section}_left_branch_vision"] = _f1_block(
                    base["left"], [sides["vision"][1][k] for k in keep],
                    [sides["vision"][2][k] for k in keep],
                )

    pred_tags = np.concatenate([r["pred_tags"] for r in results])
    gold_tags = np.concatenate([i.gold_part_tags for i in instances])
    report.clustering_accuracy = clustering_accuracy(
        pred_tags, gold_tags, max_clusters=config.vis_preterminals
    )

    if compute_retrieval and len(instances) >= config.retrieval_k:
        report.retrieval_ir, report.retrieval_tr = retrieval_eval(
            len(instances),
            _pair_scorer(config, results, instances),
            k=config.retrieval_k,
            trials=config.retrieval_trials,
            seed=seed,
        )
    report.extra["n_instances"] = len(instances)
    report.extra["mean_log_z_language"] = float(
        np.mean([r["log_z_lang"] for r in results])
    )
    report.extra["mean_log_z_vision"] = float(
        np.mean([r["log_z_vis"] for r in results])
    )
    return report


def write_report(out_dir, report, dump_brackets=None):
    """Emit report.txt (key-value) and metrics.json; optionally a
    per-instance bracket dump."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    if dump_brackets:
        with open(os.path.join(out_dir, "brackets.txt"), "w") as fh:
            for line in dump_brackets:
                fh.write(line + "\n")


def parse_dump(model, config, instances, seed=0, labeled=False):
    """Bracketed trees for qualitative inspection, one block per instance."""
    config = resolve_config(config, instances)
    results = decode_instances(model, config, instances, seed=seed)
    lines = []
    for inst, res in zip(instances, results):
        lines.append(f"# {inst.id} ({inst.category})")
        lines.append(f"lang spans: {res['lang_tree'].to_span_text()}")
        lines.append(f"lang tree:  {res['lang_tree'].to_sexpr(inst.tokens)}")
        lines.append(f"vis spans:  {res['vis_tree'].to_span_text()}")
        part_names = [f"p{t}" for t in res["pred_tags"]]
        lines.append(f"vis tree:   {res['vis_tree'].to_sexpr(part_names)}")
        if labeled:
            with frozen(model):
                out = language_pass(model, config, inst)
                tree, log_p = viterbi_decode(out["rules"], out["chart"].term_lp)
            lines.append(f"lang viterbi ({log_p:.4f}): {tree.to_span_text()}")
        lines.append("")
    return lines
