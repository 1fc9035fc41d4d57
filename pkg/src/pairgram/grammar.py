"""Compound PCFG parameterization for one modality.

Rule probabilities are softmax-normalized scores computed from symbol
embeddings and a per-instance latent vector z: the start distribution
scores each nonterminal against a fed-forward encoding of [root; z],
binary rules score each (B, C) pair bilinearly against [A; z], and
terminals differ by modality. Language preterminals score every word in
the vocabulary through a feed-forward net; the vision modality has no
fixed vocabulary, so a bottom-up clustering head scores every part
feature in the current batch and the batch itself acts as the terminal
inventory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LANGUAGE = "language"
VISION = "vision"


class GrammarConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GrammarSpec:
    """Symbol inventory sizes for one modality's grammar.

    z_dim = 0 degrades the compound PCFG to a neural PCFG (rule
    probabilities no longer depend on a latent sample).
    """

    n_nonterminals: int
    n_preterminals: int
    vocab_size: int = 0  # language modality only
    symbol_dim: int = 32
    z_dim: int = 8
    modality: str = LANGUAGE

    def __post_init__(self):
        if self.n_nonterminals < 1 or self.n_preterminals < 1:
            raise GrammarConfigError("need at least one nonterminal and preterminal")
        if self.z_dim < 0:
            raise GrammarConfigError("z_dim must be >= 0")
        if self.modality not in (LANGUAGE, VISION):
            raise GrammarConfigError(f"unknown modality {self.modality!r}")
        if self.modality == LANGUAGE and self.vocab_size < 1:
            raise GrammarConfigError("language grammar needs a vocabulary")
        if self.modality == VISION and self.vocab_size:
            raise GrammarConfigError("vision grammar has no fixed vocabulary")

    @property
    def n_symbols(self):
        return self.n_nonterminals + self.n_preterminals


@dataclass
class Mlp:
    """Feed-forward net, tanh between affine layers; 0 layers = identity."""

    layers: list  # list of (W, b) Tensor pairs

    def __call__(self, x):
        for i, (w, b) in enumerate(self.layers):
            x = ad.affine(x, w, b)
            if i + 1 < len(self.layers):
                x = ad.tanh(x)
        return x

    def out_dim(self, in_dim):
        return self.layers[-1][0].shape[1] if self.layers else in_dim


def init_mlp(rng, in_dim, hidden, out_dim, n_layers=2):
    """Glorot-scaled MLP weights; n_layers = 0 returns the identity."""
    dims = (
        [] if n_layers == 0
        else [in_dim, out_dim] if n_layers == 1
        else [in_dim] + [hidden] * (n_layers - 1) + [out_dim]
    )
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        scale = np.sqrt(2.0 / (d_in + d_out))
        layers.append(
            (
                Tensor(rng.normal(size=(d_in, d_out)) * scale, requires_grad=True),
                Tensor(np.zeros(d_out), requires_grad=True),
            )
        )
    return Mlp(layers)


@dataclass
class CompoundParams:
    """All learnable parameters of one modality's compound PCFG."""

    spec: GrammarSpec
    root_embed: Tensor  # (d,)
    nonterm_embed: Tensor  # (N, d)
    start_net: Mlp  # feeds [root; z]
    start_head: Tensor  # (N, start_net out)
    binary_head: Tensor  # (S*S, d + z_dim), one score row per (B, C)
    preterm_embed: Tensor | None = None  # (P, d), language only
    term_net: Mlp | None = None  # feeds [preterm; z], language only
    term_head: Tensor | None = None  # (V, term_net out), language only
    cluster_net: Mlp | None = None  # feeds part features, vision only
    cluster_head: Tensor | None = None  # (P, cluster out), vision only

    def named_parameters(self, prefix=""):
        out = {
            f"{prefix}root_embed": self.root_embed,
            f"{prefix}nonterm_embed": self.nonterm_embed,
            f"{prefix}start_head": self.start_head,
            f"{prefix}binary_head": self.binary_head,
        }
        for i, (w, b) in enumerate(self.start_net.layers):
            out[f"{prefix}start_net.{i}.w"] = w
            out[f"{prefix}start_net.{i}.b"] = b
        if self.spec.modality == LANGUAGE:
            out[f"{prefix}preterm_embed"] = self.preterm_embed
            out[f"{prefix}term_head"] = self.term_head
            for i, (w, b) in enumerate(self.term_net.layers):
                out[f"{prefix}term_net.{i}.w"] = w
                out[f"{prefix}term_net.{i}.b"] = b
        else:
            out[f"{prefix}cluster_head"] = self.cluster_head
            for i, (w, b) in enumerate(self.cluster_net.layers):
                out[f"{prefix}cluster_net.{i}.w"] = w
                out[f"{prefix}cluster_net.{i}.b"] = b
        return out


def init_compound_params(
    spec,
    rng,
    hidden=64,
    net_layers=2,
    feat_dim=None,
    cluster_dim=None,
    cluster_layers=None,
    embed_scale=0.3,
):
    """Fresh parameters for `spec`; vision grammars need `feat_dim`.

    `cluster_layers` sizes the bottom-up clustering net separately from
    the rule-scoring nets (a single layer by default). `embed_scale`
    sets the symbol-embedding/head spread: too small keeps the initial
    rule distributions so uniform that symmetry never breaks."""
    d = spec.symbol_dim
    s_total = spec.n_symbols
    emb = lambda *shape: Tensor(
        rng.normal(size=shape) * embed_scale, requires_grad=True
    )
    start_net = init_mlp(rng, d + spec.z_dim, hidden, hidden, net_layers)
    start_out = start_net.out_dim(d + spec.z_dim)
    params = CompoundParams(
        spec=spec,
        root_embed=emb(d),
        nonterm_embed=emb(spec.n_nonterminals, d),
        start_net=start_net,
        start_head=emb(spec.n_nonterminals, start_out),
        binary_head=emb(s_total * s_total, d + spec.z_dim),
    )
    if spec.modality == LANGUAGE:
        params.preterm_embed = emb(spec.n_preterminals, d)
        params.term_net = init_mlp(rng, d + spec.z_dim, hidden, hidden, net_layers)
        term_out = params.term_net.out_dim(d + spec.z_dim)
        params.term_head = emb(spec.vocab_size, term_out)
    else:
        if feat_dim is None:
            raise GrammarConfigError("vision grammar needs feat_dim")
        c_dim = cluster_dim if cluster_dim is not None else feat_dim
        c_layers = 1 if cluster_layers is None else cluster_layers
        params.cluster_net = init_mlp(rng, feat_dim, hidden, c_dim, c_layers)
        params.cluster_head = emb(
            spec.n_preterminals, params.cluster_net.out_dim(feat_dim)
        )
    return params


@dataclass(frozen=True)
class LatentSample:
    """One latent vector z with its provenance."""

    z: Tensor
    source: str = "prior"  # or "posterior-reparameterized"

    @classmethod
    def from_prior(cls, rng, z_dim):
        return cls(z=Tensor(rng.normal(size=z_dim)), source="prior")


@dataclass
class RuleProbs:
    """Log-probabilities of all rules for one (params, z) pair.

    start: (N,); binary: (N, S, S); terminal: (P, V) for language or
    (P, n_batch_parts) for vision. Each distribution exponentiates and
    sums to 1 along its normalization axis.
    """

    start: Tensor
    binary: Tensor
    terminal: Tensor
    n_nonterminals: int
    n_preterminals: int
    part_offsets: list | None = None  # vision: batch part index ranges


def _check_z(spec, z):
    vec = z.z if isinstance(z, LatentSample) else z
    if vec.shape != (spec.z_dim,):
        raise GrammarConfigError(
            f"z has shape {vec.shape}, grammar expects ({spec.z_dim},)"
        )
    return vec


def start_binary_probs(params, z):
    """Start and binary log-probabilities for one latent sample; shared
    by both modalities (vision reuses it with batch emissions)."""
    return _start_binary(params, _check_z(params.spec, z))


def _start_binary(params, z_vec):
    spec = params.spec
    n_nt, s_total = spec.n_nonterminals, spec.n_symbols
    root_z = ad.concat([params.root_embed, z_vec], axis=0)
    start_scores = ad.matmul(params.start_head, params.start_net(root_z))
    log_start = ad.log_softmax(start_scores, axis=0)

    if spec.z_dim:
        z_rows = ad.stack([z_vec] * n_nt, axis=0)
        a_z = ad.concat([params.nonterm_embed, z_rows], axis=1)
    else:
        a_z = params.nonterm_embed
    binary_scores = ad.matmul(a_z, ad.transpose(params.binary_head))  # (N, S*S)
    log_binary = ad.reshape(
        ad.log_softmax(binary_scores, axis=1), (n_nt, s_total, s_total)
    )
    return log_start, log_binary


def rule_probs_language(params, z):
    """Start, binary, and vocabulary emission log-probs (Eqs. of the
    softmax parameterization), differentiable in params and z."""
    spec = params.spec
    if spec.modality != LANGUAGE:
        raise GrammarConfigError("rule_probs_language needs a language grammar")
    z_vec = _check_z(spec, z)
    log_start, log_binary = _start_binary(params, z_vec)
    if spec.z_dim:
        z_rows = ad.stack([z_vec] * spec.n_preterminals, axis=0)
        t_z = ad.concat([params.preterm_embed, z_rows], axis=1)
    else:
        t_z = params.preterm_embed
    term_scores = ad.matmul(params.term_net(t_z), ad.transpose(params.term_head))
    log_term = ad.log_softmax(term_scores, axis=1)  # (P, V)
    return RuleProbs(
        start=log_start,
        binary=log_binary,
        terminal=log_term,
        n_nonterminals=spec.n_nonterminals,
        n_preterminals=spec.n_preterminals,
    )


def terminal_scores_vision(params, features):
    """Raw clustering scores s(T, v_i): (P, n_parts) for part features
    already produced by the perception module."""
    if params.spec.modality != VISION:
        raise GrammarConfigError("terminal_scores_vision needs a vision grammar")
    feats = features if isinstance(features, Tensor) else Tensor(features)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise GrammarConfigError(f"empty or malformed part set: shape {feats.shape}")
    encoded = params.cluster_net(feats)  # (M, c)
    return ad.matmul(params.cluster_head, ad.transpose(encoded))  # (P, M)


def vision_emissions(params, batch_parts):
    """Terminal log-probs over all parts of a batch: each tag's
    distribution is a softmax over every part in the batch.

    `batch_parts` is a list of per-instance (n_i, feat) arrays/tensors,
    or a ((M, feat) pool, sequence-length list) pair. Returns
    ((P, M) tensor, offsets) with offsets[i] the column range of
    instance i.
    """
    if isinstance(batch_parts, tuple):
        pool, counts = batch_parts
        stacked = pool if isinstance(pool, Tensor) else Tensor(pool)
        counts = [int(c) for c in counts]
        total = stacked.shape[0] if stacked.ndim == 2 else 0
        if counts and total == 1 and max(counts) > 1:
            raise GrammarConfigError(
                "inconsistent batch: a single part cannot emit a longer sequence"
            )
        if sum(counts) != total:
            raise GrammarConfigError(
                f"sequence lengths {counts} do not add up to {total} batch parts"
            )
    else:
        if not batch_parts:
            raise GrammarConfigError("empty part set")
        counts = [p.shape[0] for p in batch_parts]
        feats = [p if isinstance(p, Tensor) else Tensor(p) for p in batch_parts]
        stacked = feats[0] if len(feats) == 1 else ad.concat(feats, axis=0)
    scores = terminal_scores_vision(params, stacked)
    log_term = ad.log_softmax(scores, axis=1)
    offsets = []
    lo = 0
    for c in counts:
        offsets.append((lo, lo + c))
        lo += c
    return log_term, offsets


def rule_probs_vision(params, z, batch_parts):
    """Rule probabilities for the vision grammar; the terminal inventory
    is the set of all parts in `batch_parts`."""
    spec = params.spec
    if spec.modality != VISION:
        raise GrammarConfigError("rule_probs_vision needs a vision grammar")
    z_vec = _check_z(spec, z)
    log_start, log_binary = _start_binary(params, z_vec)
    log_term, offsets = vision_emissions(params, batch_parts)
    return RuleProbs(
        start=log_start,
        binary=log_binary,
        terminal=log_term,
        n_nonterminals=spec.n_nonterminals,
        n_preterminals=spec.n_preterminals,
        part_offsets=offsets,
    )


def clustering_posterior(params, features):
    """p(tag | part): softmax of the clustering scores over tags,
    one row per part. Used for cluster prediction and accuracy."""
    scores = terminal_scores_vision(params, features)
    return ad.transpose(ad.log_softmax(scores, axis=0)).exp()  # (M, P)


def sequence_terminal_log_probs(rules, tokens):
    """(n, P) terminal log-probs for a token sequence under language rules."""
    idx = np.asarray(tokens, dtype=int)
    return ad.transpose(rules.terminal[:, idx])


def instance_terminal_log_probs(rules, index):
    """(n_i, P) terminal log-probs for instance `index` of a vision batch."""
    lo, hi = rules.part_offsets[index]
    return ad.transpose(rules.terminal[:, lo:hi])
