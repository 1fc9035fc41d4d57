"""Sequence-level encoders: variational posteriors, span embedders, and
the bottom-up perception transform.

One bidirectional recurrent encoder per modality feeds two heads: an
affine posterior head producing (mu, log sigma^2) from the mean-pooled
states, and an affine span head. Language span embeddings average the
recurrent states inside the span; vision span embeddings average the
perception features directly, so the perception module stays the single
source of part representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chart import enumerate_spans
from .grammar import Mlp, init_mlp


class EncoderError(ValueError):
    pass


@dataclass
class PosteriorParams:
    """Diagonal-Gaussian posterior over the compound latent."""

    mean: Tensor
    log_var: Tensor

    def kl(self):
        """Analytic KL to the standard Gaussian prior; always >= 0."""
        var = ad.exp(self.log_var)
        return 0.5 * (self.mean * self.mean + var - 1.0 - self.log_var).sum()

    def sample(self, eps):
        """Reparameterized draw mu + sigma * eps."""
        eps = eps if isinstance(eps, Tensor) else Tensor(eps)
        return self.mean + ad.exp(0.5 * self.log_var) * eps


@dataclass
class SpanEmbeddings:
    """Alignment-space vectors for every span of one sequence."""

    modality: str
    spans: list
    vectors: Tensor  # (len(spans), d_align)


class BiRnn:
    """Bidirectional tanh recurrence; returns concatenated states."""

    def __init__(self, rng, in_dim, hidden):
        self.hidden = hidden

        def mat(r, c):
            return Tensor(
                rng.normal(size=(r, c)) * np.sqrt(2.0 / (r + c)), requires_grad=True
            )

        self.w_in_f, self.w_rec_f = mat(in_dim, hidden), mat(hidden, hidden)
        self.b_f = Tensor(np.zeros(hidden), requires_grad=True)
        self.w_in_b, self.w_rec_b = mat(in_dim, hidden), mat(hidden, hidden)
        self.b_b = Tensor(np.zeros(hidden), requires_grad=True)

    def run(self, xs):
        """(n, in_dim) -> (n, 2 * hidden)."""
        n = xs.shape[0]
        proj_f = ad.affine(xs, self.w_in_f, self.b_f)
        proj_b = ad.affine(xs, self.w_in_b, self.b_b)
        h = Tensor(np.zeros(self.hidden))
        fwd = []
        for t in range(n):
            h = ad.tanh(proj_f[t] + ad.matmul(h, self.w_rec_f))
            fwd.append(h)
        h = Tensor(np.zeros(self.hidden))
        bwd = [None] * n
        for t in range(n - 1, -1, -1):
            h = ad.tanh(proj_b[t] + ad.matmul(h, self.w_rec_b))
            bwd[t] = h
        return ad.concat(
            [ad.stack(fwd, axis=0), ad.stack(bwd, axis=0)], axis=1
        )

    def named_parameters(self, prefix=""):
        return {
            f"{prefix}w_in_f": self.w_in_f,
            f"{prefix}w_rec_f": self.w_rec_f,
            f"{prefix}b_f": self.b_f,
            f"{prefix}w_in_b": self.w_in_b,
            f"{prefix}w_rec_b": self.w_rec_b,
            f"{prefix}b_b": self.b_b,
        }


class SequenceEncoder:
    """Recurrent encoder with posterior and span heads for one modality.

    `vocab_size > 0` makes it token-based (it owns an input embedding
    table); otherwise it consumes feature matrices directly.
    `span_source` picks what span means average over: recurrent states
    ("states", language) or the raw input features ("inputs", vision).
    """

    def __init__(
        self,
        rng,
        in_dim,
        hidden,
        z_dim,
        align_dim,
        vocab_size=0,
        modality="language",
        span_source="states",
    ):
        self.modality = modality
        self.z_dim = z_dim
        self.span_source = span_source
        self.embed = (
            Tensor(rng.normal(size=(vocab_size, in_dim)) * 0.1, requires_grad=True)
            if vocab_size
            else None
        )
        self.rnn = BiRnn(rng, in_dim, hidden)
        # zero-init posterior head: training starts at the prior (KL = 0)
        self.post_w = Tensor(np.zeros((2 * hidden, 2 * z_dim)), requires_grad=True)
        self.post_b = Tensor(np.zeros(2 * z_dim), requires_grad=True)
        span_in = 2 * hidden if span_source == "states" else in_dim
        scale = np.sqrt(2.0 / (span_in + align_dim))
        self.span_w = Tensor(
            rng.normal(size=(span_in, align_dim)) * scale, requires_grad=True
        )
        self.span_b = Tensor(np.zeros(align_dim), requires_grad=True)

    def inputs(self, seq):
        """Token ids -> embedded rows, or feature matrix passed through."""
        if self.embed is not None:
            idx = np.asarray(seq, dtype=int)
            if idx.ndim != 1 or idx.size == 0:
                raise EncoderError("empty sequence")
            return self.embed[idx]
        x = seq if isinstance(seq, Tensor) else Tensor(seq)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EncoderError(f"empty or malformed sequence: shape {x.shape}")
        return x

    def posterior(self, seq):
        x = self.inputs(seq)
        pooled = self.rnn.run(x).mean(axis=0)
        head = ad.affine(pooled, self.post_w, self.post_b)
        return PosteriorParams(mean=head[: self.z_dim], log_var=head[self.z_dim :])

    def span_embeddings(self, seq, min_width=1):
        x = self.inputs(seq)
        source = self.rnn.run(x) if self.span_source == "states" else x
        return SpanEmbeddings(
            modality=self.modality,
            spans=enumerate_spans(source.shape[0], min_width),
            vectors=embed_spans(source, self.span_w, self.span_b, min_width),
        )

    def named_parameters(self, prefix=""):
        out = {} if self.embed is None else {f"{prefix}embed": self.embed}
        out.update(self.rnn.named_parameters(prefix + "rnn."))
        out[f"{prefix}post_w"] = self.post_w
        out[f"{prefix}post_b"] = self.post_b
        out[f"{prefix}span_w"] = self.span_w
        out[f"{prefix}span_b"] = self.span_b
        return out


def encode_posterior(encoder, seq):
    """Posterior parameters for one sequence (spec surface)."""
    return encoder.posterior(seq)


def embed_spans(source, w, b, min_width=1):
    """Affine transform of per-span means of `source` rows.

    Span sums are accumulated width by width (sum of width w extends the
    sum of width w-1 by one row), so a width-1 span is exactly its row.
    Rows come out in the canonical width-major span order.
    """
    n = source.shape[0]
    if n == 0:
        raise EncoderError("empty sequence")
    means = []
    running = source
    if min_width <= 1:
        means.append(running)
    for width in range(2, n + 1):
        rows = n - width + 1
        running = running[0:rows] + source[width - 1 :]
        if width >= min_width:
            means.append(running * (1.0 / width))
    stacked = means[0] if len(means) == 1 else ad.concat(means, axis=0)
    return ad.affine(stacked, w, b)


def embed_language_spans(encoder, tokens, min_width=1):
    return encoder.span_embeddings(tokens, min_width)


def embed_vision_spans(encoder, features, min_width=1):
    return encoder.span_embeddings(features, min_width)


class Perception:
    """Feed-forward perception transform over raw part features.

    `layers=0` is the identity (raw features are already usable at desk
    scale); deeper configurations are trained with everything else.
    """

    def __init__(self, rng, in_dim, out_dim=None, hidden=32, layers=0):
        self.in_dim = in_dim
        self.out_dim = in_dim if layers == 0 else (out_dim or in_dim)
        self.net = init_mlp(rng, in_dim, hidden, self.out_dim, layers) if layers else Mlp([])

    def __call__(self, raw):
        x = raw if isinstance(raw, Tensor) else Tensor(raw)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise EncoderError(
                f"perception expects (*, {self.in_dim}) features, got {x.shape}"
            )
        return self.net(x)

    def named_parameters(self, prefix=""):
        out = {}
        for i, (w, b) in enumerate(self.net.layers):
            out[f"{prefix}{i}.w"] = w
            out[f"{prefix}{i}.b"] = b
        return out


def perceive(perception, raw_parts):
    """Perception features for raw per-part vectors (spec surface)."""
    return perception(raw_parts)
