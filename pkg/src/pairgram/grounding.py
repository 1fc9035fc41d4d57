"""Cross-modal alignment scores and the joint training objective.

The alignment score of a (sequence, part-sequence) pair is the
marginal-weighted sum of cosine similarities between all span pairs,
normalized by the product of expected span counts so instances of
different lengths are comparable inside one contrastive batch. Spans of
width 1 carry no bracketing information and are excluded by default; a
flag restores them (their posterior weight is exactly 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_zero_norm_count = 0


def zero_norm_count():
    """Number of zero-norm span embeddings seen (cosine defined as 0)."""
    return _zero_norm_count


def reset_zero_norm_count():
    global _zero_norm_count
    _zero_norm_count = 0


def unit_rows(x, eps=1e-12):
    """Row-normalize; zero-norm rows stay zero and bump the counter."""
    global _zero_norm_count
    norms = ad.sqrt((x * x).sum(axis=1, keepdims=True))
    mask = norms.data > eps
    zeros = int((~mask).sum())
    if zeros:
        _zero_norm_count += zeros
    return ad.div(x * Tensor(mask.astype(float)), ad.clip_min(norms, eps))


@dataclass
class AlignmentMatrix:
    """Pairwise span cosines with the two posterior weight vectors."""

    cosines: Tensor  # (n_lang_spans, n_vis_spans)
    lang_weights: Tensor
    vis_weights: Tensor
    n_tokens: int
    n_parts: int


def _span_weights(marginals, embeddings, include_unit_spans):
    """Align the marginal vector with the embedding rows; unit spans get
    weight exactly 1."""
    offset = len(embeddings.spans) - len(marginals.spans)
    if embeddings.spans[offset:] != marginals.spans:
        raise ValueError("span embeddings and marginals enumerate different spans")
    if include_unit_spans:
        if offset != marginals.n:
            raise ValueError("include_unit_spans needs width-1 span embeddings")
        weights = ad.concat([Tensor(np.ones(offset)), marginals.values], axis=0)
        return weights, embeddings.vectors
    vectors = embeddings.vectors[offset:] if offset else embeddings.vectors
    return marginals.values, vectors


def alignment_matrix(
    lang_marginals,
    vis_marginals,
    lang_embeddings,
    vis_embeddings,
    include_unit_spans=False,
):
    lw, lv = _span_weights(lang_marginals, lang_embeddings, include_unit_spans)
    vw, vv = _span_weights(vis_marginals, vis_embeddings, include_unit_spans)
    cos = ad.matmul(unit_rows(lv), ad.transpose(unit_rows(vv)))
    return AlignmentMatrix(
        cosines=cos,
        lang_weights=lw,
        vis_weights=vw,
        n_tokens=lang_marginals.n,
        n_parts=vis_marginals.n,
    )


def alignment_score(
    lang_marginals,
    vis_marginals,
    lang_embeddings,
    vis_embeddings,
    include_unit_spans=False,
    normalize=True,
):
    """Scalar alignment score S of one (sequence, parts) pair.

    S = sum_jk p(span_j) p(span_k) cos(e_j, e_k), divided by the product
    of posterior span-count totals (m-1)(n-1) when `normalize` is set.
    """
    am = alignment_matrix(
        lang_marginals, vis_marginals, lang_embeddings, vis_embeddings,
        include_unit_spans,
    )
    raw = ad.matmul(ad.matmul(am.lang_weights, am.cosines), am.vis_weights)
    if not normalize:
        return raw
    m, n = am.n_tokens, am.n_parts
    denom = (2 * m - 1) * (2 * n - 1) if include_unit_spans else (m - 1) * (n - 1)
    return raw * (1.0 / denom)


def contrastive_loss(scores, margin=0.2):
    """Bidirectional hinge over a (B, B) batch score matrix, averaged by
    2B(B-1). Entry [i, j] scores language i against vision j."""
    b = scores.shape[0]
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"score matrix must be square, got {scores.shape}")
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    idx = np.arange(b)
    diag = scores[idx, idx]
    wrong_lang = ad.relu(scores - ad.reshape(diag, (1, b)) + margin)
    wrong_vis = ad.relu(scores - ad.reshape(diag, (b, 1)) + margin)
    off = Tensor(1.0 - np.eye(b))
    total = ((wrong_lang + wrong_vis) * off).sum()
    return total * (1.0 / (2 * b * (b - 1)))


@dataclass
class LossBundle:
    """The three objective terms, their weights, and the weighted total."""

    language: Tensor
    vision: Tensor
    contrastive: Tensor
    weight_language: float
    weight_vision: float
    weight_contrastive: float
    total: Tensor

    def to_floats(self):
        return {
            "loss_language": self.language.item(),
            "loss_vision": self.vision.item(),
            "loss_contrastive": self.contrastive.item(),
            "loss_total": self.total.item(),
        }


def total_loss(language, vision, contrastive, weights=(1.0, 1.0, 1.0)):
    """Weighted sum of the two grammar losses and the contrastive term."""
    lw, vw, cw = (float(w) for w in weights)
    language = language if isinstance(language, Tensor) else Tensor(language)
    vision = vision if isinstance(vision, Tensor) else Tensor(vision)
    contrastive = contrastive if isinstance(contrastive, Tensor) else Tensor(contrastive)
    return LossBundle(
        language=language,
        vision=vision,
        contrastive=contrastive,
        weight_language=lw,
        weight_vision=vw,
        weight_contrastive=cw,
        total=language * lw + vision * vw + contrastive * cw,
    )
