"""Exact inference over CNF grammars in log space.

The inside pass computes the log marginal likelihood of a sequence by
dynamic programming over spans; the outside pass turns the same chart
into posterior span marginals. Both are built from differentiable ops,
so marginals can sit inside a training objective. Decoding (MBR and
Viterbi) and the brute-force enumeration oracle work on plain arrays.

Symbol layout: a grammar with N nonterminals and P preterminals scores
binary rules with a (N, S, S) log-probability tensor, S = N + P, where
indices 0..N-1 are nonterminals and N..S-1 are preterminals. Spans of
width 1 carry preterminal mass only (CNF: preterminals emit exactly one
terminal); spans of width >= 2 carry nonterminal mass only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ZeroProbabilityError(ValueError):
    """The sequence has zero probability under the grammar."""


class MinimumLengthError(ValueError):
    """CNF with S->A, A->BC admits no derivation shorter than 2."""


# -- trees -----------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    """Half-open span [start, end) with an optional symbol id."""

    start: int
    end: int
    symbol: int | None = None

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    @property
    def width(self):
        return self.end - self.start


@dataclass
class ParseTree:
    """Binary constituency tree over [start, end)."""

    start: int
    end: int
    label: int | None = None
    left: "ParseTree | None" = None
    right: "ParseTree | None" = None

    @property
    def is_leaf(self):
        return self.left is None

    def validate(self, n=None):
        """Check structural invariants; raises ValueError on violation."""
        if n is not None and (self.start, self.end) != (0, n):
            raise ValueError(f"root covers ({self.start},{self.end}), expected (0,{n})")
        count = _validate_node(self)
        leaves = self.end - self.start
        if count != leaves - 1:
            raise ValueError(f"{count} internal nodes for {leaves} leaves")
        return self

    def internal_spans(self):
        """All internal-node spans, including the root, sorted."""
        out = []
        stk = [self]
        while stk:
            node = stk.pop()
            if not node.is_leaf:
                out.append((node.start, node.end))
                stk.extend((node.left, node.right))
        return sorted(out)

    def leaf_labels(self):
        if self.is_leaf:
            return [self.label]
        return self.left.leaf_labels() + self.right.leaf_labels()

    def to_span_text(self):
        return " ".join(f"({a},{b})" for a, b in self.internal_spans())

    def to_sexpr(self, tokens=None):
        if self.is_leaf:
            return str(tokens[self.start]) if tokens is not None else str(self.start)
        return f"({self.left.to_sexpr(tokens)} {self.right.to_sexpr(tokens)})"


def _validate_node(node):
    if node.is_leaf:
        if node.end - node.start != 1:
            raise ValueError(f"leaf spans ({node.start},{node.end})")
        return 0
    if node.left.start != node.start or node.right.end != node.end:
        raise ValueError("children do not cover the parent span")
    if node.left.end != node.right.start:
        raise ValueError("children are not contiguous")
    return 1 + _validate_node(node.left) + _validate_node(node.right)


def enumerate_spans(n, min_width=2):
    """Canonical span order: width-major, then start position."""
    return [
        (a, a + w) for w in range(min_width, n + 1) for a in range(n - w + 1)
    ]


# -- inside ------------------------------------------------------------------


@dataclass
class Chart:
    """Inside (and optionally outside) tables for one sequence."""

    n: int
    rules: object
    term_lp: Tensor
    alphas: dict  # width -> Tensor (n - width + 1, N)
    log_z: Tensor
    betas: dict | None = None


def _rule_blocks(rules):
    n_nt, n_pt = rules.n_nonterminals, rules.n_preterminals
    b = rules.binary
    return {
        "nn": ad.reshape(b[:, :n_nt, :n_nt], (n_nt, n_nt * n_nt)),
        "np": ad.reshape(b[:, :n_nt, n_nt:], (n_nt, n_nt * n_pt)),
        "pn": ad.reshape(b[:, n_nt:, :n_nt], (n_nt, n_pt * n_nt)),
        "pp": ad.reshape(b[:, n_nt:, n_nt:], (n_nt, n_pt * n_pt)),
    }


def _pair(y, y_dim, z, z_dim, n_rows):
    pair = ad.reshape(y, (n_rows, y_dim, 1)) + ad.reshape(z, (n_rows, 1, z_dim))
    return ad.reshape(pair, (n_rows, 1, y_dim * z_dim))


def inside(rules, term_lp, span_bias=None):
    """Inside pass; returns (Chart, log Z).

    `term_lp` is an (n, P) tensor of terminal log probabilities. The
    optional `span_bias` maps width -> (n - width + 1, 1) tensor added to
    every cell of that width (gradient w.r.t. the bias is the span
    marginal, which tests use as an independent check on the outside
    pass). Raises ZeroProbabilityError when no parse has positive
    probability and MinimumLengthError for sequences shorter than 2.
    """
    n = term_lp.shape[0]
    if n < 2:
        raise MinimumLengthError(f"minimum length 2, got {n}")
    n_nt, n_pt = rules.n_nonterminals, rules.n_preterminals
    blocks = _rule_blocks(rules)
    alphas = {}
    for w in range(2, n + 1):
        rows = n - w + 1
        contribs = []
        if w == 2:
            pair = _pair(term_lp[0:rows], n_pt, term_lp[1 : 1 + rows], n_pt, rows)
            contribs.append(ad.logsumexp(pair + blocks["pp"], axis=2))
        else:
            pair = _pair(term_lp[0:rows], n_pt, alphas[w - 1][1 : 1 + rows], n_nt, rows)
            contribs.append(ad.logsumexp(pair + blocks["pn"], axis=2))
            pair = _pair(
                alphas[w - 1][0:rows], n_nt, term_lp[w - 1 : w - 1 + rows], n_pt, rows
            )
            contribs.append(ad.logsumexp(pair + blocks["np"], axis=2))
            if w >= 4:
                ys = ad.stack([alphas[k][0:rows] for k in range(2, w - 1)], axis=1)
                zs = ad.stack(
                    [alphas[w - k][k : k + rows] for k in range(2, w - 1)], axis=1
                )
                k_cnt = w - 3
                pair = ad.reshape(ys, (rows, k_cnt, n_nt, 1)) + ad.reshape(
                    zs, (rows, k_cnt, 1, n_nt)
                )
                mid = ad.reshape(
                    ad.logsumexp(pair, axis=1), (rows, 1, n_nt * n_nt)
                )
                contribs.append(ad.logsumexp(mid + blocks["nn"], axis=2))
        alpha = contribs[0] if len(contribs) == 1 else ad.logsumexp(
            ad.stack(contribs, axis=0), axis=0
        )
        if span_bias is not None and w in span_bias:
            alpha = alpha + span_bias[w]
        alphas[w] = alpha
    log_z = ad.logsumexp(rules.start + alphas[n][0], axis=0)
    if not np.isfinite(log_z.data):
        raise ZeroProbabilityError("zero-probability input: log Z = -inf")
    return Chart(n=n, rules=rules, term_lp=term_lp, alphas=alphas, log_z=log_z), log_z


# -- outside and span marginals ----------------------------------------------


@dataclass
class SpanMarginals:
    """Posterior probabilities of spans of width >= 2, width-major order."""

    n: int
    spans: list
    values: Tensor
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.spans)}

    def value(self, a, b):
        return float(self.values.data[self._index[(a, b)]])

    def total(self):
        return float(self.values.data.sum())

    def matrix(self):
        out = np.zeros((self.n + 1, self.n + 1))
        for (a, b), v in zip(self.spans, self.values.data):
            out[a, b] = v
        return out


def outside_and_marginals(chart, rules=None):
    """Explicit outside recursion; returns SpanMarginals (differentiable).

    Processes spans by decreasing width. A span of width w is reached
    either as the left child of a wider parent starting at the same
    position, or as the right child of a parent ending at the same
    position; both cases reuse a per-parent-width contraction of the
    parent outside scores with the binary rules.
    """
    rules = chart.rules if rules is None else rules
    n, alphas, term_lp = chart.n, chart.alphas, chart.term_lp
    n_nt, n_pt = rules.n_nonterminals, rules.n_preterminals
    binary = rules.binary

    betas = {n: ad.reshape(rules.start, (1, n_nt))}
    parent_ctr = {}  # width -> (rows, S, S): logsumexp_A beta[A] + binary[A, :, :]

    def ctr(w_parent):
        if w_parent not in parent_ctr:
            rows = n - w_parent + 1
            b4 = ad.reshape(betas[w_parent], (rows, n_nt, 1, 1)) + binary
            parent_ctr[w_parent] = ad.logsumexp(b4, axis=1)
        return parent_ctr[w_parent]

    for w in range(n - 1, 1, -1):
        rows = n - w + 1
        contribs = []
        for w_parent in range(w + 1, n + 1):
            p_rows = n - w_parent + 1
            s = w_parent - w  # sibling width
            t = ctr(w_parent)
            if s == 1:
                sib_r = term_lp[w : w + p_rows]
                sib_l = term_lp[0:p_rows]
                blk_r = t[:, :n_nt, n_nt:]
                blk_l = t[:, n_nt:, :n_nt]
                s_dim = n_pt
            else:
                sib_r = alphas[s][w : w + p_rows]
                sib_l = alphas[s][0:p_rows]
                blk_r = t[:, :n_nt, :n_nt]
                blk_l = t[:, :n_nt, :n_nt]
                s_dim = n_nt
            # as left child: rows 0..p_rows-1 of this width
            left = ad.logsumexp(blk_r + ad.reshape(sib_r, (p_rows, 1, s_dim)), axis=2)
            contribs.append(ad.pad_rows(left, 0, rows - p_rows))
            # as right child: rows s..s+p_rows-1 of this width
            right = ad.logsumexp(blk_l + ad.reshape(sib_l, (p_rows, s_dim, 1)), axis=1)
            contribs.append(ad.pad_rows(right, s, rows - p_rows - s))
        betas[w] = ad.logsumexp(ad.stack(contribs, axis=0), axis=0)

    chart.betas = betas
    spans = enumerate_spans(n, min_width=2)
    per_width = [
        ad.logsumexp(alphas[w] + betas[w], axis=1) for w in range(2, n + 1)
    ]
    log_marg = ad.concat(per_width, axis=0) - chart.log_z
    return SpanMarginals(n=n, spans=spans, values=ad.exp(log_marg))


def marginals_via_inside_gradient(rules, term_lp):
    """Span marginals as d log Z / d span-bias; the autodiff cross-check."""
    n = term_lp.shape[0]
    bias = {
        w: Tensor(np.zeros((n - w + 1, 1)), requires_grad=True)
        for w in range(2, n + 1)
    }
    _, log_z = inside(rules, term_lp, span_bias=bias)
    grads = ad.backward(log_z, wrt=list(bias.values()))
    values = np.concatenate([grads[bias[w]][:, 0] for w in range(2, n + 1)])
    return SpanMarginals(
        n=n, spans=enumerate_spans(n, min_width=2), values=Tensor(values)
    )


# -- decoding ----------------------------------------------------------------


def mbr_decode(marginals):
    """Bracketing maximizing the sum of span marginals; leftmost-split ties."""
    n = marginals.n
    m = marginals.matrix()
    best = np.zeros((n + 1, n + 1))
    split = np.zeros((n + 1, n + 1), dtype=int)
    for w in range(2, n + 1):
        for a in range(n - w + 1):
            b = a + w
            best_k, best_v = a + 1, -np.inf
            for k in range(a + 1, b):
                v = best[a, k] + best[k, b]
                if v > best_v:
                    best_k, best_v = k, v
            best[a, b] = m[a, b] + best_v
            split[a, b] = best_k

    def build(a, b):
        if b - a == 1:
            return ParseTree(a, b)
        k = split[a, b]
        return ParseTree(a, b, left=build(a, k), right=build(k, b))

    return build(0, n)


def viterbi_decode(rules, term_lp):
    """Labeled max-probability parse; ties prefer the leftmost split and
    lowest symbol ids. Returns (tree, log probability)."""
    term = np.asarray(term_lp.data if isinstance(term_lp, Tensor) else term_lp)
    n = term.shape[0]
    if n < 2:
        raise MinimumLengthError(f"minimum length 2, got {n}")
    n_nt, n_pt = rules.n_nonterminals, rules.n_preterminals
    binary = np.asarray(rules.binary.data)
    start = np.asarray(rules.start.data)

    score = {1: term}  # width -> (rows, P) or (rows, N)
    back = {}
    for w in range(2, n + 1):
        rows = n - w + 1
        sc = np.full((rows, n_nt), -np.inf)
        bp = np.empty((rows, n_nt), dtype=object)
        for a in range(rows):
            for k in range(1, w):
                lw, rw = k, w - k
                left = score[lw][a]
                right = score[rw][a + k]
                lblk = slice(n_nt, n_nt + n_pt) if lw == 1 else slice(0, n_nt)
                rblk = slice(n_nt, n_nt + n_pt) if rw == 1 else slice(0, n_nt)
                cand = binary[:, lblk, rblk] + left[:, None] + right[None, :]
                flat = cand.reshape(n_nt, -1)
                idx = np.argmax(flat, axis=1)
                vals = flat[np.arange(n_nt), idx]
                better = vals > sc[a]
                for sym in np.nonzero(better)[0]:
                    bi, ci = divmod(int(idx[sym]), right.shape[0])
                    sc[a, sym] = vals[sym]
                    bp[a, sym] = (a + k, bi, ci)
        score[w] = sc
        back[w] = bp

    root_scores = start + score[n][0]
    root = int(np.argmax(root_scores))
    log_p = float(root_scores[root])
    if not np.isfinite(log_p):
        raise ZeroProbabilityError("zero-probability input: no labeled parse")

    def build(a, b, sym):
        if b - a == 1:
            return ParseTree(a, b, label=sym)
        k, bi, ci = back[b - a][a, sym]
        return ParseTree(
            a,
            b,
            label=sym,
            left=build(a, k, bi),
            right=build(k, b, ci),
        )

    return build(0, n, root), log_p


# -- brute-force oracle --------------------------------------------------------


BRUTE_FORCE_MAX_LEN = 7


def iter_tree_shapes(a, b):
    """All binary tree shapes over [a, b) as nested (a, b, left, right)."""
    if b - a == 1:
        return [(a, b, None, None)]
    shapes = []
    for k in range(a + 1, b):
        for left in iter_tree_shapes(a, k):
            for right in iter_tree_shapes(k, b):
                shapes.append((a, b, left, right))
    return shapes


def _np_lse(x):
    m = np.max(x)
    if not np.isfinite(m):
        return m
    return m + np.log(np.exp(x - m).sum())


def brute_force_logZ(rules, term_lp, max_len=BRUTE_FORCE_MAX_LEN):
    """log Z by explicit enumeration of tree shapes, summing symbol
    labelings per shape by direct recursion. Test oracle only."""
    term = np.asarray(term_lp.data if isinstance(term_lp, Tensor) else term_lp)
    n = term.shape[0]
    if n > max_len:
        raise ValueError(f"brute force refused: length {n} > cap {max_len}")
    if n < 2:
        raise MinimumLengthError(f"minimum length 2, got {n}")
    n_nt = rules.n_nonterminals
    binary = np.asarray(rules.binary.data)
    start = np.asarray(rules.start.data)

    def shape_vec(node):
        a, b, left, right = node
        if left is None:
            return term[a], slice(n_nt, binary.shape[1])
        lv, lblk = shape_vec(left)
        rv, rblk = shape_vec(right)
        with np.errstate(invalid="ignore"):
            pair = lv[:, None] + rv[None, :]
            cand = binary[:, lblk, rblk] + pair[None, :, :]
            cand = np.where(np.isnan(cand), -np.inf, cand)
        flat = cand.reshape(n_nt, -1)
        m = flat.max(axis=1)
        safe = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            out = safe + np.log(np.exp(flat - safe[:, None]).sum(axis=1))
        return np.where(np.isfinite(m), out, -np.inf), slice(0, n_nt)

    totals = []
    for shape in iter_tree_shapes(0, n):
        vec, _ = shape_vec(shape)
        totals.append(_np_lse(start + vec))
    return float(_np_lse(np.array(totals)))
