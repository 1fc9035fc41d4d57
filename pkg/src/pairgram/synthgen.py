"""Synthetic paired corpora sampled from ground-truth joint grammars.

Each instance is drawn by expanding one CNF skeleton whose leaves are
part tags. The vision side emits one Gaussian feature vector per leaf;
the language side expands every leaf into a short token phrase. Both
gold trees therefore share the skeleton, so constituents of the two
modalities are aligned by construction - the property the contrastive
objective is meant to exploit. Difficulty knobs: feature noise scale,
mean separation, and a token-swap probability that reorders sibling
phrases on the language side only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class DatasetFormatError(ValueError):
    pass


class GrammarNotTightError(ValueError):
    pass


DEPTH_REJECTIONS = 0


def reset_depth_rejections():
    global DEPTH_REJECTIONS
    DEPTH_REJECTIONS = 0


def depth_rejections():
    return DEPTH_REJECTIONS


@dataclass
class GroundTruthGrammar:
    """Explicit CNF grammar over part tags for one object category.

    `binary_rules` maps a nonterminal to ((left, right), prob) choices;
    symbols in `tags` are the preterminals. Tag means are placed so any
    two sit 2 * separation * sigma apart: a nearest-mean rule then errs
    per pair with probability Phi(-separation). `attr_offsets` grounds
    attribute words: a part whose phrase contains token t has
    attr_offsets[t] added to its feature vector, so the sentence carries
    information about this part beyond its tag.
    """

    category: str
    start_rules: list
    binary_rules: dict
    tags: list
    tag_means: np.ndarray
    feature_scale: float
    phrase_templates: dict  # tag -> list of (token tuple, prob)
    vocab_size: int
    max_depth: int = 20
    token_swap_prob: float = 0.0
    attr_offsets: dict = field(default_factory=dict)  # token id -> vector

    def tag_index(self, tag):
        return self.tags.index(tag)


@dataclass
class PairedInstance:
    """One (token sequence, part-feature sequence) pair with gold structure."""

    id: str
    category: str
    tokens: list
    parts: np.ndarray
    gold_lang_tree: list  # [(a, b)] internal spans incl. the root
    gold_vis_tree: list
    gold_part_tags: list

    @property
    def n_tokens(self):
        return len(self.tokens)

    @property
    def n_parts(self):
        return self.parts.shape[0]


class _DepthExceeded(Exception):
    pass


class _Node:
    __slots__ = ("tag", "left", "right", "phrase")

    def __init__(self, tag=None, left=None, right=None):
        self.tag = tag
        self.left = left
        self.right = right
        self.phrase = None

    @property
    def is_leaf(self):
        return self.tag is not None


def _choose(rng, options):
    probs = np.array([p for _, p in options], dtype=float)
    total = probs.sum()
    if not np.isclose(total, 1.0, atol=1e-9):
        raise GrammarNotTightError(f"rule probabilities sum to {total}, not 1")
    return options[rng.choice(len(options), p=probs / total)][0]


def _expand(gt, rng, symbol, depth):
    if symbol in gt.binary_rules:
        if depth >= gt.max_depth:
            raise _DepthExceeded
        left, right = _choose(rng, gt.binary_rules[symbol])
        return _Node(
            left=_expand(gt, rng, left, depth + 1),
            right=_expand(gt, rng, right, depth + 1),
        )
    if symbol in gt.tags:
        return _Node(tag=symbol)
    raise GrammarNotTightError(f"symbol {symbol!r} is neither rule nor tag")


def _leaves(node, out):
    if node.is_leaf:
        out.append(node.tag)
    else:
        _leaves(node.left, out)
        _leaves(node.right, out)
    return out


def _leaf_phrases(node, out):
    if node.is_leaf:
        out.append(node.phrase)
    else:
        _leaf_phrases(node.left, out)
        _leaf_phrases(node.right, out)
    return out


def _vision_spans(node, start, acc):
    """Internal spans over leaf positions; returns span width."""
    if node.is_leaf:
        return 1
    lw = _vision_spans(node.left, start, acc)
    rw = _vision_spans(node.right, start + lw, acc)
    acc.append((start, start + lw + rw))
    return lw + rw


def _right_branching_spans(a, b, acc):
    if b - a >= 2:
        acc.append((a, b))
        _right_branching_spans(a + 1, b, acc)


def _assign_phrases(gt, rng, node):
    """Sample each leaf's phrase in vision (leaf) order, so attribute
    grounding is independent of any language-side reordering."""
    if node.is_leaf:
        node.phrase = _choose(rng, gt.phrase_templates[node.tag])
    else:
        _assign_phrases(gt, rng, node.left)
        _assign_phrases(gt, rng, node.right)


def _lang_emit(gt, rng, node, pos, tokens, spans):
    """Emit tokens for a skeleton node; returns emitted width."""
    if node.is_leaf:
        tokens.extend(node.phrase)
        _right_branching_spans(pos, pos + len(node.phrase), spans)
        return len(node.phrase)
    left, right = node.left, node.right
    if gt.token_swap_prob > 0.0 and rng.uniform() < gt.token_swap_prob:
        left, right = right, left
    lw = _lang_emit(gt, rng, left, pos, tokens, spans)
    rw = _lang_emit(gt, rng, right, pos + lw, tokens, spans)
    spans.append((pos, pos + lw + rw))
    return lw + rw


def sample_instance(gt, seed, instance_id=None):
    """Draw one paired instance; resamples (counted) on depth-cap hits
    and on degenerate draws shorter than 2 tokens or parts."""
    global DEPTH_REJECTIONS
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        try:
            root_sym = _choose(rng, gt.start_rules)
            skeleton = _expand(gt, rng, root_sym, 0)
        except _DepthExceeded:
            DEPTH_REJECTIONS += 1
            continue
        tags = _leaves(skeleton, [])
        if len(tags) < 2:
            DEPTH_REJECTIONS += 1
            continue
        vis_spans = []
        _vision_spans(skeleton, 0, vis_spans)
        _assign_phrases(gt, rng, skeleton)
        tokens, lang_spans = [], []
        _lang_emit(gt, rng, skeleton, 0, tokens, lang_spans)
        if len(tokens) < 2:
            DEPTH_REJECTIONS += 1
            continue
        tag_ids = [gt.tag_index(t) for t in tags]
        feats = gt.tag_means[tag_ids] + gt.feature_scale * rng.normal(
            size=(len(tag_ids), gt.tag_means.shape[1])
        )
        if gt.attr_offsets:
            phrases = _leaf_phrases(skeleton, [])
            for row, phrase in enumerate(phrases):
                for tok in phrase:
                    off = gt.attr_offsets.get(int(tok))
                    if off is not None:
                        feats[row] += off
        return PairedInstance(
            id=instance_id or f"{gt.category}-{seed}",
            category=gt.category,
            tokens=list(map(int, tokens)),
            parts=feats,
            gold_lang_tree=sorted(lang_spans),
            gold_vis_tree=sorted(vis_spans),
            gold_part_tags=tag_ids,
        )
    raise GrammarNotTightError(
        f"grammar {gt.category!r} hit the depth cap 1000 times in a row"
    )


def generate_corpus(grammars, n_train, n_test, seed, holdout_categories=()):
    """Disjoint train/test splits with per-category counts honored.

    Held-out categories contribute no training instances but keep their
    share of the test split (the cross-category generalization setup).
    """
    if n_train <= 0 or n_test <= 0:
        raise ValueError("split sizes must be positive")
    holdout = set(holdout_categories)
    unknown = holdout - {g.category for g in grammars}
    if unknown:
        raise ValueError(f"unknown holdout categories: {sorted(unknown)}")
    train_gts = [g for g in grammars if g.category not in holdout]
    if not train_gts:
        raise ValueError("all categories held out")

    def split(gts, count, tag, tag_code):
        per = [count // len(gts) + (1 if i < count % len(gts) else 0)
               for i in range(len(gts))]
        out = []
        for gi, (gt, c) in enumerate(zip(gts, per)):
            seeds = np.random.SeedSequence((seed, tag_code, gi)).spawn(c)
            for i, s in enumerate(seeds):
                out.append(
                    sample_instance(
                        gt, s, instance_id=f"{gt.category}-{tag}-{i:05d}"
                    )
                )
        return out

    return (
        split(train_gts, n_train, "train", 0),
        split(list(grammars), n_test, "test", 1),
    )


# -- default grammar family ----------------------------------------------------

TAGS = ["panel", "slab", "leg", "bar", "arm", "strap"]

# vocabulary: 4 count words, 4 groundable size words, then 3 nouns per tag
COUNT_WORDS = list(range(0, 4))
SIZE_WORDS = list(range(4, 8))
NOUN_BASE = 8
VOCAB_SIZE = NOUN_BASE + 3 * len(TAGS)

VOCAB_WORDS = (
    ["two", "three", "four", "several"]
    + ["wide", "tall", "round", "flat"]
    + [w for t in TAGS for w in (t, f"{t}s", f"{t}piece")]
)


def _phrase_templates(rng):
    """Shared tag -> phrase distribution; mean length tuned near 2.2,
    with most parts carrying a groundable size word."""
    templates = {}
    for ti, tag in enumerate(TAGS):
        nouns = [NOUN_BASE + 3 * ti + k for k in range(3)]
        options = []
        for j, noun in enumerate(nouns):
            count = COUNT_WORDS[(ti + j) % 4]
            size = SIZE_WORDS[(ti + 2 * j) % 4]
            options.extend(
                [
                    ((noun,), 0.10 / 3),
                    ((size, noun), 0.35 / 3),
                    ((count, noun), 0.20 / 3),
                    ((count, size, noun), 0.35 / 3),
                ]
            )
        templates[tag] = options
    return templates


def default_categories(
    feat_dim=16,
    separation=4.0,
    feature_scale=1.0,
    seed=0,
    token_swap_prob=0.0,
    attr_strength=3.0,
):
    """Four grammar families with shared tag/vocabulary inventories and
    per-category part-count profiles resembling desk-scale furniture.

    Size words are grounded: a part described as "wide" carries an
    attribute offset of `attr_strength` sigmas along a direction
    orthogonal to all tag means, so paired instances are identifiable
    among same-category distractors."""
    if feat_dim < len(TAGS) + len(SIZE_WORDS):
        raise ValueError(f"feat_dim must be >= {len(TAGS) + len(SIZE_WORDS)}")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(feat_dim, feat_dim)))
    means = np.sqrt(2.0) * separation * feature_scale * basis[: len(TAGS)]
    attr_dirs = basis[len(TAGS) : len(TAGS) + len(SIZE_WORDS)]
    attr_offsets = {
        tok: attr_strength * feature_scale * attr_dirs[i]
        for i, tok in enumerate(SIZE_WORDS)
    }
    templates = _phrase_templates(rng)
    shared = dict(
        tags=TAGS,
        tag_means=means,
        feature_scale=feature_scale,
        phrase_templates=templates,
        vocab_size=VOCAB_SIZE,
        token_swap_prob=token_swap_prob,
        attr_offsets=attr_offsets,
    )
    # sibling constituents carry distinct tag compositions (leg+bar pairs,
    # panel+slab backs) so that bracketings are identifiable from features;
    # gamma's repeated leg+bar pairs keep some residual ambiguity
    alpha = GroundTruthGrammar(
        category="alpha",
        start_rules=[("TOP", 1.0)],
        binary_rules={
            "TOP": [(("UPPER", "BASE"), 1.0)],
            "UPPER": [(("BACK", "ARMS"), 0.6), (("panel", "slab"), 0.4)],
            "BACK": [(("panel", "slab"), 1.0)],
            "ARMS": [(("arm", "strap"), 1.0)],
            "BASE": [(("LEGPAIR", "LEGPAIR"), 1.0)],
            "LEGPAIR": [(("leg", "bar"), 1.0)],
        },
        **shared,
    )
    beta = GroundTruthGrammar(
        category="beta",
        start_rules=[("TAB", 1.0)],
        binary_rules={
            "TAB": [(("slab", "UNDER"), 1.0)],
            "UNDER": [
                (("LEGS", "BARS"), 0.25),
                (("panel", "LEGS"), 0.55),
                (("LEGS", "LEGPAIR"), 0.2),
            ],
            "LEGS": [(("LEGPAIR", "LEGPAIR"), 1.0)],
            "BARS": [(("arm", "strap"), 1.0)],
            "LEGPAIR": [(("leg", "bar"), 1.0)],
        },
        **shared,
    )
    gamma = GroundTruthGrammar(
        category="gamma",
        start_rules=[("BED", 1.0)],
        binary_rules={
            "BED": [(("HEAD", "BODY"), 1.0)],
            "HEAD": [(("panel", "arm"), 1.0)],
            "BODY": [(("slab", "UNDER"), 1.0)],
            "UNDER": [(("LEGS", "LEGPAIR"), 0.6), (("LEGS", "BARS"), 0.4)],
            "LEGS": [(("LEGPAIR", "LEGPAIR"), 1.0)],
            "BARS": [(("arm", "strap"), 1.0)],
            "LEGPAIR": [(("leg", "bar"), 1.0)],
        },
        **shared,
    )
    delta = GroundTruthGrammar(
        category="delta",
        start_rules=[("BAG", 1.0)],
        binary_rules={
            "BAG": [(("slab", "HANDLES"), 1.0)],
            "HANDLES": [(("arm", "strap"), 0.7), (("HANDLE2", "strap"), 0.3)],
            "HANDLE2": [(("arm", "strap"), 1.0)],
        },
        **shared,
    )
    return [alpha, beta, gamma, delta]


def corpus_stats(instances):
    """Medians used to sanity-check default sizes (rules used per object
    counts the start rule plus one binary application per internal node)."""
    parts = sorted(i.n_parts for i in instances)
    tokens = sorted(i.n_tokens for i in instances)
    rules = sorted(i.n_parts for i in instances)  # 1 start + (p - 1) binaries
    med = lambda xs: xs[len(xs) // 2]
    return {
        "median_parts": med(parts),
        "median_tokens": med(tokens),
        "median_rules": med(rules),
        "n": len(instances),
    }


def validate_instance(inst):
    """Structural checks on gold trees; raises ValueError on violation."""
    for spans, n in ((inst.gold_lang_tree, inst.n_tokens),
                     (inst.gold_vis_tree, inst.n_parts)):
        if n < 2:
            raise ValueError(f"{inst.id}: sequence shorter than 2")
        if len(spans) != n - 1:
            raise ValueError(f"{inst.id}: {len(spans)} spans for {n} leaves")
        if (0, n) not in spans:
            raise ValueError(f"{inst.id}: missing root span")
        for a, b in spans:
            if not (0 <= a < b <= n) or b - a < 2:
                raise ValueError(f"{inst.id}: bad span ({a},{b})")
            for c, d in spans:
                if a < c < b < d:
                    raise ValueError(f"{inst.id}: crossing spans")
    if len(inst.gold_part_tags) != inst.n_parts:
        raise ValueError(f"{inst.id}: tag/part count mismatch")
    return inst


# -- dataset files --------------------------------------------------------------


def _fmt_floats(vec):
    return "[" + ", ".join(format(float(x), ".17g") for x in vec) + "]"


def _spans_json(spans):
    return "[" + ", ".join(f"[{a}, {b}]" for a, b in spans) + "]"


def write_dataset(path, instances):
    """One record per line; floats carry 17 significant digits so that
    write/read round-trips exactly."""
    with open(path, "w") as fh:
        for inst in instances:
            parts = "[" + ", ".join(_fmt_floats(row) for row in inst.parts) + "]"
            fh.write(
                "{"
                + f'"id": {json.dumps(inst.id)}, '
                + f'"category": {json.dumps(inst.category)}, '
                + f'"tokens": {json.dumps(inst.tokens)}, '
                + f'"parts": {parts}, '
                + f'"gold_lang_tree": {_spans_json(inst.gold_lang_tree)}, '
                + f'"gold_vis_tree": {_spans_json(inst.gold_vis_tree)}, '
                + f'"gold_part_tags": {json.dumps(inst.gold_part_tags)}'
                + "}\n"
            )


_FIELDS = (
    "id", "category", "tokens", "parts",
    "gold_lang_tree", "gold_vis_tree", "gold_part_tags",
)


def read_dataset(path):
    """Parse a dataset file; malformed records name their line number.
    An empty file is an empty corpus, not an error."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                missing = [f for f in _FIELDS if f not in rec]
                if missing:
                    raise DatasetFormatError(f"missing fields {missing}")
                out.append(
                    PairedInstance(
                        id=str(rec["id"]),
                        category=str(rec["category"]),
                        tokens=[int(t) for t in rec["tokens"]],
                        parts=np.array(rec["parts"], dtype=np.float64).reshape(
                            len(rec["parts"]), -1
                        ),
                        gold_lang_tree=[tuple(s) for s in rec["gold_lang_tree"]],
                        gold_vis_tree=[tuple(s) for s in rec["gold_vis_tree"]],
                        gold_part_tags=[int(t) for t in rec["gold_part_tags"]],
                    )
                )
            except DatasetFormatError as e:
                raise DatasetFormatError(f"{path} line {lineno}: {e}") from None
            except (ValueError, TypeError, KeyError) as e:
                raise DatasetFormatError(
                    f"{path} line {lineno}: malformed record ({e})"
                ) from None
    return out
