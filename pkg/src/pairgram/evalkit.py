"""Evaluation metrics: unlabeled span F1 at corpus and instance level,
trivial-tree baselines, Hungarian-matched clustering accuracy, and
1-of-k cross-modal retrieval.

F1 compares spans as unlabeled (a, b) sets with the whole-sequence span
and width-1 spans excluded, the convention that keeps left-/right-
branching baselines informative. Instances whose gold and predicted
span sets are both empty after exclusion count as F1 = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .chart import ParseTree


def scoring_spans(spans, n):
    """Spans that count for F1: drop (0, n) and width-1 spans."""
    return {(a, b) for a, b in spans if b - a >= 2 and not (a == 0 and b == n)}


def _as_span_sets(items, lengths):
    out = []
    for item, n in zip(items, lengths):
        spans = item.internal_spans() if isinstance(item, ParseTree) else item
        out.append(scoring_spans(spans, n))
    return out


def span_f1(pred, gold, lengths, mode="corpus"):
    """F1 between predicted and gold bracketings.

    `pred`/`gold` hold one ParseTree or span iterable per instance.
    Corpus mode pools TP/FP/FN before computing F1; instance mode
    averages per-instance F1 scores.
    """
    if len(pred) != len(gold) or len(pred) != len(lengths):
        raise ValueError(
            f"instance counts differ: {len(pred)} pred, {len(gold)} gold, "
            f"{len(lengths)} lengths"
        )
    if mode not in ("corpus", "instance"):
        raise ValueError(f"unknown mode {mode!r}")
    pred_sets = _as_span_sets(pred, lengths)
    gold_sets = _as_span_sets(gold, lengths)
    if mode == "corpus":
        tp = sum(len(p & g) for p, g in zip(pred_sets, gold_sets))
        n_pred = sum(len(p) for p in pred_sets)
        n_gold = sum(len(g) for g in gold_sets)
        if n_pred == 0 and n_gold == 0:
            return 1.0
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_gold if n_gold else 0.0
        return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    scores = []
    for p, g in zip(pred_sets, gold_sets):
        if not p and not g:
            scores.append(1.0)
            continue
        tp = len(p & g)
        prec = tp / len(p) if p else 0.0
        rec = tp / len(g) if g else 0.0
        scores.append(0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
    return float(np.mean(scores))


def left_branching_tree(n):
    node = ParseTree(0, 1)
    for b in range(2, n + 1):
        node = ParseTree(0, b, left=node, right=ParseTree(b - 1, b))
    return node


def right_branching_tree(n):
    node = ParseTree(n - 1, n)
    for a in range(n - 2, -1, -1):
        node = ParseTree(a, n, left=ParseTree(a, a + 1), right=node)
    return node


def branching_baselines(lengths):
    """Deterministic left- and right-branching trees per instance."""
    return {
        "left": [left_branching_tree(n) for n in lengths],
        "right": [right_branching_tree(n) for n in lengths],
    }


def clustering_accuracy(pred_tags, gold_tags, max_clusters=None):
    """Accuracy under the best one-to-one tag matching (Hungarian)."""
    pred = np.asarray(pred_tags, dtype=int)
    gold = np.asarray(gold_tags, dtype=int)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size == 0:
        raise ValueError("no parts to score")
    pred_ids = np.unique(pred)
    gold_ids = np.unique(gold)
    if max_clusters is not None and len(pred_ids) > max_clusters:
        raise ValueError(
            f"{len(pred_ids)} predicted clusters exceed the allowed {max_clusters}"
        )
    confusion = np.zeros((len(pred_ids), len(gold_ids)), dtype=int)
    for i, p in enumerate(pred_ids):
        for j, g in enumerate(gold_ids):
            confusion[i, j] = int(((pred == p) & (gold == g)).sum())
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / pred.size)


def retrieval_eval(n_instances, scorer, k=8, trials=2000, seed=0):
    """1-of-k retrieval accuracy in both directions.

    Each trial pairs one positive with k-1 sampled distractors at a
    seeded random slot; `scorer(i, j)` scores language i against vision
    j, argmax ties resolve to the lowest candidate index. Returns
    (text-to-image accuracy, image-to-text accuracy).
    """
    if n_instances < k:
        raise ValueError(f"need at least k={k} instances, got {n_instances}")
    rng = np.random.default_rng(seed)
    ir_hits = tr_hits = 0
    for _ in range(trials):
        pos = int(rng.integers(n_instances))
        others = np.delete(np.arange(n_instances), pos)
        distractors = rng.choice(others, size=k - 1, replace=False)
        slot = int(rng.integers(k))
        candidates = np.insert(distractors, slot, pos)
        ir_scores = [scorer(pos, int(c)) for c in candidates]
        tr_scores = [scorer(int(c), pos) for c in candidates]
        ir_hits += int(np.argmax(ir_scores)) == slot
        tr_hits += int(np.argmax(tr_scores)) == slot
    return ir_hits / trials, tr_hits / trials


@dataclass
class EvalReport:
    """Everything one evaluation run reports; all metrics in [0, 1]."""

    corpus_f1: dict = field(default_factory=dict)  # modality -> float
    instance_f1: dict = field(default_factory=dict)
    per_category: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)
    clustering_accuracy: float | None = None
    retrieval_ir: float | None = None
    retrieval_tr: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "corpus_f1": self.corpus_f1,
            "instance_f1": self.instance_f1,
            "per_category": self.per_category,
            "baselines": self.baselines,
            "clustering_accuracy": self.clustering_accuracy,
            "retrieval_ir": self.retrieval_ir,
            "retrieval_tr": self.retrieval_tr,
            "extra": self.extra,
        }

    def to_text(self):
        lines = []
        for modality in sorted(self.corpus_f1):
            lines.append(
                f"{modality}.corpus_f1 = {self.corpus_f1[modality]:.4f}"
            )
            lines.append(
                f"{modality}.instance_f1 = {self.instance_f1[modality]:.4f}"
            )
        for name in sorted(self.baselines):
            for modality in sorted(self.baselines[name]):
                entry = self.baselines[name][modality]
                lines.append(
                    f"baseline.{name}.{modality}.corpus_f1 = {entry['corpus_f1']:.4f}"
                )
                lines.append(
                    f"baseline.{name}.{modality}.instance_f1 = "
                    f"{entry['instance_f1']:.4f}"
                )
        for cat in sorted(self.per_category):
            for modality in sorted(self.per_category[cat]):
                entry = self.per_category[cat][modality]
                lines.append(
                    f"category.{cat}.{modality}.corpus_f1 = {entry['corpus_f1']:.4f}"
                )
                lines.append(
                    f"category.{cat}.{modality}.instance_f1 = "
                    f"{entry['instance_f1']:.4f}"
                )
        if self.clustering_accuracy is not None:
            lines.append(f"clustering_accuracy = {self.clustering_accuracy:.4f}")
        if self.retrieval_ir is not None:
            lines.append(f"retrieval_ir = {self.retrieval_ir:.4f}")
            lines.append(f"retrieval_tr = {self.retrieval_tr:.4f}")
        for key in sorted(self.extra):
            lines.append(f"{key} = {self.extra[key]}")
        return "\n".join(lines) + "\n"
