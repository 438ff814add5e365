"""Ranking and classification metrics with binary relevance."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


def _hits(ranked, relevant, k: int) -> int:
    relevant = set(relevant)
    return sum(1 for item in list(ranked)[:k] if item in relevant)


def precision_at_k(ranked, relevant, k: int) -> float:
    """Hits in the top ``k`` divided by ``k`` (even if fewer items are ranked)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return _hits(ranked, relevant, k) / k


def recall_at_k(ranked, relevant, k: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall is undefined for an empty relevant set")
    return _hits(ranked, relevant, k) / len(relevant)


def dcg_at_k(ranked, relevant, k: int) -> float:
    relevant = set(relevant)
    return sum(1.0 / math.log2(i + 2) for i, item in enumerate(list(ranked)[:k]) if item in relevant)


def ideal_dcg(n_relevant: int, k: int) -> float:
    return sum(1.0 / math.log2(i + 2) for i in range(min(k, n_relevant)))


def ndcg_at_k(ranked, relevant, k: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("NDCG is undefined for an empty relevant set")
    return dcg_at_k(ranked, relevant, k) / ideal_dcg(len(relevant), k)


def random_ndcg_at_k(n_relevant: int, n_candidates: int, k: int) -> float:
    """Expected NDCG@k of a uniformly random ordering of ``n_candidates``
    items of which ``n_relevant`` are relevant.

    Each of the first ``min(k, n)`` positions holds a relevant item with
    probability ``n_relevant / n_candidates``.
    """
    if n_relevant < 1 or n_candidates < n_relevant:
        raise ValueError("need 1 <= n_relevant <= n_candidates")
    hit = n_relevant / n_candidates
    dcg = sum(hit / math.log2(i + 2) for i in range(min(k, n_candidates)))
    return dcg / ideal_dcg(n_relevant, k)


def random_precision_at_k(n_relevant: int, n_candidates: int, k: int) -> float:
    """Expected precision@k of a uniformly random ordering."""
    if n_relevant < 0 or n_candidates < max(n_relevant, 1):
        raise ValueError("need 0 <= n_relevant <= n_candidates")
    return min(k, n_candidates) * (n_relevant / n_candidates) / k


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted as one half, in O(n log n)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    # midranks of tied groups
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], s.size]
    ranks = np.empty(s.size)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_score(probabilities, labels, threshold: float = 0.5) -> float:
    """F1 of ``probability >= threshold`` predictions; 0 when precision and
    recall are both 0."""
    pred = np.asarray(probabilities) >= threshold
    labels = np.asarray(labels).astype(bool)
    tp = int((pred & labels).sum())
    fp = int((pred & ~labels).sum())
    fn = int((~pred & labels).sum())
    if tp == 0:
        return 0.0
    # 2PR/(P+R) rearranged to a single integer ratio: one rounding, exact
    # agreement with counting
    return 2 * tp / (2 * tp + fp + fn)


def modality_weight_share(weights) -> np.ndarray:
    """Mean (visual, text, audio) attention over a collection of weight triples."""
    arr = np.asarray([np.asarray(getattr(w, "as_array", lambda: w)()) for w in weights], dtype=np.float64)
    if arr.size == 0:
        raise ValueError("modality weight share of an empty collection")
    return arr.reshape(-1, 3).mean(axis=0)


@dataclass
class MetricsReport:
    variant: str
    precision: dict[int, float] = field(default_factory=dict)
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    auc: float = float("nan")
    f1: float = float("nan")
    modality_share: tuple[float, float, float] = (float("nan"),) * 3
    n_users: int = 0
    n_skipped: int = 0
    containment: float = float("nan")

    def to_json(self) -> dict:
        out = asdict(self)
        for key in ("precision", "recall", "ndcg"):
            out[key] = {str(k): v for k, v in getattr(self, key).items()}
        out["modality_share"] = dict(zip(("visual", "text", "audio"), self.modality_share))
        return out


TABLE_COLUMNS = ("Model Variant", "NDCG@10", "Precision@10", "AUC")


def format_table(rows, labels=None) -> str:
    """Aligned text table with one row per report."""
    body = []
    for i, r in enumerate(rows):
        name = labels[i] if labels else r.variant
        body.append((name, f"{r.ndcg.get(10, float('nan')):.4f}", f"{r.precision.get(10, float('nan')):.4f}", f"{r.auc:.4f}"))
    widths = [max(len(c), *(len(row[j]) for row in body)) if body else len(c) for j, c in enumerate(TABLE_COLUMNS)]
    line = lambda cells: " | ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(cells, widths)))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(TABLE_COLUMNS), sep, *(line(r) for r in body)]) + "\n"
