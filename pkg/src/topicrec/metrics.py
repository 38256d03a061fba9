"""Per-impression ranking metrics: AUC, MRR, nDCG@5, nDCG@10.

Each metric is computed per impression and averaged unweighted over
impressions. Impressions where a metric is undefined (no positive, or
single-class for AUC) are excluded from that metric's mean and counted.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

METRIC_NAMES = ("auc", "mrr", "ndcg@5", "ndcg@10")


@dataclass
class ScoredImpression:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise DimensionError(
                f"scores {self.scores.shape} and labels {self.labels.shape} "
                "must be equal-length vectors")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")


def _midranks(values):
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scored):
    """Probability a positive outranks a negative, ties worth 0.5.

    Returns None when the impression has only one class.
    """
    positives = scored.labels == 1
    n_pos = int(positives.sum())
    n_neg = len(scored.labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _midranks(scored.scores)
    pos_rank_sum = ranks[positives].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _descending_order(scores):
    # stable sort on negated scores: ties keep original candidate order
    return np.argsort(-scores, kind="mergesort")


def mrr(scored):
    """Mean reciprocal rank over positives; None when no positive."""
    if not (scored.labels == 1).any():
        return None
    order = _descending_order(scored.scores)
    ranks = np.nonzero(scored.labels[order] == 1)[0] + 1
    return float(np.mean(1.0 / ranks))


def ndcg_at_k(scored, k):
    """Normalized DCG with 2^label - 1 gains; None when no positive."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not (scored.labels == 1).any():
        return None
    order = _descending_order(scored.scores)
    gains = (2.0 ** scored.labels - 1.0)[order][:k]
    discounts = 1.0 / np.log2(np.arange(2, len(gains) + 2))
    dcg = float(gains @ discounts)
    ideal = np.sort(2.0 ** scored.labels - 1.0)[::-1][:k]
    idcg = float(ideal @ (1.0 / np.log2(np.arange(2, len(ideal) + 2))))
    return dcg / idcg


@dataclass
class MetricReport:
    """Unweighted metric means plus per-metric exclusion counts."""

    means: dict
    excluded: dict
    n_impressions: int
    extra: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"impressions\t{self.n_impressions}"]
        for name in METRIC_NAMES:
            value = self.means.get(name)
            shown = "nan" if value is None else f"{value:.6f}"
            lines.append(f"{name}\t{shown}")
            lines.append(f"{name}_excluded\t{self.excluded.get(name, 0)}")
        for key in sorted(self.extra):
            lines.append(f"{key}\t{self.extra[key]}")
        return "\n".join(lines) + "\n"

    def to_tsv(self):
        """Header and percent row with two decimals."""
        header = "\t".join(name.upper() for name in METRIC_NAMES)
        cells = []
        for name in METRIC_NAMES:
            value = self.means.get(name)
            cells.append("nan" if value is None else f"{100.0 * value:.2f}")
        return header + "\n" + "\t".join(cells) + "\n"


def evaluate_scored(impressions):
    """Aggregate the four metrics over a list of ScoredImpression."""
    sums = {name: 0.0 for name in METRIC_NAMES}
    counts = {name: 0 for name in METRIC_NAMES}
    excluded = {name: 0 for name in METRIC_NAMES}
    for scored in impressions:
        values = {
            "auc": auc(scored),
            "mrr": mrr(scored),
            "ndcg@5": ndcg_at_k(scored, 5),
            "ndcg@10": ndcg_at_k(scored, 10),
        }
        for name, value in values.items():
            if value is None:
                excluded[name] += 1
            else:
                sums[name] += value
                counts[name] += 1
    means = {name: (sums[name] / counts[name] if counts[name] else None)
             for name in METRIC_NAMES}
    return MetricReport(means=means, excluded=excluded,
                        n_impressions=len(impressions))
