"""Detection metrics: ROC AUC, operating-point rates, histograms, and the
residual-retention correlation used by the wash-out experiment.

Decision rule everywhere: score >= threshold counts as positive.  AUC follows
the Mann-Whitney convention with half credit for ties.
"""

from dataclasses import dataclass

import numpy as np

from .spectral import extract_residual


@dataclass(frozen=True)
class ScoredItem:
    score: float
    is_positive: bool
    id: str = ""


@dataclass(frozen=True)
class MetricRow:
    auc: float
    ba_max: float
    ba_max_threshold: float
    ba_at_0: float
    tpr_at_0: float
    fpr_at_0: float

    def to_dict(self):
        thr = self.ba_max_threshold
        return {
            "auc": self.auc,
            "b_acc_max": self.ba_max,
            "b_acc_max_threshold": thr if np.isfinite(thr) else None,
            "b_acc_at_0": self.ba_at_0,
            "tpr_at_0": self.tpr_at_0,
            "fpr_at_0": self.fpr_at_0,
        }


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple
    counts: dict

    def to_dict(self):
        return {
            "bin_edges": list(self.bin_edges),
            "counts": {k: list(v) for k, v in self.counts.items()},
        }


def _split_scores(items):
    scores = np.array([it.score for it in items], dtype=np.float64)
    if scores.size and not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    flags = np.array([bool(it.is_positive) for it in items])
    pos = scores[flags]
    neg = scores[~flags]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("single-class input")
    return pos, neg


def roc_auc(items):
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos, neg = _split_scores(items)
    both = np.concatenate([pos, neg])
    order = np.argsort(both, kind="mergesort")
    ranks = np.empty(both.size, dtype=np.float64)
    sorted_scores = both[order]
    # average ranks over tie groups
    i = 0
    while i < both.size:
        j = i
        while j + 1 < both.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = ranks[: pos.size].sum()
    p, n = pos.size, neg.size
    return float((rank_sum_pos - p * (p + 1) / 2.0) / (p * n))


def confusion_at(items, threshold):
    """(tpr, fpr, balanced accuracy) with decision score >= threshold."""
    pos, neg = _split_scores(items)
    tpr = float((pos >= threshold).mean())
    fpr = float((neg >= threshold).mean())
    return tpr, fpr, (tpr + 1.0 - fpr) / 2.0


def ba_max(items):
    """Best balanced accuracy over all thresholds and the smallest threshold
    achieving it.

    Candidates are the midpoints of consecutive distinct scores plus the two
    infinities, which is exhaustive for finite samples.
    """
    pos, neg = _split_scores(items)
    distinct = np.unique(np.concatenate([pos, neg]))
    candidates = np.concatenate(
        [[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]]
    )
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tpr = 1.0 - np.searchsorted(pos_sorted, candidates, side="left") / pos.size
    fpr = 1.0 - np.searchsorted(neg_sorted, candidates, side="left") / neg.size
    ba = (tpr + 1.0 - fpr) / 2.0
    best = int(np.argmax(ba))
    return float(ba[best]), float(candidates[best])


def metric_row(items, threshold=0.0):
    """All Table-style metrics for one binary score set."""
    auc = roc_auc(items)
    best_ba, best_thr = ba_max(items)
    tpr, fpr, ba0 = confusion_at(items, threshold)
    return MetricRow(
        auc=auc,
        ba_max=best_ba,
        ba_max_threshold=best_thr,
        ba_at_0=ba0,
        tpr_at_0=tpr,
        fpr_at_0=fpr,
    )


def score_histogram(scores, labels, n_bins):
    """Equal-width histogram of scores with per-label counts."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty input")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if len(labels) != scores.size:
        raise ValueError("scores and labels length mismatch")
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        edges = np.array([lo - 0.5, lo + 0.5])
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
    counts = {}
    labels = [str(l) for l in labels]
    for label in sorted(set(labels)):
        sel = scores[[l == label for l in labels]]
        hist, _ = np.histogram(sel, bins=edges)
        counts[label] = tuple(int(c) for c in hist)
    return Histogram(tuple(float(e) for e in edges), counts)


def histogram(items, n_bins):
    """Score distributions of a binary ScoredItem set."""
    return score_histogram(
        [it.score for it in items],
        ["positive" if it.is_positive else "negative" for it in items],
        n_bins,
    )


def residual_retention(a, b, denoiser="median3", sigma=1.0):
    """Pearson correlation between the noise residuals of two images.

    Near 1 when b preserved a's residual, near 0 when the processing
    washed it out.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("images must share dimensions")
    ra = extract_residual(a, denoiser=denoiser, sigma=sigma).data.ravel()
    rb = extract_residual(b, denoiser=denoiser, sigma=sigma).data.ravel()
    sa = ra.std()
    sb = rb.std()
    if sa <= 0.0 or sb <= 0.0:
        raise ValueError("zero-variance residual")
    return float((ra * rb).mean() / (sa * sb))
