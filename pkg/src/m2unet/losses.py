"""Smoothed Jaccard training loss and the evaluation metrics.

The loss follows ``alpha * (1 - (alpha + I) / (alpha + S - I))`` where
``I = sum(y * yhat)`` and ``S = sum(y) + sum(yhat)``, with a single
smoothing constant ``alpha`` (default 0.7) in numerator and denominator.
Sums run over all elements of the pair, so the op applies equally to one
mask or a stacked batch; :func:`batch_jaccard_loss` averages per-sample
values instead, which is what the trainer optimizes.

Metrics (dice, iou, mae) are plain floats over binarized predictions;
the empty-vs-empty convention is perfect agreement (1.0) for dice/iou.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor
from .errors import ConfigError, ShapeError
from .ops import div, mean, mul, sub, sum_


def _check_pair(y, yhat, op):
    if y.shape != yhat.shape:
        raise ShapeError(f"{op}: mask shapes differ, {y.shape} vs {yhat.shape}")


def _check_binary(arr, op):
    if not np.all((arr == 0) | (arr == 1)):
        raise ConfigError(f"{op}: ground-truth mask must be strictly binary")


def jaccard_loss(y, yhat, alpha=0.7):
    """Smoothed Jaccard loss over all elements; differentiable w.r.t. yhat."""
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    _check_pair(y, yhat, "jaccard_loss")
    _check_binary(y.data if isinstance(y, Tensor) else np.asarray(y), "jaccard_loss")
    inter = sum_(mul(y, yhat))
    total = sum_(y) + sum_(yhat)
    num = alpha + inter
    den = sub(alpha + total, inter)
    return mul(sub(1.0, div(num, den)), alpha)


def batch_jaccard_loss(y, yhat, alpha=0.7):
    """Mean of per-sample losses over the leading batch axis."""
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    _check_pair(y, yhat, "jaccard_loss")
    _check_binary(y.data if isinstance(y, Tensor) else np.asarray(y), "jaccard_loss")
    axes = tuple(range(1, y.ndim))
    inter = sum_(mul(y, yhat), axis=axes)
    total = sum_(y, axis=axes) + sum_(yhat, axis=axes)
    per_sample = mul(sub(1.0, div(alpha + inter, sub(alpha + total, inter))), alpha)
    return mean(per_sample)


def _counts(y, yhat_bin):
    a = np.asarray(y, dtype=bool)
    b = np.asarray(yhat_bin, dtype=bool)
    inter = int(np.logical_and(a, b).sum())
    return inter, int(a.sum()), int(b.sum())


def dice(y, yhat_bin):
    """2|A&B| / (|A| + |B|); 1.0 when both masks are empty."""
    _check_pair(np.asarray(y), np.asarray(yhat_bin), "dice")
    inter, na, nb = _counts(y, yhat_bin)
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def iou(y, yhat_bin):
    """Intersection over union of the two masks; 1.0 when both are empty."""
    _check_pair(np.asarray(y), np.asarray(yhat_bin), "iou")
    inter, na, nb = _counts(y, yhat_bin)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return inter / union


def mae(y, yhat):
    """Mean absolute error between probabilities and the binary truth."""
    ya = np.asarray(y, dtype=np.float64)
    pa = np.asarray(yhat, dtype=np.float64)
    _check_pair(ya, pa, "mae")
    return float(np.abs(ya - pa).mean())


def binarize(probs, threshold=0.5):
    return (np.asarray(probs) >= threshold).astype(np.float32)


@dataclass
class MetricsReport:
    """Per-sample and aggregate evaluation table.

    Aggregates are unweighted means of the per-sample values; serialized as
    tab-separated text with four-decimal floats, one row per sample plus a
    final mean row.
    """

    per_sample: list  # (sample_id, dice, iou, mae)

    @property
    def m_dice(self):
        return float(np.mean([r[1] for r in self.per_sample])) if self.per_sample else 0.0

    @property
    def m_iou(self):
        return float(np.mean([r[2] for r in self.per_sample])) if self.per_sample else 0.0

    @property
    def mae(self):
        return float(np.mean([r[3] for r in self.per_sample])) if self.per_sample else 0.0

    def to_tsv(self):
        lines = ["sample\tdice\tiou\tmae"]
        for sid, d, i, m in self.per_sample:
            lines.append(f"{sid}\t{d:.4f}\t{i:.4f}\t{m:.4f}")
        lines.append(f"mean\t{self.m_dice:.4f}\t{self.m_iou:.4f}\t{self.mae:.4f}")
        return "\n".join(lines) + "\n"


def score_sample(sample_id, y, probs, threshold=0.5):
    """(id, dice, iou, mae) row for one prediction."""
    yb = np.asarray(y)
    pb = binarize(probs, threshold)
    return (sample_id, dice(yb, pb), iou(yb, pb), mae(yb, probs))
