"""Pearson and concordance correlation: evaluation metrics and
differentiable losses, plus the per-category mean-PCC report.

Conventions, fixed across the package:
  * population (1/n) moments everywhere;
  * metric forms raise on degenerate inputs, loss forms epsilon-guard
    instead so a cold-start constant predictor cannot crash training;
  * in the evaluation report a zero-variance category scores 0 and is
    flagged rather than poisoning the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import BatchTooSmall, RowCountMismatch, ZeroDenominator, ZeroVariance
from .tensor import Tensor

CATEGORIES = (
    "adoration",
    "amusement",
    "anxiety",
    "disgust",
    "empathic_pain",
    "fear",
    "surprise",
)

N_CATEGORIES = len(CATEGORIES)

LOSS_KINDS = ("pcc", "ccc")

_VARIANCE_FLOOR = 1e-12
_LOSS_EPS = 1e-8


def _as_vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise RowCountMismatch(f"vector lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise BatchTooSmall("correlation needs at least 2 samples")
    return x, y


def pcc(x, y) -> float:
    """Pearson correlation, cov(x,y) / (sigma_x * sigma_y), clamped to [-1, 1]."""
    x, y = _as_vectors(x, y)
    mx, my = x.mean(), y.mean()
    cov = ((x - mx) * (y - my)).mean()
    sx = np.sqrt(((x - mx) ** 2).mean())
    sy = np.sqrt(((y - my) ** 2).mean())
    if sx < _VARIANCE_FLOOR or sy < _VARIANCE_FLOOR:
        raise ZeroVariance(f"standard deviations {sx:.3g}, {sy:.3g} below {_VARIANCE_FLOOR}")
    return float(np.clip(cov / (sx * sy), -1.0, 1.0))


def ccc(x, y) -> float:
    """Lin's concordance: 2*cov / (var_x + var_y + (mean_x - mean_y)^2)."""
    x, y = _as_vectors(x, y)
    mx, my = x.mean(), y.mean()
    cov = ((x - mx) * (y - my)).mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom < _VARIANCE_FLOOR:
        raise ZeroDenominator(f"denominator {denom:.3g} below {_VARIANCE_FLOOR}")
    return float(np.clip(2.0 * cov / denom, -1.0, 1.0))


def _column_correlation(kind: str, pred_col: Tensor, target_col: np.ndarray) -> Tensor:
    """Differentiable per-category correlation; denominators epsilon-guarded."""
    n = pred_col.shape[0]
    t_mean = float(target_col.mean())
    t_centered = target_col - t_mean
    t_var = float((t_centered**2).mean())
    t_const = Tensor._wrap(t_centered.astype(pred_col.data.dtype))
    p_mean = T.reduce("mean", pred_col)
    p_centered = T.sub(pred_col, p_mean)
    cov = T.reduce("mean", T.mul(p_centered, t_const))
    p_var = T.reduce("mean", T.mul(p_centered, p_centered))
    if kind == "pcc":
        denom = T.sqrt(p_var + _LOSS_EPS) * float(np.sqrt(t_var + _LOSS_EPS))
        return T.div(cov, denom)
    mean_shift = p_mean - float(t_mean)
    denom = p_var + float(t_var) + T.mul(mean_shift, mean_shift) + _LOSS_EPS
    return T.div(cov * 2.0, denom)


def correlation_loss(kind: str, pred: Tensor, target) -> Tensor:
    """1 - mean per-category correlation; gradient flows through pred only."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")
    pred = T.as_tensor(pred)
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    target = target.astype(np.float64)
    if pred.ndim != 2 or target.shape != pred.shape:
        raise RowCountMismatch(f"pred {pred.shape} and target {target.shape} must match as [B, K]")
    batch, k = pred.shape
    if batch < 2:
        raise BatchTooSmall(f"correlation loss needs a batch of >= 2, got {batch}")
    total = _column_correlation(kind, pred[:, 0], target[:, 0])
    for c in range(1, k):
        total = T.add(total, _column_correlation(kind, pred[:, c], target[:, c]))
    return 1.0 - total / float(k)


@dataclass
class CorrelationReport:
    """Per-category Pearson correlations over one split."""

    per_category: np.ndarray  # [7], degenerate categories hold 0.0
    mean_pcc: float
    n_samples: int
    degenerate_categories: list[int] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = []
        for i, name in enumerate(CATEGORIES):
            suffix = "  (degenerate: zero variance)" if i in self.degenerate_categories else ""
            out.append(f"{name:>14s}: {self.per_category[i]: .6f}{suffix}")
        out.append(f"{'mean PCC':>14s}: {self.mean_pcc: .6f}  (n={self.n_samples})")
        return out


def evaluate_mean_pcc(preds, targets) -> CorrelationReport:
    """Competition protocol: PCC per category over the full split, averaged.

    A category with (near-)zero variance in either column scores 0 and is
    listed in the report's degenerate set.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[1] != N_CATEGORIES:
        raise RowCountMismatch(f"predictions must be [N, {N_CATEGORIES}], got {preds.shape}")
    if targets.shape != preds.shape:
        raise RowCountMismatch(f"row counts differ: {preds.shape} vs {targets.shape}")
    if preds.shape[0] < 2:
        raise BatchTooSmall("mean PCC needs at least 2 rows")
    per_category = np.zeros(N_CATEGORIES)
    degenerate: list[int] = []
    for c in range(N_CATEGORIES):
        try:
            per_category[c] = pcc(preds[:, c], targets[:, c])
        except ZeroVariance:
            per_category[c] = 0.0
            degenerate.append(c)
    return CorrelationReport(
        per_category=per_category,
        mean_pcc=float(per_category.mean()),
        n_samples=preds.shape[0],
        degenerate_categories=degenerate,
    )
