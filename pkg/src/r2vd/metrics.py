"""Detection evaluation: exact ROC curves and the five threshold-sweep AUCs.

The threshold grid is the set of unique score values plus sentinels above
the max and below the min, so nothing is binned. A pixel is flagged when
its score is strictly greater than the threshold. AUC_df integrates pd
over pf (trapezoid, which equals the Mann-Whitney pairwise statistic with
ties counted half); the two tau integrals are exact integrals of the
right-continuous step functions pd(tau) and pf(tau) over [0, 1] on
min-max-normalized scores. The combined metrics follow the usual
definitions: auc_od = auc_df + auc_dt - auc_ft, auc_snpr = auc_dt / auc_ft
with the denominator floored at 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FiveNumber = tuple[float, float, float, float, float]


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending, sentinels included
    pd: np.ndarray          # detection probability per threshold
    pf: np.ndarray          # false-alarm probability per threshold


@dataclass
class MetricsReport:
    auc_df: float
    auc_dt: float
    auc_ft: float
    auc_od: float
    auc_snpr: float
    anomaly_stats: FiveNumber
    background_stats: FiveNumber

    def to_flat_dict(self) -> dict[str, float]:
        out = {
            "auc_df": self.auc_df,
            "auc_dt": self.auc_dt,
            "auc_ft": self.auc_ft,
            "auc_od": self.auc_od,
            "auc_snpr": self.auc_snpr,
        }
        labels = ("min", "q1", "median", "q3", "max")
        for cls, stats in (("anomaly", self.anomaly_stats), ("background", self.background_stats)):
            for label, value in zip(labels, stats):
                out[f"{cls}_{label}"] = value
        return out


def _flatten_inputs(a: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    gt = np.asarray(gt)
    if a.shape != gt.shape:
        raise ValueError(f"map shape {a.shape} does not match mask shape {gt.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("anomaly map contains non-finite values")
    scores = a.ravel()
    labels = (gt.ravel() > 0)
    anom = scores[labels]
    back = scores[~labels]
    if anom.size == 0 or back.size == 0:
        raise ValueError("mask must contain at least one anomaly and one background pixel")
    return scores, anom, back


def _exceed_fraction(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Fraction of scores strictly greater than each threshold."""
    counts = sorted_scores.size - np.searchsorted(sorted_scores, thresholds, side="right")
    return counts / sorted_scores.size


def roc(a: np.ndarray, gt: np.ndarray) -> RocCurve:
    """Exact ROC over the unique-score threshold grid (descending).

    Sentinels one unit above the max and below the min pin the (0, 0) and
    (1, 1) endpoints.
    """
    scores, anom, back = _flatten_inputs(a, gt)
    unique_desc = np.unique(scores)[::-1]
    thresholds = np.concatenate(([unique_desc[0] + 1.0], unique_desc, [unique_desc[-1] - 1.0]))
    anom_sorted = np.sort(anom)
    back_sorted = np.sort(back)
    pd = _exceed_fraction(anom_sorted, thresholds)
    pf = _exceed_fraction(back_sorted, thresholds)
    return RocCurve(thresholds=thresholds, pd=pd, pf=pf)


def _step_integral(sorted_scores: np.ndarray, grid: np.ndarray) -> float:
    """Exact integral over [0, 1] of tau -> fraction(scores > tau).

    The fraction is constant on every [grid_j, grid_{j+1}) interval because
    the grid contains all distinct score values.
    """
    values = _exceed_fraction(sorted_scores, grid[:-1])
    return float(np.sum(values * np.diff(grid)))


def separability_stats(a: np.ndarray, gt: np.ndarray) -> dict[str, FiveNumber]:
    """Five-number summaries (min, Q1, median, Q3, max) of the normalized
    scores for the anomaly and background classes."""
    _, anom, back = _flatten_inputs(_normalize(a), gt)
    summary = lambda v: tuple(float(q) for q in np.percentile(v, [0, 25, 50, 75, 100]))
    return {"anomaly": summary(anom), "background": summary(back)}


def _normalize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def auc_metrics(a: np.ndarray, gt: np.ndarray) -> MetricsReport:
    """All five AUC summaries plus per-class score quartiles."""
    normalized = _normalize(a)
    scores, anom, back = _flatten_inputs(normalized, gt)
    curve = roc(normalized, gt)
    auc_df = float(np.trapezoid(curve.pd, curve.pf))

    grid = np.unique(scores)
    if grid[0] > 0.0:
        grid = np.concatenate(([0.0], grid))
    if grid[-1] < 1.0:
        grid = np.concatenate((grid, [1.0]))
    auc_dt = _step_integral(np.sort(anom), grid)
    auc_ft = _step_integral(np.sort(back), grid)

    stats = separability_stats(a, gt)
    return MetricsReport(
        auc_df=auc_df,
        auc_dt=auc_dt,
        auc_ft=auc_ft,
        auc_od=auc_df + auc_dt - auc_ft,
        auc_snpr=auc_dt / max(auc_ft, 1e-12),
        anomaly_stats=stats["anomaly"],
        background_stats=stats["background"],
    )
