"""Dual-stream coarse detection and the lenient prior weight map.

Two classical detectors look at the scene from complementary angles: the
RX statistic flags global distribution outliers via the Mahalanobis
distance, and the subspace residual flags pixels with energy outside the
dominant background eigen-subspace. Their raw scores live on different
scales, so fusion happens in empirical rank space (percentile rank
alignment), after which a piecewise weight curve converts the fused
consensus into per-pixel training weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import cholesky_solve, empirical_rank, mean_covariance, sym_eig

LENIENT_TANH = "lenient_tanh"
STRICT_SIGMOID = "strict_sigmoid"


@dataclass(frozen=True)
class WeightCurveParams:
    """Shape of the score -> weight transition.

    ``theta_gap`` is the tolerance offset below which a pixel is fully
    trusted; ``floor`` is the weight assigned at and above the anomaly
    threshold (a small epsilon for the lenient curve, exactly 0 for the
    strict one). The transition is centered at (theta_gap + 1) / 2 so it
    meets both branch values smoothly instead of jumping at theta_gap.
    """

    theta_gap: float = 0.7
    steepness: float = 6.0
    floor: float = 0.01
    shape: str = LENIENT_TANH

    def validate(self) -> None:
        if not 0.0 < self.theta_gap < 1.0:
            raise ValueError(f"theta_gap must be in (0, 1), got {self.theta_gap}")
        if self.steepness <= 0.0:
            raise ValueError("steepness must be positive")
        if self.floor < 0.0:
            raise ValueError("floor must be non-negative")
        if self.shape not in (LENIENT_TANH, STRICT_SIGMOID):
            raise ValueError(f"unknown curve shape {self.shape!r}")


LENIENT_DEFAULTS = WeightCurveParams(theta_gap=0.7, steepness=6.0, floor=0.01, shape=LENIENT_TANH)
STRICT_DEFAULTS = WeightCurveParams(theta_gap=0.7, steepness=30.0, floor=0.0, shape=STRICT_SIGMOID)


def rx_scores(cube: np.ndarray) -> np.ndarray:
    """Mahalanobis distance of every pixel to the global scene statistics."""
    cube = np.asarray(cube, dtype=np.float64)
    h, w, c = cube.shape
    pixels = cube.reshape(-1, c)
    mean, cov = mean_covariance(pixels)
    centered = pixels - mean
    solved = cholesky_solve(cov, centered.T)  # (C, N)
    scores = np.einsum("nc,cn->n", centered, solved)
    return np.maximum(scores, 0.0).reshape(h, w)


def lsun_scores(cube: np.ndarray, bg_dim: int = 3) -> np.ndarray:
    """Energy of each pixel outside the top-``bg_dim`` correlation subspace."""
    cube = np.asarray(cube, dtype=np.float64)
    h, w, c = cube.shape
    if not 1 <= bg_dim < c:
        raise ValueError(f"bg_dim must be in [1, {c - 1}], got {bg_dim}")
    pixels = cube.reshape(-1, c)
    corr = pixels.T @ pixels / pixels.shape[0]
    _, vectors = sym_eig(corr)
    basis = vectors[:, :bg_dim]  # (C, bg_dim)
    coeff = pixels @ basis
    residual = pixels - coeff @ basis.T
    scores = np.einsum("nc,nc->n", residual, residual)
    return np.maximum(scores, 0.0).reshape(h, w)


def fuse_pra(s_rx: np.ndarray, s_lsun: np.ndarray) -> np.ndarray:
    """Percentile-rank-aligned consensus of two score maps.

    Each map is replaced by its empirical rank (scale-free), then the two
    rank fields are averaged. Output values lie in (0, 1].
    """
    s_rx = np.asarray(s_rx, dtype=np.float64)
    s_lsun = np.asarray(s_lsun, dtype=np.float64)
    if s_rx.shape != s_lsun.shape:
        raise ValueError(f"score maps disagree: {s_rx.shape} vs {s_lsun.shape}")
    return 0.5 * (empirical_rank(s_rx) + empirical_rank(s_lsun))


def weight_curve(t, params: WeightCurveParams):
    """Piecewise weight of a normalized score ``t`` (scalar or array).

    t >= 1 maps to the floor, t <= theta_gap maps to 1, and the gap in
    between follows a monotone transition centered at (theta_gap + 1) / 2:
    a shifted tanh for the lenient shape, a steep sigmoid for the strict
    one. Both evaluate to 0.5 at the center.
    """
    params.validate()
    t_arr = np.asarray(t, dtype=np.float64)
    center = 0.5 * (params.theta_gap + 1.0)
    z = params.steepness * (t_arr - center)
    if params.shape == LENIENT_TANH:
        transition = 0.5 * (1.0 - np.tanh(z))
    else:
        transition = 1.0 / (1.0 + np.exp(z))
    out = np.where(t_arr >= 1.0, params.floor, np.where(t_arr <= params.theta_gap, 1.0, transition))
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(out)
    return out


def coarse_weights(
    p_avg: np.ndarray, eta: float, params: WeightCurveParams = LENIENT_DEFAULTS
) -> np.ndarray:
    """Convert the fused consensus map into per-pixel weights.

    The anomaly threshold is the empirical (1 - eta) quantile of the map
    (linear interpolation); scores are normalized by it and pushed through
    the weight curve.
    """
    if not 0.0 < eta < 0.5:
        raise ValueError(f"eta must be in (0, 0.5), got {eta}")
    p_avg = np.asarray(p_avg, dtype=np.float64)
    tau = float(np.quantile(p_avg.ravel(), 1.0 - eta))
    if tau <= 0.0:
        raise ValueError(f"anomaly threshold is {tau}; score map must be positive somewhere")
    return weight_curve(p_avg / tau, params)
