"""Vector interference inference over the frozen score model.

K independent seeded perturbations are injected at a fixed timestep; the
predicted noise is converted to a score direction, unit-normalized, and
accumulated per pixel. Background pixels get pushed in random directions
that cancel (norm near sqrt(K)) while out-of-distribution pixels see a
consistent pull whose unit vectors add coherently (norm near K). The
anomaly map is the exact min-max normalization of the accumulated norms.

Each perturbation draws from its own stream seeded by hash(seed, k), so
the K passes are order-independent and parallelizable; accumulation runs
in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import DiffusionSchedule, DitModel, PsfContext
from .seeding import derive_seed


@dataclass(frozen=True)
class VdiConfig:
    k: int = 50
    t_inf: int = 980
    xi: float = 1e-8
    seed: int = 0

    def validate(self, t_max: int) -> None:
        if self.k < 1:
            raise ValueError(f"perturbation count must be >= 1, got {self.k}")
        if not 0 <= self.t_inf <= t_max - 1:
            raise ValueError(f"t_inf must be in [0, {t_max - 1}], got {self.t_inf}")
        if self.xi <= 0.0:
            raise ValueError("xi must be positive")


def score_from_noise(eps_hat: np.ndarray, sigma_inf: float) -> np.ndarray:
    """Score field from predicted noise: -eps_hat / sigma_inf, elementwise."""
    if sigma_inf <= 0.0:
        raise ValueError(f"sigma_inf must be positive, got {sigma_inf}")
    return -np.asarray(eps_hat, dtype=np.float64) / sigma_inf


def unit_vector(s: np.ndarray, xi: float = 1e-8) -> np.ndarray:
    """Soft unit vector s / (||s|| + xi); the zero vector maps to zero."""
    s = np.asarray(s, dtype=np.float64)
    return s / (np.linalg.norm(s) + xi)


def unit_field(field: np.ndarray, xi: float = 1e-8) -> np.ndarray:
    """Per-pixel soft unit vectors of an (H, W, C) score field."""
    field = np.asarray(field, dtype=np.float64)
    norms = np.linalg.norm(field, axis=-1, keepdims=True)
    return field / (norms + xi)


def minmax_map(values: np.ndarray) -> np.ndarray:
    """Exact min-max normalization; a constant field maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def _check_inference_inputs(model, r: np.ndarray, x: np.ndarray) -> tuple[int, int, int]:
    if not getattr(model, "frozen", False):
        raise RuntimeError("score model must be frozen before inference")
    r = np.asarray(r)
    x = np.asarray(x)
    if r.ndim != 3:
        raise ValueError(f"expected (H, W, C) residual, got shape {r.shape}")
    if x.shape != r.shape:
        raise ValueError(f"scene {x.shape} and residual {r.shape} shapes disagree")
    return r.shape


def vdi_infer(
    model: DitModel,
    r: np.ndarray,
    x: np.ndarray,
    sched: DiffusionSchedule,
    cfg: VdiConfig,
    psf: PsfContext,
) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate K unit score vectors per pixel and normalize their norms.

    Returns (anomaly_map, cum_norms): the map is min-max normalized to
    [0, 1] (all zeros if the norm field is constant); cum_norms holds the
    raw accumulated-vector norms in [0, K].
    """
    h, w, c = _check_inference_inputs(model, r, x)
    cfg.validate(sched.t_max)
    sigma_inf = sched.sigma(cfg.t_inf)
    r_t = torch.from_numpy(np.asarray(r, dtype=np.float32))
    v_cum = np.zeros((h, w, c), dtype=np.float64)
    with torch.no_grad():
        for k in range(1, cfg.k + 1):
            gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "vdi", k))
            eps = torch.randn(h, w, c, generator=gen)
            perturbed = r_t + sigma_inf * eps
            eps_hat = model(perturbed, cfg.t_inf, psf).numpy()
            score = score_from_noise(eps_hat, sigma_inf)
            v_cum += unit_field(score, cfg.xi)
    cum_norms = np.linalg.norm(v_cum, axis=-1)
    return minmax_map(cum_norms), cum_norms


def scalar_infer(
    model: DitModel,
    r: np.ndarray,
    x: np.ndarray,
    sched: DiffusionSchedule,
    cfg: VdiConfig,
    psf: PsfContext,
) -> tuple[np.ndarray, np.ndarray]:
    """Scalar ablation of the interference stage.

    Uses the same K seeded perturbations but keeps only the per-pixel
    predicted-noise magnitude, averaged over draws: no directions, no
    cancellation. Returns (anomaly_map, mean_norms).
    """
    h, w, _ = _check_inference_inputs(model, r, x)
    cfg.validate(sched.t_max)
    sigma_inf = sched.sigma(cfg.t_inf)
    r_t = torch.from_numpy(np.asarray(r, dtype=np.float32))
    total = np.zeros((h, w), dtype=np.float64)
    with torch.no_grad():
        for k in range(1, cfg.k + 1):
            gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "vdi", k))
            eps = torch.randn(h, w, r.shape[2], generator=gen)
            perturbed = r_t + sigma_inf * eps
            eps_hat = model(perturbed, cfg.t_inf, psf).numpy().astype(np.float64)
            total += np.linalg.norm(eps_hat, axis=-1)
    mean_norms = total / cfg.k
    return minmax_map(mean_norms), mean_norms
