"""Seeded synthetic hyperspectral scenes with planted anomalies.

A scene is a low-rank background (convex mixtures of a few smooth
endmember spectra) plus Gaussian noise, with three kinds of planted
structure:

* pure anomalies, spectrally rotated at least ``min_sam_degrees`` away
  from every background endmember;
* sub-pixel anomalies, linearly mixed 30-70% with the local background;
* shadows, background pixels scaled by a factor in [0.3, 0.7] so they
  keep the background direction (SAM < 1 degree) at lower magnitude.

Everything is a pure function of the config, seed included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

_BG_NOISE_STD = 0.01
# shadows darken a quieter noisy pixel multiplicatively, so the angular
# drift from the parent stays well under 1 degree at any darkening factor
_SHADOW_NOISE_STD = 0.002
_ANGLE_MARGIN_DEG = 5.0
_MAX_REDRAWS = 200


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 64
    bands: int = 32
    anomaly_ratio: float = 0.02
    min_sam_degrees: float = 25.0
    n_background_endmembers: int = 3
    shadow_fraction: float = 0.1
    sub_pixel_fraction: float = 0.25
    seed: int = 0

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("scene dims must be positive")
        if self.bands < 2:
            raise ValueError("need at least 2 bands")
        if not 0.0 < self.anomaly_ratio < 0.5:
            raise ValueError(f"anomaly_ratio must be in (0, 0.5), got {self.anomaly_ratio}")
        if not 0.0 < self.min_sam_degrees < 90.0:
            raise ValueError(f"min_sam_degrees must be in (0, 90), got {self.min_sam_degrees}")
        if self.n_background_endmembers < 1:
            raise ValueError("need at least one background endmember")
        if not 0.0 <= self.shadow_fraction <= 1.0:
            raise ValueError("shadow_fraction must be in [0, 1]")
        if not 0.0 <= self.sub_pixel_fraction <= 1.0:
            raise ValueError("sub_pixel_fraction must be in [0, 1]")


@dataclass
class SceneData:
    """Full scene description; ``synth_scene`` exposes only (cube, mask)."""

    cube: np.ndarray            # (H, W, C) float32
    mask: np.ndarray            # (H, W) uint8, 1 = anomaly
    endmembers: np.ndarray      # (n_bg, C) unit-norm background spectra
    anomaly_spectra: np.ndarray   # (n_anom_em, C) planted anomaly spectra (pre-noise)
    pure_anomaly_idx: np.ndarray  # flat indices of full-strength anomalies
    subpixel_idx: np.ndarray      # flat indices of mixed anomalies
    shadow_idx: np.ndarray        # flat indices of darkened background
    pure_mixture: np.ndarray = field(repr=False, default=None)  # (N, C) pre-noise background


def spectral_angle_degrees(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two spectra in degrees."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 90.0
    cos = np.clip(a.dot(b) / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def _smooth_endmember(rng: np.random.Generator, bands: int) -> np.ndarray:
    """Random smooth spectrum: cumulative sum of positive noise, unit norm.

    Heavy-tailed increments vary the curve shapes, so a handful of
    endmembers actually spans a few-dimensional subspace instead of a
    bundle of near-parallel ramps.
    """
    curve = np.cumsum(rng.lognormal(0.0, 1.5, size=bands) + 0.02)
    return curve / np.linalg.norm(curve)


def _angle_to_span_degrees(candidate: np.ndarray, members: list[np.ndarray]) -> float:
    """Angle between a unit vector and the span of the given vectors."""
    if not members:
        return 90.0
    basis, _ = np.linalg.qr(np.stack(members).T)
    residual = candidate - basis @ (basis.T @ candidate)
    return float(np.degrees(np.arcsin(np.clip(np.linalg.norm(residual), 0.0, 1.0))))


def _draw_endmembers(rng: np.random.Generator, count: int, bands: int) -> np.ndarray:
    """Endmembers each at least 10 degrees out of the span of the others.

    Keeps the background genuinely ``count``-dimensional, so the subspace
    detector has an actual low-rank structure to latch onto.
    """
    members: list[np.ndarray] = []
    for _ in range(count):
        for _ in range(_MAX_REDRAWS):
            candidate = _smooth_endmember(rng, bands)
            if _angle_to_span_degrees(candidate, members) >= 10.0:
                members.append(candidate)
                break
        else:
            raise RuntimeError("could not draw sufficiently distinct background endmembers")
    return np.stack(members)


def _anomaly_direction(
    rng: np.random.Generator, endmembers: np.ndarray, min_sam_degrees: float
) -> np.ndarray:
    """Unit spectrum at angle >= min_sam to every background endmember.

    Built as cos(phi) * u + sin(phi) * q with u the mean background
    direction and q a unit vector orthogonal to the whole endmember span,
    so the angle to each endmember is at least phi by construction.
    """
    bands = endmembers.shape[1]
    basis, _ = np.linalg.qr(endmembers.T)  # (C, n_bg) orthonormal span
    u = endmembers.mean(axis=0)
    u = u / np.linalg.norm(u)
    phi = np.radians(min(min_sam_degrees + _ANGLE_MARGIN_DEG, 89.0))
    for _ in range(_MAX_REDRAWS):
        walk = np.cumsum(rng.standard_normal(bands))
        q = walk - basis @ (basis.T @ walk)
        norm = np.linalg.norm(q)
        if norm > 1e-6:
            q /= norm
            direction = np.cos(phi) * u + np.sin(phi) * q
            return direction / np.linalg.norm(direction)
    raise RuntimeError("failed to draw an anomaly direction outside the background span")


def _place_anomalies(
    rng: np.random.Generator, h: int, w: int, n_anom: int, sub_pixel_fraction: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Lay out the anomaly budget: about half as 2x2 clusters, rest singles.

    Clusters mimic targets that span a few pixels (each cluster is one
    material); sub-pixel mixing applies to singles only. Returns
    (pure_idx, pure_spec, subpix_idx, subpix_spec) with flat indices and
    per-pixel spectrum assignments; total count is exactly ``n_anom``.
    """
    n_subpix = int(round(n_anom * sub_pixel_fraction))
    n_blobs = int(round(0.5 * n_anom / 4.0))
    if h < 2 or w < 2:
        n_blobs = 0
    while n_blobs > 0 and n_blobs * 4 > n_anom - n_subpix:
        n_blobs -= 1

    occupied = np.zeros((h, w), dtype=bool)
    blob_cells: list[int] = []
    blob_spec: list[int] = []
    for b in range(n_blobs):
        for _ in range(_MAX_REDRAWS):
            r = int(rng.integers(0, h - 1))
            c = int(rng.integers(0, w - 1))
            cells = [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)]
            if not any(occupied[a, bb] for a, bb in cells):
                for a, bb in cells:
                    occupied[a, bb] = True
                blob_cells.extend(a * w + bb for a, bb in cells)
                blob_spec.extend([b % 2] * 4)
                break
        else:
            raise RuntimeError("no room to place anomaly clusters")

    n_singles = n_anom - len(blob_cells)
    free = np.flatnonzero(~occupied.reshape(-1))
    singles = rng.choice(free, size=n_singles, replace=False)
    single_spec = np.arange(n_singles) % 2
    subpix_idx = singles[:n_subpix]
    subpix_spec = single_spec[:n_subpix]
    pure_idx = np.concatenate([np.asarray(blob_cells, dtype=int), singles[n_subpix:]])
    pure_spec = np.concatenate([np.asarray(blob_spec, dtype=int), single_spec[n_subpix:]])
    return pure_idx.astype(int), pure_spec, subpix_idx.astype(int), subpix_spec


def generate_scene(cfg: SynthConfig) -> SceneData:
    """Build the full scene, including the planted-pixel bookkeeping."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    h, w, c = cfg.height, cfg.width, cfg.bands
    n = h * w

    n_anom = int(round(n * cfg.anomaly_ratio))
    if n_anom == 0:
        raise ValueError(
            f"anomaly_ratio {cfg.anomaly_ratio} rounds to zero anomalies on {h}x{w}"
        )

    endmembers = _draw_endmembers(rng, cfg.n_background_endmembers, c)
    # two rotated target spectra rather than one: no single coherent
    # direction can rival the background eigenstructure
    anom_dirs = []
    for _ in range(_MAX_REDRAWS):
        candidate = _anomaly_direction(rng, endmembers, cfg.min_sam_degrees)
        if all(spectral_angle_degrees(candidate, d) >= 15.0 for d in anom_dirs):
            anom_dirs.append(candidate)
        if len(anom_dirs) == 2:
            break
    else:
        raise RuntimeError("could not draw two distinct anomaly directions")

    # convex abundances over the endmembers: smooth regional structure plus
    # per-pixel roughness. Both live inside the endmember span, so the
    # spectral subspace stays low-rank while the raw scene has real
    # pixel-to-pixel variety.
    fields = []
    for _ in range(cfg.n_background_endmembers):
        g = gaussian_filter(rng.standard_normal((h, w)), sigma=max(2.0, min(h, w) / 8.0))
        std = g.std()
        smooth = g / std if std > 0 else g
        rough = rng.standard_normal((h, w))
        fields.append(smooth + 0.3 * rough)
    fields = np.stack(fields)
    fields = np.exp(3.0 * (fields - fields.max(axis=0)))
    abund = (fields / fields.sum(axis=0)).reshape(cfg.n_background_endmembers, n)
    pure_mix = abund.T @ endmembers  # (N, C)

    # smooth multiplicative illumination; easy for a purifier to absorb,
    # magnitude clutter for anything scoring the raw scene
    gain = gaussian_filter(rng.standard_normal((h, w)), sigma=max(2.0, min(h, w) / 8.0))
    gain_std = gain.std()
    if gain_std > 0:
        gain = gain / gain_std
    gain = np.clip(1.0 + 0.2 * gain, 0.6, 1.4).reshape(n)
    pure_mix = pure_mix * gain[:, None]

    noise = rng.normal(0.0, _BG_NOISE_STD, size=(n, c))
    cube = pure_mix + noise

    anom_scale = float(np.median(np.linalg.norm(pure_mix, axis=1)))
    anom_spectra = np.stack(anom_dirs) * anom_scale

    pure_idx, pure_spec, subpix_idx, subpix_spec = _place_anomalies(
        rng, h, w, n_anom, cfg.sub_pixel_fraction
    )
    anom_idx = np.concatenate([pure_idx, subpix_idx])

    def min_angle_to_background(s: np.ndarray) -> float:
        return min(spectral_angle_degrees(s, e) for e in endmembers)

    for i, spec in zip(subpix_idx, subpix_spec):
        alpha = rng.uniform(0.3, 0.7)
        cube[i] = alpha * anom_spectra[spec] * gain[i] + (1.0 - alpha) * pure_mix[
            i
        ] + rng.normal(0.0, _BG_NOISE_STD, size=c)

    for i, spec in zip(pure_idx, pure_spec):
        spectrum = anom_spectra[spec] * gain[i]
        for _ in range(_MAX_REDRAWS):
            candidate = spectrum + rng.normal(0.0, _BG_NOISE_STD, size=c)
            if min_angle_to_background(candidate) >= cfg.min_sam_degrees:
                cube[i] = candidate
                break
        else:
            raise RuntimeError(f"could not keep anomaly pixel {i} outside {cfg.min_sam_degrees} deg")

    bg_idx = np.setdiff1d(np.arange(n), anom_idx, assume_unique=False)
    n_shadow = int(round(bg_idx.size * cfg.shadow_fraction))
    shadow_idx = rng.choice(bg_idx, size=n_shadow, replace=False) if n_shadow else np.empty(0, int)
    for i in shadow_idx:
        factor = rng.uniform(0.3, 0.7)
        parent = pure_mix[i]
        parent_norm = np.linalg.norm(parent)
        for _ in range(_MAX_REDRAWS):
            candidate = factor * (parent + rng.normal(0.0, _SHADOW_NOISE_STD, size=c))
            if (
                spectral_angle_degrees(candidate, parent) < 1.0
                and np.linalg.norm(candidate) < parent_norm
            ):
                cube[i] = candidate
                break
        else:
            raise RuntimeError(f"could not keep shadow pixel {i} within 1 deg of its parent")

    mask = np.zeros(n, dtype=np.uint8)
    mask[anom_idx] = 1
    return SceneData(
        cube=cube.reshape(h, w, c).astype(np.float32),
        mask=mask.reshape(h, w),
        endmembers=endmembers,
        anomaly_spectra=anom_spectra,
        pure_anomaly_idx=np.sort(pure_idx),
        subpixel_idx=np.sort(subpix_idx),
        shadow_idx=np.sort(shadow_idx),
        pure_mixture=pure_mix,
    )


def synth_scene(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Generate (cube, mask) for the given config; deterministic in the seed."""
    scene = generate_scene(cfg)
    return scene.cube, scene.mask
