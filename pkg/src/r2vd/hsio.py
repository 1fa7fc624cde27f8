"""Cube and mask file I/O plus global normalization.

Cubes use a minimal container: an ASCII header line ``HSC1 <H> <W> <C>\\n``
followed by H*W*C little-endian float32 values in band-sequential order
(all of band 0, then band 1, ...). Masks are binary PGM (P5, maxval 255);
any value > 0 reads back as 1.
"""

from __future__ import annotations

import numpy as np

CUBE_MAGIC = "HSC1"


def validate_cube(cube: np.ndarray, min_bands: int = 1) -> np.ndarray:
    """Check that ``cube`` is a finite H x W x C float array.

    Detector inputs need C >= 2; single-band containers (weight maps,
    anomaly maps) pass ``min_bands=1``.
    """
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ValueError(f"cube must be 3-d (H, W, C), got shape {cube.shape}")
    if cube.shape[2] < min_bands:
        raise ValueError(f"cube needs at least {min_bands} bands, got {cube.shape[2]}")
    if not np.all(np.isfinite(cube)):
        raise ValueError("cube contains non-finite values")
    return cube


def save_cube(cube: np.ndarray, path) -> None:
    """Write a cube to ``path`` in the HSC1 container."""
    cube = validate_cube(cube).astype("<f4", copy=False)
    h, w, c = cube.shape
    # band-sequential: one full H x W plane per band
    payload = np.ascontiguousarray(cube.transpose(2, 0, 1))
    with open(path, "wb") as f:
        f.write(f"{CUBE_MAGIC} {h} {w} {c}\n".encode("ascii"))
        f.write(payload.tobytes())


def load_cube(path) -> np.ndarray:
    """Read an HSC1 cube, returning a float32 array of shape (H, W, C)."""
    with open(path, "rb") as f:
        header = f.readline(256)
        if not header.endswith(b"\n"):
            raise ValueError(f"{path}: missing or overlong header line")
        parts = header.decode("ascii", errors="replace").split()
        if len(parts) != 4 or parts[0] != CUBE_MAGIC:
            raise ValueError(f"{path}: bad header {header!r}, expected 'HSC1 H W C'")
        try:
            h, w, c = (int(p) for p in parts[1:])
        except ValueError as e:
            raise ValueError(f"{path}: non-integer dims in header {header!r}") from e
        if h <= 0 or w <= 0 or c <= 0:
            raise ValueError(f"{path}: non-positive dims {h}x{w}x{c}")
        payload = f.read()
    expected = h * w * c * 4
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for {h}x{w}x{c}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).transpose(1, 2, 0)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: payload contains non-finite values")
    return np.ascontiguousarray(data)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a binary H x W mask as PGM P5 with {0, 255} pixel values."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {mask.shape}")
    pixels = np.where(mask > 0, 255, 0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def save_pgm_gray(values: np.ndarray, path) -> None:
    """Write values in [0, 1] as an 8-bit PGM via linear quantization."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected 2-d field, got shape {values.shape}")
    pixels = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def _read_pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Pull ``count`` whitespace-separated tokens off a PGM header, skipping
    '#' comment lines. Returns the tokens and the offset one past the single
    whitespace byte that terminates the header."""
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:i])
    if i >= n:
        raise ValueError("truncated PGM header")
    return tokens, i + 1


def load_mask(path) -> np.ndarray:
    """Read a PGM P5 mask; any pixel > 0 maps to 1. Returns uint8 (H, W)."""
    with open(path, "rb") as f:
        data = f.read()
    tokens, offset = _read_pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise ValueError(f"{path}: bad PGM header") from e
    if w <= 0 or h <= 0 or not (0 < maxval <= 255):
        raise ValueError(f"{path}: unsupported PGM geometry {w}x{h} maxval {maxval}")
    payload = data[offset:]
    if len(payload) != w * h:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {w * h}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return (pixels > 0).astype(np.uint8)


def normalize_cube(cube: np.ndarray) -> np.ndarray:
    """Affinely map the whole cube onto [0, 1]; a constant cube maps to zeros.

    The map is global (single min/max over all bands) so that relative band
    magnitudes, which the spectral distance penalty depends on, survive.
    """
    cube = validate_cube(cube)
    lo = float(cube.min())
    hi = float(cube.max())
    if hi == lo:
        return np.zeros_like(cube, dtype=np.float32)
    out = (cube.astype(np.float64) - lo) / (hi - lo)
    return out.astype(np.float32)
