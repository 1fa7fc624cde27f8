"""Residual score modeling: a full-resolution windowed diffusion transformer.

Every pixel is one token (no patching, no downsampling); attention runs
inside non-overlapping spatial windows, with trailing partial windows kept
as-is rather than padded. Timestep conditioning uses adaptive layer-norm
modulation with zero-initialized gates, so a fresh network is exactly the
zero map end to end.

The spectral firewall subtracts lambda * D_raw from the attention logits,
where D_raw is the pairwise distance between L2-normalized raw spectra of
the input scene (equivalently sqrt(2 - 2 cos theta)). D_raw is built once
from the scene and never depends on the residual or on training state, and
lambda is a fixed constant, not a parameter.

Training is denoising score matching under a variance-exploding corruption
r_t = r + sigma(t) * eps with a geometric sigma schedule, weighted per
pixel by the purification weight map.
"""

from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import nnops
from .seeding import derive_seed

CHECKPOINT_MAGIC = b"R2VDDIT1"


@dataclass(frozen=True)
class DiffusionSchedule:
    """Geometric noise-scale table sigma(t) for t in [0, t_max - 1]."""

    t_max: int = 1000
    sigma_min: float = 0.01
    sigma_max: float = 1.0

    def sigma(self, t: int) -> float:
        if not 0 <= t <= self.t_max - 1:
            raise ValueError(f"t must be in [0, {self.t_max - 1}], got {t}")
        frac = t / (self.t_max - 1) if self.t_max > 1 else 0.0
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** frac


def window_partition(h: int, w: int, win: int = 8) -> list[np.ndarray]:
    """Non-overlapping tiling of an h x w grid into flat pixel-index windows.

    Trailing partial windows are kept as smaller windows, so every pixel
    lands in exactly one window.
    """
    if h < 1 or w < 1:
        raise ValueError(f"grid dims must be positive, got {h}x{w}")
    if win < 1:
        raise ValueError(f"window size must be positive, got {win}")
    flat = np.arange(h * w).reshape(h, w)
    windows = []
    for r0 in range(0, h, win):
        for c0 in range(0, w, win):
            windows.append(flat[r0 : r0 + win, c0 : c0 + win].ravel().copy())
    return windows


def psf_matrix(x_window: np.ndarray, xi: float = 1e-8) -> np.ndarray:
    """Pairwise distance between L2-normalized spectra of one window.

    Symmetric with a zero diagonal, entries in [0, 2]. Zero spectra are
    guarded by a norm floor of ``xi``.
    """
    x = np.asarray(x_window, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (L, C) spectra, got shape {x.shape}")
    norms = np.linalg.norm(x, axis=1)
    unit = x / np.maximum(norms, xi)[:, None]
    sq = np.einsum("lc,lc->l", unit, unit)
    gram = unit @ unit.T
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    d = np.sqrt(np.maximum(d2, 0.0))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


class PsfContext:
    """Per-window spectral distance matrices plus the penalty constant.

    Built once from the raw scene; reused unchanged through training and
    inference ("rigid anchor" contract). Windows of equal size are grouped
    so attention can run batched per group.
    """

    def __init__(self, x: np.ndarray, win: int = 8, lam: float = 5.0, xi: float = 1e-8):
        if lam < 0.0:
            raise ValueError(f"penalty constant must be >= 0, got {lam}")
        x = np.asarray(x, dtype=np.float64)
        h, w, _ = x.shape
        self.height, self.width, self.win = h, w, win
        self.lam = float(lam)
        pixels = x.reshape(h * w, -1)
        self.windows = window_partition(h, w, win)
        self.d_raw = [psf_matrix(pixels[idx], xi) for idx in self.windows]
        by_size: dict[int, list[int]] = {}
        for i, idx in enumerate(self.windows):
            by_size.setdefault(len(idx), []).append(i)
        self._groups = [
            (
                torch.from_numpy(np.stack([self.windows[i] for i in members])).long(),
                torch.from_numpy(np.stack([self.d_raw[i] for i in members])),
            )
            for _, members in sorted(by_size.items())
        ]

    def groups(self, dtype: torch.dtype) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """(indices (n, L), distances (n, L, L)) pairs, distances in ``dtype``."""
        return [(idx, d.to(dtype)) for idx, d in self._groups]


def psf_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    d_raw: torch.Tensor,
    lam: float,
    n_heads: int,
    return_weights: bool = False,
):
    """Scaled dot-product attention with the additive spectral penalty.

    q, k, v are (..., L, n_heads * head_dim); d_raw is (..., L, L), shared
    across heads. lam = 0 reproduces standard attention exactly (the zero
    penalty is subtracted through the same code path). With
    ``return_weights`` the per-head attention matrices (rows stochastic)
    are returned alongside the output.
    """
    *lead, length, dim = q.shape
    if dim % n_heads != 0:
        raise ValueError(f"model dim {dim} not divisible by {n_heads} heads")
    head_dim = dim // n_heads
    if d_raw.shape[-2:] != (length, length):
        raise ValueError(f"distance matrix {tuple(d_raw.shape)} does not match L={length}")

    def split(t: torch.Tensor) -> torch.Tensor:
        return t.reshape(*lead, length, n_heads, head_dim).transpose(-2, -3)

    logits = split(q) @ split(k).transpose(-1, -2) / math.sqrt(head_dim)
    logits = logits - lam * d_raw.unsqueeze(-3)
    weights = nnops.softmax_last_dim(logits)
    out = (weights @ split(v)).transpose(-2, -3).reshape(*lead, length, dim)
    if return_weights:
        return out, weights
    return out


def _linear_param(dout: int, din: int, generator: torch.Generator):
    bound = 1.0 / math.sqrt(din)
    w = torch.empty(dout, din).uniform_(-bound, bound, generator=generator)
    b = torch.empty(dout).uniform_(-bound, bound, generator=generator)
    return nn.Parameter(w), nn.Parameter(b)


class DitBlock(nn.Module):
    """Windowed attention + MLP with adaptive layer-norm conditioning.

    The modulation projection is zero-initialized, so scale, shift and both
    residual gates start at zero and the block begins as the identity.
    """

    def __init__(self, dim: int, n_heads: int, generator: torch.Generator):
        super().__init__()
        self.dim = dim
        self.n_heads = n_heads
        self.w_qkv, self.b_qkv = _linear_param(3 * dim, dim, generator)
        self.w_proj, self.b_proj = _linear_param(dim, dim, generator)
        self.w_mlp1, self.b_mlp1 = _linear_param(4 * dim, dim, generator)
        self.w_mlp2, self.b_mlp2 = _linear_param(dim, 4 * dim, generator)
        self.w_mod = nn.Parameter(torch.zeros(6 * dim, dim))
        self.b_mod = nn.Parameter(torch.zeros(6 * dim))

    def forward(self, z: torch.Tensor, t_emb: torch.Tensor, psf: PsfContext) -> torch.Tensor:
        mod = nnops.linear(nnops.silu(t_emb), self.w_mod, self.b_mod)
        gamma1, beta1, alpha1, gamma2, beta2, alpha2 = mod.chunk(6, dim=-1)

        normed = nnops.layer_norm(z) * (1.0 + gamma1) + beta1
        attn = torch.empty_like(z)
        for idx, d_raw in psf.groups(z.dtype):
            flat = idx.reshape(-1)
            tokens = normed[flat].reshape(idx.shape[0], idx.shape[1], self.dim)
            q, k, v = nnops.linear(tokens, self.w_qkv, self.b_qkv).chunk(3, dim=-1)
            ctx = psf_attention(q, k, v, d_raw, psf.lam, self.n_heads)
            ctx = nnops.linear(ctx, self.w_proj, self.b_proj)
            attn[flat] = ctx.reshape(-1, self.dim)
        z = z + alpha1 * attn

        normed = nnops.layer_norm(z) * (1.0 + gamma2) + beta2
        hidden = nnops.silu(nnops.linear(normed, self.w_mlp1, self.b_mlp1))
        z = z + alpha2 * nnops.linear(hidden, self.w_mlp2, self.b_mlp2)
        return z


class DitModel(nn.Module):
    """Noise-prediction transformer over per-pixel tokens.

    One token per pixel of the (height x width) grid; the output head is
    zero-initialized, so a freshly built model predicts the zero cube.
    """

    def __init__(
        self,
        bands: int,
        height: int,
        width: int,
        embed_dim: int = 128,
        depth: int = 4,
        win: int = 8,
        n_heads: int = 4,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        self.bands = bands
        self.height = height
        self.width = width
        self.embed_dim = embed_dim
        self.depth = depth
        self.win = win
        self.n_heads = n_heads
        self.frozen = False

        self.w_embed, self.b_embed = _linear_param(embed_dim, bands, generator)
        self.register_buffer("pos", nnops.pos_embedding_2d(height, width, embed_dim))
        self.w_t1, self.b_t1 = _linear_param(embed_dim, embed_dim, generator)
        self.w_t2, self.b_t2 = _linear_param(embed_dim, embed_dim, generator)
        self.blocks = nn.ModuleList(
            [DitBlock(embed_dim, n_heads, generator) for _ in range(depth)]
        )
        self.w_head = nn.Parameter(torch.zeros(bands, embed_dim))
        self.b_head = nn.Parameter(torch.zeros(bands))

    def config(self) -> dict:
        return {
            "bands": self.bands,
            "height": self.height,
            "width": self.width,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "win": self.win,
            "n_heads": self.n_heads,
        }

    def forward(self, r_t: torch.Tensor, t: int, psf: PsfContext) -> torch.Tensor:
        if r_t.shape != (self.height, self.width, self.bands):
            raise ValueError(
                f"expected ({self.height}, {self.width}, {self.bands}), got {tuple(r_t.shape)}"
            )
        if (psf.height, psf.width, psf.win) != (self.height, self.width, self.win):
            raise ValueError("firewall context does not match the model's window tiling")
        tokens = r_t.reshape(-1, self.bands)
        z = nnops.linear(tokens, self.w_embed, self.b_embed) + self.pos.to(r_t.dtype)
        t_emb = nnops.sinusoidal_embedding(float(t), self.embed_dim, dtype=r_t.dtype)
        t_emb = nnops.linear(nnops.silu(nnops.linear(t_emb, self.w_t1, self.b_t1)), self.w_t2, self.b_t2)
        for block in self.blocks:
            z = block(z, t_emb, psf)
        out = nnops.linear(nnops.layer_norm(z), self.w_head, self.b_head)
        return out.reshape(self.height, self.width, self.bands)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True


def dsm_loss(eps_hat: torch.Tensor, eps: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """(1/HW) * sum_i w_i * ||eps_hat_i - eps_i||^2 over the spectral axis."""
    if eps_hat.shape != eps.shape:
        raise ValueError(f"shapes disagree: {tuple(eps_hat.shape)} vs {tuple(eps.shape)}")
    if w.shape != eps.shape[:2]:
        raise ValueError(f"weight map {tuple(w.shape)} does not match {tuple(eps.shape)}")
    per_pixel = ((eps_hat - eps) ** 2).sum(dim=-1)
    return (w * per_pixel).sum() / w.numel()


def train_rsm(
    r: np.ndarray,
    w: np.ndarray,
    x: np.ndarray,
    sched: DiffusionSchedule = DiffusionSchedule(),
    epochs: int = 1000,
    seed: int = 0,
    lam: float = 5.0,
    win: int = 8,
    depth: int = 4,
    embed_dim: int = 128,
    n_heads: int = 4,
    lr: float = 2e-4,
    weight_decay: float = 1e-5,
    psf: PsfContext | None = None,
) -> DitModel:
    """Train the score model on the residual field and return it frozen.

    Each epoch draws one timestep and one noise cube, corrupts the field as
    r + sigma(t) * eps, and takes a single AdamW step on the weighted noise
    prediction loss. Deterministic in the seed.
    """
    r = np.asarray(r, dtype=np.float32)
    h, width, c = r.shape
    if np.asarray(x).shape != r.shape:
        raise ValueError("scene and residual shapes disagree")
    w = np.asarray(w, dtype=np.float32)
    if w.shape != (h, width):
        raise ValueError(f"weight map {w.shape} does not match field {r.shape}")
    if psf is None:
        psf = PsfContext(x, win=win, lam=lam)

    gen = torch.Generator().manual_seed(derive_seed(seed, "dit-init"))
    model = DitModel(c, h, width, embed_dim, depth, win, n_heads, generator=gen)
    params = list(model.parameters())
    opt = nnops.init_optimizer(params, nnops.ADAMW, lr=lr, weight_decay=weight_decay)
    noise_gen = torch.Generator().manual_seed(derive_seed(seed, "dit-noise"))

    r_t = torch.from_numpy(r)
    w_t = torch.from_numpy(w)
    for epoch in range(epochs):
        t = int(torch.randint(0, sched.t_max, (1,), generator=noise_gen))
        eps = torch.randn(h, width, c, generator=noise_gen)
        corrupted = r_t + sched.sigma(t) * eps
        eps_hat = model(corrupted, t, psf)
        loss = dsm_loss(eps_hat, eps, w_t)
        loss_val = float(loss.detach())
        if not math.isfinite(loss_val):
            raise RuntimeError(f"score model diverged at epoch {epoch} (loss={loss_val})")
        grads = torch.autograd.grad(loss, params)
        nnops.optimizer_step(opt, params, grads)

    model.freeze()
    return model


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: DitModel, path) -> None:
    """Write named float32 parameter/buffer blocks; round-trips bit-exactly."""
    state = model.state_dict()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            arr = tensor.detach().cpu().to(torch.float32).numpy()
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4", copy=False).tobytes())


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    """Read named parameter blocks back into float32 arrays."""
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    offset = len(CHECKPOINT_MAGIC)

    def take(count: int) -> bytes:
        nonlocal offset
        if offset + count > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = data[offset : offset + count]
        offset += count
        return chunk

    (n_blocks,) = struct.unpack("<I", take(4))
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(n_blocks):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        out[name] = arr.copy()
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after last block")
    return out


def load_model_state(model: DitModel, arrays: "OrderedDict[str, np.ndarray]") -> None:
    """Install checkpoint arrays into a model built with the same config."""
    state = model.state_dict()
    if set(state) != set(arrays):
        missing = set(state) ^ set(arrays)
        raise ValueError(f"checkpoint does not match model (mismatched blocks: {sorted(missing)})")
    with torch.no_grad():
        for name, tensor in state.items():
            arr = arrays[name]
            if tuple(tensor.shape) != tuple(arr.shape):
                raise ValueError(f"block {name}: shape {arr.shape} != {tuple(tensor.shape)}")
            tensor.copy_(torch.from_numpy(np.ascontiguousarray(arr)))
