"""Guided manifold purification via a full-resolution autoencoder.

The network never downsamples: every layer preserves the H x W grid so
single-pixel targets cannot be smoothed out of the residual. Context is
gathered instead by multi-branch depthwise convolutions (square, dilated,
and the two 1x7 / 7x1 asymmetric kernels), fused pointwise, with pure 1x1
residual blocks deepening the spectral nonlinearity.

Training minimizes a per-pixel weighted reconstruction loss. The weight
map starts all-ones (warm-up), switches to the coarse detector prior, and
is then recomputed periodically from the autoencoder's own reconstruction
errors with a strict zero-floor curve, so suspect pixels stop contributing
gradient entirely and the network cannot memorize them as background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import nnops
from .detectors import STRICT_DEFAULTS, WeightCurveParams, weight_curve
from .seeding import derive_seed

HIDDEN_CHANNELS = 64
BODY_PAIRS = 2


def _uniform_param(shape, bound: float, generator: torch.Generator) -> nn.Parameter:
    t = torch.empty(*shape, dtype=torch.float32)
    t.uniform_(-bound, bound, generator=generator)
    return nn.Parameter(t)


def _conv_param(cout: int, cin_per_group: int, kh: int, kw: int, generator: torch.Generator):
    bound = 1.0 / math.sqrt(cin_per_group * kh * kw)
    weight = _uniform_param((cout, cin_per_group, kh, kw), bound, generator)
    bias = _uniform_param((cout,), bound, generator)
    return weight, bias


class OmniContextBlock(nn.Module):
    """Four parallel depthwise context branches fused by a 1x1 projection.

    Branches: 3x3, dilated 3x3 (d=2), 1x7 and 7x1, all depthwise. Their
    concatenation goes through a pointwise conv, batch norm and SiLU, then
    adds back onto the input. A zero pointwise conv makes the block an
    exact identity.
    """

    def __init__(self, channels: int, generator: torch.Generator):
        super().__init__()
        self.channels = channels
        self.w_sq, self.b_sq = _conv_param(channels, 1, 3, 3, generator)
        self.w_dil, self.b_dil = _conv_param(channels, 1, 3, 3, generator)
        self.w_row, self.b_row = _conv_param(channels, 1, 1, 7, generator)
        self.w_col, self.b_col = _conv_param(channels, 1, 7, 1, generator)
        self.w_fuse, self.b_fuse = _conv_param(channels, 4 * channels, 1, 1, generator)
        self.bn_gamma = nn.Parameter(torch.ones(channels))
        self.bn_beta = nn.Parameter(torch.zeros(channels))
        self.register_buffer("bn_mean", torch.zeros(channels))
        self.register_buffer("bn_var", torch.ones(channels))

    def _pre_norm(self, f: torch.Tensor) -> torch.Tensor:
        c = self.channels
        if f.shape[1] != c:
            raise ValueError(f"expected {c} channels, got {f.shape[1]}")
        multi = torch.cat(
            [
                nnops.conv2d(f, self.w_sq, self.b_sq, groups=c),
                nnops.conv2d(f, self.w_dil, self.b_dil, dilation=2, groups=c),
                nnops.conv2d(f, self.w_row, self.b_row, groups=c),
                nnops.conv2d(f, self.w_col, self.b_col, groups=c),
            ],
            dim=1,
        )
        return nnops.conv2d(multi, self.w_fuse, self.b_fuse)

    def refresh_norm_stats(self, f: torch.Tensor) -> None:
        """Pin running stats to the exact biased moments of this input.

        Eval mode then reproduces train-mode normalization bit-for-bit on
        the training scene (running stats store the unbiased variance,
        which otherwise leaves a systematic scale gap).
        """
        with torch.no_grad():
            pre = self._pre_norm(f)
            self.bn_mean.copy_(pre.mean(dim=(0, 2, 3)))
            self.bn_var.copy_(pre.var(dim=(0, 2, 3), unbiased=False))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        fused = nnops.batch_norm_2d(
            self._pre_norm(f), self.bn_gamma, self.bn_beta, self.bn_mean, self.bn_var, self.training
        )
        out = f + nnops.silu(fused)
        assert out.shape[-2:] == f.shape[-2:]
        return out


class SpectralResidualBlock(nn.Module):
    """1x1 conv -> SiLU -> 1x1 conv with a residual add; no spatial mixing."""

    def __init__(self, channels: int, generator: torch.Generator):
        super().__init__()
        self.w1, self.b1 = _conv_param(channels, channels, 1, 1, generator)
        self.w2, self.b2 = _conv_param(channels, channels, 1, 1, generator)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        out = f + nnops.conv2d(nnops.silu(nnops.conv2d(f, self.w1, self.b1)), self.w2, self.b2)
        assert out.shape[-2:] == f.shape[-2:]
        return out


class OcaNet(nn.Module):
    """Full-resolution autoencoder: 1x1 stem, context/spectral body, 1x1 head."""

    def __init__(
        self,
        bands: int,
        channels: int = HIDDEN_CHANNELS,
        body_pairs: int = BODY_PAIRS,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        self.bands = bands
        self.w_stem, self.b_stem = _conv_param(channels, bands, 1, 1, generator)
        body: list[nn.Module] = []
        for _ in range(body_pairs):
            body.append(OmniContextBlock(channels, generator))
            body.append(SpectralResidualBlock(channels, generator))
        self.body = nn.ModuleList(body)
        self.w_head, self.b_head = _conv_param(bands, channels, 1, 1, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Reconstruct an (H, W, C) cube tensor; spatial dims are preserved."""
        if x.ndim != 3 or x.shape[-1] != self.bands:
            raise ValueError(f"expected (H, W, {self.bands}), got {tuple(x.shape)}")
        spatial = x.shape[:2]
        f = x.permute(2, 0, 1).unsqueeze(0)  # (1, C, H, W)
        f = nnops.conv2d(f, self.w_stem, self.b_stem)
        assert f.shape[-2:] == spatial
        for block in self.body:
            f = block(f)
            assert f.shape[-2:] == spatial
        f = nnops.conv2d(f, self.w_head, self.b_head)
        assert f.shape[-2:] == spatial
        return f.squeeze(0).permute(1, 2, 0)

    def calibrate_norm_stats(self, x: torch.Tensor) -> None:
        """Set every norm layer's running stats to the exact moments it sees
        on this cube, so the eval-mode residual is free of the train/eval
        normalization gap."""
        with torch.no_grad():
            f = nnops.conv2d(x.permute(2, 0, 1).unsqueeze(0), self.w_stem, self.b_stem)
            for block in self.body:
                if isinstance(block, OmniContextBlock):
                    block.refresh_norm_stats(f)
                was_training = block.training
                block.eval()
                f = block(f)
                block.train(was_training)


def weighted_recon_loss(x: torch.Tensor, xhat: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """(1/N) * sum_i w_i * ||x_i - xhat_i||^2 over the spectral axis.

    A zero weight removes pixel i from both the value and the gradient.
    """
    if x.shape != xhat.shape:
        raise ValueError(f"cube shapes disagree: {tuple(x.shape)} vs {tuple(xhat.shape)}")
    if w.shape != x.shape[:2]:
        raise ValueError(f"weight map {tuple(w.shape)} does not match cube {tuple(x.shape)}")
    per_pixel = ((x - xhat) ** 2).sum(dim=-1)
    return (w * per_pixel).sum() / w.numel()


def update_weights(
    errors: np.ndarray, eta: float, params: WeightCurveParams = STRICT_DEFAULTS
) -> np.ndarray:
    """Strict self-update: normalize errors by their (1 - eta) quantile and
    truncate to exactly zero at and above the threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    if np.any(errors < 0):
        raise ValueError("reconstruction errors must be non-negative")
    if not 0.0 < eta < 0.5:
        raise ValueError(f"eta must be in (0, 0.5), got {eta}")
    tau = float(np.quantile(errors.ravel(), 1.0 - eta))
    if tau <= 0.0:
        raise ValueError("error quantile is zero; nothing to normalize by")
    return weight_curve(errors / tau, params)


@dataclass(frozen=True)
class GmpSchedule:
    total_epochs: int = 100
    warm_epochs: int = 10
    update_every: int = 10
    lr: float = 1e-3
    eta: float = 0.02
    curve: WeightCurveParams = STRICT_DEFAULTS

    def validate(self) -> None:
        if self.warm_epochs >= self.total_epochs:
            raise ValueError("warm_epochs must be < total_epochs")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        if not 0.0 < self.eta < 0.5:
            raise ValueError(f"eta must be in (0, 0.5), got {self.eta}")


@dataclass
class GmpResult:
    weight_map: np.ndarray        # (H, W) converged weights, last computed
    residual: np.ndarray          # (H, W, C) float32, input minus reconstruction
    model: OcaNet
    trace: list = field(default_factory=list)  # (epoch, loss, regime, weight_mean)


def _eval_errors(model: OcaNet, x: torch.Tensor) -> np.ndarray:
    model.calibrate_norm_stats(x)
    model.eval()
    with torch.no_grad():
        xhat = model(x)
        err = ((x - xhat) ** 2).sum(dim=-1)
    model.train()
    return err.numpy().astype(np.float64)


def train_gmp(
    x: np.ndarray, w_coa: np.ndarray, sched: GmpSchedule = GmpSchedule(), seed: int = 0
) -> GmpResult:
    """Train the purification autoencoder and return weights, residual, model.

    Weight regimes per epoch e (1-based): all-ones while e <= warm_epochs,
    the coarse prior at e = warm_epochs + 1, then a strict self-update every
    ``update_every`` epochs from the model's own eval-mode errors. Training
    is full batch (the cube is the batch) and deterministic in the seed.
    """
    sched.validate()
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ValueError(f"expected (H, W, C) cube, got shape {x.shape}")
    h, w, _ = x.shape
    w_coa = np.asarray(w_coa, dtype=np.float64)
    if w_coa.shape != (h, w):
        raise ValueError(f"coarse weights {w_coa.shape} do not match cube {x.shape}")

    x_t = torch.from_numpy(x)
    gen = torch.Generator().manual_seed(derive_seed(seed, "oca-init"))
    model = OcaNet(x.shape[2], generator=gen)
    params = list(model.parameters())
    opt = nnops.init_optimizer(params, nnops.ADAM, lr=sched.lr)

    weights_np = np.ones((h, w), dtype=np.float64)
    weights_t = torch.from_numpy(weights_np.astype(np.float32))
    regime = "warmup"
    trace: list[tuple[int, float, str, float]] = []

    for epoch in range(1, sched.total_epochs + 1):
        if epoch <= sched.warm_epochs:
            regime = "warmup"
        elif epoch == sched.warm_epochs + 1:
            weights_np = w_coa.copy()
            weights_t = torch.from_numpy(weights_np.astype(np.float32))
            regime = "coarse"
        elif (epoch - sched.warm_epochs - 1) % sched.update_every == 0:
            weights_np = update_weights(_eval_errors(model, x_t), sched.eta, sched.curve)
            weights_t = torch.from_numpy(weights_np.astype(np.float32))
            regime = "self"

        model.train()
        xhat = model(x_t)
        loss = weighted_recon_loss(x_t, xhat, weights_t)
        loss_val = float(loss.detach())
        if not math.isfinite(loss_val):
            raise RuntimeError(
                f"autoencoder training diverged at epoch {epoch} (loss={loss_val})"
            )
        grads = torch.autograd.grad(loss, params)
        nnops.optimizer_step(opt, params, grads)
        trace.append((epoch, loss_val, regime, float(weights_np.mean())))

    model.calibrate_norm_stats(x_t)
    model.eval()
    with torch.no_grad():
        residual = (x_t - model(x_t)).numpy().astype(np.float32)
    return GmpResult(weight_map=weights_np, residual=residual, model=model, trace=trace)
