"""Differentiable primitives shared by the two networks.

Thin, contract-enforcing wrappers over torch ops: convolutions restricted
to the kernel shapes the autoencoder actually uses (always padded back to
the input resolution), batch/layer norm, SiLU, bias-augmented softmax,
sinusoidal embeddings, and functional Adam/AdamW steps. A central-difference
gradient checker validates every primitive and whole blocks in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

# (kh, kw, dilation) triples the networks are allowed to use
_ALLOWED_KERNELS = {(3, 3, 1), (3, 3, 2), (1, 7, 1), (7, 1, 1), (1, 1, 1)}


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    dilation: int = 1,
    groups: int = 1,
) -> torch.Tensor:
    """2-d convolution with zero padding chosen to preserve H x W.

    Kernel shape must be one of 3x3, dilated 3x3 (d=2), 1x7, 7x1 or 1x1,
    and groups must be 1 or depthwise (= input channels).
    """
    kh, kw = weight.shape[-2:]
    if (kh, kw, dilation) not in _ALLOWED_KERNELS:
        raise ValueError(f"unsupported kernel {kh}x{kw} with dilation {dilation}")
    cin = x.shape[1]
    if groups not in (1, cin):
        raise ValueError(f"groups must be 1 or depthwise ({cin}), got {groups}")
    pad = (dilation * (kh - 1) // 2, dilation * (kw - 1) // 2)
    return torch.nn.functional.conv2d(
        x, weight, bias, stride=1, padding=pad, dilation=dilation, groups=groups
    )


def batch_norm_2d(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Per-channel batch norm over (N, C, H, W); updates running stats in train mode."""
    return torch.nn.functional.batch_norm(
        x, running_mean, running_var, gamma, beta, training=training, momentum=momentum, eps=eps
    )


def layer_norm(
    x: torch.Tensor,
    gamma: torch.Tensor | None = None,
    beta: torch.Tensor | None = None,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Layer norm over the last dimension; gamma/beta optional."""
    return torch.nn.functional.layer_norm(x, (x.shape[-1],), gamma, beta, eps)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    return torch.nn.functional.linear(x, weight, bias)


def silu(x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.silu(x)


def softmax_last_dim(x: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax over the last dimension of ``x + bias`` (bias broadcastable)."""
    if bias is not None:
        x = x + bias
    return torch.softmax(x, dim=-1)


def sinusoidal_embedding(t, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Sinusoidal embedding of scalar positions: [sin half | cos half].

    ``t`` may be a python number or a 1-d tensor/array; output is (dim,) or
    (len(t), dim). t = 0 maps to zeros followed by ones.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    scalar = np.isscalar(t) or (torch.is_tensor(t) and t.ndim == 0)
    t_vec = torch.as_tensor(t, dtype=dtype).reshape(-1)
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype) / half
    )
    args = t_vec[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb[0] if scalar else emb


def pos_embedding_2d(h: int, w: int, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed 2-d sinusoidal position table of shape (h * w, dim), row-major."""
    if dim % 4 != 0:
        raise ValueError(f"2-d embedding dim must be divisible by 4, got {dim}")
    rows = torch.arange(h, dtype=dtype).repeat_interleave(w)
    cols = torch.arange(w, dtype=dtype).repeat(h)
    return torch.cat(
        [sinusoidal_embedding(rows, dim // 2, dtype), sinusoidal_embedding(cols, dim // 2, dtype)],
        dim=-1,
    )


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

ADAM = "adam"
ADAMW = "adamw"


@dataclass
class OptimizerState:
    """Moment buffers and hyperparameters for a functional Adam/AdamW step."""

    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


def init_optimizer(
    params: Sequence[torch.Tensor],
    kind: str = ADAM,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptimizerState:
    if kind not in (ADAM, ADAMW):
        raise ValueError(f"unknown optimizer kind {kind!r}")
    return OptimizerState(
        kind=kind,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
        exp_avg=[torch.zeros_like(p) for p in params],
        exp_avg_sq=[torch.zeros_like(p) for p in params],
    )


@torch.no_grad()
def optimizer_step(
    state: OptimizerState,
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor | None],
) -> None:
    """One bias-corrected Adam step, updating ``params`` in place.

    AdamW applies decoupled decay (theta *= 1 - lr * wd) before the moment
    update; plain Adam folds weight decay into the gradient.
    """
    if len(params) != len(state.exp_avg):
        raise ValueError("parameter list does not match optimizer state")
    state.step_count += 1
    bc1 = 1.0 - state.beta1**state.step_count
    bc2 = 1.0 - state.beta2**state.step_count
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if g is None:
            continue
        if state.weight_decay != 0.0:
            if state.kind == ADAMW:
                p.mul_(1.0 - state.lr * state.weight_decay)
            else:
                g = g + state.weight_decay * p
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / bc2).sqrt_().add_(state.eps)
        p.addcdiv_(m / bc1, denom, value=-state.lr)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    wrt: Iterable[torch.Tensor],
    h: float = 1e-4,
    max_entries: int = 0,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central differences.

    ``loss_fn`` must be a deterministic closure returning a scalar; ``wrt``
    are the float64 tensors to differentiate. ``max_entries`` > 0 limits the
    number of coordinates probed per tensor (seeded subsample). The error is
    max |analytic - numeric| over probed coordinates, normalized by the
    largest gradient magnitude seen.
    """
    wrt = [p for p in wrt]
    for p in wrt:
        if p.dtype != torch.float64:
            raise ValueError("gradient_check requires float64 tensors")
        if not p.requires_grad:
            raise ValueError("all checked tensors must require grad")
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, wrt, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    scale = 0.0
    with torch.no_grad():
        for p, g in zip(wrt, analytic):
            grad = torch.zeros_like(p) if g is None else g
            flat_p = p.reshape(-1)
            flat_g = grad.reshape(-1)
            numel = flat_p.numel()
            if max_entries and numel > max_entries:
                coords = rng.choice(numel, size=max_entries, replace=False)
            else:
                coords = range(numel)
            for i in coords:
                orig = flat_p[i].item()
                flat_p[i] = orig + h
                f_plus = float(loss_fn())
                flat_p[i] = orig - h
                f_minus = float(loss_fn())
                flat_p[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                ana = float(flat_g[i])
                worst = max(worst, abs(ana - numeric))
                scale = max(scale, abs(ana), abs(numeric))
    return worst / max(scale, 1e-12)
