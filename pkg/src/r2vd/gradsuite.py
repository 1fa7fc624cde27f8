"""Central-difference validation of every differentiable primitive.

Each check compares autograd against float64 central differences through
``nnops.gradient_check`` and reports the max relative error against a
per-op tolerance: 1e-6 for linear, 1e-5 for convolutions (both exactly
quadratic, so only roundoff), 1e-3 for the nonlinear ops and for whole
single-block composites of the two networks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import torch

from . import nnops
from .autoencoder import OcaNet, OmniContextBlock, SpectralResidualBlock, weighted_recon_loss
from .diffusion import DitModel, PsfContext, dsm_loss


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < self.tol


def _rand(gen: torch.Generator, *shape) -> torch.Tensor:
    t = torch.empty(*shape, dtype=torch.float64)
    t.uniform_(-1.0, 1.0, generator=gen)
    return t.requires_grad_(True)


def _projection(gen: torch.Generator, *shape) -> torch.Tensor:
    # fixed random projection turns any op output into a scalar loss with
    # nonzero gradient everywhere
    p = torch.empty(*shape, dtype=torch.float64)
    p.uniform_(-1.0, 1.0, generator=gen)
    return p


def _randomize_params(module: torch.nn.Module, gen: torch.Generator) -> None:
    # zero-initialized gates/heads would hide wiring bugs from the check
    with torch.no_grad():
        for p in module.parameters():
            p.uniform_(-0.3, 0.3, generator=gen)


def run_gradient_suite(max_entries: int = 12, seed: int = 0) -> list[CheckResult]:
    """Run all primitive and composite checks; returns per-check results."""
    results: list[CheckResult] = []

    def check(name, loss_fn, wrt, tol, entries=0):
        start = time.perf_counter()
        err = nnops.gradient_check(loss_fn, wrt, max_entries=entries, seed=seed)
        results.append(CheckResult(name, err, tol, time.perf_counter() - start))

    gen = torch.Generator().manual_seed(seed)

    x = _rand(gen, 5, 7)
    w = _rand(gen, 4, 7)
    b = _rand(gen, 4)
    proj = _projection(gen, 5, 4)
    check("linear", lambda: (nnops.linear(x, w, b) * proj).sum(), [x, w, b], 1e-6)

    conv_cases = [
        ("conv 3x3", (3, 4, 3, 3), 1, 1),
        ("conv 3x3 dilated", (3, 4, 3, 3), 2, 1),
        ("conv 1x7", (3, 4, 1, 7), 1, 1),
        ("conv 7x1", (3, 4, 7, 1), 1, 1),
        ("conv 1x1", (3, 4, 1, 1), 1, 1),
        ("conv 3x3 depthwise", (4, 1, 3, 3), 1, 4),
    ]
    for name, wshape, dil, groups in conv_cases:
        xc = _rand(gen, 1, 4, 6, 6)
        wc = _rand(gen, *wshape)
        bc = _rand(gen, wshape[0])
        pc = _projection(gen, 1, wshape[0], 6, 6)

        def conv_loss(xc=xc, wc=wc, bc=bc, dil=dil, groups=groups, pc=pc):
            return (nnops.conv2d(xc, wc, bc, dilation=dil, groups=groups) * pc).sum()

        check(name, conv_loss, [xc, wc, bc], 1e-5)

    xb = _rand(gen, 2, 3, 4, 4)
    gamma = _rand(gen, 3)
    beta = _rand(gen, 3)
    pb = _projection(gen, 2, 3, 4, 4)
    check(
        "batch_norm_2d",
        lambda: (
            nnops.batch_norm_2d(
                xb, gamma, beta, torch.zeros(3, dtype=torch.float64),
                torch.ones(3, dtype=torch.float64), True
            )
            * pb
        ).sum(),
        [xb, gamma, beta],
        1e-3,
    )

    xl = _rand(gen, 4, 6)
    gl = _rand(gen, 6)
    bl = _rand(gen, 6)
    pl = _projection(gen, 4, 6)
    check("layer_norm", lambda: (nnops.layer_norm(xl, gl, bl) * pl).sum(), [xl, gl, bl], 1e-3)

    xs = _rand(gen, 3, 8)
    ps = _projection(gen, 3, 8)
    check("silu", lambda: (nnops.silu(xs) * ps).sum(), [xs], 1e-3)

    logits = _rand(gen, 3, 5, 5)
    bias = _rand(gen, 5, 5)
    pm = _projection(gen, 3, 5, 5)
    check(
        "softmax + bias",
        lambda: (nnops.softmax_last_dim(logits, bias) * pm).sum(),
        [logits, bias],
        1e-3,
    )

    tgen = torch.Generator().manual_seed(seed + 1)
    ocb = OmniContextBlock(4, tgen).double().train()
    xo = _rand(gen, 1, 4, 6, 6)
    po = _projection(gen, 1, 4, 6, 6)
    check(
        "context block",
        lambda: (ocb(xo) * po).sum(),
        [xo, *ocb.parameters()],
        1e-3,
        entries=max_entries,
    )

    rsb = SpectralResidualBlock(4, tgen).double()
    check(
        "spectral block",
        lambda: (rsb(xo) * po).sum(),
        [xo, *rsb.parameters()],
        1e-3,
        entries=max_entries,
    )

    oca = OcaNet(3, channels=8, body_pairs=1, generator=tgen).double().train()
    xa = _rand(gen, 4, 4, 3)
    target = _rand(gen, 4, 4, 3).detach()
    wmap = torch.rand(4, 4, dtype=torch.float64, generator=gen) + 0.5
    check(
        "autoencoder composite",
        lambda: weighted_recon_loss(target, oca(xa), wmap),
        [xa, *oca.parameters()],
        1e-3,
        entries=max_entries,
    )

    scene = torch.rand(4, 4, 3, generator=gen).numpy()
    psf = PsfContext(scene, win=8, lam=5.0)
    dit = DitModel(3, 4, 4, embed_dim=32, depth=1, win=8, n_heads=4, generator=tgen).double()
    _randomize_params(dit, tgen)
    rt = _rand(gen, 4, 4, 3)
    eps = _rand(gen, 4, 4, 3).detach()
    check(
        "score model composite",
        lambda: dsm_loss(dit(rt, 7, psf), eps, wmap),
        [rt, *dit.parameters()],
        1e-3,
        entries=max_entries,
    )

    return results


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"{status}  {r.name:<{width}}  max rel err {r.error:.3e}  (tol {r.tol:.0e}, {r.seconds:.2f}s)"
        )
    return "\n".join(lines)
