"""Four-stage detection pipeline, artifact handling, and ablation toggles.

Stage order: coarse priors -> weighted purification -> score-model training
-> interference inference. Toggles cut the ladder down to its ablation
variants: no-ppe replaces the coarse prior with all-ones, no-gmp trains the
score model on the (standardized) scene instead of the purified residual,
no-psf sets the attention penalty to zero, and no-vdi replaces the vector
accumulation with the per-pixel mean predicted-noise magnitude.

Every stage derives its own RNG stream from the master seed, so a run
resumed from any saved artifact reproduces the terminal map bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import hsio
from .autoencoder import GmpSchedule, train_gmp
from .detectors import (
    LENIENT_TANH,
    STRICT_SIGMOID,
    WeightCurveParams,
    coarse_weights,
    fuse_pra,
    lsun_scores,
    rx_scores,
)
from .diffusion import (
    DiffusionSchedule,
    DitModel,
    PsfContext,
    load_checkpoint,
    load_model_state,
    save_checkpoint,
    train_rsm,
)
from .inference import VdiConfig, scalar_infer, vdi_infer
from .metrics import MetricsReport, RocCurve, auc_metrics, roc
from .seeding import derive_seed


@dataclass
class PipelineConfig:
    input: str | None = None
    gt: str | None = None
    out_dir: str = "out"
    seed: int = 0
    eta: float = 0.02
    lam: float = 5.0
    k: int = 50
    t_inf: int = 980
    bg_dim: int = 3
    oca_epochs: int = 100
    dit_epochs: int = 1000
    use_ppe: bool = True
    use_gmp: bool = True
    use_psf: bool = True
    use_vdi: bool = True
    win: int = 8
    depth: int = 4
    embed_dim: int = 128
    heads: int = 4
    warm_epochs: int = 10
    update_every: int = 10
    oca_lr: float = 1e-3
    dit_lr: float = 2e-4
    dit_weight_decay: float = 1e-5
    theta_gap: float = 0.7
    k_coa: float = 6.0
    k_ae: float = 30.0
    eps_floor: float = 0.01
    # the scalar ablation reads denoising misfit, which is most informative
    # at mid noise; the deep-noise t_inf applies to the vector mechanism
    scalar_t_inf: int = 500
    resume: bool = False

    def lenient_params(self) -> WeightCurveParams:
        return WeightCurveParams(self.theta_gap, self.k_coa, self.eps_floor, LENIENT_TANH)

    def strict_params(self) -> WeightCurveParams:
        return WeightCurveParams(self.theta_gap, self.k_ae, 0.0, STRICT_SIGMOID)


# config-file/flag key for the penalty constant ("lambda" is reserved in python)
_KEY_ALIASES = {"lambda": "lam"}
_ECHO_NAMES = {"lam": "lambda"}


def parse_config_file(path) -> dict:
    """Parse UTF-8 ``key = value`` lines; blank lines and '#' comments skipped."""
    values: dict = {}
    fields = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, text = line.partition("=")
        key = _KEY_ALIASES.get(key.strip(), key.strip())
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(text.strip())
    return values


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, overlaid with config-file values, overlaid with explicit flags."""
    merged: dict = {}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            key = _KEY_ALIASES.get(key, key)
            if value is not None:
                merged[key] = value
    return PipelineConfig(**merged)


def write_config_echo(cfg: PipelineConfig, path) -> None:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        name = _ECHO_NAMES.get(f.name, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_roc_csv(curve: RocCurve, path) -> None:
    rows = ["threshold,pd,pf"]
    for tau, pd, pf in zip(curve.thresholds, curve.pd, curve.pf):
        rows.append(f"{tau!r},{pd!r},{pf!r}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


@dataclass
class PipelineResult:
    anomaly_map: np.ndarray            # (H, W) in [0, 1]
    cum_norms: np.ndarray              # raw pre-normalization field
    metrics: MetricsReport | None
    weight_coarse: np.ndarray
    weight_map: np.ndarray
    residual: np.ndarray | None        # None when purification is toggled off
    artifacts: dict[str, Path]


@contextmanager
def _stage(name: str):
    try:
        yield
    except Exception as e:
        raise RuntimeError(f"[{name}] {e}") from e


def _save_map(values: np.ndarray, path: Path) -> None:
    hsio.save_cube(np.asarray(values, dtype=np.float32)[:, :, None], path)


def _load_map(path: Path) -> np.ndarray:
    return hsio.load_cube(path)[:, :, 0].astype(np.float64)


def run_pipeline(
    cfg: PipelineConfig,
    cube: np.ndarray | None = None,
    gt_mask: np.ndarray | None = None,
) -> PipelineResult:
    """Run the (toggled) pipeline end to end, writing artifacts to out_dir.

    ``cube``/``gt_mask`` may be passed in memory; otherwise they are read
    from cfg.input / cfg.gt. Fully deterministic in cfg.seed.
    """
    torch.set_num_threads(1)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        name: out / fname
        for name, fname in [
            ("w_coa", "w_coa.hsc"),
            ("w", "w.hsc"),
            ("residual", "residual.hsc"),
            ("checkpoint", "dit.ckpt"),
            ("anomaly_hsc", "anomaly.hsc"),
            ("anomaly_pgm", "anomaly.pgm"),
            ("metrics", "metrics.json"),
            ("roc", "roc.csv"),
            ("config", "config.txt"),
            ("trace", "gmp_trace.csv"),
        ]
    }

    with _stage("load"):
        if cube is None:
            if cfg.input is None:
                raise ValueError("no input cube: set cfg.input or pass one in memory")
            cube = hsio.load_cube(cfg.input)
        cube = hsio.validate_cube(cube, min_bands=2)
        if gt_mask is None and cfg.gt is not None:
            gt_mask = hsio.load_mask(cfg.gt)
        x = hsio.normalize_cube(cube)
        h, w, _ = x.shape

    with _stage("ppe"):
        if cfg.resume and paths["w_coa"].exists():
            w_coa = _load_map(paths["w_coa"])
        elif cfg.use_ppe:
            consensus = fuse_pra(rx_scores(x), lsun_scores(x, cfg.bg_dim))
            w_coa = coarse_weights(consensus, cfg.eta, cfg.lenient_params())
        else:
            w_coa = np.ones((h, w), dtype=np.float64)
        _save_map(w_coa, paths["w_coa"])

    with _stage("gmp"):
        residual = None
        if not cfg.use_gmp:
            # no purification: the score model sees the raw normalized
            # scene, weighted by the coarse prior alone
            weight_map = np.array(w_coa, dtype=np.float64, copy=True)
            _save_map(weight_map, paths["w"])
        elif cfg.resume and paths["w"].exists() and paths["residual"].exists():
            weight_map = _load_map(paths["w"])
            residual = hsio.load_cube(paths["residual"])
        else:
            sched = GmpSchedule(
                total_epochs=cfg.oca_epochs,
                warm_epochs=min(cfg.warm_epochs, max(cfg.oca_epochs - 1, 1)),
                update_every=cfg.update_every,
                lr=cfg.oca_lr,
                eta=cfg.eta,
                curve=cfg.strict_params(),
            )
            gmp = train_gmp(x, w_coa, sched, seed=derive_seed(cfg.seed, "gmp"))
            weight_map, residual = gmp.weight_map, gmp.residual
            _save_map(weight_map, paths["w"])
            hsio.save_cube(residual, paths["residual"])
            rows = ["epoch,loss,regime"] + [f"{e},{l!r},{tag}" for e, l, tag, _ in gmp.trace]
            paths["trace"].write_text("\n".join(rows) + "\n", encoding="utf-8")

    with _stage("rsm"):
        # standardization is a residual-space rule; the no-purification
        # ablation trains on the normalized scene as-is
        field = standardize_field(residual) if cfg.use_gmp else x
        lam = cfg.lam if cfg.use_psf else 0.0
        psf = PsfContext(x, win=cfg.win, lam=lam)
        diffusion_sched = DiffusionSchedule()
        if cfg.resume and paths["checkpoint"].exists():
            gen = torch.Generator().manual_seed(0)
            model = DitModel(
                x.shape[2], h, w, cfg.embed_dim, cfg.depth, cfg.win, cfg.heads, generator=gen
            )
            load_model_state(model, load_checkpoint(paths["checkpoint"]))
            model.freeze()
        else:
            model = train_rsm(
                field,
                weight_map,
                x,
                diffusion_sched,
                epochs=cfg.dit_epochs,
                seed=derive_seed(cfg.seed, "rsm"),
                lam=lam,
                win=cfg.win,
                depth=cfg.depth,
                embed_dim=cfg.embed_dim,
                n_heads=cfg.heads,
                lr=cfg.dit_lr,
                weight_decay=cfg.dit_weight_decay,
                psf=psf,
            )
            save_checkpoint(model, paths["checkpoint"])

    with _stage("vdi"):
        t_inf = cfg.t_inf if cfg.use_vdi else cfg.scalar_t_inf
        vdi_cfg = VdiConfig(k=cfg.k, t_inf=t_inf, seed=derive_seed(cfg.seed, "vdi"))
        infer = vdi_infer if cfg.use_vdi else scalar_infer
        anomaly_map, cum_norms = infer(model, field, x, diffusion_sched, vdi_cfg, psf)
        _save_map(anomaly_map, paths["anomaly_hsc"])
        hsio.save_pgm_gray(anomaly_map, paths["anomaly_pgm"])

    metrics = None
    with _stage("eval"):
        if gt_mask is not None:
            metrics = auc_metrics(anomaly_map, gt_mask)
            paths["metrics"].write_text(
                json.dumps(metrics.to_flat_dict(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
            write_roc_csv(roc(anomaly_map, gt_mask), paths["roc"])
        write_config_echo(cfg, paths["config"])

    return PipelineResult(
        anomaly_map=anomaly_map,
        cum_norms=cum_norms,
        metrics=metrics,
        weight_coarse=np.asarray(w_coa, dtype=np.float64),
        weight_map=np.asarray(weight_map, dtype=np.float64),
        residual=residual,
        artifacts=paths,
    )


def standardize_field(field: np.ndarray) -> np.ndarray:
    """Divide by the global standard deviation so noise scales are unitless.

    A constant field is returned unchanged (nothing to scale by).
    """
    field = np.asarray(field, dtype=np.float32)
    std = float(field.std())
    if std == 0.0:
        return field
    return (field / std).astype(np.float32)
