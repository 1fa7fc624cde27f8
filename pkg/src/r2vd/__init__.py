"""Hyperspectral anomaly detection via purified-residual vector dynamics.

The pipeline has four stages: classical coarse priors (Mahalanobis +
subspace residual, fused in rank space), weighted autoencoder purification,
windowed diffusion-transformer score modeling under a fixed spectral
attention penalty, and seeded multi-perturbation interference inference.
"""

from .autoencoder import (
    GmpResult,
    GmpSchedule,
    OcaNet,
    train_gmp,
    update_weights,
    weighted_recon_loss,
)
from .detectors import (
    WeightCurveParams,
    coarse_weights,
    fuse_pra,
    lsun_scores,
    rx_scores,
    weight_curve,
)
from .diffusion import (
    DiffusionSchedule,
    DitModel,
    PsfContext,
    dsm_loss,
    load_checkpoint,
    psf_attention,
    psf_matrix,
    save_checkpoint,
    train_rsm,
    window_partition,
)
from .hsio import load_cube, load_mask, normalize_cube, save_cube, save_mask
from .inference import VdiConfig, scalar_infer, score_from_noise, unit_vector, vdi_infer
from .linalg import cholesky_solve, empirical_rank, mean_covariance, sym_eig
from .metrics import MetricsReport, RocCurve, auc_metrics, roc, separability_stats
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .synthetic import SynthConfig, generate_scene, synth_scene

__version__ = "0.1.0"

__all__ = [
    "DiffusionSchedule",
    "DitModel",
    "GmpResult",
    "GmpSchedule",
    "MetricsReport",
    "OcaNet",
    "PipelineConfig",
    "PipelineResult",
    "PsfContext",
    "RocCurve",
    "SynthConfig",
    "VdiConfig",
    "WeightCurveParams",
    "auc_metrics",
    "cholesky_solve",
    "coarse_weights",
    "dsm_loss",
    "empirical_rank",
    "fuse_pra",
    "generate_scene",
    "load_checkpoint",
    "load_cube",
    "load_mask",
    "lsun_scores",
    "mean_covariance",
    "normalize_cube",
    "psf_attention",
    "psf_matrix",
    "roc",
    "run_pipeline",
    "rx_scores",
    "save_checkpoint",
    "save_cube",
    "save_mask",
    "scalar_infer",
    "score_from_noise",
    "separability_stats",
    "sym_eig",
    "synth_scene",
    "train_gmp",
    "train_rsm",
    "unit_vector",
    "update_weights",
    "vdi_infer",
    "weight_curve",
    "weighted_recon_loss",
    "window_partition",
]
