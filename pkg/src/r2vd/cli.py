"""Command-line interface: synth, detect, eval, gradcheck."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import hsio
from .gradsuite import format_results, run_gradient_suite
from .metrics import auc_metrics, roc
from .pipeline import make_config, parse_config_file, run_pipeline, write_roc_csv
from .synthetic import SynthConfig, synth_scene


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="r2vd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth_p = sub.add_parser("synth", help="generate a synthetic scene with planted anomalies")
    synth_p.add_argument("--height", type=int, default=64)
    synth_p.add_argument("--width", type=int, default=64)
    synth_p.add_argument("--bands", type=int, default=32)
    synth_p.add_argument("--anomaly-ratio", type=float, default=0.02)
    synth_p.add_argument("--min-sam-degrees", type=float, default=25.0)
    synth_p.add_argument("--bg-endmembers", type=int, default=3)
    synth_p.add_argument("--shadow-fraction", type=float, default=0.1)
    synth_p.add_argument("--sub-pixel-fraction", type=float, default=0.25)
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.add_argument("--out-cube", required=True)
    synth_p.add_argument("--out-mask", required=True)

    detect = sub.add_parser("detect", help="run the detection pipeline on a cube")
    detect.add_argument("--input", help="input cube (HSC1)")
    detect.add_argument("--gt", help="optional ground-truth mask (PGM) for metrics")
    detect.add_argument("--out-dir", help="artifact directory (default: out)")
    detect.add_argument("--config", help="config file of 'key = value' lines; flags override")
    detect.add_argument("--seed", type=int)
    detect.add_argument("--eta", type=float, help="anomaly ratio prior (default 0.02)")
    detect.add_argument("--lambda", dest="lam", type=float, help="attention penalty (default 5.0)")
    detect.add_argument("--k", type=int, help="perturbation count (default 50)")
    detect.add_argument("--t-inf", type=int, help="inference timestep (default 980)")
    detect.add_argument("--bg-dim", type=int, help="background subspace dim (default 3)")
    detect.add_argument("--oca-epochs", type=int, help="autoencoder epochs (default 100)")
    detect.add_argument("--dit-epochs", type=int, help="score model epochs (default 1000)")
    detect.add_argument("--no-ppe", action="store_true", help="skip the coarse prior stage")
    detect.add_argument("--no-gmp", action="store_true", help="train the score model on the raw scene")
    detect.add_argument("--no-psf", action="store_true", help="disable the attention penalty")
    detect.add_argument("--no-vdi", action="store_true", help="use scalar noise magnitude instead")
    detect.add_argument("--resume", action="store_true", help="reuse artifacts already in out-dir")

    ev = sub.add_parser("eval", help="score an anomaly map against a mask")
    ev.add_argument("--input", required=True, help="anomaly map (single-band HSC1)")
    ev.add_argument("--gt", required=True, help="ground-truth mask (PGM)")
    ev.add_argument("--out-dir", default=".", help="where to write metrics.json and roc.csv")

    gc = sub.add_parser("gradcheck", help="run the gradient-check suite")
    gc.add_argument("--entries", type=int, default=12, help="probed coords per composite tensor")

    return parser


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        height=args.height,
        width=args.width,
        bands=args.bands,
        anomaly_ratio=args.anomaly_ratio,
        min_sam_degrees=args.min_sam_degrees,
        n_background_endmembers=args.bg_endmembers,
        shadow_fraction=args.shadow_fraction,
        sub_pixel_fraction=args.sub_pixel_fraction,
        seed=args.seed,
    )
    cube, mask = synth_scene(cfg)
    hsio.save_cube(cube, args.out_cube)
    hsio.save_mask(mask, args.out_mask)
    print(
        f"wrote {args.out_cube} ({cube.shape[0]}x{cube.shape[1]}x{cube.shape[2]}) "
        f"and {args.out_mask} ({int(mask.sum())} anomaly pixels)"
    )
    return 0


def _cmd_detect(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {
        "input": args.input,
        "gt": args.gt,
        "out_dir": args.out_dir,
        "seed": args.seed,
        "eta": args.eta,
        "lam": args.lam,
        "k": args.k,
        "t_inf": args.t_inf,
        "bg_dim": args.bg_dim,
        "oca_epochs": args.oca_epochs,
        "dit_epochs": args.dit_epochs,
        "use_ppe": False if args.no_ppe else None,
        "use_gmp": False if args.no_gmp else None,
        "use_psf": False if args.no_psf else None,
        "use_vdi": False if args.no_vdi else None,
        "resume": True if args.resume else None,
    }
    cfg = make_config(file_values, overrides)
    result = run_pipeline(cfg)
    print(f"anomaly map: {result.artifacts['anomaly_hsc']}")
    if result.metrics is not None:
        m = result.metrics
        print(
            f"auc_df={m.auc_df:.4f} auc_dt={m.auc_dt:.4f} auc_ft={m.auc_ft:.4f} "
            f"auc_od={m.auc_od:.4f} auc_snpr={m.auc_snpr:.4f}"
        )
    return 0


def _cmd_eval(args) -> int:
    amap = hsio.load_cube(args.input)
    if amap.shape[2] != 1:
        raise ValueError(f"expected a single-band anomaly map, got {amap.shape[2]} bands")
    amap = amap[:, :, 0]
    mask = hsio.load_mask(args.gt)
    report = auc_metrics(amap, mask)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    import json

    (out / "metrics.json").write_text(
        json.dumps(report.to_flat_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_roc_csv(roc(amap, mask), out / "roc.csv")
    print(
        f"auc_df={report.auc_df:.4f} auc_dt={report.auc_dt:.4f} auc_ft={report.auc_ft:.4f} "
        f"auc_od={report.auc_od:.4f} auc_snpr={report.auc_snpr:.4f}"
    )
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_suite(max_entries=args.entries)
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "detect": _cmd_detect,
        "eval": _cmd_eval,
        "gradcheck": _cmd_gradcheck,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
