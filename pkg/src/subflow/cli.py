"""Command-line entry points.

Subcommands: train, generate, evaluate, sweep-nfe, ablate, cluster.
Exit codes: 0 success, 1 validation/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import clustering, io, metrics, mixture, pipeline, sampler
from .config import ConfigError, ExperimentConfig, load_config
from .pipeline import ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    for attr, target in [("seed", ("train", "seed")),
                         ("steps", ("train", "steps")),
                         ("objective", ("train", "objective")),
                         ("conditioning", ("train", "conditioning")),
                         ("count", ("sample", "count")),
                         ("nfe", ("sample", "nfe")),
                         ("guidance_scale", ("sample", "guidance_scale")),
                         ("submode_strategy", ("sample", "submode_strategy")),
                         ("cluster_k", ("cluster", "k"))]:
        value = getattr(args, attr, None)
        if value is not None:
            section = getattr(cfg, target[0])
            setattr(section, target[1], value)
    # re-validate after overrides
    cfg.train.__post_init__()
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    manifest = pipeline.train_run(cfg, args.out)
    print(f"run {manifest.run_id}: wrote "
          f"{', '.join(sorted(manifest.files))} to {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    net, table, meta = pipeline.load_run(args.manifest)
    request = sampler.SampleRequest(
        class_id=args.class_id, count=cfg.sample.count, nfe=cfg.sample.nfe,
        guidance_scale=cfg.sample.guidance_scale,
        submode_strategy=cfg.sample.submode_strategy,
        fixed_submode=args.fixed_submode, seed=cfg.train.seed)
    batch = pipeline.generate_batch(net, table, meta, cfg, request)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples_path = out_dir / f"samples-class{args.class_id}.csv"
    io.write_samples_csv(samples_path, batch)
    real = mixture.sample_dataset(cfg.mixture, cfg.metrics.n_real,
                                  cfg.train.seed + 1)
    real_xs, _, _ = mixture.dataset_arrays(real)
    svg_path = out_dir / f"scatter-class{args.class_id}.svg"
    io.write_scatter_svg(svg_path, real_xs, batch.xs, batch.submode_ids,
                         cfg.mixture.bounding_box())
    print(f"wrote {samples_path} and {svg_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / "metrics.csv"
    report = pipeline.evaluate_run(args.manifest, cfg, out_csv)
    print(f"frechet={report.frechet:.4f} precision={report.precision:.4f} "
          f"recall={report.recall:.4f} mode_tv={report.mode_tv:.4f} "
          f"coverage={report.coverage_count}"
          + (f" field_rmse={report.field_rmse:.4f}"
             if report.field_rmse is not None else ""))
    return EXIT_OK


def cmd_sweep_nfe(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / "nfe_sweep.csv"
    nfe_list = [int(x) for x in args.nfe_list.split(",")]
    pipeline.sweep_nfe(args.manifest, cfg, out_csv, nfe_list)
    print(f"wrote {out_csv}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = pipeline.ablate(cfg, args.variant, args.out)
    comparison = Path(args.out) / "comparison.csv"
    pipeline.write_comparison_csv(
        comparison, {k: v for k, v in result.items() if k != "csv"})
    print(f"wrote {comparison}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    features = clustering.read_feature_csv(args.features)
    if args.standardize:
        features = {c: clustering.standardize(f) for c, f in features.items()}
    table = clustering.assign_submodes(features, args.k, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    clustering.write_assignments_csv(table, out_dir / "assignments.csv")
    clustering.write_priors_csv(table, out_dir / "priors.csv")
    print(f"wrote assignments.csv and priors.csv to {out_dir}")
    return EXIT_OK


def cmd_check(args) -> int:
    manifest = io.RunManifest.read(args.manifest)
    bad = manifest.check()
    if bad:
        print(f"stale or missing artifacts: {', '.join(bad)}")
        return EXIT_VALIDATION
    print("all artifacts present; checksums match")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subflow",
        description="Sub-mode conditioned flow matching lab on 2D mixtures")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        if manifest:
            p.add_argument("--manifest", required=True,
                           help="manifest of a finished training run")

    p = sub.add_parser("train", help="cluster + train + checkpoint")
    common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--objective", choices=["cfm", "meanflow"])
    p.add_argument("--conditioning", choices=["uncond", "class", "subflow"])
    p.add_argument("--cluster-k", dest="cluster_k", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample one class, write CSV + SVG")
    common(p, manifest=True)
    p.add_argument("--class-id", type=int, required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--nfe", type=int)
    p.add_argument("--guidance-scale", dest="guidance_scale", type=float)
    p.add_argument("--submode-strategy", dest="submode_strategy",
                   choices=["prior", "uniform", "fixed"])
    p.add_argument("--fixed-submode", dest="fixed_submode", type=int,
                   default=-1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="generate + compute metric row")
    common(p, manifest=True)
    p.add_argument("--count", type=int)
    p.add_argument("--nfe", type=int)
    p.add_argument("--guidance-scale", dest="guidance_scale", type=float)
    p.add_argument("--submode-strategy", dest="submode_strategy",
                   choices=["prior", "uniform", "fixed"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-nfe", help="evaluate across NFE values")
    common(p, manifest=True)
    p.add_argument("--nfe-list", default="1,2,4,8,16,32,64,128")
    p.set_defaults(func=cmd_sweep_nfe)

    p = sub.add_parser("ablate", help="train + evaluate default vs variant")
    common(p)
    p.add_argument("--variant", required=True,
                   choices=list(pipeline.ABLATION_VARIANTS))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("cluster", help="cluster an external feature CSV")
    p.add_argument("--features", required=True,
                   help="CSV: feature columns then a class column")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("check", help="verify a run manifest's artifacts")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, ValueError, KeyError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
