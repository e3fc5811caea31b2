"""High-level experiment pipelines shared by the CLI and the test suite.

A pipeline run writes its artifacts (checkpoint, CSVs, SVG, manifest) into
an output directory; run ids are deterministic in (config, seed) so reruns
are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from . import clustering, io, metrics, mixture, objectives, sampler
from .config import ExperimentConfig, emit_config
from .mixture import ConditionFilter


class ValidationError(ValueError):
    """User-facing configuration problem (CLI exit code 1)."""


def build_dataset(cfg: ExperimentConfig):
    return mixture.sample_dataset(cfg.mixture, cfg.n_train, cfg.train.seed)


def cluster_dataset(cfg: ExperimentConfig, dataset, random_labels: bool = False):
    """Cluster the dataset per class and write the labels back onto it.

    Returns (table, per-class global index lists).  Sub-mode ids assigned by
    the generating mixture component are discarded; training consumes the
    discovered labels, exactly as the offline pre-processing stage would.
    """
    xs, cs, _ = mixture.dataset_arrays(dataset)
    features_by_class = {}
    index_by_class = {}
    for c in np.unique(cs):
        idx = np.flatnonzero(cs == c)
        feats = xs[idx]
        if cfg.cluster.standardize_features:
            feats = clustering.standardize(feats)
        features_by_class[int(c)] = feats
        index_by_class[int(c)] = idx
    if random_labels:
        table = clustering.random_assignment(features_by_class, cfg.cluster.k,
                                             cfg.train.seed)
    else:
        table = clustering.assign_submodes(features_by_class, cfg.cluster.k,
                                           cfg.train.seed,
                                           max_iters=cfg.cluster.max_iters)
    for c, idx in index_by_class.items():
        labels = table.per_class[c].assignments
        for local, global_i in enumerate(idx):
            dataset[global_i].submode_id = int(labels[local])
    return table, index_by_class


def train_run(cfg: ExperimentConfig, out_dir, run_prefix: str = "train",
              random_labels: bool = False) -> io.RunManifest:
    """Cluster (when enabled), train, and persist all artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_text = emit_config(cfg)
    run_id = io.new_run_id(run_prefix, config_text, cfg.train.seed)
    started = time.monotonic()

    dataset = build_dataset(cfg)
    table = None
    if cfg.cluster.enabled:
        table, _ = cluster_dataset(cfg, dataset, random_labels=random_labels)
    elif cfg.train.conditioning == "subflow":
        raise ValidationError(
            "conditioning=subflow requires a SubmodeTable: enable [cluster] "
            "or provide assignments")

    state, losses = objectives.train(dataset, cfg.mixture, cfg.train, table)

    ckpt_path = out_dir / f"{run_id}.checkpoint.bin"
    meta = {
        "objective": cfg.train.objective,
        "conditioning": cfg.train.conditioning,
        "source_std": cfg.mixture.source_std,
    }
    io.save_checkpoint(ckpt_path, state.net, state.ema_params, state.step, meta)
    loss_path = out_dir / f"{run_id}.loss.csv"
    io.write_loss_csv(loss_path, losses)

    manifest = io.RunManifest(run_id=run_id, config_text=config_text,
                              seed=cfg.train.seed)
    manifest.add_file("checkpoint", ckpt_path)
    manifest.add_file("loss_curve", loss_path)
    if table is not None:
        assign_path = out_dir / f"{run_id}.assignments.csv"
        priors_path = out_dir / f"{run_id}.priors.csv"
        clustering.write_assignments_csv(table, assign_path)
        clustering.write_priors_csv(table, priors_path)
        manifest.add_file("assignments", assign_path)
        manifest.add_file("priors", priors_path)
    manifest.duration_s = time.monotonic() - started
    manifest.write(out_dir / f"{run_id}.manifest.json")
    return manifest


def load_run(manifest_path):
    """(net with EMA parameters, table or None, meta) for a finished run."""
    manifest = io.RunManifest.read(manifest_path)
    net, ema, _, meta = io.load_checkpoint(manifest.files["checkpoint"])
    eval_net = net.__class__(net.config, ema)  # evaluation uses EMA weights
    table = None
    if "priors" in manifest.files:
        table = io.read_priors_table(manifest.files["priors"])
    return eval_net, table, meta


def generate_batch(net, table, meta, cfg: ExperimentConfig,
                   request: sampler.SampleRequest) -> sampler.GenerationBatch:
    return sampler.generate(net, table, request,
                            source_std=meta.get("source_std", 1.0),
                            conditioning=meta.get("conditioning", "class"))


def generate_all_classes(net, table, meta, cfg: ExperimentConfig, count: int,
                         nfe: int, w: float, strategy: str, seed: int):
    """Generate `count` samples spread over classes by their true mass."""
    spec = cfg.mixture
    conditioning = meta.get("conditioning", "class")
    if conditioning == "uncond":
        req = sampler.SampleRequest(class_id=0, count=count, nfe=nfe,
                                    guidance_scale=w, submode_strategy=strategy,
                                    seed=seed)
        return generate_batch(net, table, meta, cfg, req)
    class_mass = {c: sum(comp.weight for comp in spec.components
                         if comp.class_id == c) for c in spec.class_ids}
    xs, cs, ks = [], [], []
    allotted = 0
    for i, c in enumerate(spec.class_ids):
        n_c = (count - allotted if i == len(spec.class_ids) - 1
               else int(round(count * class_mass[c])))
        allotted += n_c
        if n_c == 0:
            continue
        req = sampler.SampleRequest(class_id=c, count=n_c, nfe=nfe,
                                    guidance_scale=w, submode_strategy=strategy,
                                    seed=seed + c)
        batch = generate_batch(net, table, meta, cfg, req)
        xs.append(batch.xs)
        cs.append(batch.class_ids)
        ks.append(batch.submode_ids)
    return sampler.GenerationBatch(xs=np.concatenate(xs),
                                   class_ids=np.concatenate(cs),
                                   submode_ids=np.concatenate(ks))


def net_field(net, meta, class_id=None, submode_id=None):
    """Instantaneous (x, t) -> v field of a trained net for one context.

    Interval-trained nets are evaluated at r = t.  class_id None means the
    null token; submode_id None leaves the sub-mode slot zero.
    """
    null = net.config.null_class
    c = null if class_id is None else class_id
    k = -1 if submode_id is None else submode_id

    def field(xs, t):
        n = len(xs)
        t_arr = np.full(n, t)
        r_arr = t_arr if net.config.uses_interval else None
        return net.forward_batch(xs, t_arr, r_arr,
                                 np.full(n, c, dtype=np.int64),
                                 np.full(n, k, dtype=np.int64))
    return field


def model_field_rmse(net, meta, cfg: ExperimentConfig) -> float:
    """Learned-field error against the analytic oracle, averaged over the
    conditioning contexts the model was trained with."""
    spec = cfg.mixture
    grid = metrics.default_grid(spec)
    conditioning = meta.get("conditioning", "class")
    contexts = []
    if conditioning == "uncond":
        contexts.append((None, None, ConditionFilter.all()))
    elif conditioning == "class":
        for c in spec.class_ids:
            contexts.append((c, None, ConditionFilter.for_class(c)))
    else:
        for comp in spec.components:
            contexts.append((comp.class_id, comp.submode_id,
                             ConditionFilter.for_submode(comp.class_id,
                                                         comp.submode_id)))
    total_sq = 0.0
    for c, k, cond in contexts:
        a = net_field(net, meta, c, k)
        b = lambda xs, t: mixture.oracle_velocity_batch(spec, xs, t, cond)
        rmse = metrics.field_rmse(a, b, grid)
        total_sq += rmse ** 2
    return float(np.sqrt(total_sq / len(contexts)))


def evaluate_run(manifest_path, cfg: ExperimentConfig, out_csv, nfe=None,
                 w=None, count=None, strategy=None, run_id=None,
                 with_field_rmse: bool = True) -> metrics.MetricReport:
    net, table, meta = load_run(manifest_path)
    nfe = cfg.sample.nfe if nfe is None else nfe
    w = cfg.sample.guidance_scale if w is None else w
    count = cfg.sample.count if count is None else count
    strategy = cfg.sample.submode_strategy if strategy is None else strategy

    real = mixture.sample_dataset(cfg.mixture, cfg.metrics.n_real,
                                  cfg.train.seed + 1)
    real_xs, _, _ = mixture.dataset_arrays(real)
    batch = generate_all_classes(net, table, meta, cfg, count, nfe, w,
                                 strategy, cfg.train.seed)
    rmse = model_field_rmse(net, meta, cfg) if with_field_rmse else None
    report = metrics.evaluate_all(cfg.mixture, real_xs, batch.xs,
                                  k=cfg.metrics.knn_k,
                                  tau=cfg.metrics.coverage_tau, rmse=rmse)
    if out_csv is not None:
        rid = run_id or io.RunManifest.read(manifest_path).run_id
        metrics.append_report_csv(out_csv, report, rid, nfe, w)
    return report


def sweep_nfe(manifest_path, cfg: ExperimentConfig, out_csv,
              nfe_list=(1, 2, 4, 8, 16, 32, 64, 128)) -> list:
    reports = []
    rid = io.RunManifest.read(manifest_path).run_id
    for nfe in nfe_list:
        reports.append(evaluate_run(manifest_path, cfg, out_csv, nfe=nfe,
                                    run_id=rid))
    return reports


ABLATION_VARIANTS = ("random_assignment", "uniform_sampling", "drop_k")


def ablate(cfg: ExperimentConfig, variant: str, out_dir) -> dict:
    """Train/evaluate the default configuration and one ablation variant."""
    if variant not in ABLATION_VARIANTS:
        raise ValidationError(f"unknown ablation variant {variant!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    import copy
    base_cfg = copy.deepcopy(cfg)
    var_cfg = copy.deepcopy(cfg)
    random_labels = variant == "random_assignment"
    strategy = "uniform" if variant == "uniform_sampling" else None
    if variant == "drop_k":
        var_cfg.train.p_drop_submode = var_cfg.train.p_drop_class

    base_manifest = train_run(base_cfg, out_dir, run_prefix="ablate-default")
    var_manifest = train_run(var_cfg, out_dir, run_prefix=f"ablate-{variant}",
                             random_labels=random_labels)
    out_csv = out_dir / "ablation.csv"
    base_report = evaluate_run(
        out_dir / f"{base_manifest.run_id}.manifest.json", base_cfg, out_csv,
        run_id=base_manifest.run_id)
    var_report = evaluate_run(
        out_dir / f"{var_manifest.run_id}.manifest.json", var_cfg, out_csv,
        strategy=strategy, run_id=var_manifest.run_id)
    return {"default": base_report, variant: var_report,
            "csv": str(out_csv)}


def write_comparison_csv(path, rows: dict[str, metrics.MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "frechet", "precision", "recall",
                         "mode_tv", "coverage_count", "field_rmse"])
        for name, rep in rows.items():
            writer.writerow([name, repr(rep.frechet), repr(rep.precision),
                             repr(rep.recall), repr(rep.mode_tv),
                             rep.coverage_count,
                             "" if rep.field_rmse is None
                             else repr(rep.field_rmse)])
