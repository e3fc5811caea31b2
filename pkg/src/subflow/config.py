"""Flat key=value experiment configuration.

The config file is INI-style text with sections [mixture], [data], [net],
[train], [cluster], [sample], [metrics].  Mixture components are listed as

    component_0 = weight mx my std class_id submode_id

CLI flags override individual keys.  parse/emit round-trips are
semantically identical (same key set, same values).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .mixture import MixtureComponent, MixtureSpec, toy_spec
from .objectives import TrainConfig


@dataclass
class ClusterConfig:
    k: int = 2
    max_iters: int = 100
    enabled: bool = True
    standardize_features: bool = False


@dataclass
class SampleConfig:
    count: int = 10000
    nfe: int = 1
    guidance_scale: float = 1.0
    submode_strategy: str = "prior"


@dataclass
class MetricsConfig:
    knn_k: int = 3
    coverage_tau: float = 0.5
    n_real: int = 10000


@dataclass
class ExperimentConfig:
    mixture: MixtureSpec = field(default_factory=toy_spec)
    n_train: int = 20000
    train: TrainConfig = field(default_factory=TrainConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)


class ConfigError(ValueError):
    pass


def _parse_component(raw: str, key: str) -> MixtureComponent:
    parts = raw.replace(",", " ").split()
    if len(parts) != 6:
        raise ConfigError(
            f"{key}: expected 'weight mx my std class_id submode_id', got {raw!r}")
    try:
        weight, mx, my, std = (float(p) for p in parts[:4])
        class_id, submode_id = int(parts[4]), int(parts[5])
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return MixtureComponent(weight, (mx, my), std, class_id, submode_id)


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if conv is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    if parser.has_section("mixture") and any(
            k.startswith("component_") for k in parser.options("mixture")):
        comps = []
        i = 0
        while parser.has_option("mixture", f"component_{i}"):
            comps.append(_parse_component(
                parser.get("mixture", f"component_{i}"), f"component_{i}"))
            i += 1
        try:
            mixture = MixtureSpec(
                components=tuple(comps),
                source_std=_get(parser, "mixture", "source_std", float, 1.0))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        mixture = toy_spec(_get(parser, "mixture", "source_std", float, 1.0))

    try:
        train = TrainConfig(
            objective=_get(parser, "train", "objective", str, "cfm"),
            conditioning=_get(parser, "train", "conditioning", str, "class"),
            p_drop_class=_get(parser, "train", "p_drop_class", float, 0.1),
            p_drop_submode=_get(parser, "train", "p_drop_submode", float, 0.0),
            steps=_get(parser, "train", "steps", int, 5000),
            batch_size=_get(parser, "train", "batch_size", int, 256),
            learning_rate=_get(parser, "train", "learning_rate", float, 1e-3),
            adam_beta1=_get(parser, "train", "adam_beta1", float, 0.9),
            adam_beta2=_get(parser, "train", "adam_beta2", float, 0.95),
            ema_decay=_get(parser, "train", "ema_decay", float, 0.999),
            rt_equal_fraction=_get(parser, "train", "rt_equal_fraction",
                                   float, 0.75),
            seed=_get(parser, "train", "seed", int, 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        mixture=mixture,
        n_train=_get(parser, "data", "n_train", int, 20000),
        train=train,
        cluster=ClusterConfig(
            k=_get(parser, "cluster", "k", int, 2),
            max_iters=_get(parser, "cluster", "max_iters", int, 100),
            enabled=_get(parser, "cluster", "enabled", bool, True),
            standardize_features=_get(parser, "cluster", "standardize_features",
                                      bool, False),
        ),
        sample=SampleConfig(
            count=_get(parser, "sample", "count", int, 10000),
            nfe=_get(parser, "sample", "nfe", int, 1),
            guidance_scale=_get(parser, "sample", "guidance_scale", float, 1.0),
            submode_strategy=_get(parser, "sample", "submode_strategy", str,
                                  "prior"),
        ),
        metrics=MetricsConfig(
            knn_k=_get(parser, "metrics", "knn_k", int, 3),
            coverage_tau=_get(parser, "metrics", "coverage_tau", float, 0.5),
            n_real=_get(parser, "metrics", "n_real", int, 10000),
        ),
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def emit_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    parser["mixture"] = {"source_std": repr(cfg.mixture.source_std)}
    for i, c in enumerate(cfg.mixture.components):
        parser["mixture"][f"component_{i}"] = (
            f"{c.weight!r} {c.mean[0]!r} {c.mean[1]!r} {c.std!r} "
            f"{c.class_id} {c.submode_id}")
    parser["data"] = {"n_train": str(cfg.n_train)}
    t = cfg.train
    parser["train"] = {
        "objective": t.objective, "conditioning": t.conditioning,
        "p_drop_class": repr(t.p_drop_class),
        "p_drop_submode": repr(t.p_drop_submode),
        "steps": str(t.steps), "batch_size": str(t.batch_size),
        "learning_rate": repr(t.learning_rate),
        "adam_beta1": repr(t.adam_beta1), "adam_beta2": repr(t.adam_beta2),
        "ema_decay": repr(t.ema_decay),
        "rt_equal_fraction": repr(t.rt_equal_fraction),
        "seed": str(t.seed),
    }
    parser["cluster"] = {
        "k": str(cfg.cluster.k), "max_iters": str(cfg.cluster.max_iters),
        "enabled": str(cfg.cluster.enabled).lower(),
        "standardize_features": str(cfg.cluster.standardize_features).lower(),
    }
    parser["sample"] = {
        "count": str(cfg.sample.count), "nfe": str(cfg.sample.nfe),
        "guidance_scale": repr(cfg.sample.guidance_scale),
        "submode_strategy": cfg.sample.submode_strategy,
    }
    parser["metrics"] = {
        "knn_k": str(cfg.metrics.knn_k),
        "coverage_tau": repr(cfg.metrics.coverage_tau),
        "n_real": str(cfg.metrics.n_real),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
