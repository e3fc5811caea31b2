"""Session-scoped trained runs shared by the acceptance tests.

Training a handful of small nets dominates the suite's runtime, so each
configuration is trained once per session and handed out read-only.
"""

import copy
from pathlib import Path
from types import SimpleNamespace

import pytest

from subflow.config import load_config
from subflow.objectives import train
from subflow.pipeline import build_dataset, cluster_dataset

ROOT = Path(__file__).resolve().parent.parent


def train_variant(base_cfg, objective, conditioning, steps=None,
                  random_labels=False):
    """Train one configuration in memory and wrap the evaluation bundle."""
    cfg = copy.deepcopy(base_cfg)
    cfg.train.objective = objective
    cfg.train.conditioning = conditioning
    if steps is not None:
        cfg.train.steps = steps
    cfg.train.__post_init__()
    dataset = build_dataset(cfg)
    table, _ = cluster_dataset(cfg, dataset, random_labels=random_labels)
    state, losses = train(dataset, cfg.mixture, cfg.train, table)
    meta = {"objective": objective, "conditioning": conditioning,
            "source_std": cfg.mixture.source_std}
    return SimpleNamespace(cfg=cfg, table=table, net=state.ema_net(),
                           meta=meta, losses=losses)


@pytest.fixture(scope="session")
def toy_cfg():
    return load_config(ROOT / "configs" / "toy.cfg")


@pytest.fixture(scope="session")
def meanflow_class_run(toy_cfg):
    return train_variant(toy_cfg, "meanflow", "class")


@pytest.fixture(scope="session")
def meanflow_subflow_run(toy_cfg):
    return train_variant(toy_cfg, "meanflow", "subflow")


@pytest.fixture(scope="session")
def meanflow_random_run(toy_cfg):
    return train_variant(toy_cfg, "meanflow", "subflow", random_labels=True)


@pytest.fixture(scope="session")
def cfm_class_run(toy_cfg):
    return train_variant(toy_cfg, "cfm", "class", steps=5000)
