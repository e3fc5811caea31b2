"""Training losses and the training loop.

Supported objectives:

* ``cfm`` — regress the net onto the per-pair velocity x1 - x0 of the linear
  path (unconditional, class-conditional, or sub-mode-conditional).
* ``meanflow`` — average-velocity regression for one-step generation.  The
  net learns u(x_r, r, t): the average velocity over [r, t] given the state
  at the interval start, so a sampler step x <- x + (t - r) * u consumes the
  net exactly where it was trained.  With v = x1 - x0 the bootstrap target
  is v + (t - r) * d/dr u_theta(x_r, r, t, .), the total derivative taken
  along the path (a forward-mode jvp along (v, 1, 0) for (x, r, t)), and no
  gradient flows through the target.

Classifier-free-guidance dropout replaces the class label with the null
token with probability p_drop_class; the sub-mode index is kept unless the
drop-k ablation is enabled.  Optimization is plain Adam plus an EMA of the
parameters, all deterministic for a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clustering import SubmodeTable
from .mixture import LabeledSample, MixtureSpec, dataset_arrays
from .net import NetConfig, VelocityNet
from .rng import stream

OBJECTIVES = ("cfm", "meanflow")
CONDITIONINGS = ("uncond", "class", "subflow")


@dataclass
class TrainConfig:
    objective: str = "cfm"
    conditioning: str = "class"
    p_drop_class: float = 0.1
    p_drop_submode: float = 0.0
    steps: int = 5000
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    ema_decay: float = 0.999
    rt_equal_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.conditioning not in CONDITIONINGS:
            raise ValueError(f"unknown conditioning {self.conditioning!r}")
        for p in (self.p_drop_class, self.p_drop_submode, self.rt_equal_fraction):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0,1]")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0,1)")

    @property
    def uses_interval(self) -> bool:
        return self.objective == "meanflow"


@dataclass
class TrainState:
    net: VelocityNet
    ema_params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0

    @staticmethod
    def fresh(net: VelocityNet) -> "TrainState":
        return TrainState(net=net,
                          ema_params=net.params.copy(),
                          adam_m=np.zeros_like(net.params),
                          adam_v=np.zeros_like(net.params))

    def ema_net(self) -> VelocityNet:
        return VelocityNet(self.net.config, self.ema_params.copy())


def cfg_dropout(c: int, p_drop: float, rng: np.random.Generator,
                null_token: int) -> int:
    """Replace the class label with the null token with probability p_drop."""
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError("p_drop must be in [0,1]")
    return null_token if rng.random() < p_drop else c


def _condition_inputs(net: VelocityNet, c: np.ndarray, k: np.ndarray,
                      conditioning: str, p_drop_class: float,
                      p_drop_submode: float, rng: np.random.Generator):
    """Resolve the (class, submode) inputs actually fed to the net."""
    n = len(c)
    null = net.config.null_class
    if conditioning == "uncond":
        return np.full(n, null, dtype=np.int64), np.full(n, -1, dtype=np.int64)
    drop = rng.random(n) < p_drop_class
    c_in = np.where(drop, null, c)
    if conditioning == "class":
        return c_in, np.full(n, -1, dtype=np.int64)
    if np.any(k < 0):
        raise ValueError("subflow conditioning needs submode labels on every sample")
    k_in = k
    if p_drop_submode > 0.0:
        k_in = np.where(rng.random(n) < p_drop_submode, -1, k)
    return c_in, k_in


def cfm_loss(net: VelocityNet, x0, x1, c, k, t, conditioning: str = "class",
             p_drop_class: float = 0.0, p_drop_submode: float = 0.0,
             rng: Optional[np.random.Generator] = None):
    """Flow-matching MSE loss and its parameter gradient.

    loss = mean_i || net(x_t_i, t_i, c'_i, k'_i) - (x1_i - x0_i) ||^2.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if len(x0) == 0:
        raise ValueError("batch must be nonempty")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must be in [0,1]")
    if rng is None:
        rng = np.random.default_rng(0)
    c_in, k_in = _condition_inputs(net, np.asarray(c), np.asarray(k),
                                   conditioning, p_drop_class,
                                   p_drop_submode, rng)
    x_t = (1.0 - t)[:, None] * x0 + t[:, None] * x1
    v = x1 - x0
    # an interval net evaluated at r = t degenerates to the instantaneous field
    r_in = t if net.config.uses_interval else None
    pred = net.forward_batch(x_t, t, r_in, c_in, k_in)
    resid = pred - v
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    grad = net.backward(x_t, t, r_in, c_in, k_in, 2.0 * resid / len(x0))
    return loss, grad


def meanflow_loss(net: VelocityNet, x0, x1, c, k, r, t,
                  conditioning: str = "class", p_drop_class: float = 0.0,
                  p_drop_submode: float = 0.0,
                  rng: Optional[np.random.Generator] = None):
    """Average-velocity regression loss and gradient (r <= t per element).

    Differentiating the defining identity (t - r) * u(x_r, r, t) =
    integral of the instantaneous velocity over [r, t] with respect to r,
    along the path, gives u = v + (t - r) * du/dr.  Regressing onto that
    identity with the per-pair velocity standing in for v yields a
    one-step-consistent average-velocity field; at r = t it reduces to the
    plain flow-matching loss.
    """
    if not net.config.uses_interval:
        raise ValueError("meanflow_loss needs a net built with uses_interval")
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if len(x0) == 0:
        raise ValueError("batch must be nonempty")
    if np.any(r > t):
        raise ValueError("r must not exceed t")
    if np.any(r < 0.0) or np.any(t > 1.0):
        raise ValueError("times must be in [0,1]")
    if rng is None:
        rng = np.random.default_rng(0)
    c_in, k_in = _condition_inputs(net, np.asarray(c), np.asarray(k),
                                   conditioning, p_drop_class,
                                   p_drop_submode, rng)
    x_r = (1.0 - r)[:, None] * x0 + r[:, None] * x1
    v = x1 - x0
    u = net.forward_batch(x_r, t, r, c_in, k_in)
    dudr = net.jvp_batch(x_r, t, r, c_in, k_in,
                         dx=v, dt=np.zeros_like(t), dr=np.ones_like(r))
    u_tgt = v + (t - r)[:, None] * dudr  # constant: no gradient through it
    resid = u - u_tgt
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    grad = net.backward(x_r, t, r, c_in, k_in, 2.0 * resid / len(x0))
    return loss, grad


def draw_times(n: int, rt_equal_fraction: float, rng: np.random.Generator):
    """(r, t) pairs: two sorted uniforms, with r := t at the given rate."""
    a = rng.random(n)
    b = rng.random(n)
    r = np.minimum(a, b)
    t = np.maximum(a, b)
    equal = rng.random(n) < rt_equal_fraction
    r = np.where(equal, t, r)
    return r, t


def adam_update(state: TrainState, grad: np.ndarray, cfg: TrainConfig,
                eps: float = 1e-8) -> None:
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.adam_m = b1 * state.adam_m + (1.0 - b1) * grad
    state.adam_v = b2 * state.adam_v + (1.0 - b2) * grad ** 2
    mhat = state.adam_m / (1.0 - b1 ** state.step)
    vhat = state.adam_v / (1.0 - b2 ** state.step)
    state.net.params -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
    state.ema_params = (cfg.ema_decay * state.ema_params
                        + (1.0 - cfg.ema_decay) * state.net.params)


def train(dataset: Sequence[LabeledSample], spec: MixtureSpec, cfg: TrainConfig,
          table: Optional[SubmodeTable] = None,
          net: Optional[VelocityNet] = None):
    """Run the training loop; returns (final TrainState, loss curve).

    The dataset must carry submode labels when conditioning is subflow.
    Deterministic for a fixed config seed.
    """
    xs, cs, ks = dataset_arrays(dataset)
    if cfg.conditioning == "subflow" and np.any(ks < 0):
        raise ValueError("subflow training needs submode_id on every sample; "
                         "run clustering first")
    if net is None:
        num_submodes = table.num_submodes() if table is not None else max(
            int(ks.max()) + 1, 1)
        net_cfg = NetConfig(num_classes=spec.num_classes,
                            num_submodes=num_submodes,
                            uses_interval=cfg.uses_interval)
        net = VelocityNet.initialized(net_cfg, cfg.seed)
    state = TrainState.fresh(net)
    losses = np.zeros(cfg.steps)
    n = len(dataset)
    for step in range(cfg.steps):
        rng = stream(cfg.seed, "train.step", step)
        idx = rng.integers(0, n, size=cfg.batch_size)
        x1 = xs[idx]
        c = cs[idx]
        k = ks[idx]
        x0 = spec.source_std * rng.standard_normal((cfg.batch_size, 2))
        if cfg.objective == "meanflow":
            r, t = draw_times(cfg.batch_size, cfg.rt_equal_fraction, rng)
            loss, grad = meanflow_loss(
                net, x0, x1, c, k, r, t, cfg.conditioning,
                cfg.p_drop_class, cfg.p_drop_submode, rng)
        else:
            t = rng.random(cfg.batch_size)
            loss, grad = cfm_loss(
                net, x0, x1, c, k, t, cfg.conditioning,
                cfg.p_drop_class, cfg.p_drop_submode, rng)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss at step {step} "
                f"(parameter norm {np.linalg.norm(net.params):.3e})")
        adam_update(state, grad, cfg)
        losses[step] = loss
    return state, losses
