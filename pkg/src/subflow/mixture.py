"""Ground-truth 2D Gaussian-mixture data model and analytic velocity oracles.

The target distribution is a mixture of isotropic Gaussians, each component
carrying a class label and a sub-mode label.  Because source and target are
jointly Gaussian per component, the MSE-optimal velocity field of the linear
interpolation path has a closed form, which this module evaluates exactly for
the unconditional, class-conditional, and sub-mode-conditional cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .rng import stream

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: tuple[float, float]
    std: float
    class_id: int
    submode_id: int

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"component weight must be positive, got {self.weight}")
        if not self.std > 0:
            raise ValueError(f"component std must be positive, got {self.std}")


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[MixtureComponent, ...]
    source_std: float = 1.0

    def __post_init__(self):
        if len(self.components) == 0:
            raise ValueError("mixture needs at least one component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"component weights sum to {total}, expected 1")
        keys = [(c.class_id, c.submode_id) for c in self.components]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (class_id, submode_id) pair in mixture")
        if not self.source_std > 0:
            raise ValueError("source_std must be positive")

    @property
    def class_ids(self) -> list[int]:
        return sorted({c.class_id for c in self.components})

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    def stds(self) -> np.ndarray:
        return np.array([c.std for c in self.components])

    def bounding_box(self, n_std: float = 3.0) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) covering every component mean +- n_std."""
        means = self.means()
        stds = self.stds()[:, None]
        lo = (means - n_std * stds).min(axis=0)
        hi = (means + n_std * stds).max(axis=0)
        return (lo[0], lo[1], hi[0], hi[1])


@dataclass
class LabeledSample:
    x: tuple[float, float]
    class_id: int
    submode_id: Optional[int] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise ValueError("sample coordinates must be finite")


@dataclass(frozen=True)
class ConditionFilter:
    """Selects which components enter a conditional expectation.

    mode is "all", "class", or "submode"; class_id/submode_id are required
    for the narrower modes.
    """

    mode: str = "all"
    class_id: Optional[int] = None
    submode_id: Optional[int] = None

    ALL = None  # set below

    @staticmethod
    def all() -> "ConditionFilter":
        return ConditionFilter("all")

    @staticmethod
    def for_class(class_id: int) -> "ConditionFilter":
        return ConditionFilter("class", class_id=class_id)

    @staticmethod
    def for_submode(class_id: int, submode_id: int) -> "ConditionFilter":
        return ConditionFilter("submode", class_id=class_id, submode_id=submode_id)

    def select(self, spec: MixtureSpec) -> np.ndarray:
        """Indices of components matched by this filter."""
        if self.mode == "all":
            idx = np.arange(len(spec.components))
        elif self.mode == "class":
            idx = np.array([i for i, c in enumerate(spec.components)
                            if c.class_id == self.class_id], dtype=int)
        elif self.mode == "submode":
            idx = np.array([i for i, c in enumerate(spec.components)
                            if c.class_id == self.class_id
                            and c.submode_id == self.submode_id], dtype=int)
        else:
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if idx.size == 0:
            raise ValueError(f"condition filter {self} selects no component")
        return idx


def toy_spec(source_std: float = 1.0) -> MixtureSpec:
    """The shipped 4-peak toy target: 2 classes x 2 sub-modes.

    Within each class the majority sub-mode has weight 0.35 and the minority
    0.15 (0.70 / 0.30 after within-class renormalization).  Means are at
    least 4 std apart so collapse and recovery are unambiguous.
    """
    return MixtureSpec(
        components=(
            MixtureComponent(0.35, (-4.0, 2.0), 0.5, class_id=0, submode_id=0),
            MixtureComponent(0.15, (-4.0, -2.0), 0.5, class_id=0, submode_id=1),
            MixtureComponent(0.35, (4.0, 2.0), 0.5, class_id=1, submode_id=0),
            MixtureComponent(0.15, (4.0, -2.0), 0.5, class_id=1, submode_id=1),
        ),
        source_std=source_std,
    )


def sample_dataset(spec: MixtureSpec, n: int, seed: int) -> list[LabeledSample]:
    """Draw n labeled points from the mixture, deterministically per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed, "mixture.sample_dataset")
    comp_idx = rng.choice(len(spec.components), size=n, p=spec.weights())
    noise = rng.standard_normal((n, 2))
    means = spec.means()[comp_idx]
    stds = spec.stds()[comp_idx, None]
    xs = means + stds * noise
    return [
        LabeledSample(x=(xs[i, 0], xs[i, 1]),
                      class_id=spec.components[comp_idx[i]].class_id,
                      submode_id=spec.components[comp_idx[i]].submode_id)
        for i in range(n)
    ]


def dataset_arrays(samples: Sequence[LabeledSample]):
    """(n,2) coordinates, (n,) class ids, (n,) submode ids (-1 if absent)."""
    xs = np.array([s.x for s in samples], dtype=np.float64)
    cs = np.array([s.class_id for s in samples], dtype=np.int64)
    ks = np.array([-1 if s.submode_id is None else s.submode_id for s in samples],
                  dtype=np.int64)
    return xs, cs, ks


def interpolate(x0, x1, t: float):
    """Linear path point and its constant target velocity.

    x_t = (1-t) x0 + t x1,  v = x1 - x0.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0,1], got {t}")
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    return (1.0 - t) * x0 + t * x1, x1 - x0


def _check_time(spec: MixtureSpec, t: float, idx: np.ndarray) -> None:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0,1], got {t}")
    if t == 1.0 and np.any(spec.stds()[idx] == 0.0):
        raise ValueError("t=1 with a zero-std component is singular")


def posterior_weights(spec: MixtureSpec, x, t: float,
                      cond: ConditionFilter = ConditionFilter("all")):
    """Posterior component weights given x_t = x, restricted to cond.

    Returns (indices, weights, underflowed).  Weights are computed in
    log-space with max-subtraction; if every density underflows the result
    falls back to uniform over the subset with underflowed=True.
    """
    idx = cond.select(spec)
    _check_time(spec, t, idx)
    x = np.asarray(x, dtype=np.float64)

    pri = spec.weights()[idx]
    mu = spec.means()[idx]
    sig = spec.stds()[idx]
    s2 = (1.0 - t) ** 2 * spec.source_std ** 2 + t ** 2 * sig ** 2
    diff = x[None, :] - t * mu
    with np.errstate(over="ignore"):
        log_density = (-0.5 * np.sum(diff ** 2, axis=1) / s2
                       - np.log(2.0 * np.pi * s2))
    logw = np.log(pri) + log_density
    m = np.max(logw)
    if not np.isfinite(m):
        return idx, np.full(len(idx), 1.0 / len(idx)), True
    w = np.exp(logw - m)
    return idx, w / w.sum(), False


def oracle_velocity(spec: MixtureSpec, x, t: float,
                    cond: ConditionFilter = ConditionFilter("all")) -> np.ndarray:
    """Closed-form conditional mean velocity E[x1 - x0 | x_t = x, cond].

    Per component, (x_t, x1 - x0) are jointly Gaussian, so the conditional
    mean is mu_j plus a linear correction; components are then mixed with
    their posterior weights.
    """
    idx, w, _ = posterior_weights(spec, x, t, cond)
    x = np.asarray(x, dtype=np.float64)
    mu = spec.means()[idx]
    sig = spec.stds()[idx]
    s0 = spec.source_std
    s2 = (1.0 - t) ** 2 * s0 ** 2 + t ** 2 * sig ** 2
    coef = (t * sig ** 2 - (1.0 - t) * s0 ** 2) / s2
    per_comp = mu + coef[:, None] * (x[None, :] - t * mu)
    return np.einsum("j,jd->d", w, per_comp)


def oracle_velocity_batch(spec: MixtureSpec, xs: np.ndarray, t: float,
                          cond: ConditionFilter = ConditionFilter("all")) -> np.ndarray:
    """Vectorized oracle_velocity over an (n,2) batch of query points."""
    idx = cond.select(spec)
    _check_time(spec, t, idx)
    xs = np.asarray(xs, dtype=np.float64)

    pri = spec.weights()[idx]
    mu = spec.means()[idx]
    sig = spec.stds()[idx]
    s0 = spec.source_std
    s2 = (1.0 - t) ** 2 * s0 ** 2 + t ** 2 * sig ** 2
    diff = xs[:, None, :] - t * mu[None, :, :]
    logw = (np.log(pri)[None, :]
            - 0.5 * np.sum(diff ** 2, axis=2) / s2[None, :]
            - np.log(2.0 * np.pi * s2)[None, :])
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    coef = (t * sig ** 2 - (1.0 - t) * s0 ** 2) / s2
    per_comp = mu[None, :, :] + coef[None, :, None] * diff
    return np.einsum("nj,njd->nd", w, per_comp)
