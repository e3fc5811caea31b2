"""Conditional velocity MLP with hand-rolled reverse- and forward-mode autodiff.

The network maps (x, t[, r], class, sub-mode) to a 2D velocity.  Conditioning
enters by concatenating learned class / sub-mode embeddings and a sinusoidal
time encoding with the coordinates at the input.  The class table carries one
extra row used as the null token for classifier-free guidance; an absent
sub-mode fills its slot with zeros.

Everything runs in float64.  Gradients (reverse mode, over parameters and
embedding tables) and directional derivatives (forward mode, over x/t/r only)
are exact, which the tests verify against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

# Frequency ladder top kept moderate: the average-velocity objective
# differentiates the encoding in time, and high frequencies make that
# total-derivative target orders of magnitude larger than the data scale.
N_FREQS = 16
FREQ_MIN = 1.0
FREQ_MAX = 30.0
TIME_ENC_DIM = 1 + 2 * N_FREQS


@dataclass(frozen=True)
class NetConfig:
    num_classes: int
    num_submodes: int
    hidden_width: int = 128
    hidden_layers: int = 3
    embed_dim: int = 32
    uses_interval: bool = False

    def __post_init__(self):
        for name in ("num_classes", "num_submodes", "hidden_width",
                     "hidden_layers", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def null_class(self) -> int:
        return self.num_classes

    @property
    def input_dim(self) -> int:
        n_times = 2 if self.uses_interval else 1
        return 2 + n_times * TIME_ENC_DIM + 2 * self.embed_dim


def _layout(cfg: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    entries = []
    in_dim = cfg.input_dim
    for layer in range(cfg.hidden_layers):
        entries.append((f"w{layer}", (cfg.hidden_width, in_dim)))
        entries.append((f"b{layer}", (cfg.hidden_width,)))
        in_dim = cfg.hidden_width
    entries.append(("w_out", (2, cfg.hidden_width)))
    entries.append(("b_out", (2,)))
    entries.append(("class_emb", (cfg.num_classes + 1, cfg.embed_dim)))
    entries.append(("submode_emb", (cfg.num_submodes, cfg.embed_dim)))
    return entries


class VelocityNet:
    """Flat-parameter MLP; views into the flat array are exposed by name."""

    def __init__(self, config: NetConfig, params: np.ndarray | None = None):
        self.config = config
        self.layout = _layout(config)
        self.sizes = {name: int(np.prod(shape)) for name, shape in self.layout}
        self.num_params = sum(self.sizes.values())
        if params is None:
            params = np.zeros(self.num_params, dtype=np.float64)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (self.num_params,):
                raise ValueError(
                    f"expected {self.num_params} parameters, got {params.shape}")
        self.params = params
        self._freqs = np.geomspace(FREQ_MIN, FREQ_MAX, N_FREQS)

    def view(self, name: str, params: np.ndarray | None = None) -> np.ndarray:
        """Reshaped view of one parameter block (of self.params by default)."""
        flat = self.params if params is None else params
        offset = 0
        for n, shape in self.layout:
            size = self.sizes[n]
            if n == name:
                return flat[offset:offset + size].reshape(shape)
            offset += size
        raise KeyError(name)

    @staticmethod
    def initialized(config: NetConfig, seed: int) -> "VelocityNet":
        """Kaiming-uniform hidden layers, zero output layer, gaussian embeddings."""
        net = VelocityNet(config)
        rng = stream(seed, "net.init")
        for layer in range(config.hidden_layers):
            w = net.view(f"w{layer}")
            bound = np.sqrt(6.0 / w.shape[1])
            w[:] = rng.uniform(-bound, bound, size=w.shape)
        net.view("class_emb")[:] = 0.5 * rng.standard_normal(
            net.view("class_emb").shape)
        net.view("submode_emb")[:] = 0.5 * rng.standard_normal(
            net.view("submode_emb").shape)
        return net

    # ---- feature construction -------------------------------------------

    def _time_enc(self, t: np.ndarray) -> np.ndarray:
        phase = t[:, None] * self._freqs[None, :]
        return np.concatenate([t[:, None], np.sin(phase), np.cos(phase)], axis=1)

    def _time_enc_dot(self, t: np.ndarray, dt: np.ndarray) -> np.ndarray:
        phase = t[:, None] * self._freqs[None, :]
        dphase = dt[:, None] * self._freqs[None, :]
        return np.concatenate(
            [dt[:, None], np.cos(phase) * dphase, -np.sin(phase) * dphase], axis=1)

    def _check_indices(self, c: np.ndarray, k: np.ndarray) -> None:
        cfg = self.config
        if np.any(c < 0) or np.any(c > cfg.null_class):
            raise IndexError("class index out of range")
        if np.any(k < -1) or np.any(k >= cfg.num_submodes):
            raise IndexError("submode index out of range")

    def _features(self, x, t, r, c, k) -> np.ndarray:
        cfg = self.config
        if cfg.uses_interval:
            if r is None:
                raise ValueError("net uses_interval: r is required")
        elif r is not None:
            raise ValueError("net does not use an interval: r must be None")
        self._check_indices(c, k)
        parts = [x, self._time_enc(t)]
        if cfg.uses_interval:
            parts.append(self._time_enc(r))
        parts.append(self.view("class_emb")[c])
        kemb = np.where((k >= 0)[:, None], self.view("submode_emb")[np.maximum(k, 0)], 0.0)
        parts.append(kemb)
        return np.concatenate(parts, axis=1)

    # ---- forward / reverse / forward-mode -------------------------------

    def forward_batch(self, x, t, r, c, k, *, cache: bool = False):
        """Evaluate the net on a batch.

        x: (n,2); t, r: (n,) (r None unless uses_interval); c: (n,) class or
        null indices; k: (n,) sub-mode indices with -1 meaning absent.
        Returns the (n,2) output, plus the activation cache when requested.
        """
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        r = None if r is None else np.asarray(r, dtype=np.float64)
        c = np.asarray(c, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        feats = self._features(x, t, r, c, k)
        h = feats
        zs, hs = [], [h]
        for layer in range(self.config.hidden_layers):
            z = h @ self.view(f"w{layer}").T + self.view(f"b{layer}")
            sig = 1.0 / (1.0 + np.exp(-z))
            h = z * sig
            zs.append((z, sig))
            hs.append(h)
        out = h @ self.view("w_out").T + self.view("b_out")
        if cache:
            return out, (hs, zs, c, k)
        return out

    def forward(self, x, t, r=None, c=0, k=-1) -> np.ndarray:
        """Single-point evaluation; see forward_batch."""
        r_arr = None if r is None else np.array([r])
        out = self.forward_batch(np.asarray(x)[None, :], np.array([t]), r_arr,
                                 np.array([c]), np.array([k]))
        return out[0]

    def backward(self, x, t, r, c, k, cotangents: np.ndarray) -> np.ndarray:
        """Gradient of sum_i <cotangent_i, forward_i> over all parameters.

        Accumulation order is fixed, so results are bit-reproducible.
        """
        cotangents = np.asarray(cotangents, dtype=np.float64)
        out, (hs, zs, c_arr, k_arr) = self.forward_batch(x, t, r, c, k, cache=True)
        if cotangents.shape != out.shape:
            raise ValueError("cotangent shape mismatch")
        grad = np.zeros_like(self.params)
        g = cotangents
        self.view("w_out", grad)[:] += g.T @ hs[-1]
        self.view("b_out", grad)[:] += g.sum(axis=0)
        gh = g @ self.view("w_out")
        for layer in reversed(range(self.config.hidden_layers)):
            z, sig = zs[layer]
            gz = gh * (sig * (1.0 + z * (1.0 - sig)))
            self.view(f"w{layer}", grad)[:] += gz.T @ hs[layer]
            self.view(f"b{layer}", grad)[:] += gz.sum(axis=0)
            gh = gz @ self.view(f"w{layer}")
        # gh is now the cotangent on the input features
        d = self.config.embed_dim
        gclass = gh[:, -2 * d:-d]
        gsub = gh[:, -d:]
        np.add.at(self.view("class_emb", grad), c_arr, gclass)
        live = k_arr >= 0
        if np.any(live):
            np.add.at(self.view("submode_emb", grad), k_arr[live], gsub[live])
        return grad

    def jvp_batch(self, x, t, r, c, k, dx, dt, dr=None) -> np.ndarray:
        """Forward-mode directional derivative in the (x, t[, r]) inputs.

        Embedding tables are constants under this derivative.
        """
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        dx = np.asarray(dx, dtype=np.float64)
        dt = np.asarray(dt, dtype=np.float64)
        if dx.shape != x.shape or dt.shape != t.shape:
            raise ValueError("tangent shape mismatch")
        r_arr = None if r is None else np.asarray(r, dtype=np.float64)
        c = np.asarray(c, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        feats = self._features(x, t, r_arr, c, k)

        n = x.shape[0]
        parts = [dx, self._time_enc_dot(t, dt)]
        if self.config.uses_interval:
            dr_arr = np.zeros(n) if dr is None else np.asarray(dr, dtype=np.float64)
            parts.append(self._time_enc_dot(r_arr, dr_arr))
        parts.append(np.zeros((n, 2 * self.config.embed_dim)))
        dh = np.concatenate(parts, axis=1)

        h = feats
        for layer in range(self.config.hidden_layers):
            w = self.view(f"w{layer}")
            z = h @ w.T + self.view(f"b{layer}")
            dz = dh @ w.T
            sig = 1.0 / (1.0 + np.exp(-z))
            h = z * sig
            dh = dz * (sig * (1.0 + z * (1.0 - sig)))
        return dh @ self.view("w_out").T

    def jvp(self, x, t, r, c, k, dx, dt, dr=0.0) -> np.ndarray:
        r_arr = None if r is None else np.array([r])
        dr_arr = None if r is None else np.array([dr])
        return self.jvp_batch(np.asarray(x)[None, :], np.array([t]), r_arr,
                              np.array([c]), np.array([k]),
                              np.asarray(dx)[None, :], np.array([dt]), dr_arr)[0]
