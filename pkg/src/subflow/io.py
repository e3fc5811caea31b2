"""Persistence: binary checkpoints, run manifests, CSV and SVG emission.

Checkpoint layout (all little-endian):
  magic b"SFLW" | version u32 | descriptor length u32 | descriptor JSON |
  parameter f64 array | EMA f64 array.
The JSON descriptor carries the net configuration, the parameter layout,
the training step, and enough run metadata (objective, conditioning,
source_std) to drive inference without re-reading the training config.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClassClusters, SubmodeTable
from .net import NetConfig, VelocityNet

CHECKPOINT_MAGIC = b"SFLW"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, net: VelocityNet, ema_params: np.ndarray, step: int,
                    meta: dict | None = None) -> None:
    cfg = net.config
    descriptor = {
        "net": {
            "num_classes": cfg.num_classes,
            "num_submodes": cfg.num_submodes,
            "hidden_width": cfg.hidden_width,
            "hidden_layers": cfg.hidden_layers,
            "embed_dim": cfg.embed_dim,
            "uses_interval": cfg.uses_interval,
        },
        "layout": [[name, list(shape)] for name, shape in net.layout],
        "num_params": net.num_params,
        "step": step,
        "meta": meta or {},
    }
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(net.params.astype("<f8").tobytes())
        fh.write(np.asarray(ema_params).astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (net, ema_params, step, meta)."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        descriptor = json.loads(fh.read(blob_len).decode("utf-8"))
        n = descriptor["num_params"]
        params = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
        ema = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
    cfg = NetConfig(**descriptor["net"])
    net = VelocityNet(cfg, params)
    expected = [[name, list(shape)] for name, shape in net.layout]
    if descriptor["layout"] != expected:
        raise ValueError(f"{path}: layout descriptor mismatch")
    return net, ema, descriptor["step"], descriptor.get("meta", {})


# ---- run manifests -------------------------------------------------------

def _checksum(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    run_id: str
    config_text: str
    seed: int
    files: dict[str, str] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)
    duration_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def add_file(self, label: str, path) -> None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest file {path} does not exist")
        self.files[label] = str(path)
        self.checksums[label] = _checksum(path)

    def write(self, path) -> None:
        payload = {
            "run_id": self.run_id,
            "config": self.config_text,
            "seed": self.seed,
            "files": self.files,
            "checksums": self.checksums,
            "duration_s": self.duration_s,
            "extra": self.extra,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)

    @staticmethod
    def read(path) -> "RunManifest":
        with open(path) as fh:
            payload = json.load(fh)
        return RunManifest(run_id=payload["run_id"],
                           config_text=payload["config"],
                           seed=payload["seed"], files=payload["files"],
                           checksums=payload["checksums"],
                           duration_s=payload["duration_s"],
                           extra=payload.get("extra", {}))

    def check(self) -> list[str]:
        """Names of referenced files that are missing or changed."""
        bad = []
        for label, path in self.files.items():
            if not Path(path).exists():
                bad.append(label)
            elif _checksum(path) != self.checksums[label]:
                bad.append(label)
        return bad


# ---- CSV helpers ---------------------------------------------------------

def write_loss_csv(path, losses: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            writer.writerow([i, repr(float(loss))])


def write_samples_csv(path, batch) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "class_id", "submode_id", "x", "y"])
        for i in range(len(batch.xs)):
            writer.writerow([i, int(batch.class_ids[i]),
                             int(batch.submode_ids[i]),
                             repr(float(batch.xs[i, 0])),
                             repr(float(batch.xs[i, 1]))])


def write_trajectory_csv(path, batch) -> None:
    if batch.trajectory is None:
        raise ValueError("batch has no recorded trajectory")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "step", "x", "y"])
        for i in range(batch.trajectory.shape[1]):
            for s in range(batch.trajectory.shape[0]):
                writer.writerow([i, s,
                                 repr(float(batch.trajectory[s, i, 0])),
                                 repr(float(batch.trajectory[s, i, 1]))])


def read_priors_table(path) -> SubmodeTable:
    """Rebuild the sampling-relevant part of a SubmodeTable from priors CSV."""
    table = SubmodeTable()
    rows: dict[int, list[tuple[int, int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.setdefault(int(row["class_id"]), []).append(
                (int(row["submode_id"]), int(row["count"]),
                 float(row["prior"])))
    for class_id, entries in rows.items():
        entries.sort()
        counts = np.array([e[1] for e in entries], dtype=np.int64)
        priors = np.array([e[2] for e in entries])
        table.per_class[class_id] = ClassClusters(
            centroids=np.zeros((len(entries), 0)),
            assignments=np.zeros(0, dtype=np.int64),
            counts=counts, priors=priors)
    return table


# ---- SVG scatter ---------------------------------------------------------

PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e",
           "#9467bd", "#8c564b", "#e377c2", "#17becf"]
VIEWPORT = 800


def write_scatter_svg(path, real: np.ndarray, gen: np.ndarray,
                      gen_submodes: np.ndarray, bbox) -> None:
    """Real points in gray under generated points colored by sub-mode."""
    xmin, ymin, xmax, ymax = bbox
    span = max(xmax - xmin, ymax - ymin, 1e-9)
    margin = 20.0
    scale = (VIEWPORT - 2 * margin) / span

    def to_view(p):
        # y axis flipped so larger y is drawn higher
        vx = margin + (p[0] - xmin) * scale
        vy = VIEWPORT - margin - (p[1] - ymin) * scale
        return vx, vy

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{VIEWPORT}" '
        f'height="{VIEWPORT}" viewBox="0 0 {VIEWPORT} {VIEWPORT}">',
        f'<rect width="{VIEWPORT}" height="{VIEWPORT}" fill="white"/>',
    ]
    for p in np.asarray(real):
        vx, vy = to_view(p)
        parts.append(f'<circle cx="{vx:.2f}" cy="{vy:.2f}" r="1.5" '
                     f'fill="#bbbbbb" fill-opacity="0.5"/>')
    for p, k in zip(np.asarray(gen), np.asarray(gen_submodes)):
        color = PALETTE[int(k) % len(PALETTE)] if k >= 0 else PALETTE[0]
        vx, vy = to_view(p)
        parts.append(f'<circle cx="{vx:.2f}" cy="{vy:.2f}" r="2" '
                     f'fill="{color}" fill-opacity="0.7"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def new_run_id(prefix: str, config_text: str, seed: int) -> str:
    """Deterministic run id: same config and seed always map to the same id.

    Re-running an identical experiment overwrites its own artifacts instead
    of accumulating near-duplicates, which also keeps full-pipeline reruns
    byte-identical.
    """
    digest = hashlib.sha256(f"{config_text}\n{seed}".encode()).hexdigest()[:10]
    return f"{prefix}-{digest}"
