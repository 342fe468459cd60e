"""2-D loss planes around a model and projected fine-tuning trajectories."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .errors import DegenerateFitError, InvalidInputError
from .nn import GradSet, MlpArchitecture, ParamSet, check_layout, copy_params, cross_entropy, logits, make_rng

MAX_DIRECTION_RETRIES = 8
LOSS_KINDS = ("ce", "mse")


@dataclass
class PlaneBasis:
    origin: ParamSet
    dir_u: GradSet
    dir_v: GradSet
    extent: float
    resolution: int
    seed: int

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.resolution)

    def displaced(self, alpha: float, beta: float) -> ParamSet:
        return {k: o + alpha * self.dir_u[k] + beta * self.dir_v[k] for k, o in self.origin.items()}

    def swapped(self) -> "PlaneBasis":
        return PlaneBasis(self.origin, self.dir_v, self.dir_u, self.extent, self.resolution, self.seed)

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "extent": self.extent,
            "resolution": self.resolution,
            "entries": {
                k: {
                    "shape": list(o.shape),
                    "origin_norm": float(np.linalg.norm(o)),
                    "dir_u_norm": float(np.linalg.norm(self.dir_u[k])),
                    "dir_v_norm": float(np.linalg.norm(self.dir_v[k])),
                }
                for k, o in self.origin.items()
            },
            "flat_inner_product": _flat_dot(self.dir_u, self.dir_v),
        }


def _flat_dot(a: GradSet, b: GradSet) -> float:
    return float(sum(np.vdot(a[k], b[k]) for k in a))


def _draw_direction(origin: ParamSet, rng: np.random.Generator) -> GradSet:
    """Gaussian direction rescaled so each entry's norm equals the origin entry's."""
    out = {}
    for k, o in origin.items():
        d = rng.normal(size=o.shape)
        target = np.linalg.norm(o)
        norm = np.linalg.norm(d)
        out[k] = d * (target / norm) if target > 0 and norm > 0 else np.zeros_like(o)
    return out


def _is_degenerate(direction: GradSet, origin: ParamSet) -> bool:
    return any(np.linalg.norm(o) > 0 and np.linalg.norm(direction[k]) == 0 for k, o in origin.items())


def make_plane(origin: ParamSet, seed: int, extent: float = 1.0, resolution: int = 21) -> PlaneBasis:
    """Two entry-normalized random directions, orthogonalized entry by entry.

    Each entry of ``dir_v`` has the component along the same entry of
    ``dir_u`` removed and is then rescaled back to the origin entry's norm, so
    the flattened directions are orthogonal and both match the origin's
    per-entry norms.  Entries whose origin norm is zero get zero directions.
    """
    if resolution < 3 or resolution % 2 == 0:
        raise InvalidInputError("resolution must be an odd number >= 3")
    if extent < 0:
        raise InvalidInputError("extent must be non-negative")
    for attempt in range(MAX_DIRECTION_RETRIES):
        rng = make_rng(seed, f"plane-{attempt}")
        u = _draw_direction(origin, rng)
        v = _draw_direction(origin, rng)
        for k, o in origin.items():
            uu = np.vdot(u[k], u[k])
            if uu > 0:
                v[k] = v[k] - (np.vdot(v[k], u[k]) / uu) * u[k]
            norm = np.linalg.norm(v[k])
            target = np.linalg.norm(o)
            v[k] = v[k] * (target / norm) if norm > 0 else np.zeros_like(o)
        if not (_is_degenerate(u, origin) or _is_degenerate(v, origin)):
            return PlaneBasis(copy_params(origin), u, v, float(extent), int(resolution), seed)
    raise DegenerateFitError(f"no usable direction pair after {MAX_DIRECTION_RETRIES} draws")


@dataclass
class LossGrid:
    values: np.ndarray  # values[i, j] is the loss at (alphas[i], betas[j])
    alphas: np.ndarray
    betas: np.ndarray
    dataset: str = ""

    @property
    def center(self) -> float:
        return float(self.values[len(self.alphas) // 2, len(self.betas) // 2])

    def rows(self):
        for i, a in enumerate(self.alphas):
            for j, b in enumerate(self.betas):
                yield float(a), float(b), float(self.values[i, j])


def dataset_loss(params: ParamSet, arch: MlpArchitecture, dataset: LabeledDataset, kind: str = "ce") -> float:
    """Mean loss on ``dataset``; ``mse`` is the mean squared error to one-hot targets."""
    z = logits(params, arch, dataset.features)
    if kind == "ce":
        loss, _ = cross_entropy(z, dataset.labels)
        return loss
    if kind == "mse":
        target = np.zeros_like(z)
        target[np.arange(len(z)), dataset.labels] = 1.0
        return float(np.mean(np.sum((z - target) ** 2, axis=1)))
    raise InvalidInputError(f"loss kind must be one of {LOSS_KINDS}")


def loss_grid(basis: PlaneBasis, arch: MlpArchitecture, dataset: LabeledDataset, loss: str = "ce") -> LossGrid:
    if len(dataset) == 0:
        raise InvalidInputError("loss grid needs a non-empty dataset")
    axis = basis.axis
    values = np.empty((len(axis), len(axis)))
    with np.errstate(over="ignore", invalid="ignore"):
        for i, a in enumerate(axis):
            for j, b in enumerate(axis):
                v = dataset_loss(basis.displaced(a, b), arch, dataset, loss)
                values[i, j] = v if math.isfinite(v) else math.inf
    return LossGrid(values, axis.copy(), axis.copy(), dataset.name)


def project_trajectory(checkpoints: list[ParamSet], basis: PlaneBasis) -> list[tuple[float, float]]:
    """Least-squares coordinates of each ``theta_t - origin`` in the plane."""
    g = np.array(
        [
            [_flat_dot(basis.dir_u, basis.dir_u), _flat_dot(basis.dir_u, basis.dir_v)],
            [_flat_dot(basis.dir_v, basis.dir_u), _flat_dot(basis.dir_v, basis.dir_v)],
        ]
    )
    out = []
    for theta in checkpoints:
        check_layout(theta, basis.origin)
        d = {k: theta[k] - o for k, o in basis.origin.items()}
        rhs = np.array([_flat_dot(basis.dir_u, d), _flat_dot(basis.dir_v, d)])
        alpha, beta = np.linalg.solve(g, rhs)
        out.append((float(alpha), float(beta)))
    return out


# --- persistence -----------------------------------------------------------


def save_grid(grid: LossGrid, basis: PlaneBasis, stem: str | os.PathLike) -> tuple[Path, Path]:
    stem = Path(stem)
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "beta", "loss"])
        for a, b, v in grid.rows():
            w.writerow([repr(a), repr(b), repr(v)])
    meta = basis.metadata() | {"dataset": grid.dataset, "center_loss": grid.center}
    json_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return csv_path, json_path


def save_trajectory(points: list[tuple[float, float]], path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "alpha", "beta"])
        for step, (a, b) in enumerate(points):
            w.writerow([step, repr(a), repr(b)])
    return path
