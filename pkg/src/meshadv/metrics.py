"""Attack metrics (ASR, Chamfer, curvature distance) and input-space defenses.

Chamfer distance is the symmetric, squared form

    D_c(P, Q) = mean_p min_q |p - q|^2 + mean_q min_p |q - p|^2

computed with exact brute-force nearest neighbours.

Report columns are fixed: see :data:`ROW_COLUMNS` and :data:`AGGREGATE_KEYS`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .classifier import Model, forward
from .geometry import curvature_distance
from .mesh import Mesh
from .sampling import as_seed_sequence, draw_samples, realize
from .transforms import TransformSpace, apply_coords, sample_params

__all__ = ["chamfer", "curvature_distance", "srs", "sor", "Defense", "EvalReport", "evaluate",
           "ROW_COLUMNS", "AGGREGATE_KEYS"]

ROW_COLUMNS = ("id", "target", "attack_success", "d_c", "d_g", "success")
AGGREGATE_KEYS = ("instances", "asr", "mean_d_c", "median_d_c", "mean_d_g", "median_d_g")


def _cloud(x, name) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must be shaped (n, 3), got {arr.shape}")
    if len(arr) == 0:
        raise ValueError(f"{name} is empty")
    return arr


def chamfer(P, Q) -> float:
    """Symmetric squared Chamfer distance; ``chamfer(P, Q) == chamfer(Q, P)``."""
    P, Q = _cloud(P, "P"), _cloud(Q, "Q")
    d = cdist(P, Q, "sqeuclidean")
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def srs(cloud, keep: int, rng=None) -> np.ndarray:
    """Simple random sampling: a uniform subset of ``keep`` points without replacement."""
    cloud = _cloud(cloud, "cloud")
    if keep <= 0:
        raise ValueError("keep count must be positive")
    if keep > len(cloud):
        raise ValueError(f"cannot keep {keep} of {len(cloud)} points")
    idx = np.random.default_rng(rng).choice(len(cloud), size=keep, replace=False)
    return cloud[idx]


def knn_mean_distance(cloud: np.ndarray, k: int) -> np.ndarray:
    d = cdist(cloud, cloud)
    np.fill_diagonal(d, np.inf)
    return np.sort(d, axis=1)[:, :k].mean(axis=1)


def sor(cloud, k: int = 2, alpha: float = 1.1) -> np.ndarray:
    """Statistical outlier removal.

    Drops points whose mean distance to their ``k`` nearest neighbours exceeds
    ``mu + alpha * sigma`` of that statistic over the cloud.
    """
    cloud = _cloud(cloud, "cloud")
    if k <= 0:
        raise ValueError("k must be positive")
    if k >= len(cloud):
        raise ValueError(f"k = {k} needs more than {len(cloud)} points")
    stat = knn_mean_distance(cloud, k)
    keep = stat <= stat.mean() + alpha * stat.std()
    return cloud[keep]


@dataclass(frozen=True)
class Defense:
    """A named, label-agnostic cloud filter: ``srs`` (keep) or ``sor`` (k, alpha)."""

    kind: str
    keep: int = 512
    k: int = 2
    alpha: float = 1.1

    def __post_init__(self):
        if self.kind not in ("srs", "sor"):
            raise ValueError(f"unknown defense {self.kind!r}")

    @property
    def name(self) -> str:
        return self.kind

    def __call__(self, cloud, rng=None) -> np.ndarray:
        if self.kind == "srs":
            return srs(cloud, min(self.keep, len(cloud)), rng)
        return sor(cloud, self.k, self.alpha)

    def describe(self) -> dict:
        return {"srs": {"kind": "srs", "keep": self.keep},
                "sor": {"kind": "sor", "k": self.k, "alpha": self.alpha}}[self.kind]


@dataclass
class EvalReport:
    rows: list
    defenses: list
    settings: dict = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return list(ROW_COLUMNS) + [f"success_{d}" for d in self.defenses]

    def aggregates(self) -> dict:
        n = len(self.rows)
        agg = {"instances": n}

        def rate(col):
            return sum(bool(r[col]) for r in self.rows) / n if n else 0.0

        agg["asr"] = rate("success")
        for d in self.defenses:
            agg[f"asr_{d}"] = rate(f"success_{d}")
        for key in ("d_c", "d_g"):
            vals = [r[key] for r in self.rows if r["attack_success"]]
            agg[f"mean_{key}"] = float(np.mean(vals)) if vals else float("nan")
            agg[f"median_{key}"] = float(np.median(vals)) if vals else float("nan")
        return agg

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({c: (int(r[c]) if isinstance(r[c], bool) else r[c]) for c in self.columns})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns, "rows": self.rows, "aggregates": self.aggregates(),
                           "settings": self.settings}, indent=2, default=float)


def _target_hit(model: Model, clouds, target: int) -> float:
    preds = [int(np.argmax(forward(model, c))) for c in clouds]
    return float(np.mean(np.array(preds) == target))


def evaluate(model: Model, results, defenses=(), rng=None, n_points: int = 1024, resamples: int = 8,
             threshold: float = 0.5, space: TransformSpace | None = None) -> EvalReport:
    """Re-sample every adversarial mesh with fresh seeds, filter, classify and aggregate.

    An instance counts as a success in a column when the target class is hit
    on at least ``threshold`` of the ``resamples`` clouds.  When ``space`` is
    given each resample is also moved by a random transform from it.  Results
    flagged unsuccessful by the attack count as failures everywhere.
    """
    defenses = list(defenses)
    names = [d.name for d in defenses]
    if len(set(names)) != len(names):
        raise ValueError("defense names must be unique")
    rows = []
    seqs = as_seed_sequence(rng).spawn(max(len(results), 1))
    for i, (res, seq) in enumerate(zip(results, seqs)):
        row = {"id": i, "target": int(res.target), "attack_success": bool(res.success),
               "d_c": float(res.d_c), "d_g": float(res.d_g)}
        if not res.success:
            row["success"] = False
            row.update({f"success_{n}": False for n in names})
            rows.append(row)
            continue
        s_pts, s_tr, s_def = seq.spawn(3)
        mesh_faces, verts = res.faces, res.vertices
        clouds = []
        for s in s_pts.spawn(resamples):
            spec = draw_samples(Mesh(verts, mesh_faces), n_points, s)
            clouds.append(realize(spec, verts))
        if space is not None:
            coords = sample_params(space, s_tr, size=resamples)
            clouds = [apply_coords(c, p) for c, p in zip(coords, clouds)]
        row["success"] = _target_hit(model, clouds, res.target) >= threshold
        for d, s in zip(defenses, s_def.spawn(len(defenses))):
            gens = s.spawn(resamples)
            filtered = [d(c, g) for c, g in zip(clouds, gens)]
            row[f"success_{d.name}"] = _target_hit(model, filtered, res.target) >= threshold
        rows.append(row)
    settings = {"n_points": n_points, "resamples": resamples, "threshold": threshold,
                "defenses": [d.describe() for d in defenses],
                "space": None if space is None else space.describe()}
    return EvalReport(rows, names, settings)

