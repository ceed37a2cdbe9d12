"""Rotations, uniform scaling, translation and cutout applied to point clouds.

A transformation is stored as seven coordinates
``(theta_x, theta_y, theta_z, log_scale, t_x, t_y, t_z)``; the point map is
``exp(log_scale) * R @ p + t`` with ``R = Rz @ Ry @ Rx``.  Cutout removes
points and is therefore only available on the non-differentiable path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

N_COORDS = 7
COORD_NAMES = ("theta_x", "theta_y", "theta_z", "log_scale", "t_x", "t_y", "t_z")


@dataclass
class TransformParams:
    angles: np.ndarray = field(default_factory=lambda: np.zeros(3))
    log_scale: float = 0.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cutout: float = 0.0

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not 0.0 <= self.cutout < 0.5:
            raise ValueError("cutout fraction must lie in [0, 0.5)")

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.angles, [self.log_scale], self.translation])

    @classmethod
    def from_coords(cls, coords, cutout: float = 0.0) -> "TransformParams":
        c = np.asarray(coords, dtype=np.float64).reshape(N_COORDS)
        return cls(c[:3], float(c[3]), c[4:], cutout)


@dataclass
class TransformSpace:
    """Box bounds per coordinate plus a mask of coordinates that are searched."""

    lower: np.ndarray
    upper: np.ndarray
    active: np.ndarray
    cutout: float = 0.0

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64).reshape(N_COORDS)
        self.upper = np.asarray(self.upper, dtype=np.float64).reshape(N_COORDS)
        self.active = np.asarray(self.active, dtype=bool).reshape(N_COORDS)
        if np.any(self.lower[self.active] >= self.upper[self.active]):
            raise ValueError("active coordinates need lower < upper")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")

    @classmethod
    def from_config(cls, rot_min=(-np.pi,) * 3, rot_max=(np.pi,) * 3, scale_log_max=0.0,
                    trans_max=0.0, cutout_frac=0.0) -> "TransformSpace":
        rot_min = np.broadcast_to(np.asarray(rot_min, dtype=np.float64), 3)
        rot_max = np.broadcast_to(np.asarray(rot_max, dtype=np.float64), 3)
        lower = np.concatenate([rot_min, [-scale_log_max], [-trans_max] * 3])
        upper = np.concatenate([rot_max, [scale_log_max], [trans_max] * 3])
        return cls(lower, upper, upper > lower, cutout_frac)

    @classmethod
    def rotations(cls, limit: float = np.pi, axes: str = "xyz") -> "TransformSpace":
        lo = [-limit if a in axes else 0.0 for a in "xyz"]
        hi = [limit if a in axes else 0.0 for a in "xyz"]
        return cls.from_config(lo, hi)

    def normalize(self, coords) -> np.ndarray:
        """Map active coordinates to [0, 1]."""
        c = np.atleast_2d(coords)[:, self.active]
        lo, hi = self.lower[self.active], self.upper[self.active]
        return (c - lo) / (hi - lo)

    def denormalize(self, unit) -> np.ndarray:
        unit = np.atleast_2d(unit)
        out = np.zeros((len(unit), N_COORDS))
        lo, hi = self.lower[self.active], self.upper[self.active]
        out[:, self.active] = lo + unit * (hi - lo)
        return out

    def describe(self) -> dict:
        return {name: [float(lo), float(hi)] for name, lo, hi, a
                in zip(COORD_NAMES, self.lower, self.upper, self.active) if a}


def _coord_nodes(params):
    if isinstance(params, ad.Node):
        return params
    if isinstance(params, TransformParams):
        params = params.coords
    return ad.Node(np.asarray(params, dtype=np.float64).reshape(N_COORDS))


def rotation_from_euler(angles):
    """``Rz(theta_z) @ Ry(theta_y) @ Rx(theta_x)``; returns a Node when given one."""
    differentiable = isinstance(angles, ad.Node)
    a = angles if differentiable else ad.Node(np.asarray(angles, dtype=np.float64).reshape(3))
    s, c = ad.sin(a), ad.cos(a)
    sx, sy, sz = s[0], s[1], s[2]
    cx, cy, cz = c[0], c[1], c[2]
    entries = [
        cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
        sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
        -sy, cy * sx, cy * cx,
    ]
    rot = ad.reshape(ad.stack(entries), (3, 3))
    return rot if differentiable else rot.value


def affine_matrix(coords) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(coords, dtype=np.float64).reshape(N_COORDS)
    return np.exp(c[3]) * rotation_from_euler(c[:3]), c[4:].copy()


def apply_coords(coords, cloud):
    """Differentiable ``exp(s) * R p + t`` for every point (row) of ``cloud``."""
    differentiable = isinstance(coords, ad.Node) or isinstance(cloud, ad.Node)
    c = _coord_nodes(coords)
    pts = cloud if isinstance(cloud, ad.Node) else ad.Node(np.asarray(cloud, dtype=np.float64))
    rot = rotation_from_euler(c[0:3])
    out = ad.exp(c[3]) * (pts @ ad.transpose(rot)) + c[4:7]
    return out if differentiable else out.value


def cutout(cloud: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Drop the ``fraction`` of points nearest a randomly chosen point."""
    cloud = np.asarray(cloud)
    n_drop = int(round(fraction * len(cloud)))
    if n_drop == 0:
        return cloud
    rng = np.random.default_rng(rng)
    centre = cloud[rng.integers(len(cloud))]
    order = np.argsort(np.linalg.norm(cloud - centre, axis=1), kind="stable")
    keep = np.sort(order[n_drop:])
    return cloud[keep]


def apply(params: TransformParams, cloud, rng=None):
    """Transform a cloud; cutout (if set) is applied last and only without gradients."""
    if isinstance(params, TransformParams) and params.cutout > 0:
        if isinstance(cloud, ad.Node):
            raise ValueError("cutout is not differentiable; use it on evaluation paths only")
        moved = apply_coords(params.coords, cloud)
        return cutout(moved, params.cutout, rng)
    return apply_coords(params, cloud)


def sample_params(space: TransformSpace, rng, size: int | None = None):
    """Uniform draws on the active coordinates; inactive ones stay neutral (zero)."""
    rng = np.random.default_rng(rng)
    n = 1 if size is None else size
    unit = rng.random((n, int(space.active.sum())))
    coords = space.denormalize(unit)
    if size is None:
        return TransformParams.from_coords(coords[0], space.cutout)
    return coords


def project(params, space: TransformSpace):
    """Clamp coordinates into the bounds box."""
    if isinstance(params, TransformParams):
        return TransformParams.from_coords(project(params.coords, space), params.cutout)
    c = np.clip(np.asarray(params, dtype=np.float64), space.lower, space.upper)
    return c
