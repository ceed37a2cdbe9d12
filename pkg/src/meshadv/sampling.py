"""Area-weighted uniform surface sampling with gradients to mesh vertices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from .mesh import Mesh, MeshError


@dataclass(frozen=True)
class SampleSpec:
    """Which face each sample lies on and where, in barycentric coordinates."""

    face_index: np.ndarray
    barycentric: np.ndarray
    faces: np.ndarray
    seed: int | None = None

    def __len__(self):
        return len(self.face_index)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def draw_samples(mesh: Mesh, n: int, seed=None) -> SampleSpec:
    """Pick faces with probability proportional to area, then a uniform point in each.

    Barycentrics use the square-root trick ``(1 - sqrt(u1), sqrt(u1) (1 - u2), sqrt(u1) u2)``.
    """
    if n < 1:
        raise ValueError("sample count must be positive")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise MeshError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face_index = rng.choice(len(areas), size=n, p=areas / total)
    u1, u2 = rng.random(n), rng.random(n)
    s = np.sqrt(u1)
    bary = np.stack([1.0 - s, s * (1.0 - u2), s * u2], axis=1)
    return SampleSpec(face_index, bary, mesh.faces, seed if isinstance(seed, (int, np.integer)) else None)


def realize(spec: SampleSpec, vertices):
    """Points ``b0 * v_a + b1 * v_b + b2 * v_c``; returns a Node when given one."""
    differentiable = isinstance(vertices, ad.Node)
    v = vertices if differentiable else ad.Node(np.asarray(vertices, dtype=np.float64))
    tri = spec.faces[spec.face_index]
    n_v = v.value.shape[0]
    if tri.size and (tri.min() < 0 or tri.max() >= n_v):
        raise IndexError("sample spec refers to vertices outside the given array")
    b = spec.barycentric
    pts = (ad.take(v, tri[:, 0]) * b[:, 0:1] + ad.take(v, tri[:, 1]) * b[:, 1:2]
           + ad.take(v, tri[:, 2]) * b[:, 2:3])
    return pts if differentiable else pts.value


def sample_points(mesh: Mesh, n: int = 1024, seed=None) -> np.ndarray:
    return realize(draw_samples(mesh, n, seed), mesh.vertices)


def to_xyz(points: np.ndarray) -> str:
    return "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in np.asarray(points))


class SurfaceSampler(TransformerMixin, BaseEstimator):
    """Turn meshes into fixed-size point clouds, for use in pipelines.

    Parameters
    ----------
    n_points : int, default 1024
        Points drawn per mesh.
    random_state : int or None
        Seed; mesh ``i`` of a call uses the ``i``-th spawned child stream.
    """

    def __init__(self, n_points: int = 1024, random_state=None):
        self.n_points = n_points
        self.random_state = random_state

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        meshes = list(X)
        seeds = as_seed_sequence(self.random_state).spawn(len(meshes))
        return np.stack([sample_points(m, self.n_points, s) for m, s in zip(meshes, seeds)])
