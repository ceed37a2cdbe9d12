"""Discrete Gaussian curvature, mesh regularisers and an analytic curvature oracle.

Curvature at a vertex is the angle defect divided by the vertex cell area::

    K(v) = (2*pi - sum of interior angles at v) / A(v)

With the default barycentric cell (one third of each incident face) the
cell areas tile the surface, so ``sum(K * A) == 2*pi*chi`` holds to
round-off for any closed mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .mesh import Mesh, MeshError, Topology, build_topology, require_closed_manifold

DEGENERATE_AREA = 1e-12
AREA_SCHEMES = {"barycentric": 1.0 / 3.0, "midpoint": 1.0 / 4.0}


class DegenerateTriangleError(MeshError):
    def __init__(self, faces):
        self.faces = np.asarray(faces)
        shown = ", ".join(map(str, self.faces[:5]))
        super().__init__(f"degenerate triangle(s) with area < {DEGENERATE_AREA:g}: faces {shown}")


@dataclass
class CurvatureField:
    """Per-vertex Gaussian curvature, cell area and angle defect."""

    curvature: np.ndarray
    area: np.ndarray
    defect: np.ndarray

    def total(self) -> float:
        """Integrated curvature, which equals the summed angle defect."""
        return float(np.sum(self.curvature * self.area))

    def to_csv(self) -> str:
        rows = ["vertex_id,defect,area,K"]
        rows += [f"{i},{d:.17g},{a:.17g},{k:.17g}"
                 for i, (d, a, k) in enumerate(zip(self.defect, self.area, self.curvature))]
        return "\n".join(rows) + "\n"


def _vertices(x, tape=None):
    if isinstance(x, ad.Node):
        return x
    if isinstance(x, Mesh):
        x = x.vertices
    return ad.Node(np.asarray(x, dtype=np.float64), tape=tape)


def _out(node: ad.Node, differentiable: bool):
    return node if differentiable else float(node.value)


def interior_angles(p0, p1, p2) -> np.ndarray:
    """Angles of triangle (p0, p1, p2) at p0, p1 and p2, in radians."""
    pts = np.asarray([p0, p1, p2], dtype=np.float64)
    lengths = np.linalg.norm(pts[[1, 2, 0]] - pts, axis=1)
    if lengths.min() <= 1e-12:
        raise DegenerateTriangleError([0])
    angles = triangle_angles(ad.Node(pts), np.array([[0, 1, 2]]))
    return angles.value[0]


def triangle_angles(vertices: ad.Node, faces: np.ndarray) -> ad.Node:
    """Interior angle at each corner of each face, shape (n_f, 3)."""
    corners = []
    for k in range(3):
        p = ad.take(vertices, faces[:, k])
        a = ad.take(vertices, faces[:, (k + 1) % 3]) - p
        b = ad.take(vertices, faces[:, (k + 2) % 3]) - p
        cosine = ad.dot(a, b) / (ad.norm(a) * ad.norm(b))
        corners.append(ad.acos(cosine))
    return ad.stack(corners, axis=1)


def face_areas(vertices: ad.Node, faces: np.ndarray) -> ad.Node:
    p0 = ad.take(vertices, faces[:, 0])
    cr = ad.cross(ad.take(vertices, faces[:, 1]) - p0, ad.take(vertices, faces[:, 2]) - p0)
    return 0.5 * ad.norm(cr)


def curvature_terms(vertices: ad.Node, topology: Topology, area: str = "barycentric"):
    """Differentiable (K, A, defect) per vertex."""
    if area not in AREA_SCHEMES:
        raise ValueError(f"unknown area scheme {area!r}; expected one of {sorted(AREA_SCHEMES)}")
    faces = topology.faces
    n = topology.n_vertices
    areas = face_areas(vertices, faces)
    tiny = np.flatnonzero(areas.value < DEGENERATE_AREA)
    if tiny.size:
        raise DegenerateTriangleError(tiny)
    angles = triangle_angles(vertices, faces)
    angle_sum = ad.scatter_add(ad.reshape(angles, (-1,)), faces.reshape(-1), n)
    defect = 2.0 * np.pi - angle_sum
    per_corner = ad.reshape(ad.stack([areas, areas, areas], axis=1), (-1,))
    cell = ad.scatter_add(per_corner, faces.reshape(-1), n) * AREA_SCHEMES[area]
    return defect / cell, cell, defect


def gaussian_curvature(mesh: Mesh, topology: Topology | None = None,
                       area: str = "barycentric") -> CurvatureField:
    """Angle-defect Gaussian curvature of a closed mesh."""
    topology = require_closed_manifold(mesh, topology)
    k, a, d = curvature_terms(ad.Node(mesh.vertices), topology, area)
    return CurvatureField(k.value, a.value, d.value)


def _check_shared_faces(adv_faces, orig: Mesh | None, topology: Topology):
    if orig is not None and isinstance(orig, Mesh) and not np.array_equal(orig.faces, topology.faces):
        raise MeshError("adversarial and original meshes must share the face list")
    if adv_faces is not None and not np.array_equal(adv_faces, topology.faces):
        raise MeshError("adversarial and original meshes must share the face list")


def r_gauss(adv, orig, topology: Topology | None = None, area: str = "barycentric",
            orig_curvature: np.ndarray | None = None):
    """Mean squared per-vertex curvature difference between ``adv`` and ``orig``.

    ``adv`` may be a Mesh, a vertex array or a tape Node (in which case a
    Node is returned).  Vertices correspond by index since faces are shared.
    """
    if topology is None:
        topology = require_closed_manifold(orig, None)
    _check_shared_faces(adv.faces if isinstance(adv, Mesh) else None, orig, topology)
    differentiable = isinstance(adv, ad.Node)
    k_adv, _, _ = curvature_terms(_vertices(adv), topology, area)
    if orig_curvature is None:
        orig_curvature = curvature_terms(_vertices(orig), topology, area)[0].value
    diff = k_adv - orig_curvature
    return _out(ad.mean(diff * diff), differentiable)


def r_lap(adv, topology: Topology):
    """Mean squared distance from each vertex to its one-ring centroid."""
    src, dst, w = topology.ring_pairs
    if any(len(r) == 0 for r in topology.one_rings):
        raise MeshError("vertex with an empty one-ring")
    differentiable = isinstance(adv, ad.Node)
    v = _vertices(adv)
    centroid = ad.scatter_add(ad.take(v, dst) * w[:, None], src, topology.n_vertices)
    offset = v - centroid
    return _out(ad.mean(ad.sum(offset * offset, axis=1)), differentiable)


def r_edge(adv, topology: Topology, reference=None):
    """Mean squared edge length.

    With ``reference`` vertices given, penalises the squared change of each
    edge length instead (the delta variant).
    """
    differentiable = isinstance(adv, ad.Node)
    v = _vertices(adv)
    e = topology.edges
    vec = ad.take(v, e[:, 1]) - ad.take(v, e[:, 0])
    if reference is None:
        return _out(ad.mean(ad.sum(vec * vec, axis=1)), differentiable)
    ref = reference.vertices if isinstance(reference, Mesh) else np.asarray(reference)
    ref_len = np.linalg.norm(ref[e[:, 1]] - ref[e[:, 0]], axis=1)
    delta = ad.norm(vec) - ref_len
    return _out(ad.mean(delta * delta), differentiable)


@dataclass
class RegularizerWeights:
    gauss: float = 1.0
    lap: float = 0.2
    edge: float = 0.8

    def __post_init__(self):
        if min(self.gauss, self.lap, self.edge) < 0:
            raise ValueError("regulariser weights must be non-negative")


def total_regularizer(adv, orig, topology: Topology, lambda1: float = 1.0, lambda2: float = 0.2,
                      lambda3: float = 0.8, area: str = "barycentric", edge_delta: bool = False,
                      orig_curvature: np.ndarray | None = None):
    """``lambda1 * r_gauss + lambda2 * r_lap + lambda3 * r_edge``; zero weights skip their term."""
    RegularizerWeights(lambda1, lambda2, lambda3)
    differentiable = isinstance(adv, ad.Node)
    v = _vertices(adv)
    total = ad.Node(np.zeros(()))
    if lambda1:
        total = total + lambda1 * r_gauss(v, orig, topology, area, orig_curvature)
    if lambda2:
        total = total + lambda2 * r_lap(v, topology)
    if lambda3:
        total = total + lambda3 * r_edge(v, topology, orig if edge_delta else None)
    return _out(total, differentiable)


def curvature_distance(adv: Mesh, orig: Mesh, topology: Topology | None = None,
                       area: str = "barycentric") -> float:
    """D_g metric: the value of :func:`r_gauss` without recording gradients."""
    if topology is None:
        topology = require_closed_manifold(orig)
    return r_gauss(adv, orig, topology, area)


# --------------------------------------------------------------------------
# parametric surfaces


@dataclass
class ParametricSurface:
    """A surface r(u, v) with closed-form first and second partial derivatives."""

    name: str
    r: Callable
    r_u: Callable
    r_v: Callable
    r_uu: Callable
    r_uv: Callable
    r_vv: Callable


def sphere_surface(radius: float = 1.0) -> ParametricSurface:
    """u = polar angle in (0, pi), v = azimuth."""
    R = radius
    return ParametricSurface(
        "sphere",
        lambda u, v: R * np.array([np.sin(u) * np.cos(v), np.sin(u) * np.sin(v), np.cos(u)]),
        lambda u, v: R * np.array([np.cos(u) * np.cos(v), np.cos(u) * np.sin(v), -np.sin(u)]),
        lambda u, v: R * np.array([-np.sin(u) * np.sin(v), np.sin(u) * np.cos(v), 0.0]),
        lambda u, v: R * np.array([-np.sin(u) * np.cos(v), -np.sin(u) * np.sin(v), -np.cos(u)]),
        lambda u, v: R * np.array([-np.cos(u) * np.sin(v), np.cos(u) * np.cos(v), 0.0]),
        lambda u, v: R * np.array([-np.sin(u) * np.cos(v), -np.sin(u) * np.sin(v), 0.0]),
    )


def plane_surface() -> ParametricSurface:
    zero = lambda u, v: np.zeros(3)  # noqa: E731
    return ParametricSurface(
        "plane",
        lambda u, v: np.array([u, v, 0.0]),
        lambda u, v: np.array([1.0, 0.0, 0.0]),
        lambda u, v: np.array([0.0, 1.0, 0.0]),
        zero, zero, zero,
    )


def torus_surface(major_radius: float, minor_radius: float) -> ParametricSurface:
    """u = angle around the axis, v = angle around the tube."""
    R, r = major_radius, minor_radius
    return ParametricSurface(
        "torus",
        lambda u, v: np.array([(R + r * np.cos(v)) * np.cos(u), (R + r * np.cos(v)) * np.sin(u), r * np.sin(v)]),
        lambda u, v: np.array([-(R + r * np.cos(v)) * np.sin(u), (R + r * np.cos(v)) * np.cos(u), 0.0]),
        lambda u, v: np.array([-r * np.sin(v) * np.cos(u), -r * np.sin(v) * np.sin(u), r * np.cos(v)]),
        lambda u, v: np.array([-(R + r * np.cos(v)) * np.cos(u), -(R + r * np.cos(v)) * np.sin(u), 0.0]),
        lambda u, v: np.array([r * np.sin(v) * np.sin(u), -r * np.sin(v) * np.cos(u), 0.0]),
        lambda u, v: np.array([-r * np.cos(v) * np.cos(u), -r * np.cos(v) * np.sin(u), -r * np.sin(v)]),
    )


def analytic_gaussian_curvature(surface: ParametricSurface, u: float, v: float) -> float:
    """K = (LN - M^2) / (EG - F^2) from the two fundamental forms."""
    ru, rv = surface.r_u(u, v), surface.r_v(u, v)
    E, F, G = ru @ ru, ru @ rv, rv @ rv
    det_first = E * G - F * F
    if det_first <= 1e-14:
        raise ValueError(f"singular parameterisation of {surface.name} at ({u}, {v})")
    n = np.cross(ru, rv)
    n = n / np.linalg.norm(n)
    L, M, N = surface.r_uu(u, v) @ n, surface.r_uv(u, v) @ n, surface.r_vv(u, v) @ n
    return float((L * N - M * M) / det_first)


__all__ = [
    "CurvatureField", "DegenerateTriangleError", "ParametricSurface", "analytic_gaussian_curvature",
    "curvature_distance", "curvature_terms", "gaussian_curvature", "interior_angles",
    "plane_surface", "r_edge", "r_gauss", "r_lap", "sphere_surface", "torus_surface", "total_regularizer",
]
