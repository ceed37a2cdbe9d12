"""Triangle meshes: storage, OFF/OBJ interchange, topology and procedural shapes."""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np


class MeshError(ValueError):
    """Malformed mesh input or topology violation."""


class MeshParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Mesh:
    """Vertices (n_v, 3) float64 and counter-clockwise triangles (n_f, 3) int64."""

    vertices: np.ndarray
    faces: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def check(self) -> "Mesh":
        if self.n_vertices == 0 or self.n_faces == 0:
            raise MeshError("mesh is empty")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if self.faces.min() < 0 or self.faces.max() >= self.n_vertices:
            raise MeshError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError("face repeats a vertex")
        return self

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(np.array(vertices, dtype=np.float64), self.faces.copy(), self.label)

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return 0.5 * np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)

    def bounding_radius(self) -> float:
        c = self.vertices.mean(axis=0)
        return float(np.linalg.norm(self.vertices - c, axis=1).max())

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# OFF / OBJ


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_off(text: str | io.TextIOBase) -> Mesh:
    """Parse an OFF document holding a triangle mesh."""
    if not isinstance(text, str):
        text = text.read()
    lines = _content_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshParseError("empty OFF document", 1) from None
    rest = ""
    if header.startswith("OFF"):
        rest = header[3:].strip()
    else:
        raise MeshParseError(f"expected 'OFF' header, got {header[:20]!r}", lineno)
    if rest:
        counts_line, counts_text = lineno, rest
    else:
        try:
            counts_line, counts_text = next(lines)
        except StopIteration:
            raise MeshParseError("missing counts line", lineno) from None
    parts = counts_text.split()
    try:
        n_v, n_f = int(parts[0]), int(parts[1])
    except (IndexError, ValueError):
        raise MeshParseError(f"malformed counts line {counts_text!r}", counts_line) from None
    if n_v < 0 or n_f < 0:
        raise MeshParseError("negative element counts", counts_line)

    vertices = np.empty((n_v, 3))
    last = counts_line
    for i in range(n_v):
        try:
            last, line = next(lines)
        except StopIteration:
            raise MeshParseError(f"header declares {n_v} vertices but only {i} provided", last) from None
        vals = line.split()
        if len(vals) < 3:
            raise MeshParseError("vertex needs 3 coordinates", last)
        try:
            vertices[i] = [float(x) for x in vals[:3]]
        except ValueError:
            raise MeshParseError(f"bad vertex coordinates {line!r}", last) from None

    faces = np.empty((n_f, 3), dtype=np.int64)
    for i in range(n_f):
        try:
            last, line = next(lines)
        except StopIteration:
            raise MeshParseError(f"header declares {n_f} faces but only {i} provided", last) from None
        vals = line.split()
        try:
            k = int(vals[0])
            idx = [int(x) for x in vals[1:1 + k]]
        except (ValueError, IndexError):
            raise MeshParseError(f"bad face record {line!r}", last) from None
        if k != 3 or len(idx) != 3:
            raise MeshParseError(f"only triangle faces are supported (got {k}-gon)", last)
        for j in idx:
            if j < 0 or j >= n_v:
                raise MeshParseError(f"face index {j} out of range for {n_v} vertices", last)
        faces[i] = idx
    return Mesh(vertices, faces)


def serialize_off(mesh: Mesh) -> str:
    """OFF text with 17 significant digits, so parsing it back is exact."""
    mesh.check()
    out = io.StringIO()
    out.write("OFF\n")
    out.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
    for x, y, z in mesh.vertices:
        out.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
    for a, b, c in mesh.faces:
        out.write(f"3 {a} {b} {c}\n")
    return out.getvalue()


def parse_obj(text: str | io.TextIOBase) -> Mesh:
    """Read the ``v``/``f`` records of an OBJ file (1-based, triangles only)."""
    if not isinstance(text, str):
        text = text.read()
    verts, faces = [], []
    for lineno, line in _content_lines(text):
        parts = line.split()
        if parts[0] == "v":
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise MeshParseError(f"bad vertex {line!r}", lineno) from None
            if len(verts[-1]) != 3:
                raise MeshParseError("vertex needs 3 coordinates", lineno)
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshParseError("only triangle faces are supported", lineno)
            try:
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            except ValueError:
                raise MeshParseError(f"bad face {line!r}", lineno) from None
            faces.append((lineno, idx))
    n = len(verts)
    for lineno, idx in faces:
        if min(idx) < 0 or max(idx) >= n:
            raise MeshParseError(f"face index out of range for {n} vertices", lineno)
    return Mesh(np.array(verts).reshape(-1, 3), np.array([f for _, f in faces]).reshape(-1, 3))


def load_mesh(path) -> Mesh:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".obj":
        return parse_obj(text)
    return parse_off(text)


def save_off(mesh: Mesh, path) -> None:
    Path(path).write_text(serialize_off(mesh))


# --------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class Topology:
    """Connectivity derived from a face list.

    ``one_rings[v]`` lists the neighbours of ``v`` in the order met when
    walking the incident faces counter-clockwise; ``vertex_faces[v]`` lists
    the incident faces in the same order.  ``edge_faces[e]`` holds the two
    faces adjacent to ``edges[e]`` (``-1`` on a boundary).
    """

    n_vertices: int
    faces: np.ndarray
    one_rings: tuple
    vertex_faces: tuple
    edges: np.ndarray
    edge_faces: np.ndarray
    euler_characteristic: int
    problems: tuple = field(default=())

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def ring_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened one-rings as (centre, neighbour, 1/valence) arrays."""
        src, dst, w = [], [], []
        for v, ring in enumerate(self.one_rings):
            src += [v] * len(ring)
            dst += list(ring)
            w += [1.0 / len(ring)] * len(ring) if ring else []
        return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(w)


def build_topology(mesh: Mesh, strict: bool = True) -> Topology:
    """Build one-rings, incident faces and edge adjacency.

    With ``strict`` set, non-manifold edges and inconsistent orientation
    raise :class:`MeshError`; otherwise they are collected in
    ``Topology.problems`` for :func:`validate_closed_manifold`.
    """
    mesh.check()
    faces = mesh.faces
    n_v = mesh.n_vertices
    problems: list[str] = []

    half = {}
    edge_faces: dict[tuple, list] = {}
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            u, v = int(u), int(v)
            if (u, v) in half:
                msg = f"edge ({u}, {v}) used twice in the same direction (faces {half[(u, v)]} and {fi})"
                if strict:
                    raise MeshError("inconsistent orientation: " + msg)
                problems.append("orientation: " + msg)
            half[(u, v)] = fi
            edge_faces.setdefault((min(u, v), max(u, v)), []).append(fi)

    edges = np.array(sorted(edge_faces), dtype=np.int64).reshape(-1, 2)
    adj = np.full((len(edges), 2), -1, dtype=np.int64)
    for i, key in enumerate((int(a), int(b)) for a, b in edges):
        fs = edge_faces[key]
        if len(fs) > 2:
            msg = f"non-manifold edge {key} shared by {len(fs)} faces"
            if strict:
                raise MeshError(msg)
            problems.append(msg)
        elif len(fs) == 1:
            problems.append(f"boundary edge {key}")
        adj[i, : min(len(fs), 2)] = fs[:2]

    # per vertex: map neighbour -> (face, next neighbour) walking CCW
    incident: list[dict] = [dict() for _ in range(n_v)]
    for fi, (a, b, c) in enumerate(faces):
        for v, p, q in ((a, b, c), (b, c, a), (c, a, b)):
            incident[int(v)][int(p)] = (fi, int(q))

    rings, vfaces = [], []
    for v in range(n_v):
        succ = incident[v]
        if not succ:
            problems.append(f"isolated vertex {v}")
            rings.append(())
            vfaces.append(())
            continue
        start = min(succ)
        ring, fl = [start], []
        cur = start
        closed = False
        while True:
            if cur not in succ:
                break
            fi, nxt = succ[cur]
            fl.append(fi)
            if nxt == start:
                closed = True
                break
            if nxt in ring:
                break
            ring.append(nxt)
            cur = nxt
        if not closed or len(fl) != len(succ):
            problems.append(f"vertex {v} one-ring is not a single closed cycle")
            # fall back to the faces in storage order so callers still see N(v)
            fl = sorted(fi for fi, _ in succ.values())
            ring = sorted(set(succ) | {q for _, q in succ.values()})
        rings.append(tuple(ring))
        vfaces.append(tuple(fl))

    chi = n_v - len(edges) + len(faces)
    return Topology(n_v, faces.copy(), tuple(rings), tuple(vfaces), edges, adj, int(chi), tuple(problems))


def validate_closed_manifold(topology: Topology) -> tuple[bool, list[str]]:
    """True iff every edge has two faces and every one-ring is one closed cycle."""
    diagnostics = list(topology.problems)
    return not diagnostics, diagnostics


def require_closed_manifold(mesh: Mesh, topology: Topology | None = None) -> Topology:
    topo = topology if topology is not None else build_topology(mesh, strict=False)
    ok, diag = validate_closed_manifold(topo)
    if not ok:
        shown = "; ".join(diag[:5])
        raise MeshError(f"mesh is not a closed manifold ({len(diag)} problems): {shown}")
    return topo


# --------------------------------------------------------------------------
# procedural shapes

SHAPE_KINDS = ("icosphere", "box", "torus", "capped-cylinder", "capped-cone", "ellipsoid")

_DEFAULTS = {
    "icosphere": {"radius": 1.0, "subdivisions": 2},
    "ellipsoid": {"radii": (1.0, 0.8, 0.6), "subdivisions": 2},
    "box": {"size": (1.0, 1.0, 1.0), "grid": 4},
    "torus": {"major_radius": 1.0, "minor_radius": 0.35, "nu": 16, "nv": 12},
    "capped-cylinder": {"radius": 0.5, "height": 1.5, "segments": 16, "rings": 6, "cap_rings": 2},
    "capped-cone": {"radius": 0.6, "height": 1.5, "segments": 16, "rings": 6, "cap_rings": 2},
}


@dataclass
class ShapeSpec:
    """Recipe for a closed procedural mesh.

    ``params`` overrides the per-kind defaults.  In dataset templates a
    parameter given as a ``(low, high)`` pair of floats under the key
    ``"<name>_range"`` is drawn uniformly per instance.
    """

    kind: str
    params: dict = field(default_factory=dict)
    jitter: float = 0.0
    seed: int = 0

    def resolved(self) -> dict:
        if self.kind not in _DEFAULTS:
            raise MeshError(f"unknown shape kind {self.kind!r}; expected one of {SHAPE_KINDS}")
        out = dict(_DEFAULTS[self.kind])
        unknown = set(self.params) - set(out)
        if unknown:
            raise MeshError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        out.update(self.params)
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params), "jitter": self.jitter, "seed": self.seed}


def _jsonable(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _icosahedron():
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def icosphere(radius: float = 1.0, subdivisions: int = 2) -> Mesh:
    """Subdivided icosahedron on a sphere: 10*4**k + 2 vertices."""
    v, f = _icosahedron()
    verts = list(v)
    for _ in range(subdivisions):
        cache: dict[tuple, int] = {}
        new_faces = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = (verts[a] + verts[b]) / 2.0
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = np.array(new_faces, dtype=np.int64)
    return Mesh(np.array(verts) * radius, f)


def _grid_faces(rows: int, cols: int, index, wrap_cols: bool, flip: bool = False):
    faces = []
    ncols = cols if wrap_cols else cols - 1
    for i in range(rows - 1):
        for j in range(ncols):
            j2 = (j + 1) % cols
            a, b, c, d = index(i, j), index(i, j2), index(i + 1, j2), index(i + 1, j)
            tri = [[a, b, c], [a, c, d]] if (i + j) % 2 == 0 else [[a, b, d], [b, c, d]]
            if flip:
                tri = [[x, z, y] for x, y, z in tri]
            faces += tri
    return faces


def box(size=(1.0, 1.0, 1.0), grid: int = 4) -> Mesh:
    """Axis-aligned box with each face split into a grid x grid lattice."""
    if grid < 1:
        raise MeshError("box grid must be >= 1")
    n = grid
    sx, sy, sz = (float(s) / 2.0 for s in size)
    verts: list = []
    lookup: dict[tuple, int] = {}

    def vid(ix, iy, iz):
        key = (ix, iy, iz)
        if key not in lookup:
            lookup[key] = len(verts)
            verts.append([sx * (2 * ix / n - 1), sy * (2 * iy / n - 1), sz * (2 * iz / n - 1)])
        return lookup[key]

    faces = []
    # each side: fixed axis, fixed value, (u axis, v axis) chosen so u x v = outward normal
    sides = [
        (0, n, 1, 2), (0, 0, 2, 1),
        (1, n, 2, 0), (1, 0, 0, 2),
        (2, n, 0, 1), (2, 0, 1, 0),
    ]
    for axis, val, ua, va in sides:
        def idx(i, j, axis=axis, val=val, ua=ua, va=va):
            c = [0, 0, 0]
            c[axis], c[ua], c[va] = val, i, j
            return vid(*c)
        for i in range(n):
            for j in range(n):
                a, b, c_, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
                if (i + j) % 2 == 0:
                    faces += [[a, b, c_], [a, c_, d]]
                else:
                    faces += [[a, b, d], [b, c_, d]]
    return Mesh(np.array(verts), np.array(faces))


def torus(major_radius: float = 1.0, minor_radius: float = 0.35, nu: int = 16, nv: int = 12) -> Mesh:
    if minor_radius >= major_radius:
        raise MeshError("torus needs minor_radius < major_radius")
    if nu < 3 or nv < 3:
        raise MeshError("torus tessellation counts must be >= 3")
    R, r = major_radius, minor_radius
    u = 2 * np.pi * np.arange(nu) / nu
    v = 2 * np.pi * np.arange(nv) / nv
    U, V = np.meshgrid(u, v, indexing="ij")
    verts = np.stack([(R + r * np.cos(V)) * np.cos(U), (R + r * np.cos(V)) * np.sin(U), r * np.sin(V)], -1)
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [[a, b, c], [a, c, d]]
    return Mesh(verts.reshape(-1, 3), np.array(faces))


def _surface_of_revolution(profile, segments: int) -> Mesh:
    """Revolve a profile [(radius, z), ...] from bottom pole to top pole around z.

    The first and last profile points must have radius 0 (poles).
    """
    if segments < 3:
        raise MeshError("segments must be >= 3")
    inner = profile[1:-1]
    theta = 2 * np.pi * np.arange(segments) / segments
    verts = [[0.0, 0.0, profile[0][1]]]
    for rad, z in inner:
        for t in theta:
            verts.append([rad * math.cos(t), rad * math.sin(t), z])
    verts.append([0.0, 0.0, profile[-1][1]])
    top = len(verts) - 1
    m = len(inner)

    def ring(i, j):
        return 1 + i * segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append([0, ring(0, j + 1), ring(0, j)])
    for i in range(m - 1):
        for j in range(segments):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j + 1), ring(i + 1, j)
            faces += [[a, b, c], [a, c, d]]
    for j in range(segments):
        faces.append([top, ring(m - 1, j), ring(m - 1, j + 1)])
    return Mesh(np.array(verts), np.array(faces))


def capped_cylinder(radius=0.5, height=1.5, segments=16, rings=6, cap_rings=2) -> Mesh:
    if rings < 2 or cap_rings < 1:
        raise MeshError("cylinder needs rings >= 2 and cap_rings >= 1")
    h = height / 2.0
    prof = [(0.0, -h)]
    prof += [(radius * k / cap_rings, -h) for k in range(1, cap_rings)]
    prof += [(radius, -h + height * i / (rings - 1)) for i in range(rings)]
    prof += [(radius * k / cap_rings, h) for k in range(cap_rings - 1, 0, -1)]
    prof.append((0.0, h))
    return _surface_of_revolution(prof, segments)


def capped_cone(radius=0.6, height=1.5, segments=16, rings=6, cap_rings=2) -> Mesh:
    if rings < 2 or cap_rings < 1:
        raise MeshError("cone needs rings >= 2 and cap_rings >= 1")
    h = height / 2.0
    prof = [(0.0, -h)]
    prof += [(radius * k / cap_rings, -h) for k in range(1, cap_rings)]
    prof += [(radius * (1 - i / rings), -h + height * i / rings) for i in range(rings)]
    prof.append((0.0, h))
    return _surface_of_revolution(prof, segments)


def ellipsoid(radii=(1.0, 0.8, 0.6), subdivisions: int = 2) -> Mesh:
    m = icosphere(1.0, subdivisions)
    return Mesh(m.vertices * np.asarray(radii, dtype=np.float64), m.faces)


def _vertex_normals(mesh: Mesh) -> np.ndarray:
    v, f = mesh.vertices, mesh.faces
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    n = np.zeros_like(v)
    for k in range(3):
        np.add.at(n, f[:, k], fn)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def generate(spec: ShapeSpec) -> Mesh:
    """Build the closed mesh described by ``spec``; jitter displaces along normals."""
    p = spec.resolved()
    kind = spec.kind
    for key in ("subdivisions",):
        if key in p and p[key] < 0:
            raise MeshError(f"{key} must be >= 0")
    for key in ("nu", "nv", "segments"):
        if key in p and p[key] < 3:
            raise MeshError(f"tessellation count {key} must be >= 3")
    if spec.jitter < 0:
        raise MeshError("jitter amplitude must be >= 0")
    builders = {
        "icosphere": icosphere, "box": box, "torus": torus,
        "capped-cylinder": capped_cylinder, "capped-cone": capped_cone, "ellipsoid": ellipsoid,
    }
    mesh = builders[kind](**p)
    if spec.jitter > 0:
        rng = np.random.default_rng(spec.seed)
        amp = spec.jitter * mesh.bounding_radius()
        normals = _vertex_normals(mesh)
        offsets = rng.uniform(-amp, amp, size=mesh.n_vertices)
        mesh = mesh.with_vertices(mesh.vertices + offsets[:, None] * normals)
    topo = build_topology(mesh, strict=False)
    ok, diag = validate_closed_manifold(topo)
    if not ok:
        raise MeshError(f"generated {kind} is not a closed manifold: {diag[:3]}")
    if mesh.face_areas().min() < 1e-12:
        raise MeshError(f"generated {kind} has degenerate faces; reduce jitter")
    return mesh


# --------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    train: list
    test: list
    class_names: list
    seed: int
    records: list = field(default_factory=list)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for m in self.train + self.test:
            h.update(m.checksum().encode())
            h.update(str(m.label).encode())
        return h.hexdigest()


def _draw_params(template: ShapeSpec, rng: np.random.Generator) -> dict:
    params = {}
    for key, val in template.params.items():
        if key.endswith("_range"):
            lo, hi = val
            params[key[: -len("_range")]] = float(rng.uniform(lo, hi))
        else:
            params[key] = val
    return params


def make_dataset(templates: Iterable[ShapeSpec], per_class: int, split: float = 0.8,
                 seed: int = 0, class_names: list | None = None) -> Dataset:
    """Labelled train/test meshes; template ``i`` gives class ``i``."""
    templates = list(templates)
    if len(templates) < 2:
        raise MeshError("a dataset needs at least 2 classes")
    if per_class < 2:
        raise MeshError("per-class count must be >= 2")
    n_train = int(round(per_class * split))
    if n_train >= per_class:
        raise MeshError("split leaves an empty test set")
    if n_train < 1:
        raise MeshError("split leaves an empty training set")
    names = class_names or [t.kind for t in templates]
    root = np.random.SeedSequence(seed)
    train, test, records = [], [], []
    for label, (tmpl, child) in enumerate(zip(templates, root.spawn(len(templates)))):
        rng = np.random.default_rng(child)
        for i in range(per_class):
            spec = ShapeSpec(tmpl.kind, _draw_params(tmpl, rng), tmpl.jitter, int(rng.integers(2**31)))
            mesh = generate(spec)
            mesh.label = label
            part = "train" if i < n_train else "test"
            (train if part == "train" else test).append(mesh)
            records.append({"label": label, "split": part, "spec": spec.to_dict()})
    return Dataset(train, test, names, seed, records)


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write OFF files plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "meshes").mkdir(parents=True, exist_ok=True)
    entries = []
    counters = {"train": 0, "test": 0}
    meshes = {"train": iter(dataset.train), "test": iter(dataset.test)}
    for rec in dataset.records:
        mesh = next(meshes[rec["split"]])
        name = f"{rec['split']}_{counters[rec['split']]:04d}_{dataset.class_names[rec['label']]}.off"
        counters[rec["split"]] += 1
        save_off(mesh, out_dir / "meshes" / name)
        entries.append({"path": f"meshes/{name}", "label": rec["label"], "split": rec["split"],
                        "spec": rec["spec"], "sha256": mesh.checksum()})
    manifest = {"seed": dataset.seed, "class_names": dataset.class_names, "meshes": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    train, test = [], []
    for e in doc["meshes"]:
        mesh = load_mesh(manifest_path.parent / e["path"])
        mesh.label = int(e["label"])
        (train if e["split"] == "train" else test).append(mesh)
    return Dataset(train, test, list(doc["class_names"]), int(doc["seed"]), doc["meshes"])
