"""Triangulated parameter domains and per-vertex fields.

The disc mesh is a hexagonal ring triangulation: ring j carries 6j vertices.
Ring j is a blend of the hexagon of radius j/N and the circle of the same
radius with weight j/N, so the outer ring sits exactly on the unit circle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

MAX_LEVEL = 9
MIN_ANGLE_DEG = 20.0


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loops: tuple = ()
    refinement_level: int = 0
    # unwrapped per-triangle corner coordinates, used by periodic grids
    tri_coords: np.ndarray | None = None
    period: tuple | None = None
    kind: str = "disc"

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must be (n, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be (T, 3)")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary_loops",
                           tuple(np.asarray(b, dtype=np.int64) for b in self.boundary_loops))
        if np.any(self.areas <= 0):
            raise ValueError("triangles must be positively oriented")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def boundary_loop(self) -> np.ndarray:
        if not self.boundary_loops:
            return np.zeros(0, dtype=np.int64)
        return self.boundary_loops[0]

    @cached_property
    def corners(self) -> np.ndarray:
        """(T, 3, 2) corner coordinates, unwrapped for periodic meshes."""
        if self.tri_coords is not None:
            return np.asarray(self.tri_coords, dtype=float)
        return self.vertices[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        c = self.corners
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """(T, 3, 2) constant gradients of the three hat functions."""
        c = self.corners
        g = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            a = c[:, (k + 1) % 3]
            b = c[:, (k + 2) % 3]
            # rotate the opposite edge by -90 degrees
            g[:, k, 0] = (a[:, 1] - b[:, 1])
            g[:, k, 1] = (b[:, 0] - a[:, 0])
        return g / (2.0 * self.areas)[:, None, None]

    @cached_property
    def vertex_area(self) -> np.ndarray:
        m = np.zeros(self.n_vertices)
        np.add.at(m, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return m

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        for b in self.boundary_loops:
            mask[b] = True
        return mask

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def h(self) -> float:
        c = self.corners
        e = np.linalg.norm(c - np.roll(c, 1, axis=1), axis=2)
        return float(e.max())

    def min_angle(self) -> float:
        c = self.corners
        ang = []
        for k in range(3):
            u = c[:, (k + 1) % 3] - c[:, k]
            w = c[:, (k + 2) % 3] - c[:, k]
            cosv = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            ang.append(np.degrees(np.arccos(np.clip(cosv, -1, 1))))
        return float(np.min(ang))

    @cached_property
    def _trifinder(self):
        import matplotlib.tri as mtri
        if self.tri_coords is not None:
            raise ValueError("point location is not available on periodic meshes")
        tri = mtri.Triangulation(self.vertices[:, 0], self.vertices[:, 1], self.triangles)
        return tri.get_trifinder()

    def locate(self, points) -> np.ndarray:
        """Triangle index containing each point, -1 outside."""
        p = np.asarray(points, dtype=float)
        return np.asarray(self._trifinder(p[:, 0], p[:, 1]), dtype=np.int64)

    def barycentric(self, points, tri_idx) -> np.ndarray:
        c = self.corners[tri_idx]
        p = np.asarray(points, dtype=float)
        e1, e2, d = c[:, 1] - c[:, 0], c[:, 2] - c[:, 0], p - c[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        return np.column_stack([1 - l1 - l2, l1, l2])

    def total_area(self) -> float:
        return float(self.areas.sum())

    def scaled(self, factor: float) -> "TriMesh":
        tc = None if self.tri_coords is None else self.tri_coords * factor
        per = None if self.period is None else tuple(p * factor for p in self.period)
        return TriMesh(self.vertices * factor, self.triangles, self.boundary_loops,
                       self.refinement_level, tc, per, self.kind)


@dataclass(frozen=True, eq=False)
class FieldRm:
    mesh: TriMesh
    values: np.ndarray
    name: str = field(default="u")

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.mesh.n_vertices:
            raise ValueError(f"field has {v.shape[0]} rows, mesh has {self.mesh.n_vertices} vertices")
        if v.shape[1] < 1:
            raise ValueError("m must be >= 1")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def scalar(self) -> np.ndarray:
        if self.m != 1:
            raise ValueError("field is not scalar")
        return self.values[:, 0]


def _ring_offset(j: int) -> int:
    return 0 if j == 0 else 1 + 3 * j * (j - 1)


@lru_cache(maxsize=16)
def build_disc_mesh(refinement_level: int, radius: float = 1.0) -> TriMesh:
    """Hexagonal ring triangulation of the disc with N = 2**level rings."""
    if not isinstance(refinement_level, (int, np.integer)) or not 0 <= refinement_level <= MAX_LEVEL:
        raise ValueError(f"refinement_level must be an integer in [0, {MAX_LEVEL}]")
    n = 2 ** int(refinement_level)
    corners = np.array([[np.cos(s * np.pi / 3), np.sin(s * np.pi / 3)] for s in range(7)])

    verts = [np.zeros((1, 2))]
    for j in range(1, n + 1):
        t = np.arange(6 * j)
        s, q = t // j, t % j
        hexp = ((j - q)[:, None] * corners[s] + q[:, None] * corners[s + 1]) / n
        # blend linearly from the hexagon at the centre to the circle at the rim;
        # a pure radial projection is kinked at 0 and costs the O(h^2) nodal rate
        sr = j / n
        c = sr / np.linalg.norm(hexp, axis=1)
        verts.append(hexp * (1.0 + (c - 1.0) * sr)[:, None])
    verts = np.vstack(verts)
    # keep the boundary exactly on the circle
    nb = 6 * n
    ang = np.arctan2(verts[-nb:, 1], verts[-nb:, 0])
    verts[-nb:] = np.column_stack([np.cos(ang), np.sin(ang)])

    tris = []
    for j in range(0, n):
        for s in range(6):
            def inner(q):
                if j == 0:
                    return 0
                return _ring_offset(j) + (s * j + q) % (6 * j)

            def outer(q):
                return _ring_offset(j + 1) + (s * (j + 1) + q) % (6 * (j + 1))

            for q in range(j + 1):
                tris.append((inner(q), outer(q), outer(q + 1)))
            for q in range(j):
                tris.append((inner(q), outer(q + 1), inner(q + 1)))
    tris = np.array(tris, dtype=np.int64)
    tris = _orient(verts, tris)
    boundary = np.arange(len(verts) - nb, len(verts))
    return TriMesh(verts * radius, tris, (boundary,), int(refinement_level))


def _orient(verts, tris):
    c = verts[tris]
    e1, e2 = c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]
    neg = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def build_annulus_mesh(r_inner: float, refinement_level: int, r_outer: float = 1.0) -> TriMesh:
    """Log-graded annulus: 6*2**level points per ring, near-square cells."""
    if not 0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")
    nt = 6 * 2 ** int(refinement_level)
    dtheta = 2 * np.pi / nt
    nr = max(2, int(np.ceil(np.log(r_outer / r_inner) / dtheta)))
    radii = r_inner * (r_outer / r_inner) ** (np.arange(nr + 1) / nr)
    theta = np.arange(nt) * dtheta
    verts = np.empty(((nr + 1) * nt, 2))
    for j, r in enumerate(radii):
        # stagger alternate rings for better angles
        th = theta + (0.5 * dtheta if j % 2 else 0.0)
        verts[j * nt:(j + 1) * nt] = r * np.column_stack([np.cos(th), np.sin(th)])
    tris = []
    idx = np.arange(nt)
    for j in range(nr):
        a = j * nt + idx
        b = j * nt + (idx + 1) % nt
        c = (j + 1) * nt + idx
        d = (j + 1) * nt + (idx + 1) % nt
        if j % 2 == 0:
            tris.append(np.column_stack([a, b, c]))
            tris.append(np.column_stack([b, d, c]))
        else:
            tris.append(np.column_stack([a, d, c]))
            tris.append(np.column_stack([a, b, d]))
    tris = _orient(verts, np.vstack(tris))
    outer = np.arange(nr * nt, (nr + 1) * nt)
    inner = np.arange(nt)
    return TriMesh(verts, tris, (outer, inner), int(refinement_level), kind="annulus")


def build_periodic_grid(n1: int, n2: int, l1: float = 2 * np.pi, l2: float = 2 * np.pi) -> TriMesh:
    """Closed torus grid on [0, l1) x [0, l2) with wraparound connectivity."""
    x = np.arange(n1) * (l1 / n1)
    y = np.arange(n2) * (l2 / n2)
    X, Y = np.meshgrid(x, y, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    i, j = i.ravel(), j.ravel()

    def vid(a, b):
        return (a % n1) * n2 + (b % n2)

    t1 = np.column_stack([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)])
    t2 = np.column_stack([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)])
    base = np.column_stack([x[i], y[j]])
    dx, dy = l1 / n1, l2 / n2
    c1 = np.stack([base, base + [dx, 0], base + [dx, dy]], axis=1)
    c2 = np.stack([base, base + [dx, dy], base + [0, dy]], axis=1)
    return TriMesh(verts, np.vstack([t1, t2]), (), int(np.log2(max(n1, 2))),
                   np.concatenate([c1, c2]), (l1, l2), kind="periodic")


def export_obj(mesh: TriMesh, path, positions: np.ndarray | None = None) -> Path:
    path = Path(path)
    pos = positions if positions is not None else np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    pos = np.asarray(pos, dtype=float)
    if pos.shape[1] < 3:
        pos = np.column_stack([pos, np.zeros((len(pos), 3 - pos.shape[1]))])
    with path.open("w") as fh:
        for p in pos:
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.triangles + 1:
            fh.write(f"f {t[0]} {t[1]} {t[2]}\n")
    return path


def export_vtk(mesh: TriMesh, path, fields: dict | None = None) -> Path:
    path = Path(path)
    n = mesh.n_vertices
    lines = ["# vtk DataFile Version 3.0", "conformal-lab mesh", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {mesh.n_triangles}")
    lines += ["5"] * mesh.n_triangles
    if fields:
        lines.append(f"POINT_DATA {n}")
        for name, vals in fields.items():
            vals = np.asarray(vals, dtype=float).reshape(n, -1)
            for k in range(vals.shape[1]):
                lines += [f"SCALARS {name}_{k} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.17g}" for v in vals[:, k]]
    path.write_text("\n".join(lines) + "\n")
    return path


def export_field_csv(f: FieldRm, path) -> Path:
    path = Path(path)
    cols = ["vertex_id", "x", "y"] + [f"v{k}" for k in range(f.m)]
    data = np.column_stack([np.arange(f.mesh.n_vertices), f.mesh.vertices, f.values])
    with path.open("w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(str(int(row[0])) + "," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")
    return path
