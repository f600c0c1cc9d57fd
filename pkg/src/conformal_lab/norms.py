"""Lorentz norms, Morrey decay profiles and the Pohozaev boundary identity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import gradient_p1, recovered_gradient
from .mesh import FieldRm, TriMesh


def lorentz_norms(f, weights=None) -> dict:
    """Weak-L2, L2 and L(2,1) norms from the weighted decreasing rearrangement.

    `f` is a scalar FieldRm (weights = lumped vertex masses) or a raw array with
    explicit weights (e.g. per-triangle data weighted by triangle areas).
    """
    if isinstance(f, FieldRm):
        vals = np.abs(f.values).max(axis=1) if f.m > 1 else np.abs(f.scalar)
        w = f.mesh.vertex_area if weights is None else np.asarray(weights, float)
    else:
        vals = np.abs(np.asarray(f, dtype=float)).ravel()
        if weights is None:
            raise ValueError("weights required for raw arrays")
        w = np.asarray(weights, dtype=float).ravel()
    order = np.argsort(-vals, kind="stable")
    fs = vals[order]
    mu = np.cumsum(w[order])
    root = np.sqrt(mu)
    nxt = np.append(fs[1:], 0.0)
    return {
        "l2_weak": float(np.max(fs * root)) if len(fs) else 0.0,
        "l2": float(np.sqrt(np.sum(w * vals ** 2))),
        "l21": float(np.sum((fs - nxt) * root)),
    }


def _edge_disc_area(a, b, rho):
    """Signed area of disc(0, rho) intersected with triangle (0, a, b), vectorised."""
    d = b - a
    A = np.einsum("ij,ij->i", d, d)
    B = 2 * np.einsum("ij,ij->i", a, d)
    C = np.einsum("ij,ij->i", a, a) - rho ** 2
    disc = B * B - 4 * A * C
    sq = np.sqrt(np.maximum(disc, 0.0))
    safeA = np.where(A > 0, A, 1.0)
    t1 = np.where(disc > 0, (-B - sq) / (2 * safeA), 0.0)
    t2 = np.where(disc > 0, (-B + sq) / (2 * safeA), 0.0)
    ts = np.column_stack([np.zeros(len(a)), np.clip(t1, 0, 1), np.clip(t2, 0, 1), np.ones(len(a))])
    total = np.zeros(len(a))
    for k in range(3):
        p = a + ts[:, k, None] * d
        q = a + ts[:, k + 1, None] * d
        mid = 0.5 * (p + q)
        inside = np.einsum("ij,ij->i", mid, mid) <= rho ** 2
        cr = p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]
        dt = np.einsum("ij,ij->i", p, q)
        tri = 0.5 * cr
        sector = 0.5 * rho ** 2 * np.arctan2(cr, dt)
        piece = np.where(inside, tri, sector)
        total += np.where(ts[:, k + 1] > ts[:, k], piece, 0.0)
    return total


def clipped_areas(mesh: TriMesh, center, rho: float) -> np.ndarray:
    """Exact area of every triangle intersected with the ball B_rho(center)."""
    c = mesh.corners - np.asarray(center, float)[None, None, :]
    r2 = np.einsum("tkd,tkd->tk", c, c)
    out = np.zeros(mesh.n_triangles)
    full = np.all(r2 <= rho ** 2, axis=1)
    out[full] = mesh.areas[full]
    # cheap rejection by bounding circle around the centroid
    cen = c.mean(axis=1)
    rad = np.sqrt(np.max(np.einsum("tkd,tkd->tk", c - cen[:, None], c - cen[:, None]), axis=1))
    cut = (~full) & (np.linalg.norm(cen, axis=1) - rad < rho)
    idx = np.flatnonzero(cut)
    if len(idx):
        cc = c[idx]
        s = sum(_edge_disc_area(cc[:, k], cc[:, (k + 1) % 3], rho) for k in range(3))
        out[idx] = np.clip(s, 0.0, mesh.areas[idx])
    return out


@dataclass
class MorreyProfile:
    centers: np.ndarray
    radii: np.ndarray
    energies: np.ndarray      # (n_centers, n_radii) ball Dirichlet integrals
    normalized: np.ndarray    # rho^-2 * energies
    alpha: float
    max_violation: float      # largest decrease of the normalized profile

    def as_rows(self):
        for i, p in enumerate(self.centers):
            for j, r in enumerate(self.radii):
                yield {"cx": float(p[0]), "cy": float(p[1]), "rho": float(r),
                       "energy": float(self.energies[i, j]), "normalized": float(self.normalized[i, j])}


def _domain_radius(mesh: TriMesh) -> float:
    return float(np.max(np.linalg.norm(mesh.vertices, axis=1)))


def morrey_profile(u: FieldRm, centers, radii) -> MorreyProfile:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.sort(np.asarray(radii, dtype=float))
    R = _domain_radius(u.mesh)
    for p in centers:
        if np.linalg.norm(p) + radii[-1] > R * (1 + 1e-12):
            raise ValueError(f"ball B({radii[-1]:.3g}, {p}) exits the domain")
    g = gradient_p1(u)
    dens = np.sum(g ** 2, axis=(1, 2))
    E = np.array([[float(dens @ clipped_areas(u.mesh, p, r)) for r in radii] for p in centers])
    norm = E / radii[None, :] ** 2
    pos = E > 0
    if np.count_nonzero(pos) >= 2:
        lr = np.broadcast_to(np.log(radii)[None, :], E.shape)[pos]
        alpha = float(np.polyfit(lr, np.log(E[pos]), 1)[0])
    else:
        alpha = float("nan")
    viol = float(np.max(np.maximum(norm[:, :-1] - norm[:, 1:], 0.0))) if len(radii) > 1 else 0.0
    return MorreyProfile(centers, radii, E, norm, alpha, viol)


def pohozaev_check(v: FieldRm, center, rho: float, n_quad: int | None = None) -> float:
    """|2 int |dv/drho|^2 - int |grad v|^2| over the circle of radius rho."""
    center = np.asarray(center, dtype=float)
    mesh = v.mesh
    if n_quad is None:
        n_quad = max(4096, int(64 * 2 * np.pi * rho / mesh.h))
    th = (np.arange(n_quad) + 0.5) * (2 * np.pi / n_quad)
    nrm = np.column_stack([np.cos(th), np.sin(th)])
    pts = center + rho * nrm
    tri = mesh.locate(pts)
    if np.any(tri < 0):
        raise ValueError("circle leaves the mesh")
    # recovered gradient interpolated along the circle; raw P1 gradients alias
    # against the triangle pattern and converge erratically
    bc = mesh.barycentric(pts, tri)
    gv = recovered_gradient(v)
    g = np.einsum("qk,qkmd->qmd", bc, gv[mesh.triangles[tri]])
    radial = np.einsum("qmd,qd->qm", g, nrm)
    ds = rho * 2 * np.pi / n_quad
    lhs = 2 * np.sum(radial ** 2) * ds
    rhs = np.sum(g ** 2) * ds
    return float(abs(lhs - rhs))
