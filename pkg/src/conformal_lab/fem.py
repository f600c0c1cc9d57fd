"""P1 finite-element calculus: gradients, assembly, energies and Poisson solves."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FieldRm, TriMesh

log = logging.getLogger(__name__)

SOLVER_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


def _values(f) -> np.ndarray:
    if isinstance(f, FieldRm):
        return f.values
    v = np.asarray(f, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def gradient_p1(f, mesh: TriMesh | None = None) -> np.ndarray:
    """Per-triangle gradient, shape (T, m, 2). Exact for affine fields."""
    if isinstance(f, FieldRm):
        mesh = f.mesh
    vals = _values(f)
    if mesh is None:
        raise ValueError("mesh required for raw arrays")
    if vals.shape[0] != mesh.n_vertices:
        raise ValueError("field/mesh mismatch")
    g = mesh.basis_gradients
    return np.einsum("tkd,tkm->tmd", g, vals[mesh.triangles])


def recovered_gradient(f, mesh: TriMesh | None = None) -> np.ndarray:
    """Area-weighted vertex average of the P1 gradient, shape (n, m, 2)."""
    if isinstance(f, FieldRm):
        mesh = f.mesh
    g = gradient_p1(f, mesh) * mesh.areas[:, None, None]
    out = np.zeros((mesh.n_vertices,) + g.shape[1:])
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], g)
    return out / (3.0 * mesh.vertex_area)[:, None, None]


def tri_average(f, mesh: TriMesh) -> np.ndarray:
    """Centroid value per triangle, shape (T, m)."""
    return _values(f)[mesh.triangles].mean(axis=1)


def dirichlet_energy(u: FieldRm) -> float:
    g = gradient_p1(u)
    return float(0.5 * np.sum(np.sum(g ** 2, axis=(1, 2)) * u.mesh.areas))


def area_functional(u: FieldRm) -> float:
    if u.m < 2:
        raise ValueError("area functional needs m >= 2")
    g = gradient_p1(u)
    a, b = g[:, :, 0], g[:, :, 1]
    w2 = np.zeros(len(a))
    for i in range(u.m):
        for j in range(i + 1, u.m):
            w2 += (a[:, i] * b[:, j] - a[:, j] * b[:, i]) ** 2
    return float(np.sum(np.sqrt(w2) * u.mesh.areas))


def stiffness(mesh: TriMesh, coeff=None) -> sp.csr_matrix:
    """K_ij = sum_T |T| (a_T grad psi_i) . grad psi_j; coeff scalar per T or (T,2,2)."""
    g = mesh.basis_gradients
    if coeff is None:
        loc = np.einsum("tkd,tld->tkl", g, g)
    else:
        c = np.asarray(coeff, dtype=float)
        if c.ndim == 1:
            loc = c[:, None, None] * np.einsum("tkd,tld->tkl", g, g)
        else:
            loc = np.einsum("tkd,tde,tle->tkl", g, c, g)
    loc *= mesh.areas[:, None, None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(n, n))


def mass_consistent(mesh: TriMesh) -> sp.csr_matrix:
    loc = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 12.0
    t = mesh.triangles
    vals = mesh.areas[:, None, None] * loc[None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def load_from_vertex(mesh: TriMesh, f) -> np.ndarray:
    """Lumped weak load int f psi_i for vertex data."""
    return _values(f) * mesh.vertex_area[:, None]


def load_from_triangle(mesh: TriMesh, f_t) -> np.ndarray:
    """int f psi_i for per-triangle constant data, shape (T,) or (T, m)."""
    f_t = np.asarray(f_t, dtype=float)
    f_t = f_t[:, None] if f_t.ndim == 1 else f_t.reshape(len(f_t), -1)
    out = np.zeros((mesh.n_vertices, f_t.shape[1]))
    contrib = f_t * (mesh.areas / 3.0)[:, None]
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], contrib)
    return out


def weak_divergence(mesh: TriMesh, F_t) -> np.ndarray:
    """r_i = int F . grad psi_i for per-triangle vectors F_t of shape (T, ..., 2).

    This is minus the weak form of div F; a P1 field u has
    weak_divergence(grad u) = K u.
    """
    F_t = np.asarray(F_t, dtype=float)
    shp = F_t.shape[1:-1]
    F = F_t.reshape(len(F_t), -1, 2)
    g = mesh.basis_gradients
    loc = np.einsum("tmd,tkd->tkm", F, g) * mesh.areas[:, None, None]
    out = np.zeros((mesh.n_vertices, F.shape[1]))
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], loc[:, k])
    return out.reshape((mesh.n_vertices,) + shp)


def rot90(F):
    """grad-perp convention: (a, b) -> (-b, a) on the last axis."""
    F = np.asarray(F)
    return np.stack([-F[..., 1], F[..., 0]], axis=-1)


def weak_norm(mesh: TriMesh, r: np.ndarray, nodes: np.ndarray | None = None) -> float:
    """Mass-weighted dual norm sqrt(sum r_i^2 / M_i) over the given nodes."""
    r = np.asarray(r, dtype=float).reshape(mesh.n_vertices, -1)
    nodes = mesh.interior if nodes is None else nodes
    return float(np.sqrt(np.sum(r[nodes] ** 2 / mesh.vertex_area[nodes, None])))


def dual_norm(mesh: TriMesh, r: np.ndarray, nodes: np.ndarray | None = None) -> float:
    """H^{-1} norm (r^T K^{-1} r)^{1/2} of a load vector restricted to interior nodes.

    On a closed mesh (no boundary nodes) the mean of r is removed and the
    Neumann problem is used instead.
    """
    r = np.asarray(r, dtype=float).reshape(mesh.n_vertices, -1)
    nodes = mesh.interior if nodes is None else nodes
    bnd = np.setdiff1d(np.arange(mesh.n_vertices), nodes)
    if len(nodes) == 0:
        return 0.0
    if len(bnd) == 0:
        r = r - np.outer(mesh.vertex_area / mesh.vertex_area.sum(), r.sum(axis=0))
        sol = PoissonSolver(mesh, "neumann").solve(r, check_compat=False)
    else:
        solver = PoissonSolver(mesh, "dirichlet", dirichlet_nodes=bnd)
        sol = solver.solve(r, np.zeros((len(bnd), r.shape[1])))
    return float(np.sqrt(max(np.sum(sol * r), 0.0)))


@dataclass
class BoundaryCondition:
    kind: str = "dirichlet"          # dirichlet | neumann
    values: object = 0.0             # dirichlet data, array over nodes or scalar or callable(xy)
    nodes: np.ndarray | None = None  # default: all boundary vertices


class PoissonSolver:
    """-div(a grad u) = f with Dirichlet elimination or pure Neumann.

    The matrix is factorized once and reused for many right-hand sides.
    method="cg" uses Jacobi-preconditioned conjugate gradients instead.
    """

    def __init__(self, mesh: TriMesh, kind: str = "dirichlet", dirichlet_nodes=None,
                 coeff=None, method: str = "direct"):
        if kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary kind {kind!r}")
        self.mesh, self.kind, self.method = mesh, kind, method
        K = stiffness(mesh, coeff)
        self.K = K
        n = mesh.n_vertices
        if kind == "dirichlet":
            d = mesh.boundary_mask.nonzero()[0] if dirichlet_nodes is None else np.asarray(dirichlet_nodes)
            if len(d) == 0:
                raise ValueError("Dirichlet problem needs boundary nodes")
        else:
            d = np.array([0])
        self.fixed = np.unique(d).astype(np.int64)
        free = np.ones(n, dtype=bool)
        free[self.fixed] = False
        self.free = np.flatnonzero(free)
        self.Kff = K[self.free][:, self.free].tocsc()
        self.Kfd = K[self.free][:, self.fixed]
        self._lu = spla.splu(self.Kff) if method == "direct" else None

    def _solve_free(self, b):
        if self._lu is not None:
            x = self._lu.solve(b)
            res = np.linalg.norm(self.Kff @ x - b, axis=0)
            nb = np.linalg.norm(b, axis=0)
            bad = res > SOLVER_RTOL * np.maximum(nb, 1e-300)
            if np.any(bad & (nb > 0)):
                # one step of iterative refinement before giving up
                x = x + self._lu.solve(b - self.Kff @ x)
                res = np.linalg.norm(self.Kff @ x - b, axis=0)
                if np.any(res > SOLVER_RTOL * np.maximum(nb, 1e-300) * 10):
                    raise SolverError(f"direct solve residual {res.max():.3e}")
            return x
        diag = self.Kff.diagonal()
        M = spla.LinearOperator(self.Kff.shape, matvec=lambda v: v / diag)
        cap = int(50 * np.sqrt(len(self.free))) + 10
        out = np.empty_like(b)
        for k in range(b.shape[1]):
            if not np.any(b[:, k]):
                out[:, k] = 0
                continue
            x, info = spla.cg(self.Kff, b[:, k], rtol=SOLVER_RTOL, atol=0.0, maxiter=cap, M=M)
            if info != 0:
                raise SolverError(f"CG did not converge in {cap} iterations")
            out[:, k] = x
        return out

    def solve(self, rhs, dirichlet_values=None, check_compat: bool = True) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        squeeze = rhs.ndim == 1
        b = rhs.reshape(self.mesh.n_vertices, -1)
        u = np.zeros_like(b)
        if self.kind == "neumann":
            tot = b.sum(axis=0)
            scale = np.abs(b).sum(axis=0) + 1e-300
            if check_compat and np.any(np.abs(tot) > 1e-8 * scale):
                raise ValueError("incompatible Neumann data: load does not sum to zero")
            b = b - np.outer(self.mesh.vertex_area / self.mesh.vertex_area.sum(), tot)
            u[self.free] = self._solve_free(b[self.free])
            w = self.mesh.vertex_area
            u -= (w @ u) / w.sum()
        else:
            g = np.zeros((len(self.fixed), b.shape[1]))
            if dirichlet_values is not None:
                g = np.broadcast_to(np.asarray(dirichlet_values, dtype=float).reshape(len(self.fixed), -1)
                                    if np.ndim(dirichlet_values) else dirichlet_values, g.shape)
            u[self.fixed] = g
            u[self.free] = self._solve_free(b[self.free] - self.Kfd @ g)
        return u[:, 0] if squeeze else u


def solve_poisson(mesh: TriMesh, rhs, bc: BoundaryCondition | None = None, coeff=None,
                  method: str = "direct") -> FieldRm:
    """Solve -Laplace u = f in weak form, rhs being the load vector int f psi_i."""
    bc = bc or BoundaryCondition()
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != mesh.n_vertices:
        raise ValueError("rhs size does not match mesh")
    solver = PoissonSolver(mesh, bc.kind, bc.nodes, coeff, method)
    vals = None
    if bc.kind == "dirichlet":
        xy = mesh.vertices[solver.fixed]
        vals = bc.values(xy) if callable(bc.values) else bc.values
        if np.ndim(vals) and np.shape(vals)[0] != len(solver.fixed):
            raise ValueError("Dirichlet values do not match boundary nodes")
    return FieldRm(mesh, solver.solve(rhs, vals))


def l2_norm(mesh: TriMesh, f) -> float:
    v = _values(f)
    return float(np.sqrt(np.sum(v ** 2 * mesh.vertex_area[:, None])))


def grad_l2(mesh: TriMesh, f) -> float:
    g = gradient_p1(f, mesh)
    return float(np.sqrt(np.sum(np.sum(g ** 2, axis=tuple(range(1, g.ndim))) * mesh.areas)))


# 7-point degree-5 rule on the reference triangle, barycentric coordinates
_A1, _B1, _W1 = 0.059715871789770, 0.470142064105115, 0.132394152788506
_A2, _B2, _W2 = 0.797426985353087, 0.101286507323456, 0.125939180544827
QUAD7_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD7_W = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])


def quadrature_points(mesh: TriMesh, bary: np.ndarray = QUAD7_BARY) -> np.ndarray:
    """Physical quadrature points, shape (T, q, 2)."""
    return np.einsum("qk,tkd->tqd", bary, mesh.corners)


def assemble_weak(mesh: TriMesh, flux, source=None, bary=QUAD7_BARY, weights=QUAD7_W) -> np.ndarray:
    """r_i = int flux . grad psi_i + int source psi_i with quadrature-point data.

    flux has shape (T, q, m, 2), source (T, q, m).
    """
    g = mesh.basis_gradients
    wa = weights[None, :] * mesh.areas[:, None]
    parts = []
    if flux is not None:
        F = np.einsum("tq,tqmd->tmd", wa, flux)
        parts.append(np.einsum("tmd,tkd->tkm", F, g))
    if source is not None:
        parts.append(np.einsum("tq,qk,tqm->tkm", wa, bary, source))
    loc = sum(parts)
    out = np.zeros((mesh.n_vertices, loc.shape[2]))
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], loc[:, k])
    return out
