"""Discrete Douglas-Rado method for the Plateau problem.

The energy of a boundary parametrization tau is the Dirichlet energy of its
discrete harmonic extension. It is minimised by projected gradient descent
over weakly monotone tau with three hard anchors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .fem import PoissonSolver, area_functional, gradient_p1
from .mesh import FieldRm, TriMesh

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
EPS_INCREMENT = 1e-6
ARMIJO = 1e-4


@dataclass
class JordanCurve:
    name: str
    gamma: Callable          # t -> (len(t), m) points, 2pi-periodic
    dgamma: Callable         # t -> (len(t), m) tangents
    params: dict = field(default_factory=dict)
    n_table: int = 4096

    def __post_init__(self):
        t = np.linspace(0, TWO_PI, self.n_table + 1)
        speed = np.linalg.norm(self.dgamma(t), axis=1)
        # trapezoid arclength table
        self.t_table = t
        self.s_table = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t))])
        self.length = float(self.s_table[-1])
        pts = self.gamma(t[:-1])
        d = np.linalg.norm(pts[:, None, :] - pts[None, ::max(1, self.n_table // 512), :], axis=2) \
            if self.n_table <= 8192 else None
        if d is not None:
            # a point far in parameter but close in space signals self-intersection
            tt = t[:-1]
            tsub = tt[::max(1, self.n_table // 512)]
            gap = np.abs((tt[:, None] - tsub[None, :] + np.pi) % TWO_PI - np.pi)
            if np.any((d < 1e-9) & (gap > 1e-3)):
                raise ValueError("curve is not injective at sampling tolerance")

    @property
    def m(self) -> int:
        return self.gamma(np.zeros(1)).shape[1]

    def param_at_arclength(self, s):
        return np.interp(np.asarray(s) % self.length, self.s_table, self.t_table)


def preset_curve(name: str, **p) -> JordanCurve:
    if name == "circle":
        r = p.get("radius", 1.0)
        return JordanCurve(name, lambda t: r * np.column_stack([np.cos(t), np.sin(t), 0 * t]),
                           lambda t: r * np.column_stack([-np.sin(t), np.cos(t), 0 * t]), p)
    if name == "ellipse":
        a, b = p.get("a", 2.0), p.get("b", 1.0)
        return JordanCurve(name, lambda t: np.column_stack([a * np.cos(t), b * np.sin(t), 0 * t]),
                           lambda t: np.column_stack([-a * np.sin(t), b * np.cos(t), 0 * t]), p)
    if name == "saddle":
        c = p.get("amplitude", 0.3)
        return JordanCurve(name, lambda t: np.column_stack([np.cos(t), np.sin(t), c * np.cos(2 * t)]),
                           lambda t: np.column_stack([-np.sin(t), np.cos(t), -2 * c * np.sin(2 * t)]), p)
    raise ValueError(f"unknown curve preset {name!r}")


def sampled_curve(theta, points, name: str = "sampled") -> JordanCurve:
    """Periodic cubic spline through samples gamma(theta_k), theta strictly increasing."""
    theta = np.asarray(theta, dtype=float)
    pts = np.asarray(points, dtype=float)
    if np.any(np.diff(theta) <= 0):
        raise ValueError("theta must be strictly increasing")
    if not np.allclose(pts[0], pts[-1]):
        raise ValueError("curve samples must be closed (first = last)")
    # rescale the parameter to [0, 2pi]
    t = (theta - theta[0]) * (TWO_PI / (theta[-1] - theta[0]))
    sp = CubicSpline(t, pts, bc_type="periodic")
    return JordanCurve(name, lambda s: sp(np.asarray(s) % TWO_PI), lambda s: sp(np.asarray(s) % TWO_PI, 1))


def load_curve_csv(path) -> JordanCurve:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return sampled_curve(data[:, 0], data[:, 1:], name=str(path))


@dataclass
class BoundaryParam:
    tau: np.ndarray              # curve parameter per boundary vertex, unwrapped nondecreasing
    anchors: np.ndarray          # boundary positions of the three anchors
    targets: np.ndarray          # curve parameters at the anchors

    def check(self, tol: float = 1e-12) -> bool:
        ext = np.append(self.tau, self.tau[0] + TWO_PI)
        return bool(np.all(np.diff(ext) >= -tol) and np.allclose(self.tau[self.anchors], self.targets, atol=tol))


def three_point_normalize(P, tol: float = 1e-13, max_iter: int = 50):
    """(theta, a) of f(w) = e^{i theta}(w - a)/(1 - conj(a) w) with f(w_k) = P_k, w_k = e^{2ik pi/3}."""
    P = np.asarray(P, dtype=complex)
    if P.shape != (3,):
        raise ValueError("need exactly three points")
    P = P / np.abs(P)
    if np.min(np.abs(P[:, None] - P[None, :]) + 3 * np.eye(3)) < 1e-12:
        raise ValueError("points are not distinct")
    ang = np.angle(P)
    rel = np.mod(ang - ang[0], TWO_PI)
    if not (0 < rel[1] < rel[2] < TWO_PI):
        raise ValueError("points must be in trigonometric order")
    w = np.exp(2j * np.pi * np.arange(1, 4) / 3)

    def f(x, z):
        a = x[1] + 1j * x[2]
        return np.exp(1j * x[0]) * (z - a) / (1 - np.conj(a) * z)

    # closed-form start from cross ratios
    def to01inf(z1, z2, z3):
        return lambda z: (z - z1) * (z2 - z3) / ((z - z3) * (z2 - z1))

    def inv01inf(z1, z2, z3):
        # inverse of the map above
        k = (z2 - z3) / (z2 - z1)
        return lambda y: (z1 * k - z3 * y) / (k - y)

    N = to01inf(*w)
    Minv = inv01inf(*P)
    Ninv = inv01inf(*w)
    M = to01inf(*P)
    a0 = Ninv(M(0.0 + 0j))
    g0 = Minv(N(0.0 + 0j))
    th0 = np.angle(-g0 / a0) if abs(a0) > 1e-14 else np.angle(Minv(N(1.0 + 0j)))
    x = np.array([th0, a0.real, a0.imag])

    def resid(x):
        d = np.angle(f(x, w) / P)
        return d

    for _ in range(max_iter):
        r = resid(x)
        if np.max(np.abs(r)) < tol:
            break
        J = np.empty((3, 3))
        for k in range(3):
            dx = np.zeros(3)
            dx[k] = 1e-7
            J[:, k] = (resid(x + dx) - resid(x - dx)) / 2e-7
        x = x - np.linalg.solve(J, r)
    r = np.max(np.abs(resid(x)))
    th = float(np.mod(x[0] + np.pi, TWO_PI) - np.pi)
    return th, complex(x[1], x[2]), float(r)


def mobius_disc(w, theta: float, a: complex):
    w = np.asarray(w, dtype=complex)
    return np.exp(1j * theta) * (w - a) / (1 - np.conj(a) * w)


class _Extension:
    """Cached Dirichlet factorization for repeated harmonic extensions."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.bnd = mesh.boundary_loop
        self.solver = PoissonSolver(mesh, "dirichlet", dirichlet_nodes=self.bnd)
        # map from the sorted fixed-node order to loop order
        self.order = np.searchsorted(self.solver.fixed, self.bnd)

    def extend(self, g_loop: np.ndarray) -> np.ndarray:
        g = np.empty_like(g_loop)
        g[self.order] = g_loop
        return self.solver.solve(np.zeros((self.mesh.n_vertices, g_loop.shape[1])), g)

    def energy_and_grad(self, u: np.ndarray):
        Ku = self.solver.K @ u
        E = 0.5 * float(np.sum(u * Ku))
        return E, Ku[self.bnd]


def harmonic_extension(curve: JordanCurve, bp: BoundaryParam, mesh: TriMesh) -> FieldRm:
    if mesh.kind != "disc":
        raise ValueError("harmonic extension needs a disc mesh")
    ext = _Extension(mesh)
    return FieldRm(mesh, ext.extend(curve.gamma(bp.tau)))


def default_anchors(curve: JordanCurve, mesh: TriMesh, start: float = 0.0):
    nb = len(mesh.boundary_loop)
    anchors = np.array([0, nb // 3, (2 * nb) // 3])
    s0 = np.interp(start % TWO_PI, curve.t_table, curve.s_table)
    targets = np.array([curve.param_at_arclength(s0 + k * curve.length / 3) for k in range(3)])
    targets = np.unwrap(targets)
    targets = targets[0] + np.mod(targets - targets[0], TWO_PI)
    return anchors, targets


def boundary_angles(mesh: TriMesh) -> np.ndarray:
    xy = mesh.vertices[mesh.boundary_loop]
    a = np.unwrap(np.arctan2(xy[:, 1], xy[:, 0]))
    return a - a[0]


def initial_param(curve: JordanCurve, mesh: TriMesh, warp: Callable | None = None) -> BoundaryParam:
    anchors, targets = default_anchors(curve, mesh)
    ang = boundary_angles(mesh)
    if warp is not None:
        ang = warp(ang)
    # arclength-proportional start so non-uniform curves begin near conformal
    tau = curve.param_at_arclength(ang / TWO_PI * curve.length)
    tau = np.unwrap(tau)
    tau = targets[0] + tau - tau[0]
    return project_param(BoundaryParam(tau, anchors, targets))


def project_param(bp: BoundaryParam) -> BoundaryParam:
    """Clip increments below EPS_INCREMENT, then rescale each anchor segment to its target span."""
    tau = np.array(bp.tau, dtype=float)
    nb = len(tau)
    a = list(bp.anchors) + [nb]
    tg = list(bp.targets) + [bp.targets[0] + TWO_PI]
    ext = np.append(tau, tau[0] + TWO_PI)
    out = np.empty(nb)
    for k in range(3):
        i0, i1 = a[k], a[k + 1]
        inc = np.diff(ext[i0:i1 + 1])
        inc = np.maximum(inc, EPS_INCREMENT)
        span = tg[k + 1] - tg[k]
        if span <= EPS_INCREMENT * len(inc):
            raise ValueError("monotonicity projection infeasible: degenerate anchor span")
        inc = inc * (span / inc.sum())
        out[i0:i1] = tg[k] + np.concatenate([[0.0], np.cumsum(inc)[:-1]])
    return BoundaryParam(out, bp.anchors, bp.targets)


@dataclass
class PlateauResult:
    u: FieldRm
    bp: BoundaryParam
    E: float
    A: float
    history: list
    converged: bool
    branch_triangles: np.ndarray


def hopf_differential(u: FieldRm) -> np.ndarray:
    """Per-triangle 1/4(|u_x|^2 - |u_y|^2 - 2i<u_x, u_y>)."""
    if u.m < 2:
        raise ValueError("Hopf differential needs m >= 2")
    g = gradient_p1(u)
    ux, uy = g[:, :, 0], g[:, :, 1]
    return 0.25 * (np.sum(ux ** 2, 1) - np.sum(uy ** 2, 1) - 2j * np.sum(ux * uy, 1))


def hopf_l1(u: FieldRm) -> float:
    return float(np.sum(np.abs(hopf_differential(u)) * u.mesh.areas))


def stationarity_defect(u: FieldRm) -> float:
    """Sum over interior vertices of |int H dbar(psi_i)|, the weak dbar of the Hopf differential."""
    H = hopf_differential(u)
    mesh = u.mesh
    g = mesh.basis_gradients
    dbar = 0.5 * (g[:, :, 0] + 1j * g[:, :, 1])
    loc = H[:, None] * dbar * mesh.areas[:, None]
    r = np.zeros(mesh.n_vertices, dtype=complex)
    for k in range(3):
        np.add.at(r, mesh.triangles[:, k], loc[:, k])
    return float(np.sum(np.abs(r[mesh.interior])))


def branch_points(u: FieldRm, rel: float = 1e-8) -> np.ndarray:
    d = np.sum(gradient_p1(u) ** 2, axis=(1, 2))
    return np.flatnonzero(d < rel * d.mean())


def _param_energy(ext: _Extension, curve: JordanCurve, bp: BoundaryParam):
    u = ext.extend(curve.gamma(bp.tau))
    E, gb = ext.energy_and_grad(u)
    dE = np.einsum("jm,jm->j", gb, curve.dgamma(bp.tau))
    dE[bp.anchors] = 0.0
    return E, dE, u


def douglas_rado_solve(curve: JordanCurve, mesh: TriMesh, bp0: BoundaryParam | None = None,
                       tol_E: float = 1e-8, max_sweeps: int = 5000, min_sweeps: int = 5,
                       window: int = 10) -> PlateauResult:
    """Alternate harmonic extension and projected gradient steps on the boundary map."""
    ext = _Extension(mesh)
    bp = bp0 if bp0 is not None else initial_param(curve, mesh)
    bp = project_param(bp)
    E, dE, u = _param_energy(ext, curve, bp)
    history = [(0, E, area_functional(FieldRm(mesh, u)), hopf_l1(FieldRm(mesh, u)))]
    step = 1.0 / max(np.abs(dE).max(), 1e-12) * (TWO_PI / len(bp.tau))
    prev_tau = prev_grad = None
    converged = False
    for sweep in range(1, max_sweeps + 1):
        if prev_tau is not None:
            s = bp.tau - prev_tau
            y = dE - prev_grad
            sy = float(s @ y)
            if sy > 0:
                step = float(s @ s) / sy
        accepted = False
        alpha = step
        for _ in range(40):
            trial = project_param(BoundaryParam(bp.tau - alpha * dE, bp.anchors, bp.targets))
            Et, dEt, ut = _param_energy(ext, curve, trial)
            if Et <= E - ARMIJO * float(dE @ (bp.tau - trial.tau)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True
            break
        prev_tau, prev_grad = bp.tau, dE
        bp, E, dE, u = trial, Et, dEt, ut
        uf = FieldRm(mesh, u)
        history.append((sweep, E, area_functional(uf), hopf_l1(uf)))
        # BB steps make single-sweep decreases noisy, so measure over a window
        if sweep >= max(min_sweeps, window):
            dec = (history[-window - 1][1] - E) / max(abs(E), 1e-300)
            if dec < tol_E:
                converged = True
                break
    else:
        log.warning("douglas_rado_solve: max sweeps %d exceeded", max_sweeps)
    uf = FieldRm(mesh, u)
    return PlateauResult(uf, bp, E, area_functional(uf), history, converged, branch_points(uf))


def perturb_param(bp: BoundaryParam, rng: np.random.Generator, eps: float = 1e-3, modes: int = 4) -> BoundaryParam:
    """Compose with a random monotone reparametrization of the curve that fixes the anchors."""
    c = rng.normal(size=(3, modes))
    c /= np.sum(np.abs(c) * np.arange(1, modes + 1)[None, :] * np.pi, axis=1, keepdims=True)
    tg = list(bp.targets) + [bp.targets[0] + TWO_PI]
    tau = bp.tau.copy()
    for k in range(3):
        L = tg[k + 1] - tg[k]
        sel = (tau >= tg[k]) & (tau < tg[k + 1])
        s = (tau[sel] - tg[k]) / L
        tau[sel] += eps * L * np.sum(c[k][None, :] * np.sin(np.pi * np.outer(s, np.arange(1, modes + 1))), axis=1)
    return BoundaryParam(tau, bp.anchors, bp.targets)


def optimality_spot_check(curve: JordanCurve, result: PlateauResult, n: int = 20, seed: int = 0,
                          eps: float = 1e-3) -> float:
    """Smallest E(perturbed) - E(converged) over random anchor-fixing reparametrizations."""
    ext = _Extension(result.u.mesh)
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n):
        bp = perturb_param(result.bp, rng, eps)
        E, _, _ = _param_energy(ext, curve, bp)
        worst = min(worst, E - result.E)
    return float(worst)


def courant_slice_energy(u: FieldRm, p, rho: float, n_quad: int = 2048) -> float:
    """int over the arc dB_rho(p) inside the disc of |grad u|^2."""
    th = (np.arange(n_quad) + 0.5) * (TWO_PI / n_quad)
    pts = np.asarray(p, float) + rho * np.column_stack([np.cos(th), np.sin(th)])
    tri = u.mesh.locate(pts)
    g = gradient_p1(u)
    ok = tri >= 0
    dens = np.sum(g[tri[ok]] ** 2, axis=(1, 2))
    return float(np.sum(dens) * rho * TWO_PI / n_quad)
