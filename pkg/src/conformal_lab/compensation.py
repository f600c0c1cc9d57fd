"""Integrability by compensation: Jacobian Poisson problems and their constants,
CMC and sphere-valued harmonic maps, the Frehse counterexample, metric
harmonic maps and linear systems with antisymmetric potentials.

Grad-perp is (-d2, d1) throughout, so the Jacobian J(a, b) = a_x b_y - a_y b_x
equals grad-perp(a) . grad(b) and has the weak form  int a grad-perp(b) . grad(psi).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla
from scipy.interpolate import LinearNDInterpolator

from .fem import (PoissonSolver, assemble_weak, dirichlet_energy, dual_norm, grad_l2, gradient_p1,
                  load_from_triangle, mass_consistent, quadrature_points, recovered_gradient, rot90,
                  stiffness, tri_average, weak_divergence, weak_norm)
from .mesh import FieldRm, TriMesh, build_annulus_mesh, build_disc_mesh
from .norms import lorentz_norms, morrey_profile

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------- Jacobians

@dataclass
class JacobianRHS:
    a: FieldRm
    b: FieldRm

    def assemble(self) -> np.ndarray:
        return jacobian_load(self.a, self.b)


def jacobian_load(a, b, mesh: TriMesh | None = None) -> np.ndarray:
    """Weak load of J(a, b) for scalar P1 fields: int a grad-perp(b) . grad(psi_i), shape (n,)."""
    if isinstance(a, FieldRm):
        mesh = a.mesh
        a = a.values[:, 0]
    if isinstance(b, FieldRm):
        b = b.values[:, 0]
    a_t = tri_average(a, mesh)[:, 0]
    gb = gradient_p1(b, mesh)[:, 0]
    return np.ravel(weak_divergence(mesh, a_t[:, None] * rot90(gb)))


def _dirichlet_solver(mesh: TriMesh, coeff=None) -> PoissonSolver:
    return PoissonSolver(mesh, "dirichlet", coeff=coeff)


def linf(v) -> float:
    return float(np.max(np.abs(np.asarray(v))))


@dataclass
class WenteResult:
    phi: FieldRm
    ratio: float | None
    grad_product: float


def wente_solve(a: FieldRm, b: FieldRm, solver: PoissonSolver | None = None) -> WenteResult:
    """-Laplace(phi) = J(a, b) on the disc with phi = 0 on the boundary."""
    mesh = a.mesh
    solver = solver or _dirichlet_solver(mesh)
    phi = FieldRm(mesh, solver.solve(jacobian_load(a, b)), "phi")
    prod = grad_l2(mesh, a) * grad_l2(mesh, b)
    ratio = None
    if prod > 1e-14:
        ratio = (linf(phi.values) + grad_l2(mesh, phi)) / prod
    return WenteResult(phi, ratio, prod)


def trig_pair(rng: np.random.Generator, n_terms: int = 3, kmax: int = 3):
    """Random trigonometric polynomial pair as vectorised callables."""
    def one():
        k = rng.integers(-kmax, kmax + 1, size=(n_terms, 2)).astype(float)
        k[np.all(k == 0, axis=1)] = (1.0, 0.0)
        ph = rng.uniform(0, 2 * np.pi, size=n_terms)
        c = rng.normal(size=n_terms)
        return lambda xy: np.sum(c * np.cos(xy @ k.T + ph), axis=-1)
    return one(), one()


def basic_corpus(seed: int = 0, n: int = 100):
    rng = np.random.default_rng(seed)
    return [trig_pair(rng) for _ in range(n)]


def wente_constant_sweep(corpus, mesh: TriMesh) -> dict:
    """Largest Wente ratio over (a, b) pairs given as callables or FieldRm pairs."""
    solver = _dirichlet_solver(mesh)
    best, arg, ratios = -np.inf, None, []
    for idx, (fa, fb) in enumerate(corpus):
        a = fa if isinstance(fa, FieldRm) else FieldRm(mesh, fa(mesh.vertices))
        b = fb if isinstance(fb, FieldRm) else FieldRm(mesh, fb(mesh.vertices))
        if np.allclose(a.values, b.values):
            ratios.append(None)
            continue
        r = wente_solve(a, b, solver).ratio
        ratios.append(r)
        if r is not None and r > best:
            best, arg = r, idx
    return {"max_ratio": float(best), "argmax": arg, "ratios": ratios}


def clms_hessian_l1(phi: FieldRm, n_grid: int = 257, grad_product: float | None = None) -> dict:
    """L1 norm of the Hessian (sum of |entries|) on a structured grid over the disc.

    The recovered P1 gradient is sampled on the grid and differenced centrally;
    raw second differences of a P1 field only see its kinks.
    """
    mesh = phi.mesh
    G = recovered_gradient(phi)[:, 0, :]
    interp = LinearNDInterpolator(mesh.vertices, G)
    x = np.linspace(-1, 1, n_grid)
    H = x[1] - x[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = mesh.locate(pts) >= 0
    vals = np.full((len(pts), 2), np.nan)
    vals[inside] = interp(pts[inside])
    V = vals.reshape(n_grid, n_grid, 2)
    ok = inside.reshape(n_grid, n_grid)

    def deriv(F, axis):
        fwd = np.roll(F, -1, axis=axis)
        bwd = np.roll(F, 1, axis=axis)
        okf = np.roll(ok, -1, axis=axis)
        okb = np.roll(ok, 1, axis=axis)
        d = np.where((okf & okb)[..., None], (fwd - bwd) / (2 * H),
                     np.where(okf[..., None], (fwd - F) / H, (F - bwd) / H))
        return d

    d1 = deriv(V, 0)
    d2 = deriv(V, 1)
    hess = np.stack([d1, d2], axis=-1)       # (..., component, direction)
    dens = np.nansum(np.abs(hess), axis=(-2, -1))
    total = float(np.sum(dens[ok]) * H * H)
    out = {"hessian_l1": total, "grid": n_grid}
    if grad_product:
        out["ratio"] = total / grad_product
    return out


def _check_elliptic(A: np.ndarray):
    if not np.allclose(A, np.swapaxes(A, -1, -2), atol=1e-12):
        raise ValueError("coefficient field is not symmetric")
    ev = np.linalg.eigvalsh(A)
    if np.any(ev[..., 0] <= 0):
        raise ValueError("ellipticity violation: non-positive eigenvalue")


def chanillo_li_solve(coeff, a: FieldRm, b: FieldRm) -> WenteResult:
    """-div(A grad phi) = J(a, b), phi = 0 on the boundary.

    coeff: callable xy -> (..., 2, 2), array (T, 2, 2), or None for the identity.
    """
    mesh = a.mesh
    if coeff is None:
        return wente_solve(a, b)
    A = coeff(mesh.centroids) if callable(coeff) else np.asarray(coeff, dtype=float)
    A = np.broadcast_to(A, (mesh.n_triangles, 2, 2))
    _check_elliptic(A)
    res = wente_solve(a, b, _dirichlet_solver(mesh, coeff=A))
    return res


def bethuel_estimate_experiment(a: FieldRm, b: FieldRm) -> dict:
    mesh = a.mesh
    res = wente_solve(a, b)
    ga = np.linalg.norm(gradient_p1(a)[:, 0], axis=1)
    weak = lorentz_norms(ga, mesh.areas)["l2_weak"]
    gb = grad_l2(mesh, b)
    gphi = grad_l2(mesh, res.phi)
    ratio = gphi / (weak * gb) if weak * gb > 0 else None
    return {"grad_phi_l2": gphi, "grad_a_l2weak": weak, "grad_a_l2": grad_l2(mesh, a),
            "grad_b_l2": gb, "ratio": ratio, "phi": res.phi}


# ---------------------------------------------------------------- CMC

def cross_jacobian_load(u: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Weak load of u_x x u_y, each component a Jacobian J(u_j, u_k)."""
    out = np.zeros((mesh.n_vertices, 3))
    for i, (j, k) in enumerate([(1, 2), (2, 0), (0, 1)]):
        out[:, i] = jacobian_load(u[:, j], u[:, k], mesh)
    return out


def _cross_load_general(u: np.ndarray, mesh: TriMesh, H) -> np.ndarray:
    if callable(H):
        g = gradient_p1(u, mesh)
        cr = np.cross(g[:, :, 0], g[:, :, 1])
        h = H(tri_average(u, mesh))
        return load_from_triangle(mesh, np.asarray(h).reshape(-1, 1) * cr)
    return float(H) * cross_jacobian_load(u, mesh)


def cmc_residual(u: FieldRm, H) -> float:
    """H^-1 norm of Laplace(u) - 2H u_x x u_y against interior P1 test functions."""
    if u.m != 3:
        raise ValueError("CMC residual needs m = 3")
    mesh = u.mesh
    K = PoissonSolver(mesh, "dirichlet").K
    r = -(K @ u.values) - 2.0 * _cross_load_general(u.values, mesh, H)
    return dual_norm(mesh, r)


@dataclass
class CMCResult:
    u: FieldRm
    iterations: int
    updates: list
    contraction: list
    residual: float


def cmc_solve(H, boundary: np.ndarray, mesh: TriMesh, gate: float = 1.5, tol: float = 1e-9,
              max_iter: int = 200) -> CMCResult:
    """Picard iteration u = v + phi, v harmonic with the boundary data, -Laplace(phi) = -2H u_x x u_y.

    boundary: (n_boundary, 3) values on the sorted boundary vertices, or callable xy -> (.., 3).
    gate bounds |H| * ||grad v||_2 (smallness of the data).
    """
    solver = PoissonSolver(mesh, "dirichlet")
    g = boundary(mesh.vertices[solver.fixed]) if callable(boundary) else np.asarray(boundary, float)
    v = solver.solve(np.zeros((mesh.n_vertices, 3)), g)
    hmax = np.max(np.abs(H(v))) if callable(H) else abs(float(H))
    size = hmax * grad_l2(mesh, v)
    if size > gate:
        raise DivergenceError(f"data above smallness gate: |H| ||grad v|| = {size:.3g} > {gate}")
    u = v.copy()
    updates, contraction = [], []
    if hmax == 0:
        return CMCResult(FieldRm(mesh, u), 0, [], [], cmc_residual(FieldRm(mesh, u), H))
    for it in range(1, max_iter + 1):
        phi = solver.solve(-2.0 * _cross_load_general(u, mesh, H), np.zeros_like(g))
        new = v + phi
        d = np.max(np.abs(new - u)) / max(np.max(np.abs(new)), 1e-300)
        updates.append(float(d))
        if len(updates) > 1:
            contraction.append(updates[-1] / updates[-2])
            if updates[-1] > 1e3 * updates[0]:
                raise DivergenceError("Picard iteration diverged")
        u = new
        if d < tol:
            break
    else:
        raise DivergenceError(f"no convergence in {max_iter} iterations")
    uf = FieldRm(mesh, u)
    return CMCResult(uf, it, updates, contraction, cmc_residual(uf, H))


def inverse_stereo(xy, scale: float = 1.0, flip: bool = False) -> np.ndarray:
    """Conformal map of the plane to the unit sphere, x -> (2x, 1-|x|^2)/(1+|x|^2)."""
    p = np.asarray(xy, float) * scale
    if flip:
        p = p * np.array([1.0, -1.0])
    r2 = np.sum(p ** 2, axis=-1)
    return np.concatenate([2 * p, (1 - r2)[..., None]], axis=-1) / (1 + r2)[..., None]


def spherical_cap_oracle(alpha: float):
    """Boundary data and exact solution for H = 1 spanning the circle of radius sin(alpha).

    The solution is the cap of angular radius alpha on the unit sphere centred at
    (0, 0, 2 cos alpha), reflected below the boundary circle so that
    Laplace(u) = 2 u_x x u_y holds with the positively oriented boundary.
    """
    t = np.tan(alpha / 2)
    refl = np.array([1.0, 1.0, -1.0])
    shift = np.array([0.0, 0.0, 2 * np.cos(alpha)])

    def exact(xy):
        return inverse_stereo(xy, t) * refl + shift

    center = shift
    return exact, center


def cap_distance(u: FieldRm, alpha: float) -> float:
    _, center = spherical_cap_oracle(alpha)
    d = np.abs(np.linalg.norm(u.values - center, axis=1) - 1.0)
    # points must also stay on the correct side of the boundary plane
    side = np.maximum(u.values[:, 2] - np.cos(alpha), 0.0)
    return float(max(d.max(), side.max()))


# ---------------------------------------------------------------- sphere harmonic maps

def _normalize_sphere(u: FieldRm, tol: float = 1e-8) -> FieldRm:
    nr = np.linalg.norm(u.values, axis=1)
    dev = np.max(np.abs(nr - 1))
    if dev > 1e-2:
        raise ValueError(f"field is not sphere-valued (max | |u| - 1 | = {dev:.3g})")
    if dev > tol:
        log.warning("renormalising sphere-valued input (deviation %.2e)", dev)
        return FieldRm(u.mesh, u.values / nr[:, None])
    return u


def _sphere_eq_load(mesh: TriMesh, u: np.ndarray, K=None) -> np.ndarray:
    """int grad u . grad psi - int u |grad u|^2 psi, exact for P1 u."""
    K = K if K is not None else PoissonSolver(mesh, "dirichlet").K
    g = gradient_p1(u, mesh)
    e = np.sum(g ** 2, axis=(1, 2))
    src = np.zeros_like(u)
    ut = u[mesh.triangles]                          # (T, 3, m)
    s = ut.sum(axis=1)
    for k in range(3):
        # consistent mass: (|T|/12)(2 u_k + sum of the others)
        np.add.at(src, mesh.triangles[:, k], (mesh.areas * e / 12.0)[:, None] * (ut[:, k] + s))
    return K @ u - src


def sphere_harmonic_residuals(u: FieldRm) -> dict:
    u = _normalize_sphere(u)
    mesh = u.mesh
    eq = _sphere_eq_load(mesh, u.values)
    g = gradient_p1(u)
    ut = tri_average(u, mesh)
    m = u.m
    flux = []
    for i in range(m):
        for j in range(i + 1, m):
            flux.append(ut[:, i, None] * g[:, j] - ut[:, j, None] * g[:, i])
    cons = weak_divergence(mesh, np.stack(flux, axis=1))
    return {"eq_residual": dual_norm(mesh, eq), "conservation_residual": dual_norm(mesh, cons),
            "eq_weak": weak_norm(mesh, eq), "conservation_weak": weak_norm(mesh, cons)}


@dataclass
class FlowResult:
    u: FieldRm
    energies: list
    steps: int
    rejected: int


def harmonic_heat_flow(u0: FieldRm, steps: int, dt: float, min_dt: float = 1e-12) -> FlowResult:
    """Semi-implicit flow (M + dt K) u* = M u, renormalised to the sphere, boundary held fixed."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u0 = _normalize_sphere(u0)
    mesh = u0.mesh
    M = mass_consistent(mesh)
    bnd = mesh.boundary_mask.nonzero()[0]
    u = u0.values.copy()
    E = dirichlet_energy(u0)
    energies = [E]
    cache = {}
    rejected = 0
    for _ in range(steps):
        while True:
            if dt not in cache:
                A = (M + dt * stiffness(mesh)).tocsr()
                free = np.flatnonzero(~mesh.boundary_mask)
                cache[dt] = (spla.splu(A[free][:, free].tocsc()), A[free][:, bnd], free)
            lu, Afb, free = cache[dt]
            rhs = (M @ u)[free] - Afb @ u[bnd]
            new = u.copy()
            new[free] = lu.solve(rhs)
            nr = np.linalg.norm(new, axis=1)
            if np.min(nr) < 1e-12:
                raise FloatingPointError("renormalisation hit |u*| < 1e-12")
            new /= nr[:, None]
            En = dirichlet_energy(FieldRm(mesh, new))
            if En <= E + 1e-14 * max(E, 1.0):
                break
            rejected += 1
            dt *= 0.5
            if dt < min_dt:
                raise FloatingPointError("step size underflow in harmonic flow")
        u, E = new, En
        energies.append(E)
    return FlowResult(FieldRm(mesh, u), energies, steps, rejected)


# ---------------------------------------------------------------- Frehse

def _bump(s: float = 0.3):
    """Radial C^1 bump with unit integral supported on |x| <= s."""
    c = 3.0 / (np.pi * s * s)

    def f(r):
        r = np.asarray(r, float)
        return np.where(r < s, c * (1 - (r / s) ** 2) ** 2, 0.0)

    def mass(r):
        # 2 pi int_0^r f(t) t dt
        q = np.minimum(np.asarray(r, float) / s, 1.0) ** 2
        return 2 * np.pi * c * s * s * 0.5 * (1 - (1 - q) ** 3) / 3.0

    return f, mass, s


def _limit_potential(s: float = 0.3, n_quad: int = 400):
    """v = log(2/r) * f for the radial bump, via the mean-value property of log."""
    f, mass, s = _bump(s)
    t = (np.arange(n_quad) + 0.5) * (s / n_quad)
    w = f(t) * t * (2 * np.pi * s / n_quad)

    def v(r):
        r = np.asarray(r, float)
        return np.log(2.0) - np.sum(w * np.log(np.maximum(r[..., None], t)), axis=-1)

    def dv(r):
        # v'(r) = -mass(r) / r
        r = np.asarray(r, float)
        return -mass(r) / np.maximum(r, 1e-300)

    return v, dv, f


def frehse_residual_vector(mesh: TriMesh, u, grad_u) -> np.ndarray:
    """r_i = int (-grad u . grad psi_i + |grad u|^2 psi_i) with degree-5 quadrature on analytic u."""
    q = quadrature_points(mesh)
    g = grad_u(q)                                         # (T, q, 2)
    flux = -g[:, :, None, :]
    src = np.sum(g ** 2, axis=-1)[..., None]
    return assemble_weak(mesh, flux, src)[:, 0]


def _loglog(q):
    r = np.linalg.norm(q, axis=-1)
    L = np.log(2 / r)
    return np.log(L), -(q / (r ** 2)[..., None]) / L[..., None]


def _atoms(n: int, s: float = 0.3):
    f, _, _ = _bump(s)
    k = int(round(np.sqrt(n)))
    if k * k != n:
        raise ValueError("atom count must be a perfect square")
    x = (np.arange(k) + 0.5) * (2 * s / k) - s
    X, Y = np.meshgrid(x, x, indexing="ij")
    a = np.column_stack([X.ravel(), Y.ravel()])
    w = f(np.linalg.norm(a, axis=1))
    if w.sum() == 0:
        w = np.ones(n)
    return a, w / w.sum()


def _atom_field(a, lam):
    def grad(q):
        d = q[..., None, :] - a                          # (..., n, 2)
        r2 = np.sum(d * d, axis=-1)
        v = np.sum(lam * np.log(2 / np.sqrt(r2)), axis=-1)
        gv = -np.sum((lam / r2)[..., None] * d, axis=-2)
        return gv / v[..., None]
    return grad


def frehse_counterexample_report(level: int = 6, atoms=(4, 16, 64), excise: float = 0.02,
                                 inner: float = 0.01) -> dict:
    """Residuals for log log(2/r), its unboundedness, and the failure of weak closure."""
    ann = build_annulus_mesh(inner, max(level - 2, 1))
    r_ann = frehse_residual_vector(ann, None, lambda q: _loglog(q)[1])
    res_single = weak_norm(ann, r_ann)
    sup = {rho: float(np.log(np.log(2 / rho))) for rho in (0.1, 0.01, 0.001)}
    sampled = {}
    for rho in (0.1, 0.01):
        m = build_annulus_mesh(rho, 2)
        r = np.linalg.norm(m.vertices, axis=1)
        sampled[rho] = float(np.max(np.abs(np.log(np.log(2 / r)))))

    disc = build_disc_mesh(level)
    rows = []
    for n in atoms:
        a, lam = _atoms(n)
        d = np.min(np.linalg.norm(disc.vertices[:, None, :] - a[None], axis=2), axis=1)
        keep = np.flatnonzero((~disc.boundary_mask) & (d > excise + 2 * disc.h))
        # drop triangles touching an atom so the quadrature never sees the singularity
        r = _masked_residual(disc, _atom_field(a, lam), a, excise)
        rows.append({"atoms": n, "residual": weak_norm(disc, r, keep)})
    v, dv, f = _limit_potential()

    def grad_limit(q):
        r = np.linalg.norm(q, axis=-1)
        return (dv(r) / v(r) / np.maximum(r, 1e-300))[..., None] * q

    r_lim = frehse_residual_vector(disc, None, grad_limit)
    res_limit = weak_norm(disc, r_lim)
    # closed form of the same functional: -2 pi int f psi / v
    rr = np.linalg.norm(disc.vertices, axis=1)
    oracle = weak_norm(disc, -2 * np.pi * f(rr) / v(rr) * disc.vertex_area)
    return {"single_residual": res_single, "sup_closed_form": sup, "sup_sampled": sampled,
            "atom_residuals": rows, "limit_residual": res_limit, "limit_oracle": oracle,
            "excise_radius": excise}


def _masked_residual(mesh: TriMesh, grad_u, atoms, excise):
    c = mesh.corners
    dmin = np.min(np.linalg.norm(c[:, :, None, :] - atoms[None, None], axis=-1), axis=(1, 2))
    ok = dmin > excise
    q = quadrature_points(mesh)
    g = np.zeros(q.shape)
    g[ok] = grad_u(q[ok])
    flux = -g[:, :, None, :]
    src = np.sum(g ** 2, axis=-1)[..., None]
    return assemble_weak(mesh, flux, src)[:, 0]


# ---------------------------------------------------------------- metric harmonic maps

@dataclass
class MetricOnTarget:
    g: Callable                         # z (..., m) -> (..., m, m)
    dg: Callable | None = None          # z -> (..., m, m, m) with [..., k, i, j] = d_k g_ij
    C: float | None = None
    fd_step: float = 1e-5

    def derivative(self, z):
        if self.dg is not None:
            return self.dg(z)
        z = np.asarray(z, float)
        m = z.shape[-1]
        out = []
        for k in range(m):
            e = np.zeros(m)
            e[k] = self.fd_step
            out.append((self.g(z + e) - self.g(z - e)) / (2 * self.fd_step))
        return np.stack(out, axis=-3)

    def check(self, z):
        G = self.g(z)
        if not np.allclose(G, np.swapaxes(G, -1, -2), atol=1e-12):
            raise ValueError("metric not symmetric")
        ev = np.linalg.eigvalsh(G)
        if np.any(ev[..., 0] <= 0):
            raise ValueError("metric not positive definite at a sample")
        if self.C is not None and (np.any(ev < 1 / self.C - 1e-12) or np.any(ev > self.C + 1e-12)):
            raise ValueError("metric violates its stated bounds")

    def christoffel(self, z):
        """Gamma^i_kl = 1/2 g^{ij}(d_k g_jl + d_l g_jk - d_j g_kl), shape (..., i, k, l)."""
        G = self.g(z)
        D = self.derivative(z)                        # [..., k, i, j]
        Ginv = np.linalg.inv(G)
        t = (np.einsum("...kjl->...jkl", D) + np.einsum("...ljk->...jkl", D)
             - np.einsum("...jkl->...jkl", D))
        return 0.5 * np.einsum("...ij,...jkl->...ikl", Ginv, t)


def conformal_metric(mu: Callable, dmu: Callable) -> MetricOnTarget:
    """g = exp(2 mu) delta with exact derivatives."""
    def g(z):
        z = np.asarray(z, float)
        return np.exp(2 * mu(z))[..., None, None] * np.eye(z.shape[-1])

    def dg(z):
        z = np.asarray(z, float)
        e = np.exp(2 * mu(z))
        d = 2 * e[..., None] * dmu(z)                 # (..., m)
        return d[..., :, None, None] * np.eye(z.shape[-1])

    return MetricOnTarget(g, dg)


def metric_harmonic_load(u: FieldRm, metric: MetricOnTarget) -> np.ndarray:
    mesh = u.mesh
    ut = tri_average(u, mesh)
    metric.check(ut)
    gam = metric.christoffel(ut)                      # (T, i, k, l)
    gu = gradient_p1(u)                               # (T, m, 2)
    quad = np.einsum("tikl,tkd,tld->ti", gam, gu, gu)
    K = PoissonSolver(mesh, "dirichlet").K
    # weak form of Laplace(u) + Gamma(grad u, grad u), tested against psi
    return -(K @ u.values) + load_from_triangle(mesh, quad)


def metric_harmonic_residual(u: FieldRm, metric: MetricOnTarget) -> float:
    return weak_norm(u.mesh, metric_harmonic_load(u, metric))


# ---------------------------------------------------------------- -Laplace W = Omega . grad W

def _omega_array(omega) -> np.ndarray:
    om = np.asarray(getattr(omega, "values", omega), dtype=float)
    if om.ndim != 4 or om.shape[1] != 2 or om.shape[2] != om.shape[3]:
        raise ValueError("Omega must have shape (n, 2, m, m)")
    if not np.allclose(om, -np.swapaxes(om, -1, -2), atol=1e-12):
        raise ValueError("Omega is not antisymmetric")
    return om


def omega_dot_grad(mesh: TriMesh, om_t: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Per-triangle (Omega . grad W)^i = sum_k Omega_k^{ij} d_k W^j."""
    gW = gradient_p1(W, mesh)                         # (T, m, 2)
    return np.einsum("tkij,tjk->ti", om_t, gW)


def omega_per_triangle(mesh: TriMesh, omega) -> np.ndarray:
    """Per-triangle Omega: exact values when the potential carries them, else vertex averages."""
    om = _omega_array(omega)
    if hasattr(omega, "per_triangle"):
        return omega.per_triangle(mesh)
    return om[mesh.triangles].mean(axis=1)


def omega_l2(mesh: TriMesh, omega) -> float:
    om_t = omega_per_triangle(mesh, omega)
    return float(np.sqrt(np.sum(np.sum(om_t ** 2, axis=(1, 2, 3)) * mesh.areas)))


@dataclass
class SchrodingerResult:
    W: FieldRm
    iterations: int
    fixed_point_residual: float
    contraction: list
    morrey: object


def schrodinger_linear_solve(omega, boundary, mesh: TriMesh, gate: float = 3.0, tol: float = 1e-12,
                             max_iter: int = 500, radii=None) -> SchrodingerResult:
    """Picard iteration W <- solve(-Laplace W = Omega . grad W) with Dirichlet data."""
    om = _omega_array(omega)
    size = omega_l2(mesh, omega)
    if size > gate:
        raise DivergenceError(f"||Omega||_2 = {size:.3g} above gate {gate}")
    om_t = omega_per_triangle(mesh, omega)
    solver = PoissonSolver(mesh, "dirichlet")
    m = om.shape[-1]
    g = boundary(mesh.vertices[solver.fixed]) if callable(boundary) else np.asarray(boundary, float)
    g = np.asarray(g, float).reshape(len(solver.fixed), m)
    W = solver.solve(np.zeros((mesh.n_vertices, m)), g)
    ups, contraction = [], []
    for it in range(1, max_iter + 1):
        new = solver.solve(load_from_triangle(mesh, omega_dot_grad(mesh, om_t, W)), g)
        d = np.max(np.abs(new - W)) / max(np.max(np.abs(new)), 1e-300)
        ups.append(d)
        if len(ups) > 1:
            contraction.append(ups[-1] / max(ups[-2], 1e-300))
            if ups[-1] > 1e3 * ups[0]:
                raise DivergenceError("Picard iteration diverged")
        W = new
        if d < tol:
            break
    else:
        raise DivergenceError(f"no convergence in {max_iter} iterations")
    K = solver.K
    r = K @ W - load_from_triangle(mesh, omega_dot_grad(mesh, om_t, W))
    fpr = weak_norm(mesh, r)
    Wf = FieldRm(mesh, W)
    radii = radii if radii is not None else np.geomspace(0.05, 0.5, 8)
    prof = morrey_profile(Wf, [(0.0, 0.0)], radii)
    return SchrodingerResult(Wf, it, fpr, contraction, prof)


def sphere_omega(u: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Omega^{ij} = u^i grad u^j - u^j grad u^i at vertices (recovered gradient)."""
    G = recovered_gradient(u, mesh)                  # (n, m, 2)
    om = np.einsum("ni,njd->ndij", u, G)
    return om - np.swapaxes(om, -1, -2)
