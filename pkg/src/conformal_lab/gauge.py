"""Coulomb gauges for antisymmetric potentials and the conserved pair (A, B).

Matrix-valued P1 fields are arrays (n, m, m); 1-forms with values in m x m
matrices are stored per triangle as (T, 2, m, m), axis 1 being the direction.
The discrete gauge transform of a potential is

    Omega^P = skew(Phat^T grad P) + Phat^T Omega Phat

with Phat the nearest rotation to the triangle average of P. All defects
below are measured with exactly these discrete operators, so a manufactured
potential built from (P, xi) is reproduced to solver precision.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .compensation import DivergenceError
from .fem import PoissonSolver, dual_norm, gradient_p1, load_from_triangle, tri_average, weak_divergence, weak_norm
from .mesh import FieldRm, TriMesh

log = logging.getLogger(__name__)


class StagnationError(RuntimeError):
    pass


def skew(X):
    return 0.5 * (X - np.swapaxes(X, -1, -2))


def polar(X):
    """Nearest proper rotation (polar factor with det fixed to +1)."""
    U, _, Vt = np.linalg.svd(X)
    d = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, -1] *= d[..., None]
    return U @ Vt


def dist_so(X) -> np.ndarray:
    return np.linalg.norm(X - polar(X), axis=(-2, -1))


def perp(F):
    """grad-perp convention on the direction axis 1 of (T, 2, ...) arrays: (a, b) -> (-b, a)."""
    return np.stack([-F[:, 1], F[:, 0]], axis=1)


def grad_mat(mesh: TriMesh, X: np.ndarray) -> np.ndarray:
    n, m, k = X.shape
    g = gradient_p1(X.reshape(n, m * k), mesh)          # (T, m*k, 2)
    return np.moveaxis(g.reshape(-1, m, k, 2), 3, 1)


def tri_mat(mesh: TriMesh, X: np.ndarray) -> np.ndarray:
    return X[mesh.triangles].mean(axis=1)


def div_load(mesh: TriMesh, F: np.ndarray) -> np.ndarray:
    """r_i = int F . grad psi_i for F of shape (T, 2, m, m); returns (n, m, m)."""
    T, _, m, k = F.shape
    r = weak_divergence(mesh, np.moveaxis(F, 1, 3).reshape(T, m * k, 2))
    return r.reshape(-1, m, k)


def form_l2(mesh: TriMesh, F: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.sum(F ** 2, axis=(1, 2, 3)) * mesh.areas)))


@dataclass
class PotentialField:
    """Antisymmetric matrix-valued 1-form.

    values: per-vertex (n, 2, m, m). tri_values, when given, are the exact
    per-triangle values used by every discrete operator (manufactured data);
    otherwise the triangle average of the vertex values is used.
    """
    mesh: TriMesh
    values: np.ndarray
    tri_values: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        v = self.values
        if v.ndim != 4 or v.shape[0] != self.mesh.n_vertices or v.shape[1] != 2 or v.shape[2] != v.shape[3]:
            raise ValueError("potential must have shape (n_vertices, 2, m, m)")
        for arr in (v, self.tri_values):
            if arr is not None and not np.allclose(arr, -np.swapaxes(arr, -1, -2), atol=1e-12):
                raise ValueError("potential is not antisymmetric")

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    def per_triangle(self, mesh: TriMesh | None = None) -> np.ndarray:
        if self.tri_values is not None:
            return self.tri_values
        return tri_mat(self.mesh, self.values)

    def l2(self) -> float:
        return form_l2(self.mesh, self.per_triangle())

    def conjugate(self, Q: np.ndarray) -> "PotentialField":
        tv = None if self.tri_values is None else Q @ self.tri_values @ Q.T
        return PotentialField(self.mesh, Q @ self.values @ Q.T, tv)

    @classmethod
    def from_triangles(cls, mesh: TriMesh, tri_values: np.ndarray) -> "PotentialField":
        tri_values = skew(np.asarray(tri_values, dtype=float))
        w = mesh.areas[:, None, None, None] * tri_values
        vals = np.zeros((mesh.n_vertices,) + tri_values.shape[1:])
        for k in range(3):
            np.add.at(vals, mesh.triangles[:, k], w)
        vals /= (3 * mesh.vertex_area)[:, None, None, None]
        return cls(mesh, skew(vals), tri_values)


@dataclass
class GaugeData:
    P: np.ndarray             # (n, m, m) rotations
    xi: np.ndarray            # (n, m, m) antisymmetric, zero on the boundary
    defect: float
    recon_residual: float
    energy_bound_C: float
    iterations: int
    history: list = field(default_factory=list)
    A: np.ndarray | None = None
    B: np.ndarray | None = None


def gauge_transform(mesh: TriMesh, om_t: np.ndarray, P: np.ndarray) -> np.ndarray:
    Pt = polar(tri_mat(mesh, P))[:, None]
    dP = grad_mat(mesh, P)
    return skew(np.swapaxes(Pt, -1, -2) @ dP) + np.swapaxes(Pt, -1, -2) @ om_t @ Pt


def manufactured_potential(mesh: TriMesh, P: np.ndarray, xi: np.ndarray) -> PotentialField:
    """Omega = Phat grad-perp(xi) Phat^T - Phat skew(Phat^T grad P) Phat^T, the inverse of gauge_transform."""
    Pt = polar(tri_mat(mesh, P))[:, None]
    PtT = np.swapaxes(Pt, -1, -2)
    gxi = perp(grad_mat(mesh, xi))
    om = Pt @ (gxi - skew(PtT @ grad_mat(mesh, P))) @ PtT
    return PotentialField.from_triangles(mesh, om)


def coulomb_defect(mesh: TriMesh, om_p: np.ndarray) -> float:
    """Weak divergence of Omega^P against every P1 test function (interior and boundary)."""
    r = div_load(mesh, om_p)
    return weak_norm(mesh, r.reshape(mesh.n_vertices, -1), np.arange(mesh.n_vertices))


def coulomb_gauge(omega: PotentialField, gate: float = 1.0, tol: float = 1e-9, max_iter: int = 200,
                  patience: int = 50) -> GaugeData:
    """Gauge P making Omega^P weakly divergence free, then xi with grad-perp(xi) = Omega^P.

    Each step is an H1-preconditioned Riemannian gradient step on
    int |Omega^P|^2: solve the Neumann problem K eta = -div(Omega^P) and move
    P <- P exp(eta), retracting onto SO(m) by the polar factor.
    """
    mesh = omega.mesh
    om_t = omega.per_triangle()
    m = omega.m
    e_om = omega.l2() ** 2
    if e_om >= gate:
        raise DivergenceError(f"int |Omega|^2 = {e_om:.3g} above gate {gate}")
    neu = PoissonSolver(mesh, "neumann")
    P = np.broadcast_to(np.eye(m), (mesh.n_vertices, m, m)).copy()
    history = []
    best, since = np.inf, 0
    for it in range(max_iter + 1):
        om_p = gauge_transform(mesh, om_t, P)
        d = coulomb_defect(mesh, om_p)
        E = form_l2(mesh, om_p) ** 2
        history.append((it, E, d))
        if d < tol:
            break
        if d < best * (1 - 1e-12):
            best, since = d, 0
        else:
            since += 1
            if since >= patience:
                raise StagnationError("Coulomb descent stagnated")
        r = div_load(mesh, om_p).reshape(mesh.n_vertices, -1)
        # a weak divergence sums to zero up to roundoff of the flux, which near
        # convergence dominates the (tiny) load itself
        eta = skew(neu.solve(-r, check_compat=False).reshape(-1, m, m))
        P = polar(P @ expm(eta))
    else:
        raise StagnationError(f"no Coulomb gauge after {max_iter} steps (defect {d:.3g})")
    # xi = 0 on the boundary, grad-perp(xi) the L2 projection of Omega^P
    dirich = PoissonSolver(mesh, "dirichlet")
    rhs = div_load(mesh, -perp(om_p)).reshape(mesh.n_vertices, -1)
    xi = skew(dirich.solve(rhs).reshape(-1, m, m))
    rec = form_l2(mesh, om_p - perp(grad_mat(mesh, xi)))
    e_xi = form_l2(mesh, grad_mat(mesh, xi)) ** 2
    e_p = form_l2(mesh, grad_mat(mesh, P)) ** 2
    C = (e_xi + e_p) / e_om if e_om > 0 else 0.0
    return GaugeData(P, xi, d, rec, C, it, history)


@dataclass
class ABResult:
    A: np.ndarray
    B: np.ndarray
    A_tilde: np.ndarray
    iterations: int
    contraction: list
    conservation_defect: float       # H^-1 norm over interior test functions
    conservation_weak: float         # mass-weighted l2 variant
    identity_residual: float
    a_dist_so: float
    C_dist: float


def construct_AB(omega: PotentialField, gauge: GaugeData | None = None, tol: float = 1e-12,
                 max_iter: int = 300) -> ABResult:
    """Picard iteration for (Atilde, B) in the Coulomb gauge.

    Atilde: Neumann problem  div(grad Atilde - Atilde grad-perp xi + grad-perp B Phat) = 0,
            area mean equal to Id.
    B:      Dirichlet-0 problem with grad B = -[(grad Atilde - Atilde grad-perp xi) Phat^T]^perp.
    Both are the divergence and curl halves of grad Atilde - Atilde grad-perp xi + grad-perp B P = 0.
    """
    mesh = omega.mesh
    gauge = gauge or coulomb_gauge(omega)
    m = omega.m
    n = mesh.n_vertices
    P = gauge.P
    Pt = polar(tri_mat(mesh, P))[:, None]
    PtT = np.swapaxes(Pt, -1, -2)
    gxi = perp(grad_mat(mesh, gauge.xi))
    neu = PoissonSolver(mesh, "neumann")
    dirich = PoissonSolver(mesh, "dirichlet")
    eye = np.eye(m)
    At = np.broadcast_to(eye, (n, m, m)).copy()
    B = np.zeros((n, m, m))
    ups, contraction = [], []

    def step_A(At, B):
        flux = tri_mat(mesh, At)[:, None] @ gxi - perp(grad_mat(mesh, B)) @ Pt
        new = neu.solve(div_load(mesh, flux).reshape(n, -1), check_compat=False).reshape(n, m, m)
        return new + eye

    def b_flux(At):
        F = -(grad_mat(mesh, At) - tri_mat(mesh, At)[:, None] @ gxi) @ PtT
        return np.stack([F[:, 1], -F[:, 0]], axis=1)

    for it in range(1, max_iter + 1):
        At_new = step_A(At, B)
        B_new = dirich.solve(div_load(mesh, b_flux(At_new)).reshape(n, -1)).reshape(n, m, m)
        d = float(np.max(np.abs(At_new - At)) + np.max(np.abs(B_new - B)))
        ups.append(d)
        if len(ups) > 1 and ups[-2] > 0:
            contraction.append(ups[-1] / ups[-2])
            if ups[-1] > 1e3 * ups[0]:
                raise DivergenceError("(A, B) iteration diverged")
        At, B = At_new, B_new
        if d < tol:
            break
    else:
        raise DivergenceError(f"(A, B) iteration did not converge in {max_iter} steps")
    A = At @ np.swapaxes(P, -1, -2)
    om_t = omega.per_triangle()
    resid = grad_mat(mesh, A) - tri_mat(mesh, A)[:, None] @ om_t
    r = div_load(mesh, resid).reshape(n, -1)
    cons = dual_norm(mesh, r)
    ident = form_l2(mesh, grad_mat(mesh, At) - tri_mat(mesh, At)[:, None] @ gxi
                    + perp(grad_mat(mesh, B)) @ Pt)
    dist = float(np.max(dist_so(A)))
    e_om = omega.l2() ** 2
    return ABResult(A, B, At, it, contraction, cons, weak_norm(mesh, r), ident, dist,
                    dist / e_om if e_om > 0 else 0.0)


def _as_array(u) -> np.ndarray:
    return u.values if isinstance(u, FieldRm) else np.asarray(u, dtype=float)


def conservation_equivalence_check(u, omega: PotentialField, A: np.ndarray, B: np.ndarray) -> dict:
    """Weak residuals of div(A grad u - B grad-perp u) = 0 and -Laplace u = Omega . grad u."""
    mesh = omega.mesh
    uv = _as_array(u)
    if uv.shape != (mesh.n_vertices, omega.m) or A.shape != (mesh.n_vertices, omega.m, omega.m):
        raise ValueError("shape mismatch between u, Omega and A")
    gu = gradient_p1(uv, mesh)                             # (T, m, 2)
    At, Bt = tri_mat(mesh, A), tri_mat(mesh, B)
    flux = np.einsum("tij,tjd->tid", At, gu) - np.einsum("tij,tjd->tid", Bt, np.stack([-gu[..., 1], gu[..., 0]], -1))
    lhs = weak_divergence(mesh, flux)
    om_t = omega.per_triangle()
    K = PoissonSolver(mesh, "dirichlet").K
    rhs = K @ uv - load_from_triangle(mesh, np.einsum("tkij,tjk->ti", om_t, gu))
    gap = lhs - np.einsum("nij,nj->ni", A, rhs)
    return {"lhs_residual": dual_norm(mesh, lhs), "rhs_residual": dual_norm(mesh, rhs),
            "identity_gap": dual_norm(mesh, gap), "lhs_weak": weak_norm(mesh, lhs),
            "rhs_weak": weak_norm(mesh, rhs)}


def omega_from_geometry(kind: str, u, H=None) -> PotentialField:
    """Potential of the sphere harmonic map system or of the CMC system.

    sphere: Omega^{ij} = u^i grad u^j - u^j grad u^i.
    cmc:    -H(u) [[0, -gp u3, gp u2], [gp u3, 0, -gp u1], [-gp u2, gp u1, 0]] with gp = grad-perp,
            signed so that -Laplace u = Omega . grad u for Laplace u = 2H u_x x u_y.
    """
    if not isinstance(u, FieldRm):
        raise TypeError("u must be a FieldRm")
    mesh = u.mesh
    uv = u.values
    gu = gradient_p1(u)                                     # (T, m, 2)
    if kind == "sphere":
        nr = np.linalg.norm(uv, axis=1)
        if np.max(np.abs(nr - 1)) > 1e-8:
            raise ValueError("non-unit normal field")
        ut = tri_average(u, mesh)
        om = np.einsum("ti,tjd->tdij", ut, gu)
        return PotentialField.from_triangles(mesh, om - np.swapaxes(om, -1, -2))
    if kind == "cmc":
        if u.m != 3:
            raise ValueError("CMC potential needs m = 3")
        if H is None:
            raise ValueError("CMC potential needs H")
        h = H(tri_average(u, mesh)) if callable(H) else np.full(mesh.n_triangles, float(H))
        gp = np.stack([-gu[..., 1], gu[..., 0]], axis=-1)   # (T, m, 2)
        om = np.zeros((mesh.n_triangles, 2, 3, 3))
        for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
            om[:, :, i, j] = -gp[:, k]
            om[:, :, j, i] = gp[:, k]
        om *= -np.asarray(h).reshape(-1, 1, 1, 1)
        return PotentialField.from_triangles(mesh, om)
    raise ValueError(f"unknown geometry source {kind!r}")


# -------------------------------------------------------------- random data

def random_so_field(mesh: TriMesh, rng: np.random.Generator, m: int = 3, amplitude: float = 1.0,
                    kmax: int = 2, vanish_on_boundary: bool = False) -> np.ndarray:
    """Smooth random so(m)-valued P1 field from low-frequency trigonometric modes."""
    x = mesh.vertices
    n_pairs = m * (m - 1) // 2
    out = np.zeros((mesh.n_vertices, m, m))
    iu = np.triu_indices(m, 1)
    vals = np.zeros((mesh.n_vertices, n_pairs))
    for p in range(n_pairs):
        k = rng.integers(-kmax, kmax + 1, size=(3, 2)).astype(float)
        ph = rng.uniform(0, 2 * np.pi, 3)
        c = rng.normal(size=3)
        vals[:, p] = np.sum(c * np.cos(x @ k.T + ph), axis=1)
    if vanish_on_boundary:
        vals *= (1 - np.sum(x ** 2, axis=1))[:, None]
    vals *= amplitude
    out[:, iu[0], iu[1]] = vals
    return out - np.swapaxes(out, -1, -2)


def random_manufactured(mesh: TriMesh, rng: np.random.Generator, m: int = 3, target_l2: float = 0.3):
    """Manufactured Omega from random (P0, xi0), rescaled to the requested L2 norm."""
    xi_shape = random_so_field(mesh, rng, m, vanish_on_boundary=True)
    p_shape = random_so_field(mesh, rng, m)
    s = 1.0
    for _ in range(60):
        P0 = expm(s * p_shape)
        om = manufactured_potential(mesh, P0, s * xi_shape)
        ratio = om.l2() / target_l2
        if abs(ratio - 1) < 1e-3:
            break
        s /= ratio
    return om, P0, s * xi_shape


def random_smooth_potential(mesh: TriMesh, rng: np.random.Generator, m: int = 3,
                            target_l2: float = 0.3) -> PotentialField:
    comp = np.stack([random_so_field(mesh, rng, m), random_so_field(mesh, rng, m)], axis=1)
    om = PotentialField(mesh, comp)
    return PotentialField(mesh, comp * (target_l2 / om.l2()))


def potential_from_stream(mesh: TriMesh, xi: np.ndarray) -> PotentialField:
    """Divergence-free potential grad-perp(xi) with exact per-triangle values."""
    return PotentialField.from_triangles(mesh, perp(grad_mat(mesh, skew(xi))))


def gauge_report(omega: PotentialField, u=None) -> dict:
    g = coulomb_gauge(omega)
    ab = construct_AB(omega, g)
    out = {"m": omega.m, "omega_l2": omega.l2(), "coulomb_defect": g.defect,
           "recon_residual": g.recon_residual, "a_dist_so": ab.a_dist_so,
           "conservation_defect": ab.conservation_defect}
    if u is not None:
        out["equivalence"] = conservation_equivalence_check(u, omega, ab.A, ab.B)
    return out
