"""Energies, pointwise identities and Euler-Lagrange residuals for immersions."""
from __future__ import annotations

import logging

import jax.numpy as jnp
import numpy as np

from ..exterior import MultiVector, hodge_star, project_normal, wedge
from ..fem import assemble_weak, dual_norm, gradient_p1, weak_divergence
from .charts import ImmersionChart, SurfaceCatalogueEntry

log = logging.getLogger(__name__)


class ConformalityError(ValueError):
    pass


def as_charts(surface, level: int | None = None) -> list:
    """Accept a chart, a list of charts, or a catalogue entry plus level."""
    if isinstance(surface, ImmersionChart):
        return [surface]
    if isinstance(surface, SurfaceCatalogueEntry):
        if level is None:
            raise ValueError("catalogue entry needs a refinement level")
        return surface.atlas(level)
    return list(surface)


def _require_conformal(chart: ImmersionChart, tol: float = 1e-8):
    geo = chart.fundamental_forms("vertices")
    d = float(np.max(geo.conformality()))
    if d > tol:
        raise ConformalityError(f"{chart.name}: conformality defect {d:.2e}")


# energies -------------------------------------------------------------------

def willmore_energy(surface, level: int | None = None) -> float:
    """W = int |H|^2 dvol_g, summed over the atlas."""
    W = 0.0
    for chart in as_charts(surface, level):
        geo = chart.fundamental_forms()
        W += chart.integrate(geo.H2 * geo.sqrtg)
    return W


def area(surface, level: int | None = None) -> float:
    return sum(c.integrate(c.fundamental_forms().sqrtg) for c in as_charts(surface, level))


def total_curvature(surface, level: int | None = None) -> float:
    return sum(c.integrate(c.fundamental_forms().K * c.fundamental_forms().sqrtg)
               for c in as_charts(surface, level))


def curvature_identities_check(surface, level: int | None = None, chi: int | None = None) -> dict:
    """Gauss-Bonnet, |I|^2 = 4|H|^2 - 2K, |dn|^2_g = |I|^2 and the umbilic form of W.

    gb_defect is None (with gb_skipped set) when no Euler characteristic is known.
    """
    if isinstance(surface, SurfaceCatalogueEntry) and chi is None and surface.closed:
        chi = surface.reference.get("chi")
    charts = as_charts(surface, level)
    int_K = W = umb = bih = 0.0
    i2 = dn = 0.0
    conformal = all(c.conformal for c in charts)
    for c in charts:
        geo = c.fundamental_forms()
        int_K += c.integrate(geo.K * geo.sqrtg)
        W += c.integrate(geo.H2 * geo.sqrtg)
        i2 = max(i2, float(np.max(np.abs(geo.I2 - (4 * geo.H2 - 2 * geo.K)))))
        dn = max(dn, float(np.max(np.abs(geo.dn2_g - geo.I2))))
        if c.m == 3:
            # (k1 - k2)^2 from the traceless part of the frame second form
            n = geo.n.as_vector()
            h = np.einsum("nmab,nm->nab", geo.I_frame, n)
            umb += c.integrate(((h[:, 0, 0] - h[:, 1, 1]) ** 2 + 4 * h[:, 0, 1] ** 2) * geo.sqrtg)
        if conformal:
            lap = geo.d2Phi[:, :, 0, 0] + geo.d2Phi[:, :, 1, 1]
            bih += c.integrate(np.sum(lap ** 2, axis=1) * np.exp(-2 * geo.lam))
    out = {"int_K": int_K, "W": W, "i2_defect": i2, "dn_defect": dn,
           "gb_defect": None, "gb_skipped": chi is None}
    if chi is not None:
        out["gb_defect"] = abs(int_K - 2 * np.pi * chi)
        if all(c.m == 3 for c in charts):
            out["umbilic_identity_defect"] = abs(W - 2 * np.pi * chi - 0.25 * umb)
    if conformal:
        out["biharmonic_defect"] = abs(W - 0.25 * bih)
    return out


# pointwise structure identities ----------------------------------------------

def _dz(d):
    """d_z of a field given its (.., 2) coordinate derivatives."""
    return 0.5 * (d[..., 0] - 1j * d[..., 1])


def _dzbar(d):
    return 0.5 * (d[..., 0] + 1j * d[..., 1])


def structure_identities_check(chart: ImmersionChart, where: str = "vertices") -> dict:
    """Max pointwise defects of the conformal-chart identities.

    Keys: grad_n (-2H grad Phi = grad n + n x grad-perp n, m=3), laplace_phi,
    gauss_n (both forms of K n, m=3), dzbar_ez, dz_ez, codazzi.
    """
    _require_conformal(chart)
    geo = chart.fundamental_forms(where)
    x, D1, D2 = geo.x, geo.dPhi, geo.d2Phi
    e2l = np.exp(2 * geo.lam)
    lap = D2[:, :, 0, 0] + D2[:, :, 1, 1]
    out = {"laplace_phi": float(np.max(np.abs(lap - 2 * e2l[:, None] * geo.H)))}

    dzPhi = _dz(D1)
    dzdz = 0.25 * (D2[:, :, 0, 0] - D2[:, :, 1, 1] - 2j * D2[:, :, 0, 1])
    out["dzbar_ez"] = float(np.max(np.abs(0.25 * lap - 0.5 * e2l[:, None] * geo.H)))
    dlam = (np.einsum("nai,naik->nk", D1, D2)) / (geo.g[:, 0, 0] + geo.g[:, 1, 1])[:, None]
    lhs = (dzdz - 2 * _dz(dlam)[:, None] * dzPhi) / e2l[:, None]
    out["dz_ez"] = float(np.max(np.abs(lhs - 0.5 * geo.H0)))

    q = chart.fn("hh0")(x)
    dq = chart.fn("dhh0")(x)
    dq_c = dq[:, 0, :] + 1j * dq[:, 1, :]
    lhs = _dzbar(dq_c) / e2l
    dH = geo.dH
    rhs = np.einsum("na,na->n", geo.H, _dz(dH)) + np.einsum("na,na->n", geo.H0, _dzbar(dH))
    out["codazzi"] = float(np.max(np.abs(lhs - rhs)))
    out["hh0_consistency"] = float(np.max(np.abs(q[:, 0] + 1j * q[:, 1]
                                                 - e2l * np.einsum("na,na->n", geo.H, geo.H0))))

    if chart.m == 3:
        n = geo.n.as_vector()
        dn = geo.dn.as_vector()                     # (N, 2, 3)
        Hs = np.einsum("na,na->n", geo.H, n)
        gperp = np.stack([-dn[:, 1], dn[:, 0]], axis=1)
        rhs = dn + np.cross(n[:, None, :], gperp)
        lhs = -2 * Hs[:, None, None] * np.moveaxis(D1, -1, 1)
        out["grad_n"] = float(np.max(np.abs(lhs - rhs)))
        # grad n x grad-perp n = sum_k d_k n x (grad-perp n)_k
        cr = np.cross(dn[:, 0], gperp[:, 0]) + np.cross(dn[:, 1], gperp[:, 1])
        Kn = geo.K[:, None] * n
        d2n = hodge_star(MultiVector(3, np.moveaxis(chart.fn("d2xi")(x), (-2, -1), (1, 2)))).as_vector()
        # div[n x grad-perp n] with grad-perp n = (-d2 n, d1 n)
        div = (np.cross(dn[:, 0], -dn[:, 1]) + np.cross(n, -d2n[:, 1, 0])
               + np.cross(dn[:, 1], dn[:, 0]) + np.cross(n, d2n[:, 0, 1]))
        out["gauss_n"] = float(max(np.max(np.abs(Kn + 0.5 / e2l[:, None] * cr)),
                                   np.max(np.abs(Kn + 0.5 / e2l[:, None] * div))))
    return out


# Euler-Lagrange residuals -----------------------------------------------------

def bracket(geo) -> np.ndarray:
    """grad H - 3 pi_n(grad H) + *(grad-perp n ^ H), shape (N, m, 2)."""
    m = geo.m
    n = geo.n
    Hm = MultiVector.vector(geo.H)
    out = np.empty((len(geo.x), m, 2))
    dnc = geo.dn.c
    for k in range(2):
        dHk = MultiVector.vector(geo.dH[:, :, k])
        pn = project_normal(n, dHk)
        perp = MultiVector(m, -dnc[:, 1] if k == 0 else dnc[:, 0])
        term = hodge_star(wedge(perp, Hm))
        out[:, :, k] = (dHk - 3 * pn + term).as_vector()
    return out


def _vertex_weights(chart: ImmersionChart) -> np.ndarray:
    geo = chart.fundamental_forms("vertices")
    return geo.sqrtg


def _load_norm(chart: ImmersionChart, r: np.ndarray) -> float:
    """Mass-weighted norm sqrt(sum |r_i|^2 / (sqrt(g)_i M_i)) over interior nodes.

    For a load r_i = int f psi_i dvol this approximates ||f||_{L^2(dvol)}.
    """
    mesh = chart.mesh
    nodes = mesh.interior
    w = _vertex_weights(chart)[nodes] * mesh.vertex_area[nodes]
    r = r.reshape(mesh.n_vertices, -1)[nodes]
    return float(np.sqrt(np.sum(np.sum(r ** 2, axis=1) / w)))


def conservative_load(chart: ImmersionChart) -> np.ndarray:
    """r_i = int bracket . grad psi_i (minus the weak divergence), shape (n, m)."""
    geo = chart.fundamental_forms("quad7")
    V = bracket(geo).reshape(chart.mesh.n_triangles, 7, chart.m, 2)
    return assemble_weak(chart.mesh, V)


def willmore_residual_conservative(chart: ImmersionChart, mode: str = "quadrature") -> float:
    """Weak norm of div[grad H - 3 pi_n(grad H) + *(grad-perp n ^ H)] over interior test functions.

    mode="quadrature" integrates the analytic bracket against grad psi_i with the
    7-point rule. The divergence equals -2 e^{2 lambda}(Delta_g H + 2H(H^2 - K)) n
    in codimension one, so half the load norm is comparable with
    willmore_residual_codim1. On a Willmore chart this is already at rounding
    level on coarse meshes. mode="discrete" builds the bracket per triangle from
    vertex samples (see willmore_residual_discrete) and is the one to use for
    refinement studies.
    """
    if mode == "discrete":
        return willmore_residual_discrete(chart)
    if mode != "quadrature":
        raise ValueError(f"unknown mode {mode!r}")
    _require_conformal(chart)
    return 0.5 * _load_norm(chart, conservative_load(chart))


def codim1_load(chart: ImmersionChart) -> np.ndarray:
    """r_i = int 2 (Delta_g H + 2H(H^2-K)) n psi_i dvol, shape (n, 3)."""
    if chart.m != 3:
        raise ValueError("codimension-one residual needs m = 3")
    geo = chart.fundamental_forms("quad7")
    x = geo.x
    Hs = chart.fn("mean_scalar")(x)
    lapH = chart.fn("lap_g_scalar")(x)
    f = lapH + 2 * Hs * (Hs ** 2 - geo.K)
    n = chart.fn("normal3")(x)
    src = (2 * f * geo.sqrtg)[:, None] * n
    return assemble_weak(chart.mesh, None, src.reshape(chart.mesh.n_triangles, 7, 3))


def willmore_residual_codim1(chart: ImmersionChart) -> float:
    """Weak L^2(dvol) norm of Delta_g H + 2H(H^2 - K) over interior nodes (m = 3)."""
    if chart.m != 3:
        raise ValueError("codimension-one residual needs m = 3")
    _require_conformal(chart)
    return 0.5 * _load_norm(chart, codim1_load(chart))


def willmore_pointwise(chart: ImmersionChart, where: str = "vertices") -> np.ndarray:
    """Delta_perp H + A~(H) - 2|H|^2 H at sample points, shape (N, m)."""
    geo = chart.fundamental_forms(where)
    return chart.fn("willmore_op")(geo.x)


# first variation ------------------------------------------------------------

def _normal_field(chart: ImmersionChart, V):
    """x -> pi_n(V(Phi(x))) for an ambient jax field V: R^m -> R^m."""
    P, phi = chart._fns["normal_proj"], chart.phi
    return lambda x: P(x) @ V(phi(x))


def default_variation(m: int, seed: int = 0, modes: int = 3):
    """A smooth random ambient field sum_k a_k cos(<w_k, p> + c_k) on R^m."""
    rng = np.random.default_rng(seed)
    A = jnp.asarray(rng.normal(size=(modes, m)) * 0.3)
    Wv = jnp.asarray(rng.normal(size=(modes, m)))
    c = jnp.asarray(rng.uniform(0, 2 * np.pi, size=modes))

    def V(p):
        return jnp.cos(Wv @ p + c) @ A
    return V


def first_variation_check(surface, V=None, t: float = 1e-4, level: int | None = None,
                          seed: int = 0) -> dict:
    """Central difference of W along Phi + tV against int <Delta_perp H + A~(H) - 2|H|^2 H, V> dvol.

    V: ambient jax field p -> R^m (the same field for every chart of an atlas,
    so patches stay glued), or None for a random one. It is projected on the
    normal space of each chart first.
    """
    charts = as_charts(surface, level)
    if V is None:
        V = default_variation(charts[0].m, seed)
    w_plus = w_minus = rhs = vnorm = 0.0
    for c in charts:
        Vn = _normal_field(c, V)
        geo = c.fundamental_forms()
        vals = np.asarray(_vmap(Vn)(geo.x + c.shift))
        vnorm += c.integrate(np.sum(vals ** 2, axis=1) * geo.sqrtg)
        if np.max(np.abs(vals)) == 0:
            continue
        op = c.fn("willmore_op")(geo.x)
        rhs += c.integrate(np.sum(op * vals, axis=1) * geo.sqrtg)
        phi = c.phi
        for sgn in (1, -1):
            pc = ImmersionChart(lambda x, s=sgn: phi(x) + s * t * Vn(x), c.mesh, c.m, False,
                                c.name + "-var", branched=c.branched, shift=c.shift)
            g2 = pc.fundamental_forms()
            w = pc.integrate(g2.H2 * g2.sqrtg)
            if sgn > 0:
                w_plus += w
            else:
                w_minus += w
    dW = (w_plus - w_minus) / (2 * t)
    vnorm = float(np.sqrt(vnorm))
    return {"dW_fd": dW, "dW_formula": rhs, "defect": abs(dW - rhs), "V_norm": vnorm,
            "relative": abs(dW - rhs) / vnorm if vnorm > 0 else 0.0, "t": t}


def _vmap(f):
    import jax
    g = jax.jit(jax.vmap(f))
    return lambda x: g(jnp.asarray(x))


def discrete_bracket(chart: ImmersionChart) -> np.ndarray:
    """Per-triangle bracket from vertex samples of H and n and their P1 gradients, (T, m, 2)."""
    mesh, m = chart.mesh, chart.m
    geo = chart.fundamental_forms("vertices")
    tri = mesh.triangles
    H_t = geo.H[tri].mean(axis=1)
    n_c = geo.n.c[tri].mean(axis=1)
    n_t = MultiVector(m, n_c / np.linalg.norm(n_c, axis=1, keepdims=True))
    dH = gradient_p1(geo.H, mesh)                       # (T, m, 2)
    dn = gradient_p1(geo.n.c, mesh)                     # (T, 2^m, 2)
    Hm = MultiVector.vector(H_t)
    out = np.empty((mesh.n_triangles, m, 2))
    for k in range(2):
        dHk = MultiVector.vector(dH[:, :, k])
        perp = MultiVector(m, -dn[:, :, 1] if k == 0 else dn[:, :, 0])
        out[:, :, k] = (dHk - 3 * project_normal(n_t, dHk) + hodge_star(wedge(perp, Hm))).as_vector()
    return out


def willmore_residual_discrete(chart: ImmersionChart) -> float:
    """H^{-1} norm of the weak divergence of the per-triangle discrete bracket.

    Converges to zero under refinement exactly when the immersion is Willmore.
    """
    _require_conformal(chart)
    return dual_norm(chart.mesh, weak_divergence(chart.mesh, discrete_bracket(chart)))
