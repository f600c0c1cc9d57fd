"""Conservation potentials L, S, R of Willmore charts and the holomorphic differential f."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exterior import MultiVector, bullet, contract, hodge_star, inner, wedge
from ..fem import (QUAD7_BARY, QUAD7_W, PoissonSolver, assemble_weak, dual_norm, gradient_p1,
                   rot90)
from .charts import ImmersionChart
from .operators import _dz, _dzbar, _require_conformal, bracket, willmore_residual_conservative

WILLMORE_GATE = 0.05


class NotWillmoreError(ValueError):
    pass


@dataclass
class Potentials:
    chart: ImmersionChart
    L: np.ndarray                 # (n, m) vertex values
    S: np.ndarray                 # (n,)
    R: np.ndarray                 # (n, 2^m), grade 2
    residuals: dict = field(default_factory=dict)
    gate_residual: float = 0.0


def _at_quad(mesh, vals):
    """P1 interpolation of vertex values to the 7 quadrature nodes, shape (T, 7, ...)."""
    return np.einsum("qk,tk...->tq...", QUAD7_BARY, vals[mesh.triangles])


def _mv(m, c):
    return MultiVector(m, c)


def _perp(F):
    """grad-perp on a trailing (.., 2) derivative axis."""
    return rot90(F)


def _contract_vec(A: MultiVector, v: np.ndarray) -> MultiVector:
    return contract(A, MultiVector.vector(v))


def _r_flux(geo, L_q, m):
    """L ^ d_k Phi + 2 (*(n -| H)) -| d_k Phi for k = 1, 2, components (N, 2^m, 2)."""
    star_nH = hodge_star(contract(geo.n, MultiVector.vector(geo.H)))
    Lm = MultiVector.vector(L_q)
    out = np.empty((len(geo.x), 1 << m, 2))
    for k in range(2):
        dk = geo.dPhi[:, :, k]
        out[:, :, k] = (wedge(Lm, MultiVector.vector(dk)) + 2 * _contract_vec(star_nH, dk)).c
    return out


def _l2_tri(mesh, E):
    """L^2 norm of quadrature-node data E of shape (T, 7, ...)."""
    w = mesh.areas[:, None] * QUAD7_W[None, :]
    return float(np.sqrt(np.sum(w * np.sum(E.reshape(E.shape[0], E.shape[1], -1) ** 2, axis=2))))


def conservation_potentials(chart: ImmersionChart, gate: float = WILLMORE_GATE) -> Potentials:
    """Solve for L (grad-perp L = bracket), S and R, and report the conservation-law residuals.

    L, S and R are P1 fields from pure-Neumann least-squares solves; constants
    are fixed by zero mean. Residual keys:
      law_L             div <L, grad-perp Phi>                     (H^{-1})
      law_R             div[L ^ grad-perp Phi + 2 (*(n-|H))-|grad-perp Phi]  (H^{-1})
      system_S, system_R   first-order S/R system, both lines         (L^2)
      laplace_S, laplace_R, laplace_Phi   second-order system           (H^{-1})
      laplace_Phi_alt   Delta Phi - (1/2 grad-perp S . grad Phi - 1/2 grad R -| grad-perp Phi), L^2 of the load
    and the codimension-one variants (*_c1) when m = 3.
    """
    _require_conformal(chart)
    if chart.periodic:
        raise ValueError("potentials are local: restrict the chart to a disc first")
    gate_res = willmore_residual_conservative(chart)
    if gate_res > gate:
        raise NotWillmoreError(f"conservative residual {gate_res:.3e} above gate {gate}")
    mesh, m = chart.mesh, chart.m
    T = mesh.n_triangles
    geo = chart.fundamental_forms("quad7")
    V = bracket(geo)                                         # (N, m, 2)
    neu = PoissonSolver(mesh, "neumann")

    # grad L = -rot90(V) so that grad-perp L = V
    L = neu.solve(assemble_weak(mesh, (-_perp(V)).reshape(T, 7, m, 2)), check_compat=False)
    L_q = _at_quad(mesh, L).reshape(-1, m)
    gS = np.einsum("na,nak->nk", L_q, geo.dPhi)
    S = neu.solve(assemble_weak(mesh, gS.reshape(T, 7, 1, 2)), check_compat=False)[:, 0]
    gR = _r_flux(geo, L_q, m)
    R = neu.solve(assemble_weak(mesh, gR.reshape(T, 7, 1 << m, 2)), check_compat=False)

    pot = Potentials(chart, L, S, R, gate_residual=gate_res)
    pot.residuals = _residuals(chart, geo, L_q, S, R)
    return pot


def _residuals(chart, geo, L_q, S, R) -> dict:
    mesh, m = chart.mesh, chart.m
    T, N = mesh.n_triangles, len(geo.x)
    res = {}
    dperp = _perp(geo.dPhi)                                   # (N, m, 2)

    # (law L) div <L, grad-perp Phi> = 0
    flux = np.einsum("na,nak->nk", L_q, dperp)
    res["law_L"] = dual_norm(mesh, assemble_weak(mesh, flux.reshape(T, 7, 1, 2)))

    # (law R) div[L ^ grad-perp Phi + 2 (*(n -| H)) -| grad-perp Phi] = 0
    star_nH = hodge_star(contract(geo.n, MultiVector.vector(geo.H)))
    Lm = MultiVector.vector(L_q)
    fl = np.empty((N, 1 << m, 2))
    for k in range(2):
        fl[:, :, k] = (wedge(Lm, MultiVector.vector(dperp[:, :, k]))
                       + 2 * _contract_vec(star_nH, dperp[:, :, k])).c
    res["law_R"] = dual_norm(mesh, assemble_weak(mesh, fl.reshape(T, 7, 1 << m, 2)))

    # first-order system with per-triangle gradients of S and R
    gS = np.repeat(gradient_p1(S, mesh)[:, 0, :], 7, axis=0)          # (N, 2)
    gR = np.repeat(gradient_p1(R, mesh), 7, axis=0)                   # (N, 2^m, 2)
    gRp = _perp(gR)
    gSp = _perp(gS)
    star_n = hodge_star(geo.n)
    e1 = gS + np.stack([inner(star_n, _mv(m, gRp[:, :, k])) for k in range(2)], axis=1)
    sgn = (-1) ** m
    e2 = np.empty_like(gR)
    for k in range(2):
        rhs = sgn * hodge_star(bullet(geo.n, _mv(m, gRp[:, :, k]))) + (-1) ** (m - 1) * (star_n * gSp[:, k])
        e2[:, :, k] = gR[:, :, k] - rhs.c
    res["system_S"] = _l2_tri(mesh, e1.reshape(T, 7, 2))
    res["system_R"] = _l2_tri(mesh, e2.reshape(T, 7, -1))

    # second-order system, weak form: r_i = int grad u . grad psi_i + int F psi_i for Delta u = F
    dn = geo.dn                                                      # batch (N, 2)
    star_dn = hodge_star(dn)
    FS = -sum(inner(_mv(m, star_dn.c[:, k]), _mv(m, gRp[:, :, k])) for k in range(2))
    FR = sum((sgn * hodge_star(bullet(_mv(m, dn.c[:, k]), _mv(m, gRp[:, :, k])))
              + _mv(m, star_dn.c[:, k]) * gSp[:, k]).c for k in range(2))
    gRm = [_mv(m, gR[:, :, k]) for k in range(2)]
    RdPhi = sum(contract(gRm[k], MultiVector.vector(dperp[:, :, k])).as_vector() for k in range(2))
    FPhi = 0.5 * np.einsum("nk,nak->na", gSp, geo.dPhi) - 0.5 * RdPhi
    res["laplace_S"] = _weak_eq(mesh, gS[:, None, :], FS[:, None])
    res["laplace_R"] = _weak_eq(mesh, gR, FR)
    res["laplace_Phi"] = _weak_eq(mesh, geo.dPhi, FPhi)
    lap = geo.d2Phi[:, :, 0, 0] + geo.d2Phi[:, :, 1, 1]
    res["laplace_Phi_alt"] = _l2_tri(mesh, (lap - FPhi).reshape(T, 7, m))

    if m == 3:
        res.update(_codim1_residuals(mesh, geo, gS, gR))
    return res


def _weak_eq(mesh, grad_u, F):
    """H^{-1} norm of r_i = int grad u . grad psi_i + int F psi_i (Delta u = F weakly)."""
    T = mesh.n_triangles
    k = grad_u.shape[1]
    r = assemble_weak(mesh, grad_u.reshape(T, 7, k, 2), F.reshape(T, 7, k))
    return dual_norm(mesh, r)


def _codim1_residuals(mesh, geo, gS, gR) -> dict:
    """Codimension-one form with S' = S/2 and the vector r' = *R / 2."""
    dn = geo.dn.as_vector()                                          # (N, 2, 3)
    gr = np.stack([hodge_star(MultiVector(3, gR[:, :, k])).as_vector() for k in range(2)], axis=-1) / 2
    gs = gS / 2
    grp, gsp = _perp(gr), _perp(gs)
    out = {}
    FS = -np.einsum("nka,nak->n", dn, grp)
    Fr = np.cross(dn[:, 0], grp[:, :, 0]) + np.cross(dn[:, 1], grp[:, :, 1]) + np.einsum("nk,nka->na", gsp, dn)
    FPhi = np.einsum("nk,nak->na", gsp, geo.dPhi) + np.cross(grp[:, :, 0], geo.dPhi[:, :, 0]) \
        + np.cross(grp[:, :, 1], geo.dPhi[:, :, 1])
    out["laplace_S_c1"] = _weak_eq(mesh, gs[:, None, :], FS[:, None])
    out["laplace_R_c1"] = _weak_eq(mesh, gr, Fr)
    out["laplace_Phi_c1"] = _weak_eq(mesh, geo.dPhi, FPhi)
    return out


def conformal_willmore_differential(chart: ImmersionChart, potentials: Potentials | None = None) -> dict:
    """f = e^lambda B + 2i e^{2 lambda} <H, H0> with B = 2 <d_z L, e_z>, and its holomorphy defect.

    d_z L is taken from the defining relation grad-perp L = bracket at the
    vertices; the discrete potential (if given) is used for a second estimate
    of the first line of the d_z(L - 2iH) system.
    """
    _require_conformal(chart)
    mesh = chart.mesh
    geo = chart.fundamental_forms("vertices")
    V = bracket(geo)
    dzL = 0.5 * (V[:, :, 1] + 1j * V[:, :, 0])                     # grad L = (V2, -V1)
    dzPhi = _dz(geo.dPhi)
    dzbPhi = _dzbar(geo.dPhi)
    e2l = np.exp(2 * geo.lam)
    hh0 = np.einsum("na,na->n", geo.H, geo.H0)
    B = 2 * np.einsum("na,na->n", dzL, dzPhi) * np.exp(-geo.lam)
    f = np.exp(geo.lam) * B + 2j * e2l * hh0
    gf = gradient_p1(np.column_stack([f.real, f.imag]), mesh)          # (T, 2, 2)
    dzb_f = _dzbar(gf[:, 0, :] + 1j * gf[:, 1, :])
    hol = float(np.sqrt(np.sum(np.abs(dzb_f) ** 2 * mesh.areas)))

    # decomposition d_z L = B e_zbar - 2i pi_n(d_z H)
    dzH = _dz(geo.dH)
    pn_dzH = np.einsum("nab,nb->na", geo.Pn, dzH)
    ezb = np.exp(-geo.lam)[:, None] * dzbPhi
    decomp = float(np.max(np.abs(dzL - (B[:, None] * ezb - 2j * pn_dzH))))

    w = dzL - 2j * dzH
    line1 = np.einsum("na,na->n", dzbPhi, w) - 1j * geo.H2 * e2l
    line2 = np.einsum("na,na->n", dzPhi, w) - (0.5 * f - 2j * e2l * hh0)
    line2_half_f = np.einsum("na,na->n", dzPhi, w) - 0.5 * f
    out = {"f": f, "B": B, "holomorphy_defect": hol, "f_max": float(np.max(np.abs(f))),
           "decomposition_defect": decomp,
           "identity_line1": float(np.max(np.abs(line1))),
           "identity_line2": float(np.max(np.abs(line2))),
           "identity_line2_half_f": float(np.max(np.abs(line2_half_f)))}
    if potentials is not None:
        gL = gradient_p1(potentials.L, mesh)                              # (T, m, 2)
        dzLh = _dz(gL)
        tri = mesh.triangles
        wh = dzLh - 2j * _dz(geo.dH)[tri].mean(axis=1)
        l1 = (np.einsum("na,na->n", dzbPhi[tri].mean(axis=1), wh)
              - 1j * (geo.H2 * e2l)[tri].mean(axis=1))
        out["identity_line1_discrete"] = float(np.sqrt(np.sum(np.abs(l1) ** 2 * mesh.areas)))
    return out
