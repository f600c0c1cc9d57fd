"""Named experiments behind the command line runner.

Each experiment takes its merged parameters and tolerances, runs the numerics
and records checks (name, value, tolerance, relation, pass), plain data for the
report, and optional file artifacts (csv, obj, vtk).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .mesh import FieldRm, build_disc_mesh, export_field_csv, export_obj, export_vtk


class ExperimentError(RuntimeError):
    """A downstream operation failed inside an experiment."""


_RELATIONS = {
    "<=": lambda v, t: v <= t,
    "<": lambda v, t: v < t,
    ">=": lambda v, t: v >= t,
    ">": lambda v, t: v > t,
}


@dataclass
class Check:
    name: str
    value: object
    tolerance: float | None
    relation: str = "<="
    passed: bool = field(init=False)

    def __post_init__(self):
        if self.relation == "true":
            self.passed = bool(self.value)
            return
        v = self.value
        if v is None or (isinstance(v, float) and math.isnan(v)):
            self.passed = False
            return
        self.passed = bool(_RELATIONS[self.relation](float(v), float(self.tolerance)))

    def as_dict(self) -> dict:
        return {"name": self.name, "value": jsonable(self.value), "tolerance": jsonable(self.tolerance),
                "relation": self.relation, "pass": self.passed}


def jsonable(x):
    """Plain JSON types; NaN -> None, +-inf -> "inf" / "-inf"."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, complex):
        return [jsonable(x.real), jsonable(x.imag)]
    return x


class Context:
    """Collects checks, data, artifacts and the mesh levels an experiment touched."""

    def __init__(self, params: dict, tol: dict, seed: int, out: Path | None):
        self.p, self.tol, self.seed, self.out = params, tol, seed, out
        self.checks: list[Check] = []
        self.data: dict = {}
        self.artifacts: list[str] = []
        self.levels: set = set()

    def check(self, name, value, tol_key: str | None, relation: str = "<=", tolerance=None):
        t = self.tol[tol_key] if tol_key is not None else tolerance
        c = Check(name, jsonable(value) if not isinstance(value, bool) else value, t, relation)
        self.checks.append(c)
        return c

    def level(self, k: int) -> int:
        self.levels.add(int(k))
        return int(k)

    def _path(self, name: str) -> Path | None:
        if self.out is None:
            return None
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(name)
        return self.out / name

    def rows_csv(self, name: str, rows: list):
        path = self._path(name)
        if path is None or not rows:
            return
        keys = list(rows[0].keys())
        with path.open("w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            wr.writeheader()
            for r in rows:
                wr.writerow({k: _csv_cell(r.get(k)) for k in keys})

    def field_csv(self, name: str, f: FieldRm):
        path = self._path(name)
        if path is not None:
            export_field_csv(f, path)

    def obj(self, name: str, mesh, positions=None):
        path = self._path(name)
        if path is not None:
            export_obj(mesh, path, positions)

    def vtk(self, name: str, mesh, fields: dict | None = None):
        path = self._path(name)
        if path is not None:
            export_vtk(mesh, path, fields)


def _csv_cell(v):
    v = jsonable(v)
    if isinstance(v, float):
        return repr(v)
    return v


def orders(h, e, floor: float = 1e-12) -> list:
    """Observed orders log(e_k / e_k+1) / log(h_k / h_k+1).

    A pair already below `floor` counts as converged (order inf) rather than 0.
    """
    out = []
    for (h0, e0), (h1, e1) in zip(zip(h, e), zip(h[1:], e[1:])):
        if (e0 < floor and e1 < floor) or e1 == 0:
            out.append(float("inf"))
        else:
            out.append(float(np.log(e0 / e1) / np.log(h0 / h1)))
    return out


def _study_levels(p) -> list:
    return list(range(p["level"] - p["refinements"] + 1, p["level"] + 1))


def _grid_h(level: int) -> float:
    return 2 * np.pi / 2 ** level


# -------------------------------------------------------------------- willmore

def exp_willmore_energy(ctx: Context):
    from .willmore import Mobius, conformal_invariance_check, curvature_identities_check, get_surface
    from .willmore import area

    p = ctx.p
    rows = []
    for name in p["surfaces"]:
        entry = get_surface(name)
        lev = ctx.level(p["level"])
        cur = curvature_identities_check(entry, lev)
        W, ref = cur["W"], entry.reference
        row = {"surface": name, "level": lev, "W": W, "int_K": cur["int_K"], "area": area(entry, lev),
               "W_reference": ref.get("W")}
        if "W" in ref and ref["W"] > 0:
            ctx.check(f"{name}: |W - W_ref| / W_ref", abs(W - ref["W"]) / ref["W"], "energy_rel")
        elif "W" in ref:
            ctx.check(f"{name}: |W|", abs(W), "energy_abs")
        chi = ref.get("chi") if entry.closed else None
        if chi is not None:
            target = 2 * np.pi * chi
            if chi != 0:
                ctx.check(f"{name}: |int K - 2 pi chi| / (2 pi chi)", abs(cur["int_K"] - target) / abs(target),
                          "gauss_bonnet_rel")
            else:
                ctx.check(f"{name}: |int K|", abs(cur["int_K"]), "gauss_bonnet_abs")
        if entry.closed:
            sc = conformal_invariance_check(entry.atlas(lev), Mobius([("dilation", p["scale"])]))
            row["W_scaled"] = sc["W_transformed"]
            ctx.check(f"{name}: |W(s Phi) - W(Phi)|", sc["defect"], "scaling_abs")
        rows.append(row)
        for c in entry.atlas(lev):
            ctx.obj(f"{c.name}.obj", c.mesh, c.positions())
    ctx.data["surfaces"] = rows
    ctx.rows_csv("energies.csv", rows)


def exp_willmore_residual(ctx: Context):
    from .willmore import (first_variation_check, get_surface, willmore_energy,
                           willmore_residual_conservative, willmore_residual_discrete)

    p = ctx.p
    cl = get_surface("clifford")
    levels = _study_levels(p)
    rows, res = [], []
    for lev in levels:
        c = cl.atlas(ctx.level(lev))[0]
        r = willmore_residual_discrete(c)
        res.append(r)
        rows.append({"level": lev, "grid": 2 ** lev, "h": _grid_h(lev), "residual": r,
                     "residual_quadrature": willmore_residual_conservative(c)})
    W = willmore_energy(cl.atlas(p["level"]))
    ctx.check(f"clifford {2 ** p['level']}x{2 ** p['level']}: |W - 2 pi^2| / 2 pi^2",
              abs(W - 2 * np.pi ** 2) / (2 * np.pi ** 2), "energy_rel")
    od = orders([_grid_h(k) for k in levels], res)
    for (a, b), o in zip(zip(levels, levels[1:]), od):
        ctx.check(f"clifford conservative residual order {2 ** a}->{2 ** b}", o, "order_min", ">=")
    for row, o in zip(rows[1:], od):
        row["order"] = o
    ctx.data.update({"clifford_W": W, "residuals": rows})
    ctx.rows_csv("residuals.csv", rows)

    tor = first_variation_check(get_surface("torus"), level=ctx.level(p["torus_level"]),
                                t=p["variation_step"], seed=ctx.seed)
    ctx.check("torus: |dW_fd - dW_formula| / ||V||", tor["relative"], "variation_rel")
    sph = first_variation_check(get_surface("sphere"), level=ctx.level(p["sphere_level"]),
                                t=p["variation_step"], seed=ctx.seed)
    ctx.check("sphere: |dW_fd|", abs(sph["dW_fd"]), "critical_abs")
    ctx.check("sphere: |int <W(Phi), V>|", abs(sph["dW_formula"]), "critical_abs")
    ctx.data.update({"first_variation_torus": tor, "first_variation_sphere": sph})


_IDENTITIES = [
    ("|I|^2 = 4|H|^2 - 2K", "i2_defect"),
    ("|dn|_g^2 = |I|^2", "dn_defect"),
    ("-2H grad Phi = grad n + n x grad-perp n", "grad_n"),
    ("Laplace Phi = 2 e^{2 lambda} H", "laplace_phi"),
    ("K n = -e^{-2 lambda}/2 grad n x grad-perp n", "gauss_n"),
    ("d_zbar(e^lambda e_z) = e^{2 lambda} H / 2", "dzbar_ez"),
    ("d_z(e^-lambda e_z) = H0 / 2", "dz_ez"),
    ("Codazzi-Mainardi", "codazzi"),
]


def exp_conformal_diff(ctx: Context):
    from .willmore import conformal_willmore_differential, curvature_identities_check, get_surface
    from .willmore import structure_identities_check

    p = ctx.p
    rows = []
    for name in p["surfaces"]:
        charts = get_surface(name).atlas(ctx.level(p["level"]))
        cur = curvature_identities_check(charts)
        d = {"i2_defect": cur["i2_defect"], "dn_defect": cur["dn_defect"]}
        extra = {}
        for c in charts:
            for k, v in structure_identities_check(c).items():
                d[k] = max(d.get(k, 0.0), v)
            f = conformal_willmore_differential(c)
            for k in ("identity_line1", "identity_line2", "identity_line2_half_f", "decomposition_defect",
                      "holomorphy_defect"):
                extra[k] = max(extra.get(k, 0.0), f[k])
        for label, key in _IDENTITIES:
            ctx.check(f"{name}: {label}", d[key], "identity_max")
            rows.append({"surface": name, "identity": label, "max_defect": d[key]})
        rows.append({"surface": name, "identity": "e^{2 lambda} <H, H0> consistency",
                     "max_defect": d["hh0_consistency"]})
        for k, v in extra.items():
            rows.append({"surface": name, "identity": k, "max_defect": v})
    ctx.data["identities"] = rows
    ctx.rows_csv("identities.csv", rows)


def exp_invariance(ctx: Context):
    from .willmore import (conformal_invariance_check, get_surface, multiplicity_energy_scan,
                           physical_energies, random_inversion)

    p = ctx.p
    rng = np.random.default_rng(ctx.seed)
    rows = []
    for name, lev in (("sphere", p["sphere_level"]), ("clifford", p["clifford_level"])):
        charts = get_surface(name).atlas(ctx.level(lev))
        for k in range(p["n_inversions"]):
            T = random_inversion(charts, rng)
            r = conformal_invariance_check(charts, T)
            rows.append({"surface": name, "trial": k, "center": T.centers()[0].tolist(), "W": r["W"],
                         "W_transformed": r["W_transformed"], "relative": r["relative"],
                         "min_center_distance": r["min_center_distance"]})
        worst = max(r["relative"] for r in rows if r["surface"] == name)
        ctx.check(f"{name}: max |W(I o Phi) - W(Phi)| / W over {p['n_inversions']} inversions", worst,
                  "relative")
    ctx.data["inversions"] = rows
    ctx.data["physical_sphere"] = physical_energies(get_surface("sphere"), p["sphere_level"])
    if p["multiplicity_scan"]:
        ctx.data["multiplicity"] = multiplicity_energy_scan(p["sphere_level"])
    ctx.rows_csv("inversions.csv", [{**r, "center": " ".join(repr(c) for c in r["center"])} for r in rows])


def exp_conservation_laws(ctx: Context):
    from .willmore import chart_on_disc, conformal_willmore_differential, conservation_potentials
    from .willmore import get_surface

    p = ctx.p
    keys = ["law_L", "law_R", "system_S", "system_R", "laplace_S", "laplace_R", "laplace_Phi",
            "laplace_S_c1", "laplace_R_c1", "laplace_Phi_c1"]
    levels = _study_levels(p)
    cl = get_surface("clifford").atlas(2)[0]
    rows = []
    for name in ("sphere", "clifford"):
        hs, table, hol = [], {k: [] for k in keys}, []
        for lev in levels:
            lev = ctx.level(lev)
            if name == "sphere":
                c = get_surface("sphere").atlas(lev)[0]
            else:
                c = chart_on_disc(cl, lev, 1.0, tuple(p["clifford_center"]))
            pot = conservation_potentials(c)
            f = conformal_willmore_differential(c, pot)
            hs.append(c.mesh.h)
            hol.append(f["holomorphy_defect"])
            row = {"surface": name, "level": lev, "h": c.mesh.h, "holomorphy_defect": f["holomorphy_defect"]}
            for k in keys:
                table[k].append(pot.residuals[k])
                row[k] = pot.residuals[k]
            rows.append(row)
        for k in keys:
            for (a, b), o in zip(zip(levels, levels[1:]), orders(hs, table[k], p["converged_floor"])):
                ctx.check(f"{name}: {k} order {a}->{b}", o, "order_min", ">=")
        ctx.check(f"{name}: holomorphy defect of f", max(hol), "holomorphy")
    ctx.data["residuals"] = rows
    ctx.rows_csv("conservation.csv", rows)


# ----------------------------------------------------------------- compensation

def exp_wente(ctx: Context):
    from .compensation import basic_corpus, wente_constant_sweep, wente_solve

    p = ctx.p
    if p["corpus"] != "basic":
        raise ValueError(f"unknown corpus {p['corpus']!r}; known: ['basic']")
    levels = _study_levels(p)
    rows, hs, errs = [], [], []
    for lev in levels:
        m = build_disc_mesh(ctx.level(lev))
        x, y = m.vertices.T
        res = wente_solve(FieldRm(m, x), FieldRm(m, y))
        e = float(np.max(np.abs(res.phi.scalar - (1 - x * x - y * y) / 4)))
        hs.append(m.h)
        errs.append(e)
        rows.append({"level": lev, "h": m.h, "sup_phi": float(np.max(np.abs(res.phi.scalar))), "linf_error": e,
                     "ratio": res.ratio})
    ctx.check("exact case: | ||phi||_inf - 1/4 |", abs(rows[-1]["sup_phi"] - 0.25), "sup_abs")
    o = orders([hs[0], hs[-1]], [errs[0], errs[-1]])[0]
    ctx.check(f"exact case: L^inf order {levels[0]}->{levels[-1]}", o, "order_min", ">=")
    ctx.data["exact"] = rows
    ctx.rows_csv("wente_exact.csv", rows)
    ctx.field_csv("phi.csv", res.phi)
    ctx.vtk("phi.vtk", res.phi.mesh, {"phi": res.phi.values})

    corpus = basic_corpus(ctx.seed, p["corpus_size"])
    sweeps = []
    for lev in (p["corpus_level"] - 1, p["corpus_level"]):
        s = wente_constant_sweep(corpus, build_disc_mesh(ctx.level(lev)))
        sweeps.append({"level": lev, "max_ratio": s["max_ratio"], "argmax": s["argmax"]})
        ctx.rows_csv(f"corpus_level{lev}.csv", [{"pair": i, "ratio": r} for i, r in enumerate(s["ratios"])])
    r0, r1 = sweeps[0]["max_ratio"], sweeps[1]["max_ratio"]
    ctx.check("corpus: |max ratio change| / max ratio across two levels", abs(r1 - r0) / r1, "corpus_rel")
    ctx.data["corpus"] = sweeps


def exp_clms(ctx: Context):
    from .compensation import basic_corpus, clms_hessian_l1, wente_solve

    p = ctx.p
    m = build_disc_mesh(ctx.level(p["level"]))
    x, y = m.vertices.T
    res = wente_solve(FieldRm(m, x), FieldRm(m, y))
    h = clms_hessian_l1(res.phi, p["grid"], res.grad_product)
    ctx.check("exact case: |Hessian L1 - pi| / pi", abs(h["hessian_l1"] - np.pi) / np.pi, "hessian_rel")
    rows = []
    for i, (fa, fb) in enumerate(basic_corpus(ctx.seed, p["corpus_size"])):
        r = wente_solve(FieldRm(m, fa(m.vertices)), FieldRm(m, fb(m.vertices)))
        hh = clms_hessian_l1(r.phi, p["grid"], r.grad_product)
        rows.append({"pair": i, "hessian_l1": hh["hessian_l1"], "grad_product": r.grad_product,
                     "ratio": hh.get("ratio")})
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
    if ratios:
        ctx.check("corpus: max Hessian L1 / (||grad a|| ||grad b||)", max(ratios), "corpus_ratio_max")
    ctx.data.update({"exact": h, "corpus": rows})
    ctx.rows_csv("clms.csv", rows)


def exp_cmc(ctx: Context):
    from .compensation import cap_distance, cmc_solve, spherical_cap_oracle

    p = ctx.p
    m = build_disc_mesh(ctx.level(p["level"]))
    ex, _ = spherical_cap_oracle(p["cap_angle"])
    r = cmc_solve(p["H"], ex, m, gate=p["gate"])
    d = cap_distance(r.u, p["cap_angle"])
    ctx.check("cap: weak residual", r.residual, "residual")
    ctx.check("cap: image-to-cap distance", d, "cap_distance")
    ctx.check("cap: max Picard contraction factor", max(r.contraction) if r.contraction else 0.0,
              "contraction", "<")
    ctx.data.update({"iterations": r.iterations, "contraction": r.contraction, "residual": r.residual,
                     "cap_distance": d, "nodal_error": float(np.max(np.abs(r.u.values - ex(m.vertices))))})
    ctx.rows_csv("contraction.csv", [{"iteration": i + 2, "factor": c} for i, c in enumerate(r.contraction)])
    ctx.obj("cap.obj", m, r.u.values)
    ctx.field_csv("u.csv", r.u)


def exp_harmonic(ctx: Context):
    from .compensation import harmonic_heat_flow, inverse_stereo, sphere_harmonic_residuals

    p = ctx.p
    levels = _study_levels(p)
    benches = {"stereo-z": lambda v: inverse_stereo(v),
               "stereo-z2": lambda v: inverse_stereo(np.column_stack([v[:, 0] ** 2 - v[:, 1] ** 2,
                                                                      2 * v[:, 0] * v[:, 1]]))}
    rows = []
    for bname, fn in benches.items():
        hs, eq, cons = [], [], []
        for lev in levels:
            m = build_disc_mesh(ctx.level(lev))
            r = sphere_harmonic_residuals(FieldRm(m, fn(m.vertices)))
            hs.append(m.h)
            eq.append(r["eq_residual"])
            cons.append(r["conservation_residual"])
            rows.append({"benchmark": bname, "level": lev, "h": m.h, **r})
        for label, seq in (("equation", eq), ("conservation law", cons)):
            for (a, b), o in zip(zip(levels, levels[1:]), orders(hs, seq)):
                ctx.check(f"{bname}: {label} weak residual order {a}->{b}", o, "order_min", ">=")
    ctx.data["residuals"] = rows
    ctx.rows_csv("harmonic_residuals.csv", rows)

    m = build_disc_mesh(ctx.level(p["flow_level"]))
    x, y = m.vertices.T
    q = np.column_stack([x, y]) * (1 + 0.8 * (1 - x * x - y * y) * np.sin(3 * x))[:, None]
    fr = harmonic_heat_flow(FieldRm(m, inverse_stereo(1.5 * q)), p["flow_steps"], p["flow_dt"])
    E = np.asarray(fr.energies)
    rise = float(np.max(np.diff(E)) / E[0]) if len(E) > 1 else 0.0
    ctx.check("flow: max relative energy increase per step", rise, "monotone_rel")
    ctx.data["flow"] = {"energies": E, "rejected": fr.rejected, "steps": fr.steps}
    ctx.rows_csv("flow_energy.csv", [{"step": i, "energy": e} for i, e in enumerate(E)])
    ctx.obj("flow_final.obj", m, fr.u.values)


def exp_frehse(ctx: Context):
    from .compensation import frehse_counterexample_report

    p = ctx.p
    r = frehse_counterexample_report(ctx.level(p["level"]))
    ctx.level(max(p["level"] - 2, 1))
    ctx.check("log log(2/r): weak residual on the annulus", r["single_residual"], "single_max")
    ctx.check("weak-limit candidate: weak residual", r["limit_residual"], "limit_min", ">")
    ctx.data.update(r)
    ctx.rows_csv("atoms.csv", r["atom_residuals"])


# ------------------------------------------------------------------------ gauge

def exp_gauge(ctx: Context):
    from .compensation import schrodinger_linear_solve
    from .gauge import (coulomb_gauge, conservation_equivalence_check, construct_AB, potential_from_stream,
                        random_manufactured, random_so_field)

    p = ctx.p
    m = build_disc_mesh(ctx.level(p["level"]))
    rng = np.random.default_rng(ctx.seed)
    rows = []

    def bc(xy):
        return np.column_stack([xy[:, 0], xy[:, 1], xy[:, 0] * xy[:, 1]])

    for k in range(p["n_potentials"]):
        om, _, _ = random_manufactured(m, rng, target_l2=p["omega_l2"])
        g = coulomb_gauge(om)
        ab = construct_AB(om, g)
        W = schrodinger_linear_solve(om, bc, m)
        eq = conservation_equivalence_check(W.W, om, ab.A, ab.B)
        rows.append({"potential": k, "omega_l2": om.l2(), "coulomb_defect": g.defect,
                     "recon_residual": g.recon_residual, "ab_conservation_defect": ab.conservation_defect,
                     "conservation_defect": eq["lhs_residual"], "equation_residual": eq["rhs_residual"]})
    n = p["n_potentials"]
    ctx.check(f"max Coulomb defect over {n} potentials", max(r["coulomb_defect"] for r in rows), "coulomb")
    ctx.check(f"max reconstruction residual over {n} potentials", max(r["recon_residual"] for r in rows),
              "reconstruction")
    ctx.check(f"max div(A grad u - B grad-perp u) over {n} manufactured solutions",
              max(r["conservation_defect"] for r in rows), "conservation")
    ctx.data["potentials"] = rows
    ctx.rows_csv("gauge.csv", rows)

    # grad-perp is linear, so the stream is rescaled to the target size exactly
    xi = random_so_field(m, rng, vanish_on_boundary=True)
    xi *= p["omega_l2"] / potential_from_stream(m, xi).l2()
    om = potential_from_stream(m, xi)
    g = coulomb_gauge(om)
    ab = construct_AB(om, g)
    eye = np.eye(om.m)
    dA = float(np.max(np.abs(ab.A - eye)))
    dB = float(np.max(np.abs(ab.B - xi)))
    ctx.check("divergence-free case: max |A - I|", dA, "divfree")
    ctx.check("divergence-free case: max |B - xi|", dB, "divfree")
    ctx.data["divergence_free"] = {"A_minus_I": dA, "B_minus_xi": dB,
                                   "P_minus_I": float(np.max(np.abs(g.P - eye)))}


# ------------------------------------------------------------------------ plateau

def exp_plateau(ctx: Context):
    from .plateau import douglas_rado_solve, hopf_l1, initial_param, optimality_spot_check, preset_curve

    p = ctx.p
    curve = preset_curve(p["curve"])
    oracle = {"circle": np.pi, "ellipse": np.pi * 2.0 * 1.0}.get(p["curve"])
    m = build_disc_mesh(ctx.level(p["level"]))
    amp = p["warp"]
    starts = {"standard": None, "adversarial": lambda t: t + amp * np.sin(t)}
    out = {}
    for label, warp in starts.items():
        res = douglas_rado_solve(curve, m, initial_param(curve, m, warp), tol_E=p["tol_E"])
        H = np.asarray(res.history, dtype=float)
        hop = hopf_l1(res.u)
        rise = float(np.max(np.diff(H[:, 1])) / H[0, 1]) if len(H) > 1 else 0.0
        if oracle is not None:
            ctx.check(f"{label}: |E - pi r^2|", abs(res.E - oracle), "energy_abs")
            ctx.check(f"{label}: |A - pi r^2|", abs(res.A - oracle), "area_abs")
        ctx.check(f"{label}: ||Hopf||_L1", hop, "hopf_l1")
        ctx.check(f"{label}: max relative energy increase per sweep", rise, "monotone_rel")
        out[label] = {"E": res.E, "A": res.A, "hopf_l1": hop, "sweeps": len(H), "converged": res.converged,
                      "spot_check": optimality_spot_check(curve, res)}
        ctx.rows_csv(f"history_{label}.csv", [{"sweep": int(r[0]), "E": r[1], "A": r[2], "hopf": r[3]}
                                              for r in H])
        ctx.obj(f"surface_{label}.obj", m, res.u.values)
        ctx.field_csv(f"u_{label}.csv", res.u)
    ctx.data.update(out)
    if oracle is not None:
        ctx.data["oracle"] = oracle


# ----------------------------------------------------------------------- isothermal

def exp_isothermal(ctx: Context):
    from .isothermal import benchmark_chart, export_coordinates_csv, isothermal_pipeline

    p = ctx.p
    levels = _study_levels(p)
    rows, seqs = [], {}
    last = {}
    for name in ("sheared-flat", "graph", "sphere"):
        for lev in levels:
            ch = benchmark_chart(name, ctx.level(lev))
            out = isothermal_pipeline(ch)
            r = out["report"]
            rows.append({"benchmark": name, "level": lev, "h": ch.mesh.h,
                         **{k: r[k] for k in ("coulomb_defect", "liouville_defect", "conformality_defect",
                                              "factor_defect", "closedness_defect", "min_jacobian")}})
            seqs.setdefault(name, []).append((ch.mesh.h, r))
            last[name] = out
    ctx.check("sheared-flat: conformality defect", seqs["sheared-flat"][-1][1]["conformality_defect"],
              "conformal")
    for name, key in (("graph", "conformality_defect"), ("sphere", "liouville_defect")):
        hs = [h for h, _ in seqs[name]]
        for (a, b), o in zip(zip(levels, levels[1:]), orders(hs, [r[key] for _, r in seqs[name]])):
            ctx.check(f"{name}: {key.replace('_', ' ')} order {a}->{b}", o, "order_min", ">=")
    ctx.data["benchmarks"] = rows
    ctx.rows_csv("isothermal.csv", rows)
    for name in ("graph", "sphere"):
        co = last[name]["coords"]
        if ctx.out is not None:
            export_coordinates_csv(co, ctx._path(f"coords_{name}.csv"))
        ctx.obj(f"coords_{name}.obj", co.image)
        ctx.vtk(f"coords_{name}.vtk", co.phi.mesh, {"phi": co.phi.values, "lambda": co.lam.values})


def exp_helein(ctx: Context):
    from .isothermal import helein_threshold_experiment

    p = ctx.p
    r = helein_threshold_experiment(p["lambda"], tuple(p["rhos"]), tuple(p["lambda_family"]),
                                    n_phi=p["n_phi"], per_unit=p["per_unit"])
    ctx.check("map energy: |E / 8 pi - 1|", abs(r["map_energy_ratio"] - 1), "map_energy_rel")
    ctx.check("frame energy slope vs log(1/rho): |slope / 2 pi - 1|", abs(r["slope_ratio_2pi"] - 1), "slope_rel")
    ctx.check("frame energy above 2 pi log(1/rho) lower bound", r["lower_bound_holds"], None, "true")
    ctx.data.update(r)
    ctx.rows_csv("frame_energy.csv", r["rows"])
    ctx.rows_csv("map_family.csv", r["map_family"])


# --------------------------------------------------------------------------- norms

def exp_morrey(ctx: Context):
    from .fem import PoissonSolver
    from .norms import morrey_profile, pohozaev_check

    p = ctx.p
    levels = _study_levels(p)
    data = {"x1x2": lambda v: (v[:, 0] * v[:, 1])[:, None],
            "cubic": lambda v: np.column_stack([np.real((v[:, 0] + 1j * v[:, 1]) ** 3) + v[:, 0],
                                                np.imag(np.exp(v[:, 0] + 1j * v[:, 1]))])}
    rows, prof_rows, hs, poh = [], [], [], []
    worst = 0.0
    for lev in levels:
        m = build_disc_mesh(ctx.level(lev))
        s = PoissonSolver(m, "dirichlet")
        radii = np.geomspace(max(p["radius_floor"] * m.h, p["r_min"]), p["r_max"], p["n_radii"])
        for name, g in data.items():
            gb = g(m.vertices[s.fixed])
            u = FieldRm(m, s.solve(np.zeros((m.n_vertices, gb.shape[1])), gb))
            pr = morrey_profile(u, p["centers"], radii)
            worst = max(worst, pr.max_violation)
            rows.append({"data": name, "level": lev, "h": m.h, "max_violation": pr.max_violation,
                         "alpha": pr.alpha})
            if lev == levels[-1]:
                prof_rows += [{"data": name, **r} for r in pr.as_rows()]
        gb = (m.vertices[s.fixed, 0] ** 2 - m.vertices[s.fixed, 1] ** 2)[:, None]
        v = FieldRm(m, s.solve(np.zeros((m.n_vertices, 1)), gb))
        hs.append(m.h)
        poh.append(pohozaev_check(v, p["pohozaev_center"], p["pohozaev_radius"]))
    ctx.check("discrete-harmonic fields: max decrease of rho^-2 int_B |grad u|^2", worst, "violation")
    for (a, b), o in zip(zip(levels, levels[1:]), orders(hs, poh)):
        ctx.check(f"Pohozaev defect order {a}->{b}", o, "order_min", ">=")
    ctx.data.update({"profiles": rows, "pohozaev": [{"level": k, "h": h, "defect": d}
                                                    for k, h, d in zip(levels, hs, poh)]})
    ctx.rows_csv("morrey_profile.csv", prof_rows)
    ctx.rows_csv("pohozaev.csv", ctx.data["pohozaev"])


# ----------------------------------------------------------------------- registry

@dataclass
class Experiment:
    name: str
    run: Callable
    params: dict
    tolerances: dict          # name -> (default, description)
    criteria: tuple = ()
    fast: dict = field(default_factory=dict)
    doc: str = ""

    def default_tolerances(self) -> dict:
        return {k: v[0] for k, v in self.tolerances.items()}


EXPERIMENTS: dict[str, Experiment] = {}


def _register(*args, **kw):
    e = Experiment(*args, **kw)
    EXPERIMENTS[e.name] = e
    return e


_register("plateau", exp_plateau,
          {"curve": "circle", "level": 5, "warp": 0.8, "tol_E": 1e-8},
          {"energy_abs": (1e-2, "|E - pi| for the unit circle"),
           "area_abs": (1e-2, "|A - pi| for the unit circle"),
           "hopf_l1": (1e-2, "L1 norm of the Hopf differential"),
           "monotone_rel": (1e-12, "largest allowed energy increase per sweep, relative to E0")},
          criteria=(7,), fast={"level": 4},
          doc="Douglas-Rado minimisation from a standard and a warped boundary parametrisation.")
_register("wente", exp_wente,
          {"level": 6, "refinements": 3, "corpus": "basic", "corpus_size": 100, "corpus_level": 5},
          {"sup_abs": (1e-3, "| ||phi||_inf - 1/4 | for a = x1, b = x2"),
           "order_min": (1.9, "observed L^inf order across the refinement study"),
           "corpus_rel": (0.05, "relative change of the corpus max ratio between two levels")},
          criteria=(6,), fast={"level": 5, "refinements": 2, "corpus_size": 20, "corpus_level": 4},
          doc="Wente solve: exact case, convergence order and the random-corpus constant.")
_register("clms", exp_clms,
          {"level": 6, "grid": 257, "corpus_size": 5},
          {"hessian_rel": (1e-2, "relative error of the Hessian L1 norm against pi (exact case)"),
           "corpus_ratio_max": (100.0, "bound on Hessian L1 / gradient product over the corpus")},
          fast={"level": 5, "grid": 129, "corpus_size": 3},
          doc="Hardy-space regularity of Jacobians: Hessian L1 norm of Wente solutions.")
_register("cmc", exp_cmc,
          {"level": 5, "H": 1.0, "cap_angle": float(np.pi / 6), "gate": 1.5},
          {"residual": (1e-3, "weak residual of Laplace u = 2H u_x x u_y"),
           "cap_distance": (2e-3, "max distance of the image to the spherical cap"),
           "contraction": (0.9, "Picard contraction factor per iteration (strict)")},
          criteria=(8,), fast={"level": 4},
          doc="Constant mean curvature Picard iteration on the spherical-cap benchmark.")
_register("harmonic", exp_harmonic,
          {"level": 6, "refinements": 3, "flow_level": 4, "flow_steps": 100, "flow_dt": 0.01},
          {"order_min": (0.9, "observed order of the weak residuals"),
           "monotone_rel": (1e-12, "largest allowed energy increase per flow step, relative to E0")},
          criteria=(9,), fast={"level": 5, "flow_steps": 40},
          doc="Sphere-valued harmonic maps: equation and conservation-law residuals, heat flow.")
_register("frehse", exp_frehse,
          {"level": 6},
          {"single_max": (1e-2, "weak residual of log log(2/r) on the annulus"),
           "limit_min": (0.1, "weak residual of the weak-limit candidate (must exceed)")},
          criteria=(10,), fast={"level": 5},
          doc="Frehse counterexample and the failure of weak closure.")
_register("gauge", exp_gauge,
          {"level": 6, "n_potentials": 20, "omega_l2": 0.3},
          {"coulomb": (1e-6, "Coulomb defect || div Omega^P ||"),
           "reconstruction": (1e-5, "reconstruction residual of Omega from (P, xi)"),
           "conservation": (1e-5, "weak norm of div(A grad u - B grad-perp u)"),
           "divfree": (1e-6, "max entry error of A - I and B - xi for divergence-free Omega")},
          criteria=(11,), fast={"n_potentials": 3},
          doc="Coulomb gauge, (A, B) construction and the conservation law on manufactured data.")
_register("willmore-energy", exp_willmore_energy,
          {"surfaces": ["sphere", "torus"], "level": 6, "scale": 3.0},
          {"energy_rel": (5e-3, "relative error of W against the closed form"),
           "energy_abs": (1e-8, "|W| where the closed form is 0"),
           "gauss_bonnet_rel": (5e-3, "relative error of int K against 2 pi chi (chi != 0)"),
           "gauss_bonnet_abs": (1e-2, "|int K| when chi = 0"),
           "scaling_abs": (1e-10, "|W(s Phi) - W(Phi)|")},
          criteria=(1, 3), fast={"level": 5},
          doc="Willmore energy, Gauss-Bonnet and scaling invariance on closed surfaces.")
_register("willmore-residual", exp_willmore_residual,
          {"level": 8, "refinements": 3, "torus_level": 6, "sphere_level": 5, "variation_step": 1e-4},
          {"energy_rel": (5e-3, "relative error of W(Clifford) against 2 pi^2"),
           "order_min": (0.9, "observed order of the conservative residual"),
           "variation_rel": (1e-3, "|dW_fd - dW_formula| / ||V|| on the torus"),
           "critical_abs": (1e-5, "both sides of the first variation on the sphere")},
          criteria=(2, 13), fast={"level": 7, "torus_level": 5, "sphere_level": 4},
          doc="Conservative Willmore residual on the Clifford torus and the first variation formula.")
_register("conservation-laws", exp_conservation_laws,
          {"level": 6, "refinements": 3, "clifford_center": [1.0, 2.0], "converged_floor": 1e-12},
          {"order_min": (0.9, "observed order of each conservation-law residual"),
           "holomorphy": (1e-3, "L2 norm of d_zbar f")},
          criteria=(12,), fast={"level": 5},
          doc="Conservation potentials L, S, R and their systems; holomorphy of f.")
_register("conformal-diff", exp_conformal_diff,
          {"surfaces": ["sphere", "clifford"], "level": 4},
          {"identity_max": (1e-8, "max pointwise defect of each identity")},
          criteria=(4,), fast={"level": 3},
          doc="Pointwise identities of conformal immersions on analytic charts.")
_register("invariance", exp_invariance,
          {"sphere_level": 5, "clifford_level": 7, "n_inversions": 5, "multiplicity_scan": False},
          {"relative": (1e-2, "relative change of W under an ambient inversion")},
          criteria=(5,), fast={"sphere_level": 4},
          doc="Moebius invariance of W under random admissible inversions.")
_register("isothermal", exp_isothermal,
          {"level": 6, "refinements": 3},
          {"conformal": (1e-6, "conformality defect on the sheared flat chart"),
           "order_min": (0.9, "observed order (graph conformality, sphere Liouville defect)")},
          criteria=(14,), fast={"refinements": 2},
          doc="Isothermal coordinates from Coulomb frames.")
_register("helein-threshold", exp_helein,
          {"lambda": 100.0, "rhos": [0.1, 0.01, 0.001], "lambda_family": [10.0, 100.0, 1000.0],
           "n_phi": 64, "per_unit": 60},
          {"map_energy_rel": (3e-2, "|E(map) / 8 pi - 1|"),
           "slope_rel": (0.2, "|frame-energy slope / 2 pi - 1|")},
          criteria=(15,), fast={},
          doc="Energy threshold experiment: concentrating maps and their Coulomb frames.")
_register("morrey", exp_morrey,
          {"level": 6, "refinements": 3, "centers": [[0.0, 0.0], [0.3, -0.2], [-0.1, 0.4]], "n_radii": 8,
           "r_min": 0.05, "r_max": 0.5, "radius_floor": 4.0, "pohozaev_center": [0.1, 0.05],
           "pohozaev_radius": 0.6},
          {"violation": (1e-6, "largest decrease of the normalised Morrey profile"),
           "order_min": (0.9, "observed order of the Pohozaev defect")},
          criteria=(16,), fast={"refinements": 2},
          doc="Morrey monotonicity and the Pohozaev identity for discrete-harmonic fields.")
