"""Moebius invariance of W, physical energies and the multiplicity bound."""
from __future__ import annotations

from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from .charts import get_surface
from .operators import area, as_charts, willmore_energy

MIN_CENTER_DISTANCE = 0.05


class InversionError(ValueError):
    pass


@dataclass
class Mobius:
    """Composition of ambient isometries, dilations and inversions, applied left to right.

    steps: ("isometry", Q, b) maps p -> Q p + b; ("dilation", s) maps p -> s p;
    ("inversion", c) maps p -> (p - c) / |p - c|^2.
    """
    steps: list = field(default_factory=list)

    def __call__(self, p):
        for st in self.steps:
            if st[0] == "isometry":
                p = jnp.asarray(st[1]) @ p + jnp.asarray(st[2])
            elif st[0] == "dilation":
                p = st[1] * p
            elif st[0] == "inversion":
                d = p - jnp.asarray(st[1])
                p = d / jnp.dot(d, d)
            else:
                raise ValueError(f"unknown Moebius step {st[0]!r}")
        return p

    def centers(self):
        return [np.asarray(st[1]) for st in self.steps if st[0] == "inversion"]


def _min_distance(charts, transform: Mobius) -> float:
    """Distance from each inversion center to the surface image at that stage."""
    worst = np.inf
    for c in charts:
        pts = np.vstack([c.fn("phi")(c.quad_points[0]), c.positions()])
        for st in transform.steps:
            if st[0] == "inversion":
                worst = min(worst, float(np.min(np.linalg.norm(pts - np.asarray(st[1]), axis=1))))
            pts = np.asarray(jax.vmap(Mobius([st]))(jnp.asarray(pts)))
    return worst


def conformal_invariance_check(surface, transform: Mobius, level: int | None = None,
                               min_distance: float = MIN_CENTER_DISTANCE) -> dict:
    """|W(Psi o Phi) - W(Phi)| for a closed surface and an ambient Moebius map Psi."""
    charts = as_charts(surface, level)
    dist = _min_distance(charts, transform)
    if dist <= min_distance:
        raise InversionError(f"inversion center within {dist:.3g} of the surface")
    W0 = willmore_energy(charts)
    W1 = willmore_energy([c.compose(transform, c.name + "-moebius") for c in charts])
    return {"W": W0, "W_transformed": W1, "defect": abs(W1 - W0), "relative": abs(W1 - W0) / W0,
            "min_center_distance": dist}


def random_rotation(m: int, rng) -> np.ndarray:
    Q, R = np.linalg.qr(rng.normal(size=(m, m)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def random_inversion(charts, rng, box: float = 2.0, margin: float = 0.3, tries: int = 200) -> Mobius:
    """Rotation, then inversion about a random center at least `margin` off the surface."""
    m = charts[0].m
    pts = np.vstack([c.positions() for c in charts])
    for _ in range(tries):
        c = rng.uniform(-box, box, size=m)
        if np.min(np.linalg.norm(pts - c, axis=1)) > margin:
            return Mobius([("isometry", random_rotation(m, rng), np.zeros(m)), ("inversion", c)])
    raise InversionError("no admissible inversion center found")


def physical_energies(surface, level: int | None = None, C0: float = 0.0, C1: float = 0.0) -> dict:
    """Hawking mass |S|^{1/2}(16 pi - W) / (64 pi^{3/2}) and Helfrich int (2H + C0)^2 + C1 |S|."""
    charts = as_charts(surface, level)
    W = willmore_energy(charts)
    S = area(charts)
    out = {"area": S, "W": W, "hawking_mass": float(np.sqrt(S) * (16 * np.pi - W) / (64 * np.pi ** 1.5))}
    if all(c.m == 3 for c in charts):
        hel = 0.0
        for c in charts:
            geo = c.fundamental_forms()
            Hs = np.einsum("na,na->n", geo.H, geo.n.as_vector())
            hel += c.integrate((2 * Hs + C0) ** 2 * geo.sqrtg)
        out["helfrich"] = hel + C1 * S
    return out


def multiplicity_energy_scan(level: int = 5, names=("sphere", "double-sphere", "clifford", "torus"),
                             tol: float = 0.01) -> list:
    """Rows (name, W, k, 4 pi k, W >= 4 pi k (1 - tol), W < 8 pi)."""
    rows = []
    for name in names:
        entry = get_surface(name)
        lev = level + 2 if entry.atlas(1)[0].periodic else level
        W = willmore_energy(entry, lev)
        k = entry.multiplicity
        rows.append({"surface": name, "W": W, "multiplicity": k, "bound": 4 * np.pi * k,
                     "satisfied": bool(W >= 4 * np.pi * k * (1 - tol)),
                     "below_8pi": bool(W < 8 * np.pi)})
    return rows
