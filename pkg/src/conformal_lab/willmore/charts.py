"""Analytic immersion charts and the surface catalogue.

Each chart carries a jax-traceable parametrization phi: R^2 -> R^m on a disc
mesh or a periodic grid. Derivatives up to fourth order come from forward-mode
autodiff, so the pointwise identities hold to rounding error.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from ..exterior import MultiVector, hodge_star
from ..fem import QUAD7_W, quadrature_points
from ..mesh import TriMesh, build_disc_mesh, build_periodic_grid

jax.config.update("jax_enable_x64", True)

# compiled pointwise maps per parametrization, shared by all meshes and levels
_COMPILED = weakref.WeakKeyDictionary()
CHUNK = 4096


class ImmersionError(ValueError):
    pass


def _two_vector_masks(m: int):
    return [((1 << a) | (1 << b), a, b) for a in range(m) for b in range(a + 1, m)]


def _geometry_fns(phi, m: int):
    """Build the jax pointwise maps used by ImmersionChart."""
    d1 = jax.jacfwd(phi)
    d2 = jax.jacfwd(d1)
    masks = _two_vector_masks(m)

    def metric(x):
        J = d1(x)
        return J.T @ J

    def normal_proj(x):
        J = d1(x)
        g = J.T @ J
        return jnp.eye(m) - J @ jnp.linalg.solve(g, J.T)

    def hvec(x):
        g = metric(x)
        gi = jnp.linalg.inv(g)
        return 0.5 * normal_proj(x) @ jnp.einsum("ij,mij->m", gi, d2(x))

    def xi(x):
        # unit tangent 2-vector e1 ^ e2 as a full multivector component array
        J = d1(x)
        c = jnp.zeros(1 << m)
        for mask, a, b in masks:
            c = c.at[mask].set(J[a, 0] * J[b, 1] - J[b, 0] * J[a, 1])
        return c / jnp.linalg.norm(c)

    def flux_perp(x):
        # sqrt(g) g^{ij} pi_n d_j H, the normal-connection flux
        g = metric(x)
        sg = jnp.sqrt(jnp.linalg.det(g))
        dH = jax.jacfwd(hvec)(x)
        return sg * (normal_proj(x) @ dH) @ jnp.linalg.inv(g)

    def willmore_operator(x):
        g = metric(x)
        gi = jnp.linalg.inv(g)
        sg = jnp.sqrt(jnp.linalg.det(g))
        P = normal_proj(x)
        H = hvec(x)
        div = jnp.trace(jax.jacfwd(flux_perp)(x), axis1=1, axis2=2)
        lap_perp = P @ div / sg
        I = jnp.einsum("ab,bij->aij", P, d2(x))
        # A~(H) = sum I(e_a,e_b) <I(e_a,e_b), H> in coordinates
        proj = jnp.einsum("aij,a->ij", I, H)
        At = jnp.einsum("ik,jl,akl,ij->a", gi, gi, I, proj)
        return lap_perp + At - 2.0 * jnp.dot(H, H) * H

    fns = {"phi": phi, "d1": d1, "d2": d2, "hvec": hvec, "xi": xi,
           "dH": jax.jacfwd(hvec), "d2H": jax.jacfwd(jax.jacfwd(hvec)),
           "dxi": jax.jacfwd(xi), "d2xi": jax.jacfwd(jax.jacfwd(xi)),
           "willmore_op": willmore_operator}
    if m == 3:
        def normal3(x):
            J = d1(x)
            c = jnp.cross(J[:, 0], J[:, 1])
            return c / jnp.linalg.norm(c)

        def mean_scalar(x):
            return jnp.dot(hvec(x), normal3(x))

        def lap_g_scalar(x):
            g = metric(x)
            sg = jnp.sqrt(jnp.linalg.det(g))
            flux = lambda y: jnp.sqrt(jnp.linalg.det(metric(y))) * jnp.linalg.solve(metric(y), jax.grad(mean_scalar)(y))
            return jnp.trace(jax.jacfwd(flux)(x)) / sg

        fns.update(normal3=normal3, mean_scalar=mean_scalar, lap_g_scalar=lap_g_scalar)

    def hh0(x):
        # e^{2 lambda} <H, H0> = 1/2 <H, d11 - d22 - 2i d12>, as (real, imag)
        H, D = hvec(x), d2(x)
        return jnp.array([0.5 * jnp.dot(H, D[:, 0, 0] - D[:, 1, 1]), -jnp.dot(H, D[:, 0, 1])])

    def frame(x):
        # Gram-Schmidt orthonormalisation of (d1 Phi, d2 Phi), columns e1, e2
        J = d1(x)
        e1 = J[:, 0] / jnp.linalg.norm(J[:, 0])
        w = J[:, 1] - jnp.dot(J[:, 1], e1) * e1
        return jnp.stack([e1, w / jnp.linalg.norm(w)], axis=1)

    def conn_flux(x):
        # sqrt(g) g^{-1} <e1, d e2> for the Gram-Schmidt frame
        e, de = frame(x), jax.jacfwd(frame)(x)
        g = metric(x)
        return jnp.sqrt(jnp.linalg.det(g)) * jnp.linalg.solve(g, e[:, 0] @ de[:, 1, :])

    fns.update(normal_proj=normal_proj, hh0=hh0, dhh0=jax.jacfwd(hh0),
               frame=frame, dframe=jax.jacfwd(frame), conn_flux=conn_flux,
               conn_div=lambda x: jnp.trace(jax.jacfwd(conn_flux)(x)))
    return fns


@dataclass
class Geometry:
    """Pointwise geometric quantities at a batch of chart points."""
    x: np.ndarray
    m: int
    Phi: np.ndarray          # (N, m)
    dPhi: np.ndarray         # (N, m, 2)
    d2Phi: np.ndarray        # (N, m, 2, 2)
    fn: object = None        # chart.fn, for lazily evaluated higher derivatives

    @cached_property
    def g(self):
        return np.einsum("nai,naj->nij", self.dPhi, self.dPhi)

    @cached_property
    def H(self):
        """Mean curvature vector 1/2 g^{ij} I_ij, shape (N, m)."""
        return 0.5 * np.einsum("nij,naij->na", self.ginv, self.I)

    @cached_property
    def xi(self):
        """Unit tangent 2-vector e1 ^ e2, components (N, 2^m)."""
        return self.fn("xi")(self.x)

    @cached_property
    def dxi(self):
        return self.fn("dxi")(self.x)

    @cached_property
    def dH(self):
        return self.fn("dH")(self.x)

    @cached_property
    def ginv(self):
        return np.linalg.inv(self.g)

    @cached_property
    def sqrtg(self):
        return np.sqrt(np.linalg.det(self.g))

    @cached_property
    def lam(self):
        """Conformal factor log e^lambda, using the mean of |d1 Phi|^2, |d2 Phi|^2."""
        return 0.5 * np.log(0.5 * (self.g[:, 0, 0] + self.g[:, 1, 1]))

    def conformality(self):
        g = self.g
        return np.maximum(np.abs(g[:, 0, 1]), np.abs(np.sqrt(g[:, 0, 0]) - np.sqrt(g[:, 1, 1])))

    @cached_property
    def Pn(self):
        J = self.dPhi
        return np.eye(self.m) - np.einsum("nai,nij,nbj->nab", J, self.ginv, J)

    @cached_property
    def I(self):
        """Second fundamental form in coordinates, pi_n(d_ij Phi), shape (N, m, 2, 2)."""
        return np.einsum("nab,nbij->naij", self.Pn, self.d2Phi)

    @cached_property
    def frame(self):
        """Orthonormal tangent frame (e1, e2) by Gram-Schmidt, shape (N, m, 2), and coefficients E with e_a = E_ai d_i Phi."""
        J = self.dPhi
        a1 = 1.0 / np.sqrt(self.g[:, 0, 0])
        e1 = J[:, :, 0] * a1[:, None]
        w = J[:, :, 1] - np.einsum("na,na->n", J[:, :, 1], e1)[:, None] * e1
        nw = np.linalg.norm(w, axis=1)
        e2 = w / nw[:, None]
        E = np.zeros((len(J), 2, 2))
        E[:, 0, 0] = a1
        E[:, 1, 1] = 1.0 / nw
        E[:, 1, 0] = -np.einsum("na,na->n", J[:, :, 1], e1) * a1 / nw
        return np.stack([e1, e2], axis=-1), E

    @cached_property
    def I_frame(self):
        """I(e_a, e_b), shape (N, m, 2, 2)."""
        _, E = self.frame
        return np.einsum("nai,nbj,nmij->nmab", E, E, self.I)

    @cached_property
    def K(self):
        If = self.I_frame
        return (np.einsum("nm,nm->n", If[:, :, 0, 0], If[:, :, 1, 1])
                - np.einsum("nm,nm->n", If[:, :, 0, 1], If[:, :, 0, 1]))

    @cached_property
    def I2(self):
        return np.sum(self.I_frame ** 2, axis=(1, 2, 3))

    @cached_property
    def H2(self):
        return np.sum(self.H ** 2, axis=1)

    @cached_property
    def H0(self):
        """Weingarten operator 1/2 [I(e1,e1) - I(e2,e2) - 2i I(e1,e2)], complex (N, m)."""
        If = self.I_frame
        return 0.5 * (If[:, :, 0, 0] - If[:, :, 1, 1] - 2j * If[:, :, 0, 1])

    @cached_property
    def n(self) -> MultiVector:
        return hodge_star(MultiVector(self.m, self.xi))

    @cached_property
    def dn(self) -> MultiVector:
        """d_k n as a MultiVector with batch (N, 2)."""
        return hodge_star(MultiVector(self.m, np.moveaxis(self.dxi, -1, 1)))

    @cached_property
    def dn2_g(self):
        """|dn|^2_g = g^{kl} <d_k n, d_l n>."""
        c = self.dn.c
        return np.einsum("nkl,nkc,nlc->n", self.ginv, c, c)

    @property
    def dvol(self):
        return self.sqrtg


def polar_quadrature(radius: float, level: int):
    """Gauss-Legendre in r times trapezoid in theta on the exact disc.

    Spectrally accurate for smooth integrands, and free of the polygonal
    boundary error of the triangle rule.
    """
    nr = max(8, 2 ** int(level) // 2)
    nt = 4 * nr
    t, wt = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * radius * (t + 1)
    wr = 0.5 * radius * wt * r
    th = 2 * np.pi * np.arange(nt) / nt
    R, TH = np.meshgrid(r, th, indexing="ij")
    pts = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    w = np.repeat(wr, nt) * (2 * np.pi / nt)
    return pts, w


class ImmersionChart:
    """phi on a chart domain, with geometry cached at vertices and quadrature points.

    phi maps a single point x of shape (2,) to R^m and must be jax-traceable.
    """

    def __init__(self, phi, mesh: TriMesh, m: int, conformal: bool = False, name: str = "",
                 c0: float = 1e-8, branched: bool = False, shift=(0.0, 0.0)):
        self.phi, self.mesh, self.m = phi, mesh, int(m)
        self.conformal, self.name = conformal, name
        self.c0, self.branched = c0, branched
        # chart coordinate x corresponds to parameter x + shift of phi
        self.shift = np.asarray(shift, dtype=float)
        self._cache = {}

    @property
    def periodic(self) -> bool:
        return self.mesh.kind == "periodic"

    @property
    def _fns(self) -> dict:
        entry = _COMPILED.setdefault(self.phi, {})
        if "fns" not in entry:
            entry["fns"] = _geometry_fns(self.phi, self.m)
        return entry["fns"]

    def fn(self, key):
        """Vectorized numpy-facing version of a pointwise jax map, evaluated in fixed-size chunks."""
        fns = self._fns
        entry = _COMPILED[self.phi]
        if ("jit", key) not in entry:
            entry[("jit", key)] = jax.jit(jax.vmap(fns[key]))
        f = entry[("jit", key)]
        shift = self.shift

        def call(x):
            x = np.asarray(x, dtype=float).reshape(-1, 2) + shift
            n = len(x)
            pad = (-n) % CHUNK
            xp = np.vstack([x, np.repeat(x[-1:], pad, axis=0)]) if pad else x
            parts = [np.asarray(f(jnp.asarray(xp[i:i + CHUNK]))) for i in range(0, len(xp), CHUNK)]
            return np.concatenate(parts)[:n]
        return call

    def local_phi(self):
        """phi in this chart's own coordinates."""
        if not np.any(self.shift):
            return self.phi
        phi, s = self.phi, jnp.asarray(self.shift)
        return lambda x: phi(x + s)

    def sample(self, x) -> Geometry:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return Geometry(x, self.m, self.fn("phi")(x), self.fn("d1")(x), self.fn("d2")(x), self.fn)

    # quadrature -----------------------------------------------------------
    @cached_property
    def quad_points(self) -> np.ndarray:
        """Flat quadrature points and weights: trapezoid on periodic grids, 7-point rule otherwise."""
        if self.periodic:
            w = np.full(self.mesh.n_vertices, np.prod(self.mesh.period) / self.mesh.n_vertices)
            return self.mesh.vertices, w
        if self.mesh.kind == "disc":
            return polar_quadrature(float(np.linalg.norm(self.mesh.vertices, axis=1).max()),
                                    self.mesh.refinement_level)
        pts = quadrature_points(self.mesh).reshape(-1, 2)
        w = (self.mesh.areas[:, None] * QUAD7_W[None, :]).ravel()
        return pts, w

    def fundamental_forms(self, where: str = "quad") -> Geometry:
        """Fill (and cache) the geometry at quadrature points, vertices, or 7-point triangle nodes.

        where="quad7" always uses the triangle rule (weak residual assembly),
        even on periodic grids where "quad" is the trapezoid rule.
        """
        if where not in self._cache:
            if where == "quad":
                pts = self.quad_points[0]
            elif where == "quad7":
                pts = quadrature_points(self.mesh).reshape(-1, 2)
            elif where == "vertices":
                pts = self.mesh.vertices
            else:
                raise ValueError(f"unknown sample set {where!r}")
            geo = self.sample(pts)
            self.check_immersion(geo)
            self._cache[where] = geo
        return self._cache[where]

    def check_immersion(self, geo: Geometry):
        area_el = geo.sqrtg
        if not self.branched and np.min(area_el) < self.c0:
            raise ImmersionError(f"{self.name}: |d1 Phi ^ d2 Phi| = {np.min(area_el):.2e} below {self.c0:g}")
        if self.conformal and not self.branched:
            defect = np.max(geo.conformality())
            if defect > 1e-8:
                raise ImmersionError(f"{self.name}: flagged conformal but defect {defect:.2e}")

    def integrate(self, values) -> float:
        """Integral over the chart domain of per-quadrature-point values against dx."""
        _, w = self.quad_points
        return float(np.sum(np.asarray(values) * w))

    def compose(self, psi, name: str | None = None, conformal: bool | None = None) -> "ImmersionChart":
        """Chart of psi o phi for an ambient map psi: R^m -> R^m."""
        phi = self.phi
        conf = self.conformal if conformal is None else conformal
        return ImmersionChart(lambda x: psi(phi(x)), self.mesh, self.m, conf,
                              name or self.name, self.c0, self.branched, self.shift)

    def with_mesh(self, mesh: TriMesh, shift=(0.0, 0.0)) -> "ImmersionChart":
        """Same surface on another domain mesh, chart coordinates shifted by `shift`."""
        return ImmersionChart(self.phi, mesh, self.m, self.conformal, self.name, self.c0,
                              self.branched, self.shift + np.asarray(shift, dtype=float))

    def positions(self) -> np.ndarray:
        return self.fn("phi")(self.mesh.vertices)


# catalogue parametrizations ---------------------------------------------------

@lru_cache(maxsize=None)
def sphere_phi(radius: float = 1.0, south: bool = False, center=(0.0, 0.0, 0.0)):
    """Inverse stereographic chart; both patches give the inward normal ordering."""
    c = jnp.asarray(center, dtype=float)

    def phi(x):
        r2 = x[0] ** 2 + x[1] ** 2
        if south:
            p = jnp.array([2 * x[0], -2 * x[1], 1 - r2])
        else:
            p = jnp.array([2 * x[0], 2 * x[1], r2 - 1])
        return c + radius * p / (1 + r2)
    return phi


@lru_cache(maxsize=None)
def double_sphere_phi(radius: float = 1.0, south: bool = False):
    base = sphere_phi(radius, south)
    return lambda x: base(jnp.array([x[0] ** 2 - x[1] ** 2, 2 * x[0] * x[1]]))


def clifford_s3(x):
    return jnp.array([jnp.cos(x[0]), jnp.sin(x[0]), jnp.cos(x[1]), jnp.sin(x[1])]) / jnp.sqrt(2.0)


def clifford_phi(x):
    """Clifford torus projected stereographically to R^3 from (0,0,0,1), off the torus."""
    p = clifford_s3(x)
    return p[:3] / (1 - p[3])


@lru_cache(maxsize=None)
def torus_phi(R: float, r: float):
    def phi(x):
        rho = R + r * jnp.cos(x[1])
        return jnp.array([rho * jnp.cos(x[0]), rho * jnp.sin(x[0]), r * jnp.sin(x[1])])
    return phi


@lru_cache(maxsize=None)
def torus_conformal_phi(R: float, r: float):
    """Torus of revolution in conformal coordinates on [0, 2pi) x [0, 2pi r / sqrt(R^2 - r^2))."""
    c = np.sqrt(R * R - r * r)
    k = np.sqrt((R + r) / (R - r))

    def phi(x):
        s = x[1] * c / (2 * r)
        v = 2 * jnp.arctan2(k * jnp.sin(s), jnp.cos(s))
        rho = R + r * jnp.cos(v)
        return jnp.array([rho * jnp.cos(x[0]), rho * jnp.sin(x[0]), r * jnp.sin(v)])
    return phi, 2 * np.pi * r / c


@lru_cache(maxsize=None)
def cylinder_phi(radius: float = 1.0):
    return lambda x: jnp.array([radius * jnp.cos(x[0] / radius), radius * jnp.sin(x[0] / radius), x[1]])


def catenoid_phi(x):
    return jnp.array([jnp.cosh(x[1]) * jnp.cos(x[0]), jnp.cosh(x[1]) * jnp.sin(x[0]), x[1]])


@lru_cache(maxsize=None)
def graph_phi(f):
    return lambda x: jnp.array([x[0], x[1], f(x)])


def default_graph(x):
    return 0.25 * (x[0] ** 2 - 0.5 * x[1] ** 2) + 0.1 * jnp.sin(2 * x[0]) * x[1]


@lru_cache(maxsize=None)
def cap_phi(s: float):
    """Inverse stereographic projection of the scaled disc s D^2: a conformal spherical cap."""
    def phi(x):
        y = s * x
        r2 = y[0] ** 2 + y[1] ** 2
        return jnp.array([2 * y[0], 2 * y[1], r2 - 1.0]) / (1.0 + r2)
    return phi


@lru_cache(maxsize=None)
def enneper_phi(a: float):
    """Enneper's minimal surface on a D^2, rescaled by 1/a; conformal with e^lambda = 1 + a^2 |x|^2."""
    def phi(x):
        u, v = a * x[0], a * x[1]
        return jnp.array([u - u ** 3 / 3 + u * v ** 2, -v + v ** 3 / 3 - u ** 2 * v, u ** 2 - v ** 2]) / a
    return phi


@lru_cache(maxsize=None)
def sine_graph_phi(amplitude: float = 0.3):
    return lambda x: jnp.array([x[0], x[1], amplitude * jnp.sin(x[0]) * jnp.sin(x[1])])


@lru_cache(maxsize=None)
def affine_phi(A: tuple):
    """x -> A x for an m x 2 matrix given as nested tuples."""
    M = jnp.asarray(A, dtype=float)
    return lambda x: M @ x


def flat_phi(x):
    return jnp.array([x[0], x[1], 0.0 * x[0]])


def sheared_flat_phi(x):
    return jnp.array([x[0] + 0.5 * x[1], x[1], 0.0 * x[0]])


@dataclass
class SurfaceCatalogueEntry:
    """Named benchmark surface: atlas builder plus reference values."""
    name: str
    params: dict
    build: object                      # level -> list[ImmersionChart]
    reference: dict = field(default_factory=dict)
    closed: bool = False
    conformal: bool = False
    multiplicity: int = 1

    def atlas(self, level: int) -> list:
        return self.build(level)

    def verify_derivatives(self, n_samples: int = 100, seed: int = 0, h: float = 1e-5) -> float:
        """Max relative error of the jax first/second derivatives against central differences."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for chart in self.build(2):
            v = chart.mesh.vertices
            lo, hi = v.min(axis=0), v.max(axis=0)
            x = lo + (hi - lo) * rng.random((n_samples, 2)) * 0.9 + 0.05 * (hi - lo)
            if not chart.periodic:
                r = np.linalg.norm(x, axis=1, keepdims=True)
                rad = np.linalg.norm(v, axis=1).max()
                x = np.where(r > 0.9 * rad, x * 0.9 * rad / r, x)
            f, d1, d2 = chart.fn("phi"), chart.fn("d1")(x), chart.fn("d2")(x)
            for k in range(2):
                e = np.zeros(2)
                e[k] = h
                fd1 = (f(x + e) - f(x - e)) / (2 * h)
                fd2 = (chart.fn("d1")(x + e) - chart.fn("d1")(x - e)) / (2 * h)
                s1 = np.abs(d1).max() + 1e-300
                s2 = np.abs(d2).max() + 1e-300
                worst = max(worst, np.abs(fd1 - d1[:, :, k]).max() / s1,
                            np.abs(fd2 - d2[:, :, :, k]).max() / s2)
        return float(worst)


def _disc(level, radius=1.0):
    return build_disc_mesh(level, radius)


def _grid(level, l1=2 * np.pi, l2=2 * np.pi):
    n = 2 ** int(level)
    return build_periodic_grid(n, n, l1, l2)


def sphere_entry(radius: float = 1.0, split: float = 1.0) -> SurfaceCatalogueEntry:
    """Two stereographic patches, discs of radius `split` and 1/split."""
    def build(level):
        return [ImmersionChart(sphere_phi(radius), _disc(level, split), 3, True, "sphere-north"),
                ImmersionChart(sphere_phi(radius, south=True), _disc(level, 1.0 / split), 3, True,
                               "sphere-south")]
    return SurfaceCatalogueEntry("sphere", {"radius": radius, "split": split}, build,
                                 {"W": 4 * np.pi, "int_K": 4 * np.pi, "genus": 0, "chi": 2},
                                 closed=True, conformal=True)


def double_sphere_entry(radius: float = 1.0) -> SurfaceCatalogueEntry:
    def build(level):
        return [ImmersionChart(double_sphere_phi(radius), _disc(level), 3, True, "double-north",
                               branched=True),
                ImmersionChart(double_sphere_phi(radius, True), _disc(level), 3, True, "double-south",
                               branched=True)]
    return SurfaceCatalogueEntry("double-sphere", {"radius": radius}, build,
                                 {"W": 8 * np.pi, "int_K": 8 * np.pi, "chi": 4},
                                 closed=True, conformal=True, multiplicity=2)


def clifford_entry(ambient: int = 3) -> SurfaceCatalogueEntry:
    phi, m = (clifford_phi, 3) if ambient == 3 else (clifford_s3, 4)

    def build(level):
        return [ImmersionChart(phi, _grid(level), m, True, f"clifford-r{m}")]
    return SurfaceCatalogueEntry("clifford" if m == 3 else "clifford-r4", {"ambient": m}, build,
                                 {"W": 2 * np.pi ** 2, "int_K": 0.0, "genus": 1, "chi": 0},
                                 closed=True, conformal=True)


def torus_entry(R: float = 2.0, r: float = 1.0, conformal: bool = False) -> SurfaceCatalogueEntry:
    """Torus of revolution; W = pi^2 R^2 / (r sqrt(R^2 - r^2))."""
    if conformal:
        phi, L = torus_conformal_phi(R, r)
    else:
        phi, L = torus_phi(R, r), 2 * np.pi

    def build(level):
        return [ImmersionChart(phi, _grid(level, 2 * np.pi, L), 3, conformal, "torus")]
    W = np.pi ** 2 * R ** 2 / (r * np.sqrt(R * R - r * r))
    return SurfaceCatalogueEntry("torus", {"R": R, "r": r, "conformal": conformal}, build,
                                 {"W": W, "int_K": 0.0, "genus": 1, "chi": 0},
                                 closed=True, conformal=conformal)


def _patch_entry(name, phi, conformal, reference=None, radius=1.0):
    def build(level):
        return [ImmersionChart(phi, _disc(level, radius), 3, conformal, name)]
    return SurfaceCatalogueEntry(name, {"radius": radius}, build, reference or {}, conformal=conformal)


def catalogue() -> dict:
    """Name -> entry factory with default parameters."""
    return {
        "sphere": sphere_entry,
        "sphere-alt": lambda: sphere_entry(split=2.0),
        "double-sphere": double_sphere_entry,
        "clifford": clifford_entry,
        "clifford-r4": lambda: clifford_entry(4),
        "torus": torus_entry,
        "clifford-revolution": lambda: torus_entry(np.sqrt(2.0), 1.0, conformal=True),
        "cylinder": lambda: _patch_entry("cylinder", cylinder_phi(1.0), True, {"H": 0.5, "K": 0.0}),
        "catenoid": lambda: _patch_entry("catenoid", catenoid_phi, True, {"H": 0.0}),
        "graph": lambda: _patch_entry("graph", graph_phi(default_graph), False),
        "flat": lambda: _patch_entry("flat", flat_phi, True, {"W": 0.0}),
        "sheared-flat": lambda: _patch_entry("sheared-flat", sheared_flat_phi, False, {"W": 0.0}),
    }


def get_surface(name: str, **params) -> SurfaceCatalogueEntry:
    cat = catalogue()
    if name not in cat:
        raise KeyError(f"unknown surface {name!r}; known: {sorted(cat)}")
    return cat[name](**params)


def chart_on_disc(chart: ImmersionChart, level: int, radius: float = 1.0, center=(0.0, 0.0)) -> ImmersionChart:
    """Restrict a chart to a disc of the given radius about `center` (local coordinates)."""
    return chart.with_mesh(build_disc_mesh(level, radius), shift=center)
