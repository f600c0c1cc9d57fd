import numpy as np
import pytest
from hypothesis import given, strategies as st

from conformal_lab.fem import (BoundaryCondition, area_functional, dirichlet_energy, gradient_p1,
                               load_from_vertex, solve_poisson, SolverError)
from conformal_lab.mesh import (FieldRm, build_annulus_mesh, build_disc_mesh, build_periodic_grid,
                                export_field_csv, export_obj, export_vtk)
from conformal_lab.norms import lorentz_norms, morrey_profile, pohozaev_check
from conformal_lab.plateau import mobius_disc

from conftest import disc


def shoelace(xy):
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# ---- meshes

def test_level0_is_hexagon_fan():
    m = build_disc_mesh(0)
    assert m.n_triangles == 6
    assert m.total_area() < np.pi
    assert m.total_area() == pytest.approx(3 * np.sqrt(3) / 2, rel=1e-12)


@pytest.mark.parametrize("level", range(0, 7))
def test_disc_invariants(level):
    m = disc(level)
    r = np.linalg.norm(m.vertices[m.boundary_loop], axis=1)
    assert np.max(np.abs(r - 1)) < 1e-12
    assert np.all(m.areas > 0)
    assert m.min_angle() >= 20.0
    assert len(m.boundary_loops) == 1
    # boundary loop ordered by angle, so its polygon area is the mesh area
    assert m.total_area() == pytest.approx(shoelace(m.vertices[m.boundary_loop]), rel=1e-12)


def test_disc_area_monotone():
    a = [disc(k).total_area() for k in range(7)]
    assert np.all(np.diff(a) > 0)
    assert abs(a[6] - np.pi) < 1e-3


def test_disc_counts_deterministic():
    for k in range(5):
        n = 2 ** k
        m = build_disc_mesh(k)
        assert m.n_vertices == 1 + 3 * n * (n + 1)
        assert m.n_triangles == 6 * n * n


@pytest.mark.parametrize("bad", [-1, 10, 2.5])
def test_level_out_of_range(bad):
    with pytest.raises(ValueError):
        build_disc_mesh(bad)


def test_annulus_and_grid():
    a = build_annulus_mesh(0.3, 4)
    assert len(a.boundary_loops) == 2
    assert np.all(a.areas > 0)
    g = build_periodic_grid(16, 8)
    assert g.total_area() == pytest.approx(4 * np.pi ** 2, rel=1e-12)
    assert len(g.boundary_loop) == 0


def test_field_shape_checked():
    m = disc(2)
    with pytest.raises(ValueError):
        FieldRm(m, np.zeros(m.n_vertices + 1))


# ---- calculus

def test_gradient_affine_and_const():
    m = disc(4)
    x = m.vertices
    g = gradient_p1(FieldRm(m, x[:, 0]))
    assert np.allclose(g[:, 0], [1, 0], atol=1e-12)
    assert np.allclose(gradient_p1(FieldRm(m, np.full(m.n_vertices, 3.0))), 0, atol=1e-12)


def test_gradient_quadratic_first_order():
    errs = []
    for k in (3, 4, 5):
        m = disc(k)
        g = gradient_p1(FieldRm(m, m.vertices[:, 0] ** 2))[:, 0, 0]
        c = m.vertices[m.triangles].mean(axis=1)
        errs.append(np.max(np.abs(g - 2 * c[:, 0])) / m.h)
    # error / h stays bounded
    assert max(errs) < 2 * min(errs)


def test_gradient_mismatch():
    with pytest.raises(ValueError):
        gradient_p1(np.zeros(5), disc(2))


def test_energy_identity_and_area():
    m = disc(5)
    u = FieldRm(m, m.vertices)
    assert dirichlet_energy(u) == pytest.approx(np.pi, abs=1e-3)
    assert area_functional(u) == pytest.approx(np.pi, abs=1e-3)
    assert dirichlet_energy(u) - area_functional(u) < 1e-6
    c = FieldRm(m, np.ones((m.n_vertices, 3)))
    assert dirichlet_energy(c) < 1e-20 and area_functional(c) < 1e-10


def test_area_stretched_map():
    m = disc(6)
    x = m.vertices
    u = FieldRm(m, np.column_stack([x[:, 0], 2 * x[:, 1], 0 * x[:, 0]]))
    # constant Jacobian: A = 2|D|, E = 5/2 |D|, with |D| the mesh area
    assert area_functional(u) == pytest.approx(2 * m.total_area(), rel=1e-12)
    assert dirichlet_energy(u) == pytest.approx(2.5 * m.total_area(), rel=1e-12)
    assert abs(area_functional(u) - 2 * np.pi) < 1e-2
    with pytest.raises(ValueError):
        area_functional(FieldRm(m, x[:, 0]))


def test_energy_mobius_invariant():
    vals = []
    for k in (4, 5, 6):
        m = disc(k)
        w = mobius_disc(m.vertices[:, 0] + 1j * m.vertices[:, 1], 0.0, 0.3)
        vals.append(dirichlet_energy(FieldRm(m, np.column_stack([w.real, w.imag]))))
    # Richardson extrapolation with an O(h^2) error model
    extrap = (4 * vals[2] - vals[1]) / 3
    assert abs(extrap - np.pi) < 2e-3
    assert abs(vals[2] - np.pi) < abs(vals[0] - np.pi)


@given(st.lists(st.floats(-2, 2), min_size=8, max_size=8))
def test_area_below_energy(coef):
    m = disc(3)
    x, y = m.vertices.T
    c = np.array(coef).reshape(2, 4)
    u = np.column_stack([c[i, 0] * x + c[i, 1] * y + c[i, 2] * x * y + c[i, 3] * (x * x - y * y)
                         for i in range(2)])
    f = FieldRm(m, u)
    assert area_functional(f) <= dirichlet_energy(f) * (1 + 1e-12) + 1e-14


# ---- solver

def test_poisson_affine_and_zero():
    m = disc(4)
    x = m.vertices[:, 0]
    u = solve_poisson(m, np.zeros(m.n_vertices), BoundaryCondition(values=lambda xy: xy[:, 0]))
    assert np.max(np.abs(u.scalar - x)) < 1e-12
    z = solve_poisson(m, np.zeros(m.n_vertices))
    assert np.all(z.scalar == 0)
    ucg = solve_poisson(m, np.zeros(m.n_vertices), BoundaryCondition(values=lambda xy: xy[:, 0]),
                        method="cg")
    assert np.max(np.abs(ucg.scalar - x)) < 1e-8


def test_poisson_radial_second_order():
    errs, hs = [], []
    for k in (3, 4, 5, 6):
        m = disc(k)
        u = solve_poisson(m, load_from_vertex(m, np.ones(m.n_vertices)))
        r2 = np.sum(m.vertices ** 2, axis=1)
        errs.append(np.max(np.abs(u.scalar - (1 - r2) / 4)))
        hs.append(m.h)
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert orders[-1] > 1.8


def test_poisson_manufactured_l2_order():
    def err(k):
        m = disc(k)
        x, y = m.vertices.T
        # sin(x) e^y is harmonic and -Lap(x^2 y) = -2y
        exact2 = np.sin(x) * np.exp(y) + x * x * y
        u = solve_poisson(m, load_from_vertex(m, -2 * y), BoundaryCondition(values=exact2[m.boundary_loop],
                                                                          nodes=m.boundary_loop))
        e = u.scalar - exact2
        return np.sqrt(np.sum(m.vertex_area * e ** 2)), m.h
    (e1, h1), (e2, h2) = err(5), err(6)
    assert np.log(e1 / e2) / np.log(h1 / h2) >= 1.9


def test_neumann_incompatible():
    m = disc(3)
    with pytest.raises(ValueError):
        solve_poisson(m, np.ones(m.n_vertices), BoundaryCondition(kind="neumann"))


def test_rhs_mismatch():
    with pytest.raises(ValueError):
        solve_poisson(disc(2), np.zeros(3))


def test_solver_error_type():
    assert issubclass(SolverError, RuntimeError)


# ---- norms

def test_lorentz_constant_and_zero():
    m = disc(5)
    n = lorentz_norms(FieldRm(m, np.ones(m.n_vertices)))
    s = np.sqrt(m.total_area())
    assert n["l2_weak"] == pytest.approx(s, rel=1e-12)
    assert n["l2"] == pytest.approx(s, rel=1e-12)
    assert abs(s - np.sqrt(np.pi)) < 1e-3
    z = lorentz_norms(FieldRm(m, np.zeros(m.n_vertices)))
    assert z == {"l2_weak": 0.0, "l2": 0.0, "l21": 0.0}


def test_lorentz_inverse_radius():
    weak, l2 = [], []
    for k in (4, 5, 6, 7):
        m = build_disc_mesh(k)
        r = np.linalg.norm(m.vertices, axis=1)
        f = np.where(r > 0, 1 / np.maximum(r, 1e-300), 0.0)
        n = lorentz_norms(FieldRm(m, f))
        weak.append(n["l2_weak"])
        l2.append(n["l2"])
    # |{1/r > s}| = pi/s^2, so the weak norm stays near sqrt(pi); the lumped
    # mass of the first ring inflates it by a level-independent factor
    ratio = np.array(weak) / np.sqrt(np.pi)
    assert np.all((ratio > 1) & (ratio < 1.35))
    assert np.all(np.diff(ratio) <= 0)
    d = np.diff(np.array(l2) ** 2)
    # L2 norm grows by about 2 pi log 2 per level
    assert np.all(d > 0.5 * 2 * np.pi * np.log(2))


@given(st.integers(0, 2 ** 31 - 1))
def test_lorentz_monotone_under_domination(seed):
    rng = np.random.default_rng(seed)
    m = disc(3)
    g = rng.normal(size=m.n_vertices)
    f = g * rng.uniform(0, 1, m.n_vertices)
    nf, ng = lorentz_norms(FieldRm(m, f)), lorentz_norms(FieldRm(m, g))
    for k in nf:
        assert nf[k] <= ng[k] * (1 + 1e-12)
    # discrete Lorentz-scale ordering
    assert nf["l2_weak"] <= nf["l2"] * (1 + 1e-12)
    assert nf["l2"] <= nf["l21"] * (1 + 1e-12)


def test_morrey_affine_and_const():
    m = disc(6)
    radii = np.geomspace(0.05, 0.4, 6)
    p = morrey_profile(FieldRm(m, m.vertices @ [1.0, 2.0]), [[0, 0], [0.2, 0.1]], radii)
    assert p.alpha == pytest.approx(2.0, abs=0.05)
    c = morrey_profile(FieldRm(m, np.ones(m.n_vertices)), [[0, 0]], radii)
    assert np.all(c.energies < 1e-20)
    with pytest.raises(ValueError):
        morrey_profile(FieldRm(m, m.vertices[:, 0]), [[0.8, 0]], [0.5])


def test_morrey_harmonic_monotone():
    m = disc(6)
    u = solve_poisson(m, np.zeros(m.n_vertices), BoundaryCondition(values=lambda xy: xy[:, 0] * xy[:, 1]))
    radii = np.geomspace(4 * m.h, 0.5, 8)
    p = morrey_profile(u, [[0, 0], [0.2, -0.1]], radii)
    assert p.max_violation <= 1e-6


def test_pohozaev():
    m = disc(5)
    x, y = m.vertices.T
    assert pohozaev_check(FieldRm(m, x), [0, 0], 0.5) < 1e-10
    assert pohozaev_check(FieldRm(m, np.ones(m.n_vertices)), [0, 0], 0.5) < 1e-20
    d = []
    for k in (4, 5, 6):
        mk = disc(k)
        xk, yk = mk.vertices.T
        d.append(pohozaev_check(FieldRm(mk, xk * xk - yk * yk), [0, 0], 0.5))
    # both sides equal 4 pi rho^3 = pi/2 in the limit
    assert d[2] < d[0]
    assert d[2] < 0.05 * np.pi / 2


# ---- exports

def test_exports(tmp_path):
    m = disc(2)
    f = FieldRm(m, np.column_stack([m.vertices[:, 0], m.vertices[:, 1] ** 2]))
    obj = export_obj(m, tmp_path / "m.obj").read_text().splitlines()
    assert sum(line.startswith("v ") for line in obj) == m.n_vertices
    assert sum(line.startswith("f ") for line in obj) == m.n_triangles
    assert obj[0].split()[-1] == "0"
    vtk = export_vtk(m, tmp_path / "m.vtk", {"u": f.values}).read_text()
    assert "DATASET UNSTRUCTURED_GRID" in vtk and "SCALARS u_1 double 1" in vtk
    csv = export_field_csv(f, tmp_path / "f.csv").read_text().splitlines()
    assert csv[0] == "vertex_id,x,y,v0,v1"
    assert len(csv) == m.n_vertices + 1
    back = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 3:], f.values)
