import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from conformal_lab.compensation import DivergenceError, inverse_stereo, schrodinger_linear_solve, spherical_cap_oracle
from conformal_lab.fem import BoundaryCondition, solve_poisson
from conformal_lab.gauge import (PotentialField, conservation_equivalence_check, construct_AB, coulomb_gauge,
                                 dist_so, form_l2, grad_mat, gauge_report, omega_from_geometry, polar,
                                 potential_from_stream, random_manufactured, random_smooth_potential,
                                 random_so_field)
from conformal_lab.mesh import FieldRm

from conftest import disc


def zero_potential(m, dim=3):
    return PotentialField(m, np.zeros((m.n_vertices, 2, dim, dim)))


def bc(xy):
    return np.column_stack([xy[:, 0], xy[:, 1], xy[:, 0] * xy[:, 1]])


def test_zero_potential():
    m = disc(4)
    om = zero_potential(m)
    g = coulomb_gauge(om)
    assert g.iterations == 0
    assert np.array_equal(g.P, np.broadcast_to(np.eye(3), g.P.shape))
    assert np.max(np.abs(g.xi)) == 0
    ab = construct_AB(om, g)
    assert np.max(np.abs(ab.A - np.eye(3))) < 1e-12 and np.max(np.abs(ab.B)) < 1e-12


def test_divergence_free_potential(rng):
    m = disc(5)
    xi = random_so_field(m, rng, vanish_on_boundary=True)
    xi *= 0.3 / potential_from_stream(m, xi).l2()
    om = potential_from_stream(m, xi)
    g = coulomb_gauge(om)
    assert g.iterations == 0
    assert np.max(np.abs(g.xi - xi)) < 1e-6
    ab = construct_AB(om, g)
    assert np.max(np.abs(ab.A - np.eye(3))) < 1e-6
    assert np.max(np.abs(ab.B - xi)) < 1e-6


def test_manufactured_coulomb_and_AB(rng):
    m = disc(5)
    om, P0, xi0 = random_manufactured(m, rng, target_l2=0.3)
    assert om.l2() == pytest.approx(0.3, rel=1e-3)
    g = coulomb_gauge(om)
    assert g.defect < 1e-6
    assert g.recon_residual < 1e-6
    assert np.isfinite(g.energy_bound_C) and g.energy_bound_C > 0
    # the history is a descent certificate
    d = [h[2] for h in g.history]
    assert d[-1] < 1e-3 * d[0]
    PtP = np.swapaxes(g.P, -1, -2) @ g.P
    assert np.max(np.abs(PtP - np.eye(3))) < 1e-10
    assert np.all(np.linalg.det(g.P) > 0)
    ab = construct_AB(om, g)
    assert ab.conservation_defect < 1e-5
    assert np.max(np.abs(ab.A - np.eye(3))) <= 0.5
    assert max(ab.contraction[1:]) < 0.9
    assert np.isfinite(ab.C_dist)


def test_gate():
    m = disc(4)
    om = random_smooth_potential(m, np.random.default_rng(0), target_l2=2.0)
    with pytest.raises(DivergenceError):
        coulomb_gauge(om)


@settings(max_examples=5)
@given(st.integers(0, 2 ** 31 - 1))
def test_gauge_covariance(seed):
    rng = np.random.default_rng(seed)
    m = disc(4)
    om, _, _ = random_manufactured(m, rng, target_l2=0.3)
    Q = polar(rng.normal(size=(3, 3)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    g1, g2 = coulomb_gauge(om), coulomb_gauge(om.conjugate(Q))
    assert g1.defect < 1e-6 and g2.defect < 1e-6
    n1 = form_l2(m, grad_mat(m, g1.xi))
    n2 = form_l2(m, grad_mat(m, g2.xi))
    assert n1 == pytest.approx(n2, rel=1e-6)


def test_antisymmetry_enforced():
    m = disc(3)
    v = np.zeros((m.n_vertices, 2, 3, 3))
    v[:, 0, 0, 1] = 1.0
    with pytest.raises(ValueError):
        PotentialField(m, v)
    with pytest.raises(ValueError):
        PotentialField(m, np.zeros((m.n_vertices, 3, 3, 3)))


def test_equivalence_trivial():
    m = disc(4)
    u = solve_poisson(m, np.zeros((m.n_vertices, 3)), BoundaryCondition(values=bc))
    om = zero_potential(m)
    eye = np.broadcast_to(np.eye(3), (m.n_vertices, 3, 3)).copy()
    r = conservation_equivalence_check(u, om, eye, np.zeros_like(eye))
    assert r["lhs_residual"] < 1e-12 and r["rhs_residual"] < 1e-12
    with pytest.raises(ValueError):
        conservation_equivalence_check(u.values[:, :2], om, eye, eye)


def test_equivalence_on_solver_output(rng):
    # the conservation form carries an O(h^2) Hodge remainder; level 6 puts it below 1e-5
    m = disc(6)
    om, _, _ = random_manufactured(m, rng, target_l2=0.3)
    ab = construct_AB(om)
    W = schrodinger_linear_solve(om, bc, m)
    eq = conservation_equivalence_check(W.W, om, ab.A, ab.B)
    assert eq["rhs_residual"] < 1e-5 and eq["lhs_residual"] < 1e-5
    # arbitrary u: the two residuals differ by the algebraic identity up to O(h)
    u = rng.normal(size=(m.n_vertices, 3))
    e = conservation_equivalence_check(u, om, ab.A, ab.B)
    assert e["identity_gap"] < 1e-2 * e["lhs_residual"]


def test_omega_from_geometry():
    m = disc(4)
    const = FieldRm(m, np.tile([0.0, 0.0, 1.0], (m.n_vertices, 1)))
    assert np.max(np.abs(omega_from_geometry("sphere", const).values)) < 1e-14
    sph, cap = [], []
    exact, _ = spherical_cap_oracle(np.pi / 6)
    for k in (3, 4, 5):
        mk = disc(k)
        eye = np.broadcast_to(np.eye(3), (mk.n_vertices, 3, 3)).copy()
        u = FieldRm(mk, inverse_stereo(mk.vertices))
        om = omega_from_geometry("sphere", u)
        sph.append(conservation_equivalence_check(u, om, eye, 0 * eye)["rhs_residual"])
        c = FieldRm(mk, exact(mk.vertices))
        omc = omega_from_geometry("cmc", c, 1.0)
        cap.append(conservation_equivalence_check(c, omc, eye, 0 * eye)["rhs_residual"])
    assert sph[2] < sph[1] < sph[0]
    assert cap[2] < cap[1] < cap[0]
    with pytest.raises(ValueError):
        omega_from_geometry("cmc", FieldRm(m, m.vertices), 1.0)
    with pytest.raises(ValueError):
        omega_from_geometry("torus", const)
    with pytest.raises(TypeError):
        omega_from_geometry("sphere", const.values)


def test_polar_and_dist(rng):
    X = expm(np.array([[0, 0.3, 0], [-0.3, 0, 0.1], [0, -0.1, 0]])) * 1.01
    R = polar(X)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-14)
    assert dist_so(R[None])[0] < 1e-14


def test_report_keys():
    m = disc(4)
    om, _, _ = random_manufactured(m, np.random.default_rng(7), target_l2=0.2)
    rep = gauge_report(om)
    assert {"coulomb_defect", "conservation_defect", "a_dist_so"} <= set(rep)
