import dataclasses

import numpy as np
import pytest

from conformal_lab.isothermal import (FoldError, ThresholdError, benchmark_chart, build_isothermal_coords,
                                      conformal_factor, coulomb_frame, coulomb_lifting_norms, estimate_family,
                                      export_coordinates_csv, factor_estimates_check, gauss_map_energy,
                                      helein_frame_energy, helein_map, helein_map_energy,
                                      helein_threshold_experiment, isothermal_pipeline)
from conformal_lab.willmore import get_surface
from conformal_lab.willmore.charts import ImmersionError


def orders(hs, errs):
    return np.log(np.array(errs[:-1]) / np.array(errs[1:])) / np.log(np.array(hs[:-1]) / np.array(hs[1:]))


def test_flat_chart():
    out = isothermal_pipeline(benchmark_chart("flat", 4))
    r = out["report"]
    assert r["lambda_max"] == 0 and r["liouville_defect"] == 0
    assert r["conformal"]
    assert np.ptp(out["frame"].theta) < 1e-12
    # phi is the identity up to a translation
    phi = out["coords"].phi.values
    v = benchmark_chart("flat", 4).mesh.vertices
    assert np.max(np.abs(phi - v - (phi - v).mean(axis=0))) < 1e-10


def test_sheared_flat():
    r = isothermal_pipeline(benchmark_chart("sheared-flat", 4))["report"]
    assert r["coulomb_defect"] < 1e-8
    assert r["conformality_defect"] < 1e-6
    assert r["min_jacobian"] > 0


def test_sphere_connection_and_lambda():
    ch = benchmark_chart("sphere", 6)
    fr = coulomb_frame(ch)
    x = ch.fundamental_forms("quad7").x
    dl = -2 * x / (1 + np.sum(x ** 2, axis=1))[:, None]
    perp = np.column_stack([-dl[:, 1], dl[:, 0]])
    # <e1, grad e2> = -grad-perp lambda on a conformal chart
    assert np.max(np.abs(fr.connection + perp)) < 1e-6
    assert np.ptp(fr.theta) < 1e-10
    # lambda = log(2 / (1 + r^2)) vanishes on the circle, so no gauge constant; nodal error is O(h^2)
    err = []
    for k in (5, 6):
        c = benchmark_chart("sphere", k)
        lam = conformal_factor(coulomb_frame(c), c)["lambda"].scalar
        v = c.mesh.vertices
        err.append(np.max(np.abs(lam - np.log(2 / (1 + np.sum(v ** 2, axis=1))))))
    assert err[1] < 1e-5
    assert err[0] / err[1] > 3.5


def test_refinement_orders():
    hs, conf, liou = [], [], []
    for k in (3, 4, 5):
        g = isothermal_pipeline(benchmark_chart("graph", k))["report"]
        s = isothermal_pipeline(benchmark_chart("sphere", k))["report"]
        hs.append(benchmark_chart("flat", k).mesh.h)
        conf.append(g["conformality_defect"])
        liou.append(s["liouville_defect"])
        assert g["coulomb_defect"] < 1e-8 and s["coulomb_defect"] < 1e-8
    assert np.all(orders(hs, conf) >= 0.6)
    assert np.all(orders(hs, liou) >= 0.9)


def test_frame_orthonormal():
    fr = coulomb_frame(benchmark_chart("graph", 4))
    assert fr.orthonormality() < 1e-12
    assert fr.defect < 1e-8


def test_gauge_covariance_polygon():
    ch = benchmark_chart("graph", 4)
    f0 = coulomb_frame(ch, boundary="polygon")
    f1 = coulomb_frame(ch, start_angle=lambda y: 0.7 * y[0] - 0.4 * y[1] + 1.0, boundary="polygon")
    assert np.max(np.abs(f0.connection - f1.connection)) < 1e-8


def test_gauge_covariance_converges():
    d = []
    for k in (4, 5):
        ch = benchmark_chart("graph", k)
        f0 = coulomb_frame(ch)
        f1 = coulomb_frame(ch, start_angle=lambda y: 0.3 * y[0] * y[1])
        d.append(np.max(np.abs(f0.connection - f1.connection)))
    assert d[1] < 0.6 * d[0]


def test_frame_errors():
    with pytest.raises(ValueError):
        coulomb_frame(get_surface("clifford").atlas(2)[0])
    with pytest.raises(ValueError):
        coulomb_frame(benchmark_chart("flat", 3), boundary="square")
    ch = benchmark_chart("affine", 3, A=((1.0, 1.0), (1.0, 1.0), (0.0, 0.0)))
    with pytest.raises(ImmersionError):
        coulomb_frame(ch)


def test_fold_detected():
    ch = benchmark_chart("graph", 3)
    fr = coulomb_frame(ch)
    flipped = dataclasses.replace(fr, e=fr.e * np.array([1.0, -1.0]))
    with pytest.raises(FoldError):
        build_isothermal_coords(ch, flipped, np.zeros(ch.mesh.n_vertices))


def test_coordinates_csv(tmp_path):
    out = isothermal_pipeline(benchmark_chart("sphere", 3))
    p = export_coordinates_csv(out["coords"], tmp_path / "c.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "vertex_id,phi1,phi2,lambda"
    assert len(lines) == 1 + out["coords"].phi.mesh.n_vertices


def test_factor_estimates():
    flat = factor_estimates_check(benchmark_chart("flat", 4))
    assert flat["rows"][0]["lambda_inf"] == 0
    rep = factor_estimates_check(estimate_family(4))
    assert np.isfinite(rep["C_rho_sup"]) and np.isfinite(rep["C_rho_inf"])
    assert all(r["sup_holds"] and r["inf_holds"] for r in rep["rows"])
    with pytest.raises(ThresholdError):
        factor_estimates_check(benchmark_chart("sphere", 3, s=1.5))
    loose = factor_estimates_check(benchmark_chart("sphere", 3, s=1.5), strict=False)
    assert not loose["rows"][0]["hypothesis_ok"]
    with pytest.raises(ValueError):
        factor_estimates_check(benchmark_chart("graph", 3))


def test_cap_energy_closed_form():
    # int |grad n|^2 over sigma^{-1}(s x), |x| < 1, is 8 pi s^2 / (1 + s^2)
    for s in (0.3, 0.6):
        E = gauss_map_energy(benchmark_chart("sphere", 4, s=s))
        assert E == pytest.approx(8 * np.pi * s * s / (1 + s * s), rel=1e-6)


def test_lifting_norms():
    flat = coulomb_lifting_norms(benchmark_chart("flat", 4))
    assert flat["connection_l2_weak"] == 0 and flat["bound_ratio"] is None
    r = [coulomb_lifting_norms(benchmark_chart("sphere", k))["bound_ratio"] for k in (4, 5)]
    assert np.all(np.isfinite(r))
    assert abs(r[1] - r[0]) < 0.1 * r[0]


def test_helein_map_energy():
    e = helein_map_energy(100.0)
    assert e["ratio_8pi"] == pytest.approx(1.0, abs=3e-2)
    assert e["inner"] == pytest.approx(e["inner_closed_form"], rel=1e-8)
    ratios = [helein_map_energy(l)["ratio_8pi"] for l in (10.0, 100.0, 1000.0)]
    assert abs(ratios[2] - 1) < abs(ratios[1] - 1) < abs(ratios[0] - 1)


def test_helein_map_shape():
    x = np.array([[0.0, 0.0], [0.9, 0.0], [0.0, 0.2], [0.5, 0.5]])
    n = helein_map(x, 50.0, 0.1)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
    assert np.allclose(n[0], [0, 0, 1])
    assert np.allclose(n[1:], [0, 0, -1])


def test_helein_frame_small_lambda_is_finite():
    r = helein_frame_energy(0.5, 0.1)
    assert np.isfinite(r["frame_energy"]) and r["coulomb_defect"] < 1e-10
    assert r["map_energy"] == pytest.approx(helein_map_energy(0.5)["energy"], rel=1e-2)
    # tangent frames on the constant outer region wind twice on circles
    assert r["degree"] == 2


def test_helein_frame_growth():
    r = helein_threshold_experiment(100.0, (0.1, 0.01), (10.0, 100.0))
    assert r["increasing"] and r["lower_bound_holds"]
    assert r["slope"] == pytest.approx(8 * np.pi, rel=1e-2)
