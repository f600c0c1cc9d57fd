import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conformal_lab.exterior import (MultiVector, bullet, contract, cross, hodge_star, inner,
                                    project_normal, wedge)


# definition-level oracle on index tuples, independent of the bitmask tables

def perm_sign(seq):
    s = 1
    seq = list(seq)
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                s = -s
    return s


def basis(m):
    for p in range(m + 1):
        for idx in itertools.combinations(range(m), p):
            yield idx


def blade(m, idx):
    return MultiVector.blade(m, idx)


def brute_wedge(I, J):
    if set(I) & set(J):
        return None, 0
    return tuple(sorted(I + J)), perm_sign(I + J)


def coeff(mv, idx):
    return mv.components().get(tuple(idx), 0.0)


def rand_mv(rng, m, grade=None):
    c = rng.normal(size=1 << m)
    mv = MultiVector(m, c)
    return mv.grade(grade) if grade is not None else mv


@pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
def test_wedge_exhaustive(m):
    for I in basis(m):
        for J in basis(m):
            got = wedge(blade(m, I), blade(m, J))
            K, s = brute_wedge(I, J)
            exp = MultiVector.zeros(m) if K is None else blade(m, K) * s
            assert np.array_equal(got.c, exp.c), (I, J)


@pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
def test_hodge_exhaustive(m):
    vol = MultiVector.volume(m)
    for I in basis(m):
        star = hodge_star(blade(m, I))
        for J in basis(m):
            if len(J) != len(I):
                continue
            # b ^ *a = <b, a> vol
            lhs = wedge(blade(m, J), star)
            assert np.allclose(lhs.c, (1.0 if J == I else 0.0) * vol.c), (I, J)
        p = len(I)
        assert np.array_equal(hodge_star(star).c, (-1) ** (p * (m - p)) * blade(m, I).c)


@pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
def test_contract_exhaustive(m):
    for I in basis(m):
        for J in basis(m):
            if len(J) > len(I):
                continue
            got = contract(blade(m, I), blade(m, J))
            for L in basis(m):
                # <I -| J, L> = <I, J ^ L>
                K, s = brute_wedge(J, L)
                rhs = s if K == I else 0
                assert coeff(got, L) == rhs, (I, J, L)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_bullet_exhaustive(m):
    # brute force Leibniz expansion on basis blades
    def vec_contract(a, j):
        return contract(a, blade(m, (j,))) if a.pure_grade() >= 1 else MultiVector.zeros(m)

    def brute(a, J):
        if len(J) == 1:
            return vec_contract(a, J[0])
        j1, rest = J[0], J[1:]
        s = len(rest)
        return wedge(brute(a, rest), blade(m, (j1,))) * (-1) ** s + wedge(vec_contract(a, j1),
                                                                           blade(m, rest))
    for I in basis(m):
        for J in basis(m):
            if len(J) == 0:
                continue
            got = bullet(blade(m, I), blade(m, J))
            assert np.allclose(got.c, brute(blade(m, I), J).c), (I, J)


def test_examples():
    e1, e2 = MultiVector.vector([1, 0, 0]), MultiVector.vector([0, 1, 0])
    assert (e1 ^ e2).components() == {(0, 1): 1.0}
    a = MultiVector.vector([1.0, 1.0, 0.0])
    b = MultiVector.vector([1.0, -1.0, 0.0])
    assert (a ^ b).components() == {(0, 1): -2.0}
    assert hodge_star(e1 ^ e2).components() == {(2,): 1.0}
    assert hodge_star(blade(4, (0, 1))).components() == {(2, 3): 1.0}
    assert np.array_equal(hodge_star(MultiVector.scalar(5, 1.0)).c, MultiVector.volume(5).c)
    v = rand_mv(np.random.default_rng(0), 4)
    assert np.array_equal(contract(v, MultiVector.scalar(4, 1.0)).c, v.c)


def test_errors():
    with pytest.raises(ValueError):
        wedge(MultiVector.vector([1, 0]), MultiVector.vector([1, 0, 0]))
    with pytest.raises(ValueError):
        hodge_star(MultiVector.scalar(3, 1.0) + MultiVector.vector([1, 0, 0]))
    with pytest.raises(ValueError):
        contract(MultiVector.vector([1, 0, 0]), blade(3, (0, 1)))
    with pytest.raises(ValueError):
        MultiVector(9, np.zeros(512))


def rotation(rng, m):
    q, r = np.linalg.qr(rng.normal(size=(m, m)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.mark.parametrize("m", [3, 4, 5, 6])
def test_normal_identities(m):
    rng = np.random.default_rng(m)
    Q = rotation(rng, m)
    e = [MultiVector.vector(Q[:, i]) for i in range(m)]
    n = hodge_star(e[0] ^ e[1])
    # n = n_1 ^ ... ^ n_{m-2} with n_a = e_{a+2}
    prod = e[2]
    for k in range(3, m):
        prod = prod ^ e[k]
    assert np.allclose(n.c, prod.c, atol=1e-12)
    for i in (0, 1):
        assert np.allclose(contract(n, e[i]).c, 0, atol=1e-12)
    for a in range(m - 2):
        rest = [e[2 + b] for b in range(m - 2) if b != a]
        exp = MultiVector.scalar(m, 1.0)
        for r in rest:
            exp = exp ^ r
        assert np.allclose(contract(n, e[2 + a]).c, (-1) ** a * exp.c, atol=1e-12)
    # pi_n is the orthogonal projection onto the normal space
    for i in range(m):
        got = project_normal(n, e[i]).c
        assert np.allclose(got, e[i].c if i >= 2 else 0, atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 6))
def test_adjunction_random(seed, m):
    rng = np.random.default_rng(seed)
    p = rng.integers(1, m + 1)
    q = rng.integers(0, p + 1)
    a = MultiVector(m, rng.normal(size=(400, 1 << m))).grade(p)
    b = MultiVector(m, rng.normal(size=(400, 1 << m))).grade(q)
    c = MultiVector(m, rng.normal(size=(400, 1 << m))).grade(p - q)
    assert np.max(np.abs(inner(contract(a, b), c) - inner(a, wedge(b, c)))) < 1e-12


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
def test_graded_anticommutative(seed, m):
    rng = np.random.default_rng(seed)
    p, q = rng.integers(0, m + 1, size=2)
    a, b = rand_mv(rng, m, p), rand_mv(rng, m, q)
    assert np.allclose(wedge(a, b).c, (-1) ** (p * q) * wedge(b, a).c, atol=1e-12)
    v = rand_mv(rng, m, 1)
    assert np.allclose(wedge(v, v).c, 0, atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_cross_product_bridge(seed):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, 3))
    got = hodge_star(MultiVector.vector(u) ^ MultiVector.vector(v)).as_vector()
    assert np.allclose(got, cross(u, v), atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_bullet_cross_sign_m3(seed):
    # n . R for a 2-vector R against n x (*R) in R^3
    rng = np.random.default_rng(seed)
    n = rng.normal(size=3)
    r = rng.normal(size=3)
    R = hodge_star(MultiVector.vector(r))
    got = bullet(MultiVector.vector(n), R).as_vector()
    assert np.allclose(got, -np.cross(n, r), atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 5))
def test_grade_projection_idempotent(seed, m):
    rng = np.random.default_rng(seed)
    a = rand_mv(rng, m)
    for p in range(m + 1):
        g = a.grade(p)
        assert np.array_equal(g.grade(p).c, g.c)
    assert a.norm() == pytest.approx(np.sqrt(np.sum(a.c ** 2)))


@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 5))
def test_bullet_agrees_with_contract_on_vectors(seed, m):
    rng = np.random.default_rng(seed)
    a = rand_mv(rng, m, rng.integers(1, m + 1))
    b = rand_mv(rng, m, 1)
    assert np.allclose(bullet(a, b).c, contract(a, b).c, atol=1e-12)
