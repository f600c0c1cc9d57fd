"""Multivector arithmetic in the exterior algebra of R^m, m <= 8.

Components are stored densely, indexed by bitmask: bit i set means e_{i+1}
is a factor, and every basis blade is written with strictly increasing
indices. A MultiVector may carry leading batch axes, so one object can hold
a field of multivectors over sample points.

Orientation: e_1 ^ ... ^ e_m is the positive volume form. The Hodge star is
fixed by  b ^ *a = <b, a> vol  and interior multiplication by
<a -| b, c> = <a, b ^ c>. Every sign in the Willmore code follows from these
two lines.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

MAX_DIM = 8


def _popcount(x: int) -> int:
    return bin(x).count("1")


def mask_to_indices(mask: int) -> tuple:
    return tuple(i for i in range(MAX_DIM) if mask >> i & 1)


def indices_to_mask(idx) -> int:
    mask = 0
    for i in idx:
        if mask >> i & 1:
            return -1
        mask |= 1 << i
    return mask


def _reorder_sign(a: int, b: int) -> int:
    """Sign of e_A ^ e_B relative to the sorted blade, 0 when they overlap."""
    if a & b:
        return 0
    swaps = 0
    for j in mask_to_indices(b):
        swaps += _popcount(a >> (j + 1))
    return -1 if swaps % 2 else 1


@lru_cache(maxsize=None)
def _wedge_table(m: int):
    n = 1 << m
    ia, ib, ic, sg = [], [], [], []
    for a in range(n):
        for b in range(n):
            s = _reorder_sign(a, b)
            if s:
                ia.append(a); ib.append(b); ic.append(a | b); sg.append(s)
    return tuple(np.array(x) for x in (ia, ib, ic, sg))


@lru_cache(maxsize=None)
def _contract_table(m: int):
    # e_I -| e_J = sign(J, I\J) e_{I\J} for J subset of I
    n = 1 << m
    ia, ib, ic, sg = [], [], [], []
    for a in range(n):
        b = a
        while True:
            rest = a & ~b
            ia.append(a); ib.append(b); ic.append(rest); sg.append(_reorder_sign(b, rest))
            if b == 0:
                break
            b = (b - 1) & a
    return tuple(np.array(x) for x in (ia, ib, ic, sg))


@lru_cache(maxsize=None)
def _hodge_table(m: int):
    n = 1 << m
    full = n - 1
    target = np.array([full & ~a for a in range(n)])
    sign = np.array([_reorder_sign(a, full & ~a) for a in range(n)], dtype=float)
    return target, sign


@lru_cache(maxsize=None)
def _grades(m: int) -> np.ndarray:
    return np.array([_popcount(a) for a in range(1 << m)])


class MultiVector:
    __slots__ = ("m", "c")

    def __init__(self, m: int, components):
        if not 1 <= m <= MAX_DIM:
            raise ValueError(f"ambient dimension must be in [1, {MAX_DIM}]")
        c = np.asarray(components, dtype=float)
        if c.shape[-1] != 1 << m:
            raise ValueError(f"expected {1 << m} components, got {c.shape[-1]}")
        self.m = m
        self.c = c

    # constructors
    @classmethod
    def zeros(cls, m: int, batch=()):
        return cls(m, np.zeros(tuple(batch) + (1 << m,)))

    @classmethod
    def scalar(cls, m: int, s):
        s = np.asarray(s, dtype=float)
        c = np.zeros(s.shape + (1 << m,))
        c[..., 0] = s
        return cls(m, c)

    @classmethod
    def vector(cls, v):
        v = np.asarray(v, dtype=float)
        m = v.shape[-1]
        c = np.zeros(v.shape[:-1] + (1 << m,))
        for i in range(m):
            c[..., 1 << i] = v[..., i]
        return cls(m, c)

    @classmethod
    def blade(cls, m: int, indices, coeff: float = 1.0):
        """coeff * e_{i1} ^ ... ^ e_{ik}, zero-based indices in any order."""
        mv = cls.zeros(m)
        mask = indices_to_mask(indices)
        if mask < 0:
            return mv
        # sort the indices, tracking the permutation sign
        idx = list(indices)
        sign = 1
        for i in range(len(idx)):
            for j in range(len(idx) - 1 - i):
                if idx[j] > idx[j + 1]:
                    idx[j], idx[j + 1] = idx[j + 1], idx[j]
                    sign = -sign
        mv.c[mask] = sign * coeff
        return mv

    @classmethod
    def volume(cls, m: int):
        return cls.blade(m, range(m))

    # structure
    @property
    def batch_shape(self):
        return self.c.shape[:-1]

    def grades_present(self, tol: float = 0.0) -> set:
        g = _grades(self.m)
        nz = np.abs(self.c.reshape(-1, 1 << self.m)).max(axis=0) > tol
        return set(int(x) for x in np.unique(g[nz]))

    def grade(self, p: int) -> "MultiVector":
        keep = _grades(self.m) == p
        return MultiVector(self.m, self.c * keep)

    def pure_grade(self) -> int:
        gs = self.grades_present()
        if len(gs) > 1:
            raise ValueError("mixed-grade multivector")
        return gs.pop() if gs else 0

    def as_vector(self) -> np.ndarray:
        return np.stack([self.c[..., 1 << i] for i in range(self.m)], axis=-1)

    def components(self) -> dict:
        """{sorted index tuple: coefficient} for non-batched multivectors."""
        if self.c.ndim != 1:
            raise ValueError("components() is for a single multivector")
        return {mask_to_indices(a): float(self.c[a]) for a in range(1 << self.m) if self.c[a] != 0}

    def norm(self):
        return np.sqrt(np.sum(self.c ** 2, axis=-1))

    def __getitem__(self, item):
        return MultiVector(self.m, self.c[item])

    # arithmetic
    def _check(self, other):
        if not isinstance(other, MultiVector):
            raise TypeError("expected MultiVector")
        if other.m != self.m:
            raise ValueError(f"dimension mismatch: {self.m} vs {other.m}")

    def __add__(self, other):
        self._check(other)
        return MultiVector(self.m, self.c + other.c)

    def __sub__(self, other):
        self._check(other)
        return MultiVector(self.m, self.c - other.c)

    def __neg__(self):
        return MultiVector(self.m, -self.c)

    def __mul__(self, s):
        s = np.asarray(s, dtype=float)
        return MultiVector(self.m, self.c * s[..., None])

    __rmul__ = __mul__

    def __xor__(self, other):
        return wedge(self, other)

    def __repr__(self):
        if self.c.ndim == 1:
            terms = " + ".join(f"{v:g}*e{''.join(str(i + 1) for i in k) or '0'}"
                               for k, v in self.components().items())
            return f"MultiVector(m={self.m}, {terms or '0'})"
        return f"MultiVector(m={self.m}, batch={self.batch_shape})"


def _bilinear(a: MultiVector, b: MultiVector, table) -> MultiVector:
    a._check(b)
    ia, ib, ic, sg = table
    shape = np.broadcast_shapes(a.batch_shape, b.batch_shape)
    out = np.zeros(shape + (1 << a.m,))
    # skip terms whose factors are identically zero
    za = np.any(a.c.reshape(-1, 1 << a.m) != 0, axis=0)
    zb = np.any(b.c.reshape(-1, 1 << a.m) != 0, axis=0)
    live = za[ia] & zb[ib]
    for i, j, k, s in zip(ia[live], ib[live], ic[live], sg[live]):
        out[..., k] += s * a.c[..., i] * b.c[..., j]
    return MultiVector(a.m, out)


def wedge(a: MultiVector, b: MultiVector) -> MultiVector:
    return _bilinear(a, b, _wedge_table(a.m))


def contract(a: MultiVector, b: MultiVector) -> MultiVector:
    """Interior multiplication a -| b, adjoint to b ^ . : <a -| b, c> = <a, b ^ c>."""
    a._check(b)
    ga, gb = a.grades_present(), b.grades_present()
    if len(ga) == 1 and len(gb) == 1 and next(iter(gb)) > next(iter(ga)):
        raise ValueError("contraction needs grade(b) <= grade(a)")
    return _bilinear(a, b, _contract_table(a.m))


def hodge_star(a: MultiVector) -> MultiVector:
    a.pure_grade()
    target, sign = _hodge_table(a.m)
    out = np.zeros_like(a.c)
    out[..., target] = a.c * sign
    return MultiVector(a.m, out)


def inner(a: MultiVector, b: MultiVector):
    a._check(b)
    return np.sum(a.c * b.c, axis=-1)


@lru_cache(maxsize=None)
def _wedge_right_matrix(m: int, mask: int) -> np.ndarray:
    n = 1 << m
    W = np.zeros((n, n))
    for a in range(n):
        s = _reorder_sign(a, mask)
        if s:
            W[a | mask, a] = s
    return W


@lru_cache(maxsize=None)
def _contract_matrix(m: int, j: int) -> np.ndarray:
    """Matrix of a -> a -| e_j."""
    n = 1 << m
    bit = 1 << j
    C = np.zeros((n, n))
    for a in range(n):
        if a & bit:
            C[a & ~bit, a] = _reorder_sign(bit, a & ~bit)
    return C


@lru_cache(maxsize=None)
def _bullet_matrix(m: int, mask: int) -> np.ndarray:
    """Matrix of a -> a . e_J, built from the Leibniz rule on e_J = e_j1 ^ e_J'."""
    idx = mask_to_indices(mask)
    if len(idx) == 0:
        raise ValueError("bullet with a scalar is undefined")
    if len(idx) == 1:
        return _contract_matrix(m, idx[0])
    j1, rest = idx[0], mask & ~(1 << idx[0])
    s = len(idx) - 1
    return (_wedge_right_matrix(m, rest) @ _contract_matrix(m, j1)
            + (-1) ** s * _wedge_right_matrix(m, 1 << j1) @ _bullet_matrix(m, rest))


def bullet(a: MultiVector, b: MultiVector) -> MultiVector:
    a._check(b)
    n = 1 << a.m
    shape = np.broadcast_shapes(a.batch_shape, b.batch_shape)
    out = np.zeros(shape + (n,))
    zb = np.any(b.c.reshape(-1, n) != 0, axis=0)
    if zb[0]:
        raise ValueError("bullet needs b without scalar part")
    for mask in np.flatnonzero(zb):
        T = _bullet_matrix(a.m, int(mask))
        out += b.c[..., mask, None] * (a.c @ T.T)
    return MultiVector(a.m, out)


def cross(u, v):
    return np.cross(u, v)


def project_normal(n: MultiVector, w: MultiVector) -> MultiVector:
    """pi_n(w) = (-1)^(m-1) n -| (n -| w) for a unit normal (m-2)-vector n."""
    return (-1) ** (n.m - 1) * contract(n, contract(n, w))
