"""Small dense linear algebra over the rationals.

Matrices are numpy object arrays holding ``fractions.Fraction`` (or ``int``)
entries, so products and sums go through numpy while pivoting stays exact.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def as_fraction_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=object)
    out = np.empty(a.shape, dtype=object)
    for idx, v in np.ndenumerate(a):
        out[idx] = Fraction(v)
    return out


def identity(n: int) -> np.ndarray:
    out = np.empty((n, n), dtype=object)
    out[...] = Fraction(0)
    for i in range(n):
        out[i, i] = Fraction(1)
    return out


def zeros(shape) -> np.ndarray:
    out = np.empty(shape, dtype=object)
    out[...] = Fraction(0)
    return out


def is_exact(a) -> bool:
    return isinstance(a, np.ndarray) and a.dtype == object


def det(a) -> Fraction:
    """Determinant by Gaussian elimination with exact pivots."""
    m = [[Fraction(v) for v in row] for row in np.asarray(a, dtype=object)]
    n = len(m)
    if n == 0:
        return Fraction(1)
    sign = 1
    result = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            sign = -sign
        p = m[col][col]
        result *= p
        for r in range(col + 1, n):
            f = m[r][col]
            if f:
                f = f / p
                row_r, row_c = m[r], m[col]
                for c in range(col + 1, n):
                    row_r[c] -= f * row_c[c]
    return result * sign


def inverse(a) -> np.ndarray:
    """Gauss-Jordan inverse; raises ``ZeroDivisionError`` on singular input."""
    a = np.asarray(a, dtype=object)
    n = a.shape[0]
    m = [[Fraction(v) for v in row] + [Fraction(int(i == j)) for j in range(n)]
         for i, row in enumerate(a)]
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular matrix")
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        m[col] = [v / p for v in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [vr - f * vc for vr, vc in zip(m[r], m[col])]
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            out[i, j] = m[i][n + j]
    return out


def solve(a, b) -> np.ndarray:
    return inverse(a).dot(np.asarray(b, dtype=object))


def det_any(a):
    """Exact determinant for object arrays, LAPACK otherwise."""
    if is_exact(a):
        return det(a)
    return float(np.linalg.det(a))


def inv_any(a):
    if is_exact(a):
        return inverse(a)
    return np.linalg.inv(a)
