"""Fundamental representations of A_n as exterior powers.

The j-th fundamental representation is realised on the j-th exterior power
of the defining representation C^{n+1}.  Basis vectors are the j-element
subsets of {1..n+1} in lexicographic order, each standing for the wedge
product of the corresponding defining basis vectors in increasing order.
The highest vector is therefore {1..j}, the first basis element.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from . import exact
from .cartan import CartanData, GradingVector, RedBlock, grading_coefficients


class InvalidRepresentationError(ValueError):
    pass


class InvalidRootError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    pass


def elementary(N: int, a: int, b: int, dtype=np.int64) -> np.ndarray:
    """E_{ab} in the defining representation, 1-based indices."""
    out = np.zeros((N, N), dtype=dtype)
    out[a - 1, b - 1] = 1
    return out


def _sort_sign(seq):
    """Sign of the permutation sorting ``seq`` (distinct entries)."""
    sign = 1
    seq = list(seq)
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def wedge_basis(n: int, j: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.combinations(range(1, n + 2), j))


def wedge_derivation(Z: np.ndarray, basis, index) -> np.ndarray:
    """Matrix of the Leibniz action of a defining-rep matrix on a wedge basis."""
    dim = len(basis)
    out = np.zeros((dim, dim), dtype=Z.dtype)
    nz = [(a + 1, b + 1, Z[a, b]) for a, b in zip(*np.nonzero(Z))]
    for col, subset in enumerate(basis):
        members = set(subset)
        for pos, b in enumerate(subset):
            for a, bb, v in nz:
                if bb != b:
                    continue
                if a != b and a in members:
                    continue
                new = list(subset)
                new[pos] = a
                out[index[tuple(sorted(new))], col] += _sort_sign(new) * v
    return out


@dataclass(frozen=True, eq=False)
class FundamentalRep:
    n: int
    j: int
    basis: tuple[tuple[int, ...], ...] = field(repr=False)
    index: dict = field(repr=False)
    xplus: tuple[np.ndarray, ...] = field(repr=False)
    xminus: tuple[np.ndarray, ...] = field(repr=False)
    h: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.basis)

    def Xp(self, i: int) -> np.ndarray:
        return self.xplus[i - 1]

    def Xm(self, i: int) -> np.ndarray:
        return self.xminus[i - 1]

    def H(self, i: int) -> np.ndarray:
        return self.h[i - 1]

    def generator(self, kind: str, i: int) -> np.ndarray:
        return {"+": self.Xp, "-": self.Xm, "h": self.H}[kind](i)

    def highest_vector(self) -> np.ndarray:
        return self.basis_vector(tuple(range(1, self.j + 1)))

    def basis_vector(self, subset) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.int64)
        v[self.index[tuple(subset)]] = 1
        return v

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=np.int64)

    def represent(self, Z: np.ndarray) -> np.ndarray:
        """Image of an arbitrary defining-rep algebra element."""
        return wedge_derivation(np.asarray(Z), self.basis, self.index)

    def decode(self, v) -> tuple[int, tuple[int, ...]]:
        """Write ``v`` as ``sign * basis_vector(subset)``."""
        nz = np.nonzero(np.asarray(v))[0]
        if len(nz) != 1 or abs(v[nz[0]]) != 1:
            raise ConsistencyError("vector is not a signed basis vector")
        return int(np.sign(v[nz[0]])), self.basis[nz[0]]


_CACHE: dict[tuple[int, int], FundamentalRep] = {}
_CACHE_LOCK = threading.Lock()


def _build(n: int, j: int) -> FundamentalRep:
    N = n + 1
    basis = wedge_basis(n, j)
    index = {s: k for k, s in enumerate(basis)}
    xp, xm, hh = [], [], []
    for i in range(1, n + 1):
        Ep = elementary(N, i, i + 1)
        Em = elementary(N, i + 1, i)
        Hi = elementary(N, i, i) - elementary(N, i + 1, i + 1)
        for store, Z in ((xp, Ep), (xm, Em), (hh, Hi)):
            mat = wedge_derivation(Z, basis, index)
            mat.setflags(write=False)
            store.append(mat)
    return FundamentalRep(n, j, basis, index, tuple(xp), tuple(xm), tuple(hh))


def build_fundamental_rep(n: int, j: int) -> FundamentalRep:
    """The j-th fundamental representation of A_n (cached per session)."""
    if n < 1 or not 1 <= j <= n:
        raise InvalidRepresentationError(f"need 1 <= j <= n, got n={n}, j={j}")
    key = (int(n), int(j))
    rep = _CACHE.get(key)
    if rep is None:
        with _CACHE_LOCK:
            rep = _CACHE.get(key)
            if rep is None:
                rep = _build(*key)
                _CACHE[key] = rep
    return rep


def defining_rep(n: int) -> FundamentalRep:
    return build_fundamental_rep(n, 1)


def commutator(a, b):
    return a @ b - b @ a


def chevalley_violations(rep: FundamentalRep, cd: CartanData) -> list[str]:
    """Every failed defining relation, checked in integer arithmetic."""
    bad = []
    n = rep.n
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if np.any(commutator(rep.H(i), rep.H(j))):
                bad.append(f"[h{i},h{j}]")
            kji = cd.entry(j, i)
            if not np.array_equal(commutator(rep.H(i), rep.Xp(j)), kji * rep.Xp(j)):
                bad.append(f"[h{i},X+{j}]")
            if not np.array_equal(commutator(rep.H(i), rep.Xm(j)), -kji * rep.Xm(j)):
                bad.append(f"[h{i},X-{j}]")
            expect = rep.H(j) if i == j else np.zeros_like(rep.H(j))
            if not np.array_equal(commutator(rep.Xp(i), rep.Xm(j)), expect):
                bad.append(f"[X+{i},X-{j}]")
    v = rep.highest_vector()
    for i in range(1, n + 1):
        if np.any(rep.Xp(i) @ v):
            bad.append(f"X+{i}|hw>")
        if not np.array_equal(rep.H(i) @ v, (1 if i == rep.j else 0) * v):
            bad.append(f"h{i}|hw>")
    return bad


def grading_operator(rep: FundamentalRep, cd: CartanData, c: GradingVector) -> np.ndarray:
    """H = sum_i (K^{-1}c)_i h_i as an exact rational matrix."""
    w = grading_coefficients(cd, c)
    H = exact.zeros((rep.dim, rep.dim))
    for i, wi in enumerate(w, start=1):
        if wi:
            H = H + wi * rep.H(i).astype(object)
    return H


@dataclass(frozen=True)
class CompositeRoot:
    """Root spanned by consecutive simple roots ``first .. last``.

    ``last == first - 1`` denotes the identity element, ``last == first``
    the simple generator itself.
    """

    first: int
    last: int
    sign: str = "+"

    def __post_init__(self):
        if self.sign not in "+-" or len(self.sign) != 1:
            raise InvalidRootError(f"sign must be '+' or '-', got {self.sign!r}")
        if self.first > self.last + 1:
            raise InvalidRootError(f"invalid composite root ({self.first},{self.last})")

    @property
    def is_identity(self) -> bool:
        return self.last == self.first - 1


def composite_root_generator(rep: FundamentalRep, root: CompositeRoot) -> np.ndarray:
    """Right-nested commutator [X_i,[X_{i+1},[...,X_j]]] (transposed for '-')."""
    i, j = root.first, root.last
    if root.is_identity:
        return rep.identity()
    if i < 1 or j > rep.n:
        raise InvalidRootError(f"root ({i},{j}) outside 1..{rep.n}")
    acc = rep.Xp(j)
    for k in range(j - 1, i - 1, -1):
        acc = commutator(rep.Xp(k), acc)
    return acc if root.sign == "+" else acc.T.copy()


def nested_generator(rep: FundamentalRep, roots) -> np.ndarray | None:
    """Right-nested commutator of several composite roots.

    Identity factors drop out of the nesting; if every factor is the
    identity the result is ``None`` (no generator).
    """
    mats = [composite_root_generator(rep, r) for r in roots if not r.is_identity]
    if not mats:
        return None
    acc = mats[-1]
    for mat in reversed(mats[:-1]):
        acc = commutator(mat, acc)
    return acc


def red_basis(rep: FundamentalRep, block: RedBlock, kind: str = "first") -> list[np.ndarray]:
    """Lowering chain through a red block.

    ``first``: |m>, X-_m|m>, X-_{m+1}X-_m|m>, ... in the m-th representation.
    ``last``:  |mbar>, X-_mbar|mbar>, X-_{mbar-1}X-_mbar|mbar>, ... in the
    mbar-th representation.  Both return R+1 integer vectors.
    """
    m, R = block.m, block.R
    if kind == "first":
        if rep.j != m:
            raise InvalidRepresentationError(f"first basis of block at {m} lives in rep {m}, got {rep.j}")
        order = range(m, m + R)
    elif kind == "last":
        if rep.j != block.mbar:
            raise InvalidRepresentationError(f"last basis lives in rep {block.mbar}, got {rep.j}")
        order = range(block.mbar, m - 1, -1)
    else:
        raise ValueError(f"kind must be 'first' or 'last', got {kind!r}")
    vecs = [rep.highest_vector()]
    for i in order:
        vecs.append(rep.Xm(i) @ vecs[-1])
    gram = np.array([[int(a @ b) for b in vecs] for a in vecs])
    if not np.array_equal(gram, np.eye(len(vecs), dtype=gram.dtype)):
        raise ConsistencyError(f"red basis of block (m={m}, R={R}) is not orthonormal")
    return vecs


def vector_weight(rep: FundamentalRep, v) -> tuple[int, ...]:
    """Eigenvalues of h_1..h_n on a weight vector."""
    v = np.asarray(v)
    k = int(np.flatnonzero(v)[0])
    out = []
    for i in range(1, rep.n + 1):
        hv = rep.H(i) @ v
        lam = Fraction(int(hv[k]), int(v[k]))
        if np.any(hv * v[k] != lam.numerator * v * v[k] // lam.denominator):
            raise ConsistencyError("not a weight vector")
        out.append(int(lam))
    return tuple(out)


def compound(G: np.ndarray, j: int) -> np.ndarray:
    """Image of a defining-rep group element in the j-th exterior power.

    Entry (I, J) is the minor of ``G`` on rows I and columns J; works for
    float and exact (object) matrices alike.
    """
    N = G.shape[0]
    basis = list(itertools.combinations(range(N), j))
    dim = len(basis)
    if exact.is_exact(G):
        out = exact.zeros((dim, dim))
        for a, I in enumerate(basis):
            for b, J in enumerate(basis):
                out[a, b] = exact.det(G[np.ix_(I, J)])
        return out
    idx = np.array(basis)
    sub = G[idx[:, None, :, None], idx[None, :, None, :]]
    return np.linalg.det(sub)


def rep_dimension(n: int, j: int) -> int:
    return comb(n + 1, j)
