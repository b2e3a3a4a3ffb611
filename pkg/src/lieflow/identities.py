"""Group elements, their matrix elements and the Jacobi-type identities.

A group element is stored through its defining-representation matrix.  In
the j-th fundamental representation the entry between wedge basis vectors
I and J is the minor of that matrix on rows I and columns J, so matrix
elements between sparse vectors are evaluated as short sums of minors and
the full compound matrices are only built on request.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import exact
from .cartan import CartanData, RedBlock, cartan_matrix
from .representations import (
    FundamentalRep,
    build_fundamental_rep,
    compound,
    elementary,
    red_basis,
    vector_weight,
)


class SingularElementError(ArithmeticError):
    pass


class NotHighestFunctionError(ValueError):
    pass


class InvalidBasisError(ValueError):
    pass


@dataclass(eq=False)
class GroupElement:
    """An element of SL(n+1) (or GL(n+1)) held in the defining representation.

    ``factors`` records how the element was produced: ``("exp", kind, i, t)``
    for exp(t X) with X one of X+_i, X-_i, h_i, or ``("matrix", label)``.
    """

    n: int
    matrix: np.ndarray = field(repr=False)
    factors: tuple = ()
    _reps: dict = field(default_factory=dict, repr=False)

    @property
    def is_exact(self) -> bool:
        return exact.is_exact(self.matrix)

    @classmethod
    def identity(cls, n: int, exact_mode: bool = False) -> "GroupElement":
        N = n + 1
        mat = exact.identity(N) if exact_mode else np.eye(N)
        return cls(n, mat, ())

    @classmethod
    def from_matrix(cls, mat, label: str = "matrix") -> "GroupElement":
        mat = np.asarray(mat)
        return cls(mat.shape[0] - 1, mat, (("matrix", label),))

    @classmethod
    def from_factors(cls, n: int, factors, exact_mode: bool = False) -> "GroupElement":
        g = cls.identity(n, exact_mode)
        for kind, i, t in factors:
            g = g.times_exp(kind, i, t)
        return g

    def times_exp(self, kind: str, i: int, t, left: bool = False) -> "GroupElement":
        """G exp(tX) (or exp(tX) G with ``left``) for a single Chevalley generator."""
        mat = self.matrix.copy()
        a, b = i - 1, i
        if kind in "+-":
            if kind == "-":
                a, b = b, a
            # exp(t E_ab) = 1 + t E_ab since E_ab squares to zero
            if left:
                mat[a, :] = mat[a, :] + t * mat[b, :]
            else:
                mat[:, b] = mat[:, b] + t * mat[:, a]
        elif kind == "h":
            if self.is_exact:
                raise ValueError("Cartan exponentials are not rational")
            e = np.exp(t)
            if left:
                mat[a, :] *= e
                mat[b, :] /= e
            else:
                mat[:, a] *= e
                mat[:, b] /= e
        else:
            raise ValueError(f"unknown generator kind {kind!r}")
        fac = ("exp", kind, int(i), t)
        factors = (fac,) + self.factors if left else self.factors + (fac,)
        return GroupElement(self.n, mat, factors)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.n, self.matrix.dot(other.matrix), self.factors + other.factors)

    def transpose(self) -> "GroupElement":
        return GroupElement(self.n, self.matrix.T.copy(), (("matrix", "transpose"),))

    def in_rep(self, j: int) -> np.ndarray:
        """Full matrix in the j-th fundamental representation."""
        if j not in self._reps:
            self._reps[j] = compound(self.matrix, j)
        return self._reps[j]

    def minor(self, rows, cols):
        """Minor on 1-based index sets; the empty minor is 1."""
        if len(rows) != len(cols):
            raise ValueError("minor needs equally many rows and columns")
        if not rows:
            return Fraction(1) if self.is_exact else 1.0
        sub = self.matrix[np.ix_([r - 1 for r in rows], [c - 1 for c in cols])]
        return exact.det_any(sub)

    def hw(self, j: int):
        """<j|G|j>, with the boundary convention <0> = 1 and <n+1> = det G."""
        if j < 0 or j > self.n + 1:
            raise ValueError(f"highest-vector index {j} outside 0..{self.n + 1}")
        idx = tuple(range(1, j + 1))
        return self.minor(idx, idx)


def matrix_element(G: GroupElement, bra, ket, rep: FundamentalRep):
    """bra^T G_rep ket, summed over the nonzero coordinates of bra and ket."""
    bra = np.asarray(bra)
    ket = np.asarray(ket)
    if bra.shape != (rep.dim,) or ket.shape != (rep.dim,):
        raise ValueError(f"vectors must have length {rep.dim}")
    if G.n != rep.n:
        raise ValueError(f"group element of A_{G.n} used with a rep of A_{rep.n}")
    total = Fraction(0) if G.is_exact else 0.0
    for a in np.flatnonzero(bra):
        for b in np.flatnonzero(ket):
            ca, cb = bra[a], ket[b]
            if G.is_exact:
                ca, cb = Fraction(int(ca)) if isinstance(ca, np.integer) else ca, cb
            total += ca * cb * G.minor(rep.basis[a], rep.basis[b])
    return total


def shifted_element(G: GroupElement, j: int, left=(), right=()):
    """<j| L_1 L_2 ... G ... R_1 R_2 |j> with generators given as (kind, i).

    ``left`` generators act on the bra side in the written order, ``right``
    generators on the ket side.
    """
    rep = build_fundamental_rep(G.n, j)
    hv = rep.highest_vector()
    bra = hv
    for kind, i in left:
        bra = rep.generator(kind, i).T @ bra
    ket = hv
    for kind, i in reversed(right):
        ket = rep.generator(kind, i) @ ket
    return matrix_element(G, bra, ket, rep)


@dataclass(frozen=True)
class RegularShift:
    """Left or right translation of a group element by exp(tZ)."""

    side: str
    kind: str
    index: int

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")

    def generator(self, n: int) -> np.ndarray:
        N = n + 1
        i = self.index
        if self.kind == "+":
            return elementary(N, i, i + 1)
        if self.kind == "-":
            return elementary(N, i + 1, i)
        return elementary(N, i, i) - elementary(N, i + 1, i + 1)

    def apply(self, G: GroupElement, t) -> GroupElement:
        return G.times_exp(self.kind, self.index, t, left=self.side == "left")

    def derivative(self, F: Callable, G: GroupElement, step: float = 1e-5) -> float:
        """Central-difference derivative of F along the shift at t = 0."""
        return (F(self.apply(G, step)) - F(self.apply(G, -step))) / (2 * step)


def _cartan(n: int) -> CartanData:
    return cartan_matrix(n)


def _nonzero(v, what: str):
    if v == 0:
        raise SingularElementError(f"{what} vanishes")
    return v


def first_jacobi_terms(G: GroupElement, j: int):
    """(sdet, product of highest elements, natural scale of the sdet terms)."""
    n = G.n
    cd = _cartan(n)
    a = shifted_element(G, j, left=[("+", j)], right=[("-", j)])
    b = shifted_element(G, j, left=[("+", j)])
    c = shifted_element(G, j, right=[("-", j)])
    d = _nonzero(G.hw(j), f"<{j}|G|{j}>")
    sdet = (a * d - b * c) / (d * d)
    rhs = Fraction(1) if G.is_exact else 1.0
    for i in range(1, n + 1):
        k = cd.entry(j, i)
        if k:
            rhs = rhs * _nonzero(G.hw(i), f"<{i}|G|{i}>") ** (-k)
    scale = (abs(a * d) + abs(b * c)) / (d * d)
    return sdet, rhs, scale


def check_first_jacobi(G: GroupElement, j: int):
    """sdet of the shifted 2x2 block minus the product of highest elements.

    The bosonic superdeterminant of [[a, b], [c, d]] with scalar entries is
    (ad - bc) / d**2.
    """
    sdet, rhs, _ = first_jacobi_terms(G, j)
    return sdet - rhs


def second_jacobi_terms(G: GroupElement, i: int, j: int):
    """The three terms of the second identity; they sum to zero."""
    n = G.n
    cd = _cartan(n)
    kij, kji = cd.entry(i, j), cd.entry(j, i)
    if i == j or kij == 0:
        raise ValueError(f"roots {i} and {j} must be distinct neighbours")
    gj = _nonzero(G.hw(j), f"<{j}|G|{j}>")
    gi = _nonzero(G.hw(i), f"<{i}|G|{i}>")
    jji = shifted_element(G, j, left=[("+", j), ("+", i)])
    iij = shifted_element(G, i, left=[("+", i), ("+", j)])
    jj = shifted_element(G, j, left=[("+", j)])
    ii = shifted_element(G, i, left=[("+", i)])
    return kij * jji / gj, kji * iij / gi, kij * kji * (jj / gj) * (ii / gi)


def check_second_jacobi(G: GroupElement, i: int, j: int):
    t1, t2, t3 = second_jacobi_terms(G, i, j)
    return t1 + t2 + t3


def highest_product(G: GroupElement, weights) -> float | Fraction:
    """prod_i <i|G|i>^{l_i}; ``weights`` maps i (0..n+1) to the exponent."""
    items = weights.items() if isinstance(weights, dict) else enumerate(weights, start=1)
    out = Fraction(1) if G.is_exact else 1.0
    for i, l in items:
        if l:
            out = out * _nonzero(G.hw(i), f"<{i}|G|{i}>") ** int(l)
    return out


def is_highest_function(F: Callable, G: GroupElement, weights, tol: float = 1e-8) -> bool:
    """Left X- and right X+ translations leave F unchanged; Cartan ones scale it.

    In exact mode the translations are taken at finite rational parameters,
    which is stronger than a first-order check.
    """
    n = G.n
    base = F(G)
    ts = (Fraction(1, 3), Fraction(-2)) if G.is_exact else (0.3, -0.7)
    for i in range(1, n + 1):
        for side, kind in (("left", "-"), ("right", "+")):
            shift = RegularShift(side, kind, i)
            for t in ts:
                diff = F(shift.apply(G, t)) - base
                if G.is_exact:
                    if diff != 0:
                        return False
                elif abs(diff) > tol * max(1.0, abs(base)):
                    return False
    return True


def highest_weight_factorization(F: Callable, weights, n: int, exact_mode: bool = False,
                                 probe: GroupElement | None = None,
                                 reference: GroupElement | None = None,
                                 tol: float = 1e-8):
    """Constant C with F(G) = C prod_i <i|G|i>^{l_i}.

    C is read off at the identity.  When F vanishes identically there (the
    closed form then hides a further factor) a ``reference`` element can be
    supplied instead.  ``probe`` is used to test the highest-function
    property before calibrating.
    """
    if probe is not None and not is_highest_function(F, probe, weights, tol):
        raise NotHighestFunctionError("candidate is not annihilated by the lowering/raising shifts")
    ref = reference if reference is not None else GroupElement.identity(n, exact_mode)
    value = F(ref)
    norm = highest_product(ref, weights)
    return value / norm


def lowering_depth(subset) -> int:
    """Number of lowering generators needed to reach a wedge basis vector."""
    return sum(subset) - sum(range(1, len(subset) + 1))


def validate_basis(rep: FundamentalRep, vectors) -> list:
    """Check the lowering order and that every prefix is closed under X+."""
    vecs = [np.asarray(v) for v in vectors]
    if not vecs or not np.array_equal(vecs[0], rep.highest_vector()):
        raise InvalidBasisError("basis must start at the highest vector")
    depths = []
    for v in vecs:
        try:
            _, subset = rep.decode(v)
        except Exception as err:
            raise InvalidBasisError("basis vectors must be signed wedge basis vectors") from err
        depths.append(lowering_depth(subset))
    if any(b < a for a, b in zip(depths, depths[1:])):
        raise InvalidBasisError("basis not ordered by increasing number of lowering generators")
    for k, v in enumerate(vecs):
        span = vecs[:k]
        for i in range(1, rep.n + 1):
            w = rep.Xp(i) @ v
            for u in span:
                w = w - (u @ w) * u
            if np.any(w):
                raise InvalidBasisError(f"prefix of length {k + 1} not closed under X+_{i}")
    return depths


def generalized_jacobi_minor(G: GroupElement, rep: FundamentalRep, s: int, basis) -> tuple:
    """Leading s x s minor of <a|G|a'> over ``basis`` and its closed form.

    The closed form is C prod_i <i|G|i>^{l_i} with l the summed weights of
    the first s basis vectors and C fixed at the identity.
    """
    vecs = [np.asarray(v) for v in basis]
    if not 1 <= s <= len(vecs):
        raise ValueError(f"prefix size {s} outside 1..{len(vecs)}")
    validate_basis(rep, vecs[:s])
    prefix = vecs[:s]
    weights = np.sum([vector_weight(rep, v) for v in prefix], axis=0)
    wmap = {i: int(w) for i, w in enumerate(weights, start=1)}

    def minor(g):
        mat = np.empty((s, s), dtype=object if g.is_exact else float)
        for a, u in enumerate(prefix):
            for b, v in enumerate(prefix):
                mat[a, b] = matrix_element(g, u, v, rep)
        return exact.det_any(mat)

    C = highest_weight_factorization(minor, wmap, rep.n, G.is_exact)
    return minor(G), C * highest_product(G, wmap)


def block_bases(n: int, block: RedBlock) -> list[tuple[FundamentalRep, list]]:
    """SV1 and SV2 bases of a red block with their representations."""
    rep_first = build_fundamental_rep(n, block.m)
    rep_last = build_fundamental_rep(n, block.mbar)
    return [
        (rep_first, red_basis(rep_first, block, "first")),
        (rep_last, red_basis(rep_last, block, "last")),
    ]


# ---------------------------------------------------------------- sampling

def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` of a seeded run."""
    return np.random.default_rng([int(seed), int(index)])


def _rational(rng: np.random.Generator, qmax: int = 6) -> Fraction:
    q = int(rng.integers(1, qmax + 1))
    p = int(rng.integers(-q, q + 1))
    return Fraction(p, q)


def _regular(G: GroupElement, floor: float) -> bool:
    for i in range(1, G.n + 1):
        v = G.hw(i)
        if v == 0 or (not G.is_exact and abs(v) < floor):
            return False
    return True


def random_group_element(n: int, rng: np.random.Generator, exact_mode: bool = False,
                         length: int | None = None, floor: float = 1e-3) -> GroupElement:
    """Product of ``2n`` single-generator exponentials with coefficients in [-1, 1].

    Exact mode draws only X+/X- factors with small rational coefficients.
    Samples with a (nearly) vanishing highest element are redrawn.
    """
    length = 2 * n if length is None else length
    kinds = ("+", "-") if exact_mode else ("+", "-", "h")
    while True:
        factors = []
        for _ in range(length):
            kind = kinds[int(rng.integers(len(kinds)))]
            i = int(rng.integers(1, n + 1))
            t = _rational(rng) if exact_mode else float(rng.uniform(-1.0, 1.0))
            factors.append((kind, i, t))
        G = GroupElement.from_factors(n, factors, exact_mode)
        if _regular(G, floor):
            return G


def random_unipotent(n: int, rng: np.random.Generator, exact_mode: bool = False,
                     scale: float = 1.0, floor: float = 1e-3) -> GroupElement:
    """K = U L with U (L) upper (lower) unitriangular, entries drawn in [-scale, scale]."""
    N = n + 1
    while True:
        if exact_mode:
            U, L = exact.identity(N), exact.identity(N)
            for a in range(N):
                for b in range(a + 1, N):
                    U[a, b] = _rational(rng)
                    L[b, a] = _rational(rng)
        else:
            U = np.eye(N) + np.triu(rng.uniform(-scale, scale, (N, N)), 1)
            L = np.eye(N) + np.tril(rng.uniform(-scale, scale, (N, N)), -1)
        G = GroupElement(n, U.dot(L), (("matrix", "upper"), ("matrix", "lower")))
        if _regular(G, floor):
            return G
