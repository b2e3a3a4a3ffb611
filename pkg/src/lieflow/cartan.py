"""Cartan data of A_n and 0/1 gradings.

Roots are numbered from 1 as in the usual Dynkin labelling; conversion to
0-based positions happens only when indexing arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import exact


class InvalidRankError(ValueError):
    pass


class GradingError(ValueError):
    pass


@dataclass(frozen=True)
class CartanData:
    n: int
    K: np.ndarray = field(repr=False, compare=False)
    Kinv: np.ndarray = field(repr=False, compare=False)

    @property
    def rank(self) -> int:
        return self.n

    def entry(self, i: int, j: int) -> int:
        """Cartan matrix element K_{ij}, 1-based."""
        return int(self.K[i - 1, j - 1])


def cartan_matrix(n: int) -> CartanData:
    """Cartan matrix of A_n together with its exact inverse."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidRankError(f"rank must be a positive integer, got {n!r}")
    n = int(n)
    K = 2 * np.eye(n, dtype=np.int64) - np.eye(n, k=1, dtype=np.int64) - np.eye(n, k=-1, dtype=np.int64)
    Kinv = exact.inverse(K.astype(object))
    K.setflags(write=False)
    Kinv.setflags(write=False)
    return CartanData(n, K, Kinv)


@dataclass(frozen=True)
class GradingVector:
    c: tuple[int, ...]

    def __post_init__(self):
        c = tuple(int(v) for v in self.c)
        if not c:
            raise GradingError("empty grading vector")
        if any(v not in (0, 1) for v in c):
            raise GradingError(f"grading entries must be 0 or 1, got {list(self.c)}")
        if not any(c):
            raise GradingError("grading vector needs at least one black root (entry 1)")
        object.__setattr__(self, "c", c)

    def __len__(self):
        return len(self.c)

    def __getitem__(self, i):
        return self.c[i]

    @classmethod
    def parse(cls, text: str) -> "GradingVector":
        """Parse ``"0,0,1,0,1"``."""
        parts = [p.strip() for p in str(text).split(",")]
        try:
            values = [int(p) for p in parts]
        except ValueError as err:
            raise GradingError(f"malformed grading string {text!r}") from err
        return cls(tuple(values))

    def __str__(self):
        return ",".join(str(v) for v in self.c)


def grading_coefficients(cd: CartanData, c: GradingVector) -> list[Fraction]:
    """Coefficients w = K^{-1} c of the grading operator H = sum_i w_i h_i."""
    if len(c) != cd.rank:
        raise GradingError(f"grading has length {len(c)}, rank is {cd.rank}")
    w = cd.Kinv.dot(np.array(c.c, dtype=object))
    return [Fraction(v) for v in w]


@dataclass(frozen=True)
class RedBlock:
    """A maximal run of red (c_i = 0) simple roots: m, m+1, ..., m+R-1."""

    m: int
    R: int

    @property
    def mbar(self) -> int:
        return self.m + self.R - 1

    @property
    def b(self) -> int:
        return self.mbar + 1


@dataclass(frozen=True)
class RedBlockDecomposition:
    blocks: tuple[RedBlock, ...]
    black_roots: tuple[int, ...]
    rank: int


def decompose_red_blocks(c: GradingVector) -> RedBlockDecomposition:
    blocks = []
    black = []
    start = None
    for pos, v in enumerate(c.c, start=1):
        if v == 0:
            if start is None:
                start = pos
        else:
            black.append(pos)
            if start is not None:
                blocks.append(RedBlock(start, pos - start))
                start = None
    if start is not None:
        blocks.append(RedBlock(start, len(c) + 1 - start))
    return RedBlockDecomposition(tuple(blocks), tuple(black), len(c))


@dataclass(frozen=True)
class Site:
    """One node of the Toda lattice.

    The defining (n+1)-dimensional representation splits into eigenspaces of
    the grading operator; site ``i`` owns basis vectors ``m .. m+R`` and its
    red roots are ``m .. m+R-1`` (none when ``R == 0``).  ``b`` is the black
    root closing the site, equal to ``n+1`` for the last one.
    """

    index: int
    m: int
    R: int

    @property
    def dim(self) -> int:
        return self.R + 1

    @property
    def mbar(self) -> int:
        return self.m + self.R - 1

    @property
    def b(self) -> int:
        return self.m + self.R

    @property
    def prev_b(self) -> int:
        return self.m - 1

    @property
    def positions(self) -> range:
        """0-based rows of the defining representation owned by the site."""
        return range(self.m - 1, self.m + self.R)


def lattice_sites(c: GradingVector) -> tuple[Site, ...]:
    """Sites of the Toda lattice, including one-dimensional ones.

    Adjacent black roots (or a black root at either end of the diagram) give
    sites with ``R == 0``; they carry scalar fields.
    """
    sites = []
    m = 1
    idx = 1
    r = len(c)
    for pos in range(1, r + 2):
        if pos == r + 1 or c.c[pos - 1] == 1:
            sites.append(Site(idx, m, pos - m))
            idx += 1
            m = pos + 1
    return tuple(sites)
