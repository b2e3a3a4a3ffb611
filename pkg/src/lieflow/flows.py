"""Linear flows for the triangular factors and the composite element K.

Everything is integrated in the defining representation; other
fundamental representations are reached through minors of K.  The lattice
sites partition the defining basis into grading eigenspaces, and the
grade-k part of the flows couples site i to site i+k:

    M+_y = (B0 + L+) M+,    M-_x = M- (A0 + L-),    K = M+(y) M-(x)

with M+(y0) = M-(x0) = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import exact
from .cartan import GradingVector, RedBlock, Site, cartan_matrix, lattice_sites
from .identities import GroupElement
from .parallel import ordered_map
from .representations import (
    CompositeRoot,
    build_fundamental_rep,
    defining_rep,
    grading_operator,
    nested_generator,
    red_basis,
)


class UnsupportedExactModeError(ValueError):
    pass


class ConstructionError(RuntimeError):
    pass


class GridError(ValueError):
    pass


DEFAULT_DEGREE_CAP = 6


def _to_fraction(v) -> Fraction:
    if isinstance(v, float):
        return Fraction(repr(v))
    return Fraction(v)


def poly_eval(coeffs, t):
    """Evaluate coefficient arrays (lowest degree first, last axis) at t by Horner."""
    coeffs = np.asarray(coeffs)
    out = coeffs[..., -1].copy()
    for d in range(coeffs.shape[-1] - 2, -1, -1):
        out = out * t + coeffs[..., d]
    return out


@dataclass
class CoefficientSpec:
    """Coefficient functions of the flows.

    ``P[(k, i)]`` has shape (d_{i+k}, d_i, deg+1) and multiplies the grade -k
    generators mapping site i to site i+k (functions of x); ``Pbar[(k, i)]``
    has shape (d_i, d_{i+k}, deg+1) (functions of y).  ``A0`` / ``B0`` map a
    simple root r to the coefficient polynomial of h_r.
    """

    n: int
    grading: GradingVector
    M: int
    P: dict = field(default_factory=dict)
    Pbar: dict = field(default_factory=dict)
    A0: dict = field(default_factory=dict)
    B0: dict = field(default_factory=dict)
    degree_cap: int = DEFAULT_DEGREE_CAP

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("maximal grade M must be at least 1")
        if len(self.grading) != self.n:
            raise ValueError(f"grading has length {len(self.grading)}, expected {self.n}")
        S = len(self.sites)
        for name, table, lower in (("P", self.P, True), ("Pbar", self.Pbar, False)):
            for key, arr in list(table.items()):
                k, i = key
                if not 1 <= k <= self.M or not 1 <= i or i + k > S:
                    raise ValueError(f"{name}[{k}][{i}] outside the lattice (M={self.M}, sites={S})")
                arr = np.asarray(arr)
                if arr.ndim == 2:
                    arr = arr[..., None]
                di, dk = self.sites[i - 1].dim, self.sites[i + k - 1].dim
                shape = (dk, di) if lower else (di, dk)
                if arr.shape[:2] != shape:
                    raise ValueError(f"{name}[{k}][{i}] has shape {arr.shape[:2]}, expected {shape}")
                if arr.shape[2] - 1 > self.degree_cap:
                    raise ValueError(f"{name}[{k}][{i}] degree exceeds cap {self.degree_cap}")
                table[key] = arr
        for name, table in (("A0", self.A0), ("B0", self.B0)):
            for r, arr in list(table.items()):
                if not 1 <= r <= self.n:
                    raise ValueError(f"{name} direction {r} outside 1..{self.n}")
                table[r] = np.atleast_1d(np.asarray(arr))

    @property
    def sites(self) -> tuple[Site, ...]:
        return lattice_sites(self.grading)

    @property
    def has_zero_grade(self) -> bool:
        return any(np.any(v != 0) for v in self.A0.values()) or any(np.any(v != 0) for v in self.B0.values())

    @classmethod
    def zero(cls, n: int, grading: GradingVector, M: int = 1) -> "CoefficientSpec":
        return cls(n, grading, M)

    @classmethod
    def unit(cls, n: int, grading: GradingVector, M: int = 1) -> "CoefficientSpec":
        """Rectangular identity blocks in every grade up to M."""
        sites = lattice_sites(grading)
        P, Pbar = {}, {}
        for k in range(1, M + 1):
            for i in range(1, len(sites) - k + 1):
                di, dk = sites[i - 1].dim, sites[i + k - 1].dim
                P[(k, i)] = np.eye(dk, di)[..., None]
                Pbar[(k, i)] = np.eye(di, dk)[..., None]
        return cls(n, grading, M, P, Pbar)

    def as_exact(self) -> "CoefficientSpec":
        conv = np.vectorize(_to_fraction, otypes=[object])
        return CoefficientSpec(
            self.n, self.grading, self.M,
            {k: conv(v) for k, v in self.P.items()},
            {k: conv(v) for k, v in self.Pbar.items()},
            {k: conv(v) for k, v in self.A0.items()},
            {k: conv(v) for k, v in self.B0.items()},
            self.degree_cap,
        )

    def coefficient(self, k: int, i: int, sign: str, t):
        """P^{k,i}(t) (sign '-') or Pbar^{k,i}(t) (sign '+'); zero blocks if absent."""
        table = self.P if sign == "-" else self.Pbar
        arr = table.get((k, i))
        if arr is None:
            di, dk = self.sites[i - 1].dim, self.sites[i + k - 1].dim
            shape = (dk, di) if sign == "-" else (di, dk)
            return np.zeros(shape, dtype=object if isinstance(t, Fraction) else float)
        return poly_eval(arr, t)


@dataclass(frozen=True)
class GridSpec:
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    h: float = 1e-2
    levels: int = 3

    def __post_init__(self):
        if not self.h > 0:
            raise GridError("step h must be positive")
        if self.levels < 1:
            raise GridError("need at least one refinement level")
        for a, b in ((self.x0, self.x1), (self.y0, self.y1)):
            steps = (b - a) / self.h
            if b <= a or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise GridError(f"interval [{a}, {b}] is not a whole number of steps {self.h}")

    @property
    def nx(self) -> int:
        return int(round((self.x1 - self.x0) / self.h))

    @property
    def ny(self) -> int:
        return int(round((self.y1 - self.y0) / self.h))

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.nx + 1)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.h * np.arange(self.ny + 1)

    def refined(self, level: int) -> "GridSpec":
        return GridSpec(self.x0, self.x1, self.y0, self.y1, self.h / 2 ** level, 1)

    def exact_nodes(self, axis: str) -> list[Fraction]:
        a = _to_fraction(self.x0 if axis == "x" else self.y0)
        h = _to_fraction(self.h)
        count = self.nx if axis == "x" else self.ny
        return [a + h * k for k in range(count + 1)]


# ------------------------------------------------------------ assembling L

def _unit_generators(spec: CoefficientSpec, sign: str) -> dict:
    """Generator for every (k, i, s, j) entry, built as nested composite roots.

    The entry (s, j) of block (k, i) corresponds to
    [(m_i+s-1, mbar_i)+, [(b_i, b_{i+k-1})+, (m_{i+k}, m_{i+k}+j-2)+]]
    with identity factors dropped.  Each one is checked to lie in the
    grade +-k eigenspace of ad H.
    """
    n = spec.n
    rep = defining_rep(n)
    H = grading_operator(rep, cartan_matrix(n), spec.grading)
    sites = spec.sites
    out = {}
    for k in range(1, spec.M + 1):
        for i in range(1, len(sites) - k + 1):
            si, sk = sites[i - 1], sites[i + k - 1]
            for s in range(1, si.dim + 1):
                for j in range(1, sk.dim + 1):
                    roots = (
                        CompositeRoot(si.m + s - 1, si.mbar),
                        CompositeRoot(si.b, sites[i + k - 2].b),
                        CompositeRoot(sk.m, sk.m + j - 2),
                    )
                    Z = nested_generator(rep, roots)
                    if Z is None:
                        raise ConstructionError(f"empty generator for block ({k},{i})")
                    if sign == "-":
                        Z = Z.T.copy()
                    ad = H.dot(Z) - Z.dot(H)
                    eig = k if sign == "+" else -k
                    if np.any(ad - eig * Z.astype(object) != 0):
                        raise ConstructionError(f"generator ({k},{i},{s},{j}) is not of grade {eig}")
                    out[(k, i, s, j)] = Z
    return out


_UNIT_CACHE: dict = {}


def unit_generators(spec: CoefficientSpec, sign: str) -> dict:
    key = (spec.n, spec.grading.c, spec.M, sign)
    if key not in _UNIT_CACHE:
        _UNIT_CACHE[key] = _unit_generators(spec, sign)
    return _UNIT_CACHE[key]


def assemble_L(spec: CoefficientSpec, sign: str, t) -> np.ndarray:
    """L+ (sign '+', at y = t) or L- (sign '-', at x = t) in the defining rep."""
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    exact_mode = isinstance(t, Fraction)
    N = spec.n + 1
    out = exact.zeros((N, N)) if exact_mode else np.zeros((N, N))
    units = unit_generators(spec, sign)
    for (k, i, s, j), Z in units.items():
        table = spec.P if sign == "-" else spec.Pbar
        if (k, i) not in table:
            continue
        coef = spec.coefficient(k, i, sign, t)
        v = coef[j - 1, s - 1] if sign == "-" else coef[s - 1, j - 1]
        if v:
            out = out + v * Z
    return out


def zero_grade(spec: CoefficientSpec, sign: str, t) -> np.ndarray:
    """A0(x) (sign '-') or B0(y) (sign '+') as a diagonal defining-rep matrix."""
    N = spec.n + 1
    table = spec.A0 if sign == "-" else spec.B0
    diag = np.zeros(N)
    for r, coeffs in table.items():
        v = float(poly_eval(np.asarray(coeffs, dtype=float), float(t)))
        diag[r - 1] += v
        diag[r] -= v
    return np.diag(diag)


def flow_generator(spec: CoefficientSpec, sign: str, t) -> np.ndarray:
    L = assemble_L(spec, sign, t)
    if spec.has_zero_grade:
        if isinstance(t, Fraction):
            raise UnsupportedExactModeError("exact mode needs vanishing zero-grade terms")
        L = L + zero_grade(spec, sign, t)
    return L


def site_block(mat: np.ndarray, sites, a: int, b: int) -> np.ndarray:
    """Block of a defining-rep matrix between sites a (rows) and b (cols)."""
    ra, rb = sites[a - 1].positions, sites[b - 1].positions
    return mat[..., ra.start:ra.stop, rb.start:rb.stop]


# ---------------------------------------------------------------- solving

@dataclass
class FlowSolution:
    xs: np.ndarray
    ys: np.ndarray
    Mplus: np.ndarray     # (ny+1, N, N), function of y
    Mminus: np.ndarray    # (nx+1, N, N), function of x
    exact_plus: np.ndarray | None = None
    exact_minus: np.ndarray | None = None
    poly_plus: np.ndarray | None = None    # (deg+1, N, N) in y
    poly_minus: np.ndarray | None = None   # (deg+1, N, N) in x


def _rk4_line(spec: CoefficientSpec, sign: str, t0: float, h: float, count: int, substeps: int = 4):
    N = spec.n + 1
    M = np.eye(N)
    out = np.empty((count + 1, N, N))
    out[0] = M
    dt = h / substeps

    def rhs(t, M):
        F = flow_generator(spec, sign, t)
        return F @ M if sign == "+" else M @ F

    t = t0
    for step in range(count):
        for sub in range(substeps):
            # time is rebuilt from the node index to avoid drift
            t = t0 + h * step + dt * sub
            k1 = rhs(t, M)
            k2 = rhs(t + dt / 2, M + dt / 2 * k1)
            k3 = rhs(t + dt / 2, M + dt / 2 * k2)
            k4 = rhs(t + dt, M + dt * k3)
            M = M + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[step + 1] = M
    return out


def _poly_generator(spec: CoefficientSpec, sign: str) -> np.ndarray:
    """Generator of the flow as a polynomial matrix, shape (deg+1, N, N)."""
    N = spec.n + 1
    table = spec.P if sign == "-" else spec.Pbar
    deg = max((a.shape[2] for a in table.values()), default=1)
    out = np.empty((deg, N, N), dtype=object)
    out[...] = Fraction(0)
    units = unit_generators(spec, sign)
    for (k, i, s, j), Z in units.items():
        arr = table.get((k, i))
        if arr is None:
            continue
        coeffs = arr[j - 1, s - 1] if sign == "-" else arr[s - 1, j - 1]
        for d, c in enumerate(coeffs):
            if c:
                out[d] = out[d] + _to_fraction(c) * Z
    return out


def _poly_mul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    N = A.shape[1]
    out = np.empty((A.shape[0] + B.shape[0] - 1, N, N), dtype=object)
    out[...] = Fraction(0)
    for a in range(A.shape[0]):
        if not np.any(A[a] != 0):
            continue
        for b in range(B.shape[0]):
            out[a + b] = out[a + b] + A[a].dot(B[b])
    return out


def _poly_integrate(A: np.ndarray, t0: Fraction) -> np.ndarray:
    """Antiderivative vanishing at t0."""
    N = A.shape[1]
    out = np.empty((A.shape[0] + 1, N, N), dtype=object)
    out[0] = Fraction(0)
    for d in range(A.shape[0]):
        out[d + 1] = A[d] * Fraction(1, d + 1)
    out[0] = -poly_eval(np.moveaxis(out, 0, -1), t0)
    return out


def _trim(A: np.ndarray) -> np.ndarray:
    d = A.shape[0]
    while d > 1 and not np.any(A[d - 1] != 0):
        d -= 1
    return A[:d]


def _picard(spec: CoefficientSpec, sign: str, t0: Fraction) -> np.ndarray:
    """Exact polynomial solution; terminates because the generator is nilpotent."""
    N = spec.n + 1
    F = _poly_generator(spec, sign)
    ident = exact.identity(N)[None]
    M = ident.copy()
    for _ in range(N + 1):
        prod = _poly_mul(F, M) if sign == "+" else _poly_mul(M, F)
        new = _poly_integrate(prod, t0)
        new[0] = new[0] + ident[0]
        new = _trim(new)
        if new.shape == M.shape and not np.any(new != M):
            return M
        M = new
    raise ConstructionError("Picard iteration did not terminate")


def poly_matrix_eval(A: np.ndarray, t):
    return poly_eval(np.moveaxis(A, 0, -1), t)


def solve_flows(spec: CoefficientSpec, grid: GridSpec, mode: str = "float") -> FlowSolution:
    """Sample M+ on the y nodes and M- on the x nodes of ``grid``."""
    xs, ys = grid.xs, grid.ys
    if mode == "exact":
        if spec.has_zero_grade:
            raise UnsupportedExactModeError("exact mode needs vanishing zero-grade terms")
        espec = spec.as_exact()
        y0, x0 = _to_fraction(grid.y0), _to_fraction(grid.x0)
        pp = _picard(espec, "+", y0)
        pm = _picard(espec, "-", x0)
        ex_plus = np.array([poly_matrix_eval(pp, t) for t in grid.exact_nodes("y")], dtype=object)
        ex_minus = np.array([poly_matrix_eval(pm, t) for t in grid.exact_nodes("x")], dtype=object)
        return FlowSolution(xs, ys, ex_plus.astype(float), ex_minus.astype(float),
                            ex_plus, ex_minus, pp, pm)
    if mode != "float":
        raise ValueError(f"mode must be 'float' or 'exact', got {mode!r}")
    jobs = [("+", grid.y0, grid.ny), ("-", grid.x0, grid.nx)]
    plus, minus = ordered_map(lambda job: _rk4_line(spec, job[0], job[1], grid.h, job[2]), jobs)
    return FlowSolution(xs, ys, plus, minus)


# ------------------------------------------------------------ K and minors

@dataclass
class TransferElement:
    K: GroupElement
    Mplus: np.ndarray
    Mminus: np.ndarray


def compose_K(Mplus: np.ndarray, Mminus: np.ndarray) -> TransferElement:
    Mplus, Mminus = np.asarray(Mplus), np.asarray(Mminus)
    if Mplus.shape != Mminus.shape:
        raise ValueError("factors live in different representations")
    K = Mplus.dot(Mminus)
    return TransferElement(GroupElement(K.shape[0] - 1, K, (("matrix", "M+"), ("matrix", "M-"))), Mplus, Mminus)


@dataclass
class KField:
    """K sampled on a tensor grid: K[ix, iy] = M+(ys[iy]) M-(xs[ix])."""

    n: int
    xs: np.ndarray
    ys: np.ndarray
    K: np.ndarray
    h: float

    @property
    def shape(self):
        return self.K.shape[:2]

    def minor(self, rows, cols) -> np.ndarray:
        if not rows:
            return np.ones(self.shape)
        sub = self.K[..., [r - 1 for r in rows], :][..., [c - 1 for c in cols]]
        return np.linalg.det(sub)

    def hw(self, j: int) -> np.ndarray:
        idx = tuple(range(1, j + 1))
        return self.minor(idx, idx)

    def at(self, ix: int, iy: int) -> GroupElement:
        return GroupElement(self.n, self.K[ix, iy].copy())

    def element(self, bra, ket, j: int) -> np.ndarray:
        """Grid of <bra|K|ket> in the j-th representation (constant vectors)."""
        rep = build_fundamental_rep(self.n, j)
        out = np.zeros(self.shape)
        for a in np.flatnonzero(bra):
            for b in np.flatnonzero(ket):
                out += bra[a] * ket[b] * self.minor(rep.basis[a], rep.basis[b])
        return out


def compose_field(sol: FlowSolution, h: float) -> KField:
    K = np.einsum("yab,xbc->xyac", sol.Mplus, sol.Mminus)
    return KField(sol.Mplus.shape[1] - 1, sol.xs, sol.ys, K, h)


def build_K_field(spec: CoefficientSpec, grid: GridSpec, mode: str = "float") -> KField:
    return compose_field(solve_flows(spec, grid, mode), grid.h)


def u_matrix(K, site: Site, kind: str = "first") -> np.ndarray:
    """<a|K|a'> over the lowering chain of a site.

    ``K`` is a GroupElement (one matrix) or a KField (one matrix per grid
    point, stacked on the leading axes).  For one-dimensional sites the
    chain is the single highest vector of representation m (first) or
    m - 1 (last).
    """
    n = K.n
    if site.R == 0:
        j = site.m if kind == "first" else site.m - 1
        val = K.hw(j)
        return np.asarray(val)[..., None, None] if isinstance(K, KField) else np.array([[val]], dtype=object if K.is_exact else float)
    block = RedBlock(site.m, site.R)
    j = block.m if kind == "first" else block.mbar
    rep = build_fundamental_rep(n, j)
    vecs = red_basis(rep, block, kind)
    decoded = [rep.decode(v) for v in vecs]
    d = len(decoded)
    if isinstance(K, KField):
        out = np.empty(K.shape + (d, d))
        for a, (sa, Ia) in enumerate(decoded):
            for b, (sb, Ib) in enumerate(decoded):
                out[..., a, b] = sa * sb * K.minor(Ia, Ib)
        return out
    out = np.empty((d, d), dtype=object if K.is_exact else float)
    for a, (sa, Ia) in enumerate(decoded):
        for b, (sb, Ib) in enumerate(decoded):
            out[a, b] = sa * sb * K.minor(Ia, Ib)
    return out


# ------------------------------------------------- mixed log-derivative

def mixed_difference(f: np.ndarray, h: float) -> np.ndarray:
    """Central second mixed difference on the interior of a (nx, ny, ...) grid."""
    return (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2]) / (4 * h * h)


def mixed_log_derivative_check(kf: KField, spec: CoefficientSpec, i: int) -> dict:
    """Compare (ln <i|K|i>)_xy with its algebraic value on the interior grid.

    The algebraic side is the 2x2 determinant
    <i|F+ K F-|i><i|K|i> - <i|F+ K|i><i|K F-|i> over <i|K|i>^2, with F+ the
    y-flow generator and F- the x-flow generator.
    """
    tau = kf.hw(i)
    if np.any(tau <= 0):
        bad = np.argwhere(tau <= 0)[0]
        raise ArithmeticError(f"<{i}|K|{i}> not positive at grid index {tuple(bad)}")
    lhs = mixed_difference(np.log(tau), kf.h)
    rep = build_fundamental_rep(kf.n, i)
    hv = rep.highest_vector()
    # bra side depends on y, ket side on x
    bras = [rep.represent(flow_generator(spec, "+", y)).T @ hv for y in kf.ys]
    kets = [rep.represent(flow_generator(spec, "-", x)) @ hv for x in kf.xs]
    bra_support = sorted({int(a) for v in bras for a in np.flatnonzero(v)} | {0})
    ket_support = sorted({int(b) for v in kets for b in np.flatnonzero(v)} | {0})
    minors = {(a, b): kf.minor(rep.basis[a], rep.basis[b]) for a in bra_support for b in ket_support}
    B = np.array(bras)  # (ny, dim)
    C = np.array(kets)  # (nx, dim)
    both = sum(B[None, :, a] * C[:, None, b] * minors[(a, b)] for a in bra_support for b in ket_support)
    left = sum(B[None, :, a] * minors[(a, 0)] for a in bra_support)
    right = sum(C[:, None, b] * minors[(0, b)] for b in ket_support)
    rhs = (both * tau - left * right) / tau ** 2
    res = lhs - rhs[1:-1, 1:-1]
    return {"residual": float(np.max(np.abs(res))) if res.size else 0.0,
            "scale": float(np.max(np.abs(rhs))) if rhs.size else 0.0,
            "grid": res}
