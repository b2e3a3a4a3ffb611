"""Toda fields extracted from K and the identities they satisfy.

For each lattice site i (defining-rep indices m_i .. m_i+R_i):

    y_i = u_first / <b_{i-1}>,   z_i = u_last / <b_i>,

with u the matrix of K over the lowering chain of the site.  The dressed
coefficients pi, pibar and the correction matrices are ratios of matrix
elements of K between highest vectors shifted by composite-root
generators.  All quantities are computed either at a single group element
or vectorised over a KField grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import exact
from .cartan import GradingVector, Site, lattice_sites
from .flows import CoefficientSpec, KField, poly_eval, u_matrix
from .identities import GroupElement, matrix_element, shifted_element
from .representations import CompositeRoot, build_fundamental_rep, composite_root_generator


class SingularPointError(ArithmeticError):
    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{message} at {location}")
        self.location = location


class ConventionError(RuntimeError):
    pass


def _hw(K, j: int):
    """<j|K|j> for j in 0..n+1 (grid or scalar)."""
    return K.hw(j)


def _element(K, j: int, bra, ket):
    if isinstance(K, KField):
        return K.element(bra, ket, j)
    return matrix_element(K, bra, ket, build_fundamental_rep(K.n, j))


def _check_nonzero(val, what: str, K):
    if isinstance(K, KField):
        bad = np.argwhere(np.abs(val) < 1e-300)
        if bad.size:
            ix, iy = bad[0]
            raise SingularPointError(f"{what} vanishes", (float(K.xs[ix]), float(K.ys[iy])))
    elif val == 0:
        raise SingularPointError(f"{what} vanishes")
    return val


def _inv(a):
    if isinstance(a, np.ndarray) and a.dtype == object:
        return exact.inverse(a)
    return np.linalg.inv(a)


# ------------------------------------------------------------ the fields

@dataclass
class SolutionField:
    """Fields y_i, z_i and the highest elements <j> on a grid."""

    sites: tuple[Site, ...]
    xs: np.ndarray
    ys: np.ndarray
    h: float
    tau: dict          # j -> (nx, ny) grid of <j>, j = 0..n+1
    y: list            # per site, (nx, ny, d, d)
    z: list
    yinv: list = field(default_factory=list)

    @property
    def S(self) -> int:
        return len(self.sites)


def site_fields(K, site: Site):
    """(y_i, z_i) at one group element or over a KField."""
    n = K.n
    denom_y = _check_nonzero(_hw(K, site.m - 1), f"<{site.m - 1}>", K)
    denom_z = _check_nonzero(_hw(K, site.b if site.b <= n + 1 else n + 1), f"<{site.b}>", K)
    uf = u_matrix(K, site, "first")
    ul = u_matrix(K, site, "last")
    if isinstance(K, KField):
        return uf / denom_y[..., None, None], ul / denom_z[..., None, None]
    return uf * (1 / denom_y) if K.is_exact else uf / denom_y, ul * (1 / denom_z) if K.is_exact else ul / denom_z


def build_solution_field(kf: KField, grading: GradingVector, det_tol: float | None = 1e-8) -> SolutionField:
    sites = lattice_sites(grading)
    if len(grading) != kf.n:
        raise ValueError("grading does not match the rank of K")
    tau = {j: kf.hw(j) for j in range(0, kf.n + 2)}
    # <j|K|j> = 1 where K = 1, so a non-positive value means a zero was crossed;
    # only the minors at black roots enter the fields as denominators
    for j in sorted({b for site in sites for b in (site.m - 1, site.b)} - {0, kf.n + 1}):
        bad = np.argwhere(tau[j] <= 0)
        if bad.size:
            ix, iy = bad[0]
            raise SingularPointError(f"<{j}|K|{j}> changes sign", (float(kf.xs[ix]), float(kf.ys[iy])))
    ys, zs, yinv = [], [], []
    for site in sites:
        for j in (site.m - 1, site.b):
            _check_nonzero(tau[j], f"<{j}>", kf)
        y, z = site_fields(kf, site)
        prod = np.linalg.det(y) * np.linalg.det(z)
        if det_tol is not None and np.max(np.abs(prod - 1)) > det_tol:
            raise ArithmeticError(f"det y * det z deviates from 1 at site {site.index}")
        ys.append(y)
        zs.append(z)
        yinv.append(np.linalg.inv(y))
    return SolutionField(sites, kf.xs, kf.ys, kf.h, tau, ys, zs, yinv)


def antidiagonal(signs) -> np.ndarray:
    d = len(signs)
    t = np.zeros((d, d))
    for p, s in enumerate(signs):
        t[p, d - 1 - p] = s
    return t


def inverse_relation_residual(y, z, t) -> float:
    lhs = np.linalg.inv(y)
    rhs = t @ np.swapaxes(z, -1, -2) @ np.linalg.inv(t)
    return float(np.max(np.abs(lhs - rhs)))


def find_antidiagonal_signs(y, z, tol: float = 1e-8) -> np.ndarray:
    """Search the +-1 antidiagonal t making y^-1 = t z^T t^-1 at one point."""
    d = y.shape[-1]
    best, best_t = np.inf, None
    # a global sign does not matter; fix the first entry to +1
    for rest in itertools.product((1, -1), repeat=d - 1):
        t = antidiagonal((1,) + rest)
        r = inverse_relation_residual(y, z, t)
        if r < best:
            best, best_t = r, t
    scale = max(1.0, float(np.max(np.abs(np.linalg.inv(y)))))
    if best > tol * scale:
        raise ConventionError(f"no antidiagonal sign pattern fits (best residual {best:.3e})")
    return best_t


def check_inverse_relation(field: SolutionField, probe=None, tol: float = 1e-8) -> dict:
    """Max residual of y^-1 - t z^T t^-1 per site, with t fixed at a probe point."""
    nx, ny = field.y[0].shape[:2]
    ix, iy = probe if probe is not None else (nx * 2 // 3, ny // 3)
    out = {}
    for s, site in enumerate(field.sites):
        t = find_antidiagonal_signs(field.y[s][ix, iy], field.z[s][ix, iy], tol)
        res = inverse_relation_residual(field.y[s], field.z[s], t)
        out[site.index] = {"residual": res, "t": t}
    return out


def inverse_relation_point(K: GroupElement, site: Site, tol: float = 1e-8):
    """Residual of y^-1 - t z^T t^-1 at one element (exact in rational mode)."""
    y, z = site_fields(K, site)
    t = find_antidiagonal_signs(np.asarray(y, dtype=float), np.asarray(z, dtype=float), tol)
    if K.is_exact:
        # t is a signed antidiagonal permutation, so its inverse is its transpose
        ti = t.astype(int).astype(object)
        diff = exact.inverse(y) - ti.dot(z.T).dot(ti.T)
        return max(abs(v) for v in diff.ravel()), t
    diff = np.linalg.inv(y) - t @ z.T @ np.linalg.inv(t)
    return float(np.max(np.abs(diff))) / max(1.0, float(np.max(np.abs(np.linalg.inv(y))))), t


# ------------------------------------------------- correction matrices

def _root_vector(n: int, j: int, first: int, last: int, sign: str):
    """(first,last)^sign applied to the highest vector of rep j (bra uses '+')."""
    rep = build_fundamental_rep(n, j)
    Z = composite_root_generator(rep, CompositeRoot(first, last, "+"))
    # <j|(a,b)+ is the transpose of (a,b)- |j>
    return Z.T @ rep.highest_vector()


@dataclass
class Corrections:
    """Correction matrices keyed by site pairs.

    ``Abar[(i, j)]`` (j < i) is d_i x d_j and comes from bra shifts at the
    black root b_{i-1}; ``Bbar[(a, b)]`` (a > b) is d_a x d_b from bra shifts
    at b_b.  ``A[(j, i)]`` and ``B[(b, a)]`` are the ket-side conjugates.
    """

    Abar: dict = field(default_factory=dict)
    Bbar: dict = field(default_factory=dict)
    A: dict = field(default_factory=dict)
    B: dict = field(default_factory=dict)


def _ratio_block(K, sites, row_site: Site, col_site: Site, j: int, ket_side: bool):
    """Block [r in row_site, c in col_site] of <j|E_{c,r} K|j>/<j> (or its conjugate)."""
    n = K.n
    denom = _check_nonzero(_hw(K, j), f"<{j}>", K)
    rep = build_fundamental_rep(n, j)
    hv = rep.highest_vector()
    dr, dc = row_site.dim, col_site.dim
    grid = isinstance(K, KField)
    shape = (K.shape + (dr, dc)) if grid else (dr, dc)
    out = np.zeros(shape, dtype=object if (not grid and K.is_exact) else float)
    for r in range(dr):
        for c in range(dc):
            a = col_site.m + c
            b = row_site.m + r
            vec = _root_vector(n, j, a, b - 1, "+")
            val = _element(K, j, hv, vec) if ket_side else _element(K, j, vec, hv)
            out[..., r, c] = val / denom
    return out


def correction_matrices(K, grading: GradingVector, gap: int) -> Corrections:
    """All correction matrices between sites at distance 1..gap."""
    sites = lattice_sites(grading)
    S = len(sites)
    cor = Corrections()
    for d in range(1, gap + 1):
        for lo in range(1, S - d + 1):
            hi = lo + d
            s_lo, s_hi = sites[lo - 1], sites[hi - 1]
            j_abar = sites[hi - 2].b     # b_{hi-1}
            j_bbar = s_lo.b              # b_{lo}
            cor.Abar[(hi, lo)] = _ratio_block(K, sites, s_hi, s_lo, j_abar, ket_side=False)
            cor.Bbar[(hi, lo)] = _ratio_block(K, sites, s_hi, s_lo, j_bbar, ket_side=False)
            a_conj = _ratio_block(K, sites, s_hi, s_lo, j_abar, ket_side=True)
            b_conj = _ratio_block(K, sites, s_hi, s_lo, j_bbar, ket_side=True)
            cor.A[(lo, hi)] = np.swapaxes(a_conj, -1, -2)
            cor.B[(lo, hi)] = np.swapaxes(b_conj, -1, -2)
    return cor


# ------------------------------------------------- dressed coefficients

@dataclass
class DressedCoefficients:
    pi: dict       # (r, i) -> d_{i+r} x d_i
    pibar: dict    # (r, i) -> d_i x d_{i+r}
    corrections: Corrections


def coefficient_grids(spec: CoefficientSpec, xs, ys) -> tuple[dict, dict]:
    """P^{k,i}(x) as (nx, 1, ., .) and Pbar^{k,i}(y) as (1, ny, ., .) arrays."""
    P, Pbar = {}, {}
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    for key, arr in spec.P.items():
        vals = poly_eval(np.asarray(arr, dtype=float)[None], xs[:, None, None])
        P[key] = vals[:, None]
    for key, arr in spec.Pbar.items():
        vals = poly_eval(np.asarray(arr, dtype=float)[None], ys[:, None, None])
        Pbar[key] = vals[None, :]
    return P, Pbar


def point_coefficients(spec: CoefficientSpec, x, y) -> tuple[dict, dict]:
    P = {key: poly_eval(arr, x) for key, arr in spec.P.items()}
    Pbar = {key: poly_eval(arr, y) for key, arr in spec.Pbar.items()}
    return P, Pbar


def _eye_like(d, like):
    shape = np.shape(like)[:-2]
    return np.broadcast_to(np.eye(d), tuple(shape) + (d, d))


def dressed_pi(spec: CoefficientSpec, cor: Corrections, P: dict, Pbar: dict) -> DressedCoefficients:
    """Dressed coefficients from the correction matrices.

    pibar^{k,i} = sum_{s=k..M} sum_{t=0..s-k} sigma_t Abar^{i,i-t} Pbar^{s,i-t} Bbar^{i+s-t,i+k}
    pi^{k,i}    = sum_{s=k..M} sum_{t=0..s-k} B^{i+k,i+s-t} P^{s,i-t} sigma_t A^{i-t,i}

    with sigma_0 = 1, sigma_t = -1 otherwise, unit diagonal corrections and
    out-of-range terms dropped.
    """
    sites = spec.sites
    S, M = len(sites), spec.M

    def get(table, key, d):
        if key[0] == key[1]:
            return None  # identity
        return table.get(key)

    pibar, pi = {}, {}
    for k in range(1, M + 1):
        for i in range(1, S - k + 1):
            acc_bar = 0
            acc = 0
            for s in range(k, M + 1):
                for t in range(0, s - k + 1):
                    src = i - t
                    if src < 1 or src + s > S:
                        continue
                    sigma = 1 if t == 0 else -1
                    pb = Pbar.get((s, src))
                    pl = P.get((s, src))
                    if pb is not None:
                        term = pb
                        if t:
                            term = cor.Abar[(i, src)] @ term
                        if src + s != i + k:
                            term = term @ cor.Bbar[(src + s, i + k)]
                        acc_bar = acc_bar + sigma * term
                    if pl is not None:
                        term = pl
                        if t:
                            term = term @ cor.A[(src, i)]
                        if src + s != i + k:
                            term = cor.B[(i + k, src + s)] @ term
                        acc = acc + sigma * term
            di, dk = sites[i - 1].dim, sites[i + k - 1].dim
            pibar[(k, i)] = acc_bar if not np.isscalar(acc_bar) else np.zeros((di, dk))
            pi[(k, i)] = acc if not np.isscalar(acc) else np.zeros((dk, di))
    return DressedCoefficients(pi, pibar, cor)


def dressed_field(spec: CoefficientSpec, kf: KField) -> DressedCoefficients:
    cor = correction_matrices(kf, spec.grading, max(spec.M - 1, 1))
    P, Pbar = coefficient_grids(spec, kf.xs, kf.ys)
    return dressed_pi(spec, cor, P, Pbar)


def dressed_point(spec: CoefficientSpec, K: GroupElement, x, y) -> DressedCoefficients:
    cor = correction_matrices(K, spec.grading, max(spec.M - 1, 1))
    P, Pbar = point_coefficients(spec, x, y)
    return dressed_pi(spec, cor, P, Pbar)


# ------------------------------------------------------ residuals

def d_dx(f: np.ndarray, h: float) -> np.ndarray:
    """Central x-derivative on interior x nodes (drops the first/last x)."""
    return (f[2:] - f[:-2]) / (2 * h)


def d_dy(f: np.ndarray, h: float) -> np.ndarray:
    return (f[:, 2:] - f[:, :-2]) / (2 * h)


def toda_rhs(field: SolutionField, dressed: DressedCoefficients, M: int, i: int) -> np.ndarray:
    """y_i^-1 sum_r pibar^{r,i} y_{i+r} pi^{r,i} - sum_r pi^{r,i-r} y_{i-r}^-1 pibar^{r,i-r} y_i."""
    S = field.S
    out = np.zeros_like(field.y[i - 1])
    yi_inv = field.yinv[i - 1]
    for r in range(1, M + 1):
        if i + r <= S:
            out = out + yi_inv @ dressed.pibar[(r, i)] @ field.y[i + r - 1] @ dressed.pi[(r, i)]
        if i - r >= 1:
            out = out - dressed.pi[(r, i - r)] @ field.yinv[i - r - 1] @ dressed.pibar[(r, i - r)] @ field.y[i - 1]
    return out


def toda_residual(field: SolutionField, dressed: DressedCoefficients, M: int) -> dict:
    """Per-site residual grid of (y^-1 y_x)_y - rhs on the interior nodes.

    Every site is included: terms reaching outside the chain are absent,
    which is exact since <0> and <n+1> are identically 1 for unimodular K.
    """
    h = field.h
    out = {}
    for s, site in enumerate(field.sites):
        y = field.y[s]
        g = field.yinv[s][1:-1] @ d_dx(y, h)
        lhs = d_dy(g, h)
        rhs = toda_rhs(field, dressed, M, site.index)[1:-1, 1:-1]
        out[site.index] = lhs - rhs
    return out


def chain_residual(field: SolutionField) -> dict:
    """Residual of the plain Toda chain (y_i^-1 y_i,x)_y = y_i^-1 y_{i+1} - y_{i-1}^-1 y_i.

    This is the form the equations take for M = 1 with unit couplings and
    equal site dimensions (or scalar sites).
    """
    dims = {site.dim for site in field.sites}
    if len(dims) != 1:
        raise ValueError("the plain chain needs equal site dimensions")
    h, S = field.h, field.S
    out = {}
    for s, site in enumerate(field.sites):
        lhs = d_dy(field.yinv[s][1:-1] @ d_dx(field.y[s], h), h)
        rhs = np.zeros_like(field.y[s])
        if s + 1 < S:
            rhs = rhs + field.yinv[s] @ field.y[s + 1]
        if s >= 1:
            rhs = rhs - field.yinv[s - 1] @ field.y[s]
        out[site.index] = lhs - rhs[1:-1, 1:-1]
    return out


def pi_flow_residual(field: SolutionField, dressed: DressedCoefficients, M: int) -> dict:
    """Residual grids of the x-flow of pibar, the y-flow of pi and the correction flows.

    d_x pibar^{r,i} = sum_q (pibar^{r+q,i} y_{i+r+q} pi^{q,i+r} y_{i+r}^-1
                             - y_i pi^{q,i-q} y_{i-q}^-1 pibar^{q+r,i-q})
    d_y pi^{r,i}    = sum_q (y_{i+r}^-1 pibar^{q,i+r} y_{i+r+q} pi^{r+q,i}
                             - pi^{r+q,i-q} y_{i-q}^-1 pibar^{q,i-q} y_i)
    d_x Abar^{i+1,i} = y_{i+1} pi^{1,i} y_i^-1,   d_y A^{i,i+1} = y_i^-1 pibar^{1,i} y_{i+1}
    """
    h = field.h
    S = field.S
    y, yi = field.y, field.yinv
    pi, pib = dressed.pi, dressed.pibar
    res = {}
    for r in range(1, M + 1):
        for i in range(1, S - r + 1):
            rhs_x = 0
            rhs_y = 0
            for q in range(1, M - r + 1):
                if i + r + q <= S:
                    rhs_x = rhs_x + pib[(r + q, i)] @ y[i + r + q - 1] @ pi[(q, i + r)] @ yi[i + r - 1]
                    rhs_y = rhs_y + yi[i + r - 1] @ pib[(q, i + r)] @ y[i + r + q - 1] @ pi[(r + q, i)]
                if i - q >= 1 and i - q + q + r <= S:
                    rhs_x = rhs_x - y[i - 1] @ pi[(q, i - q)] @ yi[i - q - 1] @ pib[(q + r, i - q)]
                    rhs_y = rhs_y - pi[(r + q, i - q)] @ yi[i - q - 1] @ pib[(q, i - q)] @ y[i - 1]
            fx = np.broadcast_to(pib[(r, i)], y[i - 1].shape[:2] + pib[(r, i)].shape[-2:])
            fy = np.broadcast_to(pi[(r, i)], y[i - 1].shape[:2] + pi[(r, i)].shape[-2:])
            bx = np.broadcast_to(rhs_x, fx.shape) if not np.isscalar(rhs_x) else np.zeros(fx.shape)
            by = np.broadcast_to(rhs_y, fy.shape) if not np.isscalar(rhs_y) else np.zeros(fy.shape)
            res[f"pibar_x[{r},{i}]"] = d_dx(fx, h)[:, 1:-1] - bx[1:-1, 1:-1]
            res[f"pi_y[{r},{i}]"] = d_dy(fy, h)[1:-1] - by[1:-1, 1:-1]
    cor = dressed.corrections
    for i in range(1, S):
        if (i + 1, i) in cor.Abar:
            Ab = cor.Abar[(i + 1, i)]
            rhs = y[i] @ pi[(1, i)] @ yi[i - 1]
            res[f"Abar_x[{i + 1},{i}]"] = d_dx(Ab, h)[:, 1:-1] - rhs[1:-1, 1:-1]
        if (i, i + 1) in cor.A:
            A = cor.A[(i, i + 1)]
            rhs = yi[i - 1] @ pib[(1, i)] @ y[i]
            res[f"A_y[{i},{i + 1}]"] = d_dy(A, h)[1:-1] - rhs[1:-1, 1:-1]
    return res


# --------------------------------------------- bordered determinants

def _subset_vector(n: int, j: int, subset):
    rep = build_fundamental_rep(n, j)
    return rep.basis_vector(tuple(subset))


def _bordered(K: GroupElement, site: Site, row_extra, col_extra):
    """Determinant of <a|K|a'> over the site chain plus one extra vector each side."""
    n, m = K.n, site.m
    rep = build_fundamental_rep(n, m)
    head = list(range(1, m))
    chain = [tuple(head + [m + k]) for k in range(site.R + 1)]
    rows = chain + [tuple(row_extra)]
    cols = chain + [tuple(col_extra)]
    d = len(rows)
    mat = np.empty((d, d), dtype=object if K.is_exact else float)
    for a, I in enumerate(rows):
        for b, J in enumerate(cols):
            mat[a, b] = K.minor(I, J)
    return exact.det_any(mat)


def bordered_vectors(site: Site):
    """The three extra wedge vectors bordering the chain of a site.

    first:  <m|(m, b)+          = {1..m-1, m+R+1}
    second: <m|X+_m X+_{m-1}    = {1..m-2, m, m+1}
    third:  <m|(m-1, b)+        = {1..m-2, m, m+R+1}
    """
    m, R = site.m, site.R
    head1 = list(range(1, m))
    head2 = list(range(1, m - 1))
    return (
        tuple(head1 + [m + R + 1]),
        tuple(head2 + [m, m + 1]),
        tuple(head2 + [m, m + R + 1]),
    )


def _calibrate(det_fn, terms, refs):
    """Constants c with det = sum c_k term_k, solved on reference elements."""
    A = np.array([[float(t(g)) for t in terms] for g in refs])
    b = np.array([float(det_fn(g)) for g in refs])
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    # the constants are integers in every case met so far; keep them exact then
    return [int(round(v)) if abs(v - round(v)) < 1e-9 else float(v) for v in c]


def calibration_references(n: int, site: Site) -> list[GroupElement]:
    """Identity, exp(X+_{m-1}) exp(X-_{m-1}) and two fixed generic elements.

    Several closed-form terms vanish at the identity, so the constants are
    solved for on this small fixed set instead of a single point.
    """
    from .identities import random_unipotent
    ident = GroupElement.identity(n)
    refs = [ident]
    if site.m >= 2:
        refs.append(ident.times_exp("+", site.m - 1, 1.0).times_exp("-", site.m - 1, 1.0))
    rng = np.random.default_rng(20240601)
    refs.extend(random_unipotent(n, rng, scale=0.5) for _ in range(2))
    return refs


def _closed_forms(n: int, site: Site):
    """Bordered determinants with their closed forms as sums of terms."""
    m, R = site.m, site.R
    v1, v2, v3 = bordered_vectors(site)
    hw = lambda j: (lambda K: K.hw(j))
    head1, head2 = tuple(range(1, m)), tuple(range(1, m - 1))

    def prod(*fs):
        def f(K):
            out = 1
            for g in fs:
                out = out * g(K)
            return out
        return f

    def power(j, p):
        return lambda K: K.hw(j) ** p

    def minor(rows, cols):
        return lambda K: K.minor(rows, cols)

    forms = {
        "border_forward": (v1, v1, [prod(power(m - 1, R + 1), hw(m + R + 1))]),
    }
    if m >= 2:
        raise_left = minor(head2 + (m,), head1)     # <m-1|X+_{m-1} K|m-1>
        lower_right = minor(head1, head2 + (m,))    # <m-1|K X-_{m-1}|m-1>
        second = minor(tuple(range(1, m + 1)) + (m + R + 1,), tuple(range(1, m + 1)) + (m + R + 1,))
        forms["border_backward"] = (v2, v2, [prod(hw(m + R), power(m - 1, R - 1), hw(m - 2), hw(m + 1))])
        forms["border_forward_cross"] = (v1, v3, [prod(power(m - 1, R), hw(m + R + 1), lower_right)])
        forms["border_backward_cross"] = (
            v2, v3,
            [prod(power(m - 1, R - 1), hw(m - 2), minor(tuple(range(1, m + 2)), tuple(range(1, m + 1)) + (m + R + 1,)), hw(m + R))],
        )
        forms["border_cross"] = (
            v3, v3,
            [prod(power(m - 1, R - 1), hw(m + R + 1), raise_left, lower_right),
             prod(power(m - 1, R - 1), hw(m - 2), second, hw(m + R))],
        )
    return forms


def has_bordered(n: int, site: Site) -> bool:
    """Bordered determinants need R >= 1 and a following site."""
    return site.R >= 1 and site.b + 1 <= n + 1


def intermediate_determinants(K: GroupElement, site: Site, tol: float = 1e-9) -> dict:
    """Bordered determinants of a site chain against their closed forms.

    Applies to sites with R >= 1 that are followed by another site.  Each
    entry holds value, closed form, constants and relative residual.
    Constants are calibrated on the identity and, where a term vanishes
    there, on exp(X+_{m-1}) exp(X-_{m-1}).
    """
    n = K.n
    if not has_bordered(n, site):
        raise ValueError(f"site {site.index} has no bordered determinants")
    refs = calibration_references(n, site)
    out = {}
    for name, (rows, cols, terms) in _closed_forms(n, site).items():
        det_fn = lambda g, r=rows, c=cols: _bordered(g, site, r, c)
        consts = _calibrate(det_fn, terms, refs)
        value = det_fn(K)
        closed = sum(c * t(K) for c, t in zip(consts, terms))
        out[name] = _entry(value, closed, consts)
    m = site.m
    # first Jacobi in determinant form at m: <m+1><m-1> = 2x2 shifted determinant
    lhs = K.hw(m + 1) * K.hw(m - 1)
    a = shifted_element(K, m, left=[("+", m)], right=[("-", m)])
    b = shifted_element(K, m, left=[("+", m)])
    c = shifted_element(K, m, right=[("-", m)])
    out["jacobi_neighbor"] = _entry(K.hw(m) * a - b * c, lhs, [1])
    out["schur_border"] = schur_border(K, site)
    return out


def _entry(value, closed, consts):
    """Value, closed form and residual relative to max(1, |value|, |closed|).

    The difference is taken before any float conversion so that rational
    inputs give an exactly zero residual.
    """
    diff = abs(value - closed)
    scale = max(1.0, abs(float(value)), abs(float(closed)))
    return {"value": float(value), "closed": float(closed), "constants": consts,
            "residual": float(diff) / scale}


def alpha_vectors(K: GroupElement, site: Site):
    """alphabar_s = <b|(m+s-1, b)+ K|b>/<b> and the conjugate alpha_s, s = 1..R+1."""
    n, m, b = K.n, site.m, site.b
    rep = build_fundamental_rep(n, b)
    hv = rep.highest_vector()
    denom = K.hw(b)
    bar, col = [], []
    for s in range(1, site.R + 2):
        vec = _root_vector(n, b, m + s - 1, b, "+")
        bar.append(matrix_element(K, vec, hv, rep) / denom)
        col.append(matrix_element(K, hv, vec, rep) / denom)
    return np.array(bar, dtype=object if K.is_exact else float), np.array(col, dtype=object if K.is_exact else float)


def schur_border(K: GroupElement, site: Site) -> dict:
    """<m|(m,b)+ K (m,b)- |m> = alphabar u alpha + <m-1><m+R+1>/<b>."""
    n, m, R = K.n, site.m, site.R
    v1 = bordered_vectors(site)[0]
    lhs = K.minor(v1, v1)
    abar, alpha = alpha_vectors(K, site)
    u = u_matrix(K, site, "first")
    rhs = abar.dot(u).dot(alpha) + K.hw(m - 1) * K.hw(m + R + 1) / K.hw(m + R)
    return _entry(lhs, rhs, [1])


def determinant_formulas(K: GroupElement, site: Site) -> dict:
    """det u_first = <b_{i-1}>^R <b_i>,  det u_last = <b_i>^R <b_{i-1}>."""
    R = site.R
    lo, hi = K.hw(site.m - 1), K.hw(site.b)
    first = exact.det_any(u_matrix(K, site, "first"))
    last = exact.det_any(u_matrix(K, site, "last"))
    return {
        "u_determinant_first": _entry(first, lo ** R * hi, [1]),
        "u_determinant_last": _entry(last, hi ** R * lo, [1]),
    }


# ------------------------------------------------- lowering sequences

def alpha_bar_seq(K: GroupElement, seq) -> float | Fraction:
    """<P|X+_{s0} ... X+_{sk} K|P>/<P> with P = s0."""
    P = seq[0]
    return shifted_element(K, P, left=[("+", s) for s in seq]) / K.hw(P)


def alpha_seq(K: GroupElement, seq) -> float | Fraction:
    """<P|K X-_{s0} ... X-_{sk}|P>/<P> with P = sk."""
    P = seq[-1]
    return shifted_element(K, P, right=[("-", s) for s in seq]) / K.hw(P)


def alpha_recursion_residual(K: GroupElement, m: int, k: int, conjugate: bool = False):
    """Residual of
    a_{m..m+k} = (-1)^k a_{m+k..m} + sum_{s=1..k} (-1)^{s+1} a_{m+s..m+k} a_{m+s-1..m}
    for a = alphabar (or alpha with ``conjugate``).
    """
    f = alpha_seq if conjugate else alpha_bar_seq
    if conjugate:
        lhs = f(K, list(range(m + k, m - 1, -1)))
        rhs = (-1) ** k * f(K, list(range(m, m + k + 1)))
        for s in range(1, k + 1):
            rhs += (-1) ** (s + 1) * f(K, list(range(m + k, m + s - 1, -1))) * f(K, list(range(m, m + s)))
        return lhs - rhs
    lhs = f(K, list(range(m, m + k + 1)))
    rhs = (-1) ** k * f(K, list(range(m + k, m - 1, -1)))
    for s in range(1, k + 1):
        rhs += (-1) ** (s + 1) * f(K, list(range(m + s, m + k + 1))) * f(K, list(range(m + s - 1, m - 1, -1)))
    return lhs - rhs


def alpha_sum_residual(K: GroupElement, m: int, k: int):
    """Residual of
    sum_{s=0..k} <m+s>/<m+s-1> abar_{m+s..m+k} alpha_{m+k..m+s}
        = <m-1>^-1 abar^{k+1} u_m alpha^{k+1}.
    """
    lhs = 0
    for s in range(0, k + 1):
        ratio = K.hw(m + s) / K.hw(m + s - 1)
        lhs += ratio * alpha_bar_seq(K, list(range(m + s, m + k + 1))) * alpha_seq(K, list(range(m + k, m + s - 1, -1)))
    vec_a = [(-1) ** (s + 1) * alpha_seq(K, list(range(m + s - 1, m + k + 1))) for s in range(1, k + 2)]
    vec_b = [(-1) ** (s + 1) * alpha_bar_seq(K, list(range(m + k, m + s - 2, -1))) for s in range(1, k + 2)]
    site = Site(0, m, k)
    u = u_matrix(K, site, "first") if k >= 1 else np.array([[K.hw(m)]])
    dtype = object if K.is_exact else float
    rhs = np.array(vec_b, dtype=dtype).dot(u).dot(np.array(vec_a, dtype=dtype)) / K.hw(m - 1)
    return lhs - rhs
