"""Independent numerical oracles: finite differences, convergence orders and
a characteristic (Goursat) march of the Toda system from boundary data.

Nothing here touches the flows or K; all inputs are grid samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cartan import Site
from .flows import CoefficientSpec, poly_eval


class StencilError(IndexError):
    pass


class GoursatBreakdownError(ArithmeticError):
    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{message} at {location}")
        self.location = location


def finite_diff_mixed(f: np.ndarray, point: tuple[int, int], h: float):
    """Central mixed second difference of a grid field at an interior node."""
    ix, iy = point
    nx, ny = f.shape[:2]
    if not (1 <= ix < nx - 1 and 1 <= iy < ny - 1):
        raise StencilError(f"stencil around {point} leaves the {nx}x{ny} grid")
    return (f[ix + 1, iy + 1] - f[ix + 1, iy - 1] - f[ix - 1, iy + 1] + f[ix - 1, iy - 1]) / (4 * h * h)


@dataclass
class OrderEstimate:
    orders: list
    ratios: list
    exact: bool

    @property
    def p(self):
        return "exact" if self.exact else self.orders[0]


def estimate_order(residuals, floor: float = 1e-13) -> OrderEstimate:
    """Orders log2(r_k / r_{k+1}) from residuals at h, h/2, h/4, ...

    Residuals at the round-off floor mean the identity holds exactly on the
    grid; the order is then reported as ``"exact"``.
    """
    res = [float(r) for r in residuals]
    if len(res) < 2 or any(r < 0 or not math.isfinite(r) for r in res):
        raise ValueError("need at least two finite non-negative residuals")
    if any(r <= floor for r in res):
        return OrderEstimate([], [], True)
    ratios = [a / b for a, b in zip(res, res[1:])]
    return OrderEstimate([math.log2(q) for q in ratios], ratios, False)


@dataclass
class ConvergenceReport:
    name: str
    hs: list
    residuals: list
    estimate: OrderEstimate
    band: tuple = (1.8, 2.2)
    cap: float | None = None

    @property
    def passed(self) -> bool:
        if self.cap is not None and self.residuals[0] > self.cap:
            return False
        if self.estimate.exact:
            return True
        lo, hi = self.band
        return all(lo <= p <= hi for p in self.estimate.orders)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "h": list(self.hs),
            "residuals": list(self.residuals),
            "order": self.estimate.p,
            "orders": list(self.estimate.orders),
            "passed": self.passed,
        }


def convergence_report(name, hs, residuals, band=(1.8, 2.2), cap=None, floor=1e-13) -> ConvergenceReport:
    return ConvergenceReport(name, list(hs), list(residuals), estimate_order(residuals, floor), band, cap)


def coarse_max(grid: np.ndarray, step: int, offset: int = 1) -> float:
    """Max |value| over nodes shared with a grid ``step`` times coarser.

    ``grid`` holds values on interior nodes starting at node ``offset``.
    """
    start = (step - offset) % step
    sub = grid[start::step, start::step]
    return float(np.max(np.abs(sub))) if sub.size else 0.0


# ---------------------------------------------------------------- Goursat

@dataclass
class GoursatProblem:
    """Boundary traces of the Toda system on x = x0 and y = y0.

    ``y_west[i]`` has shape (ny+1, d, d) (values on x = x0), ``y_south[i]``
    shape (nx+1, d, d).  The dressed coefficients below the top grade are
    given where they start their march: pibar on x = x0, pi on y = y0, and
    Abar^{i+1,i} on x = x0.  Top-grade coefficients are the undressed P and Pbar.
    """

    sites: tuple[Site, ...]
    M: int
    xs: np.ndarray
    ys: np.ndarray
    h: float
    y_west: list
    y_south: list
    pibar_west: dict = field(default_factory=dict)
    pi_south: dict = field(default_factory=dict)
    abar_west: dict = field(default_factory=dict)
    P_top: dict = field(default_factory=dict)
    Pbar_top: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, (w, s) in enumerate(zip(self.y_west, self.y_south)):
            if np.max(np.abs(w[0] - s[0])) > 1e-12 * max(1.0, np.max(np.abs(w[0]))):
                raise ValueError(f"boundary traces of site {i + 1} disagree at the corner")

    @classmethod
    def from_fields(cls, field_, dressed, spec: CoefficientSpec) -> "GoursatProblem":
        """Boundary data read off a sampled solution (and nothing else)."""
        S, M = field_.S, spec.M
        nx, ny = field_.y[0].shape[:2]
        y_west = [y[0].copy() for y in field_.y]
        y_south = [y[:, 0].copy() for y in field_.y]

        def line(arr, axis):
            arr = np.broadcast_to(arr, (nx, ny) + arr.shape[-2:])
            return (arr[0] if axis == "west" else arr[:, 0]).copy()

        pib = {k: line(v, "west") for k, v in dressed.pibar.items() if k[0] < M}
        pi = {k: line(v, "south") for k, v in dressed.pi.items() if k[0] < M}
        ab = {(i + 1, i): line(dressed.corrections.Abar[(i + 1, i)], "west")
              for i in range(1, S) if (i + 1, i) in dressed.corrections.Abar}
        P_top = {k: v for k, v in spec.P.items() if k[0] == M}
        Pbar_top = {k: v for k, v in spec.Pbar.items() if k[0] == M}
        return cls(field_.sites, M, field_.xs, field_.ys, field_.h, y_west, y_south, pib, pi, ab, P_top, Pbar_top)


@dataclass
class GoursatResult:
    y: list
    pibar: dict
    pi: dict
    abar: dict
    deviation: float | None = None
    abar_deviation: float | None = None


class _Coefficients:
    """Node-wise access to pi/pibar, substituting the fixed top grade."""

    def __init__(self, prob: GoursatProblem, pib, pi, x, y):
        self.prob, self.pib, self.pi, self.x, self.y = prob, pib, pi, x, y

    def _top(self, table, key, t, shape):
        arr = table.get(key)
        if arr is None:
            return np.zeros((len(t),) + shape)
        return poly_eval(np.asarray(arr, dtype=float)[None], t[:, None, None])

    def pibar(self, r, i):
        sites = self.prob.sites
        if r == self.prob.M:
            shape = (sites[i - 1].dim, sites[i + r - 1].dim)
            return self._top(self.prob.Pbar_top, (r, i), np.atleast_1d(self.y), shape)
        return self.pib[(r, i)]

    def pi_(self, r, i):
        sites = self.prob.sites
        if r == self.prob.M:
            shape = (sites[i + r - 1].dim, sites[i - 1].dim)
            return self._top(self.prob.P_top, (r, i), np.atleast_1d(self.x), shape)
        return self.pi[(r, i)]


def _rhs_terms(prob: GoursatProblem, ys, yinv, co: _Coefficients):
    """Right sides of the y-equation and the pi/pibar/Abar flows at nodes."""
    S, M = len(prob.sites), prob.M
    src = []
    for i in range(1, S + 1):
        acc = np.zeros_like(ys[i - 1])
        for r in range(1, M + 1):
            if i + r <= S:
                acc = acc + co.pibar(r, i) @ ys[i + r - 1] @ co.pi_(r, i)
            if i - r >= 1:
                acc = acc - ys[i - 1] @ co.pi_(r, i - r) @ yinv[i - r - 1] @ co.pibar(r, i - r) @ ys[i - 1]
        src.append(acc)
    fx, fy = {}, {}
    for (r, i) in co.pib:
        acc = 0
        for q in range(1, M - r + 1):
            if i + r + q <= S:
                acc = acc + co.pibar(r + q, i) @ ys[i + r + q - 1] @ co.pi_(q, i + r) @ yinv[i + r - 1]
            if i - q >= 1:
                acc = acc - ys[i - 1] @ co.pi_(q, i - q) @ yinv[i - q - 1] @ co.pibar(q + r, i - q)
        fx[(r, i)] = acc if not np.isscalar(acc) else np.zeros_like(co.pib[(r, i)])
    for (r, i) in co.pi:
        acc = 0
        for q in range(1, M - r + 1):
            if i + r + q <= S:
                acc = acc + yinv[i + r - 1] @ co.pibar(q, i + r) @ ys[i + r + q - 1] @ co.pi_(r + q, i)
            if i - q >= 1:
                acc = acc - co.pi_(r + q, i - q) @ yinv[i - q - 1] @ co.pibar(q, i - q) @ ys[i - 1]
        fy[(r, i)] = acc if not np.isscalar(acc) else np.zeros_like(co.pi[(r, i)])
    fa = {}
    for (a, i) in prob.abar_west:
        fa[(a, i)] = ys[a - 1] @ co.pi_(1, i) @ yinv[i - 1]
    return src, fx, fy, fa


def _inverse(y, where):
    det = np.linalg.det(y)
    if not np.all(np.isfinite(det)) or np.any(np.abs(det) < 1e-300):
        raise GoursatBreakdownError("y lost invertibility", where)
    return np.linalg.inv(y)


def goursat_integrate(prob: GoursatProblem, reference: list | None = None,
                      abar_reference: dict | None = None, corrector_steps: int = 2) -> GoursatResult:
    """March the hyperbolic system cell by cell along anti-diagonals.

    Cell (C, E, N) -> NE:
        y_NE  = y_N + y_E - y_C + h^2 [y_y y^-1 y_x + source](cell centre)
        pibar_NE = pibar_N + h/2 (F_x(N) + F_x(NE))     (trapezoid in x)
        pi_NE    = pi_E    + h/2 (F_y(E) + F_y(NE))     (trapezoid in y)
    starting from an explicit predictor and refined by ``corrector_steps``
    corrector passes.  All cells on one anti-diagonal are advanced at once.
    """
    nx, ny = len(prob.xs), len(prob.ys)
    h = prob.h
    S = len(prob.sites)
    Y = []
    for i in range(S):
        d = prob.sites[i].dim
        arr = np.full((nx, ny, d, d), np.nan)
        arr[0, :] = prob.y_west[i]
        arr[:, 0] = prob.y_south[i]
        Y.append(arr)
    PB = {}
    for k, v in prob.pibar_west.items():
        arr = np.full((nx, ny) + v.shape[-2:], np.nan)
        arr[0, :] = v
        PB[k] = arr
    PI = {}
    for k, v in prob.pi_south.items():
        arr = np.full((nx, ny) + v.shape[-2:], np.nan)
        arr[:, 0] = v
        PI[k] = arr
    AB = {}
    for k, v in prob.abar_west.items():
        arr = np.full((nx, ny) + v.shape[-2:], np.nan)
        arr[0, :] = v
        AB[k] = arr
    # pibar is only known on x = x0 and pi on y = y0; the missing boundary
    # lines are filled by 1-D marches before the interior sweep.
    _fill_lines(prob, Y, PB, PI, AB)

    X, Yc = prob.xs, prob.ys
    for diag in range(0, nx + ny - 3):
        lo = max(0, diag - (ny - 2))
        hi = min(diag, nx - 2)
        ix = np.arange(lo, hi + 1)
        iy = diag - ix
        C = (ix, iy)
        E = (ix + 1, iy)
        Nn = (ix, iy + 1)
        NE = (ix + 1, iy + 1)

        def nodes(idx):
            ys_ = [y[idx] for y in Y]
            return ys_, {k: v[idx] for k, v in PB.items()}, {k: v[idx] for k, v in PI.items()}

        yC, pbC, piC = nodes(C)
        yE, pbE, piE = nodes(E)
        yN, pbN, piN = nodes(Nn)
        invC = [_inverse(y, (X[ix[0]], Yc[iy[0]])) for y in yC]
        invE = [_inverse(y, "east nodes") for y in yE]
        invN = [_inverse(y, "north nodes") for y in yN]
        _, fxN, _, faN = _rhs_terms(prob, yN, invN, _Coefficients(prob, pbN, piN, X[ix], Yc[iy + 1]))
        _, _, fyE, _ = _rhs_terms(prob, yE, invE, _Coefficients(prob, pbE, piE, X[ix + 1], Yc[iy]))
        srcC, _, _, _ = _rhs_terms(prob, yC, invC, _Coefficients(prob, pbC, piC, X[ix], Yc[iy]))

        # predictor
        yNE = []
        for i in range(S):
            yx = (yE[i] - yC[i]) / h
            yy = (yN[i] - yC[i]) / h
            yNE.append(yN[i] + yE[i] - yC[i] + h * h * (yy @ invC[i] @ yx + srcC[i]))
        pbNE = {k: pbN[k] + h * fxN[k] for k in pbN}
        piNE = {k: piE[k] + h * fyE[k] for k in piE}

        xc = X[ix] + h / 2
        yc = Yc[iy] + h / 2
        for _ in range(corrector_steps):
            invNE = [_inverse(y, (X[ix[0]] + h, Yc[iy[0]] + h)) for y in yNE]
            _, fxNE, fyNE, _ = _rhs_terms(prob, yNE, invNE, _Coefficients(prob, pbNE, piNE, X[ix + 1], Yc[iy + 1]))
            pbNE = {k: pbN[k] + h / 2 * (fxN[k] + fxNE[k]) for k in pbN}
            piNE = {k: piE[k] + h / 2 * (fyE[k] + fyNE[k]) for k in piE}
            ym = [(a + b + c + d) / 4 for a, b, c, d in zip(yC, yE, yN, yNE)]
            pbm = {k: (pbC[k] + pbE[k] + pbN[k] + pbNE[k]) / 4 for k in pbC}
            pim = {k: (piC[k] + piE[k] + piN[k] + piNE[k]) / 4 for k in piC}
            invm = [_inverse(y, "cell centre") for y in ym]
            srcm, _, _, _ = _rhs_terms(prob, ym, invm, _Coefficients(prob, pbm, pim, xc, yc))
            new = []
            for i in range(S):
                yx = ((yE[i] - yC[i]) + (yNE[i] - yN[i])) / (2 * h)
                yy = ((yN[i] - yC[i]) + (yNE[i] - yE[i])) / (2 * h)
                new.append(yN[i] + yE[i] - yC[i] + h * h * (yy @ invm[i] @ yx + srcm[i]))
            yNE = new
        invNE = [_inverse(y, "north-east nodes") for y in yNE]
        _, _, _, faNE = _rhs_terms(prob, yNE, invNE, _Coefficients(prob, pbNE, piNE, X[ix + 1], Yc[iy + 1]))
        for i in range(S):
            Y[i][NE] = yNE[i]
        for k in PB:
            PB[k][NE] = pbNE[k]
        for k in PI:
            PI[k][NE] = piNE[k]
        for k in AB:
            AB[k][NE] = AB[k][Nn] + h / 2 * (faN[k] + faNE[k])

    result = GoursatResult(Y, PB, PI, AB)
    if reference is not None:
        result.deviation = relative_deviation(Y, reference)
    if abar_reference is not None and AB:
        result.abar_deviation = relative_deviation([AB[k] for k in sorted(AB)],
                                                   [np.broadcast_to(abar_reference[k], AB[k].shape) for k in sorted(AB)])
    return result


def _fill_lines(prob, Y, PB, PI, AB):
    """Complete the boundary lines before the interior sweep.

    pibar and Abar evolve in x, so they are marched along y = y0 where pi is
    known; pi evolves in y and is marched along x = x0 where pibar is known.
    Both marches use the trapezoid rule with two corrector passes.
    """
    X, Yc, h = prob.xs, prob.ys, prob.h
    for ix in range(len(X) - 1):
        a = (np.array([ix]), np.array([0]))
        b = (np.array([ix + 1]), np.array([0]))
        _, fa, _, ga = _line_rhs(prob, Y, PB, PI, a, X[[ix]], Yc[[0]])
        for k in PB:
            PB[k][b] = PB[k][a] + h * fa[k]
        for _ in range(2):
            _, fb, _, _ = _line_rhs(prob, Y, PB, PI, b, X[[ix + 1]], Yc[[0]])
            for k in PB:
                PB[k][b] = PB[k][a] + h / 2 * (fa[k] + fb[k])
        _, _, _, gb = _line_rhs(prob, Y, PB, PI, b, X[[ix + 1]], Yc[[0]])
        for k in AB:
            AB[k][b] = AB[k][a] + h / 2 * (ga[k] + gb[k])
    for iy in range(len(Yc) - 1):
        a = (np.array([0]), np.array([iy]))
        b = (np.array([0]), np.array([iy + 1]))
        _, _, fa, _ = _line_rhs(prob, Y, PB, PI, a, X[[0]], Yc[[iy]])
        for k in PI:
            PI[k][b] = PI[k][a] + h * fa[k]
        for _ in range(2):
            _, _, fb, _ = _line_rhs(prob, Y, PB, PI, b, X[[0]], Yc[[iy + 1]])
            for k in PI:
                PI[k][b] = PI[k][a] + h / 2 * (fa[k] + fb[k])


def _line_rhs(prob, Y, PB, PI, idx, x, y):
    ys_ = [v[idx] for v in Y]
    inv = [_inverse(v, (float(x[0]), float(y[0]))) for v in ys_]
    co = _Coefficients(prob, {k: v[idx] for k, v in PB.items()}, {k: v[idx] for k, v in PI.items()}, x, y)
    return _rhs_terms(prob, ys_, inv, co)


def relative_deviation(fields, reference) -> float:
    num = max(float(np.nanmax(np.abs(f - r))) for f, r in zip(fields, reference))
    den = max(float(np.nanmax(np.abs(r))) for r in reference)
    return num / max(den, 1e-300)
