"""Experiment configuration: JSON parsing, validation and command-line overrides.

Polynomial entries are coefficient arrays, lowest degree first.  A block can
also be a bare number (a constant) or one of the literals "identity" and
"zero"; the whole coefficient table can be given as "identity" or "zero".
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cartan import GradingError, GradingVector, InvalidRankError, cartan_matrix, lattice_sites
from .flows import DEFAULT_DEGREE_CAP, CoefficientSpec, GridSpec


class ConfigError(ValueError):
    """Bad configuration; ``where`` names the offending field or position."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


DEFAULTS = {
    "M": 1,
    "mode": "float",
    "coefficients": "identity",
    "grid": {"x0": 0.0, "x1": 1.0, "y0": 0.0, "y1": 1.0, "h": 0.01, "refinements": 3},
    "tolerances": {
        "identity": 1e-9,
        "order_band": [1.8, 2.2],
        "goursat_band": [1.7, 2.3],
        "goursat_deviation": 1e-4,
    },
    "seed": 0,
    "samples": 100,
    "goursat": True,
}


@dataclass
class ExperimentConfig:
    n: int
    grading: GradingVector
    M: int
    mode: str
    coefficients: CoefficientSpec
    grid: GridSpec
    tolerances: dict
    seed: int
    samples: int
    goursat: bool
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def levels(self) -> int:
        return self.grid.levels

    def canonical(self) -> dict:
        """The effective configuration as plain JSON data."""
        return copy.deepcopy(self.raw)

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {json.dumps(value)}")
    if not math.isfinite(value):
        raise ConfigError(where, "number must be finite")
    return float(value)


def _integer(value, where: str, low: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(where, f"expected an integer, got {json.dumps(value)}")
    if low is not None and value < low:
        raise ConfigError(where, f"must be at least {low}")
    return value


def _grading(value, where: str) -> GradingVector:
    try:
        if isinstance(value, str):
            return GradingVector.parse(value)
        if isinstance(value, list):
            return GradingVector(tuple(_integer(v, f"{where}[{k}]") for k, v in enumerate(value)))
    except (GradingError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None
    raise ConfigError(where, "expected a string like '0,1,0' or a list of 0/1")


def _poly(value, where: str) -> list[float]:
    if isinstance(value, list):
        if not value:
            raise ConfigError(where, "empty coefficient list")
        return [_number(v, f"{where}[{k}]") for k, v in enumerate(value)]
    return [_number(value, where)]


def _block(value, shape: tuple[int, int], where: str, degree_cap: int) -> np.ndarray | None:
    rows, cols = shape
    if value == "zero":
        return None
    if value == "identity":
        return np.eye(rows, cols)[..., None]
    if not isinstance(value, list) or len(value) != rows:
        raise ConfigError(where, f"expected {rows} rows (block shape {rows}x{cols})")
    entries = []
    for a, row in enumerate(value):
        if not isinstance(row, list) or len(row) != cols:
            raise ConfigError(f"{where}[{a}]", f"expected {cols} entries")
        entries.append([_poly(v, f"{where}[{a}][{b}]") for b, v in enumerate(row)])
    deg = max(len(p) for row in entries for p in row)
    if deg - 1 > degree_cap:
        raise ConfigError(where, f"polynomial degree {deg - 1} exceeds the cap {degree_cap}")
    out = np.zeros((rows, cols, deg))
    for a, row in enumerate(entries):
        for b, p in enumerate(row):
            out[a, b, : len(p)] = p
    return out


def _coefficients(value, n: int, grading: GradingVector, M: int, where: str) -> CoefficientSpec:
    if value == "identity":
        return CoefficientSpec.unit(n, grading, M)
    if value == "zero":
        return CoefficientSpec.zero(n, grading, M)
    if not isinstance(value, dict):
        raise ConfigError(where, "expected 'identity', 'zero' or an object with P/Pbar/A0/B0")
    unknown = set(value) - {"P", "Pbar", "A0", "B0", "degree_cap"}
    if unknown:
        raise ConfigError(where, f"unknown keys {sorted(unknown)}")
    cap = _integer(value.get("degree_cap", DEFAULT_DEGREE_CAP), f"{where}.degree_cap", 0)
    sites = lattice_sites(grading)
    S = len(sites)
    tables = {}
    for name in ("P", "Pbar"):
        table = {}
        spec = value.get(name, "zero")
        if spec in ("identity", "zero"):
            spec = {str(k): {str(i): spec for i in range(1, S - k + 1)} for k in range(1, M + 1)}
        if not isinstance(spec, dict):
            raise ConfigError(f"{where}.{name}", "expected an object keyed by grade")
        for ks, by_site in spec.items():
            w = f"{where}.{name}.{ks}"
            try:
                k = int(ks)
            except ValueError:
                raise ConfigError(w, "grade keys must be integers") from None
            if not 1 <= k <= M:
                raise ConfigError(w, f"grade outside 1..{M}")
            if not isinstance(by_site, dict):
                raise ConfigError(w, "expected an object keyed by site")
            for is_, block in by_site.items():
                ws = f"{w}.{is_}"
                try:
                    i = int(is_)
                except ValueError:
                    raise ConfigError(ws, "site keys must be integers") from None
                if not 1 <= i <= S - k:
                    raise ConfigError(ws, f"site outside 1..{S - k} for grade {k}")
                di, dk = sites[i - 1].dim, sites[i + k - 1].dim
                shape = (dk, di) if name == "P" else (di, dk)
                arr = _block(block, shape, ws, cap)
                if arr is not None:
                    table[(k, i)] = arr
        tables[name] = table
    for name in ("A0", "B0"):
        table = {}
        spec = value.get(name, {})
        if spec == "zero":
            spec = {}
        if not isinstance(spec, dict):
            raise ConfigError(f"{where}.{name}", "expected an object keyed by simple root")
        for rs, poly in spec.items():
            w = f"{where}.{name}.{rs}"
            try:
                r = int(rs)
            except ValueError:
                raise ConfigError(w, "root keys must be integers") from None
            if not 1 <= r <= n:
                raise ConfigError(w, f"root outside 1..{n}")
            table[r] = np.array(_poly(poly, w))
        tables[name] = table
    try:
        return CoefficientSpec(n, grading, M, tables["P"], tables["Pbar"], tables["A0"], tables["B0"], cap)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source} line {exc.lineno} column {exc.colno}", exc.msg) from None
    if not isinstance(data, dict):
        raise ConfigError(source, "top level must be an object")
    return data


def load_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    return parse_text(text, str(path))


def build_config(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate raw JSON data (plus overrides) into an ExperimentConfig."""
    known = set(DEFAULTS) | {"n", "grading", "name", "description"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError("config", f"unknown keys {sorted(unknown)}")
    raw = _merge(DEFAULTS, data)
    if overrides:
        raw = _merge(raw, overrides)
    if "n" not in raw:
        raise ConfigError("n", "rank is required (config key 'n' or --n)")
    n = _integer(raw["n"], "n", 1)
    try:
        cartan_matrix(n)
    except InvalidRankError as exc:
        raise ConfigError("n", str(exc)) from None
    if "grading" not in raw:
        raw["grading"] = ",".join(["1"] * n)
    grading = _grading(raw["grading"], "grading")
    if len(grading) != n:
        raise ConfigError("grading", f"has {len(grading)} entries, expected {n}")
    raw["grading"] = str(grading)
    M = _integer(raw["M"], "M", 1)
    S = len(lattice_sites(grading))
    if M > max(S - 1, 1):
        raise ConfigError("M", f"exceeds the largest grade {max(S - 1, 1)} of this grading")
    mode = raw["mode"]
    if mode not in ("float", "exact"):
        raise ConfigError("mode", f"expected 'float' or 'exact', got {json.dumps(mode)}")
    coeffs = _coefficients(raw["coefficients"], n, grading, M, "coefficients")
    g = raw["grid"]
    if not isinstance(g, dict):
        raise ConfigError("grid", "expected an object")
    unknown = set(g) - set(DEFAULTS["grid"])
    if unknown:
        raise ConfigError("grid", f"unknown keys {sorted(unknown)}")
    x0, x1, y0, y1, h = (_number(g[k], f"grid.{k}") for k in ("x0", "x1", "y0", "y1", "h"))
    levels = _integer(g["refinements"], "grid.refinements", 1)
    try:
        grid = GridSpec(x0, x1, y0, y1, h, levels)
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None
    tol = raw["tolerances"]
    if not isinstance(tol, dict):
        raise ConfigError("tolerances", "expected an object")
    unknown = set(tol) - set(DEFAULTS["tolerances"])
    if unknown:
        raise ConfigError("tolerances", f"unknown keys {sorted(unknown)}")
    for key in ("identity", "goursat_deviation"):
        if _number(tol[key], f"tolerances.{key}") <= 0:
            raise ConfigError(f"tolerances.{key}", "must be positive")
    for key in ("order_band", "goursat_band"):
        band = tol[key]
        if not isinstance(band, list) or len(band) != 2:
            raise ConfigError(f"tolerances.{key}", "expected [low, high]")
        lo, hi = (_number(v, f"tolerances.{key}[{k}]") for k, v in enumerate(band))
        if not 0 < lo < hi:
            raise ConfigError(f"tolerances.{key}", "need 0 < low < high")
    seed = _integer(raw["seed"], "seed", 0)
    samples = _integer(raw["samples"], "samples", 1)
    if not isinstance(raw["goursat"], bool):
        raise ConfigError("goursat", "expected true or false")
    return ExperimentConfig(n, grading, M, mode, coeffs, grid, dict(tol), seed, samples,
                            raw["goursat"], raw)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    data = load_file(path) if path is not None else {}
    return build_config(data, overrides)
