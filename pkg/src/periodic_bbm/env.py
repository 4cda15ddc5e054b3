"""Periodic environments: branching rate g, drift mu, volatility sigma, offspring laws.

A coefficient is stored as samples on the uniform grid x_j = j * period / n,
j = 0..n-1, and evaluated through linear or trigonometric interpolation after
reducing x modulo the period.
"""
from __future__ import annotations

import ast
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.optimize import minimize_scalar

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_GRID = 1024
NORMALIZATION_TOL = 1e-12
ENV_KEYS = frozenset({"period", "g", "mu", "sigma", "offspring"})


class ConfigError(ValueError):
    """Raised for malformed or invalid environment configuration."""


def _reduce(x, period):
    r = np.mod(x, period)
    # np.mod can round up to `period` for tiny negative x
    return np.where(r >= period, 0.0, r)


@dataclass(frozen=True, eq=False)
class PeriodicFunction:
    period: float
    samples: np.ndarray
    interpolation: str = "linear"
    strictly_positive: bool = False
    _coeffs: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).ravel()
        if not self.period > 0 or not math.isfinite(self.period):
            raise ConfigError(f"period must be positive, got {self.period}")
        if samples.size == 0:
            raise ConfigError("samples must be non-empty")
        if not np.all(np.isfinite(samples)):
            raise ConfigError("samples must be finite")
        if self.interpolation not in ("linear", "trigonometric"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        samples.setflags(write=False)
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "samples", samples)
        if self.interpolation == "trigonometric":
            object.__setattr__(self, "_coeffs", np.fft.rfft(samples) / samples.size)
        if self.strictly_positive and not self.bounds()[0] > 0:
            raise ConfigError("function must be strictly positive")

    @classmethod
    def constant(cls, value: float, period: float = 1.0, n: int = DEFAULT_GRID, **kw):
        return cls(period, np.full(n, float(value)), **kw)

    @classmethod
    def from_callable(cls, fn, period: float = 1.0, n: int = DEFAULT_GRID, **kw):
        values = np.broadcast_to(np.asarray(fn(grid(period, n)), dtype=float), (n,))
        return cls(period, values, **kw)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def h(self) -> float:
        return self.period / self.n

    def nodes(self) -> np.ndarray:
        return grid(self.period, self.n)

    def __call__(self, x):
        return eval_periodic(self, x)

    def bounds(self) -> tuple[float, float]:
        return bounds(self)

    def resample(self, n: int) -> "PeriodicFunction":
        """Linear-mode copy sampled at n nodes (used by the compiled kernels)."""
        if n == self.n and self.interpolation == "linear":
            return self
        return PeriodicFunction(self.period, self(grid(self.period, n)), "linear",
                                self.strictly_positive)

    def shifted(self, s: float) -> "PeriodicFunction":
        """x -> f(x + s)."""
        return PeriodicFunction(self.period, self(self.nodes() + s), self.interpolation,
                                self.strictly_positive)

    def reflected(self, sign: float = 1.0) -> "PeriodicFunction":
        """x -> sign * f(-x); exact on the node grid."""
        idx = (-np.arange(self.n)) % self.n
        return PeriodicFunction(self.period, sign * self.samples[idx], self.interpolation,
                                self.strictly_positive)


def grid(period: float, n: int) -> np.ndarray:
    return np.arange(n) * (period / n)


def eval_periodic(f: PeriodicFunction, x):
    """Interpolant of f at x, reduced modulo the period."""
    scalar = np.ndim(x) == 0
    r = _reduce(np.asarray(x, dtype=float), f.period)
    n = f.n
    if f.interpolation == "linear":
        s = r * (n / f.period)
        i = np.floor(s)
        w = s - i
        i = i.astype(np.int64) % n
        left = f.samples[i]
        out = left + w * (f.samples[(i + 1) % n] - left)
    else:
        c = f._coeffs
        weights = np.full(c.size, 2.0)
        weights[0] = 1.0
        if n % 2 == 0:
            weights[-1] = 1.0
        wc = weights * c
        k = np.arange(c.size)
        theta = ((2.0 * np.pi / f.period) * r).ravel()
        out = np.empty(theta.size)
        for lo in range(0, theta.size, 2048):
            chunk = theta[lo:lo + 2048]
            out[lo:lo + 2048] = np.real(np.exp(1j * np.multiply.outer(chunk, k)) @ wc)
        out = out.reshape(r.shape)
    return float(out) if scalar else out


def bounds(f: PeriodicFunction) -> tuple[float, float]:
    """(min, max) of the interpolant over one period."""
    if f.interpolation == "linear":
        return float(f.samples.min()), float(f.samples.max())
    n, m = f.n, 16 * f.n
    spec = np.zeros(m // 2 + 1, dtype=complex)
    spec[:f._coeffs.size] = f._coeffs * m
    if n % 2 == 0:
        spec[n // 2] *= 0.5
    fine = np.fft.irfft(spec, m)
    h = f.period / m
    # the fine grid can sit just off a true extremum; polish each one locally
    lo = _polish(f, h * int(np.argmin(fine)), h, 1.0)
    hi = -_polish(f, h * int(np.argmax(fine)), h, -1.0)
    return (float(min(fine.min(), f.samples.min(), lo)),
            float(max(fine.max(), f.samples.max(), hi)))


def _polish(f: PeriodicFunction, x0: float, h: float, sign: float) -> float:
    res = minimize_scalar(lambda x: sign * float(f(x)), bounds=(x0 - h, x0 + h),
                          method="bounded", options={"xatol": 1e-12 * f.period})
    return float(res.fun)


# --- expressions -----------------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}


def eval_expression(text: str, x: np.ndarray) -> np.ndarray:
    """Evaluate an arithmetic expression in x over {+,-,*,/, sin, cos, exp, pi}."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"syntax error in expression {text!r}: {exc.msg}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "x":
                return x
            if node.id == "pi":
                return math.pi
            raise ConfigError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigError(f"unsupported construct in expression {text!r}")

    with np.errstate(all="raise"):
        try:
            value = ev(tree)
        except FloatingPointError as exc:
            raise ConfigError(f"expression {text!r} is not finite: {exc}") from None
    return np.broadcast_to(np.asarray(value, dtype=float), x.shape).copy()


def periodic_from_value(value: Any, period: float, n: int = DEFAULT_GRID,
                        strictly_positive: bool = False, name: str = "value") -> PeriodicFunction:
    """Build a PeriodicFunction from a number, an expression string or a sample list."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: boolean is not a valid coefficient")
    if isinstance(value, (int, float)):
        samples = np.full(n, float(value))
    elif isinstance(value, str):
        samples = eval_expression(value, grid(period, n))
    elif isinstance(value, (list, tuple)):
        try:
            samples = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: samples must be numbers") from None
        if samples.ndim != 1:
            raise ConfigError(f"{name}: samples must be a flat list")
    else:
        raise ConfigError(f"{name}: unsupported value {value!r}")
    try:
        return PeriodicFunction(period, samples, strictly_positive=strictly_positive)
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from None


# --- offspring ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Per-position offspring distributions, piecewise constant on cells.

    probabilities[j, k] is the chance of k children for a parent in the cell
    [j * period / n_pos, (j + 1) * period / n_pos).
    """

    probabilities: np.ndarray
    period: float = 1.0
    min_children: int = 2

    def __post_init__(self):
        p = np.atleast_2d(np.array(self.probabilities, dtype=float))
        if p.size == 0 or p.shape[1] < 1:
            raise ConfigError("offspring law is empty")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ConfigError("offspring probabilities must be finite and non-negative")
        sums = p.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOL):
            raise ConfigError(f"offspring vector not normalized (sums {sums.tolist()})")
        if p.shape[1] > self.min_children and np.any(p[:, :self.min_children] > 0):
            raise ConfigError(f"offspring law must put zero mass below {self.min_children} children")
        if p.shape[1] <= self.min_children:
            raise ConfigError(f"offspring law needs support at or above {self.min_children}")
        # truncate the negligible tail, folding its mass into the last kept entry
        keep = np.nonzero(np.any(p > NORMALIZATION_TOL, axis=0))[0][-1] + 1
        if keep < p.shape[1]:
            p[:, keep - 1] += p[:, keep:].sum(axis=1)
            p = p[:, :keep]
        p /= p.sum(axis=1, keepdims=True)
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "period", float(self.period))

    @classmethod
    def deterministic(cls, k: int, period: float = 1.0, min_children: int = 2):
        p = np.zeros((1, k + 1))
        p[0, k] = 1.0
        return cls(p, period, min_children)

    @property
    def n_positions(self) -> int:
        return self.probabilities.shape[0]

    @property
    def rho(self) -> np.ndarray:
        k = np.arange(self.probabilities.shape[1])
        return self.probabilities @ k

    @property
    def kappa(self) -> np.ndarray:
        k = np.arange(self.probabilities.shape[1])
        return self.probabilities @ (k * k)

    def cell_index(self, x):
        r = _reduce(np.asarray(x, dtype=float), self.period)
        return np.floor(r * (self.n_positions / self.period)).astype(np.int64) % self.n_positions

    def rho_at(self, x):
        return self.rho[self.cell_index(x)]

    def generating(self, x, u):
        """sum_k pi_k(x) u^k."""
        p = self.probabilities[self.cell_index(x)]
        return np.polynomial.polynomial.polyval(u, p.T, tensor=False)

    def deterministic_counts(self) -> np.ndarray:
        """k where the law at a cell is a point mass at k, else -1."""
        p = self.probabilities
        k = np.argmax(p, axis=1)
        return np.where(p[np.arange(p.shape[0]), k] == 1.0, k, -1).astype(np.int64)

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probabilities, axis=1)
        c[:, -1] = 1.0
        return c

    def reflected(self) -> "OffspringLaw":
        idx = (self.n_positions - 1 - np.arange(self.n_positions))
        return OffspringLaw(self.probabilities[idx], self.period, self.min_children)

    @classmethod
    def from_entries(cls, entries: Any, period: float, min_children: int = 2) -> "OffspringLaw":
        if not isinstance(entries, (list, tuple)) or not entries:
            raise ConfigError("offspring must be a non-empty array of tables")
        rows: dict[int, list] = {}
        for entry in entries:
            if not isinstance(entry, Mapping):
                raise ConfigError("offspring entries must be tables")
            unknown = set(entry) - {"position_index", "probabilities"}
            if unknown:
                raise ConfigError(f"unknown offspring keys: {sorted(unknown)}")
            if "probabilities" not in entry:
                raise ConfigError("offspring entry lacks probabilities")
            idx = entry.get("position_index", 0)
            if isinstance(idx, bool) or not isinstance(idx, int):
                raise ConfigError("position_index must be an integer")
            if idx in rows:
                raise ConfigError(f"duplicate position_index {idx}")
            rows[idx] = list(entry["probabilities"])
        n = len(rows)
        if sorted(rows) != list(range(n)):
            raise ConfigError("position_index values must cover 0..n-1")
        width = max(len(r) for r in rows.values())
        try:
            p = np.array([r + [0.0] * (width - len(r)) for _, r in sorted(rows.items())], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("offspring probabilities must be numbers") from None
        return cls(p, period, min_children)


BINARY = OffspringLaw.deterministic(2)


# --- environment -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    g: PeriodicFunction
    mu: PeriodicFunction | None = None
    sigma: PeriodicFunction | None = None
    offspring: OffspringLaw | None = None

    def __post_init__(self):
        if not self.g.bounds()[0] > 0:
            raise ConfigError("g must be strictly positive")
        if self.sigma is not None and not self.sigma.bounds()[0] > 0:
            raise ConfigError("sigma must be strictly positive")
        for name in ("mu", "sigma"):
            f = getattr(self, name)
            if f is not None and f.period != self.g.period:
                raise ConfigError(f"{name} period differs from g period")
        if self.offspring is not None:
            if self.offspring.period != self.g.period:
                raise ConfigError("offspring period differs from g period")
            if self.offspring.min_children < 2:
                raise ConfigError("continuous models need zero mass on 0 and 1 children")

    @property
    def period(self) -> float:
        return self.g.period

    @property
    def is_classical(self) -> bool:
        """Pure BBM: no drift, unit volatility, binary branching."""
        return self.mu is None and self.sigma is None and self.offspring is None

    def mu_or_zero(self, n: int | None = None) -> PeriodicFunction:
        if self.mu is not None:
            return self.mu
        return PeriodicFunction.constant(0.0, self.period, n or self.g.n)

    def sigma_or_one(self, n: int | None = None) -> PeriodicFunction:
        if self.sigma is not None:
            return self.sigma
        return PeriodicFunction.constant(1.0, self.period, n or self.g.n)

    def offspring_or_binary(self) -> OffspringLaw:
        if self.offspring is not None:
            return self.offspring
        return OffspringLaw.deterministic(2, self.period)

    def shifted(self, s: float) -> "EnvironmentSpec":
        """Environment x -> coefficients at x + s (offspring must be constant)."""
        if self.offspring is not None and self.offspring.n_positions > 1:
            raise ValueError("shifting position-dependent offspring laws is not supported")
        return EnvironmentSpec(
            self.g.shifted(s),
            None if self.mu is None else self.mu.shifted(s),
            None if self.sigma is None else self.sigma.shifted(s),
            self.offspring,
        )

    def reflected(self) -> "EnvironmentSpec":
        """Law of -X: coefficients g(-x), -mu(-x), sigma(-x), pi(-x)."""
        return EnvironmentSpec(
            self.g.reflected(),
            None if self.mu is None else self.mu.reflected(-1.0),
            None if self.sigma is None else self.sigma.reflected(),
            None if self.offspring is None else self.offspring.reflected(),
        )


def env_from_mapping(doc: Mapping[str, Any], n_grid: int = DEFAULT_GRID) -> EnvironmentSpec:
    unknown = set(doc) - ENV_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    if "g" not in doc:
        raise ConfigError("missing required key 'g'")
    period = doc.get("period", 1.0)
    if isinstance(period, bool) or not isinstance(period, (int, float)) or not period > 0:
        raise ConfigError(f"period must be a positive number, got {period!r}")
    period = float(period)
    g = periodic_from_value(doc["g"], period, n_grid, name="g")
    if not g.bounds()[0] > 0:
        raise ConfigError("g must be strictly positive (non-positive value found)")
    mu = periodic_from_value(doc["mu"], period, n_grid, name="mu") if "mu" in doc else None
    sigma = None
    if "sigma" in doc:
        sigma = periodic_from_value(doc["sigma"], period, n_grid, name="sigma")
        if not sigma.bounds()[0] > 0:
            raise ConfigError("sigma must be strictly positive (non-positive value found)")
    offspring = None
    if "offspring" in doc:
        offspring = OffspringLaw.from_entries(doc["offspring"], period, min_children=2)
    return EnvironmentSpec(g, mu, sigma, offspring)


def load_document(config_text: str) -> dict:
    try:
        return tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None


def parse_env(config_text: str, n_grid: int = DEFAULT_GRID) -> EnvironmentSpec:
    """Parse a TOML environment document into a validated EnvironmentSpec."""
    return env_from_mapping(load_document(config_text), n_grid)
