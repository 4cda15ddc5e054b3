"""Principal eigenvalues of the tilted periodic generator and the front constants.

gamma(lambda) is the principal eigenvalue of

    sigma^2/2 psi'' + (mu + lambda sigma^2) psi' + (lambda mu + lambda^2 sigma^2/2 + (rho-1) g) psi

on the period, discretized by second-order central differences with periodic
wrap. v* = min over lambda > 0 of gamma(lambda)/lambda, attained at lambda*.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from .env import ConfigError, EnvironmentSpec, OffspringLaw, PeriodicFunction, grid

MIN_GRID = 4
DENSE_LIMIT = 256
LAMBDA_MAX = 50.0
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
STATIONARITY_STEP = 1e-4


class EigenError(RuntimeError):
    """Principal eigenpair could not be extracted."""


class NotAttainedError(RuntimeError):
    """The minimizer of gamma(lambda)/lambda does not exist."""

    def __init__(self, message: str = "minimizer not attained"):
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class EigenPair:
    lam: float
    gamma: float
    psi: PeriodicFunction
    residual_norm: float
    env: EnvironmentSpec | None = field(default=None, repr=False)

    @property
    def v_star(self) -> float:
        return self.gamma / self.lam


@dataclass(frozen=True)
class FrontParams:
    lambda_star: float | None
    v_star: float | None
    gamma_star: float | None
    log_coeff: float | None
    attained: bool
    stationarity_gap: float | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "lambda_star": self.lambda_star,
            "v_star": self.v_star,
            "gamma_star": self.gamma_star,
            "log_coeff": self.log_coeff,
            "attained": self.attained,
        }


@dataclass(frozen=True, eq=False)
class TiltDrift:
    phi: PeriodicFunction
    source: EigenPair
    residual: float | None = None


@dataclass(frozen=True, eq=False)
class GammaCurve:
    lambdas: np.ndarray
    gammas: np.ndarray
    residuals: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.gammas / self.lambdas

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.lambdas, self.gammas])


# --- continuous generator ------------------------------------------------------

class PeriodicGenerator:
    """Coefficient samples of the tilted generator on an n-point period grid."""

    def __init__(self, env: EnvironmentSpec, n_grid: int = 1024):
        if n_grid < MIN_GRID:
            raise ValueError(f"n_grid too small: {n_grid} < {MIN_GRID}")
        self.env = env
        self.n = int(n_grid)
        self.period = env.period
        self.h = self.period / self.n
        x = grid(self.period, self.n)
        self.x = x
        s2 = env.sigma(x) ** 2 if env.sigma is not None else np.ones(self.n)
        self.half_s2 = 0.5 * s2
        self.s2 = s2
        self.mu = env.mu(x) if env.mu is not None else np.zeros(self.n)
        rho = env.offspring.rho_at(x) if env.offspring is not None else np.full(self.n, 2.0)
        self.mass = (rho - 1.0) * env.g(x)

    def diagonals(self, lam: float):
        h = self.h
        b = self.mu + lam * self.s2
        c = lam * self.mu + 0.5 * lam * lam * self.s2 + self.mass
        diff = self.half_s2 / (h * h)
        return diff - b / (2 * h), -2.0 * diff + c, diff + b / (2 * h)

    def matrix(self, lam: float, as_sparse: bool = False):
        lower, diag, upper = self.diagonals(lam)
        n = self.n
        i = np.arange(n)
        rows = np.concatenate([i, i, i])
        cols = np.concatenate([(i - 1) % n, i, (i + 1) % n])
        vals = np.concatenate([lower, diag, upper])
        m = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        return m if as_sparse else m.toarray()

    def apply(self, lam: float, v: np.ndarray) -> np.ndarray:
        """Matrix-vector product written through differences of v (no large cancellations)."""
        h = self.h
        b = self.mu + lam * self.s2
        c = lam * self.mu + 0.5 * lam * lam * self.s2 + self.mass
        fwd = np.roll(v, -1) - v
        bwd = v - np.roll(v, 1)
        return c * v + self.half_s2 * ((fwd - bwd) / (h * h)) + b * ((fwd + bwd) / (2 * h))

    def eigenpair(self, lam: float, tolerance: float = 1e-7, method: str = "auto") -> EigenPair:
        use_sparse = method == "inverse" or (method == "auto" and self.n > DENSE_LIMIT)
        a = self.matrix(lam, as_sparse=use_sparse)
        right = principal_eigenpair(a, tolerance, lam=lam, period=self.period, method=method)
        left = principal_eigenpair(a.T, tolerance, lam=lam, period=self.period, method=method)
        # two-sided Rayleigh quotient: first-order eigenvector errors cancel
        psi, ell = right.psi.samples, left.psi.samples
        gamma = float(ell @ self.apply(lam, psi) / (ell @ psi))
        residual = float(np.max(np.abs(self.apply(lam, psi) - gamma * psi)) / np.max(psi))
        return EigenPair(lam, gamma, right.psi, residual, self.env)

    def gamma(self, lam: float) -> float:
        return self.eigenpair(lam).gamma

    def gamma_and_slope(self, lam: float) -> tuple[float, float]:
        """gamma and d gamma / d lambda from left/right eigenvectors (Hellmann-Feynman)."""
        a = self.matrix(lam, as_sparse=self.n > DENSE_LIMIT)
        psi = principal_eigenpair(a, 1e-7, lam=lam, period=self.period).psi.samples
        ell = principal_eigenpair(a.T, 1e-7, lam=lam, period=self.period).psi.samples
        h = self.h
        d_psi = (np.roll(psi, -1) - np.roll(psi, 1)) / (2 * h)
        d_apply = (self.mu + lam * self.s2) * psi + self.s2 * d_psi
        norm = ell @ psi
        return float(ell @ self.apply(lam, psi) / norm), float(ell @ d_apply / norm)


def assemble_generator(env: EnvironmentSpec, lam: float, n_grid: int = 1024) -> np.ndarray:
    """Dense central-difference matrix of the tilted generator."""
    return PeriodicGenerator(env, n_grid).matrix(lam)


def _is_metzler(m) -> bool:
    if sparse.issparse(m):
        coo = m.tocoo()
        off = coo.row != coo.col
        return bool(np.all(coo.data[off] >= 0))
    off = m - np.diag(np.diag(m))
    return bool(np.all(off >= 0))


def _finish(m, gamma: float, v: np.ndarray, tolerance: float, lam: float, period: float) -> EigenPair:
    v = np.real(v)
    v = v * np.sign(v.sum()) if v.sum() != 0 else v
    scale = np.max(np.abs(v))
    if scale == 0 or not np.all(np.isfinite(v)):
        raise EigenError("eigenvector is zero or not finite")
    v = v / scale
    if np.min(v) <= 0:
        raise EigenError(f"eigenvector has mixed signs (min {np.min(v):.3e}); "
                         "the selected eigenvalue is not the Perron root")
    residual = float(np.max(np.abs(m @ v - gamma * v)))
    # allow for the rounding floor of the product itself
    norm = float(abs(m).sum(axis=1).max())
    if not residual <= tolerance + 64 * np.finfo(float).eps * norm:
        raise EigenError(f"eigen residual {residual:.3e} exceeds tolerance {tolerance:.1e}")
    h = period / v.size
    psi = v / (h * v.sum())
    return EigenPair(lam, float(gamma), PeriodicFunction(period, psi), residual)


def _dense(m, tolerance, lam, period) -> EigenPair:
    a = m.toarray() if sparse.issparse(m) else np.asarray(m, dtype=float)
    w, vecs = scipy.linalg.eig(a)
    k = int(np.argmax(w.real))
    if abs(w[k].imag) > tolerance * max(1.0, abs(w[k].real)):
        raise EigenError("principal eigenvalue is not real")
    return _finish(a, w[k].real, vecs[:, k], tolerance, lam, period)


def _inverse(m, tolerance, lam, period, max_iter: int = 500) -> EigenPair:
    a = sparse.csr_matrix(m)
    n = a.shape[0]
    # max row sum bounds the Perron root of a Metzler matrix; shift past it
    shift = float(np.max(np.asarray(a.sum(axis=1)).ravel())) + 1.0
    lu = splu(sparse.csc_matrix(shift * sparse.identity(n) - a))
    v = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        w = lu.solve(v)
        w /= w.sum()
        change = np.max(np.abs(w - v)) / np.max(np.abs(w))
        v = w
        if change < 1e-15:
            break
    av = a @ v
    gamma = float(v @ av / (v @ v))
    return _finish(a, gamma, v, tolerance, lam, period)


def principal_eigenpair(matrix, tolerance: float = 1e-7, *, lam: float = math.nan,
                        period: float = 1.0, method: str = "auto") -> EigenPair:
    """Eigenvalue of maximal real part with its positive eigenvector.

    method "dense" runs a full eigendecomposition; "inverse" runs shifted inverse
    iteration above the max row sum (valid for Metzler matrices); "auto" uses
    inverse iteration for large Metzler matrices and the dense solve otherwise.
    """
    n = matrix.shape[0]
    if method == "auto":
        method = "inverse" if n > DENSE_LIMIT and _is_metzler(matrix) else "dense"
    if method == "dense":
        return _dense(matrix, tolerance, lam, period)
    if method == "inverse":
        if not _is_metzler(matrix):
            raise EigenError("inverse iteration needs non-negative off-diagonal entries")
        return _inverse(matrix, tolerance, lam, period)
    raise ValueError(f"unknown method {method!r}")


def gamma_curve(env: EnvironmentSpec, lambdas, n_grid: int = 1024) -> GammaCurve:
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) < 0):
        raise ValueError("lambdas must be sorted ascending")
    gen = PeriodicGenerator(env, n_grid)
    pairs = [gen.eigenpair(lam) for lam in lambdas]
    return GammaCurve(lambdas, np.array([p.gamma for p in pairs]),
                      np.array([p.residual_norm for p in pairs]))


def gamma_bounds(env: EnvironmentSpec, lam: float) -> tuple[float, float]:
    """Bracket for gamma: lam^2/2 + min mass - lam |mu|, lam^2/2 + max mass + lam |mu|.

    Exact for sigma = 1; the discrete eigenvalue obeys it by the row-sum argument.
    """
    n = env.g.n
    gen = PeriodicGenerator(env, n)
    mu_norm = float(np.max(np.abs(gen.mu)))
    s2_lo, s2_hi = float(gen.s2.min()), float(gen.s2.max())
    lo = 0.5 * lam * lam * s2_lo + float(gen.mass.min()) - abs(lam) * mu_norm
    hi = 0.5 * lam * lam * s2_hi + float(gen.mass.max()) + abs(lam) * mu_norm
    return lo, hi


# --- minimization of gamma/lambda ------------------------------------------------

def _minimize_ratio(ratio: Callable[[float], float], tol: float,
                    lam_max: float = LAMBDA_MAX) -> float | None:
    """Minimizer of a unimodal ratio on (0, lam_max]; None if still decreasing at lam_max."""
    a, b, c = 0.5, 1.0, 2.0
    fa, fb, fc = ratio(a), ratio(b), ratio(c)
    # ties count as decreasing: a ratio that has flattened to rounding is not a minimum
    while not fc > fb:
        if c >= lam_max:
            return None
        a, fa, b, fb = b, fb, c, fc
        c = min(2.0 * c, lam_max)
        fc = ratio(c)
    while fa < fb:
        if a < 1e-9:
            raise EigenError("ratio keeps decreasing toward lambda = 0")
        c, fc, b, fb = b, fb, a, fa
        a = 0.5 * a
        fa = ratio(a)
    # golden section on [a, c]
    x1 = c - GOLDEN * (c - a)
    x2 = a + GOLDEN * (c - a)
    f1, f2 = ratio(x1), ratio(x2)
    while c - a > tol:
        if f1 < f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - GOLDEN * (c - a)
            f1 = ratio(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (c - a)
            f2 = ratio(x2)
    return 0.5 * (a + c)


def _front_from_gamma(gamma: Callable[[float], float], lam_star: float | None) -> FrontParams:
    if lam_star is None:
        return FrontParams(None, None, None, None, False)
    g_star = gamma(lam_star)
    v_star = g_star / lam_star
    h = STATIONARITY_STEP
    slope = (gamma(lam_star + h) - gamma(lam_star - h)) / (2 * h)
    return FrontParams(lam_star, v_star, g_star, 3.0 / (2.0 * lam_star), True, abs(slope - v_star))


def _polish(stationarity: Callable[[float], float], lam: float, width: float) -> float:
    """Secant steps on lam gamma'(lam) - gamma(lam) = 0, kept inside [lam - width, lam + width]."""
    x0, x1 = lam - 0.5 * width, lam + 0.5 * width
    f0, f1 = stationarity(x0), stationarity(x1)
    for _ in range(8):
        if f1 == f0:
            break
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        if not abs(x2 - lam) <= width:
            return lam
        x0, f0, x1 = x1, f1, x2
        f1 = stationarity(x1)
        if abs(x1 - x0) < 1e-14 * x1:
            break
    return x1


def find_front_params(env: EnvironmentSpec, tol: float = 1e-8, n_grid: int = 1024) -> FrontParams:
    """Bracket by doubling/halving from lambda = 1, golden section to width tol, then a
    secant polish of the stationarity condition (value comparisons cannot resolve the
    flat minimum below about sqrt(machine epsilon))."""
    gen = PeriodicGenerator(env, n_grid)
    lam_star = _minimize_ratio(lambda lam: gen.gamma(lam) / lam, tol)
    if lam_star is not None:
        def stationarity(lam):
            g, dg = gen.gamma_and_slope(lam)
            return lam * dg - g
        lam_star = _polish(stationarity, lam_star, max(tol, 1e-6))
    return _front_from_gamma(gen.gamma, lam_star)


def front_position(fp: FrontParams, t):
    """m_t = v* t - (3 / (2 lambda*)) log t."""
    if not fp.attained:
        raise NotAttainedError()
    t = np.asarray(t, dtype=float)
    if np.any(t < 1):
        raise ValueError("front_position needs t >= 1")
    m = fp.v_star * t - fp.log_coeff * np.log(t)
    return float(m) if m.ndim == 0 else m


def q_t(fp: FrontParams, t):
    return front_position(fp, t) / np.asarray(t, dtype=float)


# --- tilt drift --------------------------------------------------------------------

def tilt_drift(ep: EigenPair, env: EnvironmentSpec | None = None) -> TiltDrift:
    """phi = lambda + psi'/psi by central differences of log psi on the eigen grid."""
    psi = ep.psi.samples
    if np.min(psi) <= 1e-300:
        raise EigenError("psi vanishes; Perron positivity violated")
    h = ep.psi.h
    log_psi = np.log(psi)
    phi = ep.lam + (np.roll(log_psi, -1) - np.roll(log_psi, 1)) / (2 * h)
    env = env if env is not None else ep.env
    residual = None
    if env is not None:
        gen = PeriodicGenerator(env, psi.size)
        dphi = (np.roll(phi, -1) - np.roll(phi, 1)) / (2 * h)
        lhs = gen.half_s2 * (dphi + phi * phi) + gen.mu * phi
        residual = float(np.max(np.abs(lhs - ep.gamma + gen.mass)))
    return TiltDrift(PeriodicFunction(ep.psi.period, phi), ep, residual)


# --- branching random walk ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BRWModel:
    """Nearest-neighbour L-periodic kernel: kernel[x] = (p(x,x-1), p(x,x), p(x,x+1))."""

    L: int
    kernel: np.ndarray
    offspring: OffspringLaw

    def __post_init__(self):
        if isinstance(self.L, bool) or int(self.L) != self.L or self.L < 1:
            raise ConfigError(f"L must be a positive integer, got {self.L!r}")
        k = np.atleast_2d(np.array(self.kernel, dtype=float))
        if k.shape[1] != 3:
            raise ConfigError("kernel rows must be (left, stay, right)")
        if k.shape[0] == 1 and self.L > 1:
            k = np.repeat(k, self.L, axis=0)
        if k.shape[0] != self.L:
            raise ConfigError("kernel needs one row per site")
        if np.any(k < 0) or np.any(np.abs(k.sum(axis=1) - 1) > 1e-12):
            raise ConfigError("kernel rows must be probability vectors")
        k.setflags(write=False)
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "kernel", k)
        law = self.offspring
        if law.period != self.L or law.n_positions not in (1, self.L):
            raise ConfigError("offspring law must be given per site (or constant) with period L")
        if law.min_children < 1:
            raise ConfigError("BRW offspring must put zero mass on 0 children")
        if np.any(law.rho <= 1):
            raise ConfigError("BRW needs mean offspring rho(x) > 1")

    def rho(self) -> np.ndarray:
        return self.offspring.rho_at(np.arange(self.L))

    def is_irreducible(self) -> bool:
        rows, cols = [], []
        for x in range(self.L):
            for j, step in enumerate((-1, 0, 1)):
                if self.kernel[x, j] > 0:
                    rows.append(x)
                    cols.append((x + step) % self.L)
        adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.L, self.L))
        n_comp, _ = csgraph.connected_components(adj, directed=True, connection="strong")
        return n_comp == 1


def brw_model_from_mapping(doc: Mapping[str, Any]) -> BRWModel:
    unknown = set(doc) - {"L", "kernel", "offspring"}
    if unknown:
        raise ConfigError(f"unknown brw keys: {sorted(unknown)}")
    for key in ("L", "kernel"):
        if key not in doc:
            raise ConfigError(f"brw table lacks {key!r}")
    L = doc["L"]
    if isinstance(L, bool) or not isinstance(L, int):
        raise ConfigError("L must be an integer")
    if "offspring" in doc:
        law = OffspringLaw.from_entries(doc["offspring"], float(L), min_children=1)
    else:
        law = OffspringLaw.deterministic(2, float(L), min_children=1)
    try:
        kernel = np.array(doc["kernel"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("kernel must be numeric") from None
    return BRWModel(L, kernel, law)


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    lam: float
    entries: np.ndarray


def brw_transfer(model: BRWModel, lam: float, scaled: bool = False) -> TransferMatrix:
    """One-step operator on period classes.

    entry[x][y mod L] sums rho(x) p(x, y) e^{lam (y - x)} over y in {x-1, x, x+1}.
    With scaled=True every entry carries an extra e^{-lam}, which keeps large lam finite.
    """
    L = model.L
    rho = model.rho()
    q = np.zeros((L, L))
    for x in range(L):
        for j, step in enumerate((-1, 0, 1)):
            expo = lam * (step - 1) if scaled else lam * step
            q[x, (x + step) % L] += rho[x] * model.kernel[x, j] * math.exp(expo)
    return TransferMatrix(lam, q)


def _scaled_pair(model: BRWModel, lam: float) -> EigenPair:
    q = brw_transfer(model, lam, scaled=True).entries
    return principal_eigenpair(q, 1e-9 * max(1.0, np.max(q)), lam=lam, period=float(model.L),
                               method="dense")


def brw_eigenpair(model: BRWModel, lam: float) -> EigenPair:
    """Perron pair of the one-step operator; gamma = log spectral radius."""
    ep = _scaled_pair(model, lam)
    return EigenPair(lam, lam + math.log(ep.gamma), ep.psi, ep.residual_norm)


def brw_gamma(model: BRWModel, lam: float) -> float:
    return brw_eigenpair(model, lam).gamma


def brw_front_params(model: BRWModel, tol: float = 1e-8) -> FrontParams:
    if not model.is_irreducible():
        raise ConfigError("reducible kernel: the walk does not connect all period classes")

    # gamma(lam)/lam = 1 + log R(lam)/lam with R from the scaled operator; comparing the
    # second term keeps the slowly flattening tail distinguishable in floating point
    def excess(lam):
        return math.log(_scaled_pair(model, lam).gamma) / lam

    lam_star = _minimize_ratio(excess, tol)
    return _front_from_gamma(lambda lam: brw_gamma(model, lam), lam_star)
