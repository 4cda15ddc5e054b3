"""Estimators for centered maxima: tail exponents, subsequence times, KS, nu(.) profile."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .eigen import FrontParams, find_front_params, front_position, PeriodicGenerator
from .env import EnvironmentSpec

MODELS = ("pure_exponential", "y_times_exponential")
MIN_BIN_HITS = 50
MIN_TAIL_SAMPLES = 10**4


class InsufficientTailError(ValueError):
    """Too few samples land in the requested tail range."""


@dataclass(frozen=True, eq=False)
class TailFit:
    y_grid: np.ndarray
    log_survival: np.ndarray
    hits: np.ndarray
    lambda_hat: float
    intercept: float
    prefactor_model: str
    r2: float
    n_samples: int

    def to_json(self) -> dict:
        return {"lambda_hat": self.lambda_hat, "intercept": self.intercept,
                "prefactor_model": self.prefactor_model, "r2": self.r2,
                "n_samples": self.n_samples, "y_grid": self.y_grid.tolist(),
                "log_survival": self.log_survival.tolist(), "hits": self.hits.tolist()}


def _weighted_line(x, z, w):
    """Weighted least squares z ~ a + b x. Returns (a, b, r2)."""
    W = w.sum()
    xm, zm = (w * x).sum() / W, (w * z).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    b = (w * (x - xm) * (z - zm)).sum() / sxx
    a = zm - b * xm
    ss_tot = (w * (z - zm) ** 2).sum()
    ss_res = (w * (z - a - b * x) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return a, b, r2


def tail_fit(samples, y_min: float, y_max: float, model: str = "y_times_exponential",
             step: float = 0.25, min_samples: int = MIN_TAIL_SAMPLES) -> TailFit:
    """Fit P(X > y) ~ C y e^{-lambda y} (or C e^{-lambda y}) on [y_min, y_max].

    Survival counts are taken on a grid of thresholds; only thresholds with at
    least 50 exceedances enter the regression, each weighted by its count
    (the inverse Poisson variance of the log count).
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}")
    x = np.asarray(samples, dtype=float)
    if x.size < min_samples:
        raise ValueError(f"tail_fit needs at least {min_samples} samples, got {x.size}")
    if not y_max > y_min:
        raise ValueError("y_max must exceed y_min")
    if model == "y_times_exponential" and y_min <= 0:
        raise ValueError("the y e^{-lambda y} model needs y_min > 0")
    grid = np.arange(y_min, y_max + 1e-12, step)
    grid = grid[(grid >= x.min()) & (grid <= x.max())]
    xs = np.sort(x)
    hits = xs.size - np.searchsorted(xs, grid, side="right")
    keep = hits >= MIN_BIN_HITS
    if keep.sum() < 3:
        raise InsufficientTailError("insufficient tail mass: fewer than 3 thresholds with 50 hits")
    grid, hits = grid[keep], hits[keep]
    log_s = np.log(hits / xs.size)
    z = log_s - np.log(grid) if model == "y_times_exponential" else log_s
    a, b, r2 = _weighted_line(grid, z, hits.astype(float))
    return TailFit(grid, log_s, hits, float(-b), float(a), model, float(r2), int(xs.size))


def write_tail_csv(path, fit: TailFit):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "hits", "log_survival"])
        for y, h, ls in zip(fit.y_grid, fit.hits, fit.log_survival):
            w.writerow([f"{y:.17g}", int(h), f"{ls:.17g}"])


# --- subsequences ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SubsequenceSpec:
    p: float
    times: np.ndarray

    def to_json(self) -> dict:
        return {"p": self.p, "times": self.times.tolist()}


def monotone_threshold(fp: FrontParams) -> float:
    """m_t is increasing for t above 3 / (2 lambda* v*)."""
    return 1.5 / (fp.lambda_star * fp.v_star)


def _solve_level(fp, level, lo, hi):
    # bisection on m_t - level, keeping m(hi) >= level
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if front_position(fp, mid) >= level:
            hi = mid
        else:
            lo = mid
    return hi


def subsequence_times(fp: FrontParams, p: float, t_min: float, count: int) -> SubsequenceSpec:
    """First `count` times t >= t_min with frac(m_t) = p, in increasing order."""
    if not fp.attained:
        raise ValueError("front params not attained")
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    if t_min < 2 or t_min <= monotone_threshold(fp):
        raise ValueError(f"t_min must be >= 2 and above {monotone_threshold(fp):.6g} "
                         "where m_t is increasing")
    if fp.v_star <= 0:
        raise ValueError("subsequences need v* > 0")
    level = math.ceil(front_position(fp, t_min) - p) + p
    times = np.empty(count)
    lo = t_min
    for i in range(count):
        hi = max(lo + 1.0, 2 * lo)
        while front_position(fp, hi) < level:
            lo, hi = hi, 2 * hi
        t = _solve_level(fp, level, lo, hi)
        times[i] = t
        lo = t
        level += 1.0
    return SubsequenceSpec(float(p), times)


def frac_error(fp: FrontParams, t: float, p: float) -> float:
    """Circular distance between frac(m_t) and p."""
    d = (front_position(fp, t) - p) % 1.0
    return min(d, 1.0 - d)


# --- two-sample KS ------------------------------------------------------------------

def ks_distance(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| over the pooled sample."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_distance needs nonempty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# --- nu profile -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NuProfile:
    t: np.ndarray
    phase: np.ndarray
    nu_hat: np.ndarray
    stderr: np.ndarray
    hits: np.ndarray
    y: float
    psi0: float

    def to_json(self) -> dict:
        return {"y": self.y, "psi0": self.psi0, "t": self.t.tolist(),
                "phase": self.phase.tolist(), "nu_hat": self.nu_hat.tolist(),
                "stderr": self.stderr.tolist(), "hits": self.hits.tolist()}

    def rows(self) -> np.ndarray:
        return np.column_stack([self.phase, self.nu_hat])


def nu_normalizer(env: EnvironmentSpec, fp: FrontParams, y: float, n_grid: int = 1024) -> tuple[float, float]:
    """(psi(0, lambda*), psi(0) y e^{-lambda* y}) with psi normalized to unit integral."""
    ep = PeriodicGenerator(env, n_grid).eigenpair(fp.lambda_star)
    psi0 = float(ep.psi(0.0))
    return psi0, psi0 * y * math.exp(-fp.lambda_star * y)


def nu_from_maxima(maxima_by_t, t_grid, fp: FrontParams, psi0: float, y: float,
                   min_hits: int = 10) -> NuProfile:
    """nu_hat from raw maxima M_t (not centered), one sample array per t."""
    t_grid = np.asarray(t_grid, dtype=float)
    scale = psi0 * y * math.exp(-fp.lambda_star * y)
    phase, nu, se, hits = [], [], [], []
    for t, m in zip(t_grid, maxima_by_t):
        m = np.asarray(m, dtype=float)
        mt = front_position(fp, t)
        k = int(np.count_nonzero(m > mt + y))
        if k < min_hits:
            raise InsufficientTailError(f"only {k} tail hits at t={t:g}")
        p = k / m.size
        phase.append((mt + y) % 1.0)
        nu.append(p / scale)
        se.append(math.sqrt(p * (1 - p) / m.size) / scale)
        hits.append(k)
    return NuProfile(t_grid, np.array(phase), np.array(nu), np.array(se),
                     np.array(hits), float(y), float(psi0))


def nu_profile(env: EnvironmentSpec, fp: FrontParams | None, t_grid, y: float, trials: int,
               seed: int = 0, dt: float = 1e-2, window: float = 6.0,
               min_trials: int = 10**5) -> NuProfile:
    """Phase-resolved estimate of nu from runs started at x = 0."""
    from .bbm_sim import PruneConfig, max_samples

    if y < 3:
        raise ValueError("nu_profile needs y >= 3")
    fp = fp if fp is not None else find_front_params(env)
    psi0, _ = nu_normalizer(env, fp, y)
    maxima = []
    for j, t in enumerate(t_grid):
        # distinct seed blocks per t keep the phases independent
        ms = max_samples(env, fp, float(t), trials, dt, PruneConfig(window), seed=seed + j,
                         min_trials=min_trials)
        maxima.append(ms.maxima)
    return nu_from_maxima(maxima, t_grid, fp, psi0, y)


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj.to_json() if hasattr(obj, "to_json") else obj, indent=2)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text
