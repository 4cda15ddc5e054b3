"""Tilted single-particle diffusion dY = phi(Y) dt + dW and its renewal structure.

Y is integrated by Euler-Maruyama. T_k is the first time Y reaches level k,
refined by linear interpolation inside the crossing step, and S_k = T_k - k/v*.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._jit import interp
from .eigen import EigenPair, tilt_drift
from .rng import check_seed, trial_generator

MAX_DT = 1e-2
DEFAULT_DT = 1e-3


@dataclass(frozen=True, eq=False)
class TiltedPath:
    x0: float
    dt: float
    values: np.ndarray
    seed: int
    index: int = 0

    @property
    def horizon(self) -> float:
        return (self.values.size - 1) * self.dt


@dataclass(frozen=True, eq=False)
class RenewalRecord:
    T: np.ndarray
    S: np.ndarray


@dataclass(frozen=True)
class BarrierQuery:
    N: int
    y: float
    z: float = 0.0
    a: float = 1.0
    d_N: float = 0.0
    c0: float = 10.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.y < 0 or self.z < 0:
            raise ValueError("y and z must be non-negative")
        if not self.a > 0:
            raise ValueError("a must be positive")
        if self.N > 1 and abs(self.d_N) > self.c0 * math.log(self.N) / self.N:
            raise ValueError("|d_N| must be at most c0 log N / N")


@dataclass(frozen=True)
class Dynamics:
    """Drift and volatility samples of the tilted motion on one period."""

    drift: np.ndarray
    vol: np.ndarray
    period: float
    v_star: float
    lam: float


def tilted_dynamics(ep: EigenPair) -> Dynamics:
    """Drift mu + sigma^2 phi and volatility sigma (phi alone for plain BBM)."""
    phi = tilt_drift(ep).phi
    x = phi.nodes()
    env = ep.env
    drift = phi.samples.copy()
    vol = np.ones(phi.n)
    if env is not None and env.sigma is not None:
        vol = env.sigma(x)
        drift = drift * vol * vol
    if env is not None and env.mu is not None:
        drift = drift + env.mu(x)
    return Dynamics(drift, vol, phi.period, ep.gamma / ep.lam, ep.lam)


def _check_dt(dt: float):
    if not 0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt}")


# --- compiled kernels -----------------------------------------------------------

@njit(cache=True)
def _em_step(x, drift, vol, period, dt, sqdt, z):
    return x + (interp(drift, period, x) * dt + interp(vol, period, x) * sqdt * z)


@njit(cache=True)
def _em_path(gen, drift, vol, period, x0, n_steps, dt):
    out = np.empty(n_steps + 1)
    out[0] = x0
    x = x0
    sqdt = math.sqrt(dt)
    for i in range(n_steps):
        x = _em_step(x, drift, vol, period, dt, sqdt, gen.standard_normal())
        out[i + 1] = x
    return out


@njit(cache=True)
def _em_endpoint(gen, drift, vol, period, x0, n_steps, dt):
    x = x0
    sqdt = math.sqrt(dt)
    for i in range(n_steps):
        x = _em_step(x, drift, vol, period, dt, sqdt, gen.standard_normal())
    return x


@njit(cache=True)
def _first_passage(gen, drift, vol, period, x0, level, dt, max_steps, sign):
    x = x0
    if x >= level:
        return 0.0
    sqdt = math.sqrt(dt)
    for i in range(max_steps):
        nx = _em_step(x, drift, vol, period, dt, sqdt, sign * gen.standard_normal())
        if nx >= level:
            return (i + (level - x) / (nx - x)) * dt
        x = nx
    return np.nan


@njit(cache=True)
def _barrier_trial(gen, drift, vol, period, dt, inv_v, ns, ds, y, z, a, hits):
    """Discrete ballot event for every N in ns (ascending) along one path.

    hits[j] is set when y + S_k + k d_j >= 0 for all k <= ns[j] and the end value
    lies in [z, z + a].
    """
    m = ns.shape[0]
    alive = np.ones(m, dtype=np.bool_)
    n_alive = m
    n_max = ns[m - 1]
    x = 0.0
    t = 0.0
    k = 1
    sqdt = math.sqrt(dt)
    while k <= n_max and n_alive > 0:
        nx = _em_step(x, drift, vol, period, dt, sqdt, gen.standard_normal())
        while nx >= k and k <= n_max:
            tk = t + (k - x) / (nx - x) * dt
            sk = tk - k * inv_v
            for j in range(m):
                if alive[j] and k <= ns[j]:
                    val = y + sk + k * ds[j]
                    if val < 0.0:
                        alive[j] = False
                        n_alive -= 1
                    elif k == ns[j]:
                        if z <= val <= z + a:
                            hits[j] = True
                        alive[j] = False
                        n_alive -= 1
            k += 1
        x = nx
        t += dt


@njit(cache=True)
def _continuous_trial(gen, drift, vol, period, dt, n_steps, q, y, z):
    x = 0.0
    sqdt = math.sqrt(dt)
    for i in range(n_steps):
        x = _em_step(x, drift, vol, period, dt, sqdt, gen.standard_normal())
        if x - q * (i + 1) * dt > y:
            return False
    val = y - (x - q * n_steps * dt)
    return z <= val <= z + 1.0


# --- public API --------------------------------------------------------------------

def _steps(horizon: float, dt: float) -> int:
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be a whole number of steps")
    return n


def simulate_tilted(ep: EigenPair, x0: float, horizon: float, dt: float = DEFAULT_DT,
                    seed: int = 0, index: int = 0) -> TiltedPath:
    """Euler-Maruyama path of the tilted diffusion, stream keyed by (seed, index)."""
    _check_dt(dt)
    seed = check_seed(seed)
    dyn = tilted_dynamics(ep)
    n = _steps(horizon, dt)
    values = _em_path(trial_generator(seed, index), dyn.drift, dyn.vol, dyn.period,
                      float(x0), n, float(dt))
    return TiltedPath(float(x0), float(dt), values, seed, index)


def tilted_endpoints(ep: EigenPair, x0: float, horizon: float, n_paths: int,
                     dt: float = DEFAULT_DT, seed: int = 0) -> np.ndarray:
    """Y_T for paths 0..n_paths-1 without storing the paths (matches simulate_tilted)."""
    _check_dt(dt)
    seed = check_seed(seed)
    dyn = tilted_dynamics(ep)
    n = _steps(horizon, dt)
    return np.array([_em_endpoint(trial_generator(seed, i), dyn.drift, dyn.vol, dyn.period,
                                  float(x0), n, float(dt)) for i in range(n_paths)])


def renewal_times(path: TiltedPath, K: int, v_star: float) -> RenewalRecord:
    y = path.values
    running = np.maximum.accumulate(y)
    levels = np.arange(1, K + 1, dtype=float)
    if running[-1] < K:
        raise ValueError(f"level {K} not reached within the path")
    idx = np.searchsorted(running, levels, side="left")
    T = np.empty(K)
    for j, (i, lev) in enumerate(zip(idx, levels)):
        if i == 0:
            T[j] = 0.0
        else:
            T[j] = (i - 1 + (lev - y[i - 1]) / (y[i] - y[i - 1])) * path.dt
    return RenewalRecord(T, T - levels / v_star)


def sample_T1(ep: EigenPair, n: int, dt: float = DEFAULT_DT, seed: int = 0,
              x0: float = 0.0, max_time: float = 1e4, antithetic: bool = False) -> np.ndarray:
    """First passage times of level 1 for paths started at x0.

    With antithetic=True, sample 2j+1 reuses the stream of sample 2j with negated
    Gaussian increments; each sample keeps the exact marginal law.
    """
    _check_dt(dt)
    seed = check_seed(seed)
    dyn = tilted_dynamics(ep)
    max_steps = int(max_time / dt)

    def one(i):
        if antithetic:
            gen, sign = trial_generator(seed, i // 2), (1.0 if i % 2 == 0 else -1.0)
        else:
            gen, sign = trial_generator(seed, i), 1.0
        return _first_passage(gen, dyn.drift, dyn.vol, dyn.period, float(x0), 1.0,
                              float(dt), max_steps, sign)

    out = np.array([one(i) for i in range(n)])
    if np.any(np.isnan(out)):
        raise RuntimeError("level 1 not reached within max_time")
    return out


def _proportion(hits: np.ndarray, trials: int) -> tuple[float, float]:
    k = int(hits)
    p = k / trials
    if k == 0:
        # one-sided 95% bound reported as the error
        return 0.0, 3.0 / trials
    return p, math.sqrt(p * (1 - p) / trials)


def estimate_barrier_curve(ep: EigenPair, Ns, y: float, z: float = 0.0, a: float = 1.0,
                           d: float | np.ndarray = 0.0, trials: int = 10**4,
                           seed: int = 0, dt: float = DEFAULT_DT) -> list[tuple[float, float]]:
    """Barrier probabilities for several N sharing the same renewal records."""
    _check_dt(dt)
    seed = check_seed(seed)
    if trials < 10**4:
        raise ValueError("barrier estimates need at least 1e4 trials")
    ns = np.asarray(Ns, dtype=np.int64)
    order = np.argsort(ns)
    ns_sorted = ns[order]
    ds = np.broadcast_to(np.asarray(d, dtype=float), ns.shape)[order].copy()
    for n_, d_ in zip(ns_sorted, ds):
        BarrierQuery(int(n_), y, z, a, float(d_))
    dyn = tilted_dynamics(ep)
    inv_v = 1.0 / dyn.v_star
    counts = np.zeros(ns.size, dtype=np.int64)
    hits = np.zeros(ns.size, dtype=np.bool_)
    for i in range(trials):
        hits[:] = False
        _barrier_trial(trial_generator(seed, i), dyn.drift, dyn.vol, dyn.period, float(dt),
                       inv_v, ns_sorted, ds, float(y), float(z), float(a), hits)
        counts += hits
    result = [None] * ns.size
    for j, o in enumerate(order):
        result[o] = _proportion(counts[j], trials)
    return result


def estimate_barrier(ep: EigenPair, q: BarrierQuery, trials: int = 10**4, seed: int = 0,
                     dt: float = DEFAULT_DT) -> tuple[float, float]:
    """P(y + S_N^(N) in [z, z+a], min_k (y + S_k^(N)) >= 0) with S_k^(N) = S_k + k d_N."""
    return estimate_barrier_curve(ep, [q.N], q.y, q.z, q.a, q.d_N, trials, seed, dt)[0]


def continuous_barrier(ep: EigenPair, t: float, y: float, z: float, trials: int = 10**4,
                       seed: int = 0, dt: float = DEFAULT_DT, q: float | None = None
                       ) -> tuple[float, float]:
    """P(y - (Y_t - q_t t) in [z, z+1], max_s (Y_s - q_t s) <= y), checked on the grid.

    q defaults to m_t / t with m_t = v* t - 3/(2 lambda*) log t.
    """
    _check_dt(dt)
    seed = check_seed(seed)
    if y < 1 or t < 4:
        raise ValueError("continuous barrier needs y >= 1 and t >= 4")
    if trials < 10**4:
        raise ValueError("barrier estimates need at least 1e4 trials")
    dyn = tilted_dynamics(ep)
    if q is None:
        q = dyn.v_star - 3.0 / (2.0 * dyn.lam) * math.log(t) / t
    n = _steps(t, dt)
    hits = 0
    for i in range(trials):
        hits += _continuous_trial(trial_generator(seed, i), dyn.drift, dyn.vol, dyn.period,
                                  float(dt), n, float(q), float(y), float(z))
    return _proportion(hits, trials)
