"""Branching Brownian motion in a periodic environment.

Branching uses thinning: every particle carries a candidate clock of rate
beta = max g, and a candidate event at x is accepted with probability g(x)/beta.
Between events the motion is an exact Gaussian increment (plain BBM) or an
Euler-Maruyama increment with mu and sigma (diffusion variant); the inter-event
intervals never exceed dt because each step is cut at the events. After each
step, particles more than `window` below the running maximum are discarded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._jit import interp
from .eigen import FrontParams, find_front_params, front_position
from .env import EnvironmentSpec, OffspringLaw
from .rng import check_seed, trial_generator

MAX_DT = 1e-2
DEFAULT_DT = 1e-2
DEFAULT_WINDOW = 30.0
DEFAULT_CAP = 2_000_000

OK, CAP_EXCEEDED = 0, 1


class PopulationCapError(RuntimeError):
    """The live population exceeded the hard cap."""


class UnsupportedRegimeError(RuntimeError):
    """Parameters outside the simulated regime (v* <= 0)."""


@dataclass(frozen=True)
class PruneConfig:
    window: float = DEFAULT_WINDOW
    hard_cap: int = DEFAULT_CAP

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("prune window must be positive")
        if self.hard_cap < 1:
            raise ValueError("hard_cap must be positive")


NO_PRUNING = PruneConfig(math.inf)


@dataclass(frozen=True, eq=False)
class PopulationSnapshot:
    time: float
    positions: np.ndarray
    ids: np.ndarray
    parent_ids: np.ndarray
    max_position: float
    pruned_count: int
    prune_window: float

    @property
    def size(self) -> int:
        return self.positions.size

    def particles(self) -> np.ndarray:
        """Structured array (position, id, parent_id)."""
        out = np.empty(self.size, dtype=[("position", "f8"), ("id", "i8"), ("parent_id", "i8")])
        out["position"], out["id"], out["parent_id"] = self.positions, self.ids, self.parent_ids
        return out


@dataclass(frozen=True, eq=False)
class MaxSamples:
    t: float
    m_t: float
    maxima: np.ndarray
    pruned: np.ndarray
    final_population: np.ndarray
    window: float

    @property
    def centered(self) -> np.ndarray:
        return self.maxima - self.m_t


@dataclass(frozen=True)
class _Model:
    g: np.ndarray
    beta: float
    mu: np.ndarray
    sigma: np.ndarray
    moving: bool
    period: float
    det: np.ndarray
    cdf: np.ndarray


def _model(env: EnvironmentSpec, diffusion: bool) -> _Model:
    g = env.g.resample(max(env.g.n, 16)).samples.copy()
    n = g.size
    mu = (env.mu.resample(n).samples if env.mu is not None else np.zeros(n)).copy()
    sigma = (env.sigma.resample(n).samples if env.sigma is not None else np.ones(n)).copy()
    law = env.offspring_or_binary() if diffusion else OffspringLaw.deterministic(2, env.period)
    # zero drift and unit volatility give the same paths through the cheaper kernel
    moving = diffusion and bool(np.any(mu != 0.0) or np.any(sigma != 1.0))
    return _Model(g, float(g.max()), mu, sigma, moving, env.period,
                  law.deterministic_counts(), law.cdf())


# --- compiled kernel ---------------------------------------------------------------

@njit(cache=True)
def _offspring(gen, det, cdf, period, x):
    n_pos = det.shape[0]
    r = x - period * math.floor(x / period)
    j = int(math.floor(r * (n_pos / period))) % n_pos
    if det[j] >= 0:
        return det[j]
    u = gen.random()
    k = 0
    while cdf[j, k] <= u and k < cdf.shape[1] - 1:
        k += 1
    return k


@njit(cache=True)
def _grow(a, n):
    out = np.empty(2 * a.shape[0], dtype=a.dtype)
    out[:n] = a[:n]
    return out


@njit(inline="always")
def _run(gen, g, beta, mu, sigma, moving, period, det, cdf, x0, t_end, dt, window, cap, track):
    """One BBM run. Returns (status, positions, ids, parents, pruned, pop_time).

    Always inlined with literal `moving` and `track` so each variant compiles
    without the unused branches; keeping them costs several times the runtime.
    """
    size = 1024
    pos = np.empty(size)
    clock = np.empty(size)
    t0 = np.zeros(size)
    ids = np.empty(size if track else 1, dtype=np.int64)
    par = np.empty(size if track else 1, dtype=np.int64)
    n = 1
    pos[0] = x0
    clock[0] = gen.standard_exponential() / beta
    if track:
        ids[0] = 0
        par[0] = -1
    next_id = 1
    pruned = 0
    pop_time = 0.0
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    for s in range(n_steps):
        h = min(dt, t_end - s * dt)
        i = 0
        while i < n:
            rem = h - t0[i]
            x = pos[i]
            c = clock[i]
            while c < rem:
                if moving:
                    x = x + (interp(mu, period, x) * c
                             + interp(sigma, period, x) * math.sqrt(c) * gen.standard_normal())
                else:
                    x = x + math.sqrt(c) * gen.standard_normal()
                rem -= c
                if gen.random() * beta < interp(g, period, x):
                    k = _offspring(gen, det, cdf, period, x)
                    parent = -1
                    if track:
                        parent = ids[i]
                        ids[i] = next_id
                        par[i] = parent
                        next_id += 1
                    for _ in range(k - 1):
                        if n == pos.shape[0]:
                            pos = _grow(pos, n)
                            clock = _grow(clock, n)
                            t0 = _grow(t0, n)
                            if track:
                                ids = _grow(ids, n)
                                par = _grow(par, n)
                        pos[n] = x
                        t0[n] = h - rem
                        clock[n] = gen.standard_exponential() / beta
                        if track:
                            ids[n] = next_id
                            par[n] = parent
                            next_id += 1
                        n += 1
                    if n > cap:
                        return CAP_EXCEEDED, pos[:n], ids[:1], par[:1], pruned, pop_time
                c = gen.standard_exponential() / beta
            if moving:
                x = x + (interp(mu, period, x) * rem
                         + interp(sigma, period, x) * math.sqrt(rem) * gen.standard_normal())
            else:
                x = x + math.sqrt(rem) * gen.standard_normal()
            pos[i] = x
            clock[i] = c - rem
            t0[i] = 0.0
            i += 1
        mx = pos[0]
        for j in range(1, n):
            if pos[j] > mx:
                mx = pos[j]
        floor = mx - window
        k = 0
        for j in range(n):
            if pos[j] >= floor:
                pos[k] = pos[j]
                clock[k] = clock[j]
                if track:
                    ids[k] = ids[j]
                    par[k] = par[j]
                k += 1
        pruned += n - k
        n = k
        pop_time += n * h
    if track:
        return OK, pos[:n].copy(), ids[:n].copy(), par[:n].copy(), pruned, pop_time
    return OK, pos[:n].copy(), ids[:1], par[:1], pruned, pop_time


@njit(cache=True)
def _run_plain(gen, g, beta, mu, sigma, period, det, cdf, x0, t_end, dt, window, cap):
    return _run(gen, g, beta, mu, sigma, False, period, det, cdf, x0, t_end, dt, window, cap, False)


@njit(cache=True)
def _run_plain_tracked(gen, g, beta, mu, sigma, period, det, cdf, x0, t_end, dt, window, cap):
    return _run(gen, g, beta, mu, sigma, False, period, det, cdf, x0, t_end, dt, window, cap, True)


@njit(cache=True)
def _run_moving(gen, g, beta, mu, sigma, period, det, cdf, x0, t_end, dt, window, cap):
    return _run(gen, g, beta, mu, sigma, True, period, det, cdf, x0, t_end, dt, window, cap, False)


@njit(cache=True)
def _run_moving_tracked(gen, g, beta, mu, sigma, period, det, cdf, x0, t_end, dt, window, cap):
    return _run(gen, g, beta, mu, sigma, True, period, det, cdf, x0, t_end, dt, window, cap, True)


_KERNELS = {(False, False): _run_plain, (False, True): _run_plain_tracked,
            (True, False): _run_moving, (True, True): _run_moving_tracked}


# --- public API ----------------------------------------------------------------------

def _check(t_end: float, dt: float):
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    if not 0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt}")


def _simulate(model: _Model, t_end, dt, prune, seed, x0, index, track):
    gen = trial_generator(seed, index)
    kernel = _KERNELS[model.moving, track]
    status, pos, ids, par, pruned, _ = kernel(
        gen, model.g, model.beta, model.mu, model.sigma, model.period, model.det, model.cdf,
        float(x0), float(t_end), float(dt), float(prune.window), int(prune.hard_cap))
    if status == CAP_EXCEEDED:
        raise PopulationCapError(f"population exceeded hard cap {prune.hard_cap}")
    return pos, ids, par, pruned


def _snapshot(model, t_end, dt, prune, seed, x0, index) -> PopulationSnapshot:
    pos, ids, par, pruned = _simulate(model, t_end, dt, prune, seed, x0, index, True)
    return PopulationSnapshot(float(t_end), pos, ids, par, float(pos.max()), int(pruned),
                              float(prune.window))


def simulate_bbm(env: EnvironmentSpec, t_end: float, dt: float = DEFAULT_DT,
                 prune: PruneConfig = PruneConfig(), seed: int = 0, x0: float = 0.0,
                 index: int = 0) -> PopulationSnapshot:
    """Plain BBM (unit Brownian motion, binary branching) with branching rate env.g."""
    _check(t_end, dt)
    return _snapshot(_model(env, False), t_end, dt, prune, check_seed(seed), x0, index)


def _require_positive_speed(env: EnvironmentSpec) -> FrontParams:
    fp = find_front_params(env)
    if not fp.attained or fp.v_star <= 0:
        raise UnsupportedRegimeError("unsupported regime: v* <= 0")
    return fp


def simulate_diffusion_bbm(env: EnvironmentSpec, t_end: float, dt: float = DEFAULT_DT,
                           prune: PruneConfig = PruneConfig(), seed: int = 0, x0: float = 0.0,
                           index: int = 0, check_speed: bool = True) -> PopulationSnapshot:
    """Branching diffusion dX = mu dt + sigma dW with offspring law pi(X)."""
    _check(t_end, dt)
    if check_speed:
        _require_positive_speed(env)
    return _snapshot(_model(env, True), t_end, dt, prune, check_seed(seed), x0, index)


def max_samples(env: EnvironmentSpec, fp: FrontParams, t: float, trials: int,
                dt: float = DEFAULT_DT, prune: PruneConfig = PruneConfig(), seed: int = 0,
                x0: float = 0.0, diffusion: bool = False, min_trials: int = 10**3) -> MaxSamples:
    """Maxima M_t over independent runs 0..trials-1 with their pruning diagnostics."""
    _check(t, dt)
    seed = check_seed(seed)
    if trials < min_trials:
        raise ValueError(f"max_samples needs at least {min_trials} trials")
    if diffusion:
        _require_positive_speed(env)
    model = _model(env, diffusion)
    maxima = np.empty(trials)
    pruned = np.empty(trials, dtype=np.int64)
    final = np.empty(trials, dtype=np.int64)
    for k in range(trials):
        pos, _, _, pr = _simulate(model, t, dt, prune, seed, x0, k, False)
        maxima[k] = pos.max()
        pruned[k] = pr
        final[k] = pos.size
    return MaxSamples(float(t), front_position(fp, t), maxima, pruned, final, float(prune.window))


def population_sizes(env: EnvironmentSpec, t: float, trials: int, dt: float = DEFAULT_DT,
                     seed: int = 0, diffusion: bool = False,
                     hard_cap: int = DEFAULT_CAP) -> np.ndarray:
    """Unpruned population sizes N_t over independent runs."""
    _check(t, dt)
    model = _model(env, diffusion)
    prune = PruneConfig(math.inf, hard_cap)
    return np.array([_simulate(model, t, dt, prune, check_seed(seed), 0.0, k, False)[0].size
                     for k in range(trials)])


@njit(cache=True)
def _feynman_kac(gen, mass, mu, sigma, moving, period, x0, t, dt, lo, hi):
    n = int(round(t / dt))
    x = x0
    sq = math.sqrt(dt)
    f_prev = interp(mass, period, x)
    integral = 0.0
    for _ in range(n):
        if moving:
            x = x + (interp(mu, period, x) * dt + interp(sigma, period, x) * sq * gen.standard_normal())
        else:
            x = x + sq * gen.standard_normal()
        f = interp(mass, period, x)
        integral += 0.5 * dt * (f_prev + f)
        f_prev = f
    if lo <= x <= hi:
        return math.exp(integral)
    return 0.0


def many_to_one_check(env: EnvironmentSpec, t: float, window: tuple[float, float], trials: int,
                      seed: int = 0, dt: float = 1e-3, diffusion: bool = False,
                      hard_cap: int = DEFAULT_CAP) -> tuple[float, float, float]:
    """(lhs, rhs, combined stderr) for E[#particles in window] vs its Feynman-Kac form.

    lhs runs full unpruned branching; rhs averages exp(int (rho-1) g(B_s) ds) 1{B_t in window}
    over single paths with trapezoid quadrature on the dt grid.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        return 0.0, 0.0, 0.0
    if t > 4:
        raise ValueError("many_to_one_check is limited to t <= 4")
    _check(t, dt)
    seed = check_seed(seed)
    model = _model(env, diffusion)
    law = env.offspring_or_binary() if diffusion else OffspringLaw.deterministic(2, env.period)
    mass_fn = env.g.resample(model.g.size)
    mass = (law.rho_at(mass_fn.nodes()) - 1.0) * mass_fn.samples
    prune = PruneConfig(math.inf, hard_cap)
    counts = np.empty(trials)
    for k in range(trials):
        pos = _simulate(model, t, dt, prune, seed, 0.0, k, False)[0]
        counts[k] = np.count_nonzero((pos >= lo) & (pos <= hi))
    weights = np.empty(trials)
    for k in range(trials):
        # second half of the key space keeps the two sides independent
        gen = trial_generator(seed, trials + k)
        weights[k] = _feynman_kac(gen, mass, model.mu, model.sigma, model.moving, model.period,
                                  0.0, float(t), float(dt), lo, hi)
    se = math.sqrt(counts.var(ddof=1) / trials + weights.var(ddof=1) / trials)
    return float(counts.mean()), float(weights.mean()), se
