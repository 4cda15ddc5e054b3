"""Nearest-neighbour branching random walk with L-periodic kernel and offspring law.

The population is a vector of counts on consecutive lattice sites ending at the
current maximum. Each generation draws, site by site, the number of children
(sequential binomials over the offspring classes) and splits them into left,
stay and right moves by two more binomials, so the law is exactly that of
independent particles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigen import BRWModel, FrontParams, NotAttainedError, brw_front_params, front_position
from .rng import check_seed, trial_generator

DEFAULT_WINDOW = 10
# counts are int64; refuse to go past this so a generation can never overflow
COUNT_LIMIT = 2**62


class CountOverflowError(OverflowError):
    """Site counts grew past the int64 safety limit; use a smaller window."""


@dataclass(frozen=True, eq=False)
class BRWPopulation:
    generation: int
    base: int
    counts: np.ndarray
    pruned: int = 0

    @property
    def max_position(self) -> int:
        return self.base + int(np.flatnonzero(self.counts)[-1])

    @property
    def positions(self) -> np.ndarray:
        """Occupied sites with multiplicity (only sensible for small populations)."""
        return np.repeat(self.base + np.arange(self.counts.size), self.counts)

    @property
    def size(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True, eq=False)
class BRWSamples:
    generations: np.ndarray
    maxima: np.ndarray
    m_n: np.ndarray
    window: int

    @property
    def centered(self) -> np.ndarray:
        return self.maxima - self.m_n


class _Laws:
    """Per-site arrays: move probabilities and offspring class probabilities."""

    def __init__(self, model: BRWModel):
        L = model.L
        self.L = L
        k = model.kernel
        self.p_left = k[:, 0].copy()
        # stay probability conditional on not moving left
        rest = 1.0 - k[:, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            self.p_stay = np.where(rest > 0, k[:, 1] / rest, 0.0).clip(0.0, 1.0)
        law = model.offspring
        probs = law.probabilities
        if probs.shape[0] == 1:
            probs = np.repeat(probs, L, axis=0)
        self.det = law.deterministic_counts()
        if self.det.size == 1:
            self.det = np.repeat(self.det, L)
        self.probs = probs
        tails = np.cumsum(probs[:, ::-1], axis=1)[:, ::-1]
        with np.errstate(invalid="ignore", divide="ignore"):
            self.cond = np.where(tails > 0, probs / tails, 0.0).clip(0.0, 1.0)
        self.classes = np.arange(probs.shape[1])


def _children(gen, counts, site_class, laws: _Laws):
    det = laws.det[site_class]
    if np.all(det >= 0):
        return counts * det
    out = np.zeros_like(counts)
    remaining = counts.copy()
    for k in laws.classes:
        p = laws.cond[site_class, k]
        n_k = gen.binomial(remaining, p)
        out += k * n_k
        remaining -= n_k
    return out


def _step(gen, base, counts, laws: _Laws):
    """One generation; returns the new (base, counts) with base the lowest site."""
    sites = base + np.arange(counts.size)
    cls = sites % laws.L
    kids = _children(gen, counts, cls, laws)
    left = gen.binomial(kids, laws.p_left[cls])
    stay = gen.binomial(kids - left, laws.p_stay[cls])
    right = kids - left - stay
    new = np.zeros(counts.size + 2, dtype=np.int64)
    new[:-2] += left
    new[1:-1] += stay
    new[2:] += right
    return base - 1, new


def _prune(base, counts, window):
    occupied = np.flatnonzero(counts)
    top = occupied[-1]
    lo = max(occupied[0], top - window)
    pruned = int(counts[:lo].sum())
    return base + lo, counts[lo:top + 1].copy(), pruned


def run_brw(model: BRWModel, n_gen: int, prune_window: int = DEFAULT_WINDOW, seed: int = 0,
            index: int = 0, record=None):
    """One run from a single particle at 0.

    Returns the final BRWPopulation and the maxima at the generations in `record`.
    """
    if prune_window < 1:
        raise ValueError("prune window must be at least one site")
    laws = _Laws(model)
    gen = trial_generator(check_seed(seed), index)
    record = sorted(set(record or [n_gen]))
    marks = {}
    base, counts, pruned = 0, np.ones(1, dtype=np.int64), 0
    if 0 in record:
        marks[0] = 0
    top_child = max(int(laws.classes[-1]), 1)
    for n in range(1, n_gen + 1):
        if counts.max() > COUNT_LIMIT // top_child:
            raise CountOverflowError(f"site count exceeds {COUNT_LIMIT // top_child}; "
                                     "reduce the prune window")
        base, counts = _step(gen, base, counts, laws)
        base, counts, p = _prune(base, counts, prune_window)
        pruned += p
        if n in marks or n in record:
            marks[n] = base + counts.size - 1
    pop = BRWPopulation(n_gen, base, counts, pruned)
    return pop, np.array([marks[n] for n in record], dtype=np.int64)


def _attained(model: BRWModel) -> FrontParams:
    fp = brw_front_params(model)
    if not fp.attained:
        raise NotAttainedError()
    if fp.v_star <= 0:
        raise ValueError("unsupported regime: v* <= 0")
    return fp


def simulate_brw(model: BRWModel, n_gen, prune_window: int = DEFAULT_WINDOW, trials: int = 1000,
                 seed: int = 0, fp: FrontParams | None = None) -> BRWSamples:
    """Maxima M_n for each n in n_gen (int or list) over runs 0..trials-1, centered by m_n."""
    fp = fp if fp is not None else _attained(model)
    ns = np.atleast_1d(np.asarray(n_gen, dtype=np.int64))
    if np.any(ns < 1):
        raise ValueError("generations must be positive")
    order = sorted(set(ns.tolist()))
    maxima = np.empty((trials, len(order)), dtype=np.int64)
    for k in range(trials):
        _, maxima[k] = run_brw(model, order[-1], prune_window, seed, k, order)
    idx = [order.index(n) for n in ns]
    m_n = np.array([front_position(fp, float(n)) for n in ns])
    return BRWSamples(ns, maxima[:, idx], m_n, int(prune_window))


def prune_bias(model: BRWModel, n_gen: int, window: int, trials: int, seed: int = 0,
               fp: FrontParams | None = None) -> tuple[float, float]:
    """Medians of M_n - m_n with the window and with twice the window."""
    a = simulate_brw(model, n_gen, window, trials, seed, fp).centered[:, 0]
    b = simulate_brw(model, n_gen, 2 * window, trials, seed, fp).centered[:, 0]
    return float(np.median(a)), float(np.median(b))
