"""Acceptance suite: twelve numbered checks with pinned tolerances.

Each check returns a Result with the measured quantities next to their
thresholds. `run_suite` drives them; the CLI `verify` command and the test
module both go through here.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import bbm_sim, brw_sim, eigen, fkpp_pde, stats, tilted
from .config import load_config

SQRT2 = math.sqrt(2.0)
BETA_GRID = np.round(np.arange(1, 51) * 0.1, 10)


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: float = math.inf
    error: str | None = None

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        extra = f" error: {self.error}" if self.error else ""
        return f"[{tag}] criterion {self.number:2d} {self.name} ({self.seconds:.1f}s) {parts}{extra}"

    def to_json(self) -> dict:
        return {"criterion": self.number, "name": self.name, "passed": self.passed,
                "seconds": self.seconds, "budget_seconds": self.budget,
                "measured": {k: _plain(v) for k, v in self.measured.items()}, "error": self.error}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


class Context:
    """Config lookup plus a cache so the PDE runs are shared between checks."""

    def __init__(self, config_dir: str | Path | None = None):
        self.config_dir = Path(config_dir) if config_dir else None
        self.cache: dict = {}

    def config(self, name: str):
        if self.config_dir is not None and (self.config_dir / f"{name}.toml").exists():
            return load_config(self.config_dir / f"{name}.toml")
        text = resources.files("periodic_bbm.configs").joinpath(f"{name}.toml").read_text()
        return load_config(text=text, source=f"{name}.toml")

    def env(self, name: str):
        return self.config(name).env

    def front(self, name: str):
        key = ("front", name)
        if key not in self.cache:
            self.cache[key] = eigen.find_front_params(self.env(name))
        return self.cache[key]

    def pde(self, name: str, general: bool = False, t_end: float = 400.0):
        key = ("pde", name, general, t_end)
        if key not in self.cache:
            solver = fkpp_pde.solve_general_fkpp if general else fkpp_pde.solve_fkpp
            self.cache[key] = solver(self.env(name), t_end)
        return self.cache[key]


def _rel(a, b):
    return abs(a / b - 1.0)


# --- the criteria ------------------------------------------------------------------------

def c1_classical(ctx: Context) -> Result:
    fp = eigen.find_front_params(ctx.env("classical"))
    d_lam = abs(fp.lambda_star - SQRT2)
    d_v = abs(fp.v_star - SQRT2)
    d_c = abs(fp.log_coeff - 3 / (2 * SQRT2))
    ok = d_lam <= 1e-6 and d_v <= 1e-6 and d_c <= 1e-9
    return Result(1, "classical constants", ok,
                  {"lambda_star": fp.lambda_star, "v_star": fp.v_star, "log_coeff": fp.log_coeff,
                   "err_lambda": d_lam, "err_v": d_v, "err_log_coeff": d_c}, budget=1.0)


def c2_bounds_convexity(ctx: Context) -> Result:
    env = ctx.env("sine")
    curve = eigen.gamma_curve(env, BETA_GRID)
    lam, gam = curve.lambdas, curve.gammas
    lower = lam ** 2 / 2 + 0.5
    upper = lam ** 2 / 2 + 1.5
    slack = float(min(np.min(gam - lower), np.min(upper - gam)))
    second = gam[2:] - 2 * gam[1:-1] + gam[:-2]
    ok = slack >= 0 and float(second.min()) >= -1e-8
    return Result(2, "eigenvalue bounds and convexity", ok,
                  {"min_bound_slack": slack, "min_second_difference": float(second.min())},
                  budget=30.0)


def _tilt_residual(env, n):
    fp = eigen.find_front_params(env, n_grid=n)
    ep = eigen.PeriodicGenerator(env, n).eigenpair(fp.lambda_star)
    return eigen.tilt_drift(ep).residual


def c3_tilt_identity(ctx: Context) -> Result:
    env = ctx.env("sine")
    r512 = _tilt_residual(env, 512)
    r1024 = _tilt_residual(env, 1024)
    order = math.log2(r512 / r1024)
    ok = r1024 <= 1e-4 and order >= 1.8
    return Result(3, "tilt identity", ok,
                  {"residual_512": r512, "residual_1024": r1024, "order": order}, budget=10.0)


def c4_lln_renewal(ctx: Context) -> Result:
    env = ctx.env("sine")
    fp = ctx.front("sine")
    ep = eigen.PeriodicGenerator(env, 1024).eigenpair(fp.lambda_star)
    ends = tilted.tilted_endpoints(ep, 0.0, 2000.0, 100, dt=1e-3, seed=41)
    lln = float(np.mean(ends) / 2000.0)
    t1 = tilted.sample_T1(ep, 10**4, dt=2e-5, seed=42, antithetic=True)
    mean_t1 = float(t1.mean())
    e_lln = _rel(lln, fp.v_star)
    e_t1 = _rel(mean_t1, 1.0 / fp.v_star)
    ok = e_lln <= 0.02 and e_t1 <= 0.01
    return Result(4, "tilted LLN and renewal mean", ok,
                  {"mean_Y_over_T": lln, "v_star": fp.v_star, "rel_err_lln": e_lln,
                   "mean_T1": mean_t1, "inv_v_star": 1.0 / fp.v_star, "rel_err_T1": e_t1,
                   "stderr_T1": float(t1.std(ddof=1) / math.sqrt(t1.size))}, budget=300.0)


def c5_ballot(ctx: Context) -> Result:
    env = ctx.env("sine")
    fp = ctx.front("sine")
    ep = eigen.PeriodicGenerator(env, 1024).eigenpair(fp.lambda_star)
    Ns = [64, 128, 256]
    est = tilted.estimate_barrier_curve(ep, Ns, y=2.0, z=0.0, a=1.0, d=0.0, trials=10**5,
                                        seed=51, dt=1e-3)
    p = np.array([e[0] for e in est])
    if np.any(p <= 0):
        return Result(5, "ballot scaling", False, {"p": p.tolist()}, budget=600.0,
                      error="zero hits at some N")
    slope = float(np.polyfit(np.log(Ns), np.log(p), 1)[0])
    return Result(5, "ballot scaling", -1.8 <= slope <= -1.2,
                  {"exponent": slope, "p": p.tolist(), "stderr": [e[1] for e in est]}, budget=600.0)


def c6_many_to_one(ctx: Context) -> Result:
    env = ctx.env("sine")
    lhs, rhs, se = bbm_sim.many_to_one_check(env, 2.0, (0.5, 1.5), 10**5, seed=61)
    ok = abs(lhs - rhs) <= 3 * se
    return Result(6, "many-to-one oracle", ok,
                  {"lhs": lhs, "rhs": rhs, "stderr": se, "z": (lhs - rhs) / se}, budget=300.0)


def _pde_fit(ctx, name, general=False):
    sol = ctx.pde(name, general)
    # the level sets of u follow the extremes of the mirrored medium
    fp_pde = eigen.find_front_params(ctx.env(name).reflected())
    track = fkpp_pde.track_front(sol, 0.5, (50.0, 400.0))
    return sol, fp_pde, track


def c7_pde_speed_delay(ctx: Context) -> Result:
    measured, ok = {}, True
    for name in ("classical", "sine"):
        _, fp, tr = _pde_fit(ctx, name)
        ev = _rel(tr.v_hat, fp.v_star)
        ec = _rel(tr.c_log_hat, fp.log_coeff)
        measured.update({f"{name}_v_hat": tr.v_hat, f"{name}_v_star": fp.v_star,
                         f"{name}_rel_err_v": ev, f"{name}_c_log_hat": tr.c_log_hat,
                         f"{name}_c_target": fp.log_coeff, f"{name}_rel_err_c": ec})
        ok = ok and ev <= 0.005 and ec <= 0.25
    return Result(7, "PDE speed and delay", ok, measured, budget=900.0)


def c8_pulsating(ctx: Context) -> Result:
    measured, ok = {}, True
    for name in ("classical", "sine"):
        sol, _, tr = _pde_fit(ctx, name)
        r = fkpp_pde.pulsating_residual(sol, tr.v_hat, 200.0)
        r_half = fkpp_pde.pulsating_residual(sol, tr.v_hat / 2, 200.0)
        measured.update({f"{name}_residual": r, f"{name}_residual_half_speed": r_half})
        ok = ok and r <= 1e-2 and r_half > 0.1
    return Result(8, "pulsating residual", ok, measured, budget=600.0)


TAIL_WINDOW = 5.0
TAIL_TRIALS = 10**5
BIAS_TRIALS = 400
BIAS_T = 20.0


def prune_bias_check(env, fp, window, trials=BIAS_TRIALS, t=BIAS_T, seed=0):
    """Means of M_t - m_t with the window and twice the window."""
    a = bbm_sim.max_samples(env, fp, t, trials, prune=bbm_sim.PruneConfig(window), seed=seed,
                          min_trials=1)
    b = bbm_sim.max_samples(env, fp, t, trials, prune=bbm_sim.PruneConfig(2 * window), seed=seed,
                          min_trials=1)
    return float(a.centered.mean()), float(b.centered.mean())


def c9_bbm_tail(ctx: Context) -> Result:
    measured, ok = {}, True
    for name, tol in (("classical", 0.10), ("sine", 0.15)):
        env, fp = ctx.env(name), ctx.front(name)
        ms = bbm_sim.max_samples(env, fp, 30.0, TAIL_TRIALS, prune=bbm_sim.PruneConfig(TAIL_WINDOW),
                                 seed=91)
        fit = stats.tail_fit(ms.centered, 2.0, 7.0, "y_times_exponential")
        err = _rel(fit.lambda_hat, fp.lambda_star)
        m1, m2 = prune_bias_check(env, fp, TAIL_WINDOW, seed=92)
        shift = abs(m2 - m1)
        measured.update({f"{name}_lambda_hat": fit.lambda_hat, f"{name}_lambda_star": fp.lambda_star,
                         f"{name}_rel_err": err, f"{name}_r2": fit.r2,
                         f"{name}_window_doubling_shift": shift})
        ok = ok and err <= tol and shift < 0.05
    return Result(9, "BBM tail exponent", ok, measured, budget=3600.0)


def c10_subsequence(ctx: Context) -> Result:
    env, fp = ctx.env("classical"), ctx.front("classical")
    t_a = stats.subsequence_times(fp, 0.0, 20.0, 1).times[0]
    t_b = stats.subsequence_times(fp, 0.0, 40.0, 1).times[0]
    prune = bbm_sim.PruneConfig(TAIL_WINDOW)
    a = bbm_sim.max_samples(env, fp, t_a, 10**4, prune=prune, seed=101).centered
    b = bbm_sim.max_samples(env, fp, t_b, 10**4, prune=prune, seed=102).centered
    ks = stats.ks_distance(a, b)
    return Result(10, "subsequence stabilization", ks <= 0.05,
                  {"t_a": t_a, "t_b": t_b, "ks": ks, "median_a": float(np.median(a)),
                   "median_b": float(np.median(b))}, budget=2700.0)


def c11_brw(ctx: Context) -> Result:
    simple = ctx.config("brw_simple").brw
    lazy = ctx.config("brw_lazy").brw
    fp_simple = eigen.brw_front_params(simple)
    fp_lazy = eigen.brw_front_params(lazy)
    measured = {"simple_attained": fp_simple.attained, "lazy_attained": fp_lazy.attained}
    ok = (not fp_simple.attained) and fp_lazy.attained
    if fp_lazy.attained:
        s = brw_sim.simulate_brw(lazy, [50, 100, 200], brw_sim.DEFAULT_WINDOW, 2000, seed=111,
                                 fp=fp_lazy)
        med = np.median(s.centered, axis=0)
        measured.update({"median_50": med[0], "median_100": med[1], "median_200": med[2]})
        ok = ok and bool(np.all(np.abs(med) <= 5))
    return Result(11, "BRW dichotomy and centering", ok, measured, budget=1200.0)


def c12_diffusion(ctx: Context) -> Result:
    env = ctx.env("drift")
    fp = ctx.front("drift")
    ms = bbm_sim.max_samples(env, fp, 20.0, 1000, prune=bbm_sim.PruneConfig(TAIL_WINDOW),
                             seed=121, diffusion=True)
    speed = float(np.mean(ms.maxima) / 20.0)
    e_sim = _rel(speed, fp.v_star)
    _, fp_pde, tr = _pde_fit(ctx, "drift", general=True)
    e_pde = _rel(tr.v_hat, fp_pde.v_star)
    ok = e_sim <= 0.05 and e_pde <= 0.01
    return Result(12, "diffusion variant consistency", ok,
                  {"v_star": fp.v_star, "M_t_over_t": speed, "rel_err_sim": e_sim,
                   "pde_v_hat": tr.v_hat, "pde_v_star": fp_pde.v_star, "rel_err_pde": e_pde},
                  budget=1800.0)


CRITERIA: dict[int, Callable[[Context], Result]] = {
    1: c1_classical, 2: c2_bounds_convexity, 3: c3_tilt_identity, 4: c4_lln_renewal,
    5: c5_ballot, 6: c6_many_to_one, 7: c7_pde_speed_delay, 8: c8_pulsating,
    9: c9_bbm_tail, 10: c10_subsequence, 11: c11_brw, 12: c12_diffusion,
}
SUITES = {"fast": (1, 2, 3, 7, 8), "full": tuple(CRITERIA)}
NAMES = {1: "classical constants", 2: "eigenvalue bounds and convexity", 3: "tilt identity",
         4: "tilted LLN and renewal mean", 5: "ballot scaling", 6: "many-to-one oracle",
         7: "PDE speed and delay", 8: "pulsating residual", 9: "BBM tail exponent",
         10: "subsequence stabilization", 11: "BRW dichotomy and centering",
         12: "diffusion variant consistency"}


def run_criterion(number: int, ctx: Context | None = None) -> Result:
    ctx = ctx or Context()
    start = time.perf_counter()
    try:
        res = CRITERIA[number](ctx)
    except Exception as exc:  # a crash is a failed criterion, reported by name
        res = Result(number, NAMES[number], False, error=f"{type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - start
    if res.seconds > res.budget:
        res.passed = False
        res.error = (res.error or "") + f"runtime {res.seconds:.1f}s over budget {res.budget:g}s"
    return res


def run_suite(suite: str = "fast", config_dir=None, only=None, echo=None) -> list[Result]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    ctx = Context(config_dir)
    out = []
    for n in SUITES[suite]:
        if only and n not in only:
            continue
        r = run_criterion(n, ctx)
        if echo:
            echo(r.line())
        out.append(r)
    return out
