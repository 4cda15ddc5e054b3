"""Command line entry point: eigen, simulate, pde, stats, verify, replay.

Exit codes: 0 success, 1 acceptance failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _f(x) -> str:
    return f"{float(x):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"periodic_bbm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def write_manifest(out: Path, argv, cfg, seeds, files, started):
    manifest = {
        "argv": list(argv),
        "config_source": cfg.source if cfg else None,
        "config_text": cfg.text if cfg else None,
        "seeds": seeds,
        "versions": _versions(),
        "wall_clock_seconds": time.perf_counter() - started,
        "outputs": {p.name: _sha256(p) for p in files},
    }
    write_json(out / "manifest.json", manifest)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(path):
    from .config import load_config
    return load_config(path)


def _pick(cli_value, cfg, key, default):
    if cli_value is not None:
        return cli_value
    return cfg.get(key, default) if cfg is not None else default


# --- eigen -------------------------------------------------------------------------------

def _lambda_grid(text):
    if text is None:
        return np.round(np.arange(1, 51) * 0.1, 10)
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    return np.array([float(v) for v in text.split(",")])


def cmd_eigen(args, argv, started):
    from .eigen import find_front_params, gamma_curve
    from .config import load_config
    cfg = _config(args.config)
    n_grid = int(_pick(args.n_grid, cfg, "n_grid", 1024))
    if n_grid > 1024:
        # sample expressions at the solver resolution so refinement compares like with like
        cfg = load_config(args.config, n_grid=n_grid)
    if cfg.env is None:
        raise UsageError("eigen needs an environment (g, mu, sigma, offspring)")
    try:
        lambdas = _lambda_grid(args.lambda_grid)
    except ValueError:
        raise UsageError(f"bad --lambda-grid {args.lambda_grid!r}") from None
    if np.any(lambdas <= 0):
        raise UsageError("lambda values must be positive")
    curve = gamma_curve(cfg.env, lambdas, n_grid)
    fp = find_front_params(cfg.env, n_grid=n_grid)
    report = fp.to_json()
    report["n_grid"] = n_grid
    out = _outdir(args.out)
    write_csv(out / "gamma_curve.csv", ["lambda", "gamma", "gamma_over_lambda"],
              [[_f(l), _f(g), _f(g / l)] for l, g in zip(curve.lambdas, curve.gammas)])
    write_json(out / "front_params.json", report)
    write_manifest(out, argv, cfg, {}, [out / "gamma_curve.csv", out / "front_params.json"], started)
    print(json.dumps(_jsonable(report)))
    return EXIT_OK


# --- simulate ---------------------------------------------------------------------------

def cmd_simulate(args, argv, started):
    from .rng import check_seed
    cfg = _config(args.config)
    model = _pick(args.model, cfg, "model", "bbm")
    trials = int(_pick(args.trials, cfg, "trials", 1000))
    seed = check_seed(_pick(args.seed, cfg, "seed", 0))
    if trials < 0:
        raise UsageError("--trials must be non-negative")
    out = _outdir(args.out)
    path = out / "samples.csv"
    if model == "brw":
        rows = _simulate_brw(args, cfg, trials, seed)
        header = ["trial", "n", "M_n", "centered"]
    elif model in ("bbm", "diffusion"):
        rows = _simulate_bbm(args, cfg, model, trials, seed)
        header = ["trial", "t", "M_t", "centered", "pruned_count"]
    else:
        raise UsageError(f"unknown model {model!r}")
    write_csv(path, header, rows)
    write_manifest(out, argv, cfg, {"master": seed, "trials": trials,
                                    "scheme": "trial k uses Philox keyed by SeedSequence([seed, k])"},
                   [path], started)
    return EXIT_OK


def _simulate_brw(args, cfg, trials, seed):
    from .brw_sim import DEFAULT_WINDOW, _attained, run_brw
    from .eigen import front_position
    if cfg.brw is None:
        raise UsageError("--model brw needs a [brw] table")
    n = int(_pick(args.t, cfg, "t", 100))
    window = int(_pick(args.prune_window, cfg, "prune_window", DEFAULT_WINDOW))
    fp = _attained(cfg.brw)
    m_n = front_position(fp, float(n))
    rows = []
    for k in range(trials):
        _, mx = run_brw(cfg.brw, n, window, seed, k)
        rows.append([k, n, int(mx[0]), _f(mx[0] - m_n)])
    return rows


def _simulate_bbm(args, cfg, model, trials, seed):
    from .bbm_sim import DEFAULT_CAP, DEFAULT_DT, PruneConfig, _require_positive_speed, max_samples
    from .eigen import find_front_params
    if cfg.env is None:
        raise UsageError(f"--model {model} needs an environment")
    t = float(_pick(args.t, cfg, "t", 10.0))
    window = float(_pick(args.prune_window, cfg, "prune_window", 30.0))
    dt = float(_pick(args.dt, cfg, "dt", DEFAULT_DT))
    cap = int(_pick(None, cfg, "hard_cap", DEFAULT_CAP))
    diffusion = model == "diffusion"
    fp = _require_positive_speed(cfg.env) if diffusion else find_front_params(cfg.env)
    if trials == 0:
        return []
    ms = max_samples(cfg.env, fp, t, trials, dt, PruneConfig(window, cap), seed,
                     diffusion=diffusion, min_trials=0)
    return [[k, _f(t), _f(m), _f(c), int(p)]
            for k, (m, c, p) in enumerate(zip(ms.maxima, ms.centered, ms.pruned))]


# --- pde -----------------------------------------------------------------------------------

def cmd_pde(args, argv, started):
    from .eigen import find_front_params
    from .fkpp_pde import (GridConfig, pulsating_residual, solve_fkpp, solve_general_fkpp,
                           track_front, write_frames_csv)
    cfg = _config(args.config)
    if cfg.env is None:
        raise UsageError("pde needs an environment")
    t_end = float(_pick(args.t_end, cfg, "t_end", 400.0))
    dx = float(_pick(args.dx, cfg, "dx", 1.0 / 64))
    level = float(_pick(args.level, cfg, "level", 0.5))
    fit = _pick(args.fit_range, cfg, "fit_range", [50.0, 400.0])
    t0 = float(_pick(args.t0, cfg, "t0", 200.0))
    if not 0.1 <= level <= 0.9:
        raise UsageError("--level must lie in [0.1, 0.9]")
    lo, hi = float(fit[0]), float(fit[1])
    if t_end < hi or lo <= 0:
        raise UsageError("fit range outside solution")
    try:
        gc = GridConfig(dx=dx, dt=args.dt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    solver = solve_general_fkpp if (args.general or not cfg.env.is_classical) else solve_fkpp
    sol = solver(cfg.env, t_end, gc)
    track = track_front(sol, level, (lo, hi))
    fp = find_front_params(cfg.env.reflected())
    report = track.to_json()
    report.update({"v_star": fp.v_star, "log_coeff": fp.log_coeff, "t_end": t_end, "dx": gc.dx,
                   "dt": sol.dt, "clamp_max": sol.clamp_max})
    if t0 + cfg.env.period / track.v_hat <= t_end:
        report["pulsating_t0"] = t0
        report["pulsating_residual"] = pulsating_residual(sol, track.v_hat, t0)
    out = _outdir(args.out)
    files = [out / "front.json", out / "front_positions.csv"]
    write_json(out / "front.json", report)
    write_csv(out / "front_positions.csv", ["t", "x_level"],
              [[_f(t), _f(x)] for t, x in zip(track.times, track.positions)])
    if args.frames:
        write_frames_csv(out / "frames.csv", sol, args.frames)
        files.append(out / "frames.csv")
    write_manifest(out, argv, cfg, {}, files, started)
    print(json.dumps(_jsonable(report)))
    return EXIT_OK


# --- stats ----------------------------------------------------------------------------------

def _column(path, name):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or name not in reader.fieldnames:
            raise UsageError(f"{path} has no column {name!r}")
        return np.array([float(r[name]) for r in reader])


def cmd_stats(args, argv, started):
    from . import stats
    out = _outdir(args.out)
    if args.stats_cmd == "tail":
        x = _column(args.samples, args.column)
        fit = stats.tail_fit(x, args.y_min, args.y_max, args.model)
        write_json(out / "tail_fit.json", fit.to_json())
        stats.write_tail_csv(out / "tail_bins.csv", fit)
        files = [out / "tail_fit.json", out / "tail_bins.csv"]
        report = {"lambda_hat": fit.lambda_hat, "r2": fit.r2}
        cfg = None
    elif args.stats_cmd == "ks":
        a, b = _column(args.a, args.column), _column(args.b, args.column)
        report = {"ks": stats.ks_distance(a, b), "n_a": a.size, "n_b": b.size}
        write_json(out / "ks.json", report)
        files, cfg = [out / "ks.json"], None
    else:
        from .eigen import find_front_params
        cfg = _config(args.config)
        fp = find_front_params(cfg.env)
        spec = stats.subsequence_times(fp, args.p, args.t_min, args.count)
        report = spec.to_json()
        write_json(out / "subsequence.json", report)
        files = [out / "subsequence.json"]
    write_manifest(out, argv, cfg, {}, files, started)
    print(json.dumps(_jsonable(report)))
    return EXIT_OK


# --- verify / replay --------------------------------------------------------------------------

def cmd_verify(args, argv, started):
    from .acceptance import run_suite
    only = None
    if args.only:
        only = {int(v) for v in args.only.split(",")}
    results = run_suite(args.suite, args.configs, only,
                        echo=lambda line: print(line, flush=True))
    report = {"suite": args.suite, "passed": all(r.passed for r in results),
              "criteria": [r.to_json() for r in results]}
    if args.out:
        out = _outdir(args.out)
        write_json(out / "verify.json", report)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_replay(args, argv, started):
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    old = list(manifest["argv"])
    if manifest.get("config_text") is not None and old[:1] != ["verify"]:
        cfg_path = Path(args.out) / "replay_config.toml"
        Path(args.out).mkdir(parents=True, exist_ok=True)
        cfg_path.write_text(manifest["config_text"], encoding="utf-8")
        old = _replace_positional_config(old, str(cfg_path))
    old = _replace_option(old, "--out", args.out)
    return main(old)


def _replace_option(argv, flag, value):
    argv = list(argv)
    if flag in argv:
        argv[argv.index(flag) + 1] = value
    else:
        argv += [flag, value]
    return argv


def _replace_positional_config(argv, path):
    # the config is the first positional after the subcommand(s)
    argv = list(argv)
    start = 2 if argv[0] == "stats" else 1
    for i in range(start, len(argv)):
        if not argv[i].startswith("-") and (i == 0 or not argv[i - 1].startswith("--")):
            argv[i] = path
            break
    return argv


# --- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="periodic-bbm",
                                description="Extremes of branching Brownian motion in periodic media.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eigen", help="gamma(lambda) curve and front constants")
    e.add_argument("config")
    e.add_argument("--lambda-grid", help="a:b:n or comma list")
    e.add_argument("--n-grid", type=int)
    e.add_argument("--out", default="out/eigen")

    s = sub.add_parser("simulate", help="Monte Carlo maxima")
    s.add_argument("config")
    s.add_argument("--model", choices=["bbm", "diffusion", "brw"])
    s.add_argument("--t", type=float, help="time (generations for brw)")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--prune-window", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--out", default="out/simulate")

    d = sub.add_parser("pde", help="F-KPP front")
    d.add_argument("config")
    d.add_argument("--t-end", type=float)
    d.add_argument("--dx", type=float)
    d.add_argument("--dt", type=float)
    d.add_argument("--level", type=float)
    d.add_argument("--fit-range", type=float, nargs=2)
    d.add_argument("--t0", type=float)
    d.add_argument("--general", action="store_true", help="always use the general solver")
    d.add_argument("--frames", type=int, default=0, metavar="EVERY",
                   help="dump every EVERY-th frame to frames.csv")
    d.add_argument("--out", default="out/pde")

    st = sub.add_parser("stats", help="tail fits, KS distance, subsequence times")
    ss = st.add_subparsers(dest="stats_cmd", required=True)
    t = ss.add_parser("tail")
    t.add_argument("samples")
    t.add_argument("--column", default="centered")
    t.add_argument("--y-min", type=float, default=2.0)
    t.add_argument("--y-max", type=float, default=7.0)
    t.add_argument("--model", choices=["pure_exponential", "y_times_exponential"],
                   default="y_times_exponential")
    t.add_argument("--out", default="out/stats")
    k = ss.add_parser("ks")
    k.add_argument("a")
    k.add_argument("b")
    k.add_argument("--column", default="centered")
    k.add_argument("--out", default="out/stats")
    q = ss.add_parser("subseq")
    q.add_argument("config")
    q.add_argument("--p", type=float, default=0.0)
    q.add_argument("--t-min", type=float, default=2.0)
    q.add_argument("--count", type=int, default=10)
    q.add_argument("--out", default="out/stats")

    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--suite", choices=["fast", "full"], default="fast")
    v.add_argument("--configs", help="directory overriding the packaged configs")
    v.add_argument("--only", help="comma list of criterion numbers")
    v.add_argument("--out")

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    return p


COMMANDS = {"eigen": cmd_eigen, "simulate": cmd_simulate, "pde": cmd_pde, "stats": cmd_stats,
            "verify": cmd_verify, "replay": cmd_replay}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    from .bbm_sim import PopulationCapError, UnsupportedRegimeError
    from .eigen import EigenError, NotAttainedError
    from .env import ConfigError
    started = time.perf_counter()
    try:
        return COMMANDS[args.command](args, argv, started)
    except (UsageError, ConfigError, NotAttainedError, UnsupportedRegimeError,
            PopulationCapError, EigenError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
