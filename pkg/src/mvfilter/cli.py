"""``mvfilter`` experiment runner.

Subcommands: check, simulate, filter, skeleton, rate, laplace, sweep.  Every
run writes CSV/JSON artifacts plus ``manifest.json`` into the output
directory.  ``--threads`` changes speed only, never values.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import io
from .config import ConfigError
from .filtering import kalman_bucy_rmse, ks_residual, run_zakai, zakai_residual
from .ldp import (ConstantFunctional, ControlPath, OptimizerConfig, RateSearch, SkeletonProblem,
                  SquaredDeviation, ZeroFunctional, contraction_check, control_preset,
                  estimate_rate, ks_skeleton_residual, laplace_check, zakai_skeleton_residual)
from .lions import resolve_family
from .model import GALLERY, SampleSpec, check_assumptions, gallery
from .simulate import TimeGrid, prior_flow, simulate_observation, simulate_signal


# ---------------------------------------------------------------------------
# builders

def build_entry(cfg):
    return gallery(cfg["model"]["name"], **cfg["model"]["params"])


def build_grid(cfg, steps=None):
    return TimeGrid(float(cfg["grid"]["T"]), int(steps or cfg["grid"]["steps"]))


def build_control(cfg, grid, m):
    c = cfg["control"]
    if c["values"] is not None:
        vals = np.asarray(c["values"], dtype=np.float64)
        if vals.shape[0] != grid.steps:
            raise ConfigError("control.values", f"has {vals.shape[0]} entries, grid has "
                                                f"{grid.steps} steps")
        return ControlPath(grid, vals.reshape(grid.steps, -1))
    if c["pieces"] is not None:
        return ControlPath.from_pieces(grid, np.asarray(c["pieces"], dtype=np.float64)
                                       .reshape(len(c["pieces"]), -1))
    return control_preset(c["preset"], grid, m)


def build_optimizer(cfg):
    o = cfg["optimizer"]
    return OptimizerConfig(n_pieces=o["n_pieces"], lambdas=tuple(float(v) for v in o["lambdas"]),
                           max_iter=o["max_iter"], fd_step=float(o["fd_step"]),
                           threads=cfg["threads"])


def _signal(cfg, entry, grid=None, N=None):
    grid = grid or build_grid(cfg)
    return simulate_signal(entry.coeffs, entry.x0, grid, N or cfg["particles"]["N"], cfg["seed"],
                           cfg["threads"])


def _columns(prefix, d):
    return [f"{prefix}{nm}" for nm in d], [d[nm] for nm in d]


# ---------------------------------------------------------------------------
# subcommands; each returns (artifact paths, exit status)

def cmd_check(cfg, out, args):
    names = sorted(GALLERY) if args.all else [cfg["model"]["name"]]
    reports = []
    for nm in names:
        entry = gallery(nm) if args.all else build_entry(cfg)
        spec = SampleSpec(t_range=(0.0, float(cfg["grid"]["T"])), seed=cfg["seed"])
        reports.append(check_assumptions(entry.coeffs, spec))
    for r in reports:
        print(f"{r.model}: {r.status}")
    path = io.write_json(out / "assumptions.json", {"reports": [r.to_dict() for r in reports]})
    return [path], 0 if all(r.passed for r in reports) else 1


def cmd_simulate(cfg, out, args):
    entry = build_entry(cfg)
    signal = _signal(cfg, entry)
    obs = simulate_observation(entry.coeffs, signal, cfg["observation"]["epsilon"], cfg["seed"],
                               cfg["observation"]["measure"], cfg["observation"]["stream"])
    t = signal.grid.times
    n, m = entry.coeffs.n, entry.coeffs.m
    ref = signal.reference_path
    mean = signal.particles.mean(axis=1)
    Y = obs.values
    header = (["t"] + [f"x{i}" for i in range(n)] + [f"mean{i}" for i in range(n)]
              + [f"y{j}" for j in range(m)])
    cols = [t] + [ref[:, i] for i in range(n)] + [mean[:, i] for i in range(n)] \
        + [Y[:, j] for j in range(m)]
    paths = [io.write_csv(out / "simulate.csv", header, cols)]
    fam = resolve_family(cfg["filter"]["test_functions"], n)
    h, c = _columns("prior_", prior_flow(fam, signal))
    paths.append(io.write_csv(out / "prior.csv", ["t"] + h, [t] + c))
    if args.replay:
        paths.append(io.write_replay(out / "replay.bin",
                                     {"particles": signal.particles, "dY": obs.dY},
                                     {"seed": cfg["seed"], "T": signal.grid.T,
                                      "steps": signal.grid.steps, "N": signal.N}))
    return paths, 0


def cmd_filter(cfg, out, args):
    entry = build_entry(cfg)
    co = entry.coeffs
    signal = _signal(cfg, entry)
    obs = simulate_observation(co, signal, cfg["observation"]["epsilon"], cfg["seed"],
                               cfg["observation"]["measure"], cfg["observation"]["stream"])
    fam = resolve_family(cfg["filter"]["test_functions"], co.n)
    path = run_zakai(co, signal, obs, fam, cfg["threads"], cfg["filter"]["resample"],
                     cfg["filter"]["ess_threshold"])
    t = signal.grid.times
    header, cols = ["t", "mass", "ess"], [t, path.mass, path.ess]
    for prefix, d in (("pi_", path.normalized), ("P_", path.unnormalized),
                      ("prior_", prior_flow(fam, signal))):
        h, c = _columns(prefix, d)
        header += h
        cols += c
    summary = {"ks_identity_gap": path.ks_identity_gap(),
               "resampled_steps": len(path.resampled_steps)}
    if entry.oracle == "kalman-bucy" and "x" in fam:
        rmse, kb_mean, kb_var = kalman_bucy_rmse(path, entry, obs)
        header += ["kb_mean", "kb_var"]
        cols += [kb_mean, kb_var]
        summary["kalman_bucy_rmse"] = rmse
    paths = [io.write_csv(out / "filter.csv", header, cols),
             io.write_json(out / "filter_summary.json", summary)]
    return paths, 0


def cmd_skeleton(cfg, out, args):
    entry = build_entry(cfg)
    co = entry.coeffs
    signal = _signal(cfg, entry)
    grid = signal.grid
    psi = build_control(cfg, grid, co.m)
    fam = resolve_family(cfg["filter"]["test_functions"], co.n)
    sk = SkeletonProblem(co, signal, fam).solve(psi)
    header, cols = ["t", "mass", "M"], [grid.times, sk.mass, sk.M]
    for prefix, d in (("P_", sk.unnormalized), ("pi_", sk.normalized)):
        h, c = _columns(prefix, d)
        header += h
        cols += c
    rep = contraction_check(co, signal, psi, fam)
    summary = {"control_cost": psi.cost, "identity_gap": sk.identity_gap(),
               "contraction": rep.to_dict()}
    paths = [io.write_csv(out / "skeleton.csv", header, cols),
             io.write_json(out / "skeleton_summary.json", summary)]
    return paths, 0


def cmd_rate(cfg, out, args):
    entry = build_entry(cfg)
    co = entry.coeffs
    signal = _signal(cfg, entry)
    grid = signal.grid
    names = cfg["optimizer"]["test_functions"]
    problem = SkeletonProblem(co, signal, resolve_family(names, co.n))
    if cfg["optimizer"]["target"] == "prior":
        source = ControlPath.constant(grid, 0.0, co.m)
        desc = "prior"
    else:
        source = build_control(cfg, grid, co.m)
        desc = f"forward skeleton of control (cost {source.cost!r})"
    sk = problem.solve(source)
    target = {nm: sk.normalized[nm] for nm in names}
    est = estimate_rate(co, signal, target, float(cfg["optimizer"]["tol"]), build_optimizer(cfg),
                        problem=problem, description=desc)
    report = est.to_dict()
    report["source_cost"] = source.cost
    print(f"cost {est.cost:.6g}  matching error {est.max_matching_error:.3g}  "
          f"feasible {est.feasible}")
    paths = [io.write_json(out / "rate.json", report),
             io.write_csv(out / "rate_control.csv", ["t"] + [f"psi{j}" for j in range(co.m)],
                          [grid.times[:-1]] + [est.psi.values[:, j] for j in range(co.m)])]
    return paths, 0 if est.feasible else 1


def build_functional(cfg, problem):
    L = cfg["laplace"]
    if L["functional"] == "zero":
        return ZeroFunctional()
    if L["functional"] == "constant":
        return ConstantFunctional(L["constant"])
    prior = problem.solve(ControlPath.constant(problem.grid, 0.0, problem.coeffs.m))
    return SquaredDeviation({nm: prior.normalized[nm] for nm in L["test_functions"]},
                            problem.grid.dt, L["cap"])


def _laplace(cfg, entry, signal, eps_list):
    co = entry.coeffs
    L = cfg["laplace"]
    problem = SkeletonProblem(co, signal, resolve_family(L["test_functions"], co.n))
    G = build_functional(cfg, problem)
    search = RateSearch(controls=tuple(float(c) for c in L["controls"]), nested=L["nested"],
                        tol=float(cfg["optimizer"]["tol"]))
    return laplace_check(co, signal, G, eps_list, L["mc_samples"], cfg["seed"], search=search,
                         threads=cfg["threads"], problem=problem)


def cmd_laplace(cfg, out, args):
    entry = build_entry(cfg)
    signal = _signal(cfg, entry)
    res = _laplace(cfg, entry, signal, [float(e) for e in cfg["laplace"]["eps_list"]])
    rows = res.rows
    diffs = [float("nan")] + res.differences.tolist()
    paths = [io.write_csv(out / "laplace.csv",
                          ["epsilon", "value", "stderr", "ess", "difference"],
                          [[r.epsilon for r in rows], [r.value for r in rows],
                           [r.stderr for r in rows], [r.ess for r in rows], diffs]),
             io.write_json(out / "laplace.json", res.to_dict())]
    print(f"bound {res.bound:.6g}  trend_ok {res.trend_ok}  bound_ok {res.bound_ok}")
    return paths, 0


def sweep_point(cfg, entry, axis, value):
    """Diagnostic value at one sweep point."""
    co = entry.coeffs
    sw = cfg["sweep"]
    diag = sw["diagnostic"]
    T = float(cfg["grid"]["T"])
    steps, N, eps = cfg["grid"]["steps"], cfg["particles"]["N"], cfg["observation"]["epsilon"]
    if axis == "dt":
        steps = int(round(T / value))
    elif axis == "N":
        N = int(value)
    else:
        eps = float(value)
    grid = TimeGrid(T, steps)
    F = resolve_family([sw["test_function"]], co.n)[sw["test_function"]]
    seeds = [cfg["seed"] + i for i in range(sw["seeds"])]
    vals = []
    for seed in seeds:
        signal = simulate_signal(co, entry.x0, grid, N, seed, cfg["threads"])
        if diag.startswith("skeleton"):
            psi = build_control(cfg, grid, co.m)
            sk = SkeletonProblem(co, signal, {F.name: F}).solve(psi)
            fn = zakai_skeleton_residual if diag == "skeleton_zakai_residual" \
                else ks_skeleton_residual
            vals.append(fn(sk, co, signal, psi, F).rms)
            continue
        obs = simulate_observation(co, signal, eps, seed, cfg["observation"]["measure"])
        if diag == "oracle_rmse":
            if entry.oracle != "kalman-bucy":
                raise ConfigError("sweep.diagnostic", "oracle_rmse needs the linear-gaussian model")
            path = run_zakai(co, signal, obs, resolve_family(["x"], co.n), cfg["threads"])
            vals.append(kalman_bucy_rmse(path, entry, obs)[0])
        else:
            path = run_zakai(co, signal, obs, {F.name: F}, cfg["threads"])
            fn = zakai_residual if diag == "zakai_residual" else ks_residual
            vals.append(fn(path, co, F, obs, compensate=True).rms)
    return float(np.mean(vals))


def fit_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.abs(np.asarray(y, dtype=float))
    ok = (x > 0) & (y > 0)
    if np.count_nonzero(ok) < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def cmd_sweep(cfg, out, args):
    sw = cfg["sweep"]
    axis = sw["axis"]
    values = [float(v) for v in sw["values"]]
    if len(values) < 3:
        raise ConfigError("sweep.values", f"need at least 3 axis points, got {len(values)}")
    d = np.diff(values)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ConfigError("sweep.values", "axis values must be strictly monotone")
    entry = build_entry(cfg)
    if sw["diagnostic"] == "laplace" or axis == "eps":
        if not (sw["diagnostic"] == "laplace" and axis == "eps"):
            raise ConfigError("sweep.diagnostic", "the laplace diagnostic pairs with axis 'eps'")
        signal = _signal(cfg, entry)
        res = _laplace(cfg, entry, signal, values)
        diag = res.values.tolist()
        extra = {"laplace": res.to_dict()}
    else:
        diag = [sweep_point(cfg, entry, axis, v) for v in values]
        extra = {}
    slope = fit_slope(values, diag)
    print(f"{sw['diagnostic']} vs {axis}: fitted log-log slope {slope:.4g}")
    paths = [io.write_csv(out / "sweep.csv", [axis, sw["diagnostic"]], [values, diag]),
             io.write_json(out / "sweep.json", dict({"axis": axis, "values": values,
                                                     "diagnostic": sw["diagnostic"],
                                                     "table": diag, "slope": slope}, **extra))]
    return paths, 0


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "skeleton": cmd_skeleton,
    "rate": cmd_rate,
    "laplace": cmd_laplace,
    "sweep": cmd_sweep,
}


def make_parser():
    p = argparse.ArgumentParser(prog="mvfilter", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="TOML experiment config")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--threads", type=int, help="worker threads (speed only)")
        if name == "check":
            s.add_argument("--all", action="store_true", help="check every gallery model")
        if name == "simulate":
            s.add_argument("--replay", action="store_true", help="also write a binary replay file")
    return p


def resolve_config(args):
    raw = {}
    if args.config is not None:
        cfg = config_mod.load(args.config)
    else:
        cfg = config_mod.validate(raw)
    overrides = {k: getattr(args, k) for k in ("seed", "threads") if getattr(args, k) is not None}
    if args.out is not None:
        overrides["out"] = str(args.out)
    if overrides:
        merged = {k: v for k, v in cfg.items()}
        merged.update(overrides)
        cfg = config_mod.validate(merged)
    return cfg


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        paths, status = COMMANDS[args.command](cfg, out, args)
        # threads never affect values, so keep it out of the hashed config
        recorded = {k: v for k, v in cfg.items() if k not in ("threads", "out")}
        io.write_manifest(out, recorded, paths, {"command": args.command})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        module = type(exc).__module__
        print(f"error [{module}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return status


if __name__ == "__main__":
    sys.exit(main())
