"""Command line entry point.

Subcommands: ``run``, ``toy``, ``sweep``, ``bounds``, ``describe-schedule``.
Every subcommand writes CSV files into the output directory.

Exit codes: 0 success, 1 validation error, 2 every trial diverged, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import theory
from .config import Config, ConfigError, RunSection, load_config
from .optimizers import DivergenceError, initial_lyapunov, run_ensemble, run_sgd, run_sgdm
from .problems import ProblemError, classify_basins
from .schedules import ScheduleError, describe

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


class AllDiverged(RuntimeError):
    pass


def parse_T_grid(text: str) -> list[int]:
    """``a:b`` gives every power of ten from a to b; ``a:b:n`` gives n log-spaced points."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"T grid must look like 1e2:1e6 or 1e2:1e6:9, got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if not 2 <= lo < hi:
        raise ValueError(f"T grid needs 2 <= start < stop, got {text!r}")
    if len(parts) == 3:
        n = int(parts[2])
        if n < 2:
            raise ValueError("T grid needs at least two points")
    else:
        n = int(round(math.log10(hi / lo))) + 1
    grid = np.unique(np.round(np.logspace(math.log10(lo), math.log10(hi), n)).astype(int))
    return grid.tolist()


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _g(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.10g}"


def _seeds(cfg: Config):
    return cfg.run.seed + np.arange(cfg.run.trials)


def _require_schedules(cfg: Config):
    if not cfg.schedules:
        raise ConfigError([(0, "config defines no schedule")])


# --- subcommands ---------------------------------------------------------------


def cmd_run(cfg: Config, out: Path, args) -> list[Path]:
    """Trajectory of the first seed plus a summary row per seed, for every schedule."""
    _require_schedules(cfg)
    obj, noise, x0 = cfg.problem.objective(), cfg.noise.model(), cfg.problem.start()
    beta = cfg.run.beta
    written, any_alive = [], False
    for name, template in cfg.templates():
        spec = template.build(cfg.run.T)
        ens = run_ensemble(obj, noise, spec, _seeds(cfg), x0=x0, beta=beta, reset_momentum=cfg.run.reset_momentum, workers=args.workers)
        any_alive |= bool((~ens.diverged).any())
        f_hat = obj.f(ens.x_hat)
        g_hat = ex.grad_norm_sq(obj, ens.x_hat)
        labels = classify_basins(obj, np.nan_to_num(ens.x_hat)) if obj.minima else None
        rows = []
        for j, s in enumerate(ens.seeds):
            dead = bool(ens.diverged[j])
            rows.append([
                int(s),
                "" if dead else _g(float(f_hat[j])),
                "" if dead else _g(float(g_hat[j])),
                "" if dead or labels is None else int(labels[j]),
                str(dead).lower(),
            ])
        path = out / f"run_{name}_summary.csv"
        _write_rows(path, ("seed", "f_hat", "grad_norm_sq_hat", "basin_label", "diverged"), rows)
        written.append(path)

        try:
            if beta is None:
                res = run_sgd(obj, noise, spec, cfg.run.seed, x0=x0, store_iterates=False)
            else:
                res = run_sgdm(obj, noise, spec, beta, cfg.run.seed, x0=x0, reset_momentum=cfg.run.reset_momentum, store_iterates=False)
        except DivergenceError as exc:
            print(f"warning: schedule {name}, seed {exc.seed} diverged at step {exc.step}", file=sys.stderr)
            continue
        tr = res.trajectory
        path = out / f"run_{name}_trajectory.csv"
        _write_rows(
            path,
            ("global_step", "stage", "inner", "eta", "f", "grad_norm_sq"),
            ([k + 1, int(tr.stage[k]), int(tr.inner[k]), _g(tr.eta[k]), _g(tr.f[k]), _g(tr.grad_norm_sq[k])] for k in range(tr.T)),
        )
        written.append(path)
    if not any_alive:
        raise AllDiverged("every trial diverged")
    return written


def cmd_toy(cfg: Config, out: Path, args) -> list[Path]:
    if cfg.problem.name != "toy2d":
        raise ConfigError([(0, "toy study needs problem name = toy2d")])
    roster = tuple(cfg.templates()) or ex.default_toy_roster()
    tc = ex.ToyStudyConfig(
        trials=cfg.run.trials,
        T=cfg.run.T,
        x0=tuple(cfg.problem.start()),
        roster=roster,
        base_seed=cfg.run.seed,
        workers=args.workers,
    )
    report = ex.run_toy_study(tc, noise=cfg.noise.model())
    path = out / "toy_report.csv"
    report.to_csv(path)
    if all(r.diverged == tc.trials for r in report.rows):
        raise AllDiverged("every trial diverged")
    return [path]


def cmd_sweep(cfg: Config, out: Path, args) -> list[Path]:
    _require_schedules(cfg)
    grid = args.T_grid or cfg.run.T_grid
    if not grid:
        raise ConfigError([(0, "sweep needs [run] T_grid or --T-grid")])
    obj, noise, x0 = cfg.problem.objective(), cfg.noise.model(), cfg.problem.start()
    rows, fits = [], []
    for name, template in cfg.templates():
        rep = ex.run_rate_sweep(obj, noise, template, grid, cfg.run.trials, beta=cfg.run.beta, base_seed=cfg.run.seed, x0=x0, workers=args.workers, name=name)
        rows += rep.csv_rows()
        fit = rep.fit
        fits.append([name, _g(fit.slope), _g(fit.intercept), _g(fit.r_squared)] if fit else [name, "", "", ""])
        for T in rep.dropped:
            print(f"warning: schedule {name}, T={T}: every trial diverged, point dropped", file=sys.stderr)
    if not rows:
        raise AllDiverged("every trial diverged")
    p1, p2 = out / "sweep.csv", out / "sweep_fit.csv"
    _write_rows(p1, ex.RateSweepReport.COLUMNS, rows)
    _write_rows(p2, ("schedule", "slope", "intercept", "r_squared"), fits)
    return [p1, p2]


def _envelope(cfg: Config, grid) -> list[list]:
    obj, noise = cfg.problem.objective(), cfg.noise.model()
    L = cfg.theory.L if cfg.theory.L is not None else obj.L
    if L is None:
        raise ConfigError([(0, f"{obj.name} has no global L; set [theory] L")])
    rho, sigma = noise.constants(obj.dim)
    x0 = np.asarray(cfg.problem.start(), dtype=float)
    d0 = cfg.theory.Delta0 if cfg.theory.Delta0 is not None else float(obj.f(x0) - obj.fstar)
    consts = theory.ProblemConstants(L=L, rho=rho, sigma=sigma, G=cfg.theory.G or 0.0, Delta0=d0)
    multi = len(cfg.schedules) > 1
    rows = []
    for name, template in cfg.templates():
        for T in grid:
            spec = template.build(T)
            for b in cfg.theory.bounds:
                if b in theory.SGDM_BOUNDS:
                    if cfg.run.beta is None or cfg.theory.G is None:
                        raise ConfigError([(0, f"bound {b} needs [run] beta and [theory] G")])
                    mc = theory.momentum_constants(cfg.run.beta, consts)
                    W11 = initial_lyapunov(obj, x0, float(spec.lower(1)), mc)
                    value = theory.sgdm_bound_for(b, spec, W11, mc)
                elif b == "stagewise":
                    continue  # needs measured stage values
                else:
                    value = theory.sgd_bound_for(b, spec, consts)
                rows.append([T, f"{name}/{b}" if multi else b, _g(value)])
    return rows


def cmd_bounds(cfg: Config, out: Path, args) -> list[Path]:
    """Bound envelope over a T grid, or (with --check) Monte Carlo certification."""
    _require_schedules(cfg)
    if not cfg.theory.bounds:
        raise ConfigError([(0, "bounds needs [theory] bounds")])
    grid = args.T_grid or cfg.run.T_grid or [cfg.run.T]
    if not args.check:
        path = out / "bounds.csv"
        _write_rows(path, ("T", "bound_name", "value"), _envelope(cfg, grid))
        return [path]

    obj, noise, x0 = cfg.problem.objective(), cfg.noise.model(), cfg.problem.start()
    checks = []
    n = cfg.run.trials
    for name, template in cfg.templates():
        for T in grid:
            spec = template.build(T)
            # repeat r uses seeds seed + r*n ... seed + r*n + n - 1; one batch, then split
            seeds = cfg.run.seed + np.arange(cfg.theory.repeats * n)
            batch = run_ensemble(obj, noise, spec, seeds, x0=x0, beta=cfg.run.beta, workers=args.workers)
            for rep in range(cfg.theory.repeats):
                ens = batch.subset(np.arange(rep * n, (rep + 1) * n))
                for b in cfg.theory.bounds:
                    checks.append(ex.check_bound_on_ensemble(obj, noise, spec, ens, b, cfg.theory.Delta0, cfg.run.beta, x0, cfg.theory.L))
    path = out / "bound_check.csv"
    ex.bound_checks_to_csv(checks, path)
    return [path]


def cmd_describe(cfg: Config, out: Path, args) -> list[Path]:
    _require_schedules(cfg)
    written = []
    for name, template in cfg.templates():
        spec = template.build(cfg.run.T)
        path = out / f"schedule_{name}.csv"
        cols = ("t", "i", "global_step", "eta", "lower", "upper")
        _write_rows(path, cols, ([r[c] if isinstance(r[c], (int, str)) else _g(r[c]) for c in cols] for r in describe(spec)))
        written.append(path)
    return written


COMMANDS = {
    "run": cmd_run,
    "toy": cmd_toy,
    "sweep": cmd_sweep,
    "bounds": cmd_bounds,
    "describe-schedule": cmd_describe,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bandwidth-sgd", description="Bandwidth step-size SGD experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?" if name == "toy" else None, help="config file")
        sp.add_argument("--seed", type=int, help="base seed (overrides [run] seed)")
        sp.add_argument("--trials", type=int, help="runs per schedule (overrides [run] trials)")
        sp.add_argument("--T", type=int, help="iteration budget (overrides [run] T)")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes")
        sp.add_argument("--out", help="output directory (overrides [output] directory)")
        sp.add_argument("--T-grid", dest="T_grid", type=parse_T_grid, help="e.g. 1e2:1e6")
        if name == "bounds":
            sp.add_argument("--check", action="store_true", help="certify bounds by simulation")
    return p


def dispatch(command: str, cfg: Config, args) -> list[Path]:
    cfg = cfg.with_overrides(seed=args.seed, trials=args.trials, T=args.T)
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[command](cfg, out, args)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.command == "toy":
            cfg = Config(run=RunSection(T=3000, trials=10000))
        else:  # pragma: no cover - argparse enforces the positional
            raise ConfigError([(0, "missing config file")])
        if args.workers is not None and args.workers < 1:
            raise ConfigError([(0, "--workers must be >= 1")])
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            written = dispatch(args.command, cfg, args)
    except (ConfigError, ScheduleError, ProblemError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AllDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"error: I/O failure{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    for p in written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
