"""Toy basin study, convergence-rate sweeps and bound certification."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import theory
from .optimizers import EnsembleResult, initial_lyapunov, run_ensemble
from .problems import Additive, NoiseModel, Objective, classify_basins, toy_objective
from .schedules import (
    Mode,
    ScheduleSpec,
    ScheduleTemplate,
    constant_step,
    shifted_sqrt_band,
    sqrt_band_constant_length,
    sqrt_band_decaying_length,
    stepdecay_band,
    stepdecay_expgrow,
    stepdecay_log,
)

Family = Union[ScheduleTemplate, Callable[[int], ScheduleSpec]]

BAND_MODES = (Mode.INV_SQRT_I, Mode.INV_I, Mode.LINEAR, Mode.COSINE)


def _build(family: Family, T: int) -> ScheduleSpec:
    return family.build(T) if isinstance(family, ScheduleTemplate) else family(T)


def _write_csv(header, rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.10g}"


# --- toy basin study ---------------------------------------------------------------


def default_toy_roster() -> tuple[tuple[str, ScheduleTemplate], ...]:
    """Constant steps, step-decay bands and shifted 1/sqrt(t) bands for the toy study."""
    roster = [
        ("const_small", constant_step(0.05)),
        ("const_large", constant_step(0.1)),
        ("stepdecay_lower", stepdecay_band(0.1, 3.0, 1.3)),
    ]
    roster += [(f"stepdecay_{m.value}", stepdecay_band(0.1, 3.0, 1.3, m)) for m in BAND_MODES]
    roster.append(("sqrt_lower", shifted_sqrt_band(0.1, 0.05, 6, 3)))
    roster += [
        (f"sqrt_{m.value}", shifted_sqrt_band(0.1, 0.05, 6, 3, m))
        for m in (Mode.INV_SQRT_I, Mode.INV_I, Mode.LINEAR)
    ]
    return tuple(roster)


@dataclass(frozen=True)
class ToyStudyConfig:
    trials: int = 10000
    T: int = 3000
    x0: tuple[float, float] = (-0.9, 0.9)
    noise_sd: float = 1.0
    roster: tuple[tuple[str, ScheduleTemplate], ...] = field(default_factory=default_toy_roster)
    base_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1 or self.T < 1:
            raise ValueError("trials and T must be >= 1")
        names = [n for n, _ in self.roster]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate schedule names in roster: {names}")

    @property
    def seeds(self) -> np.ndarray:
        return self.base_seed + np.arange(self.trials)


@dataclass(frozen=True)
class ToyRow:
    schedule: str
    pct: tuple[float, float, float, float]
    diverged: int
    mean_final_f: float


@dataclass(frozen=True)
class ToyStudyReport:
    rows: tuple[ToyRow, ...]

    COLUMNS = ("schedule", "pct_min1", "pct_min2", "pct_min3", "pct_min4", "diverged", "mean_final_f")

    def row(self, name: str) -> ToyRow:
        for r in self.rows:
            if r.schedule == name:
                return r
        raise KeyError(name)

    def to_csv(self, path=None) -> str:
        rows = [
            [r.schedule, *(f"{p:.2f}" for p in r.pct), r.diverged, _fmt(r.mean_final_f)]
            for r in self.rows
        ]
        return _write_csv(self.COLUMNS, rows, path)


def summarize_basins(obj: Objective, ens: EnsembleResult, name: str) -> ToyRow:
    ok = ~ens.diverged
    n_ok = int(ok.sum())
    if n_ok:
        labels = classify_basins(obj, ens.final_x[ok])
        pct = tuple(float(100.0 * np.mean(labels == k)) for k in (1, 2, 3, 4))
        mean_f = float(np.mean(obj.f(ens.final_x[ok])))
    else:
        pct, mean_f = (0.0, 0.0, 0.0, 0.0), float("nan")
    return ToyRow(name, pct, int(ens.diverged.sum()), mean_f)


def run_toy_study(config: ToyStudyConfig, obj: Objective | None = None, noise: NoiseModel | None = None) -> ToyStudyReport:
    """Final-iterate basin percentages per schedule; all schedules share the trial seeds."""
    obj = obj or toy_objective()
    noise = noise if noise is not None else Additive(config.noise_sd)
    rows = []
    for name, template in config.roster:
        spec = template.build(config.T)
        ens = run_ensemble(obj, noise, spec, config.seeds, x0=config.x0, workers=config.workers)
        rows.append(summarize_basins(obj, ens, name))
    return ToyStudyReport(tuple(rows))


# --- rate sweeps -------------------------------------------------------------------


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    r_squared: float


def fit_loglog(points) -> LogLogFit:
    """Least squares of ``ln value`` on ``ln T``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (T, value) points")
    if np.any(pts <= 0):
        raise ValueError("T and values must be positive for a log-log fit")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return LogLogFit(float(slope), float(intercept), float(r2))


@dataclass(frozen=True)
class RatePoint:
    T: int
    mean: float
    stderr: float
    n_seeds: int
    n_diverged: int
    mean_final: float


@dataclass(frozen=True)
class RateSweepReport:
    schedule: str
    points: tuple[RatePoint, ...]
    fit: LogLogFit | None
    dropped: tuple[int, ...] = ()

    COLUMNS = ("schedule", "T", "mean", "stderr", "n_seeds")

    @property
    def slope(self) -> float:
        return self.fit.slope if self.fit else float("nan")

    def csv_rows(self):
        return [[self.schedule, p.T, _fmt(p.mean), _fmt(p.stderr), p.n_seeds] for p in self.points]

    def to_csv(self, path=None) -> str:
        return _write_csv(self.COLUMNS, self.csv_rows(), path)


def grad_norm_sq(obj: Objective, X) -> np.ndarray:
    return np.sum(obj.grad(X) ** 2, axis=-1)


def _mean_se(values):
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(values)), se


def run_rate_sweep(
    obj: Objective,
    noise: NoiseModel,
    family: Family,
    T_grid: Sequence[int],
    seeds_per_T: int,
    beta: float | None = None,
    base_seed: int = 0,
    x0=None,
    workers: int = 1,
    name: str = "schedule",
) -> RateSweepReport:
    """Mean ``||grad f(x_hat)||^2`` over seeds at every ``T``, with a log-log fit.

    The schedule is rebuilt for each ``T``.  Points where every run diverged
    are dropped and listed in ``dropped``.
    """
    grid = [int(T) for T in T_grid]
    if len(grid) < 3 or sorted(set(grid)) != grid:
        raise ValueError("T grid must be strictly increasing with at least 3 points")
    seeds = base_seed + np.arange(seeds_per_T)
    points, dropped = [], []
    for T in grid:
        spec = _build(family, T)
        ens = run_ensemble(obj, noise, spec, seeds, x0=x0, beta=beta, workers=workers)
        ok = ~ens.diverged
        if not ok.any():
            dropped.append(T)
            continue
        mean, se = _mean_se(grad_norm_sq(obj, ens.x_hat[ok]))
        final = float(np.mean(grad_norm_sq(obj, ens.final_x[ok])))
        points.append(RatePoint(T, mean, se, int(ok.sum()), int((~ok).sum()), final))
    fit = fit_loglog([(p.T, p.mean) for p in points]) if len(points) >= 2 else None
    return RateSweepReport(name, tuple(points), fit, tuple(dropped))


# --- bound certification -----------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    bound: str
    T: int
    empirical: float
    stderr: float
    rhs: float
    status: str  # PASS, FAIL or UNMET (assumptions unmet)
    delta0: float

    COLUMNS = ("bound", "T", "empirical", "stderr", "rhs", "pass")

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def csv_row(self):
        return [self.bound, self.T, _fmt(self.empirical), _fmt(self.stderr), _fmt(self.rhs), self.status]


def bound_checks_to_csv(checks: Sequence[BoundCheck], path=None) -> str:
    return _write_csv(BoundCheck.COLUMNS, [c.csv_row() for c in checks], path)


def max_step(spec: ScheduleSpec) -> float:
    if spec.needs_grad_norm:
        return float(np.max(spec.upper(np.arange(1, spec.n_stages + 1))))
    return float(np.max(spec.etas()))


def check_bound_on_ensemble(
    obj: Objective,
    noise: NoiseModel,
    spec: ScheduleSpec,
    ens: EnsembleResult,
    bound_name: str,
    delta0: float | None = None,
    beta: float | None = None,
    x0=None,
    L: float | None = None,
) -> BoundCheck:
    """Compare an ensemble's ``E||grad f(x_hat)||^2`` with a theoretical bound.

    ``delta0`` defaults to the largest stage-start suboptimality seen in any
    run.  ``L`` overrides the objective's smoothness constant, e.g. with a
    local one for objectives that have no global constant.  PASS needs
    ``mean + 3 stderr <= rhs``.
    """
    L = obj.L if L is None else float(L)
    if L is None or obj.fstar is None:
        raise ValueError(f"objective {obj.name!r} needs known L and f*")
    ok = ~ens.diverged
    gsq = grad_norm_sq(obj, ens.x_hat[ok])
    mean, se = _mean_se(gsq)
    se_used = 0.0 if math.isnan(se) else se
    stage_gap = ens.stage_start_f[ok] - obj.fstar
    realized = float(max(0.0, np.max(stage_gap))) if stage_gap.size else 0.0
    d0 = realized if delta0 is None else float(delta0)
    rho, sigma = noise.constants(obj.dim)

    if bound_name in theory.SGDM_BOUNDS:
        if beta is None:
            raise ValueError(f"{bound_name} needs beta")
        G = float(np.max(ens.max_oracle_norm[ok])) if ok.any() else 0.0
        mc = theory.momentum_constants(beta, theory.ProblemConstants(L=L, G=G, Delta0=d0))
        eta1 = float(spec.lower(1))
        W11 = initial_lyapunov(obj, obj.x0 if x0 is None else x0, eta1, mc)
        rhs = theory.sgdm_bound_for(bound_name, spec, W11, mc)
        unmet = max_step(spec) > 1.0 / L
    else:
        consts = theory.ProblemConstants(L=L, rho=rho, sigma=sigma, Delta0=d0, fstar=obj.fstar)
        stage_means = np.mean(ens.stage_start_f[ok], axis=0) if ok.any() else None
        rhs = theory.sgd_bound_for(bound_name, spec, consts, stage_means)
        unmet = max_step(spec) > 1.0 / ((rho + 1.0) * L)

    if unmet:
        status = "UNMET"
    else:
        status = "PASS" if ok.any() and mean + 3 * se_used <= rhs else "FAIL"
    return BoundCheck(bound_name, spec.T, mean, se, float(rhs), status, d0)


def validate_bound(
    obj: Objective,
    noise: NoiseModel,
    spec: ScheduleSpec,
    bound_name: str,
    seeds,
    delta0: float | None = None,
    beta: float | None = None,
    x0=None,
    workers: int = 1,
    L: float | None = None,
) -> BoundCheck:
    ens = run_ensemble(obj, noise, spec, seeds, x0=x0, beta=beta, workers=workers)
    return check_bound_on_ensemble(obj, noise, spec, ens, bound_name, delta0, beta, x0, L)


# presets matching the hypotheses of each bound (quadratic with L = 1)
def bound_presets(alpha: float = 2.0, m: float = 0.2, M: float = 0.5, S: int = 10) -> dict[str, ScheduleTemplate]:
    return {
        "stepdecay": stepdecay_log(alpha, m, M, Mode.LINEAR),
        "stepdecay_grow": stepdecay_expgrow(alpha, m, M, Mode.LINEAR),
        "sqrt_const": sqrt_band_constant_length(S, m, M, Mode.LINEAR),
        "sqrt_decay": sqrt_band_decaying_length(m, M, Mode.LINEAR),
    }
