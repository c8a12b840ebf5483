"""Closed-form convergence bounds for bandwidth step-size SGD and SGDM.

Every function returns the right-hand side of an upper bound on
``E||grad f(x_hat)||^2``.  Constants follow the usual conventions:

  L       gradient Lipschitz constant
  rho, sigma  oracle variance bound  E||g - grad||^2 <= rho ||grad||^2 + sigma
  G       second-moment bound  E||g||^2 <= G^2
  Delta0  bound on stage-start suboptimality  E[f(x_1^t) - f*]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .schedules import ScheduleSpec


class TheoryError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    rho: float = 0.0
    sigma: float = 0.0
    G: float = 0.0
    Delta0: float = 0.0
    fstar: float = 0.0

    def __post_init__(self):
        if not self.L > 0:
            raise TheoryError(f"L must be positive, got {self.L}")
        for name in ("rho", "sigma", "G", "Delta0"):
            if getattr(self, name) < 0:
                raise TheoryError(f"{name} must be non-negative")


@dataclass(frozen=True)
class MomentumConstants:
    """Derived SGDM constants; ``beta``, ``L``, ``G``, ``Delta0`` are kept for the bounds."""

    beta: float
    L: float
    G: float
    Delta0: float
    r: float
    A1: float
    B1: float
    A2: float
    Delta_z: float
    C0: float
    C1: float
    C2: float


def momentum_constants(beta: float, consts: ProblemConstants) -> MomentumConstants:
    if not 0 < beta < 1:
        raise TheoryError(f"beta must lie in (0, 1), got {beta}")
    L, G, D0 = consts.L, consts.G, consts.Delta0
    r = beta * L / (2 * (1 - beta**2) * (1 - beta) ** 2)
    delta_z = D0 / (1 - beta) + beta * G**2 / (2 * (1 - beta) ** 2 * L)
    A1 = beta * D0 / (1 - beta) + delta_z + r * G**2 / L**2
    B1 = r * (1 - beta) * (2 - beta) + L / (2 * (1 - beta) ** 2)
    A2 = 1 + beta / (2 * (1 - beta) ** 2)
    C0 = r * (G**2 / L + 2 * D0)
    C1 = A1 + delta_z + D0 / (1 - beta)
    C2 = C0 + A2 * G**2
    return MomentumConstants(beta, L, G, D0, r, A1, B1, A2, delta_z, C0, C1, C2)


def _check_alpha(alpha):
    if not alpha > 1:
        raise TheoryError(f"alpha must exceed 1, got {alpha}")


# --- SGD ------------------------------------------------------------------------


def bound_sgd_stagewise(stage_f_values, spec: ScheduleSpec, consts: ProblemConstants) -> float:
    """Unified bound from measured stage-start values ``F_1..F_{N+1}``.

    ``(sum_t S_t/delta_t)^-1 * (sum_t 2(F_t - F_{t+1})/(m delta_t^2) + M^2 L sigma T / m)``
    """
    F = np.asarray(stage_f_values, dtype=float)
    N = spec.n_stages
    if F.shape != (N + 1,):
        raise TheoryError(f"need {N + 1} stage values, got {F.shape}")
    m, M = spec.band.m, spec.band.M
    delta = spec.delta(np.arange(1, N + 1))
    S = np.asarray(spec.plan.lengths, dtype=float)
    weight = np.sum(S / delta)
    progress = np.sum(2 * (F[:-1] - F[1:]) / (m * delta**2))
    return float((progress + M**2 * consts.L * consts.sigma * spec.T / m) / weight)


def bound_sgd_sqrt_const(S: int, T: int, m: float, M: float, consts: ProblemConstants) -> float:
    """1/sqrt(t) band with constant stage length S."""
    if not 1 <= S <= T:
        raise TheoryError(f"need 1 <= S <= T, got S={S}, T={T}")
    return (
        3 * consts.Delta0 / (m * math.sqrt(S * T))
        + 3 * M**2 * consts.L * consts.sigma / (2 * m) * math.sqrt(S / T)
    )


def bound_sgd_sqrt_decay(T: int, m: float, M: float, consts: ProblemConstants) -> float:
    """1/sqrt(t) band with stage lengths sqrt(T/t)."""
    return 2 * (consts.Delta0 + 2 * M**2 * consts.L * consts.sigma) / (m * math.sqrt(T))


def bound_sgd_stepdecay(T: int, alpha: float, m: float, M: float, consts: ProblemConstants) -> float:
    """Step decay with (log_alpha T)/2 equal stages; O(ln T / sqrt T)."""
    _check_alpha(alpha)
    if T <= 1:
        raise TheoryError("T must exceed 1")
    lead = 4 * consts.Delta0 / (alpha * m) + M**2 * consts.L * consts.sigma / (2 * m)
    return lead * (alpha - 1) / math.log(alpha) * math.log(T) / math.sqrt(T)


def bound_sgd_stepdecay_optimal(T: int, alpha: float, m: float, M: float, consts: ProblemConstants) -> float:
    """Step decay with geometrically growing stages from sqrt(T); O(1/sqrt T)."""
    _check_alpha(alpha)
    rt = math.sqrt(T)
    inner = 2 * (rt + 1) ** 2 * consts.Delta0 / m + M**2 * consts.L * consts.sigma / m * T
    return (1 + 2 / (alpha - 1)) / T**1.5 * inner


# --- SGDM -----------------------------------------------------------------------


def bound_sgdm_stepdecay(
    T: int,
    N: int,
    alpha: float,
    m: float,
    M: float,
    W11: float,
    mc: MomentumConstants,
    log_stages: bool = False,
) -> float:
    """Step-decay SGDM with N equal stages.

    ``log_stages=True`` evaluates the specialization N = (log_alpha T)/2
    (``N`` is then ignored).
    """
    _check_alpha(alpha)
    G2 = mc.G**2
    if log_stages:
        la = math.log(alpha)
        lt = math.log(T)
        return (
            alpha * W11 / (2 * la) * lt / T**1.5
            + (alpha * mc.C0 + mc.C2) / (2 * la) * lt / T
            + (mc.Delta_z + mc.C1) / (2 * m * la) * lt / math.sqrt(T)
            + alpha * M * mc.B1 * G2 / (2 * la) * lt / math.sqrt(T)
        )
    if N < 1:
        raise TheoryError("N must be >= 1")
    return (
        W11 * N / (T * alpha ** (N - 1))
        + (alpha * mc.C0 + mc.C2) * N / T
        + (mc.Delta_z + mc.C1) / m * N * alpha**N / T
        + M * mc.B1 * G2 * N / alpha ** (N - 1)
    )


def weighted_stage_sum(spec: ScheduleSpec) -> float:
    """``sum_t S_t / delta(t)`` over the plan."""
    delta = spec.delta(np.arange(1, spec.n_stages + 1))
    return float(np.sum(np.asarray(spec.plan.lengths) / delta))


def expgrow_weight_closed_form(alpha: float, T: float) -> float:
    """``sum_t S_t/delta(t)`` for S_t = sqrt(T) alpha^(t-1) before rounding.

    With alpha^N = (alpha-1) sqrt(T) + 1 the geometric sum is
    ``((alpha-1)^2 T^1.5 + 2(alpha-1) T) / (alpha^2 - 1)``.
    """
    _check_alpha(alpha)
    return ((alpha - 1) ** 2 * T**1.5 + 2 * (alpha - 1) * T) / (alpha**2 - 1)


def bound_sgdm_multistage(spec: ScheduleSpec, W11: float, mc: MomentumConstants) -> float:
    """Explicit multi-stage SGDM bound; the computable form of the O(1/sqrt T) result.

    ``delta(N+1)`` comes from extending the boundary one stage past the plan.
    """
    N = spec.n_stages
    if N < 1:
        raise TheoryError("need at least one stage")
    m, M = spec.band.m, spec.band.M
    delta = spec.delta(np.arange(1, N + 2))
    d, d_next, d_last = delta[:N], delta[N], delta[N - 1]
    numer = (
        W11
        + mc.C0 / d_next
        + mc.Delta_z / (m * d_last * d_next)
        + mc.C1 / m * np.sum(1 / d**2)
        + mc.C2 * np.sum(1 / d)
        + mc.B1 * mc.G**2 * M * spec.T
    )
    return float(numer / weighted_stage_sum(spec))


def bound_sgdm_single_stage(
    T: int,
    W11: float,
    mc: MomentumConstants,
    eta0: float | None = None,
    band: tuple[float, float] | None = None,
) -> float:
    """Single-stage SGDM: constant step ``eta0/sqrt(T)`` or a 1/sqrt(i) band ``(m, M)``."""
    if (eta0 is None) == (band is None):
        raise TheoryError("give exactly one of eta0 or band")
    G2 = mc.G**2
    if eta0 is not None:
        return W11 / T + mc.B1 * G2 * eta0 / math.sqrt(T)
    m, M = band
    return W11 / T + mc.A1 / (m * math.sqrt(T)) + 2 * M * mc.B1 * G2 / math.sqrt(T)


# --- registry used by the bound checks and the CLI --------------------------------

SGD_BOUNDS = ("stagewise", "stepdecay", "stepdecay_grow", "sqrt_const", "sqrt_decay")
SGDM_BOUNDS = ("momentum_stepdecay", "momentum_stepdecay_log", "momentum_multistage")


def sgd_bound_for(name: str, spec: ScheduleSpec, consts: ProblemConstants, stage_f_values=None) -> float:
    """Evaluate a named SGD bound using the schedule's own T, band and boundary."""
    T, m, M = spec.T, spec.band.m, spec.band.M
    if name == "stagewise":
        if stage_f_values is None:
            raise TheoryError("stagewise needs measured stage values")
        return bound_sgd_stagewise(stage_f_values, spec, consts)
    if name in ("stepdecay", "stepdecay_grow"):
        alpha = getattr(spec.boundary, "alpha", None)
        if alpha is None:
            raise TheoryError(f"{name} needs an exp_step boundary")
        fn = bound_sgd_stepdecay if name == "stepdecay" else bound_sgd_stepdecay_optimal
        return fn(T, alpha, m, M, consts)
    if name == "sqrt_const":
        return bound_sgd_sqrt_const(spec.plan.lengths[0], T, m, M, consts)
    if name == "sqrt_decay":
        return bound_sgd_sqrt_decay(T, m, M, consts)
    raise TheoryError(f"unknown SGD bound {name!r}; expected one of {SGD_BOUNDS}")


def sgdm_bound_for(name: str, spec: ScheduleSpec, W11: float, mc: MomentumConstants) -> float:
    """Evaluate a named SGDM bound using the schedule's own T, N, band and boundary."""
    if name == "momentum_multistage":
        return bound_sgdm_multistage(spec, W11, mc)
    if name not in ("momentum_stepdecay", "momentum_stepdecay_log"):
        raise TheoryError(f"unknown SGDM bound {name!r}; expected one of {SGDM_BOUNDS}")
    alpha = getattr(spec.boundary, "alpha", None)
    if alpha is None:
        raise TheoryError(f"{name} needs an exp_step boundary")
    m, M = spec.band.m, spec.band.M
    return bound_sgdm_stepdecay(spec.T, spec.n_stages, alpha, m, M, W11, mc, log_stages=name == "momentum_stepdecay_log")
