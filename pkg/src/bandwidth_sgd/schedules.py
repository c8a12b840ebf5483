"""Bandwidth step-size schedules.

A schedule emits ``eta[t, i] = n(t, i) * delta(t)`` with ``n(t, i)`` in ``[m, M]``,
where ``t`` indexes stages (1-based) and ``i`` the iteration inside a stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Union

import numpy as np


class ScheduleError(ValueError):
    """Invalid schedule parameters or out-of-range stage/iteration indices."""


# --- boundary functions -------------------------------------------------------


@dataclass(frozen=True)
class ExpStep:
    """Step-decay boundary ``1 / alpha**(t - 1)``."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 1:
            raise ScheduleError(f"ExpStep needs alpha > 1, got {self.alpha}")

    def value(self, t):
        return np.power(float(self.alpha), -(np.asarray(t, dtype=float) - 1.0))


@dataclass(frozen=True)
class InvSqrtT:
    """Polynomial boundary ``1 / sqrt(t)``."""

    def value(self, t):
        return 1.0 / np.sqrt(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class ShiftedInvSqrtT:
    """``1 / (1 + a sqrt(t))`` rescaled by ``1 + a`` so that the value at t=1 is 1."""

    a: float
    scale: float = field(init=False)

    def __post_init__(self):
        if not self.a > 0:
            raise ScheduleError(f"ShiftedInvSqrtT needs a > 0, got {self.a}")
        object.__setattr__(self, "scale", 1.0 + self.a)

    def value(self, t):
        return self.scale / (1.0 + self.a * np.sqrt(np.asarray(t, dtype=float)))


@dataclass(frozen=True)
class ConstantOne:
    def value(self, t):
        return np.ones_like(np.asarray(t, dtype=float))


BoundaryFunction = Union[ExpStep, InvSqrtT, ShiftedInvSqrtT, ConstantOne]


def eval_boundary(bf: BoundaryFunction, t) -> float:
    """Evaluate ``delta(t)`` for an integer stage index ``t >= 1``."""
    if int(t) != t or t < 1:
        raise ScheduleError(f"stage index must be an integer >= 1, got {t!r}")
    return float(bf.value(t))


def sampling_weights(bf: BoundaryFunction, n_stages: int) -> np.ndarray:
    """Stage probabilities ``P_t`` proportional to ``1 / delta(t)``."""
    if n_stages < 1:
        raise ScheduleError("need at least one stage")
    inv = 1.0 / bf.value(np.arange(1, n_stages + 1))
    return inv / inv.sum()


# --- band and stage plans -----------------------------------------------------


@dataclass(frozen=True)
class Band:
    m: float
    M: float

    def __post_init__(self):
        if not (self.m > 0 and self.M >= self.m):
            raise ScheduleError(f"band needs 0 < m <= M, got m={self.m}, M={self.M}")


PLAN_KINDS = ("constant_length", "stepdecay_log", "stepdecay_expgrow", "sqrt_decay")


@dataclass(frozen=True)
class StagePlan:
    lengths: tuple[int, ...]
    kind: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(int(s) for s in self.lengths))
        if not self.lengths or min(self.lengths) < 1:
            raise ScheduleError(f"every stage needs length >= 1, got {self.lengths}")

    @property
    def total(self) -> int:
        return sum(self.lengths)

    @property
    def n_stages(self) -> int:
        return len(self.lengths)

    @property
    def starts(self) -> np.ndarray:
        """0-based global index of the first iteration of every stage."""
        return np.concatenate([[0], np.cumsum(self.lengths)[:-1]]).astype(int)


def _absorb(provisional: list[int], T: int, kind: str) -> StagePlan:
    lengths = list(provisional)
    lengths[-1] = T - sum(lengths[:-1])
    if any(s < 1 for s in lengths):
        raise ScheduleError(f"{kind} plan for T={T} leaves a stage shorter than 1: {lengths}")
    return StagePlan(tuple(lengths), kind)


def build_stage_plan(kind: str, T: int, **params) -> StagePlan:
    """Stage lengths for the preset ``kind`` with total budget ``T``.

    Non-integer stage counts and lengths are rounded, and the last stage absorbs
    the residual so the lengths always sum to ``T``.

    Parameters per kind:
      constant_length: ``stages=N`` or ``length=S``
      stepdecay_log: ``alpha``; N = (log_alpha T)/2, S = 2T/log_alpha T.
          ``floor=True`` floors N instead of rounding.
      stepdecay_expgrow: ``alpha``; S_1 = sqrt(T), S_t = S_1 alpha^(t-1),
          N = log_alpha((alpha-1) sqrt(T) + 1)
      sqrt_decay: S_t = sqrt(T / t), as many stages as needed to reach T
    """
    if int(T) != T or T < 2:
        raise ScheduleError(f"need an integer T >= 2, got {T!r}")
    T = int(T)
    if kind == "constant_length":
        if ("stages" in params) == ("length" in params):
            raise ScheduleError("constant_length takes exactly one of stages= or length=")
        if "stages" in params:
            n = int(params["stages"])
            if n < 1:
                raise ScheduleError(f"stages must be >= 1, got {n}")
            S = round(T / n)
        else:
            S = int(params["length"])
            if S < 1:
                raise ScheduleError(f"length must be >= 1, got {S}")
            n = max(1, round(T / S))
        return _absorb([S] * n, T, kind)

    if kind in ("stepdecay_log", "stepdecay_expgrow"):
        alpha = float(params.get("alpha", 0))
        if not alpha > 1:
            raise ScheduleError(f"{kind} needs alpha > 1, got {alpha}")
        if kind == "stepdecay_log":
            log_T = math.log(T, alpha)
            raw_n = log_T / 2
            n = max(1, math.floor(raw_n) if params.get("floor") else round(raw_n))
            return _absorb([round(2 * T / log_T)] * n, T, kind)
        s0 = math.sqrt(T)
        n = max(1, round(math.log((alpha - 1) * s0 + 1, alpha)))
        return _absorb([max(1, round(s0 * alpha ** (t - 1))) for t in range(1, n + 1)], T, kind)

    if kind == "sqrt_decay":
        lengths, acc, t = [], 0, 1
        while acc < T:
            s = max(1, round(math.sqrt(T / t)))
            lengths.append(s)
            acc += s
            t += 1
        return _absorb(lengths, T, kind)

    raise ScheduleError(f"unknown plan kind {kind!r}; expected one of {PLAN_KINDS}")


# --- within-stage modes -------------------------------------------------------


class Mode(str, Enum):
    LOWER = "lower"
    INV_I = "inv_i"
    INV_SQRT_I = "inv_sqrt_i"
    LINEAR = "linear"
    COSINE = "cosine"
    TRIANGULAR = "triangular"


MONOTONE_MODES = frozenset({Mode.LOWER, Mode.INV_I, Mode.INV_SQRT_I, Mode.LINEAR, Mode.COSINE})


@dataclass(frozen=True)
class TrustRegion:
    """Gradient-norm normalized step; needs ``gamma1 >= gamma2 >= 1``."""

    gamma1: float
    gamma2: float

    def __post_init__(self):
        if not (self.gamma1 >= self.gamma2 >= 1.0):
            raise ScheduleError(
                f"trust region needs gamma1 >= gamma2 >= 1, got {self.gamma1}, {self.gamma2}"
            )


WithinStageMode = Union[Mode, TrustRegion]


def is_monotone(mode: WithinStageMode) -> bool:
    return mode in MONOTONE_MODES


def band_fraction(mode: Mode, i, S: int):
    """Position of ``n(i)`` inside the band, 0 = lower edge, 1 = upper edge.

    ``i`` is 1-based and may be an array.  Decaying profiles are rescaled so
    that ``i=1`` maps to 1 and ``i=S`` maps to 0.
    """
    i = np.asarray(i, dtype=float)
    if mode is Mode.LOWER or S == 1:
        return np.zeros_like(i)
    if mode is Mode.TRIANGULAR:
        u = (i - 1) / (S - 1)
        return 1.0 - np.abs(2.0 * u - 1.0)
    if mode is Mode.LINEAR:
        return (S - i) / (S - 1)
    if mode is Mode.COSINE:
        return 0.5 * (1.0 + np.cos((i - 1) * np.pi / (S - 1)))
    if mode is Mode.INV_I:
        h, h_end = 1.0 / i, 1.0 / S
    elif mode is Mode.INV_SQRT_I:
        h, h_end = 1.0 / np.sqrt(i), 1.0 / math.sqrt(S)
    else:
        raise ScheduleError(f"no band profile for mode {mode!r}")
    return (h - h_end) / (1.0 - h_end)


def trust_region_eta(alpha_t, gamma1: float, gamma2: float, grad_norm):
    """Piecewise step ``gamma1*a`` / ``a/||g||`` / ``gamma2*a`` by gradient norm."""
    grad_norm = np.asarray(grad_norm, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        mid = alpha_t / grad_norm
    return np.where(
        grad_norm < 1.0 / gamma1,
        gamma1 * alpha_t,
        np.where(grad_norm <= 1.0 / gamma2, mid, gamma2 * alpha_t),
    )


# --- full specification -------------------------------------------------------


def _block_positions(n_stages: int, cycles: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split stages into ``cycles`` contiguous blocks.

    Returns (block index, 1-based position in block, block size) per stage.
    """
    blocks = np.array_split(np.arange(n_stages), cycles)
    block_id = np.empty(n_stages, dtype=int)
    pos = np.empty(n_stages, dtype=int)
    size = np.empty(n_stages, dtype=int)
    for b, members in enumerate(blocks):
        block_id[members] = b
        pos[members] = np.arange(1, len(members) + 1)
        size[members] = len(members)
    return block_id, pos, size


@dataclass(frozen=True)
class ScheduleSpec:
    """Boundary, band, stage plan and within-stage mode.

    With ``cycles`` set, stages are grouped into that many equal blocks and the
    mode profile runs across the stages of each block, so the step size only
    changes between stages.  ``first_stage_lower`` keeps the first stage (or
    first block) on the lower edge ``m * delta(t)``.
    """

    boundary: BoundaryFunction
    band: Band
    plan: StagePlan
    mode: WithinStageMode = Mode.LOWER
    first_stage_lower: bool = True
    cycles: int | None = None

    def __post_init__(self):
        if isinstance(self.mode, str) and not isinstance(self.mode, Mode):
            object.__setattr__(self, "mode", Mode(self.mode))
        if isinstance(self.mode, TrustRegion):
            if self.mode.gamma1 * self.band.m > self.band.M * (1 + 1e-12):
                raise ScheduleError(
                    f"trust region leaves the band: gamma1*m = {self.mode.gamma1 * self.band.m} > M = {self.band.M}"
                )
            if self.cycles is not None:
                raise ScheduleError("trust region mode does not support cycles")
        if self.cycles is not None and not 1 <= self.cycles <= self.plan.n_stages:
            raise ScheduleError(f"cycles must be in [1, {self.plan.n_stages}], got {self.cycles}")

    @property
    def T(self) -> int:
        return self.plan.total

    @property
    def n_stages(self) -> int:
        return self.plan.n_stages

    @property
    def needs_grad_norm(self) -> bool:
        return isinstance(self.mode, TrustRegion)

    def delta(self, t) -> np.ndarray:
        return self.boundary.value(t)

    def lower(self, t):
        return self.band.m * self.boundary.value(t)

    def upper(self, t):
        return self.band.M * self.boundary.value(t)

    def weights(self) -> np.ndarray:
        return sampling_weights(self.boundary, self.n_stages)

    def stage_fractions(self, t: int) -> np.ndarray:
        """Band fraction for every iteration of stage ``t`` (non trust-region modes)."""
        S = self.plan.lengths[t - 1]
        if self.first_stage_lower and t == 1:
            return np.zeros(S)
        if self.cycles is None:
            return np.broadcast_to(band_fraction(self.mode, np.arange(1, S + 1), S), (S,)).copy()
        block, pos, size = _block_positions(self.n_stages, self.cycles)
        if self.first_stage_lower and block[t - 1] == 0:
            return np.zeros(S)
        return np.full(S, float(band_fraction(self.mode, pos[t - 1], int(size[t - 1]))))

    def etas(self) -> np.ndarray:
        """Whole step-size sequence of length ``T`` (not for trust-region mode)."""
        if self.needs_grad_norm:
            raise ScheduleError("trust-region step sizes depend on the gradient norm")
        m, M = self.band.m, self.band.M
        t_all = np.arange(1, self.n_stages + 1)
        delta = self.boundary.value(t_all)
        lengths = np.array(self.plan.lengths)
        if self.cycles is None:
            frac = np.concatenate([self.stage_fractions(t) for t in t_all])
        else:
            block, pos, size = _block_positions(self.n_stages, self.cycles)
            per_stage = np.array(
                [float(band_fraction(self.mode, p, int(s))) for p, s in zip(pos, size)]
            )
            if self.first_stage_lower:
                per_stage[block == 0] = 0.0
            frac = np.repeat(per_stage, lengths)
        return np.repeat(delta, lengths) * (m + (M - m) * frac)

    def stage_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(stage t, inner i), both 1-based, for every global step."""
        lengths = np.array(self.plan.lengths)
        stage = np.repeat(np.arange(1, self.n_stages + 1), lengths)
        inner = np.arange(self.T) - np.repeat(self.plan.starts, lengths) + 1
        return stage, inner


def step_size(spec: ScheduleSpec, t: int, i: int, grad_norm: float | None = None) -> float:
    """Step size ``eta[t, i]`` of a schedule (``t``, ``i`` 1-based)."""
    if int(t) != t or not 1 <= t <= spec.n_stages:
        raise ScheduleError(f"stage index {t!r} outside 1..{spec.n_stages}")
    S = spec.plan.lengths[int(t) - 1]
    if int(i) != i or not 1 <= i <= S:
        raise ScheduleError(f"inner index {i!r} outside 1..{S} for stage {t}")
    m, M = spec.band.m, spec.band.M
    delta = eval_boundary(spec.boundary, t)
    if isinstance(spec.mode, TrustRegion):
        if grad_norm is None:
            raise TypeError("trust-region mode needs grad_norm")
        if spec.first_stage_lower and t == 1:
            return m * delta
        return float(trust_region_eta(m * delta, spec.mode.gamma1, spec.mode.gamma2, grad_norm))
    frac = spec.stage_fractions(int(t))[int(i) - 1]
    return float(delta * (m + (M - m) * frac))


def describe(spec: ScheduleSpec) -> Iterator[dict[str, Any]]:
    """Rows ``(t, i, global_step, eta, lower, upper)`` for the whole schedule.

    Trust-region schedules report the band edges and leave ``eta`` empty.
    """
    stage, inner = spec.stage_index()
    etas = None if spec.needs_grad_norm else spec.etas()
    delta = spec.boundary.value(stage)
    for k in range(spec.T):
        yield {
            "t": int(stage[k]),
            "i": int(inner[k]),
            "global_step": k + 1,
            "eta": "" if etas is None else float(etas[k]),
            "lower": float(spec.band.m * delta[k]),
            "upper": float(spec.band.M * delta[k]),
        }


# --- templates: a schedule minus its budget -----------------------------------

BOUNDARY_NAMES = ("exp_step", "inv_sqrt_t", "shifted_inv_sqrt_t", "constant")


def make_boundary(name: str, alpha: float | None = None, a: float | None = None) -> BoundaryFunction:
    if name == "exp_step":
        if alpha is None:
            raise ScheduleError("exp_step boundary needs alpha")
        return ExpStep(alpha)
    if name == "inv_sqrt_t":
        return InvSqrtT()
    if name == "shifted_inv_sqrt_t":
        if a is None:
            raise ScheduleError("shifted_inv_sqrt_t boundary needs a")
        return ShiftedInvSqrtT(a)
    if name == "constant":
        return ConstantOne()
    raise ScheduleError(f"unknown boundary {name!r}; expected one of {BOUNDARY_NAMES}")


@dataclass(frozen=True)
class ScheduleTemplate:
    """Everything about a schedule except ``T``; ``build(T)`` makes the plan."""

    boundary: BoundaryFunction
    band: Band
    plan_kind: str
    plan_params: tuple[tuple[str, Any], ...] = ()
    mode: WithinStageMode = Mode.LOWER
    first_stage_lower: bool = True
    cycles: int | None = None

    def __post_init__(self):
        if isinstance(self.plan_params, dict):
            object.__setattr__(self, "plan_params", tuple(sorted(self.plan_params.items())))
        if isinstance(self.mode, str) and not isinstance(self.mode, Mode):
            object.__setattr__(self, "mode", Mode(self.mode))
        if self.plan_kind not in PLAN_KINDS:
            raise ScheduleError(f"unknown plan kind {self.plan_kind!r}")

    def build(self, T: int) -> ScheduleSpec:
        plan = build_stage_plan(self.plan_kind, T, **dict(self.plan_params))
        return ScheduleSpec(
            self.boundary, self.band, plan, self.mode, self.first_stage_lower, self.cycles
        )


def constant_step(eta: float) -> ScheduleTemplate:
    return ScheduleTemplate(ConstantOne(), Band(eta, eta), "constant_length", {"stages": 1})


def stepdecay_log(alpha: float, m: float, M: float | None = None, mode=Mode.LOWER) -> ScheduleTemplate:
    """N = (log_alpha T)/2 equal stages."""
    return ScheduleTemplate(ExpStep(alpha), Band(m, M or m), "stepdecay_log", {"alpha": alpha}, mode)


def stepdecay_expgrow(alpha: float, m: float, M: float | None = None, mode=Mode.LOWER) -> ScheduleTemplate:
    """Stage lengths growing geometrically from sqrt(T)."""
    return ScheduleTemplate(ExpStep(alpha), Band(m, M or m), "stepdecay_expgrow", {"alpha": alpha}, mode)


def sqrt_band_constant_length(S: int, m: float, M: float | None = None, mode=Mode.LOWER) -> ScheduleTemplate:
    return ScheduleTemplate(InvSqrtT(), Band(m, M or m), "constant_length", {"length": S}, mode)


def sqrt_band_decaying_length(m: float, M: float | None = None, mode=Mode.LOWER) -> ScheduleTemplate:
    return ScheduleTemplate(InvSqrtT(), Band(m, M or m), "sqrt_decay", (), mode)


def stepdecay_band(eta0: float, alpha: float, theta: float, mode=Mode.LOWER) -> ScheduleTemplate:
    """Step-decay band with ``M/m = alpha*theta`` and ``floor((log_alpha T)/2)`` stages."""
    return ScheduleTemplate(
        ExpStep(alpha),
        Band(eta0, eta0 * alpha * theta),
        "stepdecay_log",
        {"alpha": alpha, "floor": True},
        mode,
    )


def shifted_sqrt_band(eta0: float, a: float, s: float, cycles: int, mode=Mode.LOWER) -> ScheduleTemplate:
    """Per-iterate band whose lower edge is ``eta0/(1 + a sqrt(t))``, with ``M = s*m``.

    The boundary is normalized to 1 at t=1, so ``m = eta0/(1 + a)``.
    """
    m = eta0 / (1.0 + a)
    return ScheduleTemplate(
        ShiftedInvSqrtT(a),
        Band(m, m * s),
        "constant_length",
        {"length": 1},
        mode,
        cycles=None if mode is Mode.LOWER else cycles,
    )
