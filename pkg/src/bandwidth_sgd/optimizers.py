"""Multi-stage SGD and SGD with momentum under a bandwidth step-size schedule.

All runs go through one vectorized core that advances a batch of independent
"lanes" (one per seed) in lock-step.  A single run is a batch of one, so it is
bitwise identical to the matching lane of an ensemble.

Each seed owns two streams derived from ``SeedSequence(seed)``: one for the
gradient noise and one for drawing the output index ``(t*, i*)``.  Noise is
drawn per lane in time chunks; a generator's normal stream does not depend on
how it is chunked, so results do not depend on the batch size either.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .problems import NoiseModel, Objective
from .schedules import ScheduleSpec, TrustRegion, is_monotone, trust_region_eta
from .theory import MomentumConstants, ProblemConstants, momentum_constants

DIVERGENCE_FACTOR = 1e12
_CHUNK_FLOATS = 4_000_000


class DivergenceError(RuntimeError):
    """A run produced a non-finite iterate or blew past the divergence threshold."""

    def __init__(self, message, step, last_x, seed):
        super().__init__(message)
        self.step = step
        self.last_x = last_x
        self.seed = seed


@dataclass(frozen=True)
class Trajectory:
    """Per-step records, indexed by global step ``k = 0..T-1``.

    ``f`` and ``grad_norm_sq`` are evaluated at the iterate the step starts
    from, using the exact gradient.  ``iterates`` (if stored) has ``T + 1``
    rows: every visited point including the final one.
    """

    stage: np.ndarray
    inner: np.ndarray
    eta: np.ndarray
    f: np.ndarray
    grad_norm_sq: np.ndarray
    oracle_norm: np.ndarray
    stage_start_f: np.ndarray
    iterates: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.stage)

    @property
    def N(self) -> int:
        return len(self.stage_start_f) - 1


@dataclass(frozen=True)
class RunResult:
    x_hat: np.ndarray
    final_x: np.ndarray
    trajectory: Trajectory
    seed: int
    hat_index: int
    beta: float | None
    noise_free: bool


@dataclass(frozen=True)
class EnsembleResult:
    """Outcome of many seeded runs; rows follow ``seeds``.

    Diverged lanes keep their last finite state and have ``diverged`` set.
    """

    seeds: np.ndarray
    x_hat: np.ndarray
    final_x: np.ndarray
    diverged: np.ndarray
    stage_start_f: np.ndarray
    max_oracle_norm: np.ndarray
    hat_index: np.ndarray

    @property
    def n(self) -> int:
        return len(self.seeds)

    def subset(self, idx) -> "EnsembleResult":
        idx = np.asarray(idx)
        return EnsembleResult(**{k: v[idx] for k, v in self.__dict__.items()})


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(noise, sampling) generators for one seed."""
    noise_ss, sample_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(noise_ss), np.random.default_rng(sample_ss)


def draw_output_index(lengths, weights, rng: np.random.Generator) -> int:
    """Global 0-based index of ``x_{i*}^{t*}``: stage by ``weights``, then uniform inside."""
    lengths = np.asarray(lengths)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != lengths.shape:
        raise ValueError(f"need one weight per stage ({len(lengths)}), got {len(weights)}")
    t = int(rng.choice(len(lengths), p=weights))
    i = int(rng.integers(lengths[t]))
    return int(np.sum(lengths[:t]) + i)


def sample_output(traj: Trajectory, weights, rng: np.random.Generator) -> np.ndarray:
    """Draw the output point from a trajectory with stored iterates."""
    if traj.iterates is None:
        raise ValueError("trajectory has no stored iterates; run with store_iterates=True")
    lengths = np.bincount(traj.stage)[1:]
    return traj.iterates[draw_output_index(lengths, weights, rng)]


def _simulate(*args, **kwargs):
    # diverging lanes overflow harmlessly; they are masked out below
    with np.errstate(over="ignore", invalid="ignore"):
        return _simulate_lanes(*args, **kwargs)


def _simulate_lanes(obj, noise, spec, seeds, x0, beta, reset_momentum, record, chunk=None):
    B, d, T = len(seeds), obj.dim, spec.T
    N = spec.n_stages
    lengths = np.asarray(spec.plan.lengths)
    starts = spec.plan.starts
    stage_of, _ = spec.stage_index()
    weights = spec.weights()

    noise_rngs, hat_k = [], np.empty(B, dtype=int)
    for b, s in enumerate(seeds):
        nrng, srng = seed_streams(s)
        noise_rngs.append(nrng)
        hat_k[b] = draw_output_index(lengths, weights, srng)
    # lanes sorted by capture step so each step only touches its own lanes
    order = np.argsort(hat_k, kind="stable")
    sorted_k = hat_k[order]

    x = np.broadcast_to(np.asarray(x0, dtype=float), (B, d)).copy()
    v = np.zeros((B, d)) if beta is not None else None
    x_hat = np.full((B, d), np.nan)
    alive = np.ones(B, dtype=bool)
    max_norm = np.zeros(B)
    stage_f = np.full((B, N + 1), np.nan)

    f0 = obj.f(x)
    limit = DIVERGENCE_FACTOR * np.maximum(np.abs(f0), 1.0)

    trust = spec.mode if isinstance(spec.mode, TrustRegion) else None
    etas = None if trust else spec.etas()
    lower = spec.lower(stage_of)
    tr_first = trust is not None and spec.first_stage_lower

    if record:
        rec_eta = np.empty(T)
        rec_f = np.empty(T)
        rec_gsq = np.empty(T)
        rec_norm = np.empty(T)
        rec_x = np.empty((T + 1, d))
        rec_x[0] = x[0]

    zero_noise = noise.is_zero
    K = chunk or max(1, min(T, _CHUNK_FLOATS // max(1, B * d)))
    is_start = np.zeros(T, dtype=bool)
    is_start[starts] = True
    stage_no = np.cumsum(is_start) - 1
    any_dead = False
    cap = 0

    for c0 in range(0, T, K):
        kk = min(K, T - c0)
        if not zero_noise:
            Z = np.stack([r.standard_normal((kk, d)) for r in noise_rngs], axis=1)
        for j in range(kk):
            k = c0 + j
            if is_start[k]:
                fx = obj.f(x)
                stage_f[:, stage_no[k]] = fx
                bad = alive & ~(np.isfinite(fx) & (fx <= limit))
                if bad.any():
                    alive &= ~bad
                    any_dead = True
                    if record:
                        raise DivergenceError(f"f exceeded the divergence threshold at step {k}", k, x[0].copy(), seeds[0])
                if reset_momentum and v is not None and k > 0:
                    v[:] = 0.0
            while cap < B and sorted_k[cap] == k:
                x_hat[order[cap]] = x[order[cap]]
                cap += 1

            grad = obj.grad(x)
            g = grad if zero_noise else noise.apply(grad, Z[j])
            gnorm = np.sqrt(np.sum(g * g, axis=-1))
            np.maximum(max_norm, np.where(alive, gnorm, 0.0), out=max_norm)

            if trust is None:
                eta = etas[k]
            elif tr_first and stage_of[k] == 1:
                eta = lower[k]
            else:
                eta = trust_region_eta(lower[k], trust.gamma1, trust.gamma2, gnorm)[:, None]

            if v is not None:
                v_new = beta * v + (1.0 - beta) * g
                x_new = x - eta * v_new
            else:
                x_new = x - eta * g

            if record:
                rec_eta[k] = float(np.ravel(eta)[0])
                rec_f[k] = obj.f(x)[0]
                rec_gsq[k] = np.sum(grad[0] ** 2)
                rec_norm[k] = gnorm[0]

            bad = alive & ~np.all(np.isfinite(x_new), axis=-1)
            if bad.any():
                alive &= ~bad
                any_dead = True
                if record:
                    raise DivergenceError(f"non-finite iterate at step {k}", k, x[0].copy(), seeds[0])
            if any_dead:
                dead = ~alive
                x_new[dead] = x[dead]
                if v is not None:
                    v_new[dead] = v[dead]
            x = x_new
            if v is not None:
                v = v_new
            if record:
                rec_x[k + 1] = x[0]

    fx = obj.f(x)
    stage_f[:, N] = fx
    bad = alive & ~(np.isfinite(fx) & (fx <= limit))
    if bad.any():
        alive &= ~bad
        if record:
            raise DivergenceError("f exceeded the divergence threshold at the last step", T, x[0].copy(), seeds[0])

    out = {
        "x_hat": x_hat,
        "final_x": x,
        "diverged": ~alive,
        "stage_start_f": stage_f,
        "max_oracle_norm": max_norm,
        "hat_index": hat_k,
    }
    if record:
        stage, inner = spec.stage_index()
        out["trajectory"] = Trajectory(
            stage, inner, rec_eta, rec_f, rec_gsq, rec_norm, stage_f[0].copy(), rec_x
        )
    return out


def _prepare(obj, spec, x0, beta):
    if x0 is None:
        x0 = obj.x0
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (obj.dim,):
        raise ValueError(f"x0 must have shape ({obj.dim},), got {x0.shape}")
    if beta is not None:
        if not 0 <= beta < 1:
            raise ValueError(f"beta must lie in [0, 1), got {beta}")
        if not is_monotone(spec.mode):
            warnings.warn(
                "step sizes are not monotone within stages; the momentum descent analysis does not cover this schedule",
                stacklevel=3,
            )
    return x0


def _single(obj, noise, spec, seed, x0, beta, reset_momentum, store_iterates):
    x0 = _prepare(obj, spec, x0, beta)
    out = _simulate(obj, noise, spec, [int(seed)], x0, beta, reset_momentum, record=True)
    traj = out["trajectory"]
    if not store_iterates:
        traj = Trajectory(**{**traj.__dict__, "iterates": None})
    return RunResult(
        x_hat=out["x_hat"][0],
        final_x=out["final_x"][0],
        trajectory=traj,
        seed=int(seed),
        hat_index=int(out["hat_index"][0]),
        beta=beta,
        noise_free=noise.is_zero,
    )


def run_sgd(
    obj: Objective,
    noise: NoiseModel,
    spec: ScheduleSpec,
    seed: int,
    x0=None,
    store_iterates: bool = True,
) -> RunResult:
    """One seeded SGD run with full trajectory; raises DivergenceError on blow-up."""
    return _single(obj, noise, spec, seed, x0, None, False, store_iterates)


def run_sgdm(
    obj: Objective,
    noise: NoiseModel,
    spec: ScheduleSpec,
    beta: float,
    seed: int,
    x0=None,
    reset_momentum: bool = False,
    store_iterates: bool = True,
) -> RunResult:
    """One seeded heavy-ball run ``v <- beta v + (1-beta) g``, ``x <- x - eta v``.

    The buffer starts at zero and carries over stage boundaries unless
    ``reset_momentum`` is set.
    """
    return _single(obj, noise, spec, seed, x0, beta, reset_momentum, store_iterates)


def _ensemble_job(args):
    return _simulate(*args, record=False)


def run_ensemble(
    obj: Objective,
    noise: NoiseModel,
    spec: ScheduleSpec,
    seeds,
    x0=None,
    beta: float | None = None,
    reset_momentum: bool = False,
    workers: int = 1,
) -> EnsembleResult:
    """Many seeded runs without trajectories; diverged runs are flagged, not raised."""
    seeds = np.asarray(list(seeds), dtype=np.int64)
    if seeds.size == 0:
        raise ValueError("need at least one seed")
    x0 = _prepare(obj, spec, x0, beta)
    workers = max(1, min(int(workers or os.cpu_count() or 1), len(seeds)))
    parts = np.array_split(seeds, workers)
    jobs = [(obj, noise, spec, p.tolist(), x0, beta, reset_momentum) for p in parts]
    if workers == 1:
        results = [_ensemble_job(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ensemble_job, jobs))
    merged = {key: np.concatenate([r[key] for r in results]) for key in results[0]}
    return EnsembleResult(seeds=seeds, **merged)


# --- Lyapunov diagnostics ------------------------------------------------------


def shifted_point(x_i, x_prev, beta: float):
    """``z_i = (x_i - beta x_{i-1}) / (1 - beta)``."""
    return (np.asarray(x_i, dtype=float) - beta * np.asarray(x_prev, dtype=float)) / (1.0 - beta)


def lyapunov_w(f_z, f_x_next, fstar, dx_sq, eta, constants: MomentumConstants, corrected: bool = False):
    """``(f(z) - f*)/eta + r ||dx||^2 / eta + 2 r (f(x_next) - f*)``.

    ``corrected=True`` weights the last term by ``2 r (1 - beta)`` instead,
    the weight under which the one-step descent inequality holds pathwise.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0):
        raise ValueError("eta must be positive")
    r = constants.r
    w_f = 2 * r * (1 - constants.beta) if corrected else 2 * r
    return (f_z - fstar) / eta + r * dx_sq / eta + w_f * (f_x_next - fstar)


def initial_lyapunov(obj: Objective, x1, eta1: float, constants: MomentumConstants) -> float:
    """``W_1^1`` with the convention ``x_0 = x_1`` (so ``z_1 = x_1`` and ``dx = 0``)."""
    f1 = float(obj.f(np.asarray(x1, dtype=float)))
    return float(lyapunov_w(f1, f1, obj.fstar, 0.0, eta1, constants))


@dataclass(frozen=True)
class DescentReport:
    """LHS - RHS of the momentum descent inequality per eligible step.

    ``covered[k]`` is False where a precondition fails; ``reason[k]`` says which.
    """

    step: np.ndarray
    gap: np.ndarray
    covered: np.ndarray
    reason: tuple[str, ...]
    constants: MomentumConstants
    tol: float

    @property
    def max_violation(self) -> float:
        g = self.gap[self.covered]
        return float(g.max()) if g.size else float("-inf")

    @property
    def n_covered(self) -> int:
        return int(self.covered.sum())

    @property
    def n_violations(self) -> int:
        return int(np.sum(self.gap[self.covered] > self.tol))


def check_descent_inequality(
    result: RunResult,
    obj: Objective,
    spec: ScheduleSpec,
    constants: MomentumConstants | None = None,
    tol: float = 1e-9,
    corrected: bool = False,
) -> DescentReport:
    """Evaluate ``W_{i+1} - [W_i + A1 (1/eta_i - 1/eta_{i-1}) - ||grad f(x_i)||^2 + eta_i B1 G^2]``.

    Eligible steps have inner index ``i >= 2``.  Without explicit constants,
    ``G`` is the largest oracle norm seen and ``Delta0`` the largest ``f - f*``
    over all iterates.

    With the stated weight ``2r`` on ``f(x_{i+1}) - f*`` the inequality can
    fail at steps where ``f`` increases (heavy ball with large ``beta``);
    ``corrected=True`` uses ``2r(1 - beta)``, see ``lyapunov_w``.
    """
    traj = result.trajectory
    if traj.iterates is None:
        raise ValueError("descent check needs stored iterates")
    if result.beta is None or not 0 < result.beta < 1:
        raise ValueError("descent check needs a momentum run with 0 < beta < 1")
    if obj.L is None or obj.fstar is None:
        raise ValueError(f"objective {obj.name!r} needs known L and f*")
    beta, X, fstar = result.beta, traj.iterates, obj.fstar
    fx = obj.f(X)
    if constants is None:
        pc = ProblemConstants(
            L=obj.L,
            G=float(traj.oracle_norm.max()),
            Delta0=float(max(0.0, np.max(fx - fstar))),
        )
        constants = momentum_constants(beta, pc)
    c = constants

    k = np.flatnonzero(traj.inner >= 2)
    eta_prev, eta_i = traj.eta[k - 1], traj.eta[k]
    f_z_i = obj.f(shifted_point(X[k], X[k - 1], beta))
    f_z_next = obj.f(shifted_point(X[k + 1], X[k], beta))
    dx_i = np.sum((X[k] - X[k - 1]) ** 2, axis=-1)
    dx_next = np.sum((X[k + 1] - X[k]) ** 2, axis=-1)
    W_i = lyapunov_w(f_z_i, fx[k], fstar, dx_i, eta_prev, c, corrected)
    W_next = lyapunov_w(f_z_next, fx[k + 1], fstar, dx_next, eta_i, c, corrected)
    rhs = W_i + c.A1 * (1 / eta_i - 1 / eta_prev) - traj.grad_norm_sq[k] + eta_i * c.B1 * c.G**2
    gap = W_next - rhs

    reason = []
    monotone = is_monotone(spec.mode)
    for e_prev, e_i in zip(eta_prev, eta_i):
        if not result.noise_free:
            reason.append("noisy run")
        elif not monotone:
            reason.append("non-monotone, not covered")
        elif e_i > e_prev:
            reason.append("step size increased")
        elif max(e_i, e_prev) > 1.0 / obj.L:
            reason.append("eta > 1/L")
        else:
            reason.append("")
    covered = np.array([r == "" for r in reason], dtype=bool)
    return DescentReport(k, gap, covered, tuple(reason), c, tol)
