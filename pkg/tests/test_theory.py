import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandwidth_sgd.schedules import Band, ConstantOne, ExpStep, ScheduleError, ScheduleSpec, StagePlan, stepdecay_expgrow, stepdecay_log
from bandwidth_sgd.theory import (
    ProblemConstants,
    TheoryError,
    bound_sgd_stagewise,
    bound_sgd_sqrt_const,
    bound_sgd_sqrt_decay,
    bound_sgd_stepdecay,
    bound_sgd_stepdecay_optimal,
    bound_sgdm_multistage,
    bound_sgdm_single_stage,
    bound_sgdm_stepdecay,
    expgrow_weight_closed_form,
    momentum_constants,
    sgd_bound_for,
    sgdm_bound_for,
    weighted_stage_sum,
)

import oracles

UNIT = ProblemConstants(L=1.0, sigma=1.0, G=1.0, Delta0=1.0)


# --- momentum constants ----------------------------------------------------------


def test_momentum_r():
    assert momentum_constants(0.9, UNIT).r == pytest.approx(0.9 / (2 * 0.19 * 0.01), rel=1e-12)
    assert momentum_constants(0.9, UNIT).r == pytest.approx(236.8421, abs=1e-4)


def test_momentum_constants_unit_case():
    mc = momentum_constants(0.9, UNIT)
    assert mc.Delta_z == pytest.approx(55.0, rel=1e-12)
    assert mc.A1 == pytest.approx(300.842, abs=1e-3)
    assert mc.B1 == pytest.approx(76.0526, abs=1e-4)


def test_momentum_constants_vanishing_g_and_delta():
    mc = momentum_constants(0.5, ProblemConstants(L=1.0))
    assert mc.r == pytest.approx(4 / 3, rel=1e-12)
    assert mc.Delta_z == 0 and mc.A1 == 0 and mc.C0 == 0


@pytest.mark.parametrize("beta", [0.0, 1.0, -0.1, 1.5])
def test_momentum_beta_domain(beta):
    with pytest.raises(TheoryError):
        momentum_constants(beta, UNIT)


@given(beta=st.floats(0.01, 0.99), L=st.floats(0.1, 10), G=st.floats(0.01, 5), D=st.floats(0.01, 5))
def test_momentum_constants_positive(beta, L, G, D):
    mc = momentum_constants(beta, ProblemConstants(L=L, G=G, Delta0=D))
    for name in ("r", "A1", "B1", "A2", "Delta_z", "C0", "C1", "C2"):
        assert getattr(mc, name) > 0


def test_problem_constants_validation():
    with pytest.raises(TheoryError):
        ProblemConstants(L=0.0)
    with pytest.raises(TheoryError):
        ProblemConstants(L=1.0, sigma=-1.0)


# --- frozen SGD examples -----------------------------------------------------------


def test_stagewise_worked_instance():
    spec = ScheduleSpec(ExpStep(2), Band(1.0, 1.0), StagePlan((2, 2)))
    c = ProblemConstants(L=1.0, sigma=1.0)
    assert bound_sgd_stagewise([1.0, 0.5, 0.5], spec, c) == pytest.approx(5 / 6, rel=1e-12)


def test_stagewise_single_stage_specialization():
    spec = ScheduleSpec(ConstantOne(), Band(0.5, 0.7), StagePlan((40,)))
    c = ProblemConstants(L=2.0, sigma=0.3)
    want = (2 * 0.8 / 0.5 + 0.49 * 2.0 * 0.3 * 40 / 0.5) / 40
    assert bound_sgd_stagewise([1.0, 0.2], spec, c) == pytest.approx(want, rel=1e-12)


def test_stagewise_no_progress_no_noise_is_zero():
    spec = stepdecay_log(2, 0.3).build(100)
    F = [0.7] * (spec.n_stages + 1)
    assert bound_sgd_stagewise(F, spec, ProblemConstants(L=1.0)) == 0


def test_stagewise_needs_all_stage_values():
    spec = stepdecay_log(2, 0.3).build(100)
    with pytest.raises(TheoryError):
        bound_sgd_stagewise([1.0] * spec.n_stages, spec, UNIT)


def test_sqrt_const_examples():
    c0 = ProblemConstants(L=1.0, Delta0=1.0)
    assert bound_sgd_sqrt_const(1, 100, 1, 1, c0) == pytest.approx(0.3, rel=1e-12)
    assert bound_sgd_sqrt_const(4, 400, 1, 2, UNIT) == pytest.approx(0.675, rel=1e-12)
    assert bound_sgd_sqrt_const(4, 400, 1, 1, c0) == pytest.approx(bound_sgd_sqrt_const(1, 100, 1, 1, c0) / 4, rel=1e-12)


def test_sqrt_decay_examples():
    assert bound_sgd_sqrt_decay(100, 1, 1, ProblemConstants(L=1.0, Delta0=1.0)) == pytest.approx(0.2, rel=1e-12)
    assert bound_sgd_sqrt_decay(400, 0.3, 0.6, UNIT) == pytest.approx(bound_sgd_sqrt_decay(100, 0.3, 0.6, UNIT) / 2, rel=1e-12)
    assert bound_sgd_sqrt_decay(100, 1, 1, ProblemConstants(L=1.0)) == 0


def test_stepdecay_example():
    want = 2.5 / math.log(2) * math.log(1024) / 32
    got = bound_sgd_stepdecay(1024, 2, 1, 1, UNIT)
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(0.7813, abs=1e-4)


def test_stepdecay_optimal_example():
    assert bound_sgd_stepdecay_optimal(100, 3, 1, 1, UNIT) == pytest.approx(0.684, rel=1e-12)


def test_stepdecay_optimal_leading_order():
    T = 1e14
    lead = (1 + 2 / (3 - 1)) * (2 * 1 + 1)
    assert bound_sgd_stepdecay_optimal(T, 3, 1, 1, UNIT) * math.sqrt(T) == pytest.approx(lead, rel=1e-6)


@pytest.mark.parametrize("fn", [bound_sgd_stepdecay, bound_sgd_stepdecay_optimal])
@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_alpha_domain(fn, alpha):
    with pytest.raises(TheoryError):
        fn(100, alpha, 1, 1, UNIT)


def test_stepdecay_decreasing_past_e_squared():
    Ts = np.arange(9, 5000)
    vals = [bound_sgd_stepdecay(int(T), 2.0, 0.3, 0.5, UNIT) for T in Ts]
    assert np.all(np.diff(vals) < 0)


def test_optimal_below_log_rate_on_large_T():
    for T in np.logspace(3, 7, 41):
        for alpha in (1.5, 2.0, 3.0, 6.0):
            assert bound_sgd_stepdecay_optimal(T, alpha, 0.2, 0.5, UNIT) <= bound_sgd_stepdecay(T, alpha, 0.2, 0.5, UNIT)


# --- frozen SGDM examples ------------------------------------------------------------


def test_sgdm_stepdecay_single_stage_reduction():
    mc = momentum_constants(0.9, UNIT)
    T, a, m, M = 100, 2.0, 0.5, 0.8
    want = 3 / T + (a * mc.C0 + mc.C2) / T + (mc.Delta_z + mc.C1) * a / (m * T) + M * mc.B1
    assert bound_sgdm_stepdecay(T, 1, a, m, M, 3.0, mc) == pytest.approx(want, rel=1e-12)


def test_sgdm_stepdecay_worked_instance():
    mc = momentum_constants(0.9, UNIT)
    want = oracles.momentum_stepdecay(100, 2, 2.0, 1, 1, 1.0, oracles.momentum_consts(0.9, 1, 1, 1), 1.0)
    assert bound_sgdm_stepdecay(100, 2, 2.0, 1, 1, 1.0, mc) == pytest.approx(want, rel=1e-12)


def test_sgdm_stepdecay_needs_a_stage():
    with pytest.raises(TheoryError):
        bound_sgdm_stepdecay(100, 0, 2.0, 1, 1, 1.0, momentum_constants(0.9, UNIT))


def test_multistage_single_stage_reduction():
    mc = momentum_constants(0.8, UNIT)
    spec = ScheduleSpec(ConstantOne(), Band(0.4, 0.6), StagePlan((50,)))
    want = (2.0 + mc.C0 + mc.Delta_z / 0.4 + mc.C1 / 0.4 + mc.C2 + mc.B1 * 0.6 * 50) / 50
    assert bound_sgdm_multistage(spec, 2.0, mc) == pytest.approx(want, rel=1e-12)


def test_expgrow_weight_sum():
    # the rounded plan (16, 32, 64, 144) gives 16 + 64 + 256 + 1152
    spec = stepdecay_expgrow(2.0, 0.1).build(256)
    assert spec.plan.lengths == (16, 32, 64, 144)
    assert weighted_stage_sum(spec) == 1488
    # the unrounded geometric sum, divided by (alpha^2 - 1) = 3
    assert expgrow_weight_closed_form(2.0, 256) == pytest.approx((4096 + 512) / 3)


@given(alpha=st.floats(1.2, 6), k=st.integers(4, 30))
def test_expgrow_closed_form_matches_unrounded_sum(alpha, k):
    # pick T so that alpha^N = (alpha - 1) sqrt(T) + 1 holds exactly for integer N
    N = k
    rt = (alpha**N - 1) / (alpha - 1)
    direct = sum(rt * alpha ** (t - 1) * alpha ** (t - 1) for t in range(1, N + 1))
    assert expgrow_weight_closed_form(alpha, rt**2) == pytest.approx(direct, rel=1e-10)


def test_single_stage_examples():
    mc = momentum_constants(0.5, ProblemConstants(L=1.0, G=1.0))
    eta0 = 1 / mc.B1
    assert bound_sgdm_single_stage(100, 1.0, mc, eta0=eta0) == pytest.approx(0.11, rel=1e-12)
    zero = momentum_constants(0.5, ProblemConstants(L=1.0))
    assert bound_sgdm_single_stage(100, 0.0, zero, eta0=0.3) == 0
    assert bound_sgdm_single_stage(100, 0.0, zero, band=(0.2, 0.2)) == 0
    with pytest.raises(TheoryError):
        bound_sgdm_single_stage(100, 1.0, mc)


# --- registries ------------------------------------------------------------------------


def test_registry_dispatch():
    spec = stepdecay_log(2.0, 0.2, 0.5).build(1024)
    assert sgd_bound_for("stepdecay", spec, UNIT) == bound_sgd_stepdecay(1024, 2.0, 0.2, 0.5, UNIT)
    mc = momentum_constants(0.9, UNIT)
    assert sgdm_bound_for("momentum_stepdecay", spec, 1.0, mc) == bound_sgdm_stepdecay(1024, spec.n_stages, 2.0, 0.2, 0.5, 1.0, mc)
    with pytest.raises(TheoryError):
        sgd_bound_for("nope", spec, UNIT)
    with pytest.raises(TheoryError):
        sgdm_bound_for("nope", spec, 1.0, mc)
    with pytest.raises(TheoryError):
        sgd_bound_for("stagewise", spec, UNIT)
    with pytest.raises(TheoryError):
        sgd_bound_for("stepdecay", ScheduleSpec(ConstantOne(), Band(0.1, 0.1), StagePlan((10,))), UNIT)


# --- dual implementation -------------------------------------------------------------------


def _rel(a, b):
    return abs(a - b) <= 1e-12 * max(abs(a), abs(b), 1e-300)


def test_dual_implementation_agreement():
    rng = random.Random(20241015)
    checked = 0
    for _ in range(1000):
        c = oracles.random_constants(rng)
        T, a, m = c["T"], c["alpha"], c["m"]
        M = m * c["s"]
        pc = ProblemConstants(L=c["L"], sigma=c["sigma"], G=c["G"], Delta0=c["D0"])
        args = (m, M, c["L"], c["sigma"], c["D0"])
        assert _rel(bound_sgd_stepdecay(T, a, m, M, pc), oracles.stepdecay(T, a, *args))
        assert _rel(bound_sgd_stepdecay_optimal(T, a, m, M, pc), oracles.stepdecay_grow(T, a, *args))
        S = rng.randint(1, T)
        assert _rel(bound_sgd_sqrt_const(S, T, m, M, pc), oracles.sqrt_const(S, T, *args))
        assert _rel(bound_sgd_sqrt_decay(T, m, M, pc), oracles.sqrt_decay(T, *args))

        mc = momentum_constants(c["beta"], pc)
        oc = oracles.momentum_consts(c["beta"], c["L"], c["G"], c["D0"])
        for k, v in oc.items():
            assert _rel(getattr(mc, k), v)
        N = rng.randint(1, 12)
        assert _rel(bound_sgdm_stepdecay(T, N, a, m, M, c["W11"], mc), oracles.momentum_stepdecay(T, N, a, m, M, c["W11"], oc, c["G"]))
        assert _rel(
            bound_sgdm_stepdecay(T, N, a, m, M, c["W11"], mc, log_stages=True),
            oracles.momentum_stepdecay_log(T, a, m, M, c["W11"], oc, c["G"]),
        )

        lengths = [rng.randint(1, 500) for _ in range(N)]
        spec = ScheduleSpec(ExpStep(a), Band(m, M), StagePlan(tuple(lengths)))
        deltas = [a ** -(t - 1) for t in range(1, N + 2)]
        ref = oracles.momentum_multistage(deltas, lengths, m, M, sum(lengths), c["W11"], oc, c["G"])
        assert _rel(bound_sgdm_multistage(spec, c["W11"], mc), ref)
        F = sorted((rng.uniform(0, 5) for _ in range(N + 1)), reverse=True)
        ref = oracles.stagewise(F, deltas[:N], lengths, m, M, c["L"], c["sigma"])
        assert _rel(bound_sgd_stagewise(F, spec, pc), ref)
        checked += 1
    assert checked == 1000


# --- non-negativity and monotonicity --------------------------------------------------------

consts_st = st.builds(
    dict,
    L=st.floats(0.1, 10),
    sigma=st.floats(0, 3),
    G=st.floats(0, 5),
    D0=st.floats(0, 5),
    m=st.floats(0.01, 1),
    s=st.floats(1, 5),
    alpha=st.floats(1.1, 12),
    T=st.integers(10, 10**7),
    beta=st.floats(0.01, 0.99),
    W11=st.floats(0, 100),
)


def _all_bounds(c, sigma=None, G=None):
    sigma = c["sigma"] if sigma is None else sigma
    G = c["G"] if G is None else G
    pc = ProblemConstants(L=c["L"], sigma=sigma, G=G, Delta0=c["D0"])
    T, a, m = c["T"], c["alpha"], c["m"]
    M = m * c["s"]
    mc = momentum_constants(c["beta"], pc)
    sgd = [
        bound_sgd_stepdecay(T, a, m, M, pc),
        bound_sgd_stepdecay_optimal(T, a, m, M, pc),
        bound_sgd_sqrt_const(1, T, m, M, pc),
        bound_sgd_sqrt_decay(T, m, M, pc),
    ]
    spec = ScheduleSpec(ExpStep(a), Band(m, M), StagePlan((T // 3, T - T // 3)))
    sgdm = [
        bound_sgdm_stepdecay(T, 3, a, m, M, c["W11"], mc),
        bound_sgdm_stepdecay(T, 3, a, m, M, c["W11"], mc, log_stages=True),
        bound_sgdm_multistage(spec, c["W11"], mc),
        bound_sgdm_single_stage(T, c["W11"], mc, eta0=m),
        bound_sgdm_single_stage(T, c["W11"], mc, band=(m, M)),
    ]
    return np.array(sgd), np.array(sgdm)


@settings(max_examples=300, deadline=None)
@given(c=consts_st, bump=st.floats(0, 3))
def test_bounds_nonnegative_and_monotone_in_noise(c, bump):
    sgd, sgdm = _all_bounds(c)
    assert np.all(sgd >= 0) and np.all(sgdm >= 0)
    sgd_up, _ = _all_bounds(c, sigma=c["sigma"] + bump)
    _, sgdm_up = _all_bounds(c, G=c["G"] + bump)
    assert np.all(sgd_up >= sgd * (1 - 1e-12))
    assert np.all(sgdm_up >= sgdm * (1 - 1e-12))


@settings(max_examples=100, deadline=None)
@given(c=consts_st)
def test_bounds_vanish_without_noise_or_gap(c):
    c = dict(c, sigma=0.0, G=0.0, D0=0.0, W11=0.0)
    sgd, sgdm = _all_bounds(c)
    assert np.all(sgd == 0) and np.all(sgdm == 0)


def test_multistage_on_log_plan_stays_finite():
    mc = momentum_constants(0.9, UNIT)
    for T in (100, 1000, 10**5):
        try:
            spec = stepdecay_log(2.0, 0.2, 0.5).build(T)
        except ScheduleError:
            continue
        assert np.isfinite(bound_sgdm_multistage(spec, 1.0, mc))
