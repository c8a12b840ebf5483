import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandwidth_sgd.schedules import (
    Band,
    ConstantOne,
    ExpStep,
    InvSqrtT,
    Mode,
    MONOTONE_MODES,
    ScheduleError,
    ScheduleSpec,
    ShiftedInvSqrtT,
    StagePlan,
    TrustRegion,
    build_stage_plan,
    describe,
    eval_boundary,
    sampling_weights,
    shifted_sqrt_band,
    step_size,
    stepdecay_band,
    trust_region_eta,
)

import oracles


# --- boundaries ---------------------------------------------------------------


def test_exp_step_value():
    assert eval_boundary(ExpStep(2), 3) == 0.25


@pytest.mark.parametrize("bf", [ExpStep(3.0), InvSqrtT(), ShiftedInvSqrtT(0.4), ConstantOne()])
def test_boundaries_start_at_one(bf):
    assert eval_boundary(bf, 1) == pytest.approx(1.0, abs=1e-15)


def test_inv_sqrt_value():
    assert eval_boundary(InvSqrtT(), 4) == 0.5


@pytest.mark.parametrize("t", [0, -1, 1.5])
def test_bad_stage_index(t):
    with pytest.raises(ScheduleError):
        eval_boundary(InvSqrtT(), t)


def test_exp_step_needs_alpha_above_one():
    with pytest.raises(ScheduleError):
        ExpStep(1.0)


# --- plans ---------------------------------------------------------------------


def test_stepdecay_log_plan():
    plan = build_stage_plan("stepdecay_log", 1024, alpha=2)
    assert plan.lengths == (205, 205, 205, 205, 204)


def test_single_stage_plan():
    assert build_stage_plan("constant_length", 100, stages=1).lengths == (100,)


def test_expgrow_plan():
    assert build_stage_plan("stepdecay_expgrow", 16, alpha=2).lengths == (4, 12)


def test_sqrt_decay_plan_shape():
    plan = build_stage_plan("sqrt_decay", 100)
    assert plan.lengths[:4] == (10, 7, 6, 5)
    assert plan.total == 100


def test_floor_option_on_log_plan():
    # log_2.5(3000)/2 = 4.37 -> 4 stages either way; log_2(3000)/2 = 5.78 -> 5 vs 6
    assert build_stage_plan("stepdecay_log", 3000, alpha=2, floor=True).n_stages == 5
    assert build_stage_plan("stepdecay_log", 3000, alpha=2).n_stages == 6


def test_plan_rejects_unknown_kind():
    with pytest.raises(ScheduleError):
        build_stage_plan("warmup", 100)


def test_plan_needs_positive_stages():
    with pytest.raises(ScheduleError):
        build_stage_plan("constant_length", 10, length=3, stages=2)
    with pytest.raises(ScheduleError):
        StagePlan((3, 0))


@settings(max_examples=1000, deadline=None)
@given(
    kind=st.sampled_from(["constant_length", "stepdecay_log", "stepdecay_expgrow", "sqrt_decay"]),
    T=st.integers(2, 200_000),
    alpha=st.floats(1.1, 12),
    n=st.integers(1, 50),
)
def test_stage_sum_exact(kind, T, alpha, n):
    params = {"constant_length": {"stages": min(n, T)}, "sqrt_decay": {}}.get(kind, {"alpha": alpha})
    try:
        plan = build_stage_plan(kind, T, **params)
    except ScheduleError:
        return  # only allowed when a rounded stage would be empty
    assert plan.total == T
    assert min(plan.lengths) >= 1


# --- modes ---------------------------------------------------------------------


def _one_stage_spec(mode, m=1.0, M=2.0, S=5, t=2):
    # stage t gets the profile; stage 1 is kept on the lower edge by default
    return ScheduleSpec(ConstantOne(), Band(m, M), StagePlan((S,) * t), mode)


def test_linear_mode_values():
    spec = _one_stage_spec(Mode.LINEAR)
    assert [step_size(spec, 2, i) for i in (1, 3, 5)] == [2.0, 1.5, 1.0]


def test_cosine_endpoints():
    spec = ScheduleSpec(ExpStep(2), Band(1.0, 3.0), StagePlan((7, 7)), Mode.COSINE)
    assert step_size(spec, 2, 1) == pytest.approx(3.0 * 0.5, abs=1e-12)
    assert step_size(spec, 2, 7) == pytest.approx(1.0 * 0.5, abs=1e-12)


def test_first_stage_lower_flag():
    spec = _one_stage_spec(Mode.LINEAR)
    assert step_size(spec, 1, 1) == 1.0
    spec = ScheduleSpec(ConstantOne(), Band(1, 2), StagePlan((5, 5)), Mode.LINEAR, first_stage_lower=False)
    assert step_size(spec, 1, 1) == 2.0


def test_trust_region_piecewise():
    got = trust_region_eta(0.1, 2.0, 1.0, np.array([0.2, 0.7, 4.0]))
    np.testing.assert_allclose(got, [0.2, 0.1 / 0.7, 0.1], rtol=1e-12)


def test_trust_region_in_schedule():
    spec = ScheduleSpec(ConstantOne(), Band(0.1, 0.2), StagePlan((3, 3)), TrustRegion(2, 1))
    assert step_size(spec, 2, 1, grad_norm=0.7) == pytest.approx(0.1 / 0.7)
    with pytest.raises(TypeError):
        step_size(spec, 2, 1)


def test_trust_region_must_fit_band():
    with pytest.raises(ScheduleError):
        ScheduleSpec(ConstantOne(), Band(0.1, 0.15), StagePlan((3,)), TrustRegion(2, 1))
    with pytest.raises(ScheduleError):
        TrustRegion(2.0, 0.5)


def test_step_size_index_errors():
    spec = _one_stage_spec(Mode.LINEAR)
    with pytest.raises(ScheduleError):
        step_size(spec, 3, 1)
    with pytest.raises(ScheduleError):
        step_size(spec, 1, 6)


def test_band_rejects_inverted_edges():
    with pytest.raises(ScheduleError):
        Band(0.5, 0.2)


# --- randomized specs ------------------------------------------------------------

boundaries = st.one_of(
    st.builds(ExpStep, st.floats(1.05, 12)),
    st.just(InvSqrtT()),
    st.builds(ShiftedInvSqrtT, st.floats(0.01, 5)),
    st.just(ConstantOne()),
)
modes = st.sampled_from(list(Mode))


@st.composite
def specs(draw, allow_trust=True):
    bf = draw(boundaries)
    m = draw(st.floats(1e-3, 2))
    M = m * draw(st.floats(1, 8))
    lengths = draw(st.lists(st.integers(1, 30), min_size=1, max_size=8))
    plan = StagePlan(tuple(lengths))
    if allow_trust and draw(st.booleans()) and M / m >= 1:
        g1 = draw(st.floats(1, M / m))
        g2 = draw(st.floats(1, g1))
        return ScheduleSpec(bf, Band(m, M), plan, TrustRegion(g1, g2), draw(st.booleans()))
    cycles = draw(st.one_of(st.none(), st.integers(1, len(lengths))))
    return ScheduleSpec(bf, Band(m, M), plan, draw(modes), draw(st.booleans()), cycles)


@settings(max_examples=1000, deadline=None)
@given(spec=specs(), gn=st.floats(0, 100))
def test_band_containment(spec, gn):
    tol = 1e-12
    for t in range(1, spec.n_stages + 1):
        lo, hi = spec.lower(t), spec.upper(t)
        for i in range(1, spec.plan.lengths[t - 1] + 1):
            eta = step_size(spec, t, i, grad_norm=gn)
            assert lo * (1 - tol) <= eta <= hi * (1 + tol)


@settings(max_examples=300, deadline=None)
@given(spec=specs(allow_trust=False))
def test_vector_etas_match_pointwise(spec):
    etas = spec.etas()
    stage, inner = spec.stage_index()
    for k in range(spec.T):
        assert etas[k] == step_size(spec, int(stage[k]), int(inner[k]))


@settings(max_examples=300, deadline=None)
@given(spec=specs(allow_trust=False))
def test_monotone_within_stage(spec):
    if spec.mode not in MONOTONE_MODES:
        return
    etas, stage = spec.etas(), spec.stage_index()[0]
    same = stage[1:] == stage[:-1]
    assert np.all(np.diff(etas)[same] <= 1e-15 * etas[:-1][same])


@settings(max_examples=300, deadline=None)
@given(spec=specs(allow_trust=False))
def test_endpoint_matching(spec):
    if spec.mode in (Mode.LOWER, Mode.TRIANGULAR) or spec.cycles is not None:
        return
    for t in range(2 if spec.first_stage_lower else 1, spec.n_stages + 1):
        S = spec.plan.lengths[t - 1]
        if S < 2:
            continue
        assert step_size(spec, t, 1) == pytest.approx(spec.upper(t), rel=1e-12)
        assert step_size(spec, t, S) == pytest.approx(spec.lower(t), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(spec=specs(allow_trust=False))
def test_etas_against_scalar_oracle(spec):
    if spec.cycles is not None:
        return
    bf = spec.boundary
    name, par = {
        ExpStep: ("exp_step", getattr(bf, "alpha", None)),
        InvSqrtT: ("inv_sqrt_t", None),
        ShiftedInvSqrtT: ("shifted_inv_sqrt_t", getattr(bf, "a", None)),
        ConstantOne: ("constant", None),
    }[type(bf)]
    ref = oracles.eta_reference(name, par, spec.band.m, spec.band.M, spec.plan.lengths, spec.mode.value, spec.first_stage_lower)
    np.testing.assert_allclose(spec.etas(), ref, rtol=1e-12)


# --- cycles ----------------------------------------------------------------------


def test_cycles_hold_step_within_stage_and_first_block_lower():
    spec = shifted_sqrt_band(0.1, 0.5, 4, 3, Mode.LINEAR).build(30)
    etas = spec.etas()
    lower = spec.lower(np.arange(1, 31))
    np.testing.assert_allclose(etas[:10], lower[:10])
    # second block starts at the upper edge and ends on the lower edge
    assert etas[10] == pytest.approx(spec.upper(11))
    assert etas[19] == pytest.approx(lower[19])


def test_shifted_band_baseline_follows_eta0_over_one_plus_a_sqrt_t():
    spec = shifted_sqrt_band(0.1, 0.5, 4, 3).build(50)
    t = np.arange(1, 51)
    np.testing.assert_allclose(spec.etas(), 0.1 / (1 + 0.5 * np.sqrt(t)), rtol=1e-12)


def test_stepdecay_band_edges():
    spec = stepdecay_band(0.1, 2.5, 1.3, Mode.LINEAR).build(3000)
    assert spec.band.M == pytest.approx(0.1 * 2.5 * 1.3)
    assert spec.n_stages == math.floor(math.log(3000, 2.5) / 2)


# --- weights and describe --------------------------------------------------------


def test_weights_exp_step():
    np.testing.assert_allclose(sampling_weights(ExpStep(2), 3), [1 / 7, 2 / 7, 4 / 7], rtol=1e-12)


def test_weights_single_stage():
    assert sampling_weights(InvSqrtT(), 1).tolist() == [1.0]


def test_weights_inv_sqrt():
    r = np.sqrt([1, 2, 3, 4])
    np.testing.assert_allclose(sampling_weights(InvSqrtT(), 4), r / r.sum(), rtol=1e-12)


@given(bf=boundaries, n=st.integers(1, 60))
def test_weights_normalized_and_nondecreasing(bf, n):
    w = sampling_weights(bf, n)
    assert abs(w.sum() - 1) < 1e-12
    assert np.all(np.diff(w) >= -1e-15)


def test_describe_rows():
    spec = _one_stage_spec(Mode.LINEAR)
    rows = list(describe(spec))
    assert len(rows) == spec.T
    assert rows[5] == {"t": 2, "i": 1, "global_step": 6, "eta": 2.0, "lower": 1.0, "upper": 2.0}
