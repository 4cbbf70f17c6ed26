import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prost.nonstat_env import BudgetProfile
from prost.regret_bounds import regret_bound
from prost.tempo import (
    HyperParams,
    TempoError,
    TempoPlan,
    feasible_tempo_set,
    lambert_w,
    make_plan,
    min_iterations,
    surrogate_bound,
    tau_ceiling,
    tempo_closed_form,
    tempo_constants,
    tempo_numeric,
)

from oracles import lambert_mp

INV_E = math.exp(-1)


# --------------------------------------------------------------- Lambert W


def test_lambert_examples():
    assert lambert_w(0.0) == 0.0
    assert lambert_w(math.e) == pytest.approx(1.0, abs=1e-15)
    assert lambert_w(-INV_E) == -1.0
    assert lambert_w(-INV_E, "lower") == -1.0
    with pytest.raises(TempoError):
        lambert_w(-0.4)
    with pytest.raises(TempoError):
        lambert_w(0.5, "lower")
    with pytest.raises(TempoError):
        lambert_w(0.5, "upper")


def _grid(branch):
    near = -INV_E + np.logspace(-15, -6, 200)
    if branch == "principal":
        return np.concatenate([near, np.linspace(-INV_E, 50, 800)])
    return np.concatenate([near, np.linspace(-INV_E, -1e-300, 800)[:-1], [-1e-10, -1e-100]])


@pytest.mark.parametrize("branch", ["principal", "lower"])
def test_lambert_residual_grid(branch):
    for x in _grid(branch):
        w = lambert_w(x, branch)
        assert abs(w * math.exp(w) - x) <= 1e-12


@pytest.mark.parametrize("branch", ["principal", "lower"])
def test_lambert_matches_high_precision(branch):
    rng = np.random.default_rng(0)
    hi = 20.0 if branch == "principal" else -1e-6
    for x in np.concatenate([rng.uniform(-INV_E, hi, 100), -INV_E + np.logspace(-12, -3, 20)]):
        assert lambert_w(x, branch) == pytest.approx(lambert_mp(x, branch), rel=2e-7, abs=1e-12)


@given(st.floats(-INV_E, 1e6))
def test_lambert_principal_property(x):
    w = lambert_w(x)
    assert w >= -1.0
    assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, abs(x))


@given(st.floats(-INV_E, -1e-300))
def test_lambert_lower_property(x):
    w = lambert_w(x, "lower")
    assert w <= -1.0
    assert abs(w * math.exp(w) - x) <= 1e-12


# ------------------------------------------------------------ feasibility


def test_feasible_set_examples():
    assert tau_ceiling(0.9, 0.1, 2) == pytest.approx(0.01 / (2 * math.log(2)))
    assert tau_ceiling(0.9, 0.1, 2) == pytest.approx(0.007213, abs=5e-7)
    assert min_iterations(math.e / 2.5, 1.0, 1.0, 0.5, 0.5) == 3
    assert min_iterations(1.0, 5.0, 1.0, 0.5, 0.5) == 1


def test_feasible_set_reports_empty():
    hp = HyperParams(eta=0.05, tau=0.1, gamma=0.9)
    sets = feasible_tempo_set(hp, 0.01, 10)
    assert sets.n_max == 9
    assert sets.empty and sets.candidates() == []
    full = feasible_tempo_set(hp, 1e6, 10)
    assert full.n_min == 1 and full.candidates() == list(range(1, 10))
    with pytest.raises(TempoError):
        feasible_tempo_set(hp.replace(tau=0.0), 1.0, 10)


def test_hyperparams_validation():
    with pytest.raises(TempoError):
        HyperParams(eta=2.0, tau=0.1, gamma=0.9)
    with pytest.raises(TempoError):
        HyperParams(lam=0.5)
    with pytest.raises(TempoError):
        HyperParams(p=1.0)
    hp = HyperParams(beta=0.5, lam=4.0, r_max=2.0)
    assert hp.r_hat_max == pytest.approx(2.5)


# ------------------------------------------------------------ closed forms


def test_closed_form_examples():
    hp = HyperParams(eta=1.0, tau=0.5, gamma=0.4, total_time=300)
    assert tempo_closed_form(0.0, hp, 1.0, 1.0) == tempo_closed_form(0.0, hp, 5.0, 2.0)
    assert tempo_closed_form(0.0, hp, 1.0, 1.0).delta_pi == 300.0
    c2 = tempo_closed_form(1.0, hp, 0.25, 1.0)
    assert c2.case_id == "case2" and c2.delta_pi == pytest.approx(3.0)
    c3 = tempo_closed_form(2.0, hp, 1.0, 0.5)
    assert c3.case_id == "case3" and c3.one_iteration and c3.delta_pi == 1.0
    with pytest.raises(TempoError):
        tempo_closed_form(1.0, hp, 0.0, 1.0)
    with pytest.raises(TempoError):
        tempo_closed_form(0.5, hp, 1.0, 0.5)  # Lambert argument below -1/e


def test_numeric_examples():
    assert tempo_numeric(lambda d: (d - 5) ** 2, range(1, 21)) == 5
    assert tempo_numeric(lambda d: d, [7, 3, 9]) == 3
    assert tempo_numeric(lambda d: 0.0, [4, 2, 8]) == 2
    with pytest.raises(TempoError):
        tempo_numeric(lambda d: d, [])
    with pytest.raises(TempoError):
        tempo_numeric(lambda d: math.inf, [1])


@given(st.floats(0.01, 0.6), st.floats(1e-3, 0.99), st.floats(0.1, 100.0))
@settings(max_examples=60)
def test_case2_cross_check(eta_tau, ratio, k_env):
    hp = HyperParams(eta=1.0, tau=eta_tau, gamma=0.3)
    k_agent = k_env / ratio
    cf = tempo_closed_form(1.0, hp, k_env, k_agent)
    best = tempo_numeric(lambda d: surrogate_bound(d, 1.0, k_env, k_agent, eta_tau), range(1, 5000))
    assert abs(best - cf.delta_pi) <= 1.0


@given(st.floats(0.05, 0.9), st.floats(0.05, 0.95), st.floats(0.1, 100.0))
@settings(max_examples=60)
def test_case3_cross_check(alpha, frac, k_env):
    # largest eta tau keeping the Lambert argument inside [-1/e, 0), scaled by frac
    eta_tau = (1.0 - math.exp(-(1.0 - alpha) * INV_E)) * frac
    hp = HyperParams(eta=1.0, tau=eta_tau, gamma=0.5)
    k_agent = (1.0 - eta_tau) * k_env
    cf = tempo_closed_form(alpha, hp, k_env, k_agent)
    assert cf.branch == "lower"
    x = -math.log(1.0 - eta_tau) / (alpha - 1.0)
    start = math.ceil(math.exp(-lambert_w(x, "principal")))
    best = tempo_numeric(lambda d: surrogate_bound(d, alpha, k_env, k_agent, eta_tau), range(start, start + 20000))
    assert abs(best - cf.delta_pi) <= 1.0


def test_tempo_constants():
    hp = HyperParams(eta=1.0, tau=0.5, gamma=0.4)
    k_env, k_agent = tempo_constants(hp, 0.5, 8.0, 2.0, 11)
    assert k_env == pytest.approx(2.0)
    assert k_agent == pytest.approx(math.log(2.0) * 2.0 * 10 * 2.4)


# ------------------------------------------------------------------ plans


def test_make_plan_examples():
    p = make_plan(10, 1, 1)
    assert p.times == tuple(float(t) for t in range(1, 11)) and p.k_star == 10
    p = make_plan(10, 3, 1)
    assert p.times == (1.0, 4.0, 7.0, 10.0) and p.k_star == 3
    p = make_plan(10, 10)
    assert p.times == (10.0,) and p.n_interactions == 1
    with pytest.raises(TempoError):
        make_plan(10, 11)
    with pytest.raises(TempoError):
        make_plan(10, 0)


@given(st.integers(1, 50), st.floats(1, 1000), st.floats(0, 1))
def test_plan_invariants(d, total, frac):
    if d > total:
        return
    p = make_plan(total, d, frac * (total - d))
    gaps = np.diff(p.times)
    assert np.all(gaps > 0) and np.allclose(gaps, d)
    assert p.times[-1] <= total
    assert p.k_star == math.floor(total / d + 1e-12)


def test_plan_json_round_trip():
    p = make_plan(20, 4, 2, case_id="case2", k_env=1.5, notes=("x",))
    q = TempoPlan.from_dict(json.loads(p.to_json()))
    assert q.times == p.times and q.case_id == "case2" and q.k_env == 1.5 and math.isnan(q.k_agent)
    assert json.loads(p.to_json())["k_agent"] is None
    with pytest.raises(TempoError):
        TempoPlan(2, 2, (1.0, 2.0, 5.0))


# ----------------------------------------------- bound curves in the tempo


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
def test_bound_parts_monotone_in_tempo(alpha):
    hp = HyperParams(eta=0.5, tau=0.2, gamma=0.9)
    k = 30
    deltas = range(1, k + 1)
    prof = BudgetProfile({1: 1.0, 2: 2.0**alpha}, {1: 0.0, 2: 0.0}, {}, alpha, 0.0)
    rep = regret_bound(hp, prof, k, 1, 5, curve=deltas)
    assert np.all(np.diff(rep.curve_r_II) <= 1e-12)
    assert np.all(np.diff(rep.curve_r_I) >= -1e-12)
