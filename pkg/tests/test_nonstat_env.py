import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prost.nonstat_env import (
    BudgetProfile,
    DriftSeries,
    EnvError,
    MdpSnapshot,
    ReacherConfig,
    budget_profile,
    corrupt,
    fit_drifting_constants,
    goal_reacher,
    goal_reacher_snapshot,
    load_drift_series,
    reacher_goal_cell,
    scalar_budget,
    sine_chain,
    sine_drift,
    sine_series,
    snapshot_at,
    structural_snapshot,
    variation_budget,
)
from prost.planner import optimal_values

from oracles import budget_double_loop


def random_snapshot(rng, s_n=3, a_n=2, horizon=3, gamma=0.9):
    p = rng.random((s_n, a_n, s_n))
    p /= p.sum(axis=2, keepdims=True)
    return MdpSnapshot(p, rng.normal(size=(s_n, a_n)), horizon, gamma)


# ------------------------------------------------------------------ snapshot


def test_snapshot_validates_rows():
    p = np.full((2, 1, 2), 0.6)
    with pytest.raises(EnvError):
        MdpSnapshot(p, np.zeros((2, 1)), 1, 0.9)
    MdpSnapshot(np.full((2, 1, 2), 0.3), np.zeros((2, 1)), 1, 0.9, "sub_stochastic")
    with pytest.raises(EnvError):
        MdpSnapshot(np.full((2, 1, 2), 0.5), np.array([[np.inf], [0.0]]), 1, 0.9)
    with pytest.raises(EnvError):
        MdpSnapshot(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), 1, 1.0)


# --------------------------------------------------------------------- drift


def test_sine_drift_examples():
    assert sine_drift(1, 0) == 0.0
    assert abs(sine_drift(1, 37)) < 1e-12
    ref = float(mpmath.sin(4 * mpmath.pi / 37))
    assert sine_drift(2, 1) == pytest.approx(ref, abs=1e-15)
    assert sine_drift(2, 1) == pytest.approx(0.33313979474205757, abs=1e-15)
    with pytest.raises(EnvError):
        sine_drift(1, -1)


@given(st.integers(1, 5), st.floats(0, 1e4))
def test_sine_bounded(speed, k):
    assert abs(sine_drift(speed, k)) <= 1.0


def test_load_drift_series(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("# prices\n0.5\n\n-0.5\n")
    assert load_drift_series(f).clean.tolist() == [1.0, -1.0]
    f.write_text("0\n0\n0\n")
    assert load_drift_series(f).clean.tolist() == [0.0, 0.0, 0.0]
    f.write_text("1.0\nxyz\n")
    with pytest.raises(EnvError, match="line 2"):
        load_drift_series(f)
    f.write_text("# nothing\n")
    with pytest.raises(EnvError):
        load_drift_series(f)
    with pytest.raises(EnvError):
        load_drift_series(tmp_path / "missing.txt")


def test_corrupt():
    s = sine_series(1, range(1000))
    assert np.array_equal(corrupt(s, 0.0, np.random.default_rng(0)).noisy, s.clean)
    a = corrupt(s, 0.05, np.random.default_rng(7))
    b = corrupt(s, 0.05, np.random.default_rng(7))
    assert np.array_equal(a.noisy, b.noisy)
    assert np.max(np.abs(a.noisy - a.clean)) <= 0.05
    with pytest.raises(EnvError):
        corrupt(s, -1, np.random.default_rng(0))


@given(st.floats(0, 0.5), st.integers(0, 2**31))
def test_corrupt_stays_in_band(b, seed):
    s = sine_series(3, range(50))
    out = corrupt(s, b, np.random.default_rng(seed))
    assert np.all(np.abs(out.noisy - out.clean) <= b)


def test_drift_series_rejects_band_violation():
    with pytest.raises(EnvError):
        DriftSeries(np.zeros(2), np.array([0.0, 0.2]), 0.1)


# ----------------------------------------------------------------- snapshots


def test_snapshot_modulation():
    env = sine_chain(speed=1)
    s0 = snapshot_at(env, 0.0)
    assert np.all(s0.reward[:, 1] == 0.0)
    one = structural_snapshot(env, 1.0)
    assert np.array_equal(one.reward, env.base.reward)
    assert np.array_equal(one.transition, env.base.transition)
    with pytest.raises(EnvError):
        snapshot_at(env, -1.0)
    with pytest.raises(EnvError):
        snapshot_at(env, env.wall_clock_horizon + 1)


def test_negative_drift_flips_optimal_action():
    # two-state chain, forward reward +1 in both states
    env = sine_chain(n_states=2, back_reward=0.0, horizon=3, slip=0.0)
    base = env.base.replace(reward=np.array([[0.0, 1.0], [0.0, 1.0]]))
    env2 = type(env)(base, env.drift, env.modulation, env.wall_clock_horizon)
    _, pol_pos = optimal_values(structural_snapshot(env2, 1.0))
    _, pol_neg = optimal_values(structural_snapshot(env2, -1.0))
    assert np.all(pol_pos.actions == 1)
    assert np.all(pol_neg.actions == 0)
    assert np.array_equal(structural_snapshot(env2, -1.0).reward[:, 1], [-1.0, -1.0])


def test_snapshot_determinism_and_rows():
    env = sine_chain(speed=3, transition_mix=0.4)
    for t in np.linspace(0, 100, 17):
        a, b = snapshot_at(env, t), snapshot_at(env, t)
        assert a.same_as(b)
        assert np.allclose(a.transition.sum(axis=2), 1.0, atol=1e-12)


def test_goal_reacher_cells():
    cfg = ReacherConfig()
    # center (0.9, 0) -> x cell [0.8, 1.0] (index 9), y cell [0.0, 0.2) (index 5)
    assert reacher_goal_cell(0.0, cfg) == 9 + 10 * 5
    center = (0.9 * math.cos(2 * math.pi * 625 / 2500), 0.9 * math.sin(2 * math.pi * 625 / 2500))
    assert center[0] == pytest.approx(0.0, abs=1e-12) and center[1] == pytest.approx(0.9)
    snap = goal_reacher_snapshot(625)
    assert reacher_goal_cell(2 * math.pi * 625 / 2500, cfg) == 5 + 10 * 9
    assert snap.n_states == 100 and snap.n_actions == 8 and snap.horizon == 13
    assert snap.reward.max() <= 6.0 and snap.reward.min() >= -0.5
    det = goal_reacher_snapshot(0, ReacherConfig(p_slip=0.0))
    assert np.all(det.transition.max(axis=2) == 1.0)


def test_goal_reacher_reward_on_entering():
    cfg = ReacherConfig(p_slip=0.0)
    snap = goal_reacher_snapshot(0, cfg)
    goal = reacher_goal_cell(0.0, cfg)
    entering = snap.transition[:, :, goal] == 1.0
    assert np.all(snap.reward[entering] == 6.0)
    assert np.all(snap.reward[~entering] == -0.5)


def test_goal_reacher_initial_state_is_center():
    env = goal_reacher()
    assert env.initial_state == 5 + 10 * 5


# ------------------------------------------------------------------- budgets


def test_variation_budget_examples():
    rng = np.random.default_rng(1)
    s = random_snapshot(rng)
    assert variation_budget([s, s]) == (0.0, 0.0)
    r = s.reward.copy()
    r[1, 0] += 0.3
    assert variation_budget([s, s.replace(reward=r)])[0] == pytest.approx(0.3)
    with pytest.raises(EnvError):
        variation_budget([s])
    with pytest.raises(EnvError):
        variation_budget([s, random_snapshot(rng, s_n=4)])


@given(st.integers(0, 2**31), st.integers(2, 6))
@settings(max_examples=30)
def test_variation_budget_matches_double_loop(seed, n):
    rng = np.random.default_rng(seed)
    snaps = [random_snapshot(rng) for _ in range(n)]
    got = variation_budget(snaps)
    ref = budget_double_loop([s.reward for s in snaps], [s.transition for s in snaps])
    assert got == pytest.approx(ref, abs=1e-12)


def test_scalar_budget_examples():
    assert scalar_budget(np.full(5, 0.3)) == 0.0
    with pytest.raises(EnvError):
        scalar_budget([1.0])


def test_scalar_budget_table_values():
    # four full periods of the generator (k = 1..149) reproduce the published column
    table = {38: 15.98, 76: 31.85, 114: 47.49, 152: 62.79, 190: 77.64}
    for g, want in table.items():
        got = scalar_budget(sine_series(g, range(1, 150)))
        assert abs(got - want) <= 0.5


def test_scalar_budget_increases_with_speed():
    vals = [scalar_budget(sine_series(w, range(1, 151))) for w in range(1, 6)]
    assert vals == sorted(vals)


@given(st.integers(1, 5), st.floats(0.0, 2.0))
@settings(max_examples=25)
def test_reward_budget_lipschitz(speed, stretch):
    env = sine_chain(speed=speed)
    times = [1 + stretch * k for k in range(30)]
    snaps = [snapshot_at(env, t) for t in times]
    b_r, b_p = variation_budget(snaps)
    lip = env.modulation.lipschitz(env.base)
    assert b_p == 0.0
    assert b_r <= lip * scalar_budget([env.drift_at(t) for t in times]) + 1e-12


def test_fit_drifting_constants_examples():
    assert fit_drifting_constants({1: 1.0, 2: 2.0, 4: 4.0})[0] == pytest.approx(1.0, abs=1e-9)
    assert fit_drifting_constants({1: 3.0, 2: 3.0, 4: 3.0})[0] == pytest.approx(0.0, abs=1e-12)
    a, _ = fit_drifting_constants({c: c**1.5 for c in (1, 2, 3, 5)})
    assert a == pytest.approx(1.5, abs=1e-9)
    with pytest.raises(EnvError):
        fit_drifting_constants({1: 1.0})
    with pytest.raises(EnvError):
        fit_drifting_constants({1: 1.0, 2: -1.0})


def test_fit_clamps_decreasing_budget():
    assert fit_drifting_constants({1: 4.0, 2: 2.0, 4: 1.0})[0] == 0.0


def test_budget_profile_monotone_in_interval():
    # a monotone drift: stretching the interaction interval never lowers the budget
    env = goal_reacher(wall_clock_horizon=2500)
    prof = budget_profile(sine_chain(speed=1, wall_clock_horizon=2000), [1, 2, 3], 10)
    assert all(v >= 0 for v in prof.b_r.values())
    ramp = budget_profile(env, [1, 5, 10, 20], 60)
    vals = [ramp.b_r[d] for d in sorted(ramp.b_r)]
    assert vals == sorted(vals)


def test_subsampling_never_increases_budget():
    # thinning a fixed wall-clock span can only shrink the summed variation
    env = sine_chain(speed=2, wall_clock_horizon=200)
    span = 120

    def budget(d):
        return variation_budget([snapshot_at(env, t) for t in range(0, span + 1, d)])[0]

    nested = [budget(d) for d in (1, 2, 4, 8)]
    assert all(a >= b - 1e-12 for a, b in zip(nested, nested[1:]))
    assert all(budget(d) <= nested[0] + 1e-12 for d in (3, 5, 6))


def test_budget_profile_csv_and_extrapolation():
    prof = BudgetProfile({1: 2.0, 2: 4.0}, {1: 0.0, 2: 0.0}, {1: 1.0, 2: 1.5}, 1.0, 0.0)
    assert prof.b_unit == (2.0, 0.0)
    assert prof.extrapolate(3) == (6.0, 0.0)
    assert prof.to_csv().splitlines()[0] == "delta_pi,b_r,b_p,scalar_budget"
