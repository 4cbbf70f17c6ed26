"""Dynamic regret, model prediction errors and the theoretical regret bounds."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .forecaster import ForecastedMdp, Trajectory
from .nonstat_env import BudgetProfile, EnvDefinition, MdpSnapshot, snapshot_at
from .planner import SOLVER_TOL, convergence_c2, finite_horizon_eval, optimal_values
from .tempo import HyperParams, TempoPlan, feasible_tempo_set, make_plan, tempo_conditions, tempo_numeric


class BoundError(ValueError):
    pass


# ------------------------------------------------------------ dynamic regret


@dataclass(frozen=True)
class LedgerRow:
    k: int
    t_k: float
    v_star: float
    v_pi: float
    gap: float
    cum_regret: float
    iota_kh_sum: float = math.nan
    iota_bar_inf: float = math.nan


LEDGER_HEADER = "k,t_k,v_star,v_pi,gap,cum_regret,iota_kh_sum,iota_bar_inf"


@dataclass(frozen=True)
class RegretLedger:
    rows: tuple
    rho: np.ndarray

    @property
    def cumulative(self) -> float:
        return self.rows[-1].cum_regret if self.rows else 0.0

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    def to_csv(self) -> str:
        lines = [LEDGER_HEADER]
        for r in self.rows:
            lines.append(",".join(repr(float(x)) if not isinstance(x, int) else str(x) for x in astuple_row(r)))
        return "\n".join(lines) + "\n"


def astuple_row(r: LedgerRow):
    return (r.k, r.t_k, r.v_star, r.v_pi, r.gap, r.cum_regret, r.iota_kh_sum, r.iota_bar_inf)


def initial_distribution(env: EnvDefinition, rho=None) -> np.ndarray:
    n = env.base.n_states
    if rho is None:
        out = np.zeros(n)
        out[env.initial_state] = 1.0
        return out
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (n,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-9:
        raise BoundError("rho must be a distribution over states")
    return rho


def episode_values(snap: MdpSnapshot, policy, rho: np.ndarray) -> tuple[float, float]:
    """(optimal H-step value, policy H-step value) at rho."""
    star, _ = optimal_values(snap, 0.0, kind="finite_horizon")
    v_pi = finite_horizon_eval(snap, policy).v
    return float(rho @ star.v), float(rho @ v_pi)


def dynamic_regret(
    env: EnvDefinition,
    executed_policies: Sequence,
    plan: TempoPlan | Sequence[float],
    rho=None,
    iota: Sequence[tuple[float, float]] | None = None,
) -> RegretLedger:
    """Per-episode optimality gaps on the true snapshots at the plan times."""
    times = plan.times if isinstance(plan, TempoPlan) else tuple(plan)
    if len(executed_policies) != len(times):
        raise BoundError(f"{len(executed_policies)} policies for {len(times)} interaction times")
    rho = initial_distribution(env, rho)
    rows, cum = [], 0.0
    for i, (t, pol) in enumerate(zip(times, executed_policies)):
        if pol is None:
            raise BoundError(f"missing policy for episode {i + 1}")
        v_star, v_pi = episode_values(snapshot_at(env, t), pol, rho)
        gap = v_star - v_pi
        cum += gap
        extra = iota[i] if iota is not None else (math.nan, math.nan)
        rows.append(LedgerRow(i + 1, float(t), v_star, v_pi, gap, cum, *extra))
    return RegretLedger(tuple(rows), rho)


# --------------------------------------------------- model prediction errors


@dataclass(frozen=True, eq=False)
class PredictionErrorEntry:
    iota_h: np.ndarray  # residual at the realized (s_h, a_h), length H
    iota_table: np.ndarray  # full (H, S, A) residual tables
    iota_bar_inf: float

    @property
    def iota_sum(self) -> float:
        return float(self.iota_h.sum())


@dataclass(frozen=True)
class PredictionErrorRecord:
    entries: tuple

    @property
    def iota_kh(self) -> float:
        return float(sum(e.iota_sum for e in self.entries))

    @property
    def iota_bar(self) -> float:
        return float(sum(e.iota_bar_inf for e in self.entries))


def _model_snapshot(fmdp, true_next: MdpSnapshot) -> MdpSnapshot:
    if isinstance(fmdp, MdpSnapshot):
        return fmdp
    return fmdp.as_snapshot(true_next.horizon, true_next.gamma)


def model_prediction_error(true_next: MdpSnapshot, fmdp, pi_hat, traj: Trajectory) -> PredictionErrorEntry:
    """Bellman residual of the model's values plugged into the true next MDP.

    iota_h = R + gamma P V_model_{h+1} - Q_model_h with finite-horizon values of
    pi_hat; the infinite-horizon variant uses the model's hard optimal values.
    """
    model = _model_snapshot(fmdp, true_next)
    if model.transition.shape != true_next.transition.shape:
        raise BoundError("model and true MDP shapes differ")
    if traj.horizon != true_next.horizon:
        raise BoundError("trajectory length differs from the horizon")
    g = true_next.gamma
    ev = finite_horizon_eval(model, pi_hat)
    table = true_next.reward[None] + g * np.einsum("sat,ht->hsa", true_next.transition, ev.v_steps[1:]) - ev.q_steps
    steps = np.arange(true_next.horizon)
    iota_h = table[steps, traj.states[:-1], traj.actions]
    star, _ = optimal_values(model, 0.0, tol=SOLVER_TOL, kind="infinite_discounted")
    bar = true_next.reward + g * true_next.transition @ star.v - star.q
    return PredictionErrorEntry(iota_h=iota_h, iota_table=table, iota_bar_inf=float(np.max(np.abs(bar))))


def corollary_rhs(true_next: MdpSnapshot, fmdp: ForecastedMdp) -> np.ndarray:
    """Pointwise ceiling on -iota_h for every (h, s, a).

    Reward error + 2 bonus + gamma * transition error * |V_model_{h+1}| ceiling,
    the latter r_hat_max (1 - gamma^(H-h)) / (1 - gamma).
    """
    g, h_n = true_next.gamma, true_next.horizon
    d_r = float(np.max(np.abs(true_next.reward - fmdp.r_tilde)))
    d_p = float(np.max(np.abs(true_next.transition - fmdp.p_hat).sum(axis=2)))
    r_hat_max = float(np.max(np.abs(fmdp.r_hat)))
    h = np.arange(h_n)[:, None, None]
    v_cap = r_hat_max * (1.0 - g ** (h_n - h)) / (1.0 - g)
    return d_r + 2.0 * fmdp.bonus[None] + g * d_p * v_cap


def corollary_violations(true_next: MdpSnapshot, fmdp: ForecastedMdp, entry: PredictionErrorEntry, slack: float = 1e-9) -> int:
    return int(np.sum(-entry.iota_table > corollary_rhs(true_next, fmdp) + slack))


def lemma1_rhs(local_budget: float, fmdp: ForecastedMdp, r_max: float) -> np.ndarray:
    """Ceiling on |R_next - R_tilde|: local reward budget + lambda Lambda r_max."""
    return local_budget + fmdp.lam * fmdp.lambda_mat * r_max


def lemma1_violations(true_next: MdpSnapshot, fmdp: ForecastedMdp, local_budget: float, r_max: float, slack: float = 1e-9) -> int:
    err = np.abs(true_next.reward - fmdp.r_tilde)
    return int(np.sum(err > lemma1_rhs(local_budget, fmdp, r_max) + slack))


def lemma3_rhs(n_episodes: int, horizon: int, window: int, lam: float) -> float:
    """(K - 1) sqrt(H / w) sqrt(log((lambda + w H) / lambda))."""
    return (n_episodes - 1) * math.sqrt(horizon / window) * math.sqrt(math.log((lam + window * horizon) / lam))


def lemma3_lhs(lambda_mats: Sequence[np.ndarray], trajectories: Sequence[Trajectory]) -> float:
    """Sum over episodes of sqrt(Lambda^(k)) along the trajectory of episode k + 1."""
    total = 0.0
    for lam_mat, traj in zip(lambda_mats, trajectories):
        total += float(np.sqrt(lam_mat[traj.states[:-1], traj.actions]).sum())
    return total


# -------------------------------------------------------------- bound report


@dataclass(frozen=True)
class BoundReport:
    c_p: float
    c1: float
    c2: float
    c_alg: float
    c_alg_tau: float
    c_I_of_B: float
    c_k: float
    r_I_max: float
    r_II_max: float
    total_bound: float
    p: float
    delta_pi: int
    n_episodes: int
    window: int
    curve_delta: tuple = ()
    curve_r_I: tuple = ()
    curve_r_II: tuple = ()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def confidence_constant(hp: HyperParams) -> float:
    r = max(hp.r_max, hp.r_hat_max)
    return 4.0 * r / (1.0 - hp.gamma) * math.sqrt(hp.horizon * math.log(4.0 / hp.p))


def truncation_term(hp: HyperParams) -> float:
    return 4.0 * hp.gamma**hp.horizon * max(hp.r_max, hp.r_hat_max) / (1.0 - hp.gamma)


def c_alg(hp: HyperParams, delta_pi: float) -> float:
    """Per-episode optimization error of unregularized NPG after delta_pi iterations."""
    return (1.0 / (1.0 - hp.gamma) ** 2 + math.log(hp.n_actions) / hp.eta) / delta_pi + truncation_term(hp)


def c_alg_tau(hp: HyperParams, delta_pi: float, c1: float) -> float:
    """Per-episode optimization error of entropy-regularized NPG."""
    c2 = convergence_c2(hp.delta, hp.eta, hp.tau, hp.gamma)
    g = hp.gamma
    geo = (g + 2.0) * (hp.contraction ** (delta_pi - 1.0) * c1 + c2)
    return geo + truncation_term(hp) + 2.0 * hp.tau * math.log(hp.n_actions) / (1.0 - g)


def drift_constant(hp: HyperParams, b_r: float, b_p: float) -> float:
    """Coefficient of the window length: (1/(1-g) + H) B_r + (1 + H r_hat) g/(1-g) B_p."""
    g, h = hp.gamma, hp.horizon
    return (1.0 / (1.0 - g) + h) * b_r + (1.0 + h * hp.r_hat_max) * g / (1.0 - g) * b_p


def estimation_constant(hp: HyperParams, n_episodes: int) -> float:
    g, h = hp.gamma, hp.horizon
    log_term = max(math.log(h / (hp.conf_delta * hp.lam)), 0.0)
    spread = hp.n_states * math.sqrt(h**2 / 2.0 * log_term) + hp.lam
    per = hp.lam * hp.r_max + 2.0 * hp.beta + g * hp.r_hat_max / (1.0 - g) * spread
    return (n_episodes - 1) * math.sqrt(h) * per


def forecaster_bound(hp: HyperParams, b_r: float, b_p: float, n_episodes: int, window: int) -> float:
    """Forecaster-side regret ceiling: drift x window + estimation + concentration."""
    c_i = drift_constant(hp, b_r, b_p)
    c_k = estimation_constant(hp, n_episodes)
    w = window
    est = c_k * math.sqrt(math.log(1.0 + hp.horizon * w / hp.lam) / w)
    return c_i * w + est + confidence_constant(hp) * math.sqrt(max(n_episodes - 1, 0))


def optimizer_bound(hp: HyperParams, delta_pi: float, n_episodes: int, c1: float, entropy: bool = True) -> float:
    per = c_alg_tau(hp, delta_pi, c1) if entropy else c_alg(hp, delta_pi)
    return per * (n_episodes - 1)


def _budget_at(budget, delta_pi: float) -> tuple[float, float]:
    if isinstance(budget, BudgetProfile):
        if delta_pi in budget.b_r:
            return budget.b_r[delta_pi], budget.b_p[delta_pi]
        return budget.extrapolate(delta_pi)
    b_r, b_p = budget
    return float(b_r), float(b_p)


def regret_bound(
    hp: HyperParams,
    budget,
    n_episodes: int,
    delta_pi: int,
    window: int,
    c1: float | None = None,
    entropy: bool = True,
    curve: Sequence[int] | None = None,
) -> BoundReport:
    """All constants of the two-part regret ceiling.

    ``budget`` is a BudgetProfile (measured value at delta_pi if present,
    otherwise the drifting-constant extrapolation) or a (B_r, B_p) pair used
    as is. Curves are evaluated at fixed episode count and window.
    """
    if n_episodes < 1 or delta_pi < 1 or window < 1:
        raise BoundError("episode count, tempo and window must be >= 1")
    if entropy and hp.tau <= 0:
        raise BoundError("entropy-regularized bound needs tau > 0")
    c1 = hp.worst_case_c1() if c1 is None else c1
    b_r, b_p = _budget_at(budget, delta_pi)
    r_i = forecaster_bound(hp, b_r, b_p, n_episodes, window)
    r_ii = optimizer_bound(hp, delta_pi, n_episodes, c1, entropy)
    cd, ci, cii = (), (), ()
    if curve is not None:
        cd = tuple(int(d) for d in curve)
        ci, cii = [], []
        for d in cd:
            br, bp = _budget_at(budget, d) if isinstance(budget, BudgetProfile) else (b_r, b_p)
            ci.append(forecaster_bound(hp, br, bp, n_episodes, window))
            cii.append(optimizer_bound(hp, d, n_episodes, c1, entropy))
        ci, cii = tuple(ci), tuple(cii)
    return BoundReport(
        c_p=confidence_constant(hp),
        c1=c1,
        c2=convergence_c2(hp.delta, hp.eta, hp.tau, hp.gamma) if hp.tau > 0 else 0.0,
        c_alg=c_alg(hp, delta_pi),
        c_alg_tau=c_alg_tau(hp, delta_pi, c1) if hp.tau > 0 else math.nan,
        c_I_of_B=drift_constant(hp, b_r, b_p),
        c_k=estimation_constant(hp, n_episodes),
        r_I_max=r_i,
        r_II_max=r_ii,
        total_bound=r_i + r_ii,
        p=hp.p,
        delta_pi=int(delta_pi),
        n_episodes=int(n_episodes),
        window=int(window),
        curve_delta=cd,
        curve_r_I=ci,
        curve_r_II=cii,
    )


# -------------------------------------------------------------- conditions


@dataclass(frozen=True)
class ConditionReport:
    conditions: tuple
    n_min: int
    n_max: int
    sample_count: float
    budget_ratio: float = math.nan

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.conditions)

    def failing(self) -> list[str]:
        return [c.name for c in self.conditions if not c.holds]


def sample_count(gamma: float, delta: float) -> float:
    """Order of rollouts per (s, a) needed for a delta-accurate soft Q estimate."""
    return math.inf if delta == 0 else 1.0 / ((1.0 - gamma) ** 3 * delta**2)


def check_conditions(hp: HyperParams, eps: float, n_episodes: int, budget: BudgetProfile | None = None, c1: float | None = None) -> ConditionReport:
    if eps <= 0:
        raise BoundError("epsilon must be > 0")
    conds = tempo_conditions(hp, eps)
    n_min, n_max = 1, n_episodes - 1
    if hp.tau > 0:
        sets = feasible_tempo_set(hp, eps, n_episodes, c1)
        n_min = sets.n_min
    ratio = math.nan
    if budget is not None:
        br, bp = budget.b_unit
        ratio = (br + hp.r_hat_max / (1.0 - hp.gamma) * bp) / n_episodes
    return ConditionReport(conds, n_min, n_max, sample_count(hp.gamma, hp.delta), ratio)


# ---------------------------------------------------------- plan from bound


def plan_tempo(
    hp: HyperParams,
    budget,
    n_episodes: int,
    window: int,
    eps: float | None = None,
    candidates: Sequence[int] | None = None,
    t1: float | None = None,
    c1: float | None = None,
) -> TempoPlan:
    """Pick the tempo minimizing the total bound over the feasible candidates."""
    eps = hp.epsilon if eps is None else eps
    sets = feasible_tempo_set(hp, eps, n_episodes, c1)
    cands = sets.candidates() if candidates is None else [c for c in candidates if sets.n_min <= c <= sets.n_max]
    notes = []
    if not cands:
        notes.append("feasible tempo set empty; minimizing over the requested candidates")
        cands = list(candidates) if candidates is not None else list(range(1, max(n_episodes, 2)))
    c1v = sets.c1

    def bound(d):
        return regret_bound(hp, budget, n_episodes, d, window, c1v).total_bound

    best = tempo_numeric(bound, cands)
    return make_plan(hp.total_time, best, t1, case_id="numeric", bound_at_star=bound(best), notes=tuple(notes))
