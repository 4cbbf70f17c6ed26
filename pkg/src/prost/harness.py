"""Run orchestration: the forecast-then-optimize loop, baselines, sweeps, exports."""

from __future__ import annotations

import concurrent.futures as cf
import copy
import csv
import hashlib
import io
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import forecaster as fc
from .nonstat_env import (
    BudgetProfile,
    EnvDefinition,
    ReacherConfig,
    budget_profile,
    file_chain,
    goal_reacher,
    local_reward_budget,
    sine_chain,
    snapshot_at,
    variation_budget,
)
from .planner import (
    DeterministicPolicy,
    EvalNoise,
    SoftmaxPolicy,
    optimal_values,
    optimize_future_policy,
    policy_probs,
)
from .regret_bounds import (
    LEDGER_HEADER,
    corollary_violations,
    dynamic_regret,
    estimation_constant,
    drift_constant,
    lemma1_violations,
    lemma3_rhs,
    model_prediction_error,
    plan_tempo,
    regret_bound,
)
from .tempo import HyperParams, TempoPlan, make_plan

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LAST_N = 10


class ConfigError(ValueError):
    pass


class RunError(RuntimeError):
    pass


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "sine_chain"  # sine_chain | file_chain | goal_reacher
    speed: int = 1
    n_states: int = 4
    slip: float = 0.1
    back_reward: float = 0.1
    transition_mix: float = 0.0
    drift_file: str | None = None
    wall_clock_horizon: float = 300.0
    reacher_period: float = 2500.0
    reacher_p_slip: float = 0.1


@dataclass(frozen=True)
class PlanConfig:
    source: str = "fixed"  # fixed | tempo_optimizer
    delta_pi: int = 1
    t1: float | None = None  # defaults to delta_pi
    n_episodes: int | None = None  # cap on interactions; None keeps the whole plan
    candidates: tuple = (1, 2, 3, 4, 5)
    pilot_episodes: int = 30


@dataclass(frozen=True)
class ForecasterConfig:
    kind: str = "sw_lse"  # sw_lse | w_lse | scalar_f_plus_structural_g
    window: int | None = 5  # None: adaptive window from the bound constants
    scalar_kind: str = "ar_ls"
    scalar_window: int = 5
    scalar_order: int = 1
    scalar_diff: int = 0
    c_disc: float = 1.0
    q_ridge: float = 0.05
    warmup: int | None = None  # uniform-policy episodes; default: the window (or 1)
    cold_start: bool = False
    renormalize_for_rollout: bool = False


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    hp: HyperParams = field(default_factory=HyperParams)
    plan: PlanConfig = field(default_factory=PlanConfig)
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    noise: EvalNoise = field(default_factory=EvalNoise)
    drift_noise: float = 0.0
    seed: int = 0
    output_dir: str = "runs"
    q_step: float = 0.5  # Q-learning step size of the fine-tune baseline
    check_lemmas: bool = True
    label: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plan"]["candidates"] = list(self.plan.candidates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(d or {})
        sub = {"env": EnvConfig, "hp": HyperParams, "plan": PlanConfig, "forecaster": ForecasterConfig, "noise": EvalNoise}
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, val in d.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key in sub:
                kwargs[key] = _build(sub[key], val, key)
            else:
                kwargs[key] = val
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def with_overrides(self, overrides: dict) -> "RunConfig":
        d = self.to_dict()
        for dotted, val in overrides.items():
            node = d
            parts = dotted.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config path {dotted!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config path {dotted!r}")
            node[parts[-1]] = val
        return RunConfig.from_dict(d)


def _build(klass, val, key):
    if isinstance(val, klass):
        return val
    if not isinstance(val, dict):
        raise ConfigError(f"section {key!r} must be a mapping")
    names = {f.name for f in fields(klass)}
    bad = set(val) - names
    if bad:
        raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
    if klass is PlanConfig and "candidates" in val:
        val = dict(val, candidates=tuple(val["candidates"]))
    try:
        return klass(**val)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: {e}") from e


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return RunConfig.from_dict(data or {})


def dump_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    d = cfg.to_dict()
    path.write_text(json.dumps(d, indent=2, sort_keys=True) if path.suffix == ".json" else yaml.safe_dump(d, sort_keys=True))


# ------------------------------------------------------------- env + plan


def build_env(cfg: RunConfig) -> EnvDefinition:
    e, hp = cfg.env, cfg.hp
    if e.kind == "sine_chain":
        return sine_chain(
            speed=e.speed,
            n_states=e.n_states,
            horizon=hp.horizon,
            gamma=hp.gamma,
            slip=e.slip,
            back_reward=e.back_reward,
            wall_clock_horizon=e.wall_clock_horizon,
            transition_mix=e.transition_mix,
        )
    if e.kind == "file_chain":
        if not e.drift_file:
            raise ConfigError("file_chain needs env.drift_file")
        return file_chain(
            e.drift_file,
            n_states=e.n_states,
            horizon=hp.horizon,
            gamma=hp.gamma,
            slip=e.slip,
            back_reward=e.back_reward,
            transition_mix=e.transition_mix,
        )
    if e.kind == "goal_reacher":
        rc = ReacherConfig(horizon=hp.horizon, gamma=hp.gamma, period=e.reacher_period, p_slip=e.reacher_p_slip)
        return goal_reacher(rc, wall_clock_horizon=e.wall_clock_horizon)
    raise ConfigError(f"unknown env kind {e.kind!r}")


def sync_hp(cfg: RunConfig, env: EnvDefinition) -> HyperParams:
    """Table sizes and reward scale follow the environment."""
    return cfg.hp.replace(n_states=env.base.n_states, n_actions=env.base.n_actions, r_max=env.r_max)


def validate(cfg: RunConfig) -> tuple[EnvDefinition, HyperParams]:
    f = cfg.forecaster
    if f.kind not in ("sw_lse", "w_lse", "scalar_f_plus_structural_g"):
        raise ConfigError(f"unknown forecaster kind {f.kind!r}")
    if cfg.plan.source not in ("fixed", "tempo_optimizer"):
        raise ConfigError(f"unknown plan source {cfg.plan.source!r}")
    if cfg.drift_noise < 0:
        raise ConfigError("drift noise bound must be >= 0")
    if f.window is not None and f.window < 1:
        raise ConfigError("window must be >= 1")
    try:
        fc.ScalarForecaster(f.scalar_kind, f.scalar_window, f.scalar_order, f.scalar_diff)
        fc.DiscConfig(f.c_disc, f.q_ridge)
        env = build_env(cfg)
        hp = sync_hp(cfg, env)
    except (ValueError, OSError) as e:
        raise ConfigError(str(e)) from e
    return env, hp


def analytic_profile(env: EnvDefinition, candidates, n_episodes: int) -> BudgetProfile:
    n = min(n_episodes, int(env.wall_clock_horizon // max(candidates)))
    if n < 2:
        raise ConfigError("wall-clock horizon too short for the budget pilot")
    return budget_profile(env, sorted(candidates), n)


def build_plan(cfg: RunConfig, env: EnvDefinition, hp: HyperParams) -> TempoPlan:
    p = cfg.plan
    T = env.wall_clock_horizon
    if p.source == "fixed":
        plan = make_plan(T, p.delta_pi, p.t1)
    else:
        profile = analytic_profile(env, p.candidates, p.pilot_episodes)
        k = p.n_episodes or p.pilot_episodes
        w = cfg.forecaster.window or k
        plan = plan_tempo(hp.replace(total_time=T), profile, k, w, candidates=p.candidates, t1=p.t1)
    if p.n_episodes is not None and p.n_episodes < plan.n_interactions:
        plan = TempoPlan(
            plan.delta_pi_star, plan.k_star, plan.times[: p.n_episodes], plan.case_id,
            plan.k_env, plan.k_agent, plan.bound_at_star, plan.notes,
        )
    return plan


# ------------------------------------------------------------ run records


@dataclass
class EpisodeRecord:
    k: int
    t_k: float
    policy: list  # executed action probabilities
    policy_digest: str
    states: list
    actions: list
    rewards: list
    observation: float
    window: int
    scored: bool
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    config: dict
    agent: str
    plan: dict
    episodes: list
    ledger: list  # rows of LEDGER_HEADER
    aggregates: dict
    events: list
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["episodes"] = [EpisodeRecord(**e) for e in d["episodes"]]
        return cls(**d)

    @property
    def seed(self) -> int:
        return self.config["seed"]

    def ledger_csv(self) -> str:
        buf = io.StringIO()
        buf.write(LEDGER_HEADER + "\n")
        for row in self.ledger:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        return buf.getvalue()

    def diagnostics_csv(self) -> str:
        lines = ["k,w,max_reward_error,max_p_row_l1_error,mean_bonus"]
        for e in self.episodes:
            dg = e.diagnostics
            if "max_reward_error" in dg:
                lines.append(",".join([str(e.k), str(e.window)] + [_fmt(dg[c]) for c in ("max_reward_error", "max_p_row_l1_error", "mean_bonus")]))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _digest(probs: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(probs, dtype=np.float64).tobytes()).hexdigest()[:16]


# ----------------------------------------------------------------- rollout


def sample_trajectory(snap, policy, s0: int, rng: np.random.Generator) -> fc.Trajectory:
    """Roll out H steps; rewards are the expected rewards R(s, a)."""
    probs = policy_probs(policy)
    h_n = snap.horizon
    states = np.empty(h_n + 1, dtype=np.int64)
    actions = np.empty(h_n, dtype=np.int64)
    rewards = np.empty(h_n)
    states[0] = s0
    cum_p = np.cumsum(snap.transition, axis=2)
    for h in range(h_n):
        s = states[h]
        row = probs[h, s] if probs.ndim == 3 else probs[s]
        a = min(int(np.searchsorted(np.cumsum(row), rng.random() * row.sum(), side="right")), row.size - 1)
        actions[h] = a
        rewards[h] = snap.reward[s, a]
        c = cum_p[s, a]
        states[h + 1] = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), snap.n_states - 1)
    return fc.Trajectory(states, actions, rewards)


# --------------------------------------------------------------- the loop


class _Agent:
    """Forecast-and-plan logic; baselines override pieces of it."""

    name = "prost_t"

    def __init__(self, cfg: RunConfig, env: EnvDefinition, hp: HyperParams, plan: TempoPlan):
        self.cfg, self.env, self.hp, self.plan = cfg, env, hp, plan
        f = cfg.forecaster
        self.scalar = fc.ScalarForecaster(f.scalar_kind, f.scalar_window, f.scalar_order, f.scalar_diff)
        self.disc = fc.DiscConfig(f.c_disc, f.q_ridge)
        self.fixed_window = f.window
        if f.window is None:
            self.fixed_window = None
            self._adaptive = self._adaptive_window()

    def _adaptive_window(self) -> dict:
        n = len(self.plan.times)
        snaps = [snapshot_at(self.env, t) for t in self.plan.times]
        b_r, b_p = variation_budget(snaps) if n > 1 else (0.0, 0.0)
        c_k = estimation_constant(self.hp, max(n, 2))
        return {"c_k": c_k, "b": drift_constant(self.hp, b_r, b_p)}

    def window(self, k: int) -> int:
        if self.fixed_window is not None:
            return min(self.fixed_window, k)
        return fc.select_window(self._adaptive["c_k"], self._adaptive["b"], k)

    def forecast(self, stats: fc.VisitStats, k: int, observations: list):
        """Model of the next MDP after episode k; returns (ForecastedMdp, window)."""
        f = self.cfg.forecaster
        hp = self.hp
        if f.kind == "scalar_f_plus_structural_g":
            o_hat = self.predict_drift(observations)
            snap = fc.structural_g(self.env, o_hat)
            return fc.forecast_from_snapshot(snap), 0
        w = self.window(k)
        if f.kind == "w_lse":
            sol = fc.w_lse_forecast(stats, k, hp.lam, self.disc, window=w)
            return sol.as_forecast(hp.lam, hp.beta, w), w
        return fc.forecast_sw_lse(stats, k, w, hp.lam, hp.beta), w

    def predict_drift(self, observations: list) -> float:
        if len(observations) >= self.scalar.window:
            return fc.scalar_forecast(self.scalar, observations)
        return float(observations[-1])

    def next_policy(self, fmdp, pi_k: SoftmaxPolicy, rng, k: int):
        hp = self.hp
        model = fmdp.as_snapshot(hp.horizon, hp.gamma)
        start = SoftmaxPolicy.uniform(hp.n_states, hp.n_actions) if self.cfg.forecaster.cold_start else pi_k
        res = optimize_future_policy(
            model, start, self.plan.delta_pi_star, eta=hp.eta, tau=hp.tau, noise=self.cfg.noise, rng=rng, track=False
        )
        return res.policy

    def observe_return(self, traj: fc.Trajectory):
        pass


class _Reactive(_Agent):
    name = "reactive_model"

    def window(self, k: int) -> int:
        return 1

    def predict_drift(self, observations: list) -> float:
        return float(observations[-1])


class _FullHistory(_Agent):
    name = "full_history"

    def window(self, k: int) -> int:
        return k


class _OracleFuture(_Agent):
    name = "oracle_future"

    def forecast(self, stats, k, observations):
        return None, 0

    def next_policy(self, fmdp, pi_k, rng, k):
        true_next = snapshot_at(self.env, self.plan.times[k])
        _, pol = optimal_values(true_next, 0.0, kind="finite_horizon")
        return pol


class _QFinetune(_Agent):
    name = "online_q_finetune"

    def __init__(self, *a):
        super().__init__(*a)
        self.q = np.zeros((self.hp.n_states, self.hp.n_actions))

    def forecast(self, stats, k, observations):
        return None, 0

    def observe_return(self, traj):
        g, lr = self.hp.gamma, self.cfg.q_step
        for h in range(traj.horizon):
            s, a, r, s2 = traj.states[h], traj.actions[h], traj.rewards[h], traj.states[h + 1]
            target = r + (g * self.q[s2].max() if h + 1 < traj.horizon else 0.0)
            self.q[s, a] += lr * (target - self.q[s, a])

    def next_policy(self, fmdp, pi_k, rng, k):
        if self.hp.tau > 0:
            return SoftmaxPolicy(self.q / self.hp.tau)
        return DeterministicPolicy(np.argmax(self.q, axis=1), self.hp.n_actions)


AGENTS = {
    "prost_t": _Agent,
    "reactive_model": _Reactive,
    "full_history": _FullHistory,
    "oracle_future": _OracleFuture,
    "online_q_finetune": _QFinetune,
}


def _execute(cfg: RunConfig, agent_kind: str) -> RunRecord:
    env, hp = validate(cfg)
    try:
        plan = build_plan(cfg, env, hp)
    except ValueError as e:
        raise ConfigError(f"cannot build plan: {e}") from e
    agent = AGENTS[agent_kind](cfg, env, hp, plan)
    rng = np.random.default_rng(cfg.seed)
    times = plan.times
    n = len(times)
    f = cfg.forecaster
    warmup = f.warmup if f.warmup is not None else (f.window if f.window is not None else 1)
    warmup = min(max(warmup, 0), n)
    if agent_kind == "oracle_future":
        warmup = 0
    stats = fc.VisitStats(hp.n_states, hp.n_actions, hp.horizon)
    snaps = [snapshot_at(env, t) for t in times]
    pi = SoftmaxPolicy.uniform(hp.n_states, hp.n_actions)
    if agent_kind == "oracle_future":
        _, pi = optimal_values(snaps[0], 0.0, kind="finite_horizon")
    observations: list[float] = []
    episodes, policies, events = [], [], []
    iota_rows: list[tuple[float, float]] = []
    pending = None  # (fmdp, window) forecast for the episode about to run
    lemma1 = corollary = 0
    lemma3_lhs = 0.0
    windows_used = []
    try:
        for i, t in enumerate(times):
            k = i + 1
            snap = snaps[i]
            executed = pi if k > warmup else SoftmaxPolicy.uniform(hp.n_states, hp.n_actions)
            traj = sample_trajectory(snap, executed, env.initial_state, rng)
            events.append(("execute", k))
            probs = policy_probs(executed)
            policies.append(executed)
            # prediction error of the model that produced this episode's policy
            iota = (math.nan, math.nan)
            if pending is not None and pending[0] is not None:
                fm_prev = pending[0]
                entry = model_prediction_error(snap, fm_prev, executed, traj)
                iota = (entry.iota_sum, entry.iota_bar_inf)
                if cfg.check_lemmas and agent_kind != "oracle_future":
                    corollary += corollary_violations(snap, fm_prev, entry)
                    if f.kind != "scalar_f_plus_structural_g":
                        lemma3_lhs += float(np.sqrt(fm_prev.lambda_mat[traj.states[:-1], traj.actions]).sum())
            iota_rows.append(iota)
            stats.record_trajectory(traj)
            agent.observe_return(traj)
            o_hat = env.drift_at(t)
            if cfg.drift_noise > 0:
                o_hat += rng.uniform(-cfg.drift_noise, cfg.drift_noise)
            observations.append(float(o_hat))
            events.append(("observe", k))
            events.append(("update", k))
            diag: dict[str, Any] = {}
            w_used = 0
            if k < n:
                fmdp, w_used = agent.forecast(stats, k, observations)
                events.append(("forecast", k + 1))
                true_next = snaps[i + 1]
                if fmdp is not None:
                    d = fc.forecast_diagnostics(true_next, fmdp)
                    diag = asdict(d)
                    if cfg.check_lemmas and f.kind != "scalar_f_plus_structural_g":
                        lo = max(1, k - w_used + 1)
                        local = local_reward_budget(snaps, lo - 1, k)
                        viol = lemma1_violations(true_next, fmdp, local, env.r_max)
                        diag["lemma1_violations"] = viol
                        lemma1 += viol
                pi = agent.next_policy(fmdp, executed if isinstance(executed, SoftmaxPolicy) else pi, rng, k)
                events.append(("optimize", k + 1))
                pending = (fmdp, w_used)
                windows_used.append(w_used)
            episodes.append(
                EpisodeRecord(
                    k=k,
                    t_k=float(t),
                    policy=np.asarray(probs).tolist(),
                    policy_digest=_digest(probs),
                    states=traj.states.tolist(),
                    actions=traj.actions.tolist(),
                    rewards=traj.rewards.tolist(),
                    observation=float(o_hat),
                    window=int(w_used),
                    scored=k > warmup,
                    diagnostics=diag,
                )
            )
    except (ValueError, RuntimeError) as e:
        raise RunError(f"episode {len(episodes) + 1}: {e}") from e

    ledger = dynamic_regret(env, policies, times, iota=iota_rows)
    rows, cum = [], 0.0
    for r, ep in zip(ledger.rows, episodes):
        if not ep.scored:
            continue
        cum += r.gap
        rows.append([r.k, r.t_k, r.v_star, r.v_pi, r.gap, cum, r.iota_kh_sum, r.iota_bar_inf])
    b_r, b_p = variation_budget(snaps) if n > 1 else (0.0, 0.0)
    scored = [ep for ep in episodes if ep.scored]
    last = rows[-LAST_N:]
    lemma_w = cfg.forecaster.window
    aggregates = {
        "n_episodes": n,
        "warmup": warmup,
        "cum_regret": cum,
        "mean_v_pi_last": float(np.mean([r[3] for r in last])) if last else math.nan,
        "mean_gap_last": float(np.mean([r[4] for r in last])) if last else math.nan,
        "mean_return_last": float(np.mean([sum(ep.rewards) for ep in scored[-LAST_N:]])) if scored else math.nan,
        "measured_b_r": b_r,
        "measured_b_p": b_p,
        "lemma1_violations": lemma1,
        "corollary_violations": corollary,
        "lemma3_lhs": lemma3_lhs,
        "lemma3_rhs": lemma3_rhs(n, hp.horizon, lemma_w, hp.lam) if lemma_w else math.nan,
        "iota_kh": float(np.nansum([r[6] for r in rows])),
        "iota_bar": float(np.nansum([r[7] for r in rows])),
        "hp": hp.to_dict(),
    }
    return RunRecord(
        config=cfg.to_dict(),
        agent=agent_kind,
        plan=plan.to_dict(),
        episodes=episodes,
        ledger=rows,
        aggregates=aggregates,
        events=[list(e) for e in events],
    )


def run_prost_t(config: RunConfig) -> RunRecord:
    return _execute(config, "prost_t")


def run_baseline(config: RunConfig, kind: str) -> RunRecord:
    if kind not in AGENTS or kind == "prost_t":
        raise ConfigError(f"unknown baseline {kind!r}")
    return _execute(config, kind)


def record_bound(record: RunRecord):
    """Regret ceiling for a finished run from its stored measurements only."""
    agg = record.aggregates
    hp = HyperParams(**agg["hp"])
    n_scored = len(record.ledger)
    w = record.config["forecaster"]["window"] or max(n_scored, 1)
    return regret_bound(hp, (agg["measured_b_r"], agg["measured_b_p"]), max(n_scored, 1), record.plan["delta_pi_star"], w)


# ------------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    records: list
    failures: list  # (cell index, overrides, message)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def sweep_cells(base: RunConfig, grid: dict, n_seeds: int = 1) -> list[tuple[int, dict]]:
    """(cell index, overrides) per cell; the seed override is base seed XOR index."""
    if not grid:
        raise ConfigError("empty sweep grid")
    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    if not combos:
        raise ConfigError("empty sweep grid")
    cells = []
    for combo in combos:
        over = dict(zip(keys, combo))
        for _ in range(n_seeds):
            idx = len(cells)
            cells.append((idx, dict(over, seed=base.seed ^ idx)))
    return cells


def _run_cell(args):
    idx, over, base, agent = args
    try:
        rec = _execute(base.with_overrides(over), agent)
        return idx, over, rec, None
    except (ConfigError, RunError, ValueError, RuntimeError) as e:
        return idx, over, None, str(e)


def sweep(base: RunConfig, grid: dict, n_seeds: int = 1, agent: str = "prost_t", workers: int = 1) -> SweepResult:
    """One record per grid cell (times n_seeds); cell seed = base seed XOR cell index."""
    cells = sweep_cells(base, grid, n_seeds)
    jobs = [(i, o, base, agent) for i, o in cells]
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    records, failures = [], []
    for idx, over, rec, err in sorted(results, key=lambda r: r[0]):
        if err is None:
            records.append(rec)
        else:
            log.error("sweep cell %d failed: %s", idx, err)
            failures.append((idx, over, err))
    return SweepResult(records, failures)


# ------------------------------------------------------------------ export


def _record_name(rec: RunRecord) -> str:
    label = rec.config.get("label") or rec.agent
    return f"{label}_seed{rec.seed}"


def plotdata_rows(records: list, metric: str = "v_pi") -> list[tuple]:
    """(series, x, y, mean, lo, hi): per-episode metric pooled across seeds of a series."""
    col = {"v_pi": 3, "gap": 4, "cum_regret": 5}[metric]
    groups: dict[str, dict[int, list[float]]] = {}
    for rec in records:
        series = rec.config.get("label") or rec.agent
        for row in rec.ledger:
            groups.setdefault(series, {}).setdefault(int(row[0]), []).append(float(row[col]))
    out = []
    for series in sorted(groups):
        for x in sorted(groups[series]):
            ys = np.array(groups[series][x])
            mean = float(ys.mean())
            half = 1.96 * float(ys.std(ddof=1)) / math.sqrt(ys.size) if ys.size > 1 else 0.0
            out.append((series, x, mean, mean, mean - half, mean + half))
    return out


def export(records: list, fmt: str, out_dir) -> list[Path]:
    if not records:
        raise ValueError("nothing to export")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    if fmt == "csv":
        for rec in records:
            name = _record_name(rec)
            put(f"{name}_ledger.csv", rec.ledger_csv())
            put(f"{name}_manifest.json", json.dumps({"config": rec.config, "plan": rec.plan, "agent": rec.agent,
                                                     "aggregates": rec.aggregates, "schema_version": rec.schema_version},
                                                    indent=2, sort_keys=True))
    elif fmt == "json":
        for rec in records:
            put(f"{_record_name(rec)}_record.json", rec.to_json())
    elif fmt == "plotdata":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["series", "x", "y", "mean", "lo", "hi"])
        for series, x, y, mean, lo, hi in plotdata_rows(records):
            w.writerow([series, x, _fmt(y), _fmt(mean), _fmt(lo), _fmt(hi)])
        put("plotdata.csv", buf.getvalue())
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return written


def load_record(path) -> RunRecord:
    return RunRecord.from_dict(json.loads(Path(path).read_text()))
