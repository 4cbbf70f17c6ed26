"""Tabular policy machinery: soft evaluation, NPG updates, optimal values."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .nonstat_env import MdpSnapshot

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-10


class PlannerError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------- policies


def _log_normalize(theta: np.ndarray) -> np.ndarray:
    return theta - logsumexp(theta, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """pi(a|s) proportional to exp(logits[s, a]); logits are kept log-normalized."""

    logits: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.logits, dtype=np.float64)
        if theta.ndim != 2 or not np.all(np.isfinite(theta)):
            raise PlannerError("logits must be a finite |S| x |A| matrix")
        object.__setattr__(self, "logits", _log_normalize(theta))
        self.logits.setflags(write=False)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def from_probs(cls, probs: np.ndarray, floor: float = 1e-300) -> "SoftmaxPolicy":
        return cls(np.log(np.maximum(probs, floor)))

    @property
    def log_probs(self) -> np.ndarray:
        return self.logits

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logits)

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.logits, axis=-1)


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """One action per state, or per (step, state) for finite-horizon policies."""

    actions: np.ndarray
    n_actions: int

    @property
    def probs(self) -> np.ndarray:
        return np.eye(self.n_actions)[self.actions]

    def greedy_actions(self) -> np.ndarray:
        return self.actions


def policy_probs(pi) -> np.ndarray:
    if isinstance(pi, (SoftmaxPolicy, DeterministicPolicy)):
        return pi.probs
    p = np.asarray(pi, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise PlannerError("policy rows must be probability vectors")
    return p


def _xlogx(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def greedy(q: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest index."""
    return np.argmax(q, axis=-1)


# ------------------------------------------------------------ value tables


@dataclass(frozen=True, eq=False)
class ValueTable:
    q: np.ndarray
    v: np.ndarray
    kind: str  # "finite_horizon" or "infinite_discounted"
    tau: float = 0.0
    q_steps: np.ndarray | None = None  # (H, S, A)
    v_steps: np.ndarray | None = None  # (H + 1, S), last row zero
    residual: float = 0.0


@dataclass(frozen=True)
class EvalNoise:
    delta: float = 0.0
    mode: str = "none"  # none | bounded_uniform | monte_carlo
    samples: int = 0
    rollout_len: int | None = None

    def __post_init__(self):
        if self.delta < 0:
            raise PlannerError("noise delta must be >= 0")
        if self.mode not in ("none", "bounded_uniform", "monte_carlo"):
            raise PlannerError(f"unknown noise mode {self.mode!r}")
        if self.mode == "monte_carlo" and self.samples < 1:
            raise PlannerError("monte_carlo mode needs at least one sample")


def _check_tau(tau: float):
    if tau < 0:
        raise PlannerError("tau must be >= 0")


def _iteration_cap(gamma: float, tol: float, span: float, margin: int = 50) -> int:
    if span <= tol:
        return margin
    return int(math.ceil(math.log(tol * (1.0 - gamma) / span) / math.log(gamma))) + margin


def _policy_reward(mdp: MdpSnapshot, probs: np.ndarray, tau: float) -> np.ndarray:
    r = np.sum(probs * mdp.reward, axis=1)
    if tau > 0:
        r = r - tau * _xlogx(probs).sum(axis=1)
    return r


def soft_policy_eval(
    mdp: MdpSnapshot, pi, tau: float = 0.0, tol: float = SOLVER_TOL, method: str = "direct"
) -> ValueTable:
    """Infinite-horizon discounted (soft) values of a stationary policy.

    V = sum_a pi (Q - tau log pi), Q = R + gamma P V. The direct method solves
    the linear system; the iterative one applies the backup until the residual
    drops below tol.
    """
    _check_tau(tau)
    if tol <= 0:
        raise PlannerError("tol must be > 0")
    probs = policy_probs(pi)
    g = mdp.gamma
    p_pi = np.einsum("sa,sat->st", probs, mdp.transition)
    r_pi = _policy_reward(mdp, probs, tau)
    v = None
    if method == "direct":
        try:
            v = np.linalg.solve(np.eye(mdp.n_states) - g * p_pi, r_pi)
        except np.linalg.LinAlgError:
            log.warning("direct solve failed; falling back to iteration")
    if v is None or not np.all(np.isfinite(v)):
        v = np.zeros(mdp.n_states)
        span = float(np.max(np.abs(r_pi))) / (1.0 - g) + 1.0
        for _ in range(_iteration_cap(g, tol, span)):
            v_new = r_pi + g * p_pi @ v
            if np.max(np.abs(v_new - v)) <= tol * (1.0 - g):
                v = v_new
                break
            v = v_new
        else:
            raise ConvergenceError("soft policy evaluation hit its iteration cap")
    q = mdp.reward + g * mdp.transition @ v
    resid = float(np.max(np.abs(r_pi + g * p_pi @ v - v)))
    return ValueTable(q=q, v=v, kind="infinite_discounted", tau=tau, residual=resid)


def finite_horizon_eval(mdp: MdpSnapshot, pi, tau: float = 0.0) -> ValueTable:
    """Backward induction with V_H = 0; pi is stationary (S, A) or per step (H, S, A)."""
    _check_tau(tau)
    h_n, g = mdp.horizon, mdp.gamma
    probs = policy_probs(pi)
    if probs.ndim == 2:
        probs = np.broadcast_to(probs, (h_n,) + probs.shape)
    if probs.shape[0] != h_n:
        raise PlannerError("per-step policy length must equal the horizon")
    qs = np.zeros((h_n, mdp.n_states, mdp.n_actions))
    vs = np.zeros((h_n + 1, mdp.n_states))
    for h in range(h_n - 1, -1, -1):
        qs[h] = mdp.reward + g * mdp.transition @ vs[h + 1]
        vs[h] = np.sum(probs[h] * qs[h], axis=1)
        if tau > 0:
            vs[h] -= tau * _xlogx(probs[h]).sum(axis=1)
    return ValueTable(q=qs[0], v=vs[0], kind="finite_horizon", tau=tau, q_steps=qs, v_steps=vs)


def _soft_backup(mdp: MdpSnapshot, q: np.ndarray, tau: float) -> np.ndarray:
    v = tau * logsumexp(q / tau, axis=1) if tau > 0 else q.max(axis=1)
    return mdp.reward + mdp.gamma * mdp.transition @ v


def optimal_values(
    mdp: MdpSnapshot, tau: float = 0.0, tol: float = SOLVER_TOL, kind: str = "finite_horizon"
):
    """Optimal (soft when tau > 0) values and the matching policy.

    Hard policies are greedy with ties to the lowest action; soft policies
    are Boltzmann in Q / tau.
    """
    _check_tau(tau)
    if kind == "finite_horizon":
        h_n, g = mdp.horizon, mdp.gamma
        qs = np.zeros((h_n, mdp.n_states, mdp.n_actions))
        vs = np.zeros((h_n + 1, mdp.n_states))
        for h in range(h_n - 1, -1, -1):
            qs[h] = mdp.reward + g * mdp.transition @ vs[h + 1]
            vs[h] = tau * logsumexp(qs[h] / tau, axis=1) if tau > 0 else qs[h].max(axis=1)
        table = ValueTable(q=qs[0], v=vs[0], kind=kind, tau=tau, q_steps=qs, v_steps=vs)
        if tau > 0:
            policy = np.exp(qs / tau - logsumexp(qs / tau, axis=2, keepdims=True))
        else:
            policy = DeterministicPolicy(greedy(qs), mdp.n_actions)
        return table, policy
    if kind != "infinite_discounted":
        raise PlannerError(f"unknown value kind {kind!r}")
    return _infinite_optimal(mdp, tau, tol)


def _infinite_optimal(mdp: MdpSnapshot, tau: float, tol: float, max_iter: int = 1000):
    """Policy iteration (soft when tau > 0), stopped on the optimality residual."""
    if tau > 0:
        pi = SoftmaxPolicy.uniform(mdp.n_states, mdp.n_actions)
    else:
        pi = DeterministicPolicy(np.zeros(mdp.n_states, dtype=np.int64), mdp.n_actions)
    stop = tol * (1.0 - mdp.gamma)
    for _ in range(max_iter):
        table = soft_policy_eval(mdp, pi, tau, tol)
        q = table.q
        resid = float(np.max(np.abs(_soft_backup(mdp, q, tau) - q)))
        if tau > 0:
            new_pi = SoftmaxPolicy(q / tau)
        else:
            acts = greedy(q)
            # keep the incumbent action on exact ties to avoid cycling
            keep = q[np.arange(mdp.n_states), pi.actions] >= q.max(axis=1) - 1e-14
            acts = np.where(keep, pi.actions, acts)
            new_pi = DeterministicPolicy(acts, mdp.n_actions)
        if resid <= stop:
            break
        pi = new_pi
    else:
        raise ConvergenceError("optimal value solver hit its iteration cap")
    if tau > 0:
        v = tau * logsumexp(q / tau, axis=1)
        policy = SoftmaxPolicy(q / tau)
    else:
        v = q.max(axis=1)
        policy = DeterministicPolicy(greedy(q), mdp.n_actions)
    return ValueTable(q=q, v=v, kind="infinite_discounted", tau=tau, residual=resid), policy


# ------------------------------------------------------------- inexactness


def _mc_soft_q(mdp: MdpSnapshot, pi, tau: float, samples: int, length: int, rng) -> np.ndarray:
    """Average of truncated soft returns from every (s, a); missing row mass terminates."""
    s_n, a_n = mdp.n_states, mdp.n_actions
    probs = policy_probs(pi)
    logp = np.log(np.where(probs > 0, probs, 1.0))
    n = s_n * a_n * samples
    states = np.repeat(np.arange(s_n), a_n * samples)
    actions = np.tile(np.repeat(np.arange(a_n), samples), s_n)
    alive = np.ones(n, dtype=bool)
    ret = np.zeros(n)
    disc = 1.0
    cum_p = np.cumsum(mdp.transition, axis=2)
    cum_pi = np.cumsum(probs, axis=1)
    for t in range(length):
        r = mdp.reward[states, actions]
        if t > 0 and tau > 0:
            r = r - tau * logp[states, actions]
        ret += np.where(alive, disc * r, 0.0)
        u = rng.random(n)
        nxt = (u[:, None] >= cum_p[states, actions]).sum(axis=1)
        alive &= nxt < s_n
        states = np.minimum(nxt, s_n - 1)
        u = rng.random(n)
        actions = np.minimum((u[:, None] >= cum_pi[states]).sum(axis=1), a_n - 1)
        disc *= mdp.gamma
    return ret.reshape(s_n, a_n, samples).mean(axis=2)


def perturb_q(
    q_table: np.ndarray,
    noise: EvalNoise,
    rng: np.random.Generator,
    *,
    mdp: MdpSnapshot | None = None,
    policy=None,
    tau: float = 0.0,
) -> np.ndarray:
    """Inexact soft Q.

    bounded_uniform adds iid Unif[-delta, delta] per entry; monte_carlo
    replaces the table with an average over truncated rollouts of ``policy``
    in ``mdp`` (needs both).
    """
    q = np.asarray(q_table, dtype=np.float64)
    if noise.mode == "none" or (noise.mode == "bounded_uniform" and noise.delta == 0):
        return q.copy()
    if noise.mode == "bounded_uniform":
        return q + rng.uniform(-noise.delta, noise.delta, size=q.shape)
    if mdp is None or policy is None:
        raise PlannerError("monte_carlo perturbation needs the model and the policy")
    length = noise.rollout_len or _iteration_cap(mdp.gamma, 1e-3, 1.0, margin=1)
    est = _mc_soft_q(mdp, policy, tau, noise.samples, length, rng)
    log.debug("monte carlo Q deviation %.4g", float(np.max(np.abs(est - q))))
    return est


# -------------------------------------------------------------------- NPG


def max_step_size(tau: float, gamma: float) -> float:
    return math.inf if tau == 0 else (1.0 - gamma) / tau


def npg_step(pi: SoftmaxPolicy, q_tilde: np.ndarray, eta: float, tau: float, gamma: float) -> SoftmaxPolicy:
    """pi' proportional to pi^(1 - eta tau/(1-gamma)) exp(eta Q/(1-gamma)), in log space."""
    _check_tau(tau)
    if eta <= 0 or eta > max_step_size(tau, gamma) * (1.0 + 1e-12):
        raise PlannerError(f"step size {eta} outside (0, (1-gamma)/tau]")
    keep = 1.0 - eta * tau / (1.0 - gamma)
    theta = keep * pi.log_probs + (eta / (1.0 - gamma)) * np.asarray(q_tilde)
    return SoftmaxPolicy(theta)


def convergence_c1(q_star: np.ndarray, q_init: np.ndarray, logpi_star, logpi_init, eta, tau, gamma) -> float:
    """Initial-gap constant of the linear convergence bound."""
    gap_q = float(np.max(np.abs(q_star - q_init)))
    gap_pi = float(np.max(np.abs(logpi_star - logpi_init)))
    return gap_q + 2.0 * tau * (1.0 - eta * tau / (1.0 - gamma)) * gap_pi


def convergence_c2(delta: float, eta: float, tau: float, gamma: float) -> float:
    if delta == 0:
        return 0.0
    return 2.0 * delta / (1.0 - gamma) * (1.0 + gamma / (eta * tau))


def convergence_bound(g: int, c1: float, c2: float, eta: float, tau: float, gamma: float) -> float:
    """Right-hand side gamma [(1 - eta tau)^(g-1) C1 + C2] after g updates."""
    return gamma * ((1.0 - eta * tau) ** (g - 1) * c1 + c2)


@dataclass(frozen=True, eq=False)
class FuturePolicyResult:
    policy: SoftmaxPolicy
    q_gaps: np.ndarray  # sup-norm gap to the soft optimum after each update
    policy_kl_to_final: np.ndarray
    c1: float
    c2: float

    def trace_rows(self):
        return [(g + 1, float(self.q_gaps[g]), float(self.policy_kl_to_final[g])) for g in range(self.q_gaps.size)]


def _kl_rows(p_log: np.ndarray, q_log: np.ndarray) -> float:
    return float(np.max(np.sum(np.exp(p_log) * (p_log - q_log), axis=1)))


def optimize_future_policy(
    mdp: MdpSnapshot,
    pi0: SoftmaxPolicy,
    delta_pi: int,
    hp=None,
    noise: EvalNoise | None = None,
    rng: np.random.Generator | None = None,
    *,
    eta: float | None = None,
    tau: float | None = None,
    track: bool = True,
) -> FuturePolicyResult:
    """delta_pi rounds of (soft evaluation, optional perturbation, NPG step).

    Step size and entropy weight come from ``hp`` (anything with ``eta`` and
    ``tau``) unless given directly. With ``track`` the soft optimum is solved
    once to record the per-update gap.
    """
    if delta_pi < 1:
        raise PlannerError("at least one policy iteration is required")
    eta = eta if eta is not None else hp.eta
    tau = tau if tau is not None else hp.tau
    noise = noise or EvalNoise()
    if noise.mode != "none" and rng is None:
        raise PlannerError("a seeded generator is required for noisy evaluation")
    gamma = mdp.gamma
    pi = pi0
    logs = []
    q_star = logpi_star = None
    if track:
        star, star_pi = optimal_values(mdp, tau, kind="infinite_discounted")
        q_star = star.q
        logpi_star = star_pi.log_probs if tau > 0 else None
    c1 = c2 = math.nan
    gaps = []
    for g in range(delta_pi):
        table = soft_policy_eval(mdp, pi, tau)
        if g == 0 and track and tau > 0:
            c1 = convergence_c1(q_star, table.q, logpi_star, pi.log_probs, eta, tau, gamma)
            c2 = convergence_c2(noise.delta if noise.mode == "bounded_uniform" else 0.0, eta, tau, gamma)
        q_tilde = perturb_q(table.q, noise, rng, mdp=mdp, policy=pi, tau=tau) if noise.mode != "none" else table.q
        pi = npg_step(pi, q_tilde, eta, tau, gamma)
        if track:
            gaps.append(float(np.max(np.abs(q_star - soft_policy_eval(mdp, pi, tau).q))))
            logs.append(pi.log_probs)
    kl = np.array([_kl_rows(lp, pi.log_probs) for lp in logs])
    return FuturePolicyResult(pi, np.array(gaps), kl, c1, c2)
