"""Next-episode MDP estimation from windowed observations.

Three routes are provided:

* sliding-window regularized least squares over visitation counts, plus a
  count-based exploration bonus;
* a weighted variant that alternates between per-episode weights on the
  simplex and the weighted ridge model;
* a scalar forecaster f (simple average or AR least squares) composed with
  the environment's known modulation g.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .nonstat_env import EnvDefinition, MdpSnapshot, structural_snapshot

log = logging.getLogger(__name__)


class ForecastError(ValueError):
    pass


@dataclass
class Trajectory:
    states: np.ndarray  # H + 1 visited states
    actions: np.ndarray  # H actions
    rewards: np.ndarray  # H rewards

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.states.size != self.actions.size + 1 or self.actions.size != self.rewards.size:
            raise ForecastError("trajectory arrays have inconsistent lengths")

    @property
    def horizon(self) -> int:
        return int(self.actions.size)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


class VisitStats:
    """Per-episode visitation counts and reward sums.

    Episodes are numbered from 1 in the order they were recorded.
    """

    def __init__(self, n_states: int, n_actions: int, horizon: int):
        self.n_states = n_states
        self.n_actions = n_actions
        self.horizon = horizon
        self._counts: list[np.ndarray] = []
        self._trans: list[np.ndarray] = []
        self._rsum: list[np.ndarray] = []
        self._rsq: list[np.ndarray] = []

    @property
    def episodes_recorded(self) -> int:
        return len(self._counts)

    def record_trajectory(self, traj: Trajectory) -> "VisitStats":
        s_n, a_n = self.n_states, self.n_actions
        if traj.horizon != self.horizon:
            raise ForecastError(f"trajectory length {traj.horizon} != horizon {self.horizon}")
        if traj.states.min() < 0 or traj.states.max() >= s_n:
            raise ForecastError("state index out of range")
        if traj.actions.min() < 0 or traj.actions.max() >= a_n:
            raise ForecastError("action index out of range")
        n = np.zeros((s_n, a_n))
        nt = np.zeros((s_n, a_n, s_n))
        rs = np.zeros((s_n, a_n))
        rq = np.zeros((s_n, a_n))
        s, a, s2 = traj.states[:-1], traj.actions, traj.states[1:]
        np.add.at(n, (s, a), 1.0)
        np.add.at(nt, (s, a, s2), 1.0)
        np.add.at(rs, (s, a), traj.rewards)
        np.add.at(rq, (s, a), traj.rewards**2)
        self._counts.append(n)
        self._trans.append(nt)
        self._rsum.append(rs)
        self._rsq.append(rq)
        return self

    def episode_arrays(self, lo: int, hi: int):
        """Stacked (counts, transitions, reward sums, squared sums) for episodes lo..hi (1-based)."""
        sl = slice(lo - 1, hi)
        return (
            np.stack(self._counts[sl]),
            np.stack(self._trans[sl]),
            np.stack(self._rsum[sl]),
            np.stack(self._rsq[sl]),
        )

    def window_sums(self, k: int, w: int):
        lo, hi = window_bounds(k, w, self.episodes_recorded)
        n, nt, rs, _ = self.episode_arrays(lo, hi)
        return n.sum(axis=0), nt.sum(axis=0), rs.sum(axis=0)

    def counts(self, k: int) -> np.ndarray:
        return self._counts[k - 1]

    def transition_counts(self, k: int) -> np.ndarray:
        return self._trans[k - 1]

    def reward_sum(self, k: int) -> np.ndarray:
        return self._rsum[k - 1]


def as_trajectory(steps) -> Trajectory:
    """Build a Trajectory from (s, a, r, s_next) tuples."""
    steps = list(steps)
    if not steps:
        raise ForecastError("empty trajectory")
    states = [int(steps[0][0])] + [int(st[3]) for st in steps]
    for prev, cur in zip(steps, steps[1:]):
        if int(prev[3]) != int(cur[0]):
            raise ForecastError("steps do not chain: next state differs from following state")
    return Trajectory(np.array(states), np.array([st[1] for st in steps]), np.array([st[2] for st in steps]))


def record_trajectory(stats: VisitStats, traj) -> VisitStats:
    if not isinstance(traj, Trajectory):
        traj = as_trajectory(traj)
    return stats.record_trajectory(traj)


def window_bounds(k: int, w: int, recorded: int) -> tuple[int, int]:
    """Episodes max(1, k - w + 1) .. k."""
    if w < 1:
        raise ForecastError("window must be >= 1")
    if not 1 <= k <= recorded:
        raise ForecastError(f"episode {k} not recorded (have {recorded})")
    return max(1, k - w + 1), k


def sw_lse_forecast(stats: VisitStats, k: int, w: int, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form sliding-window ridge estimates (P_hat, R_tilde)."""
    if lam < 1:
        raise ForecastError("lambda must be >= 1")
    n, nt, rs = stats.window_sums(k, w)
    denom = lam + n
    return nt / denom[:, :, None], rs / denom


def lambda_matrix(stats: VisitStats, k: int, w: int, lam: float) -> np.ndarray:
    n, _, _ = stats.window_sums(k, w)
    return 1.0 / (lam + n)


def exploration_bonus(stats: VisitStats, k: int, w: int, lam: float, beta: float) -> np.ndarray:
    if beta <= 0:
        raise ForecastError("beta must be > 0")
    return beta * np.sqrt(lambda_matrix(stats, k, w, lam))


def beta_floor(
    lam: float,
    gamma: float,
    r_max: float,
    r_tilde_max: float,
    n_states: int,
    horizon: int,
    conf_delta: float,
) -> float:
    """Smallest bonus scale for which the optimism argument closes.

    ``r_tilde_max`` does not enter this floor; it is accepted so that a full
    reward-scale description can be passed through unchanged.
    """
    if not 0.0 < conf_delta < 1.0:
        raise ForecastError("confidence delta must lie in (0, 1)")
    if lam < 1:
        raise ForecastError("lambda must be >= 1")
    if not 0.0 <= gamma < 1.0:
        raise ForecastError("gamma must lie in [0, 1)")
    log_term = math.log(horizon / (conf_delta * lam))
    spread = gamma * n_states * math.sqrt(horizon**2 / 2.0 * max(log_term, 0.0))
    return (lam * r_max + spread) / (2.0 + 2.0 * math.sqrt(lam) / (1.0 - gamma))


def select_window(c_k: float, b_est: float, k: int | None = None) -> int:
    """round((C_k / B)^(2/3)) clamped to [1, k]; B = 0 means use all k episodes."""
    if c_k <= 0:
        raise ForecastError("C_k must be > 0")
    if k is not None and k < 1:
        raise ForecastError("k must be >= 1")
    if b_est <= 0:
        if k is None:
            raise ForecastError("a zero budget needs k to return the full history")
        return k
    w = max(int(round((c_k / b_est) ** (2.0 / 3.0))), 1)
    return w if k is None else min(w, k)


@dataclass(frozen=True, eq=False)
class ForecastedMdp:
    p_hat: np.ndarray
    r_tilde: np.ndarray
    bonus: np.ndarray
    window: int
    lam: float
    beta: float
    lambda_mat: np.ndarray

    @property
    def r_hat(self) -> np.ndarray:
        return self.r_tilde + 2.0 * self.bonus

    def as_snapshot(self, horizon: int, gamma: float, renormalize: bool = False) -> MdpSnapshot:
        """Planning model; sub-stochastic unless the missing mass is spread uniformly."""
        p = self.p_hat
        cls = "sub_stochastic"
        if renormalize:
            missing = 1.0 - p.sum(axis=2, keepdims=True)
            p = p + missing / p.shape[2]
            cls = "exact"
        return MdpSnapshot(np.clip(p, 0.0, 1.0), self.r_hat, horizon, gamma, cls)


def forecast_sw_lse(stats: VisitStats, k: int, w: int, lam: float, beta: float) -> ForecastedMdp:
    p_hat, r_tilde = sw_lse_forecast(stats, k, w, lam)
    lam_mat = lambda_matrix(stats, k, w, lam)
    bonus = beta * np.sqrt(lam_mat) if beta > 0 else np.zeros_like(lam_mat)
    return ForecastedMdp(p_hat, r_tilde, bonus, w, lam, beta, lam_mat)


def forecast_from_snapshot(snap: MdpSnapshot) -> ForecastedMdp:
    """Wrap a known model (structural route): no estimation error, no bonus."""
    zeros = np.zeros_like(snap.reward)
    return ForecastedMdp(snap.transition, snap.reward, zeros, 0, 1.0, 0.0, zeros)


# ------------------------------------------------------------------ W-LSE


@dataclass(frozen=True, eq=False)
class WlseSolution:
    q: np.ndarray
    p_hat: np.ndarray
    r_tilde: np.ndarray
    disc_value: float
    objective_value: float
    objectives: tuple
    converged: bool
    n_iter: int
    eff_counts: np.ndarray

    def as_forecast(self, lam: float, beta: float, window: int) -> ForecastedMdp:
        lam_mat = 1.0 / (lam + self.eff_counts)
        bonus = beta * np.sqrt(lam_mat) if beta > 0 else np.zeros_like(lam_mat)
        return ForecastedMdp(self.p_hat, self.r_tilde, bonus, window, lam, beta, lam_mat)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = v.size
    v = v - np.max(v)  # shift-invariant; keeps the cumulative sums well scaled
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, n + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _wlse_model(q, n, nt, rs, reg):
    qn = np.tensordot(q, n, axes=1)
    denom = qn + reg
    x_r = np.tensordot(q, rs, axes=1) / denom
    x_p = np.tensordot(q, nt, axes=1) / denom[:, :, None]
    return x_r, x_p, qn


def _episode_residuals(x_r, x_p, n, nt, rs, rq, horizon):
    """Mean squared residual per episode of the model against its own samples."""
    sq_p = np.sum(x_p**2, axis=2)
    reward_part = n * x_r**2 - 2.0 * rs * x_r + rq
    trans_part = n * sq_p - 2.0 * np.sum(nt * x_p[None], axis=3) + n
    return (reward_part + trans_part).sum(axis=(1, 2)) / horizon


@dataclass(frozen=True)
class DiscConfig:
    c_disc: float = 1.0  # weight on the staleness penalty
    q_ridge: float = 0.05  # keeps the weight step strongly convex
    max_iter: int = 200
    tol: float = 1e-9

    def __post_init__(self):
        if self.c_disc < 0 or self.q_ridge < 0:
            raise ForecastError("c_disc and q_ridge must be >= 0")


def w_lse_forecast(
    stats: VisitStats,
    k: int,
    lam: float,
    disc_cfg: DiscConfig | None = None,
    *,
    window: int | None = None,
    fixed_q: np.ndarray | None = None,
) -> WlseSolution:
    """Alternate between the weighted ridge model and the episode weights q.

    Objective: sum_t q_t e_t(x) + disc(q) + q_ridge ||q||^2 + lam/(wH) ||x||^2,
    where e_t is the per-step squared error of x on episode t and
    disc(q) = c_disc * sum_t q_t (k - t) / k penalizes stale episodes.
    q starts uniform over the last ``window`` episodes (default: all of them).
    """
    cfg = disc_cfg or DiscConfig()
    c_disc, q_ridge, max_iter, tol = cfg.c_disc, cfg.q_ridge, cfg.max_iter, cfg.tol
    if k < 1:
        raise ForecastError("k must be >= 1")
    if lam < 1:
        raise ForecastError("lambda must be >= 1")
    w = k if window is None else min(window, k)
    n, nt, rs, rq = stats.episode_arrays(1, k)
    h = stats.horizon
    reg = lam / w
    staleness = (k - np.arange(1, k + 1)) / k
    if fixed_q is not None:
        q = np.asarray(fixed_q, dtype=np.float64)
        if q.shape != (k,) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
            raise ForecastError("fixed_q must be a probability vector of length k")
    else:
        q = np.zeros(k)
        q[k - w :] = 1.0 / w

    def objective(q, x_r, x_p):
        e = _episode_residuals(x_r, x_p, n, nt, rs, rq, h)
        disc = c_disc * float(q @ staleness)
        val = float(q @ e) + disc + q_ridge * float(q @ q) + lam / (w * h) * (float(np.sum(x_r**2)) + float(np.sum(x_p**2)))
        return val, disc, e

    x_r, x_p, qn = _wlse_model(q, n, nt, rs, reg)
    val, disc, e = objective(q, x_r, x_p)
    history = [val]
    converged = fixed_q is not None
    it = 0
    if fixed_q is None:
        for it in range(1, max_iter + 1):
            cost = e + c_disc * staleness
            if q_ridge > 0:
                q = project_simplex(-cost / (2.0 * q_ridge))
            else:
                q = np.zeros(k)
                q[int(np.argmin(cost))] = 1.0
            x_r, x_p, qn = _wlse_model(q, n, nt, rs, reg)
            val, disc, e = objective(q, x_r, x_p)
            history.append(val)
            if abs(history[-2] - val) < tol:
                converged = True
                break
        if not converged:
            log.warning("W-LSE did not converge in %d alternations", max_iter)
    return WlseSolution(
        q=q,
        p_hat=x_p,
        r_tilde=x_r,
        disc_value=disc,
        objective_value=val,
        objectives=tuple(history),
        converged=converged,
        n_iter=it,
        eff_counts=w * qn,
    )


# ------------------------------------------------------- scalar forecaster


@dataclass(frozen=True)
class ScalarForecaster:
    kind: str = "ar_ls"  # "ar_ls" or "simple_average"
    window: int = 5
    order: int = 1
    diff: int = 0

    def __post_init__(self):
        if self.kind not in ("ar_ls", "simple_average"):
            raise ForecastError(f"unknown forecaster kind {self.kind!r}")
        if self.window < 1:
            raise ForecastError("window must be >= 1")
        if self.diff not in (0, 1):
            raise ForecastError("differencing order must be 0 or 1")
        if self.kind == "ar_ls" and not 1 <= self.order < self.window - self.diff:
            raise ForecastError("AR order must be >= 1 and below the (differenced) window")


@dataclass(frozen=True)
class ScalarForecast:
    value: float
    fell_back: bool = False


def _ar_one_step(y: np.ndarray, order: int) -> float | None:
    rows = y.size - order
    if rows < 1:
        return None
    design = np.ones((rows, order + 1))
    for i in range(1, order + 1):
        design[:, i] = y[order - i : y.size - i]
    target = y[order:]
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < order + 1:
        return None
    lags = y[::-1][:order]
    return float(coef[0] + coef[1:] @ lags)


def scalar_forecast(f: ScalarForecaster, values) -> float:
    """One-step-ahead forecast from the last f.window values."""
    return scalar_forecast_flagged(f, values).value


def scalar_forecast_flagged(f: ScalarForecaster, values) -> ScalarForecast:
    """Like scalar_forecast, also reporting a fallback to the simple average."""
    y = np.asarray(values, dtype=np.float64)
    if y.size < f.window:
        raise ForecastError(f"need {f.window} values, got {y.size}")
    y = y[-f.window :]
    base = 0.0
    if f.diff == 1:
        if y.size < 2:
            return ScalarForecast(float(y[-1]), True)
        base = float(y[-1])
        y = np.diff(y)
    if f.kind == "simple_average":
        return ScalarForecast(base + float(y.mean()))
    pred = _ar_one_step(y, f.order)
    if pred is None:
        return ScalarForecast(base + float(y.mean()), True)
    return ScalarForecast(base + pred)


def structural_g(env: EnvDefinition, o_hat: float) -> MdpSnapshot:
    """Future MDP obtained by pushing a predicted drift value through the modulation."""
    return structural_snapshot(env, o_hat)


# ----------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class ForecastDiagnostics:
    max_reward_error: float
    max_p_row_l1_error: float
    mean_bonus: float


def forecast_diagnostics(true_next: MdpSnapshot, fmdp: ForecastedMdp) -> ForecastDiagnostics:
    return ForecastDiagnostics(
        max_reward_error=float(np.max(np.abs(true_next.reward - fmdp.r_tilde))),
        max_p_row_l1_error=float(np.max(np.abs(true_next.transition - fmdp.p_hat).sum(axis=2))),
        mean_bonus=float(np.mean(fmdp.bonus)),
    )
